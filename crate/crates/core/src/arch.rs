//! Declarative architectures and the shape walk shared by model
//! construction, tap selection and operation counting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::Geometry;

fn one() -> usize {
    1
}

/// One entry of an architecture. Every `conv` (including those inside
/// residual blocks) is followed by an implicit batch normalization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Conv {
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    GlobalAvgPool,
    Flatten,
    Linear {
        features: usize,
    },
    /// Explicit normalization, typically after a linear layer.
    BatchNorm,
    /// Two 3x3 convolutions plus a shortcut.
    BasicBlock {
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    /// 1x1, 3x3, 1x1 convolutions expanding to `4 * channels`, plus a
    /// shortcut.
    Bottleneck {
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "max_pool",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Flatten => "flatten",
            Layer::Linear { .. } => "linear",
            Layer::BatchNorm => "batch_norm",
            Layer::BasicBlock { .. } => "basic_block",
            Layer::Bottleneck { .. } => "bottleneck",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            Layer::Conv { .. } | Layer::Linear { .. } | Layer::BasicBlock { .. } | Layer::Bottleneck { .. }
        )
    }

    pub fn is_block(&self) -> bool {
        matches!(self, Layer::BasicBlock { .. } | Layer::Bottleneck { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    /// `[H, W, C]`.
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<Layer>,
    /// Index of the layer whose output serves as the feature embedding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penultimate: Option<usize>,
}

/// Activation shape between layers (batch axis omitted).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Spatial { c, .. } => c,
            Shape::Flat(f) => f,
        }
    }

    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(f) => f,
        }
    }

    /// Per-sample extents.
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Spatial { h, w, c } => vec![h, w, c],
            Shape::Flat(f) => vec![f],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Spatial { h, w, c } => write!(f, "{h}x{w}x{c}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Where a weighted layer sits; the first and last stay full precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    First,
    Interior,
    Last,
    Unweighted,
}

/// A convolution inside the network with its resolved geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSite {
    /// Parameter-path suffix, e.g. `conv1` or `shortcut`.
    pub part: &'static str,
    pub geom: Geometry,
    pub cin: usize,
    pub cout: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvSite {
    pub fn macs(&self) -> u64 {
        (self.out_h * self.out_w * self.geom.kernel * self.geom.kernel) as u64 * (self.cin * self.cout) as u64
    }

    pub fn filter_shape(&self) -> [usize; 4] {
        [self.geom.kernel, self.geom.kernel, self.cin, self.cout]
    }

    pub fn is_shortcut(&self) -> bool {
        self.part == "shortcut"
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub index: usize,
    pub layer: Layer,
    pub input: Shape,
    pub output: Shape,
    pub role: Role,
    /// Convolutions executed by this layer, in forward order (the shortcut,
    /// when present, comes last).
    pub convs: Vec<ConvSite>,
}

impl LayerInfo {
    /// Whether the student replaces this layer's convolutions with adder
    /// layers. Interior convolutions and whole residual blocks (shortcut
    /// included) are replaced; linear layers never are.
    pub fn uses_adder(&self) -> bool {
        self.role == Role::Interior && matches!(self.layer, Layer::Conv { .. } | Layer::BasicBlock { .. } | Layer::Bottleneck { .. })
    }

    /// Multiply-accumulates of a linear layer, zero otherwise.
    pub fn linear_macs(&self) -> u64 {
        match (self.layer.clone(), self.input) {
            (Layer::Linear { features }, Shape::Flat(n)) => (n * features) as u64,
            _ => 0,
        }
    }
}

impl ArchSpec {
    fn err(&self, index: usize, layer: &Layer, detail: impl Into<String>) -> Error {
        Error::Arch {
            arch: self.name.clone(),
            index,
            kind: layer.kind().to_string(),
            detail: detail.into(),
        }
    }

    /// Resolves every layer's input/output shape and role, checking that
    /// the shapes close and that a single classifier ends the network.
    pub fn walk(&self) -> Result<Vec<LayerInfo>> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 || self.class_count == 0 {
            return Err(Error::Config(format!(
                "architecture `{}`: input shape and class count must be positive",
                self.name
            )));
        }
        let weighted: Vec<usize> = (0..self.layers.len()).filter(|&i| self.layers[i].is_weighted()).collect();
        let (Some(&first), Some(&last)) = (weighted.first(), weighted.last()) else {
            return Err(Error::Config(format!("architecture `{}` has no weighted layer", self.name)));
        };
        let mut shape = Shape::Spatial { h, w, c };
        let mut out = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let role = if !layer.is_weighted() {
                Role::Unweighted
            } else if index == first {
                Role::First
            } else if index == last {
                Role::Last
            } else {
                Role::Interior
            };
            if layer.is_block() && role != Role::Interior {
                return Err(self.err(index, layer, "a residual block cannot be the first or last weighted layer"));
            }
            let (output, convs) = self.step(index, layer, shape)?;
            out.push(LayerInfo {
                index,
                layer: layer.clone(),
                input: shape,
                output,
                role,
                convs,
            });
            shape = output;
        }
        let head = &self.layers[last];
        if !matches!(head, Layer::Linear { features } if *features == self.class_count) {
            return Err(self.err(
                last,
                head,
                format!("the last weighted layer must be a linear classifier with {} outputs", self.class_count),
            ));
        }
        if shape != Shape::Flat(self.class_count) {
            return Err(self.err(
                self.layers.len() - 1,
                &self.layers[self.layers.len() - 1],
                format!("network ends with shape {shape}, expected {} logits", self.class_count),
            ));
        }
        if let Some(p) = self.penultimate {
            if p >= self.layers.len() {
                return Err(Error::Config(format!(
                    "architecture `{}`: penultimate index {p} out of range",
                    self.name
                )));
            }
        }
        Ok(out)
    }

    fn conv_site(
        &self,
        index: usize,
        layer: &Layer,
        part: &'static str,
        geom: Geometry,
        input: Shape,
        cout: usize,
    ) -> Result<(ConvSite, Shape)> {
        let Shape::Spatial { h, w, c } = input else {
            return Err(self.err(index, layer, format!("convolution needs a spatial input, got {input}")));
        };
        if cout == 0 || geom.kernel == 0 || geom.stride == 0 {
            return Err(self.err(index, layer, "channels, kernel and stride must be positive"));
        }
        let (Some(oh), Some(ow)) = (geom.output_extent(h), geom.output_extent(w)) else {
            return Err(self.err(
                index,
                layer,
                format!("{part}: kernel {} does not fit input {input}", geom.kernel),
            ));
        };
        let site = ConvSite {
            part,
            geom,
            cin: c,
            cout,
            out_h: oh,
            out_w: ow,
        };
        Ok((site, Shape::Spatial { h: oh, w: ow, c: cout }))
    }

    fn step(&self, index: usize, layer: &Layer, input: Shape) -> Result<(Shape, Vec<ConvSite>)> {
        match *layer {
            Layer::Conv {
                channels,
                kernel,
                stride,
                padding,
            } => {
                let (site, out) =
                    self.conv_site(index, layer, "conv", Geometry::new(kernel, stride, padding), input, channels)?;
                Ok((out, vec![site]))
            }
            Layer::Relu | Layer::BatchNorm => Ok((input, vec![])),
            Layer::MaxPool { window, stride, padding } => {
                let Shape::Spatial { h, w, c } = input else {
                    return Err(self.err(index, layer, format!("pooling needs a spatial input, got {input}")));
                };
                if window == 0 || stride == 0 || padding >= window {
                    return Err(self.err(index, layer, "window and stride must be positive and padding < window"));
                }
                let g = Geometry::new(window, stride, padding);
                match (g.output_extent(h), g.output_extent(w)) {
                    (Some(h), Some(w)) => Ok((Shape::Spatial { h, w, c }, vec![])),
                    _ => Err(self.err(index, layer, format!("window {window} does not fit input {input}"))),
                }
            }
            Layer::GlobalAvgPool => match input {
                Shape::Spatial { c, .. } => Ok((Shape::Flat(c), vec![])),
                Shape::Flat(_) => Err(self.err(index, layer, "input is already flat")),
            },
            Layer::Flatten => Ok((Shape::Flat(input.numel()), vec![])),
            Layer::Linear { features } => match input {
                Shape::Flat(_) if features > 0 => Ok((Shape::Flat(features), vec![])),
                Shape::Flat(_) => Err(self.err(index, layer, "features must be positive")),
                Shape::Spatial { .. } => Err(self.err(index, layer, format!("linear needs a flat input, got {input}"))),
            },
            Layer::BasicBlock { channels, stride } => {
                let (c1, s1) = self.conv_site(index, layer, "conv1", Geometry::new(3, stride, 1), input, channels)?;
                let (c2, s2) = self.conv_site(index, layer, "conv2", Geometry::new(3, 1, 1), s1, channels)?;
                let mut convs = vec![c1, c2];
                if stride != 1 || input.channels() != channels {
                    let (sc, ss) =
                        self.conv_site(index, layer, "shortcut", Geometry::new(1, stride, 0), input, channels)?;
                    debug_assert_eq!(ss, s2);
                    convs.push(sc);
                }
                Ok((s2, convs))
            }
            Layer::Bottleneck { channels, stride } => {
                let out_c = 4 * channels;
                let (c1, s1) = self.conv_site(index, layer, "conv1", Geometry::new(1, 1, 0), input, channels)?;
                let (c2, s2) = self.conv_site(index, layer, "conv2", Geometry::new(3, stride, 1), s1, channels)?;
                let (c3, s3) = self.conv_site(index, layer, "conv3", Geometry::new(1, 1, 0), s2, out_c)?;
                let mut convs = vec![c1, c2, c3];
                if stride != 1 || input.channels() != out_c {
                    let (sc, _) =
                        self.conv_site(index, layer, "shortcut", Geometry::new(1, stride, 0), input, out_c)?;
                    convs.push(sc);
                }
                Ok((s3, convs))
            }
        }
    }

    pub fn is_residual(&self) -> bool {
        self.layers.iter().any(Layer::is_block)
    }

    /// Layers whose raw output feeds the distillation loss: every residual
    /// block for residual networks, otherwise every convolution that is
    /// neither the first nor the last weighted layer.
    pub fn tap_points(&self) -> Result<Vec<usize>> {
        let residual = self.is_residual();
        Ok(self
            .walk()?
            .iter()
            .filter(|info| info.role == Role::Interior)
            .filter(|info| {
                if residual {
                    info.layer.is_block()
                } else {
                    matches!(info.layer, Layer::Conv { .. })
                }
            })
            .map(|info| info.index)
            .collect())
    }

    pub fn builtin(name: &str) -> Result<ArchSpec> {
        match name {
            "resnet20" => Ok(cifar_resnet("resnet20", 3)),
            "resnet32" => Ok(cifar_resnet("resnet32", 5)),
            "vgg-small" => Ok(vgg_small()),
            "resnet18" => Ok(imagenet_resnet("resnet18", [2, 2, 2, 2], false)),
            "resnet50" => Ok(imagenet_resnet("resnet50", [3, 4, 6, 3], true)),
            "lenet-2d" => Ok(lenet_2d()),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (built-ins: {})",
                BUILTIN_NAMES.join(", ")
            ))),
        }
    }
}

pub const BUILTIN_NAMES: [&str; 6] = ["resnet20", "resnet32", "vgg-small", "resnet18", "resnet50", "lenet-2d"];

fn conv(channels: usize, kernel: usize, stride: usize, padding: usize) -> Layer {
    Layer::Conv {
        channels,
        kernel,
        stride,
        padding,
    }
}

fn cifar_resnet(name: &str, blocks_per_stage: usize) -> ArchSpec {
    let mut layers = vec![conv(16, 3, 1, 1), Layer::Relu];
    for (stage, channels) in [16, 32, 64].into_iter().enumerate() {
        for b in 0..blocks_per_stage {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            layers.push(Layer::BasicBlock { channels, stride });
        }
    }
    layers.extend([Layer::GlobalAvgPool, Layer::Linear { features: 10 }]);
    ArchSpec {
        name: name.into(),
        input_shape: [32, 32, 3],
        class_count: 10,
        layers,
        penultimate: None,
    }
}

fn vgg_small() -> ArchSpec {
    let mut layers = Vec::new();
    for channels in [128, 256, 512] {
        for _ in 0..2 {
            layers.extend([conv(channels, 3, 1, 1), Layer::Relu]);
        }
        layers.push(Layer::MaxPool {
            window: 2,
            stride: 2,
            padding: 0,
        });
    }
    layers.extend([Layer::Flatten, Layer::Linear { features: 10 }]);
    ArchSpec {
        name: "vgg-small".into(),
        input_shape: [32, 32, 3],
        class_count: 10,
        layers,
        penultimate: None,
    }
}

fn imagenet_resnet(name: &str, stages: [usize; 4], bottleneck: bool) -> ArchSpec {
    let mut layers = vec![
        conv(64, 7, 2, 3),
        Layer::Relu,
        Layer::MaxPool {
            window: 3,
            stride: 2,
            padding: 1,
        },
    ];
    for (stage, (&count, channels)) in stages.iter().zip([64, 128, 256, 512]).enumerate() {
        for b in 0..count {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            layers.push(if bottleneck {
                Layer::Bottleneck { channels, stride }
            } else {
                Layer::BasicBlock { channels, stride }
            });
        }
    }
    layers.extend([Layer::GlobalAvgPool, Layer::Linear { features: 1000 }]);
    ArchSpec {
        name: name.into(),
        input_shape: [224, 224, 3],
        class_count: 1000,
        layers,
        penultimate: None,
    }
}

fn lenet_2d() -> ArchSpec {
    let pool = Layer::MaxPool {
        window: 2,
        stride: 2,
        padding: 0,
    };
    ArchSpec {
        name: "lenet-2d".into(),
        input_shape: [28, 28, 1],
        class_count: 10,
        layers: vec![
            conv(16, 5, 1, 2),
            Layer::Relu,
            pool.clone(),
            conv(32, 5, 1, 0),
            Layer::Relu,
            pool,
            Layer::Flatten,
            Layer::Linear { features: 128 },
            Layer::BatchNorm,
            Layer::Relu,
            Layer::Linear { features: 2 },
            Layer::BatchNorm,
            Layer::Linear { features: 10 },
        ],
        penultimate: Some(10),
    }
}
