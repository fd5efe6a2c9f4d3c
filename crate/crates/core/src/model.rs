//! Parameter storage, model instantiation and the homogeneous
//! teacher/student pair.

use indexmap::IndexMap;

use crate::arch::{ArchSpec, Layer, LayerInfo};
use crate::distill::{kernel_g, kernel_h, rho_apply, DistillConfig};
use crate::error::{Error, Result};
use crate::nn::basic::{add, flatten, relu};
use crate::nn::batchnorm::{BatchNormLayer, Mode};
use crate::nn::{adder2d, conv2d, global_avg_pool, linear, max_pool2d};
use crate::tensor::{derive_seed, seeded_init, InitScheme, Scalar, Tape, Tensor, Var};

/// What a parameter is, which decides weight decay and adaptive scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    AdderFilter,
    Bias,
    NormAffine,
    Sigma,
    Rho,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        !matches!(self, ParamKind::NormAffine | ParamKind::Sigma)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub kind: ParamKind,
    pub learnable: bool,
}

/// Named parameters plus non-learnable buffers (running statistics), both
/// in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    params: IndexMap<String, Parameter<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(
            name,
            Parameter {
                value,
                kind,
                learnable: true,
            },
        );
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate buffer name `{name}`")));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.buffers.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Puts a parameter on the tape: as a differentiable leaf when it is
    /// learnable, as a constant otherwise.
    pub fn var<'t>(&self, tape: &'t Tape<T>, name: &str) -> Result<Var<'t, T>> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        if p.learnable {
            tape.param(name, p.value.clone())
        } else {
            Ok(tape.constant(p.value.clone()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    /// Multiplicative convolutions throughout.
    Cnn,
    /// Interior convolutions replaced by adder layers.
    Ann,
}

/// Result of a forward pass.
pub struct Forward<'t, T> {
    pub logits: Var<'t, T>,
    /// Raw (pre-normalization) outputs at the tap layers, in tap order.
    pub taps: Vec<Var<'t, T>>,
    pub penultimate: Option<Var<'t, T>>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ArchSpec,
    flavor: Flavor,
    walk: Vec<LayerInfo>,
    taps: Vec<usize>,
    bn: BatchNormLayer,
    pub params: ParamSet<T>,
}

fn conv_name(info: &LayerInfo, part: &str) -> String {
    if info.layer.is_block() {
        format!("layers.{}.{part}", info.index)
    } else {
        format!("layers.{}", info.index)
    }
}

fn bn_name(info: &LayerInfo, part: &str) -> String {
    match part {
        "conv" => format!("layers.{}.bn", info.index),
        "shortcut" => format!("layers.{}.shortcut_bn", info.index),
        p => format!("layers.{}.bn{}", info.index, &p[4..]),
    }
}

impl<T: Scalar> Model<T> {
    /// Initializes every parameter from `seed`; each parameter draws from
    /// its own stream derived from its name.
    pub fn new(spec: &ArchSpec, flavor: Flavor, seed: u64) -> Result<Self> {
        let walk = spec.walk()?;
        let taps = spec.tap_points()?;
        let mut params = ParamSet::default();
        let kaiming = InitScheme::KaimingUniform { fan_in: None };
        let add_bn = |params: &mut ParamSet<T>, prefix: String, c: usize| -> Result<()> {
            params.insert(format!("{prefix}.gamma"), Tensor::ones([c]), ParamKind::NormAffine)?;
            params.insert(format!("{prefix}.beta"), Tensor::zeros([c]), ParamKind::NormAffine)?;
            params.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros([c]))?;
            params.insert_buffer(format!("{prefix}.running_var"), Tensor::ones([c]))
        };
        for info in &walk {
            let adder = flavor == Flavor::Ann && info.uses_adder();
            for site in &info.convs {
                let name = format!("{}.weight", conv_name(info, site.part));
                let value = seeded_init(&site.filter_shape(), kaiming, derive_seed(seed, &name))?;
                let kind = if adder { ParamKind::AdderFilter } else { ParamKind::Weight };
                params.insert(name, value, kind)?;
                add_bn(&mut params, bn_name(info, site.part), site.cout)?;
            }
            match info.layer {
                Layer::Linear { features } => {
                    let name = format!("layers.{}.weight", info.index);
                    let w = seeded_init(&[info.input.numel(), features], kaiming, derive_seed(seed, &name))?;
                    params.insert(name, w, ParamKind::Weight)?;
                    params.insert(format!("layers.{}.bias", info.index), Tensor::zeros([features]), ParamKind::Bias)?;
                }
                Layer::BatchNorm => add_bn(&mut params, format!("layers.{}.bn", info.index), info.input.channels())?,
                _ => {}
            }
        }
        Ok(Self {
            spec: spec.clone(),
            flavor,
            walk,
            taps,
            bn: BatchNormLayer::default(),
            params,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.walk
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    /// Chooses which tap-eligible layers report their raw output.
    pub fn set_taps(&mut self, taps: &[usize]) -> Result<()> {
        let eligible = self.spec.tap_points()?;
        for &t in taps {
            if !eligible.contains(&t) {
                return Err(Error::Config(format!(
                    "layer {t} of `{}` is not a tap point (eligible: {eligible:?})",
                    self.spec.name
                )));
            }
        }
        self.taps = taps.to_vec();
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    fn batch_norm<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, prefix: &str, mode: Mode) -> Result<Var<'t, T>> {
        let gamma = self.params.var(tape, &format!("{prefix}.gamma"))?;
        let beta = self.params.var(tape, &format!("{prefix}.beta"))?;
        let (mk, vk) = (format!("{prefix}.running_mean"), format!("{prefix}.running_var"));
        let mut rm = self.params.buffers[&mk].clone();
        let mut rv = self.params.buffers[&vk].clone();
        let y = self.bn.forward(x, gamma, beta, &mut rm, &mut rv, mode)?;
        self.params.buffers[&mk] = rm;
        self.params.buffers[&vk] = rv;
        Ok(y)
    }

    fn conv_site<'t>(
        &mut self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        info: &LayerInfo,
        site: usize,
    ) -> Result<Var<'t, T>> {
        let s = &info.convs[site];
        let w = self.params.var(tape, &format!("{}.weight", conv_name(info, s.part)))?;
        if self.flavor == Flavor::Ann && info.uses_adder() {
            adder2d(x, w, s.geom)
        } else {
            conv2d(x, w, None, s.geom)
        }
    }

    /// Runs the network on an NHWC batch. In train mode batch-norm layers
    /// use batch statistics and update their running estimates.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: &Tensor<T>, mode: Mode) -> Result<Forward<'t, T>> {
        let [h, w, c] = self.spec.input_shape;
        if x.rank() != 4 || x.shape()[1..] != [h, w, c] {
            return Err(Error::shape(
                "forward",
                format!("expected [N, {h}, {w}, {c}], got {:?}", x.shape()),
            ));
        }
        let walk = self.walk.clone();
        let mut cur = tape.constant(x.clone());
        let mut taps = Vec::with_capacity(self.taps.len());
        let mut tap_slots: Vec<Option<Var<'t, T>>> = vec![None; self.taps.len()];
        let mut penultimate = None;
        for info in &walk {
            let tap_slot = self.taps.iter().position(|&t| t == info.index);
            cur = match info.layer {
                Layer::Conv { .. } => {
                    let raw = self.conv_site(tape, cur, info, 0)?;
                    if let Some(j) = tap_slot {
                        tap_slots[j] = Some(raw);
                    }
                    self.batch_norm(tape, raw, &bn_name(info, "conv"), mode)?
                }
                Layer::Relu => relu(cur)?,
                Layer::MaxPool { window, stride, padding } => max_pool2d(cur, window, stride, padding)?,
                Layer::GlobalAvgPool => global_avg_pool(cur)?,
                Layer::Flatten => flatten(cur)?,
                Layer::Linear { .. } => {
                    let wv = self.params.var(tape, &format!("layers.{}.weight", info.index))?;
                    let bv = self.params.var(tape, &format!("layers.{}.bias", info.index))?;
                    linear(cur, wv, Some(bv))?
                }
                Layer::BatchNorm => self.batch_norm(tape, cur, &format!("layers.{}.bn", info.index), mode)?,
                Layer::BasicBlock { .. } | Layer::Bottleneck { .. } => {
                    let main = info.convs.iter().filter(|s| !s.is_shortcut()).count();
                    let mut hcur = cur;
                    for k in 0..main {
                        let raw = self.conv_site(tape, hcur, info, k)?;
                        let part = info.convs[k].part;
                        if k + 1 == main {
                            if let Some(j) = tap_slot {
                                tap_slots[j] = Some(raw);
                            }
                        }
                        hcur = self.batch_norm(tape, raw, &bn_name(info, part), mode)?;
                        if k + 1 < main {
                            hcur = relu(hcur)?;
                        }
                    }
                    let shortcut = if info.convs.len() > main {
                        let raw = self.conv_site(tape, cur, info, main)?;
                        self.batch_norm(tape, raw, &bn_name(info, "shortcut"), mode)?
                    } else {
                        cur
                    };
                    relu(add(hcur, shortcut)?)?
                }
            };
            if self.spec.penultimate == Some(info.index) {
                penultimate = Some(cur);
            }
        }
        for slot in tap_slots {
            taps.push(slot.expect("every tap layer is visited"));
        }
        Ok(Forward {
            logits: cur,
            taps,
            penultimate,
        })
    }

    /// Eval-mode logits for a whole set, computed in chunks of `batch`.
    pub fn predict(&mut self, images: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        self.eval_outputs(images, batch, false)
    }

    /// Eval-mode penultimate features for a whole set.
    pub fn features(&mut self, images: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        if self.spec.penultimate.is_none() {
            return Err(Error::Config(format!(
                "architecture `{}` designates no penultimate layer",
                self.spec.name
            )));
        }
        self.eval_outputs(images, batch, true)
    }

    fn eval_outputs(&mut self, images: &Tensor<T>, batch: usize, features: bool) -> Result<Tensor<T>> {
        let n = images.shape()[0];
        let batch = batch.max(1);
        let mut data = Vec::new();
        let mut width = 0;
        for start in (0..n).step_by(batch) {
            let rows: Vec<usize> = (start..(start + batch).min(n)).collect();
            let x = images.select_rows(&rows)?;
            let tape = Tape::new();
            let out = self.forward(&tape, &x, Mode::Eval)?;
            let v = if features {
                out.penultimate.expect("checked").value()
            } else {
                out.logits.value()
            };
            width = v.shape()[1];
            data.extend_from_slice(v.data());
        }
        Tensor::new(vec![n, width], data)
    }
}

/// Per-tap alignment heads: kernel widths (stored as logs) and 1x1 channel
/// transforms for both sides.
#[derive(Clone, Debug)]
pub struct DistillHeads<T> {
    /// `(layer index, channels)` per tap.
    pub taps: Vec<(usize, usize)>,
    pub params: ParamSet<T>,
}

impl<T: Scalar> DistillHeads<T> {
    /// Transforms start as the identity and kernel widths at the configured
    /// values.
    pub fn new(spec: &ArchSpec, taps: &[usize], cfg: &DistillConfig) -> Result<Self> {
        let walk = spec.walk()?;
        let mut params = ParamSet::default();
        let mut out = Vec::with_capacity(taps.len());
        for (j, &layer) in taps.iter().enumerate() {
            let c = walk
                .get(layer)
                .ok_or_else(|| Error::Config(format!("tap layer {layer} out of range")))?
                .output
                .channels();
            let mut eye = Tensor::zeros([c, c]);
            for i in 0..c {
                eye.data_mut()[i * c + i] = T::one();
            }
            params.insert(format!("heads.{j}.log_sigma_a"), Tensor::scalar(T::lit(cfg.sigma_a_init.ln())), ParamKind::Sigma)?;
            params.insert(format!("heads.{j}.log_sigma_c"), Tensor::scalar(T::lit(cfg.sigma_c_init.ln())), ParamKind::Sigma)?;
            params.insert(format!("heads.{j}.rho_a"), eye.clone(), ParamKind::Rho)?;
            params.insert(format!("heads.{j}.rho_c"), eye, ParamKind::Rho)?;
            out.push((layer, c));
        }
        Ok(Self { taps: out, params })
    }

    /// Maps raw student taps through the Laplace kernel and teacher taps
    /// (held constant) through the Gaussian kernel, then aligns both.
    pub fn apply<'t>(
        &self,
        tape: &'t Tape<T>,
        taps_a: &[Var<'t, T>],
        taps_c: &[Tensor<T>],
    ) -> Result<(Vec<Var<'t, T>>, Vec<Var<'t, T>>)> {
        if taps_a.len() != self.taps.len() || taps_c.len() != self.taps.len() {
            return Err(Error::shape(
                "distill_heads",
                format!("{} heads for {} / {} taps", self.taps.len(), taps_a.len(), taps_c.len()),
            ));
        }
        let mut ya = Vec::with_capacity(taps_a.len());
        let mut yc = Vec::with_capacity(taps_c.len());
        for (j, (&a, c)) in taps_a.iter().zip(taps_c).enumerate() {
            let p = |s: &str| self.params.var(tape, &format!("heads.{j}.{s}"));
            let layer = self.taps[j].0;
            let ka = kernel_g(a, p("log_sigma_a")?, layer)?;
            ya.push(rho_apply(ka, p("rho_a")?)?);
            let kc = kernel_h(tape.constant(c.clone()), p("log_sigma_c")?, layer)?;
            yc.push(rho_apply(kc, p("rho_c")?)?);
        }
        Ok((ya, yc))
    }
}

/// Teacher CNN and student ANN built from one architecture.
#[derive(Clone, Debug)]
pub struct ModelPair<T> {
    pub teacher: Model<T>,
    pub student: Model<T>,
    pub heads: DistillHeads<T>,
}

impl<T: Scalar> ModelPair<T> {
    pub fn tap_points(&self) -> &[usize] {
        self.student.taps()
    }

    pub fn spec(&self) -> &ArchSpec {
        self.student.spec()
    }
}

/// Builds a pair with default distillation heads on every tap point.
pub fn build_pair<T: Scalar>(spec: &ArchSpec, seed: u64) -> Result<ModelPair<T>> {
    build_pair_with(spec, seed, &DistillConfig::default())
}

/// Teacher and student draw from independent seeds derived from `seed`.
pub fn build_pair_with<T: Scalar>(spec: &ArchSpec, seed: u64, cfg: &DistillConfig) -> Result<ModelPair<T>> {
    let mut teacher = Model::new(spec, Flavor::Cnn, derive_seed(seed, "teacher"))?;
    let mut student = Model::new(spec, Flavor::Ann, derive_seed(seed, "student"))?;
    let taps = match &cfg.tap_layers {
        Some(t) => t.clone(),
        None => spec.tap_points()?,
    };
    teacher.set_taps(&taps)?;
    student.set_taps(&taps)?;
    let heads = DistillHeads::new(spec, &taps, cfg)?;
    Ok(ModelPair { teacher, student, heads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    fn tiny_spec() -> ArchSpec {
        serde_json::from_str(
            r#"{"name":"tiny","input_shape":[6,6,1],"class_count":3,"layers":[
                {"kind":"conv","channels":2,"kernel":3,"padding":1},{"kind":"relu"},
                {"kind":"conv","channels":3,"kernel":3,"padding":1},{"kind":"relu"},
                {"kind":"basic_block","channels":4,"stride":2},
                {"kind":"global_avg_pool"},{"kind":"linear","features":3}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn equal_seeds_give_identical_models() {
        let spec = ArchSpec::builtin("resnet20").unwrap();
        let a: ModelPair<f32> = build_pair(&spec, 7).unwrap();
        let b: ModelPair<f32> = build_pair(&spec, 7).unwrap();
        assert_eq!(a.student.params, b.student.params);
        assert_eq!(a.teacher.params, b.teacher.params);
        assert_ne!(
            a.student.params.get("layers.0.weight").unwrap().value,
            a.teacher.params.get("layers.0.weight").unwrap().value
        );
    }

    #[test]
    fn resnet20_student_layout() {
        let spec = ArchSpec::builtin("resnet20").unwrap();
        let pair: ModelPair<f32> = build_pair(&spec, 1).unwrap();
        let kinds: Vec<ParamKind> = pair.student.params.iter().map(|(_, p)| p.kind).collect();
        let adder_main = pair
            .student
            .params
            .iter()
            .filter(|(n, p)| p.kind == ParamKind::AdderFilter && !n.contains("shortcut"))
            .count();
        assert_eq!(adder_main, 18);
        assert_eq!(pair.student.params.get("layers.0.weight").unwrap().kind, ParamKind::Weight);
        assert!(kinds.contains(&ParamKind::Bias));
        assert_eq!(pair.teacher.param_count(), pair.student.param_count());
        assert_eq!(pair.tap_points().len(), 9);
        assert_eq!(pair.heads.params.len(), 36);
    }

    #[test]
    fn forward_shapes_follow_the_walk() {
        let spec = tiny_spec();
        let mut m: Model<f64> = Model::new(&spec, Flavor::Ann, 3).unwrap();
        let x: Tensor<f64> = seeded_init(&[2, 6, 6, 1], InitScheme::Normal { mean: 0.0, std: 1.0 }, 4).unwrap();
        let tape = Tape::new();
        let out = m.forward(&tape, &x, Mode::Train).unwrap();
        assert_eq!(out.logits.shape(), vec![2, 3]);
        // residual networks tap block outputs only
        assert_eq!(m.taps(), &[4]);
        assert_eq!(out.taps[0].shape(), vec![2, 3, 3, 4]);
        // adder taps are non-positive
        assert!(out.taps.iter().all(|t| t.value().data().iter().all(|&v| v <= 0.0)));
        let loss = crate::nn::basic::sum(out.logits).unwrap();
        let g = backward(loss).unwrap();
        assert!(g.param("layers.4.shortcut.weight").is_some());
    }

    #[test]
    fn running_statistics_move_only_in_train_mode() {
        let spec = tiny_spec();
        let mut m: Model<f32> = Model::new(&spec, Flavor::Cnn, 3).unwrap();
        let x: Tensor<f32> = seeded_init(&[4, 6, 6, 1], InitScheme::Normal { mean: 1.0, std: 1.0 }, 4).unwrap();
        let before = m.params.buffer("layers.0.bn.running_mean").unwrap().clone();
        m.predict(&x, 2).unwrap();
        assert_eq!(m.params.buffer("layers.0.bn.running_mean").unwrap(), &before);
        let tape = Tape::new();
        m.forward(&tape, &x, Mode::Train).unwrap();
        assert_ne!(m.params.buffer("layers.0.bn.running_mean").unwrap(), &before);
    }

    #[test]
    fn invalid_taps_and_missing_features_are_rejected() {
        let spec = tiny_spec();
        let mut m: Model<f32> = Model::new(&spec, Flavor::Cnn, 0).unwrap();
        assert!(m.set_taps(&[0]).is_err());
        assert!(m.set_taps(&[2]).is_err());
        assert!(m.set_taps(&[6]).is_err());
        let x = Tensor::zeros([1, 6, 6, 1]);
        assert!(m.features(&x, 1).is_err());
        assert!(m.predict(&Tensor::zeros([1, 5, 6, 1]), 1).is_err());
    }

    #[test]
    fn heads_start_as_identity() {
        let spec = tiny_spec();
        let heads: DistillHeads<f64> = DistillHeads::new(&spec, &[2], &DistillConfig::default()).unwrap();
        let tape = Tape::new();
        let preact: Tensor<f64> = Tensor::from_f64([1, 1, 1, 3], &[-1.0, 0.0, -2.0]).unwrap();
        let a = tape.constant(preact.clone());
        let (ya, yc) = heads.apply(&tape, &[a], &[preact]).unwrap();
        let ya = ya[0].value();
        assert!((ya.data()[0] - (-1f64).exp()).abs() < 1e-15);
        let yc = yc[0].value();
        assert!((yc.data()[2] - 1f64.exp()).abs() < 1e-12);
    }
}
