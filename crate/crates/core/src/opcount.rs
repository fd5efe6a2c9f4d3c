//! Static multiplication and addition counts.
//!
//! A convolution with `H' W' d^2 c_in c_out` multiply-accumulates costs that
//! many multiplications and additions. An adder layer with the same shape
//! costs no multiplications and twice as many additions (one subtraction
//! and one accumulation per connection; the absolute value is free).
//! Normalization, pooling and activations are not counted.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    Cnn,
    Ann,
}

impl FromStr for CountMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(CountMode::Cnn),
            "ann" => Ok(CountMode::Ann),
            other => Err(Error::invalid(format!("count mode must be `cnn` or `ann`, got `{other}`"))),
        }
    }
}

impl fmt::Display for CountMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountMode::Cnn => "cnn",
            CountMode::Ann => "ann",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CountOptions {
    /// Count the 1x1 projection shortcuts of residual blocks.
    pub include_shortcuts: bool,
    /// Count the final classifier.
    pub include_classifier: bool,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self {
            include_shortcuts: true,
            include_classifier: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub name: String,
    pub mul: u64,
    pub add: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OpCountReport {
    pub arch: String,
    pub mode: CountMode,
    pub multiplications: u64,
    pub additions: u64,
    pub per_layer: Vec<LayerCount>,
}

pub fn count_ops(spec: &ArchSpec, mode: CountMode, opts: CountOptions) -> Result<OpCountReport> {
    let walk = spec.walk()?;
    let last = walk.len() - 1 - walk.iter().rev().position(|i| i.layer.is_weighted()).unwrap_or(0);
    let mut per_layer = Vec::new();
    for info in &walk {
        if info.index == last && !opts.include_classifier {
            continue;
        }
        let adder = mode == CountMode::Ann && info.uses_adder();
        let mut push = |name: String, macs: u64, adder: bool| {
            let (mul, add) = if adder { (0, 2 * macs) } else { (macs, macs) };
            per_layer.push(LayerCount { name, mul, add });
        };
        for site in &info.convs {
            if site.is_shortcut() && !opts.include_shortcuts {
                continue;
            }
            let name = if info.layer.is_block() {
                format!("layers.{}.{}", info.index, site.part)
            } else {
                format!("layers.{}", info.index)
            };
            push(name, site.macs(), adder);
        }
        let macs = info.linear_macs();
        if macs > 0 {
            push(format!("layers.{}", info.index), macs, false);
        }
    }
    Ok(OpCountReport {
        arch: spec.name.clone(),
        mode,
        multiplications: per_layer.iter().map(|l| l.mul).sum(),
        additions: per_layer.iter().map(|l| l.add).sum(),
        per_layer,
    })
}

/// Formats a count with an SI suffix (`41.17M`, `1.81G`).
pub fn human(count: u64) -> String {
    let v = count as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.2}K", v / 1e3)
    } else {
        count.to_string()
    }
}

impl fmt::Display for OpCountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ({})", self.arch, self.mode)?;
        for l in &self.per_layer {
            writeln!(f, "  {:<24} mul {:>12}  add {:>12}", l.name, l.mul, l.add)?;
        }
        write!(
            f,
            "total mul {} ({})  add {} ({})",
            self.multiplications,
            human(self.multiplications),
            self.additions,
            human(self.additions)
        )
    }
}
