//! JSON run configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::data::{load_cifar10, load_cifar100, load_mnist, AugmentPolicy, Dataset, Split};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::train::optim::SgdConfig;

/// A built-in architecture name or an inline description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchRef {
    Builtin(String),
    Inline(ArchSpec),
}

impl ArchRef {
    pub fn resolve(&self) -> Result<ArchSpec> {
        let spec = match self {
            ArchRef::Builtin(name) => ArchSpec::builtin(name)?,
            ArchRef::Inline(spec) => spec.clone(),
        };
        spec.walk()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Directory holding the raw files; the `--data-dir` flag overrides it.
    pub root: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Applied to CIFAR training batches only.
    pub augment: AugmentPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mnist,
            root: None,
            train_limit: None,
            test_limit: None,
            augment: AugmentPolicy::default(),
        }
    }
}

impl DataConfig {
    /// Augmentation used for training batches, if any.
    pub fn train_augment(&self) -> Option<&AugmentPolicy> {
        match self.kind {
            DatasetKind::Mnist => None,
            _ if self.augment.enabled => Some(&self.augment),
            _ => None,
        }
    }

    pub fn load<T: Scalar>(&self, root_override: Option<&Path>, split: Split) -> Result<Dataset<T>> {
        let root = root_override
            .map(Path::to_path_buf)
            .or_else(|| self.root.clone())
            .ok_or_else(|| Error::Config("no data directory given (set data.root or pass --data-dir)".into()))?;
        let ds = match self.kind {
            DatasetKind::Mnist => load_mnist(&root, split)?,
            DatasetKind::Cifar10 => load_cifar10(&root, split)?,
            DatasetKind::Cifar100 => load_cifar100(&root, split)?,
        };
        let limit = match split {
            Split::Train => self.train_limit,
            Split::Test => self.test_limit,
        };
        match limit {
            Some(n) => ds.truncate(n),
            None => Ok(ds),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Teacher on cross-entropy, student on the distillation objective.
    Pkkd,
    /// Student alone on cross-entropy.
    Vanilla,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub adaptive_adder_lr: bool,
    /// Factor applied on top of the adaptive adder scaling.
    pub adder_eta: f64,
    pub precision: Precision,
    pub mode: TrainMode,
    /// Batch size for evaluation passes.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            base_lr: 0.1,
            schedule: Schedule::Cosine,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            adaptive_adder_lr: true,
            adder_eta: 1.0,
            precision: Precision::F32,
            mode: TrainMode::Pkkd,
            eval_batch: 250,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            adaptive_adder_lr: self.adaptive_adder_lr,
            adder_eta: self.adder_eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batch normalization".into()));
        }
        if self.eval_batch == 0 {
            return Err(Error::Config("eval_batch must be positive".into()));
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("adder_eta", self.adder_eta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchRef,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub distill: DistillConfig,
}

impl RunConfig {
    pub fn new(arch: ArchRef) -> Self {
        Self {
            arch,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            distill: DistillConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.distill.validate()?;
        let spec = self.arch.resolve()?;
        if let Some(taps) = &self.distill.tap_layers {
            let eligible = spec.tap_points()?;
            if let Some(bad) = taps.iter().find(|t| !eligible.contains(t)) {
                return Err(Error::Config(format!(
                    "distill.tap_layers: layer {bad} is not eligible (eligible: {eligible:?})"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = RunConfig::from_json(r#"{"arch": "lenet-2d"}"#).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.distill.temperature, 1.0);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn inline_architecture_round_trips() {
        let spec = ArchSpec::builtin("resnet20").unwrap();
        let cfg = RunConfig::new(ArchRef::Inline(spec.clone()));
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back.arch.resolve().unwrap(), spec);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(RunConfig::from_json(r#"{"arch": "lenet-2d", "optimizer": "adam"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"arch": "lenet-2d", "train": {"lr": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"arch": "lenet-2d", "distill": {"gamma": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"arch": "lenet-2d", "train": {"batch_size": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"arch": "lenet-2d", "distill": {"alpha": -1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"arch": "lenet-2d", "distill": {"tap_layers": [0]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"arch": "lenet-3d"}"#).is_err());
    }
}
