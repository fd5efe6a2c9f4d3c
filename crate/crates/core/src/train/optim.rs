//! Learning-rate schedule and SGD with momentum.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{ParamKind, ParamSet};
use crate::tensor::{Gradients, Scalar, Tensor};

/// `base_lr * (1 + cos(pi * step / total_steps)) / 2`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::invalid(format!(
            "schedule step {step} outside 0..={total_steps}"
        )));
    }
    let t = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Rescales an adder filter gradient to l2 norm `sqrt(numel)`, equalizing
/// update magnitudes across layers.
pub fn adaptive_adder_lr<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let norm = grad.data().iter().map(|&g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return grad.clone();
    }
    let scale = T::lit((grad.numel() as f64).sqrt() / norm);
    grad.map(|g| g * scale)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub adaptive_adder_lr: bool,
    /// Extra factor on adaptively scaled adder gradients.
    pub adder_eta: f64,
}

/// Momentum buffers keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sgd<T> {
    velocity: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Self {
            velocity: IndexMap::new(),
        }
    }

    pub fn velocity(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_velocity(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.velocity.insert(name.into(), value);
    }

    /// `v <- m v + g + wd p; p <- p - lr v`. Normalization affine terms and
    /// kernel widths are exempt from weight decay.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>, lr: f64, cfg: &SgdConfig) -> Result<()> {
        let (m, wd, lr) = (T::lit(cfg.momentum), T::lit(cfg.weight_decay), T::lit(lr));
        for (name, p) in params.iter_mut() {
            if !p.learnable {
                continue;
            }
            let g = grads
                .param(name)
                .ok_or_else(|| Error::invalid(format!("no gradient for parameter `{name}`")))?;
            if g.shape() != p.value.shape() {
                return Err(Error::shape(
                    "sgd_momentum_update",
                    format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.value.shape()),
                ));
            }
            let g = if cfg.adaptive_adder_lr && p.kind == ParamKind::AdderFilter {
                let eta = T::lit(cfg.adder_eta);
                adaptive_adder_lr(&g).map(|v| v * eta)
            } else {
                g
            };
            let decay = if p.kind.decays() { wd } else { T::zero() };
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros_like(&p.value));
            for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.value.data_mut()) {
                *vi = m * *vi + gi + decay * *pi;
                *pi = *pi - lr * *vi;
            }
            p.value.check_finite(name)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{seeded_init, InitScheme, Tape};

    fn cfg(momentum: f64, weight_decay: f64) -> SgdConfig {
        SgdConfig {
            momentum,
            weight_decay,
            adaptive_adder_lr: false,
            adder_eta: 1.0,
        }
    }

    fn grads_for(value: f64) -> (ParamSet<f64>, Gradients<f64>) {
        let mut ps = ParamSet::default();
        ps.insert("w", Tensor::scalar(1.0), ParamKind::Weight).unwrap();
        let tape = Tape::new();
        let w = ps.var(&tape, "w").unwrap();
        let loss = crate::nn::basic::scale(w, value).unwrap();
        (ps, loss.backward().unwrap())
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.1).unwrap(), 0.1);
        assert!(cosine_lr(100, 100, 0.1).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(101, 100, 0.1).is_err());
        let mut prev = f64::INFINITY;
        for s in 0..=37 {
            let lr = cosine_lr(s, 37, 0.3).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn plain_step_arithmetic() {
        let (mut ps, g) = grads_for(1.0);
        let mut opt = Sgd::new();
        opt.step(&mut ps, &g, 0.1, &cfg(0.0, 0.0)).unwrap();
        assert_eq!(ps.get("w").unwrap().value.data(), &[0.9]);
        let (mut ps, g) = grads_for(0.0);
        let mut opt = Sgd::new();
        opt.step(&mut ps, &g, 0.1, &cfg(0.9, 0.0)).unwrap();
        assert_eq!(ps.get("w").unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn momentum_accumulates() {
        let (mut ps, g) = grads_for(2.0);
        let mut opt = Sgd::new();
        opt.step(&mut ps, &g, 0.0, &cfg(0.9, 0.0)).unwrap();
        opt.step(&mut ps, &g, 0.0, &cfg(0.9, 0.0)).unwrap();
        let (_, v) = opt.velocity().next().unwrap();
        assert!((v.data()[0] - 1.9 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn norm_terms_skip_weight_decay() {
        let mut ps = ParamSet::default();
        ps.insert("gamma", Tensor::scalar(1.0), ParamKind::NormAffine).unwrap();
        ps.insert("w", Tensor::scalar(1.0), ParamKind::Weight).unwrap();
        let tape = Tape::new();
        let a = ps.var(&tape, "gamma").unwrap();
        let b = ps.var(&tape, "w").unwrap();
        let loss = crate::nn::basic::scale(crate::nn::basic::add(a, b).unwrap(), 0.0).unwrap();
        let g = loss.backward().unwrap();
        Sgd::new().step(&mut ps, &g, 1.0, &cfg(0.0, 0.5)).unwrap();
        assert_eq!(ps.get("gamma").unwrap().value.data(), &[1.0]);
        assert_eq!(ps.get("w").unwrap().value.data(), &[0.5]);
    }

    #[test]
    fn adaptive_scaling() {
        let z: Tensor<f64> = Tensor::zeros([7]);
        assert!(adaptive_adder_lr(&z).data().iter().all(|&v| v == 0.0));
        let fixed = Tensor::ones([9]);
        assert_eq!(adaptive_adder_lr::<f64>(&fixed).data(), fixed.data());
        let g: Tensor<f64> = seeded_init(&[3, 3, 2, 4], InitScheme::Normal { mean: 0.0, std: 0.01 }, 3).unwrap();
        let s = adaptive_adder_lr(&g);
        assert!((s.l2_norm() - 72f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (_, g) = grads_for(1.0);
        let mut other = ParamSet::default();
        other.insert("v", Tensor::scalar(1.0), ParamKind::Weight).unwrap();
        assert!(Sgd::new().step(&mut other, &g, 0.1, &cfg(0.0, 0.0)).is_err());
    }
}
