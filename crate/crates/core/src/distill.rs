//! Kernel transforms, channel alignment and the distillation losses.
//!
//! Kernel widths are stored as `log sigma` so they stay positive under
//! plain gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::basic::{add, scale};
use crate::nn::linear::matmul_lastdim;
use crate::nn::loss::{cross_entropy, mse_mean, soft_cross_entropy, softmax};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Largest exponent argument `kernel_h` accepts before reporting overflow.
pub const KERNEL_EXPONENT_LIMIT: f64 = 80.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Layer indices to tap; `None` selects every eligible layer.
    pub tap_layers: Option<Vec<usize>>,
    pub temperature: f64,
    /// Initial kernel width on the student (Laplace) side.
    pub sigma_a_init: f64,
    /// Initial kernel width on the teacher (Gaussian) side.
    pub sigma_c_init: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            tap_layers: None,
            temperature: 1.0,
            sigma_a_init: 1.0,
            sigma_c_init: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::Config(format!(
                "alpha and beta must be non-negative (got {} and {})",
                self.alpha, self.beta
            )));
        }
        for (name, v) in [
            ("temperature", self.temperature),
            ("sigma_a_init", self.sigma_a_init),
            ("sigma_c_init", self.sigma_c_init),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

fn sigma_of<T: Scalar>(op: &'static str, log_sigma: &Var<'_, T>) -> Result<T> {
    let v = log_sigma.value();
    if v.numel() != 1 {
        return Err(Error::shape(op, format!("log sigma must hold one value, got {:?}", v.shape())));
    }
    Ok(v.data()[0].exp())
}

/// Gaussian-alike kernel on a convolution pre-activation:
/// `exp(-p / (2 sigma^2))`.
pub fn kernel_h<'t, T: Scalar>(preact: Var<'t, T>, log_sigma: Var<'t, T>, tap: usize) -> Result<Var<'t, T>> {
    let sigma = sigma_of("kernel_h", &log_sigma)?;
    let inv = T::one() / (T::lit(2.0) * sigma * sigma);
    let p = preact.value();
    let mut out = Vec::with_capacity(p.numel());
    for &v in p.data() {
        let arg = -v * inv;
        if arg.as_f64() > KERNEL_EXPONENT_LIMIT {
            return Err(Error::KernelOverflow {
                tap,
                exponent: arg.as_f64(),
                limit: KERNEL_EXPONENT_LIMIT,
            });
        }
        out.push(arg.exp());
    }
    let y = Tensor::from_parts(p.shape().to_vec(), out);
    let saved = y.clone();
    preact.tape().record("kernel_h", y, &[preact, log_sigma], move |g, need| {
        let two_inv = T::lit(2.0) * inv;
        vec![
            need[0].then(|| g.zip_map(&saved, |u, y| -u * y * inv).expect("shape")),
            need[1].then(|| {
                // d/d(log sigma) of -p/(2 sigma^2) is p/sigma^2
                let s: T = g
                    .data()
                    .iter()
                    .zip(saved.data())
                    .zip(p.data())
                    .map(|((&u, &y), &p)| u * y * p * two_inv)
                    .sum();
                Tensor::scalar(s)
            }),
        ]
    })
}

/// Laplace kernel on an adder pre-activation `p = -|x - f|_1`:
/// `exp(p / sigma)`, which lies in `(0, 1]`.
pub fn kernel_g<'t, T: Scalar>(preact: Var<'t, T>, log_sigma: Var<'t, T>, tap: usize) -> Result<Var<'t, T>> {
    let sigma = sigma_of("kernel_g", &log_sigma)?;
    let p = preact.value();
    if let Some(&bad) = p.data().iter().find(|&&v| v > T::zero()) {
        return Err(Error::PositivePreactivation {
            tap,
            value: bad.as_f64(),
        });
    }
    let inv = T::one() / sigma;
    let y = p.map(|v| (v * inv).exp());
    let saved = y.clone();
    preact.tape().record("kernel_g", y, &[preact, log_sigma], move |g, need| {
        vec![
            need[0].then(|| g.zip_map(&saved, |u, y| u * y * inv).expect("shape")),
            need[1].then(|| {
                let s: T = g
                    .data()
                    .iter()
                    .zip(saved.data())
                    .zip(p.data())
                    .map(|((&u, &y), &p)| -u * y * p * inv)
                    .sum();
                Tensor::scalar(s)
            }),
        ]
    })
}

/// 1x1 channel mixing: `out[..., j] = sum_i x[..., i] w[i, j]`.
pub fn rho_apply<'t, T: Scalar>(kernel_out: Var<'t, T>, weight: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xs, ws) = (kernel_out.shape(), weight.shape());
    let c = *xs.last().unwrap_or(&0);
    if ws.len() != 2 || ws[0] != ws[1] || ws[0] != c {
        return Err(Error::shape(
            "rho_apply",
            format!("{c} channels against transform {ws:?}"),
        ));
    }
    matmul_lastdim(kernel_out, weight)
}

/// Sum over tap layers of the mean squared difference.
pub fn loss_mid<'t, T: Scalar>(tape: &'t Tape<T>, taps_a: &[Var<'t, T>], taps_c: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    if taps_a.len() != taps_c.len() {
        return Err(Error::shape(
            "loss_mid",
            format!("{} student taps against {} teacher taps", taps_a.len(), taps_c.len()),
        ));
    }
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for (&a, &c) in taps_a.iter().zip(taps_c) {
        total = add(total, mse_mean(a, c)?)?;
    }
    Ok(total)
}

/// `alpha * CE(s / T, softmax(t / T)) + CE(s, labels)`.
pub fn loss_blend<'t, T: Scalar>(
    student_logits: Var<'t, T>,
    teacher_logits: &Tensor<T>,
    labels: &[usize],
    alpha: f64,
    temperature: f64,
) -> Result<Var<'t, T>> {
    let s = student_logits.shape();
    if s != teacher_logits.shape() {
        return Err(Error::shape(
            "loss_blend",
            format!("student logits {s:?} vs teacher logits {:?}", teacher_logits.shape()),
        ));
    }
    let target = softmax(teacher_logits, temperature)?;
    let softened = scale(student_logits, T::lit(1.0 / temperature))?;
    let kd = soft_cross_entropy(softened, &target)?;
    let ce = cross_entropy(student_logits, labels)?;
    add(scale(kd, T::lit(alpha))?, ce)
}

/// `beta * mid + blend`.
pub fn loss_total<'t, T: Scalar>(mid: Var<'t, T>, blend: Var<'t, T>, beta: f64) -> Result<Var<'t, T>> {
    add(scale(mid, T::lit(beta))?, blend)
}
