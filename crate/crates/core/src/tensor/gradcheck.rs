//! Central-difference gradient oracle.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function, evaluated in 64-bit.
///
/// Component `i` is `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("finite difference step must be > 0, got {eps}")));
    }
    let mut eval = |probe: &Tensor<f64>| -> Result<f64> {
        let out = f(probe)?;
        if out.numel() != 1 {
            return Err(Error::NonScalarLoss(out.shape().to_vec()));
        }
        let v = out.data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_grad".into(),
            });
        }
        Ok(v)
    };
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error<T: Scalar, U: Scalar>(a: &Tensor<T>, b: &Tensor<U>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error shapes");
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.as_f64(), y.as_f64());
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_has_unit_gradient() {
        let x = Tensor::from_f64([2, 3], &[0.5, -1.0, 3.0, 7.0, 0.0, -2.5]).unwrap();
        let g = finite_diff_grad(|t| Ok(Tensor::scalar(t.sum())), &x, 1e-4).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() <= 1e-8, "{v}");
        }
    }

    #[test]
    fn quadratic_at_three() {
        let x = Tensor::scalar(3.0);
        let g = finite_diff_grad(
            |t| Ok(Tensor::scalar(t.data()[0] * t.data()[0])),
            &x,
            1e-4,
        )
        .unwrap();
        assert!((g.data()[0] - 6.0).abs() <= 1e-6);
    }

    #[test]
    fn rejects_bad_step_and_vector_output() {
        let x = Tensor::scalar(1.0);
        assert!(finite_diff_grad(|t| Ok(t.clone()), &x, 0.0).is_err());
        let v = Tensor::from_f64([2], &[1.0, 2.0]).unwrap();
        assert!(finite_diff_grad(|t| Ok(t.clone()), &v, 1e-3).is_err());
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let x = Tensor::scalar(0.0);
        let r = finite_diff_grad(|t| Ok(Tensor::scalar(1.0 / (t.data()[0] * 0.0))), &x, 1e-3);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
