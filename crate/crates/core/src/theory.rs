//! Series expansion of the Gaussian-alike kernel `exp(-x.f / (2 sigma^2))`
//! and its explicit finite-dimensional feature maps.
//!
//! Order `n` of the Taylor series splits into an inner product of two
//! vectors indexed by the multi-indices of `n` over the `k` input
//! coordinates. The signed coefficient sits entirely on the left map.
//! Everything here is f64; it is a reference, not a training path.

use crate::error::{Error, Result};

/// Largest order accepted by [`phi_map`].
pub const MAX_ORDER: usize = 20;
/// Largest input dimension accepted by [`phi_map`].
pub const MAX_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

fn dot(x: &[f64], f: &[f64]) -> Result<f64> {
    if x.len() != f.len() || x.is_empty() {
        return Err(Error::invalid(format!(
            "vectors must be non-empty and of equal length ({} vs {})",
            x.len(),
            f.len()
        )));
    }
    Ok(x.iter().zip(f).map(|(a, b)| a * b).sum())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn factorial(n: usize) -> f64 {
    (2..=n).map(|k| k as f64).product()
}

/// `(-1)^n (x.f)^n / (n! (2 sigma^2)^n)`. Orders above 20 are evaluated in
/// log space since `n!` no longer fits comfortably.
pub fn series_term(x: &[f64], f: &[f64], sigma: f64, n: usize) -> Result<f64> {
    check_sigma(sigma)?;
    let z = dot(x, f)?;
    let two_s2 = 2.0 * sigma * sigma;
    if n <= 20 {
        return Ok((-z / two_s2).powi(n as i32) / factorial(n));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    let mag = n as f64 * (z.abs() / two_s2).ln() - ln_factorial(n);
    let sign = if z > 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
    Ok(sign * mag.exp())
}

/// `(n + k - 1)! / (n! (k - 1)!)`, the number of multi-indices of `n`
/// over `k` slots.
pub fn multi_index_count(n: usize, k: usize) -> usize {
    if k == 0 {
        return usize::from(n == 0);
    }
    // C(n + k - 1, k - 1) with exact intermediate division
    let mut c: usize = 1;
    for i in 1..k {
        c = c * (n + i) / i;
    }
    c
}

/// All `k`-tuples of non-negative integers summing to `n`, in
/// lexicographic order.
pub fn multi_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(rest);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=rest {
            prefix.push(first);
            rec(rest - first, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(multi_index_count(n, k));
    if k > 0 {
        rec(n, k, &mut Vec::with_capacity(k), &mut out);
    } else if n == 0 {
        out.push(Vec::new());
    }
    out
}

/// Order-`n` feature map. The left map carries
/// `(-1)^n / (prod m_i! (2 sigma^2)^n) * prod x_i^m_i`, the right map
/// `prod f_i^m_i`, so that `left(x) . right(f) == series_term(x, f, sigma, n)`.
pub fn phi_map(x: &[f64], n: usize, sigma: f64, side: Side) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let k = x.len();
    if n > MAX_ORDER || k == 0 || k > MAX_DIM {
        return Err(Error::invalid(format!(
            "feature map limited to order <= {MAX_ORDER} and 1..={MAX_DIM} inputs (got n={n}, k={k})"
        )));
    }
    let scale = if n % 2 == 1 { -1.0 } else { 1.0 } / (2.0 * sigma * sigma).powi(n as i32);
    Ok(multi_indices(n, k)
        .iter()
        .map(|m| {
            let mono: f64 = m.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product();
            match side {
                Side::Right => mono,
                Side::Left => {
                    let denom: f64 = m.iter().map(|&p| factorial(p)).product();
                    scale / denom * mono
                }
            }
        })
        .collect())
}

/// Order-`n` term computed through the feature maps.
pub fn feature_term(x: &[f64], f: &[f64], sigma: f64, n: usize) -> Result<f64> {
    if x.len() != f.len() {
        return Err(Error::invalid("x and f differ in length"));
    }
    let l = phi_map(x, n, sigma, Side::Left)?;
    let r = phi_map(f, n, sigma, Side::Right)?;
    Ok(l.iter().zip(&r).map(|(a, b)| a * b).sum())
}

/// `|exp(-x.f / (2 sigma^2)) - sum_{n<=order} <phi_n(x), phi_n(f)>|`.
pub fn verify_expansion(x: &[f64], f: &[f64], sigma: f64, order: usize) -> Result<f64> {
    let z = dot(x, f)?;
    check_sigma(sigma)?;
    let exact = (-z / (2.0 * sigma * sigma)).exp();
    let mut partial = 0.0;
    for n in 0..=order {
        partial += feature_term(x, f, sigma, n)?;
    }
    Ok((exact - partial).abs())
}

/// Truncation bound: `|term(order + 1)| * exp(|x.f| / (2 sigma^2))`.
pub fn residual_bound(x: &[f64], f: &[f64], sigma: f64, order: usize) -> Result<f64> {
    let z = dot(x, f)?;
    let t = series_term(x, f, sigma, order + 1)?;
    Ok(t.abs() * (z.abs() / (2.0 * sigma * sigma)).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub order: usize,
    pub max_residual: f64,
    pub max_bound: f64,
}

/// Maximum residual per truncation order over a set of `(x, f, sigma)`
/// cases.
pub fn residual_table(cases: &[(Vec<f64>, Vec<f64>, f64)], max_order: usize) -> Result<Vec<ResidualRow>> {
    (0..=max_order)
        .map(|order| {
            let mut row = ResidualRow {
                order,
                max_residual: 0.0,
                max_bound: 0.0,
            };
            for (x, f, s) in cases {
                row.max_residual = row.max_residual.max(verify_expansion(x, f, *s, order)?);
                row.max_bound = row.max_bound.max(residual_bound(x, f, *s, order)?);
            }
            Ok(row)
        })
        .collect()
}

/// `count` random cases with `k` coordinates in `[-1, 1]` and `sigma`
/// chosen so that `|x.f| / (2 sigma^2)` is spread uniformly over
/// `(0, z_max]`.
///
/// Pairs that are nearly orthogonal (`|cos| < 0.25`) are redrawn: the
/// monomial features then cancel catastrophically and floating-point
/// error, not truncation, dominates the residual.
pub fn random_cases(count: usize, k: usize, z_max: f64, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>, f64)>> {
    use rand::{Rng, SeedableRng};
    if k == 0 || k > MAX_DIM || !(z_max.is_finite() && z_max > 0.0) {
        return Err(Error::invalid(format!("need 1..={MAX_DIM} coordinates and a positive bound")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let z = dot(&x, &f)?.abs();
        let norms = dot(&x, &x)?.sqrt() * dot(&f, &f)?.sqrt();
        if z < 1e-9 || z < 0.25 * norms {
            continue;
        }
        let target = z_max * (1.0 - rng.random::<f64>());
        out.push((x, f, (z / (2.0 * target)).sqrt()));
    }
    Ok(out)
}
