//! Batch normalization over the trailing channel axis.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormLayer {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormLayer {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

impl BatchNormLayer {
    /// Normalizes `x` and, in train mode, folds the batch statistics into
    /// the running estimates (unbiased variance, exponential averaging).
    pub fn forward<'t, T: Scalar>(
        &self,
        x: Var<'t, T>,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        mode: Mode,
    ) -> Result<Var<'t, T>> {
        match mode {
            Mode::Train => {
                let (y, stats) = batch_norm_train(x, gamma, beta, self.eps)?;
                let m = T::lit(self.momentum);
                let keep = T::one() - m;
                let count = x.value().numel() / stats.mean.numel();
                let unbias = if count > 1 {
                    T::lit(count as f64 / (count as f64 - 1.0))
                } else {
                    T::one()
                };
                for ((rm, rv), (&bm, &bv)) in running_mean
                    .data_mut()
                    .iter_mut()
                    .zip(running_var.data_mut())
                    .zip(stats.mean.data().iter().zip(stats.var.data()))
                {
                    *rm = keep * *rm + m * bm;
                    *rv = keep * *rv + m * bv * unbias;
                }
                Ok(y)
            }
            Mode::Eval => batch_norm_eval(x, gamma, beta, running_mean, running_var, self.eps),
        }
    }
}

/// Per-channel statistics of one training batch (biased variance).
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

fn channels<T: Scalar>(op: &'static str, x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    if x.rank() < 2 {
        return Err(Error::shape(op, format!("input rank {} < 2", x.rank())));
    }
    let c = *x.shape().last().unwrap();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            op,
            format!("affine terms {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    Ok(c)
}

pub fn batch_norm_train<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: f64,
) -> Result<(Var<'t, T>, BatchStats<T>)> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let c = channels("batch_norm", &xv, &gv, &bv)?;
    let m = xv.numel() / c;
    let mf = T::lit(m as f64);
    let mut mean = vec![T::zero(); c];
    for row in xv.data().chunks(c) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    mean.iter_mut().for_each(|a| *a = *a / mf);
    let mut var = vec![T::zero(); c];
    for row in xv.data().chunks(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - mu;
            *a = *a + d * d;
        }
    }
    var.iter_mut().for_each(|a| *a = *a / mf);
    let eps = T::lit(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = vec![T::zero(); xv.numel()];
    let mut out = vec![T::zero(); xv.numel()];
    for ((row, hrow), orow) in xv
        .data()
        .chunks(c)
        .zip(xhat.chunks_mut(c))
        .zip(out.chunks_mut(c))
    {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            hrow[ch] = h;
            orow[ch] = gv.data()[ch] * h + bv.data()[ch];
        }
    }
    let stats = BatchStats {
        mean: Tensor::from_parts(vec![c], mean),
        var: Tensor::from_parts(vec![c], var),
    };
    let shape = xv.shape().to_vec();
    let y = x.tape().record(
        "batch_norm",
        Tensor::from_parts(shape.clone(), out),
        &[x, gamma, beta],
        move |g, need| {
            let gd = g.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gh = vec![T::zero(); c];
            for (grow, hrow) in gd.chunks(c).zip(xhat.chunks(c)) {
                for ch in 0..c {
                    sum_g[ch] = sum_g[ch] + grow[ch];
                    sum_gh[ch] = sum_gh[ch] + grow[ch] * hrow[ch];
                }
            }
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); gd.len()];
                for ((drow, grow), hrow) in dx.chunks_mut(c).zip(gd.chunks(c)).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        let k = gv.data()[ch] * inv_std[ch] / mf;
                        drow[ch] = k * (mf * grow[ch] - sum_g[ch] - hrow[ch] * sum_gh[ch]);
                    }
                }
                Tensor::from_parts(shape.clone(), dx)
            });
            vec![
                dx,
                need[1].then(|| Tensor::from_parts(vec![c], sum_gh.clone())),
                need[2].then(|| Tensor::from_parts(vec![c], sum_g.clone())),
            ]
        },
    )?;
    Ok((y, stats))
}

pub fn batch_norm_eval<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let c = channels("batch_norm_eval", &xv, &gv, &bv)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(Error::shape("batch_norm_eval", "running statistics size"));
    }
    let eps = T::lit(eps);
    let mean = running_mean.data().to_vec();
    let inv_std: Vec<T> = running_var
        .data()
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let mut xhat = vec![T::zero(); xv.numel()];
    let mut out = vec![T::zero(); xv.numel()];
    for ((row, hrow), orow) in xv
        .data()
        .chunks(c)
        .zip(xhat.chunks_mut(c))
        .zip(out.chunks_mut(c))
    {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            hrow[ch] = h;
            orow[ch] = gv.data()[ch] * h + bv.data()[ch];
        }
    }
    let shape = xv.shape().to_vec();
    x.tape().record(
        "batch_norm_eval",
        Tensor::from_parts(shape.clone(), out),
        &[x, gamma, beta],
        move |g, need| {
            let gd = g.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gh = vec![T::zero(); c];
            for (grow, hrow) in gd.chunks(c).zip(xhat.chunks(c)) {
                for ch in 0..c {
                    sum_g[ch] = sum_g[ch] + grow[ch];
                    sum_gh[ch] = sum_gh[ch] + grow[ch] * hrow[ch];
                }
            }
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); gd.len()];
                for (drow, grow) in dx.chunks_mut(c).zip(gd.chunks(c)) {
                    for ch in 0..c {
                        drow[ch] = grow[ch] * gv.data()[ch] * inv_std[ch];
                    }
                }
                Tensor::from_parts(shape.clone(), dx)
            });
            vec![
                dx,
                need[1].then(|| Tensor::from_parts(vec![c], sum_gh)),
                need[2].then(|| Tensor::from_parts(vec![c], sum_g)),
            ]
        },
    )
}
