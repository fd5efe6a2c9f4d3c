//! Classification and regression losses. All return a `[1]` tensor.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Row-wise softmax of `[N, K]` logits divided by `temperature`.
pub fn softmax<T: Scalar>(logits: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    let [_, k] = *logits.shape() else {
        return Err(Error::shape("softmax", format!("expected [N,K], got {:?}", logits.shape())));
    };
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let t = T::lit(temperature);
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b / t));
        let e: Vec<T> = row.iter().map(|&z| (z / t - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if labels.is_empty() {
        return Err(Error::invalid("one_hot of an empty label list"));
    }
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = T::one();
    }
    Ok(Tensor::from_parts(vec![labels.len(), classes], data))
}

/// Mean over the batch of `-sum_k target log softmax(logits)`, with the log
/// taken through a max-shifted log-sum-exp. The target is a constant.
pub fn soft_cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    let lv = logits.value();
    let [n, k] = *lv.shape() else {
        return Err(Error::shape("soft_cross_entropy", format!("logits must be [N,K], got {:?}", lv.shape())));
    };
    if target.shape() != lv.shape() {
        return Err(Error::shape(
            "soft_cross_entropy",
            format!("target {:?} vs logits {:?}", target.shape(), lv.shape()),
        ));
    }
    for (i, row) in target.data().chunks(k).enumerate() {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if row.iter().any(|&v| v < T::zero()) || (s - 1.0).abs() > 1e-5 {
            return Err(Error::invalid(format!(
                "target row {i} is not a probability distribution (sum {s})"
            )));
        }
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = T::zero();
    for (row, trow) in lv.data().chunks(k).zip(target.data().chunks(k)) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let s: T = row.iter().map(|&z| (z - m).exp()).sum();
        let lse = m + s.ln();
        let mut loss = T::zero();
        for (&z, &t) in row.iter().zip(trow) {
            loss = loss - t * (z - lse);
            probs.push((z - lse).exp());
        }
        total = total + loss;
    }
    let nf = T::lit(n as f64);
    let target = target.clone();
    logits.tape().record(
        "soft_cross_entropy",
        Tensor::scalar(total / nf),
        &[logits],
        move |g, _| {
            let scale = g.data()[0] / nf;
            let mut dz = Vec::with_capacity(n * k);
            for (prow, trow) in probs.chunks(k).zip(target.data().chunks(k)) {
                let mass: T = trow.iter().copied().sum();
                for (&p, &t) in prow.iter().zip(trow) {
                    dz.push((p * mass - t) * scale);
                }
            }
            vec![Some(Tensor::from_parts(vec![n, k], dz))]
        },
    )
}

/// Plain cross-entropy against class indices.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {shape:?} for {} labels", labels.len()),
        ));
    }
    let target = one_hot(labels, shape[1])?;
    soft_cross_entropy(logits, &target)
}

/// Mean over all elements of `(a - b)^2`.
pub fn mse_mean<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() {
        return Err(Error::shape("mse_mean", format!("{:?} vs {:?}", av.shape(), bv.shape())));
    }
    let diff = av.zip_map(&bv, |x, y| x - y)?;
    let n = T::lit(diff.numel() as f64);
    let value = diff.data().iter().map(|&d| d * d).sum::<T>() / n;
    a.tape()
        .record("mse_mean", Tensor::scalar(value), &[a, b], move |g, need| {
            let k = T::lit(2.0) * g.data()[0] / n;
            vec![
                need[0].then(|| diff.map(|d| d * k)),
                need[1].then(|| diff.map(|d| -d * k)),
            ]
        })
}

/// Number of rows whose arg-max matches the label.
pub fn correct_predictions<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
