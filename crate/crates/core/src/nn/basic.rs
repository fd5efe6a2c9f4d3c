//! Element-wise and reduction primitives.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

fn binary_shapes<T: Scalar>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

pub fn add<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    binary_shapes("add", &a, &b)?;
    let value = a.value().zip_map(&b.value(), |x, y| x + y)?;
    a.tape()
        .record("add", value, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())])
}

pub fn sub<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    binary_shapes("sub", &a, &b)?;
    let value = a.value().zip_map(&b.value(), |x, y| x - y)?;
    a.tape().record("sub", value, &[a, b], |g, _| {
        vec![Some(g.clone()), Some(g.map(|v| -v))]
    })
}

pub fn mul<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    binary_shapes("mul", &a, &b)?;
    let (av, bv) = (a.value(), b.value());
    let value = av.zip_map(&bv, |x, y| x * y)?;
    a.tape().record("mul", value, &[a, b], move |g, need| {
        vec![
            need[0].then(|| g.zip_map(&bv, |u, y| u * y).expect("shape")),
            need[1].then(|| g.zip_map(&av, |u, x| u * x).expect("shape")),
        ]
    })
}

/// Multiplies by a constant.
pub fn scale<T: Scalar>(a: Var<'_, T>, factor: T) -> Result<Var<'_, T>> {
    let value = a.value().map(|v| v * factor);
    a.tape()
        .record("scale", value, &[a], move |g, _| vec![Some(g.map(|u| u * factor))])
}

pub fn sum<T: Scalar>(a: Var<'_, T>) -> Result<Var<'_, T>> {
    let av = a.value();
    let shape = av.shape().to_vec();
    a.tape().record("sum", Tensor::scalar(av.sum()), &[a], move |g, _| {
        vec![Some(Tensor::full(shape.clone(), g.data()[0]))]
    })
}

pub fn mean<T: Scalar>(a: Var<'_, T>) -> Result<Var<'_, T>> {
    let av = a.value();
    let shape = av.shape().to_vec();
    let n = T::lit(av.numel() as f64);
    a.tape()
        .record("mean", Tensor::scalar(av.sum() / n), &[a], move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.data()[0] / n))]
        })
}

pub fn square<T: Scalar>(a: Var<'_, T>) -> Result<Var<'_, T>> {
    let av = a.value();
    let value = av.map(|v| v * v);
    a.tape().record("square", value, &[a], move |g, _| {
        let two = T::lit(2.0);
        vec![Some(g.zip_map(&av, |u, x| two * x * u).expect("shape"))]
    })
}

pub fn exp<T: Scalar>(a: Var<'_, T>) -> Result<Var<'_, T>> {
    let out = a.value().map(|v| v.exp());
    let saved = out.clone();
    a.tape().record("exp", out, &[a], move |g, _| {
        vec![Some(g.zip_map(&saved, |u, y| u * y).expect("shape"))]
    })
}

pub fn relu<T: Scalar>(a: Var<'_, T>) -> Result<Var<'_, T>> {
    let av = a.value();
    let value = av.map(|v| v.max(T::zero()));
    a.tape().record("relu", value, &[a], move |g, _| {
        vec![Some(
            g.zip_map(&av, |u, x| if x > T::zero() { u } else { T::zero() })
                .expect("shape"),
        )]
    })
}

pub fn reshape<'t, T: Scalar>(a: Var<'t, T>, shape: &[usize]) -> Result<Var<'t, T>> {
    let av = a.value();
    let value = av.reshape(shape.to_vec())?;
    let original = av.shape().to_vec();
    a.tape().record("reshape", value, &[a], move |g, _| {
        vec![Some(g.reshape(original.clone()).expect("numel preserved"))]
    })
}

/// `[N, ...] -> [N, prod(...)]`.
pub fn flatten<T: Scalar>(a: Var<'_, T>) -> Result<Var<'_, T>> {
    let shape = a.shape();
    let rest: usize = shape[1..].iter().product();
    reshape(a, &[shape[0], rest])
}
