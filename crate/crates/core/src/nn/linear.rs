use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

use super::conv::channel_sum;

/// `[.., in] x [in, out] -> [.., out]`. Also serves as the 1x1 channel
/// mixing of feature maps, since NHWC keeps channels last.
pub fn matmul_lastdim<'t, T: Scalar>(x: Var<'t, T>, weight: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xv, wv) = (x.value(), weight.value());
    let [fin, fout] = *wv.shape() else {
        return Err(Error::shape("matmul", format!("weight must be [in,out], got {:?}", wv.shape())));
    };
    if xv.shape().last() != Some(&fin) {
        return Err(Error::shape(
            "matmul",
            format!("input {:?} does not end in {fin}", xv.shape()),
        ));
    }
    let rows = xv.numel() / fin;
    let mut out = vec![T::zero(); rows * fout];
    for (xr, orow) in xv.data().chunks(fin).zip(out.chunks_mut(fout)) {
        for (k, &a) in xr.iter().enumerate() {
            let wrow = &wv.data()[k * fout..(k + 1) * fout];
            for (o, &wk) in orow.iter_mut().zip(wrow) {
                *o = *o + a * wk;
            }
        }
    }
    let mut shape = xv.shape().to_vec();
    *shape.last_mut().unwrap() = fout;
    x.tape()
        .record("matmul", Tensor::from_parts(shape, out), &[x, weight], move |g, need| {
            let gd = g.data();
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); xv.numel()];
                for (drow, grow) in dx.chunks_mut(fin).zip(gd.chunks(fout)) {
                    for (k, d) in drow.iter_mut().enumerate() {
                        let wrow = &wv.data()[k * fout..(k + 1) * fout];
                        let mut acc = T::zero();
                        for (&wk, &gv) in wrow.iter().zip(grow) {
                            acc = acc + wk * gv;
                        }
                        *d = acc;
                    }
                }
                Tensor::from_parts(xv.shape().to_vec(), dx)
            });
            let dw = need[1].then(|| {
                let mut dw = vec![T::zero(); fin * fout];
                for (xr, grow) in xv.data().chunks(fin).zip(gd.chunks(fout)) {
                    for (k, &a) in xr.iter().enumerate() {
                        let drow = &mut dw[k * fout..(k + 1) * fout];
                        for (d, &gv) in drow.iter_mut().zip(grow) {
                            *d = *d + a * gv;
                        }
                    }
                }
                Tensor::from_parts(vec![fin, fout], dw)
            });
            vec![dx, dw]
        })
}

/// Adds a `[C]` vector along the trailing axis.
pub fn add_bias<'t, T: Scalar>(x: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xv, bv) = (x.value(), bias.value());
    let c = *xv.shape().last().unwrap();
    if bv.shape() != [c] {
        return Err(Error::shape("add_bias", format!("bias {:?} for trailing extent {c}", bv.shape())));
    }
    let mut out = xv.data().to_vec();
    for row in out.chunks_mut(c) {
        for (o, &b) in row.iter_mut().zip(bv.data()) {
            *o = *o + b;
        }
    }
    x.tape().record(
        "add_bias",
        Tensor::from_parts(xv.shape().to_vec(), out),
        &[x, bias],
        |g, need| vec![Some(g.clone()), need[1].then(|| channel_sum(g))],
    )
}

pub fn linear<'t, T: Scalar>(x: Var<'t, T>, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
    let y = matmul_lastdim(x, weight)?;
    match bias {
        Some(b) => add_bias(y, b),
        None => Ok(y),
    }
}
