use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

use super::conv::Geometry;

/// Max pooling over NHWC input; padded cells never win.
pub fn max_pool2d<T: Scalar>(x: Var<'_, T>, window: usize, stride: usize, padding: usize) -> Result<Var<'_, T>> {
    let xv = x.value();
    let [n, h, w, c] = *xv.shape() else {
        return Err(Error::shape("max_pool2d", format!("input must be [N,H,W,C], got {:?}", xv.shape())));
    };
    let geom = Geometry::new(window, stride, padding);
    let (Some(oh), Some(ow)) = (geom.output_extent(h), geom.output_extent(w)) else {
        return Err(Error::shape("max_pool2d", format!("empty output for {h}x{w} with {geom:?}")));
    };
    if padding >= window {
        return Err(Error::shape("max_pool2d", "padding must be smaller than the window"));
    }
    let xd = xv.data();
    let mut out = vec![T::zero(); n * oh * ow * c];
    let mut argmax = vec![0usize; out.len()];
    for b in 0..n {
        for u in 0..oh {
            for v in 0..ow {
                let o = ((b * oh + u) * ow + v) * c;
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for i in 0..window {
                        let r = u * stride + i;
                        if r < padding || r - padding >= h {
                            continue;
                        }
                        for j in 0..window {
                            let s = v * stride + j;
                            if s < padding || s - padding >= w {
                                continue;
                            }
                            let idx = ((b * h + r - padding) * w + s - padding) * c + ch;
                            if xd[idx] > best || best_at == usize::MAX {
                                best = xd[idx];
                                best_at = idx;
                            }
                        }
                    }
                    out[o + ch] = best;
                    argmax[o + ch] = best_at;
                }
            }
        }
    }
    let in_shape = xv.shape().to_vec();
    x.tape().record(
        "max_pool2d",
        Tensor::from_parts(vec![n, oh, ow, c], out),
        &[x],
        move |g, _| {
            let mut dx = Tensor::zeros(in_shape.clone());
            let dd = dx.data_mut();
            for (&src, &gv) in argmax.iter().zip(g.data()) {
                dd[src] = dd[src] + gv;
            }
            vec![Some(dx)]
        },
    )
}

/// `[N,H,W,C] -> [N,C]` spatial mean.
pub fn global_avg_pool<T: Scalar>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let xv = x.value();
    let [n, h, w, c] = *xv.shape() else {
        return Err(Error::shape("global_avg_pool", format!("input must be [N,H,W,C], got {:?}", xv.shape())));
    };
    let area = T::lit((h * w) as f64);
    let mut out = vec![T::zero(); n * c];
    for b in 0..n {
        let acc = &mut out[b * c..(b + 1) * c];
        for px in xv.data()[b * h * w * c..(b + 1) * h * w * c].chunks(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a = *a + v;
            }
        }
        acc.iter_mut().for_each(|a| *a = *a / area);
    }
    let in_shape = xv.shape().to_vec();
    x.tape().record(
        "global_avg_pool",
        Tensor::from_parts(vec![n, c], out),
        &[x],
        move |g, _| {
            let mut dx = vec![T::zero(); in_shape.iter().product()];
            for b in 0..n {
                let gs = &g.data()[b * c..(b + 1) * c];
                for px in dx[b * h * w * c..(b + 1) * h * w * c].chunks_mut(c) {
                    for (d, &gv) in px.iter_mut().zip(gs) {
                        *d = gv / area;
                    }
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), dx))]
        },
    )
}
