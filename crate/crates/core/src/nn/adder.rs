//! Adder layer: negated l1 distance between input patches and filters.
//!
//! The forward inner loop uses only subtraction, absolute value and
//! accumulation. Padding positions take part as zeros, exactly as if the
//! input had been zero-padded before the distance was taken.
//!
//! The true derivatives are sign functions. Backpropagation instead uses
//! the l2-style surrogates
//!
//! * `dY/dF = X - F` (full precision), and
//! * `dY/dX = clip(F - X, -1, 1)`,
//!
//! which are the exact gradients of `-1/2 sum (X - F)^2` (the input one only
//! where `|F - X| <= 1`).

use super::conv::{check_upstream, ConvDims, Geometry};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor, Var};

/// `Y(u,v,c) = -sum_{i,j,k} |X(u s + i, v s + j, k) - F(i,j,k,c)|`; every
/// output is `<= 0`.
pub fn adder2d_forward<T: Scalar>(x: &Tensor<T>, filter: &Tensor<T>, geom: Geometry) -> Result<Tensor<T>> {
    let dims = ConvDims::check("adder2d", x.shape(), filter.shape(), geom)?;
    let ConvDims { n, h, w, cin, cout, oh, ow, .. } = dims;
    let d = geom.kernel;
    let (xd, fd) = (x.data(), filter.data());
    let zeros = vec![T::zero(); cin];
    let mut out = vec![T::zero(); n * oh * ow * cout];
    for b in 0..n {
        for u in 0..oh {
            for v in 0..ow {
                let o = ((b * oh + u) * ow + v) * cout;
                let acc = &mut out[o..o + cout];
                for i in 0..d {
                    let r = dims.source(u, i, h);
                    for j in 0..d {
                        let xs = match (r, dims.source(v, j, w)) {
                            (Some(r), Some(c)) => &xd[((b * h + r) * w + c) * cin..][..cin],
                            _ => &zeros[..],
                        };
                        let fbase = (i * d + j) * cin * cout;
                        for (k, &xv) in xs.iter().enumerate() {
                            let frow = &fd[fbase + k * cout..][..cout];
                            for (a, &f) in acc.iter_mut().zip(frow) {
                                *a = *a - (xv - f).abs();
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(dims.out_shape(), out))
}

/// Surrogate filter gradient: `(X - F)` accumulated over every output
/// position (padding included), contracted with `upstream`.
pub fn adder2d_grad_filter<T: Scalar>(
    x: &Tensor<T>,
    filter: &Tensor<T>,
    upstream: &Tensor<T>,
    geom: Geometry,
) -> Result<Tensor<T>> {
    let dims = ConvDims::check("adder2d_grad_filter", x.shape(), filter.shape(), geom)?;
    check_upstream("adder2d_grad_filter", &dims, upstream)?;
    let ConvDims { n, h, w, cin, cout, oh, ow, .. } = dims;
    let d = geom.kernel;
    let (xd, fd, gd) = (x.data(), filter.data(), upstream.data());
    let zeros = vec![T::zero(); cin];
    let mut gf = vec![T::zero(); fd.len()];
    for b in 0..n {
        for u in 0..oh {
            for v in 0..ow {
                let gs = &gd[((b * oh + u) * ow + v) * cout..][..cout];
                for i in 0..d {
                    let r = dims.source(u, i, h);
                    for j in 0..d {
                        let xs = match (r, dims.source(v, j, w)) {
                            (Some(r), Some(c)) => &xd[((b * h + r) * w + c) * cin..][..cin],
                            _ => &zeros[..],
                        };
                        let fbase = (i * d + j) * cin * cout;
                        for (k, &xv) in xs.iter().enumerate() {
                            let frow = &fd[fbase + k * cout..][..cout];
                            let grow = &mut gf[fbase + k * cout..][..cout];
                            for ((a, &f), &g) in grow.iter_mut().zip(frow).zip(gs) {
                                *a = *a + (xv - f) * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(filter.shape().to_vec(), gf))
}

/// Surrogate input gradient: `clip(F - X, -1, 1)` accumulated over the
/// output positions and channels each input element feeds.
pub fn adder2d_grad_input<T: Scalar>(
    x: &Tensor<T>,
    filter: &Tensor<T>,
    upstream: &Tensor<T>,
    geom: Geometry,
) -> Result<Tensor<T>> {
    let dims = ConvDims::check("adder2d_grad_input", x.shape(), filter.shape(), geom)?;
    check_upstream("adder2d_grad_input", &dims, upstream)?;
    let ConvDims { n, h, w, cin, cout, oh, ow, .. } = dims;
    let d = geom.kernel;
    let (xd, fd, gd) = (x.data(), filter.data(), upstream.data());
    let (lo, hi) = (-T::one(), T::one());
    let mut gx = vec![T::zero(); xd.len()];
    for b in 0..n {
        for u in 0..oh {
            for v in 0..ow {
                let gs = &gd[((b * oh + u) * ow + v) * cout..][..cout];
                for i in 0..d {
                    let Some(r) = dims.source(u, i, h) else { continue };
                    for j in 0..d {
                        let Some(c) = dims.source(v, j, w) else { continue };
                        let base = ((b * h + r) * w + c) * cin;
                        let fbase = (i * d + j) * cin * cout;
                        for k in 0..cin {
                            let xv = xd[base + k];
                            let frow = &fd[fbase + k * cout..][..cout];
                            let mut acc = gx[base + k];
                            for (&f, &g) in frow.iter().zip(gs) {
                                acc = acc + (f - xv).max(lo).min(hi) * g;
                            }
                            gx[base + k] = acc;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), gx))
}

/// Records an adder layer on the tape; its backward pass uses the surrogate
/// gradients above.
pub fn adder2d<'t, T: Scalar>(x: Var<'t, T>, filter: Var<'t, T>, geom: Geometry) -> Result<Var<'t, T>> {
    let (xv, fv) = (x.value(), filter.value());
    let out = adder2d_forward(&xv, &fv, geom)?;
    x.tape().record("adder2d", out, &[x, filter], move |g, need| {
        vec![
            need[0].then(|| adder2d_grad_input(&xv, &fv, g, geom).expect("checked")),
            need[1].then(|| adder2d_grad_filter(&xv, &fv, g, geom).expect("checked")),
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matching_patch_gives_zero() {
        let x = t(&[1, 2, 2, 1], &[0.5, -1.0, 2.0, 3.0]);
        let f = t(&[2, 2, 1, 1], &[0.5, -1.0, 2.0, 3.0]);
        let g = Geometry::new(2, 1, 0);
        let y = adder2d_forward(&x, &f, g).unwrap();
        assert_eq!(y.data(), &[0.0]);
        let up = Tensor::ones([1, 1, 1, 1]);
        assert!(adder2d_grad_filter(&x, &f, &up, g).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(adder2d_grad_input(&x, &f, &up, g).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_filter_distances() {
        let x = t(&[1, 2, 2, 1], &[1., 2., 3., 4.]);
        let f = t(&[1, 1, 1, 1], &[1.0]);
        let y = adder2d_forward(&x, &f, Geometry::new(1, 1, 0)).unwrap();
        assert_eq!(y.data(), &[0.0, -1.0, -2.0, -3.0]);
    }

    #[test]
    fn scalar_surrogates() {
        let g = Geometry::new(1, 1, 0);
        let up = Tensor::ones([1, 1, 1, 1]);
        // filter side keeps the full difference x - f = 2, not sign(2) = 1
        let x = t(&[1, 1, 1, 1], &[3.0]);
        let f = t(&[1, 1, 1, 1], &[1.0]);
        assert_eq!(adder2d_grad_filter(&x, &f, &up, g).unwrap().data(), &[2.0]);
        // input side clips f - x = 5 to 1
        let x = t(&[1, 1, 1, 1], &[0.0]);
        let f = t(&[1, 1, 1, 1], &[5.0]);
        assert_eq!(adder2d_grad_input(&x, &f, &up, g).unwrap().data(), &[1.0]);
    }

    #[test]
    fn padding_contributes_filter_magnitude() {
        // a 1x1 image with padding 1 and a 3x3 filter: eight of the nine taps
        // see zeros
        let x = t(&[1, 1, 1, 1], &[0.0]);
        let f = t(&[3, 3, 1, 1], &[1., -2., 1., 1., 0., 1., 1., 1., 3.]);
        let y = adder2d_forward(&x, &f, Geometry::new(3, 1, 1)).unwrap();
        assert_eq!(y.data(), &[-11.0]);
    }
}
