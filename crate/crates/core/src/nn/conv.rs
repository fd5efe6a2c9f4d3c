//! Multiplicative 2-D convolution over NHWC batches.
//!
//! Filters are laid out `[d, d, c_in, c_out]` so the innermost loop of every
//! kernel runs over contiguous output channels.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Spatial hyper-parameters shared by convolution and adder layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Geometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// `floor((extent + 2 padding - kernel) / stride) + 1`, or `None` when the
    /// window does not fit.
    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        if self.kernel == 0 || self.stride == 0 {
            return None;
        }
        let padded = extent + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Checked shape bundle for one convolution-like application.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: Geometry,
}

impl ConvDims {
    pub fn check(op: &'static str, x: &[usize], filter: &[usize], geom: Geometry) -> Result<Self> {
        let [n, h, w, cin] = *x else {
            return Err(Error::shape(op, format!("input must be [N,H,W,C], got {x:?}")));
        };
        let [d1, d2, fcin, cout] = *filter else {
            return Err(Error::shape(op, format!("filter must be [d,d,c_in,c_out], got {filter:?}")));
        };
        if d1 != d2 || d1 != geom.kernel {
            return Err(Error::shape(
                op,
                format!("filter {filter:?} does not match kernel size {}", geom.kernel),
            ));
        }
        if fcin != cin {
            return Err(Error::shape(
                op,
                format!("input has {cin} channels, filter expects {fcin}"),
            ));
        }
        let (Some(oh), Some(ow)) = (geom.output_extent(h), geom.output_extent(w)) else {
            return Err(Error::shape(
                op,
                format!("empty output for {h}x{w} input with {geom:?}"),
            ));
        };
        Ok(Self {
            n,
            h,
            w,
            cin,
            cout,
            oh,
            ow,
            geom,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.oh, self.ow, self.cout]
    }

    /// Input row/column for output position `o` and filter offset `i`, or
    /// `None` inside the zero padding.
    #[inline]
    pub fn source(&self, o: usize, i: usize, extent: usize) -> Option<usize> {
        let pos = o * self.geom.stride + i;
        if pos < self.geom.padding || pos - self.geom.padding >= extent {
            None
        } else {
            Some(pos - self.geom.padding)
        }
    }
}

/// `Y(u,v,c) = sum_{i,j,k} X(u s + i, v s + j, k) F(i,j,k,c) (+ bias)`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    filter: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: Geometry,
) -> Result<Tensor<T>> {
    let dims = ConvDims::check("conv2d", x.shape(), filter.shape(), geom)?;
    if let Some(b) = bias {
        if b.shape() != [dims.cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {} channels", b.shape(), dims.cout)));
        }
    }
    let ConvDims { n, h, w, cin, cout, oh, ow, .. } = dims;
    let d = geom.kernel;
    let (xd, fd) = (x.data(), filter.data());
    let mut out = vec![T::zero(); n * oh * ow * cout];
    for b in 0..n {
        for u in 0..oh {
            for v in 0..ow {
                let o = ((b * oh + u) * ow + v) * cout;
                let acc = &mut out[o..o + cout];
                for i in 0..d {
                    let Some(r) = dims.source(u, i, h) else { continue };
                    for j in 0..d {
                        let Some(c) = dims.source(v, j, w) else { continue };
                        let xs = &xd[((b * h + r) * w + c) * cin..][..cin];
                        let fbase = (i * d + j) * cin * cout;
                        for (k, &xv) in xs.iter().enumerate() {
                            let frow = &fd[fbase + k * cout..][..cout];
                            for (a, &f) in acc.iter_mut().zip(frow) {
                                *a = *a + xv * f;
                            }
                        }
                    }
                }
                if let Some(bias) = bias {
                    for (a, &bv) in acc.iter_mut().zip(bias.data()) {
                        *a = *a + bv;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(dims.out_shape(), out))
}

/// `dL/dF(i,j,k,c) = sum over positions of X(..) * upstream(..,c)`.
pub fn conv2d_grad_filter<T: Scalar>(
    x: &Tensor<T>,
    filter_shape: &[usize],
    upstream: &Tensor<T>,
    geom: Geometry,
) -> Result<Tensor<T>> {
    let dims = ConvDims::check("conv2d_grad_filter", x.shape(), filter_shape, geom)?;
    check_upstream("conv2d_grad_filter", &dims, upstream)?;
    let ConvDims { n, h, w, cin, cout, oh, ow, .. } = dims;
    let d = geom.kernel;
    let (xd, gd) = (x.data(), upstream.data());
    let mut gf = vec![T::zero(); d * d * cin * cout];
    for b in 0..n {
        for u in 0..oh {
            for v in 0..ow {
                let gs = &gd[((b * oh + u) * ow + v) * cout..][..cout];
                for i in 0..d {
                    let Some(r) = dims.source(u, i, h) else { continue };
                    for j in 0..d {
                        let Some(c) = dims.source(v, j, w) else { continue };
                        let xs = &xd[((b * h + r) * w + c) * cin..][..cin];
                        let fbase = (i * d + j) * cin * cout;
                        for (k, &xv) in xs.iter().enumerate() {
                            let row = &mut gf[fbase + k * cout..][..cout];
                            for (a, &g) in row.iter_mut().zip(gs) {
                                *a = *a + xv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(filter_shape.to_vec(), gf))
}

/// `dL/dX(.., k) = sum over contributing (position, c) of F(i,j,k,c) * upstream(..,c)`.
pub fn conv2d_grad_input<T: Scalar>(
    x_shape: &[usize],
    filter: &Tensor<T>,
    upstream: &Tensor<T>,
    geom: Geometry,
) -> Result<Tensor<T>> {
    let dims = ConvDims::check("conv2d_grad_input", x_shape, filter.shape(), geom)?;
    check_upstream("conv2d_grad_input", &dims, upstream)?;
    let ConvDims { n, h, w, cin, cout, oh, ow, .. } = dims;
    let d = geom.kernel;
    let (fd, gd) = (filter.data(), upstream.data());
    let mut gx = vec![T::zero(); n * h * w * cin];
    for b in 0..n {
        for u in 0..oh {
            for v in 0..ow {
                let gs = &gd[((b * oh + u) * ow + v) * cout..][..cout];
                for i in 0..d {
                    let Some(r) = dims.source(u, i, h) else { continue };
                    for j in 0..d {
                        let Some(c) = dims.source(v, j, w) else { continue };
                        let xs = &mut gx[((b * h + r) * w + c) * cin..][..cin];
                        let fbase = (i * d + j) * cin * cout;
                        for (k, slot) in xs.iter_mut().enumerate() {
                            let frow = &fd[fbase + k * cout..][..cout];
                            let mut acc = *slot;
                            for (&f, &g) in frow.iter().zip(gs) {
                                acc = acc + f * g;
                            }
                            *slot = acc;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(x_shape.to_vec(), gx))
}

pub(crate) fn check_upstream<T: Scalar>(op: &'static str, dims: &ConvDims, upstream: &Tensor<T>) -> Result<()> {
    if upstream.shape() != dims.out_shape().as_slice() {
        return Err(Error::shape(
            op,
            format!("upstream {:?}, expected {:?}", upstream.shape(), dims.out_shape()),
        ));
    }
    Ok(())
}

/// Records a convolution on the tape.
pub fn conv2d<'t, T: Scalar>(
    x: Var<'t, T>,
    filter: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    geom: Geometry,
) -> Result<Var<'t, T>> {
    let (xv, fv) = (x.value(), filter.value());
    let bv = bias.map(|b| b.value());
    let out = conv2d_forward(&xv, &fv, bv.as_deref(), geom)?;
    let mut parents = vec![x, filter];
    parents.extend(bias);
    x.tape().record("conv2d", out, &parents, move |g, need| {
        let mut grads = vec![
            need[0].then(|| conv2d_grad_input(xv.shape(), &fv, g, geom).expect("checked")),
            need[1].then(|| conv2d_grad_filter(&xv, fv.shape(), g, geom).expect("checked")),
        ];
        if need.len() > 2 {
            grads.push(need[2].then(|| channel_sum(g)));
        }
        grads
    })
}

/// Sums a `[.., C]` tensor over every axis but the last.
pub(crate) fn channel_sum<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let c = *g.shape().last().expect("rank >= 1");
    let mut out = vec![T::zero(); c];
    for row in g.data().chunks(c) {
        for (a, &v) in out.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    Tensor::from_parts(vec![c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::<f32>::from_f64([1, 2, 3, 1], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let f = Tensor::<f32>::ones([1, 1, 1, 1]);
        let y = conv2d_forward(&x, &f, None, Geometry::new(1, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn sum_kernel() {
        let x = Tensor::<f32>::from_f64([1, 2, 2, 1], &[1., 2., 3., 4.]).unwrap();
        let f = Tensor::<f32>::ones([2, 2, 1, 1]);
        let y = conv2d_forward(&x, &f, None, Geometry::new(2, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn output_extent_formula() {
        let g = Geometry::new(3, 2, 1);
        assert_eq!(g.output_extent(32), Some(16));
        assert_eq!(Geometry::new(5, 1, 0).output_extent(4), None);
        assert_eq!(Geometry::new(7, 2, 3).output_extent(224), Some(112));
    }

    #[test]
    fn errors_on_channel_mismatch_and_empty_output() {
        let x = Tensor::<f32>::zeros([1, 4, 4, 2]);
        let f = Tensor::<f32>::zeros([3, 3, 3, 1]);
        assert!(conv2d_forward(&x, &f, None, Geometry::new(3, 1, 0)).is_err());
        let f = Tensor::<f32>::zeros([5, 5, 2, 1]);
        assert!(conv2d_forward(&x, &f, None, Geometry::new(5, 1, 0)).is_err());
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::<f64>::ones([1, 1, 1, 1]);
        let f = Tensor::<f64>::from_f64([1, 1, 1, 2], &[2.0, 3.0]).unwrap();
        let b = Tensor::<f64>::from_f64([2], &[0.5, -1.0]).unwrap();
        let y = conv2d_forward(&x, &f, Some(&b), Geometry::new(1, 1, 0)).unwrap();
        assert_eq!(y.data(), &[2.5, 2.0]);
    }
}
