//! 2D convolution via per-sample im2col + GEMM.
//!
//! im2col cost is memory-bandwidth bound and negligible next to the GEMM at
//! the channel counts this crate uses, so the buffer is rebuilt in the
//! backward pass instead of cached.

use ndarray::{Array2, Array4, ArrayView3, ArrayViewMut3, Axis};
use rand_chacha::ChaCha8Rng;

use super::init::kaiming_conv;
use super::{gemm_into, join, Element, Param, Params};

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    /// `[out_c, in_c, k, k]`.
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> Conv2d<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let weight = Param::new(kaiming_conv(rng, out_c, in_c, kernel));
        let bias = bias.then(|| Param::new(ndarray::ArrayD::zeros(ndarray::IxDyn(&[out_c]))));
        Conv2d {
            weight,
            bias,
            in_c,
            out_c,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.padding;
        assert!(h + 2 * p >= k && w + 2 * p >= k, "conv input smaller than kernel");
        ((h + 2 * p - k) / self.stride + 1, (w + 2 * p - k) / self.stride + 1)
    }

    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_c, "conv expects {} input channels, got {c}", self.in_c);
        let (oh, ow) = self.out_hw(h, w);
        let l = oh * ow;
        let kk = self.in_c * self.kernel * self.kernel;
        let w2d = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_c, kk))
            .unwrap();
        let mut y = Array4::zeros((n, self.out_c, oh, ow));
        let mut col = Array2::zeros((kk, l));
        for i in 0..n {
            self.im2col(x.index_axis(Axis(0), i), oh, ow, &mut col);
            let mut yi = y
                .index_axis_mut(Axis(0), i)
                .into_shape_with_order((self.out_c, l))
                .unwrap();
            gemm_into(T::one(), &w2d, &col.view(), T::zero(), &mut yi);
        }
        if let Some(b) = &self.bias {
            for ci in 0..self.out_c {
                let bv = b.value[ci];
                y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v + bv);
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    /// `x` must be the same tensor the matching `forward` consumed.
    pub fn backward(&mut self, x: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_c);
        let (oh, ow) = self.out_hw(h, w);
        assert_eq!(gy.dim(), (n, self.out_c, oh, ow), "conv backward shape mismatch");
        let l = oh * ow;
        let kk = self.in_c * self.kernel * self.kernel;

        let w2d = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_c, kk))
            .unwrap();
        let mut gx = Array4::zeros((n, self.in_c, h, w));
        let mut col = Array2::zeros((kk, l));
        let mut dcol = Array2::zeros((kk, l));
        for i in 0..n {
            self.im2col(x.index_axis(Axis(0), i), oh, ow, &mut col);
            let gyi = gy
                .index_axis(Axis(0), i)
                .into_shape_with_order((self.out_c, l))
                .unwrap();
            {
                let mut gw2d = self
                    .weight
                    .grad
                    .view_mut()
                    .into_shape_with_order((self.out_c, kk))
                    .unwrap();
                gemm_into(T::one(), &gyi, &col.t(), T::one(), &mut gw2d);
            }
            gemm_into(T::one(), &w2d.t(), &gyi, T::zero(), &mut dcol.view_mut());
            self.col2im_add(&dcol, gx.index_axis_mut(Axis(0), i), oh, ow);
        }
        if let Some(b) = &mut self.bias {
            for ci in 0..self.out_c {
                let mut acc = T::zero();
                for v in gy.index_axis(Axis(1), ci).iter() {
                    acc = acc + *v;
                }
                b.grad[ci] = b.grad[ci] + acc;
            }
        }
        gx
    }

    /// Unfolds one sample `[C, H, W]` into `col[C*k*k, oh*ow]`. Every output
    /// element is written (padding regions as zero), so `col` needs no
    /// separate clearing.
    fn im2col(&self, x: ArrayView3<T>, oh: usize, ow: usize, col: &mut Array2<T>) {
        let (_, h, w) = x.dim();
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding as isize;
        let xs = x.as_slice().expect("conv input must be standard layout");
        let cs = col.as_slice_mut().unwrap();
        let l = oh * ow;
        for c in 0..self.in_c {
            let plane = &xs[c * h * w..(c + 1) * h * w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    let dst_row = &mut cs[row * l..(row + 1) * l];
                    for oy in 0..oh {
                        let iy = (oy * s + kh) as isize - p;
                        let dst = &mut dst_row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            // ix = ox + kw - p for ox in [0, ow)
                            let shift = kw as isize - p;
                            let ox_lo = (-shift).max(0) as usize;
                            let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                            dst[..ox_lo.min(ow)].fill(T::zero());
                            if ox_hi > ox_lo {
                                let ix_lo = (ox_lo as isize + shift) as usize;
                                dst[ox_lo..ox_hi]
                                    .copy_from_slice(&src_row[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                            }
                            dst[ox_hi.max(ox_lo)..].fill(T::zero());
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s + kw) as isize - p;
                                *d = if ix >= 0 && ix < w as isize {
                                    src_row[ix as usize]
                                } else {
                                    T::zero()
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Folds `dcol[C*k*k, oh*ow]` back into the input gradient, accumulating
    /// overlapping windows.
    fn col2im_add(&self, dcol: &Array2<T>, mut gx: ArrayViewMut3<T>, oh: usize, ow: usize) {
        let (_, h, w) = gx.dim();
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding as isize;
        let gs = gx.as_slice_mut().expect("conv gradient must be standard layout");
        let ds = dcol.as_slice().unwrap();
        let l = oh * ow;
        for c in 0..self.in_c {
            let plane = &mut gs[c * h * w..(c + 1) * h * w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    let src_row = &ds[row * l..(row + 1) * l];
                    for oy in 0..oh {
                        let iy = (oy * s + kh) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &src_row[oy * ow..(oy + 1) * ow];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * s + kw) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + g;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Params<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
