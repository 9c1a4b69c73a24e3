//! Minimal dtype-generic neural-network layer library.
//!
//! Layers implement explicit `forward`/`backward` passes over `ndarray`
//! storage; there is no autodiff graph. Composites (blocks, branches, the
//! full model) own the activations their backward passes need, so layers
//! that only require their own input take it again as a `backward`
//! argument instead of cloning it.
//!
//! Everything is generic over [`Element`] (`f32` for training, `f64` for
//! finite-difference gradient checks) and fully deterministic: fixed
//! iteration orders, per-purpose seeded RNG streams, single-threaded GEMM.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod init;
pub mod linear;
pub mod ops;
pub mod param;
pub mod pool;
pub mod upsample;

pub use adam::Adam;
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::Linear;
pub use ops::{elu, elu_backward, sigmoid, sigmoid_backward};
pub use param::{join, Param, Params};
pub use pool::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_backward, global_avg_pool, global_avg_pool_backward,
    MaxPool2d,
};
pub use upsample::{upsample_nearest_2x, upsample_nearest_2x_backward};

use ndarray::{ArrayView2, ArrayViewMut2};

/// Scalar type the layer library works over.
pub trait Element: ndarray::NdFloat + rand::distr::uniform::SampleUniform {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Element for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// `c = alpha * a @ b + beta * c`, single-threaded.
///
/// Arbitrary strides are supported; the kernel dispatches on runtime CPU
/// features and is deterministic for fixed shapes on a given machine.
pub fn gemm_into<T: Element>(
    alpha: T,
    a: &ArrayView2<T>,
    b: &ArrayView2<T>,
    beta: T,
    c: &mut ArrayViewMut2<T>,
) {
    let (m, k) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(k, kb, "gemm inner dimensions differ: {k} vs {kb}");
    assert_eq!((m, n), c.dim(), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == T::zero() {
            c.fill(T::zero());
        } else if beta != T::one() {
            c.mapv_inplace(|v| v * beta);
        }
        return;
    }
    let (ars, acs) = (a.strides()[0], a.strides()[1]);
    let (brs, bcs) = (b.strides()[0], b.strides()[1]);
    let (crs, ccs) = (c.strides()[0], c.strides()[1]);
    unsafe {
        // The `gemm` crate computes dst = alpha'*dst + beta'*lhs*rhs, i.e.
        // its (alpha', beta') are our (beta, alpha).
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            ccs,
            crs,
            beta != T::zero(),
            a.as_ptr(),
            acs,
            ars,
            b.as_ptr(),
            bcs,
            brs,
            beta,
            alpha,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}
