//! Dense numeric kernel: a small row-major tensor type, the convolutional
//! primitives used by the backbone, and the Transformer sub-blocks.
//!
//! Everything is generic over [`Scalar`] so the same code path runs in
//! 32-bit (deployment) and 64-bit (gradient and oracle checks) precision.

mod gemm;
pub mod ops;
mod rng;
mod tensor;
pub mod transformer;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use gemm::{matmul, matmul_into};
pub use ops::{
    batchnorm_infer, conv2d, gelu, l2_normalize, layer_norm, linear, maxpool2, norm2, relu,
    softmax_axis,
};
pub use rng::Rng;
pub use tensor::Tensor;
pub use transformer::{mlp_block, msa, MlpWeights, MsaWeights};

/// Floating-point element type of a [`Tensor`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    /// Bytes per element when serialized.
    const BYTES: usize;

    /// `c = a * b + beta * c` on strided row-major operands.
    ///
    /// # Safety
    /// Every addressed element of `a`, `b` and `c` must be in bounds and `c`
    /// must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn erf(self) -> Self;

    /// Literal conversion; every `f64` constant used by the kernels fits.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    #[inline]
    fn erf(self) -> f32 {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    #[inline]
    fn erf(self) -> f64 {
        libm::erf(self)
    }
}
