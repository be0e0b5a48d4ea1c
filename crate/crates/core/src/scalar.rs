//! Scalar abstraction for generic numeric kernels.
//!
//! Every differentiable quantity in this crate (dynamics, costs, features,
//! risk residuals) is written against [`Scalar`] so that a single
//! implementation serves plain `f32`/`f64` evaluation and forward-mode
//! automatic differentiation through [`crate::dual::Dual`].

use num_traits::Float;

/// Floating-point-like scalar with cheap promotion from `f64` constants.
pub trait Scalar: Float + std::fmt::Debug + 'static {
    /// Lift an `f64` constant into this scalar type.
    fn from_f64(v: f64) -> Self;

    /// Primal (value) part as `f64`.
    fn value(self) -> f64;

    /// Numerically stable `ln(1 + exp(x))`.
    fn softplus(self) -> Self {
        let zero = Self::zero();
        let pos = if self > zero { self } else { zero };
        pos + (-self.abs()).exp().ln_1p()
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn value(self) -> f64 {
        f64::from(self)
    }
}
