use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type a computation runs in: `f32` for training and evaluation,
/// `f64` for gradient checks.
///
/// `exp_libm` and `tanh_libm` always use the pure-Rust `libm` routines.
/// `Float::exp` switches to the platform library whenever another crate in
/// the build enables `num-traits/std`, which would make results depend on
/// what else is being compiled.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn exp_libm(self) -> Self;
    fn tanh_libm(self) -> Self;

    #[inline]
    fn of_f32(v: f32) -> Self {
        Self::of_f64(v as f64)
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
}

impl Real for f32 {
    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn exp_libm(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn tanh_libm(self) -> Self {
        libm::tanhf(self)
    }
}

impl Real for f64 {
    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp_libm(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn tanh_libm(self) -> Self {
        libm::tanh(self)
    }
}
