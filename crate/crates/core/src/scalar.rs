use num_traits::{Float, NumCast, ToPrimitive};

/// Floating-point scalar the numerics are generic over: f32 or f64.
///
/// f32 is the production precision (it matches the on-disk payload format);
/// f64 exists for the finite-difference gradient checks, where interpolation
/// and reduction noise would otherwise drown the comparison.
pub trait Scalar:
    Float + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Relative tolerance for central finite-difference gradient checks.
    const GRAD_TOL: f64;
    /// Base central-difference step, scaled by the magnitude of the value
    /// being perturbed.
    const FD_STEP: f64;
}

impl Scalar for f32 {
    const GRAD_TOL: f64 = 1e-3;
    const FD_STEP: f64 = 3e-3;
}

impl Scalar for f64 {
    const GRAD_TOL: f64 = 1e-4;
    const FD_STEP: f64 = 1e-5;
}

/// f64 → T, for constants and configuration values.
#[inline]
pub fn from_f64<T: Scalar>(v: f64) -> T {
    NumCast::from(v).expect("finite f64 converts to any Scalar")
}

/// T → f64, for reporting and cross-precision comparisons.
#[inline]
pub fn to_f64<T: Scalar>(v: T) -> f64 {
    ToPrimitive::to_f64(&v).expect("Scalar converts to f64")
}
