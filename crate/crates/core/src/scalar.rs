//! Real scalar abstraction for the dense operator algebra.
//!
//! Everything numeric in this crate is generic over [`Real`]; `f64` is the
//! working type (see the aliases at the crate root) and `f32` is supported
//! for lower-precision work. Per-type tolerances live here so that checks
//! like unitarity scale with the precision actually available.

use std::fmt;
use std::str::FromStr;

/// Real scalar: `f32` or `f64`.
///
/// `nalgebra::RealField` supplies the field operations and elementary
/// functions (it extends the `num-traits` hierarchy); `FromPrimitive`
/// covers conversion from literal constants.
pub trait Real:
    nalgebra::RealField
    + num_traits::FromPrimitive
    + Copy
    + Default
    + fmt::Display
    + fmt::LowerExp
    + FromStr
{
    /// Absolute entrywise tolerance for unitarity / hermiticity checks.
    const OPERATOR_TOL: Self;
    /// Fidelity slack accepted when comparing compiled modules to their
    /// target unitaries in ideal mode.
    const FIDELITY_TOL: Self;

    fn of(x: f64) -> Self {
        num_traits::FromPrimitive::from_f64(x).expect("scalar conversion")
    }

    fn from_int(n: i64) -> Self {
        num_traits::FromPrimitive::from_i64(n).expect("scalar conversion")
    }

    fn to_f64(self) -> f64;
}

/// Modulus of a complex number over any [`Real`] scalar (the inherent
/// `Complex::norm` is only available for `num_traits::Float` types).
#[inline]
pub fn cmod<T: Real>(z: num_complex::Complex<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

/// Squared modulus.
#[inline]
pub fn cmod2<T: Real>(z: num_complex::Complex<T>) -> T {
    z.re * z.re + z.im * z.im
}

impl Real for f64 {
    const OPERATOR_TOL: Self = 1e-12;
    const FIDELITY_TOL: Self = 1e-10;

    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const OPERATOR_TOL: Self = 1e-5;
    const FIDELITY_TOL: Self = 1e-4;

    fn to_f64(self) -> f64 {
        self as f64
    }
}
