//! Scalar abstraction for the numerical core.
//!
//! Everything numeric in this crate is generic over [`Float`], implemented for
//! `f32` and `f64`. Concrete `f64` aliases for the main types live at the
//! crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar used throughout the crate.
///
/// Bundles the `num-traits` surface the numerical code relies on, plus the
/// special functions needed by the Dirichlet-family densities. The special
/// functions are evaluated in `f64` internally; for `f32` the result is
/// rounded once at the end.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Shorthand for converting an `f64` constant into `Self`.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Float")
    }

    /// Lossless-enough round trip to `f64` (exact for `f32`/`f64`).
    fn to64(self) -> f64 {
        self.to_f64().expect("Float converts to f64")
    }

    fn from_usize_(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to Float")
    }

    /// Natural log of the gamma function.
    fn ln_gamma_(self) -> Self {
        Self::cast(ln_gamma(self.to64()))
    }

    /// Digamma function (derivative of `ln_gamma_`).
    fn digamma_(self) -> Self {
        Self::cast(digamma(self.to64()))
    }
}

impl Float for f32 {}
impl Float for f64 {}

/// Lanczos approximation (g = 7, 9 terms), accurate to ~1e-13 relative for
/// positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula keeps the small-argument range accurate.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma via upward recurrence into the asymptotic region.
pub fn digamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln() - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        // Γ(n) = (n-1)!
        let mut fact = 1.0f64;
        for n in 1..15u32 {
            if n > 1 {
                fact *= f64::from(n - 1);
            }
            assert!((ln_gamma(f64::from(n)) - fact.ln()).abs() < 1e-10);
        }
        // Γ(1/2) = √π
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
    }

    #[test]
    fn digamma_matches_finite_difference() {
        for &x in &[0.3, 1.0, 2.5, 7.0, 40.0] {
            let h = 1e-6;
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!(
                (digamma(x) - fd).abs() < 1e-6,
                "digamma({x}) = {} vs fd {fd}",
                digamma(x)
            );
        }
    }

    #[test]
    fn digamma_recurrence() {
        // ψ(x+1) = ψ(x) + 1/x
        for &x in &[0.7, 1.3, 4.2] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-10);
        }
    }

    #[test]
    fn casts_work_for_f32() {
        let x: f32 = Float::cast(0.25);
        assert_eq!(x, 0.25f32);
        assert!((2.0f32.ln_gamma_() - 0.0).abs() < 1e-6);
    }
}
