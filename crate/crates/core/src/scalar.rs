//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the library is generic over (`f32` or `f64`).
///
/// All tolerances quoted in the documentation assume `f64`; the `f32`
/// instantiation is useful for quick exploratory runs only.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `x log x` with the convention `0 log 0 = 0`.
#[inline]
pub fn xlogx<T: Real>(x: T) -> T {
    if x > T::zero() {
        x * x.ln()
    } else {
        T::zero()
    }
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp<T: Real>(v: impl Iterator<Item = T> + Clone) -> T {
    let m = v.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    let cut = underflow_cut::<T>();
    let s: T = v
        .map(|x| x - m)
        .filter(|&d| d > cut)
        .map(|d| d.exp())
        .sum();
    m + s.ln()
}

/// Exponents below this give `exp(x) == 0` in `f64`; skipping them saves
/// most of the work on concentrated kernels.
#[inline]
pub fn underflow_cut<T: Real>() -> T {
    T::min_positive_value().ln() * T::lit(1.06)
}

/// Pairwise summation; deterministic for a given slice independent of threading.
pub fn pairwise_sum<T: Real>(v: &[T]) -> T {
    const LEAF: usize = 64;
    if v.len() <= LEAF {
        return v.iter().copied().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}
