//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the MDP machinery is generic over.
///
/// Implemented for `f32` and `f64`. The two tolerances scale the
/// normalization checks to the precision of the type: inputs (transition
/// rows, initial distributions, policies) are checked against
/// [`Real::INPUT_TOL`], derived quantities (occupancies, identities)
/// against [`Real::DERIVED_TOL`].
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
    const INPUT_TOL: Self;
    const DERIVED_TOL: Self;

    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self;

    /// Lossy conversion from a count.
    fn from_count(n: u64) -> Self {
        Self::lit(n as f64)
    }

    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const INPUT_TOL: f64 = 1e-12;
    const DERIVED_TOL: f64 = 1e-10;

    #[inline]
    fn lit(x: f64) -> f64 {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const INPUT_TOL: f32 = 1e-5;
    const DERIVED_TOL: f32 = 1e-4;

    #[inline]
    fn lit(x: f64) -> f32 {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Mean and variance of `values` under the probability vector `dist`,
/// computed in two passes (centered second moment).
pub(crate) fn mean_var<T: Real>(
    dist: impl Iterator<Item = T> + Clone,
    values: impl Iterator<Item = T> + Clone,
) -> (T, T) {
    let mean: T = dist.clone().zip(values.clone()).map(|(p, v)| p * v).sum();
    let var: T = dist
        .zip(values)
        .map(|(p, v)| {
            let c = v - mean;
            p * c * c
        })
        .sum();
    (mean, var.max(T::zero()))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax_lowest<T: Real>(values: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0usize, T::neg_infinity());
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
