//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the solvers are generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal or configuration value.
    fn of(x: f64) -> Self;

    /// Lossless widening used by the file formats.
    fn as_f64(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Trapezoidal integral of `values` sampled with spacing `dx`.
pub fn trapezoid<T: Real>(values: &[T], dx: T) -> T {
    match values.len() {
        0 | 1 => T::zero(),
        n => {
            let interior: T = values[1..n - 1].iter().copied().sum();
            dx * (interior + (values[0] + values[n - 1]) * T::of(0.5))
        }
    }
}

/// Running trapezoidal integral, `out[0] = 0`.
pub fn cumulative_trapezoid<T: Real>(values: &[T], dx: T) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = T::zero();
    let half = T::of(0.5);
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            acc = acc + half * dx * (values[i - 1] + v);
        }
        out.push(acc);
    }
    out
}
