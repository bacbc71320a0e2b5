//! Scalar abstraction shared by the evaluation modules.
//!
//! Metric, calibration, decision-curve and fairness code is written once
//! against [`Real`] and instantiated for `f32` and `f64`. Training code works
//! in `f64` only.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// floating point: f32 or f64
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FromStr
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or count.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    /// Convergence tolerance for iterative fits at this precision.
    #[inline]
    fn fit_tolerance() -> Self {
        let tol = Self::lit(1e-10);
        let floor = Self::epsilon() * Self::lit(1e3);
        if floor > tol {
            floor
        } else {
            tol
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic function, evaluated without overflow for large |z|.
#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Log-odds of a probability clamped to `[eps, 1 - eps]`.
#[inline]
pub fn logit<T: Real>(p: T, eps: T) -> T {
    let p = clamp_probability(p, eps);
    (p / (T::one() - p)).ln()
}

#[inline]
pub fn clamp_probability<T: Real>(p: T, eps: T) -> T {
    p.max(eps).min(T::one() - eps)
}
