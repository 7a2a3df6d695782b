//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the library computes in: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every finite `f64` is representable (possibly rounded).
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty slice or all `-inf` inputs.
pub fn log_sum_exp<S: Real>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let sum: S = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights into probabilities. Returns `None` when every weight is zero.
pub fn normalize_log_weights<S: Real>(log_w: &[S]) -> Option<Vec<S>> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return None;
    }
    Some(log_w.iter().map(|&w| (w - lse).exp()).collect())
}

/// Inverse-CDF categorical draw from normalized probabilities given `u` in `[0, 1)`.
///
/// Returns the first index whose cumulative sum exceeds `u`, so ties resolve toward
/// the lower index. Rounding shortfall at the top lands on the last index with
/// positive mass.
pub fn inverse_cdf<S: Real>(probs: &[S], u: S) -> usize {
    let mut acc = S::zero();
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > S::zero() {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
