use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the numeric stack is generic over.
///
/// Implemented for `f32` and `f64`. Correctness checks run on `f64`; the
/// `f32` path exists for throughput measurements.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used for constants and data ingestion.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ln(Σ exp(xᵢ))` with max-subtraction; `-inf` when every input is `-inf`.
pub fn log_sum_exp<S: Scalar>(xs: impl IntoIterator<Item = S> + Clone) -> S {
    let max = xs.clone().into_iter().fold(S::neg_infinity(), |a, b| a.max(b));
    if max == S::neg_infinity() {
        return max;
    }
    let sum: S = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Two-argument log-sum-exp used by the CTC recursions.
#[inline]
pub fn log_add<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
