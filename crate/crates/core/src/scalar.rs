//! Scalar abstractions shared by the metric and model code.
//!
//! [`Scalar`] only asks for field arithmetic, so agreement, alpha and F1 can
//! be evaluated exactly over [`num_rational::Rational64`] as well as over the
//! IEEE types. [`Real`] adds the transcendental functions that the phrasing
//! statistics (square root) and the predictor (exp/ln) need.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Converts a count. Every count this crate produces is far below the
    /// range where this could fail for the supported types.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn hundred() -> Self {
        Self::from_count(100)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

pub trait Real: Scalar + Float {
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }
}

impl<T> Real for T where T: Scalar + Float {}

#[cfg(test)]
mod tests {
    use num_rational::Rational64;

    use super::*;

    #[test]
    fn ratio_is_exact_for_rationals() {
        assert_eq!(Rational64::ratio(2, 3), Rational64::new(2, 3));
        assert_eq!(<f64 as Scalar>::ratio(3, 4), 0.75);
        assert_eq!(<f32 as Scalar>::hundred(), 100.0f32);
    }
}
