use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Numeric type that metric and similarity code is generic over.
///
/// Implemented for `f32`, `f64` and [`crate::Rational`]. Floating types are
/// what reports store; the rational type lets identities such as the
/// accuracy/recall decomposition be checked with `==`.
pub trait Scalar: Num + Copy + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }

    /// `100 * num / den`. `den` must be non-zero.
    fn percent(num: u64, den: u64) -> Self {
        Self::from_count(100) * Self::from_count(num) / Self::from_count(den)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
impl Scalar for crate::Rational {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    #[test]
    fn percent_is_exact_for_rationals() {
        let p = Rational::percent(7, 8);
        assert_eq!(p, Rational::new(175, 2));
        assert_eq!(f64::percent(7, 8), 87.5);
        assert_eq!(f32::percent(1, 2), 50.0);
    }
}
