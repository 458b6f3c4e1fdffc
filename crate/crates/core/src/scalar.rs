//! Scalar abstraction for the lifted-matrix algebra and the solver.
//!
//! Network assembly and measurement handling stay in `f64`; everything that
//! operates on the real `2N' x 2N'` lifted space is generic over [`Scalar`].

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Lossy conversion from `f64`; finite inputs always succeed for f32/f64.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f64() {
        assert_eq!(f64::of(0.25).as_f64(), 0.25);
        assert_eq!(f32::of(0.5).as_f64(), 0.5);
    }
}
