use std::fmt::{Debug, Display};

use faer::traits::RealField;
use num_traits::{Float, FromPrimitive};

/// Real scalar usable by the algebraic layers (basis, low-rank format,
/// Kronecker operators, lrGMRES).
pub trait Scalar:
    RealField + Float + FromPrimitive + Copy + Send + Sync + Debug + Display + Default + 'static
{
    /// Converts an `f64` literal, panicking only if the target cannot hold it.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("scalar literal out of range")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
