//! Scalar abstraction for the geometry core.
//!
//! All rigid-transform and camera math is generic over [`Real`]; the rest of
//! the pipeline works with the `f64` aliases exported from the crate root.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Floating-point scalar: f32 or f64.
pub trait Real: RealField + FromPrimitive + Copy {
    fn from_config(v: f64) -> Self {
        Self::from_f64(v).expect("finite config value")
    }
}

impl Real for f32 {}
impl Real for f64 {}
