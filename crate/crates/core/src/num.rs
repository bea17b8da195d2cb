//! Scalar abstraction shared by the kinematics and control code.

use std::fmt::{Debug, Display};

use nalgebra as na;
use num_traits as nt;

/// Floating point scalar usable by the geometry, servo and control-law code (`f32` or `f64`).
pub trait Real:
    na::RealField + Copy + nt::FromPrimitive + nt::ToPrimitive + Debug + Display + 'static
{
    /// Converts an `f64` literal into this scalar.
    fn lit(v: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(v).expect("finite literal")
    }

    fn to_f64_lossy(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
