//! Body-to-robot virtual link teleoperation.
//!
//! The operator's body carries a virtual link whose tip is the desired robot effector; a
//! joystick can reshape the link while the body moves it. A resolved-rate servo makes a
//! serial arm follow the tip, and a dwell-based reaching protocol scores the result.
//!
//! Geometry, kinematics and control laws are generic over [`num::Real`] (`f32` or `f64`);
//! the protocol, logging and statistics layers work in `f64`.

pub mod num;
pub mod se3;
pub mod arm;
pub mod link;
pub mod trial;
pub mod log;
pub mod session;
pub mod operator;
pub mod metrics;

pub use num::Real;

pub type Rotation64 = se3::Rotation<f64>;
pub type Rotation32 = se3::Rotation<f32>;
pub type Transform64 = se3::Transform<f64>;
pub type Transform32 = se3::Transform<f32>;
pub type SerialArm64 = arm::SerialArm<f64>;
pub type SerialArm32 = arm::SerialArm<f32>;
pub type JointState64 = arm::JointState<f64>;
pub type ServoConfig64 = arm::ServoConfig<f64>;
pub type ModeConfig64 = link::ModeConfig<f64>;
pub type LinkController64 = link::LinkController<f64>;
pub type LinkController32 = link::LinkController<f32>;
