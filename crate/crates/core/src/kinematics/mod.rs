//! Serial-arm kinematics: forward kinematics, geometric Jacobian,
//! damped-least-squares IK and velocity-limited joint trajectories.
//!
//! Everything here is a pure function of its inputs.

mod arm;
mod ik;
mod pose;
mod trajectory;

use thiserror::Error;

pub use arm::{ArmDescription, ArmModel, Joint, JointDoc, JointVector, LinkSegment, BUNDLED_ARMS};
pub use ik::{ik_dls, IkParams};
pub use pose::{Pose, TransformDoc};
pub use trajectory::{plan_joint_trajectory, JointTrajectory, DEFAULT_ACCEL_LIMIT, DEFAULT_PLANNER_DT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("arm description: {0}")]
    Schema(String),
    #[error("joint {joint}: axis norm {norm} is not 1")]
    NonUnitAxis { joint: usize, norm: f64 },
    #[error("joint {joint}: limits [{min}, {max}] are not increasing")]
    InvertedLimits { joint: usize, min: f64, max: f64 },
    #[error("unknown arm {0:?}")]
    UnknownArm(String),
    #[error("joint vector has {got} entries, arm has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("target unreachable (best position error {best_pos_error:.4} m, rotation error {best_rot_error:.4} rad)")]
    Unreachable { best_pos_error: f64, best_rot_error: f64 },
    #[error("joint configuration outside limits")]
    OutOfLimits,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[cfg(test)]
pub(crate) use arm::test_arms;
