#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bus;
pub mod kinematics;
pub mod orchestrator;
pub mod rgbd;
pub mod scene;
pub mod twinloop;
