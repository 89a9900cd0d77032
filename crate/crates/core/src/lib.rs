//! Walking pattern generation around the divergent component of motion:
//! closed-form DCM recursion over a phase plan, a QP that adapts footstep
//! positions and phase timing after a push, ankle feedback, a point-mass
//! simulator, and a small PPO learner that rotates the landing region and
//! nudges the gait timing.

// Validation uses `!(x > 0.0)` style checks on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod lip;
pub mod qp;
pub mod ankle;
pub mod gait;
pub mod step_qp;
pub mod planner;
pub mod rl;
pub mod sim;

pub use error::{Error, Result};
pub use gait::{AdjustAction, GaitState};
pub use lip::DcmState;
pub use planner::{PlanOutput, Planner, PlannerConfig};
pub use sim::{SimConfig, SimStatus, Simulator};
