use serde::{Deserialize, Serialize};

use crate::ankle::ErrorSplit;
use crate::gait::{phase_duration, GaitState};
use crate::geometry::Vec3;
use crate::lip::{PhaseKind, Side};
use crate::planner::first_swing_side;

pub const OBS_DIM: usize = 18;

/// Field order of the flattened observation; hashed into checkpoints.
pub const OBS_SCHEMA: &str = "dcm_error_ankle[3],dcm_error_step[3],t_rem_norm,phase_flag,swing_foot_flag,\
swing_foot_rel[3],com_vel[3],v_ref[3]";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub dcm_error_ankle: Vec3,
    pub dcm_error_step: Vec3,
    /// Nominal remaining time over nominal phase duration, in `[0, 1]`.
    pub t_rem_norm: f64,
    /// +1 in single support, −1 in double support.
    pub phase_flag: f64,
    /// +1 when the (next) swing foot is the left one, −1 for the right.
    pub swing_foot_flag: f64,
    pub swing_foot_rel: Vec3,
    pub com_vel: Vec3,
    pub v_ref: Vec3,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let v = |a: Vec3| [a.x, a.y, a.z];
        let mut out = [0.0; OBS_DIM];
        out[0..3].copy_from_slice(&v(self.dcm_error_ankle));
        out[3..6].copy_from_slice(&v(self.dcm_error_step));
        out[6] = self.t_rem_norm;
        out[7] = self.phase_flag;
        out[8] = self.swing_foot_flag;
        out[9..12].copy_from_slice(&v(self.swing_foot_rel));
        out[12..15].copy_from_slice(&v(self.com_vel));
        out[15..18].copy_from_slice(&v(self.v_ref));
        out
    }
}

/// Builds the policy input. `swing_foot` is the current position of the foot
/// that will step next (airborne in single support, trailing in double
/// support).
pub fn build_observation(
    gait: &GaitState,
    swing_foot: Vec3,
    com_vel: Vec3,
    split: &ErrorSplit,
    f_nom: f64,
    r_nom: f64,
    v_ref: Vec3,
) -> Observation {
    let t_phase = phase_duration(gait.kind, f_nom, r_nom);
    let t_rem_norm = ((t_phase - gait.elapsed) / t_phase).clamp(0.0, 1.0);
    let swing = first_swing_side(gait);
    let stance = gait.foot(swing.other());
    Observation {
        dcm_error_ankle: split.ankle,
        dcm_error_step: split.step,
        t_rem_norm,
        phase_flag: match gait.kind {
            PhaseKind::SingleSupport => 1.0,
            PhaseKind::DoubleSupport => -1.0,
        },
        swing_foot_flag: match swing {
            Side::Left => 1.0,
            Side::Right => -1.0,
        },
        swing_foot_rel: swing_foot - stance,
        com_vel,
        v_ref,
    }
}
