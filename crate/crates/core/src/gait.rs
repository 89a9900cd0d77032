//! Nominal gait: phase durations from step frequency and single-support
//! ratio, footstep placement from the reference velocity, and the gated
//! timing adjustment.

use serde::{Deserialize, Serialize};

use crate::ankle::ErrorSplit;
use crate::error::{domain, Result};
use crate::geometry::Vec3;
use crate::lip::{PhaseKind, Side};

/// Validity bounds applied to the adjusted step frequency (Hz).
pub const FREQUENCY_RANGE: (f64, f64) = (0.5, 3.0);
/// Validity bounds applied to the adjusted single-support ratio.
pub const RATIO_RANGE: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitParams {
    /// Frequency of one single+double support pair (Hz).
    pub step_frequency: f64,
    /// Fraction of that pair spent in single support.
    pub ss_ratio: f64,
    /// Lateral distance between left and right footprints (m).
    pub step_width: f64,
    pub v_ref: Vec3,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            step_frequency: 1.25,
            ss_ratio: 0.7,
            step_width: 0.2,
            v_ref: Vec3::new(0.3, 0.0, 0.0),
        }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<()> {
        let (f0, f1) = FREQUENCY_RANGE;
        let (r0, r1) = RATIO_RANGE;
        if !(f0..=f1).contains(&self.step_frequency) {
            return domain(format!("step frequency {} outside [{f0}, {f1}]", self.step_frequency));
        }
        if !(r0..=r1).contains(&self.ss_ratio) {
            return domain(format!("single-support ratio {} outside [{r0}, {r1}]", self.ss_ratio));
        }
        if !(self.step_width >= 0.0) || !self.v_ref.is_finite() {
            return domain("step width must be non-negative and v_ref finite");
        }
        Ok(())
    }

    /// Step displacement from the previous footprint to a footprint on
    /// `landing` side, for cycle frequency `f`.
    pub fn step_vector(&self, landing: Side, f: f64) -> Vec3 {
        let adv = self.v_ref * (1.0 / f);
        Vec3::new(adv.x, adv.y + landing.sign() * self.step_width, 0.0)
    }
}

/// `(T_SS, T_DS)` for cycle frequency `f` and ratio `r`.
pub fn phase_durations(f: f64, r: f64) -> (f64, f64) {
    let cycle = 1.0 / f;
    (r * cycle, (1.0 - r) * cycle)
}

pub fn phase_duration(kind: PhaseKind, f: f64, r: f64) -> f64 {
    let (ss, ds) = phase_durations(f, r);
    match kind {
        PhaseKind::SingleSupport => ss,
        PhaseKind::DoubleSupport => ds,
    }
}

/// Where the walker is in its gait, as seen by the planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitState {
    pub kind: PhaseKind,
    /// Stance foot in single support; the foot being left in double support.
    pub stance_side: Side,
    /// Time spent in the current phase.
    pub elapsed: f64,
    pub left: Vec3,
    pub right: Vec3,
    /// VRP at the current instant of a double-support phase (it moves from
    /// the trailing to the leading foot).
    pub entry_vrp: Vec3,
}

impl GaitState {
    /// Start of single support on `stance` with feet side by side.
    pub fn standing(stance: Side, center: Vec3, width: f64, delta_z: f64) -> Self {
        let left = center + Vec3::new(0.0, width / 2.0, 0.0);
        let right = center - Vec3::new(0.0, width / 2.0, 0.0);
        let stance_foot = if stance == Side::Left { left } else { right };
        Self {
            kind: PhaseKind::SingleSupport,
            stance_side: stance,
            elapsed: 0.0,
            left,
            right,
            entry_vrp: stance_foot.with_z(delta_z),
        }
    }

    pub fn foot(&self, side: Side) -> Vec3 {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    pub fn set_foot(&mut self, side: Side, p: Vec3) {
        match side {
            Side::Left => self.left = p,
            Side::Right => self.right = p,
        }
    }

    /// Foot the next step starts from: the stance foot in single support,
    /// the leading (landed) foot in double support.
    pub fn anchor_side(&self) -> Side {
        match self.kind {
            PhaseKind::SingleSupport => self.stance_side,
            PhaseKind::DoubleSupport => self.stance_side.other(),
        }
    }

    pub fn swing_side(&self) -> Option<Side> {
        match self.kind {
            PhaseKind::SingleSupport => Some(self.stance_side.other()),
            PhaseKind::DoubleSupport => None,
        }
    }
}

/// Policy output adjusting step frequency, single-support ratio and region
/// rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdjustAction {
    pub f_hat: f64,
    pub r_hat: f64,
    pub theta: f64,
}

impl AdjustAction {
    pub fn theta_only(theta: f64) -> Self {
        Self {
            theta,
            ..Self::default()
        }
    }
}

/// Gated timing: `f = f_nom + η f̂`, `r = r_nom + η r̂`, with `η = 0` when
/// the whole error is ankle-correctable. Results are clamped to the validity
/// ranges.
pub fn apply_timing(action: &AdjustAction, split: &ErrorSplit, f_nom: f64, r_nom: f64) -> (f64, f64, bool) {
    if !split.needs_step() {
        return (f_nom, r_nom, false);
    }
    let f = (f_nom + action.f_hat).clamp(FREQUENCY_RANGE.0, FREQUENCY_RANGE.1);
    let r = (r_nom + action.r_hat).clamp(RATIO_RANGE.0, RATIO_RANGE.1);
    (f, r, true)
}
