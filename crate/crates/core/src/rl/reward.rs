use serde::{Deserialize, Serialize};

use crate::gait::AdjustAction;
use crate::geometry::Vec3;

/// One `ω·e^{−λ d}` reward row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpTerm {
    pub weight: f64,
    pub rate: f64,
}

impl ExpTerm {
    pub fn eval(&self, d: f64) -> f64 {
        self.weight * (-self.rate * d).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub freq: ExpTerm,
    pub ss: ExpTerm,
    pub region: ExpTerm,
    pub dcm: ExpTerm,
    pub fall_penalty: f64,
    pub collision_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            freq: ExpTerm { weight: 2.0, rate: 1.0 },
            ss: ExpTerm { weight: 1.0, rate: 5.0 },
            region: ExpTerm { weight: 0.1, rate: 2.0 },
            dcm: ExpTerm { weight: 10.0, rate: 1.0 },
            fall_penalty: 200.0,
            collision_penalty: 200.0,
        }
    }
}

impl RewardParams {
    /// Largest per-step total.
    pub fn max_total(&self) -> f64 {
        self.freq.weight + self.ss.weight + self.region.weight + self.dcm.weight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_freq: f64,
    pub r_ss: f64,
    pub r_reg: f64,
    pub r_dcm: f64,
    pub r_fall: f64,
    pub r_colli: f64,
    pub total: f64,
}

pub fn compute_reward(
    action: &AdjustAction,
    xi_n: Vec3,
    xi_n_d: Vec3,
    fallen: bool,
    collided: bool,
    params: &RewardParams,
) -> RewardBreakdown {
    let r_freq = params.freq.eval(action.f_hat.abs());
    let r_ss = params.ss.eval(action.r_hat.abs());
    let r_reg = params.region.eval(action.theta.abs());
    let r_dcm = params.dcm.eval((xi_n - xi_n_d).norm());
    let r_fall = if fallen { -params.fall_penalty } else { 0.0 };
    let r_colli = if collided { -params.collision_penalty } else { 0.0 };
    RewardBreakdown {
        r_freq,
        r_ss,
        r_reg,
        r_dcm,
        r_fall,
        r_colli,
        total: r_freq + r_ss + r_reg + r_dcm + r_fall + r_colli,
    }
}
