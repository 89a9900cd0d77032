use std::f64::consts::FRAC_PI_2;

use crate::error::Result;
use crate::gait::AdjustAction;
use crate::geometry::{rects_overlap, Vec2};
use crate::planner::{Fallback, PlanOutput};
use crate::rl::observation::Observation;
use crate::sim::{swing_path_collides, AdjustPolicy, SimState, Simulator};

/// Extra distance kept between a landing sole and the sole it steps past, so
/// the next liftoff does not start in contact.
const LANDING_MARGIN: f64 = 0.03;

/// Grid search over the region rotation at every decision: the planner is
/// run for each candidate `θ` and the lowest QP cost wins among solutions
/// that need no fallback and whose swing neither scrapes nor lands on the
/// other sole. Timing adjustments stay zero. Candidates are visited in order
/// of increasing `|θ|`, so ties keep the smaller rotation and an undisturbed
/// state keeps `θ = 0`.
#[derive(Debug, Clone)]
pub struct OracleThetaPolicy {
    grid: Vec<f64>,
}

impl OracleThetaPolicy {
    /// `steps` candidates on each side of zero, evenly spaced up to `π/2`.
    pub fn new(steps: usize) -> Self {
        let mut grid = vec![0.0];
        for k in 1..=steps {
            let t = FRAC_PI_2 * k as f64 / steps as f64;
            grid.push(t);
            grid.push(-t);
        }
        Self { grid }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn swing_is_clear(out: &PlanOutput, state: &SimState, sim: &Simulator) -> bool {
        let cfg = sim.planner().config();
        let (from, landing, s_old) = match out.swing_target {
            Some(t) => (out.plan.foot_positions[0], t, state.swing_progress),
            None => (out.plan.foot_positions[1], out.plan.foot_positions[2], 0.0),
        };
        let h = cfg.foot.half_extents();
        let gap = sim.config().collision_clearance + LANDING_MARGIN;
        !rects_overlap(from.xy(), h + Vec2::new(gap, gap), landing.xy(), h)
            && !swing_path_collides(from, state.swing_foot, landing, s_old, &cfg.foot, sim.config())
    }
}

impl Default for OracleThetaPolicy {
    fn default() -> Self {
        Self::new(18)
    }
}

impl AdjustPolicy for OracleThetaPolicy {
    fn act(&mut self, obs: &Observation, sim: &Simulator) -> Result<AdjustAction> {
        let planner = sim.planner();
        let state = sim.state();
        let mode = sim.config().timing_mode;
        let mut best: Option<(f64, f64)> = None;
        for &theta in &self.grid {
            let out = planner.plan_step(&state.dcm_state, &state.gait, &AdjustAction::theta_only(theta), mode)?;
            if out.fallback != Fallback::None || !Self::swing_is_clear(&out, state, sim) {
                continue;
            }
            if theta == 0.0 && obs.dcm_error_step.norm() == 0.0 {
                return Ok(AdjustAction::default());
            }
            let better = match best {
                None => true,
                Some((_, obj)) => out.objective < obj - 1e-9 * (1.0 + obj.abs()),
            };
            if better {
                best = Some((theta, out.objective));
            }
        }
        Ok(AdjustAction::theta_only(best.map(|b| b.0).unwrap_or(0.0)))
    }
}
