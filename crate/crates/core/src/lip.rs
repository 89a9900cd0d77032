//! Linear inverted pendulum template model: DCM/VRP dynamics, the
//! interpolation coefficients of a transition phase, and the backward and
//! forward waypoint recursions.
//!
//! Within a phase of duration `T` the VRP moves linearly from `v0` to `vT`
//! and the DCM obeys `ξ̇ = (ξ − v)/b`. Writing `e = ξ − v − b·v̇`, the error
//! obeys `ė = e/b`, which gives every closed form used below.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Average CoM height above the ground (m).
    pub delta_z: f64,
    pub gravity: f64,
    pub mass: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            delta_z: 0.80,
            gravity: 9.81,
            mass: 40.0,
        }
    }
}

impl ModelParams {
    pub fn new(delta_z: f64, gravity: f64, mass: f64) -> Result<Self> {
        let p = Self {
            delta_z,
            gravity,
            mass,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_z > 0.0 && self.gravity > 0.0 && self.mass > 0.0) {
            return domain(format!(
                "model parameters must be positive (delta_z={}, g={}, m={})",
                self.delta_z, self.gravity, self.mass
            ));
        }
        Ok(())
    }

    /// Time constant `b = sqrt(Δz / g)`.
    pub fn b(&self) -> f64 {
        (self.delta_z / self.gravity).sqrt()
    }
}

/// Dynamic state of the point mass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DcmState {
    pub com: Vec3,
    pub com_vel: Vec3,
    pub dcm: Vec3,
    pub vrp: Vec3,
}

impl DcmState {
    pub fn from_com(com: Vec3, com_vel: Vec3, vrp: Vec3, params: &ModelParams) -> Self {
        Self {
            com,
            com_vel,
            dcm: compute_dcm(com, com_vel, params),
            vrp,
        }
    }
}

/// `ξ = x + b·ẋ`
pub fn compute_dcm(com: Vec3, com_vel: Vec3, params: &ModelParams) -> Vec3 {
    com + com_vel * params.b()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseKind {
    SingleSupport,
    DoubleSupport,
}

impl PhaseKind {
    pub fn other(self) -> Self {
        match self {
            PhaseKind::SingleSupport => PhaseKind::DoubleSupport,
            PhaseKind::DoubleSupport => PhaseKind::SingleSupport,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            PhaseKind::SingleSupport => "SS",
            PhaseKind::DoubleSupport => "DS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// +1 for left, −1 for right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPhase {
    pub kind: PhaseKind,
    pub duration: f64,
    /// Stance foot in single support; the foot being left in double support.
    pub stance_side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    /// Kind of the phase the preview starts in ("cSS"/"cDS"); selects the
    /// waypoint-to-foot index mapping.
    pub parity: PhaseKind,
    pub phases: Vec<TransitionPhase>,
    pub foot_positions: Vec<Vec3>,
    pub foot_sides: Vec<Side>,
    /// VRP at the start of the preview when it differs from the mapped foot
    /// (mid double support the VRP sits between the two feet).
    pub entry_vrp: Option<Vec3>,
    pub vrp_waypoints: Vec<Vec3>,
    pub dcm_waypoints: Vec<Vec3>,
}

impl PhasePlan {
    /// Builds a plan with VRP waypoints mapped from the feet and zeroed DCM
    /// waypoints.
    pub fn new(
        phases: Vec<TransitionPhase>,
        foot_positions: Vec<Vec3>,
        foot_sides: Vec<Side>,
        entry_vrp: Option<Vec3>,
        delta_z: f64,
    ) -> Result<Self> {
        let parity = match phases.first() {
            Some(p) => p.kind,
            None => return domain("plan has no phases"),
        };
        let mut plan = Self {
            parity,
            phases,
            foot_positions,
            foot_sides,
            entry_vrp,
            vrp_waypoints: Vec::new(),
            dcm_waypoints: Vec::new(),
        };
        plan.validate_structure()?;
        plan.map_vrp_waypoints(delta_z);
        plan.dcm_waypoints = vec![Vec3::ZERO; plan.n_waypoints()];
        Ok(plan)
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn n_waypoints(&self) -> usize {
        self.phases.len() + 1
    }

    /// Foot index (0-based) whose position defines VRP waypoint `i`
    /// (0-based): `⌈i/2⌉` in 1-based terms for a single-support start,
    /// `⌊i/2 + 1⌋` for a double-support start.
    pub fn foot_index(&self, waypoint: usize) -> usize {
        match self.parity {
            PhaseKind::SingleSupport => waypoint / 2,
            PhaseKind::DoubleSupport => waypoint.div_ceil(2),
        }
    }

    pub fn validate_structure(&self) -> Result<()> {
        if self.phases.is_empty() {
            return domain("plan has no phases");
        }
        if self.parity != self.phases[0].kind {
            return domain("plan parity does not match its first phase");
        }
        for w in self.phases.windows(2) {
            if w[0].kind == w[1].kind {
                return domain("phases must alternate between single and double support");
            }
        }
        for p in &self.phases {
            if !(p.duration > 0.0) || !p.duration.is_finite() {
                return domain(format!("phase duration must be positive, got {}", p.duration));
            }
        }
        if self.foot_positions.len() != self.foot_sides.len() {
            return domain("foot position and side lists differ in length");
        }
        let needed = self.foot_index(self.n_phases()) + 1;
        if self.foot_positions.len() != needed {
            return domain(format!(
                "{} phases starting in {} need {} foot positions, got {}",
                self.n_phases(),
                self.parity.short(),
                needed,
                self.foot_positions.len()
            ));
        }
        Ok(())
    }

    /// `v_i = p_j + (0, 0, Δz)` for every waypoint, honouring `entry_vrp`.
    pub fn map_vrp_waypoints(&mut self, delta_z: f64) {
        let lift = Vec3::new(0.0, 0.0, delta_z);
        self.vrp_waypoints = (0..self.n_waypoints())
            .map(|i| self.foot_positions[self.foot_index(i)] + lift)
            .collect();
        if let Some(v) = self.entry_vrp {
            self.vrp_waypoints[0] = v;
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub at_time: f64,
    pub horizon: f64,
}

impl PhaseCoefficients {
    pub fn combine(&self, v0: Vec3, v_end: Vec3, xi: Vec3) -> Vec3 {
        v0 * self.alpha + v_end * self.beta + xi * self.gamma
    }

    pub fn sum(&self) -> f64 {
        self.alpha + self.beta + self.gamma
    }
}

fn check_horizon(horizon: f64, b: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return domain(format!("phase horizon must be positive, got {horizon}"));
    }
    if !(b > 0.0 && b.is_finite()) {
        return domain(format!("time constant b must be positive, got {b}"));
    }
    Ok(())
}

/// Coefficients mapping `(v_{i−1}, v_i, ξ_{i−1})` to the DCM at the end of a
/// phase of duration `horizon`, started from `ξ_{i−1}`.
pub fn end_of_phase_coefficients(horizon: f64, b: f64) -> Result<PhaseCoefficients> {
    check_horizon(horizon, b)?;
    let u = horizon / b;
    let gamma = u.exp();
    let beta = 1.0 - u.exp_m1() / u;
    let alpha = 1.0 - beta - gamma;
    Ok(PhaseCoefficients {
        alpha,
        beta,
        gamma,
        at_time: horizon,
        horizon,
    })
}

/// Terminal-anchored coefficients: `ξ(t) = α v0 + β vT + γ ξ(T)`.
pub fn in_phase_coefficients(t: f64, horizon: f64, b: f64) -> Result<PhaseCoefficients> {
    check_horizon(horizon, b)?;
    if !(0.0..=horizon).contains(&t) {
        return domain(format!("time {t} outside phase [0, {horizon}]"));
    }
    let u = (horizon - t) / b;
    let gamma = (-u).exp();
    let one_minus_gamma = -(-u).exp_m1();
    // α = b (u − 1 + e^{−u}) / T
    let alpha = b * (u - one_minus_gamma) / horizon;
    let beta = one_minus_gamma - alpha;
    Ok(PhaseCoefficients {
        alpha,
        beta,
        gamma,
        at_time: t,
        horizon,
    })
}

/// Start-anchored coefficients: `ξ(t) = α v0 + β vT + γ ξ(0)`.
///
/// At `t = horizon` these equal [`end_of_phase_coefficients`].
pub fn forward_in_phase_coefficients(t: f64, horizon: f64, b: f64) -> Result<PhaseCoefficients> {
    check_horizon(horizon, b)?;
    if !(0.0..=horizon).contains(&t) {
        return domain(format!("time {t} outside phase [0, {horizon}]"));
    }
    let s = t / b;
    let gamma = s.exp();
    let beta = (t - b * s.exp_m1()) / horizon;
    let alpha = 1.0 - beta - gamma;
    Ok(PhaseCoefficients {
        alpha,
        beta,
        gamma,
        at_time: t,
        horizon,
    })
}

/// Fills the DCM waypoints from the terminal DCM backward in time.
pub fn backward_recursion(plan: &PhasePlan, terminal_dcm: Vec3, b: f64) -> Result<PhasePlan> {
    if plan.phases.is_empty() {
        return domain("cannot run a recursion over an empty plan");
    }
    if plan.vrp_waypoints.len() != plan.n_waypoints() {
        return domain("VRP waypoints are not populated");
    }
    if !terminal_dcm.is_finite() {
        return domain("terminal DCM is not finite");
    }
    let mut out = plan.clone();
    let n = plan.n_waypoints();
    out.dcm_waypoints = vec![Vec3::ZERO; n];
    out.dcm_waypoints[n - 1] = terminal_dcm;
    for k in (0..plan.n_phases()).rev() {
        let c = in_phase_coefficients(0.0, plan.phases[k].duration, b)?;
        out.dcm_waypoints[k] = c.combine(
            plan.vrp_waypoints[k],
            plan.vrp_waypoints[k + 1],
            out.dcm_waypoints[k + 1],
        );
    }
    Ok(out)
}

/// Maps VRP waypoints from the feet, then propagates the DCM forward from
/// `initial_dcm`.
pub fn forward_recursion(
    plan: &PhasePlan,
    initial_dcm: Vec3,
    params: &ModelParams,
) -> Result<PhasePlan> {
    plan.validate_structure()?;
    let b = params.b();
    let mut out = plan.clone();
    out.map_vrp_waypoints(params.delta_z);
    let n = out.n_waypoints();
    out.dcm_waypoints = vec![Vec3::ZERO; n];
    out.dcm_waypoints[0] = initial_dcm;
    for k in 0..out.n_phases() {
        let c = end_of_phase_coefficients(out.phases[k].duration, b)?;
        out.dcm_waypoints[k + 1] = c.combine(
            out.vrp_waypoints[k],
            out.vrp_waypoints[k + 1],
            out.dcm_waypoints[k],
        );
    }
    Ok(out)
}

/// Reference VRP and DCM `t_s` into the remaining interval `t_rem` of the
/// current phase, starting from VRP `v1` and DCM `xi1` and ending at VRP `v2`.
pub fn evaluate_reference(
    v1: Vec3,
    v2: Vec3,
    xi1: Vec3,
    t_rem: f64,
    t_s: f64,
    b: f64,
) -> Result<(Vec3, Vec3)> {
    if t_s < 0.0 || t_s > t_rem {
        return domain(format!("sample time {t_s} outside [0, {t_rem}]"));
    }
    if t_rem == 0.0 {
        return Ok((v1, xi1));
    }
    let s = t_s / t_rem;
    let vrp = v1 * (1.0 - s) + v2 * s;
    let c = forward_in_phase_coefficients(t_s, t_rem, b)?;
    Ok((vrp, c.combine(v1, v2, xi1)))
}
