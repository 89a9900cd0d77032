//! Per-tick planning pipeline: nominal preview, backward recursion for the
//! desired DCM start, ankle/step split, gated timing and region rotation,
//! QP solve with fallbacks, and the references for the current tick.

use serde::{Deserialize, Serialize};

use crate::ankle::{correctable_set, split_error, ErrorSplit, FootGeometry};
use crate::error::{domain, Result};
use crate::gait::{apply_timing, phase_duration, AdjustAction, GaitParams, GaitState};
use crate::geometry::{ConvexPolygon, Vec2, Vec3};
use crate::lip::{backward_recursion, DcmState, ModelParams, PhaseKind, PhasePlan, Side, TransitionPhase};
use crate::qp::{solve_qp_with, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::step_qp::{assemble_ds_qp, assemble_ss_qp, NominalTargets, QpWeights, StepRegion, TimingBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingLimits {
    /// `T_min` as a fraction of the nominal phase duration.
    pub min_fraction: f64,
    /// `T_max` as a fraction of the nominal phase duration.
    pub max_fraction: f64,
    /// Double-support trust region as a fraction of the linearization point.
    pub trust_fraction: f64,
}

impl Default for TimingLimits {
    fn default() -> Self {
        Self {
            min_fraction: 0.2,
            max_fraction: 2.0,
            trust_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionParams {
    /// Forward/backward half extent around the nominal step length (m).
    pub half_length: f64,
    /// Lateral distance band from the stance foot, towards the swing side
    /// (m). The inner edge keeps the soles apart.
    pub lateral_min: f64,
    pub lateral_max: f64,
}

impl Default for RegionParams {
    fn default() -> Self {
        Self {
            half_length: 0.2,
            lateral_min: 0.12,
            lateral_max: 0.42,
        }
    }
}

impl RegionParams {
    /// Region for a step onto `side`, relative to the stance foot.
    pub fn polygon(&self, step_length: f64, side: Side) -> ConvexPolygon {
        let (x0, x1) = (step_length - self.half_length, step_length + self.half_length);
        match side {
            Side::Left => ConvexPolygon::rect(x0, x1, self.lateral_min, self.lateral_max),
            Side::Right => ConvexPolygon::rect(x0, x1, -self.lateral_max, -self.lateral_min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// The QP optimizes the remaining time of the current phase around the
    /// (gated) frequency and ratio.
    Optimized,
    /// The remaining time is pinned to the (gated) frequency and ratio.
    Scheduled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub model: ModelParams,
    pub gait: GaitParams,
    pub foot: FootGeometry,
    pub weights: QpWeights,
    pub limits: TimingLimits,
    pub region: RegionParams,
    /// Foot positions in the preview, including those already on the ground.
    pub preview_feet: usize,
    /// Transition phases used for the ankle-correctable set.
    pub ankle_horizon: usize,
    pub k_xi: [f64; 3],
    /// Control tick (s).
    pub dt: f64,
    pub max_qp_iterations: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            gait: GaitParams::default(),
            foot: FootGeometry::default(),
            weights: QpWeights::default(),
            limits: TimingLimits::default(),
            region: RegionParams::default(),
            preview_feet: 4,
            ankle_horizon: 2,
            k_xi: [4.0, 4.0, 4.0],
            dt: 1e-3,
            max_qp_iterations: 200,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.gait.validate()?;
        self.foot.validate()?;
        self.weights.validate()?;
        let l = &self.limits;
        if !(l.min_fraction > 0.0 && l.min_fraction <= 1.0 && l.max_fraction >= 1.0 && l.trust_fraction > 0.0) {
            return domain(format!("invalid timing limits {l:?}"));
        }
        let rg = &self.region;
        if !(rg.half_length > 0.0 && rg.lateral_min >= 0.0 && rg.lateral_max > rg.lateral_min) {
            return domain(format!("invalid step region {rg:?}"));
        }
        if self.preview_feet < 3 {
            return domain("preview needs at least 3 foot positions");
        }
        if self.ankle_horizon == 0 {
            return domain("ankle horizon must be at least one phase");
        }
        if self.k_xi.iter().any(|k| !(*k > 0.0)) {
            return domain("DCM gains must be strictly positive");
        }
        if !(self.dt > 0.0) || self.max_qp_iterations == 0 {
            return domain("dt and the QP iteration cap must be positive");
        }
        Ok(())
    }

    pub fn k_xi_vec(&self) -> Vec3 {
        Vec3::new(self.k_xi[0], self.k_xi[1], self.k_xi[2])
    }
}

/// Nominal preview from the current gait state.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalPlan {
    /// Plan with DCM waypoints filled by the backward recursion.
    pub plan: PhasePlan,
    pub targets: NominalTargets,
    pub regions: Vec<StepRegion>,
    /// Nominal remaining time of the current phase (floored at one tick).
    pub remaining: f64,
    pub f: f64,
    pub r: f64,
}

impl NominalPlan {
    pub fn dcm_start(&self) -> Vec3 {
        self.plan.dcm_waypoints[0]
    }

    pub fn n_fixed(&self) -> usize {
        match self.plan.parity {
            PhaseKind::SingleSupport => 1,
            PhaseKind::DoubleSupport => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    None,
    /// The rotated region was infeasible; solved with θ = 0.
    DroppedRotation,
    /// Solved with timing bounds relaxed to `[T_min/2, 2 T_max]`.
    RelaxedTiming,
    /// No QP solved; the nominal plan was used.
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutput {
    pub plan: PhasePlan,
    pub vrp_ref: Vec3,
    pub dcm_ref: Vec3,
    /// Optimized remaining time of the current phase.
    pub remaining: f64,
    /// Nominal remaining time of the current phase.
    pub nominal_remaining: f64,
    /// Landing target of the swing foot in single support.
    pub swing_target: Option<Vec3>,
    /// VRP one tick ahead in double support.
    pub next_entry_vrp: Vec3,
    pub split: ErrorSplit,
    pub eta: bool,
    pub f: f64,
    pub r: f64,
    pub theta_applied: f64,
    pub xi_1_d: Vec3,
    pub xi_n: Vec3,
    pub xi_n_d: Vec3,
    pub status: QpStatus,
    pub fallback: Fallback,
    pub qp_iterations: usize,
    pub objective: f64,
}

/// Everything produced by one planning tick, including the final QP.
#[derive(Debug, Clone, Serialize)]
pub struct PlanDetail {
    pub output: PlanOutput,
    pub qp: Option<QpProblem>,
    pub solution: Option<QpSolution>,
}

#[derive(Debug, Clone)]
pub struct Planner {
    config: PlannerConfig,
    settings: QpSettings,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            settings: QpSettings {
                max_iter: config.max_qp_iterations,
                ..QpSettings::default()
            },
            config,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn b(&self) -> f64 {
        self.config.model.b()
    }

    /// Nominal duration of the current phase kind at the configured gait.
    pub fn nominal_phase_duration(&self, kind: PhaseKind) -> f64 {
        phase_duration(kind, self.config.gait.step_frequency, self.config.gait.ss_ratio)
    }

    /// Nominal preview for cycle frequency `f` and ratio `r`.
    pub fn nominal_plan(&self, gait: &GaitState, f: f64, r: f64) -> Result<NominalPlan> {
        let cfg = &self.config;
        let dz = cfg.model.delta_z;
        let b = self.b();
        let n = cfg.preview_feet;
        let (t_ss, t_ds) = crate::gait::phase_durations(f, r);
        let raw_remaining = phase_duration(gait.kind, f, r) - gait.elapsed;
        let remaining = raw_remaining.max(cfg.dt);

        let mut feet = Vec::with_capacity(n);
        let mut sides = Vec::with_capacity(n);
        let mut phases = Vec::with_capacity(2 * n);
        let entry_vrp;
        match gait.kind {
            PhaseKind::SingleSupport => {
                let s = gait.stance_side;
                feet.push(gait.foot(s).with_z(0.0));
                sides.push(s);
                entry_vrp = None;
            }
            PhaseKind::DoubleSupport => {
                let s = gait.stance_side;
                feet.push(gait.foot(s).with_z(0.0));
                sides.push(s);
                feet.push(gait.foot(s.other()).with_z(0.0));
                sides.push(s.other());
                entry_vrp = Some(gait.entry_vrp);
                phases.push(TransitionPhase {
                    kind: PhaseKind::DoubleSupport,
                    duration: remaining,
                    stance_side: s,
                });
            }
        }
        while feet.len() < n {
            let prev = *feet.last().expect("preview starts with a foot");
            let side = sides.last().expect("preview starts with a foot").other();
            feet.push(prev + cfg.gait.step_vector(side, f));
            sides.push(side);
        }
        // Single support on foot k, then double support from k to k+1.
        let first_ss = feet.len() - (n - if entry_vrp.is_some() { 1 } else { 0 });
        for &side in &sides[first_ss..n - 1] {
            let first = phases.is_empty();
            phases.push(TransitionPhase {
                kind: PhaseKind::SingleSupport,
                duration: if first { remaining } else { t_ss },
                stance_side: side,
            });
            phases.push(TransitionPhase {
                kind: PhaseKind::DoubleSupport,
                duration: t_ds,
                stance_side: side,
            });
        }
        let plan = PhasePlan::new(phases, feet.clone(), sides.clone(), entry_vrp, dz)?;
        let terminal = ((feet[n - 2] + feet[n - 1]) * 0.5).with_z(dz);
        let plan = backward_recursion(&plan, terminal, b)?;

        let n_fixed = if entry_vrp.is_some() { 2 } else { 1 };
        let f_nom = cfg.gait.step_frequency;
        let regions = (n_fixed..n)
            .map(|j| {
                let length = cfg.gait.step_vector(sides[j], f_nom).x;
                StepRegion {
                    polygon: cfg.region.polygon(length, sides[j]),
                    theta: 0.0,
                    stance_foot: feet[j - 1],
                    swing_side: sides[j],
                }
            })
            .collect();
        let timing = match gait.kind {
            PhaseKind::SingleSupport => (remaining / b).exp(),
            PhaseKind::DoubleSupport => remaining,
        };
        Ok(NominalPlan {
            targets: NominalTargets {
                feet: feet[n_fixed..].to_vec(),
                timing,
                terminal_dcm: terminal,
            },
            plan,
            regions,
            remaining,
            f,
            r,
        })
    }

    /// Splits the DCM error against the nominal plan's start point.
    pub fn split(&self, state: &DcmState, nominal: &NominalPlan) -> Result<ErrorSplit> {
        let set = correctable_set(&nominal.plan, &self.config.foot, 0.0, self.config.ankle_horizon, self.b())?;
        Ok(split_error(state.dcm - nominal.dcm_start(), &set))
    }

    fn timing_bounds(&self, gait: &GaitState, nominal: &NominalPlan, mode: TimingMode, relaxed: bool) -> TimingBounds {
        let l = &self.config.limits;
        let t_nom = phase_duration(gait.kind, nominal.f, nominal.r);
        let (mut lo_frac, mut hi_frac) = (l.min_fraction, l.max_fraction);
        if relaxed {
            lo_frac *= 0.5;
            hi_frac *= 2.0;
        }
        let t_min = (lo_frac * t_nom - gait.elapsed).max(0.0);
        let t_max = (hi_frac * t_nom - gait.elapsed).max(0.0);
        match mode {
            TimingMode::Optimized => TimingBounds {
                t_min,
                t_max,
                t0: nominal.remaining,
                trust_region: l.trust_fraction * nominal.remaining,
            },
            TimingMode::Scheduled => {
                let raw = phase_duration(gait.kind, nominal.f, nominal.r) - gait.elapsed;
                let fixed = raw.clamp(t_min, t_max).max(1e-6);
                TimingBounds {
                    t_min: fixed,
                    t_max: fixed,
                    t0: fixed,
                    trust_region: 0.0,
                }
            }
        }
    }

    pub fn plan_step(&self, state: &DcmState, gait: &GaitState, action: &AdjustAction, mode: TimingMode) -> Result<PlanOutput> {
        Ok(self.plan_step_detailed(state, gait, action, mode)?.output)
    }

    pub fn plan_step_detailed(
        &self,
        state: &DcmState,
        gait: &GaitState,
        action: &AdjustAction,
        mode: TimingMode,
    ) -> Result<PlanDetail> {
        if !(action.theta.abs() <= std::f64::consts::FRAC_PI_2) {
            return domain(format!("region rotation {} outside [-π/2, π/2]", action.theta));
        }
        if !state.dcm.is_finite() {
            return domain("DCM state is not finite");
        }
        let cfg = &self.config;
        let b = self.b();
        let (f_nom, r_nom) = (cfg.gait.step_frequency, cfg.gait.ss_ratio);
        let mut nominal = self.nominal_plan(gait, f_nom, r_nom)?;
        let mut split = self.split(state, &nominal)?;
        let (f, r, eta) = apply_timing(action, &split, f_nom, r_nom);
        if (f, r) != (f_nom, r_nom) {
            nominal = self.nominal_plan(gait, f, r)?;
            split = self.split(state, &nominal)?;
        }
        let xi_1_d = nominal.dcm_start();
        let xi_1 = xi_1_d + split.step;

        let mut weights = cfg.weights;
        if mode == TimingMode::Scheduled {
            weights.w_gamma = 0.0;
            weights.w_t = 0.0;
        }
        let attempts: [(f64, bool, Fallback); 3] = [
            (action.theta, false, Fallback::None),
            (0.0, false, Fallback::DroppedRotation),
            (0.0, true, Fallback::RelaxedTiming),
        ];
        let mut solved = None;
        for (k, &(theta, relaxed, tag)) in attempts.iter().enumerate() {
            if k == 1 && action.theta == 0.0 {
                continue;
            }
            let bounds = self.timing_bounds(gait, &nominal, mode, relaxed);
            let mut regions = nominal.regions.clone();
            regions[0].theta = theta;
            let qp = match gait.kind {
                PhaseKind::SingleSupport => {
                    assemble_ss_qp(xi_1, &nominal.plan, &regions, &nominal.targets, &weights, &bounds, b)?
                }
                PhaseKind::DoubleSupport => assemble_ds_qp(
                    xi_1,
                    gait.entry_vrp,
                    &nominal.plan,
                    &regions,
                    &nominal.targets,
                    &weights,
                    &bounds,
                    b,
                )?,
            };
            let sol = solve_qp_with(&qp, &self.settings);
            if sol.is_optimal() {
                solved = Some((qp, sol, theta, tag));
                break;
            }
            if k == attempts.len() - 1 {
                solved = Some((qp, sol, theta, Fallback::Nominal));
            }
        }
        let (qp, sol, theta_applied, fallback) = solved.expect("at least one attempt runs");
        let output = self.write_back(state, gait, &nominal, &qp, &sol, xi_1, split, eta, theta_applied, fallback)?;
        Ok(PlanDetail {
            output,
            qp: Some(qp),
            solution: Some(sol),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn write_back(
        &self,
        _state: &DcmState,
        gait: &GaitState,
        nominal: &NominalPlan,
        qp: &QpProblem,
        sol: &QpSolution,
        xi_1: Vec3,
        split: ErrorSplit,
        eta: bool,
        theta_applied: f64,
        fallback: Fallback,
    ) -> Result<PlanOutput> {
        let cfg = &self.config;
        let dz = cfg.model.delta_z;
        let b = self.b();
        let layout = &qp.layout;
        let n_fixed = nominal.n_fixed();
        let mut plan = nominal.plan.clone();
        let remaining;
        if fallback == Fallback::Nominal {
            remaining = nominal.remaining;
            plan.dcm_waypoints[0] = xi_1;
        } else {
            let x = &sol.values;
            let t = x[0];
            remaining = match gait.kind {
                PhaseKind::SingleSupport => b * t.max(1.0).ln(),
                PhaseKind::DoubleSupport => t.max(0.0),
            };
            for j in 0..layout.n_feet {
                let i = layout.foot_index(j);
                plan.foot_positions[n_fixed + j] = Vec3::new(x[i], x[i + 1], 0.0);
            }
            plan.map_vrp_waypoints(dz);
            plan.dcm_waypoints[0] = xi_1;
            for k in 0..layout.n_waypoints {
                let i = layout.waypoint_index(k);
                plan.dcm_waypoints[k + 1] = Vec3::new(x[i], x[i + 1], dz);
            }
        }
        plan.phases[0].duration = remaining.max(f64::MIN_POSITIVE);
        let xi_n = *plan.dcm_waypoints.last().expect("plan has waypoints");
        let (vrp_ref, next_entry_vrp, swing_target) = match gait.kind {
            PhaseKind::SingleSupport => {
                let p1 = plan.foot_positions[0].with_z(dz);
                (p1, p1, Some(plan.foot_positions[1]))
            }
            PhaseKind::DoubleSupport => {
                let v1 = gait.entry_vrp;
                let v2 = plan.foot_positions[1].with_z(dz);
                let s = if remaining > cfg.dt { cfg.dt / remaining } else { 1.0 };
                (v1, v1 + (v2 - v1) * s, None)
            }
        };
        Ok(PlanOutput {
            plan,
            vrp_ref,
            dcm_ref: xi_1,
            remaining,
            nominal_remaining: nominal.remaining,
            swing_target,
            next_entry_vrp,
            split,
            eta,
            f: nominal.f,
            r: nominal.r,
            theta_applied,
            xi_1_d: nominal.dcm_start(),
            xi_n,
            xi_n_d: nominal.targets.terminal_dcm,
            status: sol.status,
            fallback,
            qp_iterations: sol.iterations,
            objective: sol.objective,
        })
    }
}

/// Swing side of the first free foot of a plan.
pub fn first_swing_side(gait: &GaitState) -> Side {
    match gait.kind {
        PhaseKind::SingleSupport => gait.stance_side.other(),
        PhaseKind::DoubleSupport => gait.stance_side,
    }
}

/// Convenience: the world-frame rectangle of a nominal step region.
pub fn region_polygon(region: &StepRegion) -> ConvexPolygon {
    let p = region.stance_foot.xy();
    let poly = if region.theta == 0.0 {
        region.polygon.clone()
    } else {
        region.polygon.rotated_about(Vec2::default(), region.world_angle())
    };
    poly.translated(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lip::compute_dcm;

    fn planner() -> Planner {
        Planner::new(PlannerConfig::default()).unwrap()
    }

    fn ss_state(p: &Planner, elapsed: f64) -> (DcmState, GaitState) {
        let cfg = p.config();
        let mut gait = GaitState::standing(Side::Left, Vec3::ZERO, cfg.gait.step_width, cfg.model.delta_z);
        gait.elapsed = elapsed;
        let nominal = p.nominal_plan(&gait, cfg.gait.step_frequency, cfg.gait.ss_ratio).unwrap();
        let xi = nominal.dcm_start();
        let state = DcmState {
            com: xi,
            com_vel: Vec3::ZERO,
            dcm: xi,
            vrp: gait.left.with_z(cfg.model.delta_z),
        };
        (state, gait)
    }

    #[test]
    fn nominal_plan_shapes() {
        let p = planner();
        let (_, gait) = ss_state(&p, 0.1);
        let nom = p.nominal_plan(&gait, 1.25, 0.7).unwrap();
        assert_eq!(nom.plan.n_phases(), 6);
        assert_eq!(nom.plan.foot_positions.len(), 4);
        assert_eq!(nom.regions.len(), 3);
        assert!((nom.plan.phases[0].duration - 0.46).abs() < 1e-12);
        let mut ds = gait;
        ds.kind = PhaseKind::DoubleSupport;
        ds.right = Vec3::new(0.24, -0.1, 0.0);
        ds.entry_vrp = Vec3::new(0.1, 0.0, 0.8);
        let nom = p.nominal_plan(&ds, 1.25, 0.7).unwrap();
        assert_eq!(nom.plan.n_phases(), 5);
        assert_eq!(nom.plan.foot_positions.len(), 4);
        assert_eq!(nom.regions.len(), 2);
        assert_eq!(nom.plan.vrp_waypoints[0], ds.entry_vrp);
        assert_eq!(nom.plan.vrp_waypoints[1], ds.right.with_z(0.8));
    }

    #[test]
    fn undisturbed_plan_is_nominal() {
        let p = planner();
        let (state, gait) = ss_state(&p, 0.2);
        let out = p.plan_step(&state, &gait, &AdjustAction::default(), TimingMode::Optimized).unwrap();
        let nom = p.nominal_plan(&gait, 1.25, 0.7).unwrap();
        assert_eq!(out.status, QpStatus::Optimal);
        assert!(!out.eta);
        assert!((out.remaining - nom.remaining).abs() < 1e-7);
        for (a, b) in out.plan.foot_positions.iter().zip(&nom.plan.foot_positions) {
            assert!(a.max_abs_diff(*b) < 1e-7);
        }
        assert!(out.objective.abs() < 1e-9);
        assert_eq!(out.vrp_ref, gait.left.with_z(0.8));
    }

    #[test]
    fn lateral_push_moves_footsteps_and_timing() {
        let p = planner();
        let (mut state, gait) = ss_state(&p, 0.1);
        state.com_vel = Vec3::new(0.0, 0.6, 0.0);
        state.dcm = compute_dcm(state.com, state.com_vel, &p.config().model);
        let out = p.plan_step(&state, &gait, &AdjustAction::default(), TimingMode::Optimized).unwrap();
        assert_eq!(out.status, QpStatus::Optimal);
        assert!(out.eta);
        let nom = p.nominal_plan(&gait, 1.25, 0.7).unwrap();
        assert!(out.swing_target.unwrap().y > nom.plan.foot_positions[1].y);
    }

    #[test]
    fn zero_theta_matches_baseline_exactly() {
        let p = planner();
        let (mut state, gait) = ss_state(&p, 0.15);
        state.dcm += Vec3::new(0.05, -0.08, 0.0);
        let a = p.plan_step_detailed(&state, &gait, &AdjustAction::default(), TimingMode::Optimized).unwrap();
        let b = p.plan_step_detailed(&state, &gait, &AdjustAction::theta_only(0.0), TimingMode::Optimized).unwrap();
        assert_eq!(a.qp.unwrap(), b.qp.unwrap());
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn rejects_out_of_range_theta() {
        let p = planner();
        let (state, gait) = ss_state(&p, 0.0);
        assert!(p.plan_step(&state, &gait, &AdjustAction::theta_only(2.0), TimingMode::Optimized).is_err());
    }
}
