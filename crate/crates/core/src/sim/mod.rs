//! Closed-loop point-mass simulation: planner every tick, policy at a lower
//! rate, DCM tracking with VRP clamping, pushes, swing-foot motion and
//! touchdown, fall and self-collision detection.

mod trace;

pub use trace::{read_trace_jsonl, DecisionRecord, EpisodeOutcome, EpisodeTrace, Footstep, TickRecord, TraceHeader, TRACE_SCHEMA_VERSION};

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ankle::{clamp_vrp_to_support, dcm_tracking_law, support_polygon, FootGeometry};
use crate::error::{Error, Result};
use crate::gait::{AdjustAction, GaitState};
use crate::geometry::{rects_overlap, segments_intersect, Vec2, Vec3};
use crate::lip::{DcmState, ModelParams, PhaseKind, Side};
use crate::planner::{first_swing_side, Fallback, PlanOutput, Planner, PlannerConfig, TimingMode};
use crate::rl::observation::{build_observation, Observation};
use crate::rl::reward::{compute_reward, RewardBreakdown, RewardParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub policy_period: f64,
    pub push_duration: f64,
    pub episode_length: f64,
    pub push_interval: f64,
    /// Fall when the horizontal DCM–VRP distance exceeds this (m).
    pub fall_radius: f64,
    /// Fall when the CoM speed exceeds this (m/s).
    pub fall_speed: f64,
    pub swing_apex: f64,
    /// Cap on the horizontal swing-foot speed while retargeting (m/s).
    pub swing_speed_limit: f64,
    /// Soles closer than this count as touching (m).
    pub collision_clearance: f64,
    /// A swing foot below this height can hit the stance foot (m).
    pub collision_height: f64,
    pub timing_mode: TimingMode,
    /// Standard deviation of Gaussian noise on the observation; off by default.
    pub obs_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            policy_period: 0.02,
            push_duration: 0.1,
            episode_length: 20.0,
            push_interval: 1.5,
            fall_radius: 1.0,
            fall_speed: 3.0,
            swing_apex: 0.05,
            swing_speed_limit: 5.0,
            collision_clearance: 0.02,
            collision_height: 0.02,
            timing_mode: TimingMode::Optimized,
            obs_noise: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.dt,
            self.policy_period,
            self.push_duration,
            self.episode_length,
            self.push_interval,
            self.fall_radius,
            self.fall_speed,
            self.swing_speed_limit,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("simulation times and thresholds must be positive".into()));
        }
        let ratio = self.policy_period / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "policy period {} is not an integer multiple of dt {}",
                self.policy_period, self.dt
            )));
        }
        if !(self.swing_apex >= 0.0 && self.collision_clearance >= 0.0 && self.obs_noise >= 0.0) {
            return Err(Error::Config("swing apex, clearance and noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn ticks_per_decision(&self) -> usize {
        (self.policy_period / self.dt).round() as usize
    }

    pub fn total_ticks(&self) -> usize {
        (self.episode_length / self.dt).round() as usize
    }

    fn tick_of(&self, t: f64) -> usize {
        (t / self.dt).round().max(0.0) as usize
    }
}

/// Constant external force on the CoM over `[start, start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Push {
    pub force: Vec3,
    pub start: f64,
    pub duration: f64,
}

impl Push {
    pub fn horizontal(magnitude: f64, direction_deg: f64, start: f64, duration: f64) -> Self {
        let a = direction_deg.to_radians();
        Self {
            force: Vec3::new(magnitude * a.cos(), magnitude * a.sin(), 0.0),
            start,
            duration,
        }
    }
}

/// Pushes every `push_interval` seconds with magnitudes uniform in
/// `force_range` and uniformly random horizontal directions.
pub fn random_push_schedule<R: Rng>(rng: &mut R, config: &SimConfig, force_range: (f64, f64)) -> Vec<Push> {
    let mut pushes = Vec::new();
    let mut t = config.push_interval;
    while t + config.push_duration <= config.episode_length {
        let mag = if force_range.1 > force_range.0 {
            rng.random_range(force_range.0..force_range.1)
        } else {
            force_range.0
        };
        let dir = rng.random_range(0.0..360.0);
        pushes.push(Push::horizontal(mag, dir, t, config.push_duration));
        t += config.push_interval;
    }
    pushes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    Walking,
    Fallen,
    SelfCollision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub time: f64,
    pub tick: usize,
    pub dcm_state: DcmState,
    pub gait: GaitState,
    /// Current position of the foot that steps next (lifted in single
    /// support).
    pub swing_foot: Vec3,
    pub swing_progress: f64,
    pub status: SimStatus,
    /// Accumulated `∫F dt / m`.
    pub impulse: Vec3,
}

impl SimState {
    pub fn left_foot(&self) -> Vec3 {
        match self.gait.swing_side() {
            Some(Side::Left) => self.swing_foot,
            _ => self.gait.left,
        }
    }

    pub fn right_foot(&self) -> Vec3 {
        match self.gait.swing_side() {
            Some(Side::Right) => self.swing_foot,
            _ => self.gait.right,
        }
    }
}

/// One control tick of `ẍ = (x − v)/b² + F/m`. The VRP is held constant over
/// the tick and the homogeneous flow is integrated exactly; the push enters
/// as two half kicks around it, so the velocity it adds is exactly `F dt/m`.
pub fn step_dynamics(state: &DcmState, vrp_cmd: Vec3, force: Vec3, params: &ModelParams, dt: f64) -> DcmState {
    let b = params.b();
    let kick = force * (0.5 * dt / params.mass);
    let v0 = state.com_vel + kick;
    let y0 = state.com - vrp_cmd;
    let (sh, ch) = ((dt / b).sinh(), (dt / b).cosh());
    let y = y0 * ch + v0 * (b * sh);
    let v = y0 * (sh / b) + v0 * ch;
    DcmState::from_com(vrp_cmd + y, v + kick, vrp_cmd, params)
}

fn cycloid(s: f64) -> f64 {
    s - (TAU * s).sin() / TAU
}

/// Moves the swing foot from `current` (normalized swing time `s_old`) to
/// normalized time `s_new`, heading for `target`. The horizontal path is a
/// cycloid re-anchored at the current point every tick, so a moved target
/// bends the path without a jump; the lift is a raised cosine with apex
/// `apex`. At `s_new = 1` the foot is exactly on `target` at ground level.
pub fn advance_swing(current: Vec3, target: Vec3, s_old: f64, s_new: f64, apex: f64, max_step: f64) -> Vec3 {
    let s_new = s_new.clamp(s_old, 1.0);
    if s_new >= 1.0 {
        return target.with_z(0.0);
    }
    let c0 = cycloid(s_old);
    let w = if c0 < 1.0 { (cycloid(s_new) - c0) / (1.0 - c0) } else { 1.0 };
    let mut d = (target - current).xy() * w;
    let n = d.norm();
    if n > max_step {
        d = d * (max_step / n);
    }
    let xy = current.xy() + d;
    let z = apex * 0.5 * (1.0 - (TAU * s_new).cos());
    xy.to_vec3(z)
}

/// Self-collision proxy. The soles collide when they come within
/// `clearance` of each other while the swing foot is below `height`; the
/// legs collide when the segments from each foot towards the CoM ground
/// point cross before they meet there.
pub fn check_self_collision(
    stance: Vec3,
    swing: Vec3,
    com: Vec3,
    foot: &FootGeometry,
    clearance: f64,
    height: f64,
) -> bool {
    let h = foot.half_extents();
    if swing.z < height
        && rects_overlap(stance.xy(), h + Vec2::new(clearance, clearance), swing.xy(), h)
    {
        return true;
    }
    let c = com.xy();
    let leg = |p: Vec3| p.xy() + (c - p.xy()) * 0.9;
    segments_intersect(stance.xy(), leg(stance), swing.xy(), leg(swing))
}

/// Whether the swing path from `current` (normalized time `s_old`) to
/// `target` would bring the sole into contact with the stance sole while
/// low, assuming the target no longer moves.
pub fn swing_path_collides(stance: Vec3, current: Vec3, target: Vec3, s_old: f64, foot: &FootGeometry, config: &SimConfig) -> bool {
    const SAMPLES: usize = 64;
    let h = foot.half_extents();
    let grown = h + Vec2::new(config.collision_clearance, config.collision_clearance);
    let c0 = cycloid(s_old);
    for k in 0..=SAMPLES {
        let s = s_old + (1.0 - s_old) * k as f64 / SAMPLES as f64;
        let z = config.swing_apex * 0.5 * (1.0 - (TAU * s).cos());
        if z >= config.collision_height && s < 1.0 {
            continue;
        }
        let w = if c0 < 1.0 { (cycloid(s) - c0) / (1.0 - c0) } else { 1.0 };
        let p = current.xy() + (target - current).xy() * w;
        if rects_overlap(stance.xy(), grown, p, h) {
            return true;
        }
    }
    false
}

/// Unrecoverable divergence: the DCM has left the VRP by more than
/// `radius` horizontally, or the CoM moves faster than `speed`.
pub fn check_fall(dcm: Vec3, vrp: Vec3, com_vel: Vec3, radius: f64, speed: f64) -> bool {
    (dcm - vrp).norm_xy() > radius || com_vel.norm() > speed
}

/// Something that picks the adjustment every policy period.
pub trait AdjustPolicy {
    fn act(&mut self, obs: &Observation, sim: &Simulator) -> Result<AdjustAction>;
}

/// Zero adjustments: the model-based planner on its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl AdjustPolicy for ZeroPolicy {
    fn act(&mut self, _obs: &Observation, _sim: &Simulator) -> Result<AdjustAction> {
        Ok(AdjustAction::default())
    }
}

/// The same action every period.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub AdjustAction);

impl AdjustPolicy for ConstantPolicy {
    fn act(&mut self, _obs: &Observation, _sim: &Simulator) -> Result<AdjustAction> {
        Ok(self.0)
    }
}

/// Result of one policy period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionOutcome {
    pub reward: RewardBreakdown,
    pub done: bool,
    /// True when the episode ended by running out of time.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    planner: Planner,
    config: SimConfig,
    rewards: RewardParams,
    pushes: Vec<Push>,
    state: SimState,
    last_plan: Option<PlanOutput>,
    trace: Option<EpisodeTrace>,
    footsteps: Vec<Footstep>,
    total_reward: f64,
    decisions: usize,
    fallback_ticks: usize,
    noise_rng: Option<rand_chacha::ChaCha8Rng>,
}

impl Simulator {
    pub fn new(
        planner_config: PlannerConfig,
        config: SimConfig,
        rewards: RewardParams,
        pushes: Vec<Push>,
        header: Option<TraceHeader>,
    ) -> Result<Self> {
        config.validate()?;
        if (planner_config.dt - config.dt).abs() > 1e-15 {
            return Err(Error::Config(format!(
                "planner tick {} differs from simulation tick {}",
                planner_config.dt, config.dt
            )));
        }
        if pushes.iter().any(|p| !(p.duration > 0.0) || !p.force.is_finite()) {
            return Err(Error::Config("pushes need a positive duration and finite force".into()));
        }
        let planner = Planner::new(planner_config)?;
        let pc = planner.config();
        let dz = pc.model.delta_z;
        let gait = GaitState::standing(Side::Left, Vec3::ZERO, pc.gait.step_width, dz);
        let nominal = planner.nominal_plan(&gait, pc.gait.step_frequency, pc.gait.ss_ratio)?;
        let xi = nominal.dcm_start();
        let dcm_state = DcmState {
            com: xi,
            com_vel: Vec3::ZERO,
            dcm: xi,
            vrp: gait.entry_vrp,
        };
        let state = SimState {
            time: 0.0,
            tick: 0,
            dcm_state,
            gait,
            swing_foot: gait.right,
            swing_progress: 0.0,
            status: SimStatus::Walking,
            impulse: Vec3::ZERO,
        };
        let seed = header.as_ref().map(|h| h.seed).unwrap_or(0);
        let noise_rng = (config.obs_noise > 0.0).then(|| <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
        let trace = header.map(|h| EpisodeTrace::new(h, pushes.clone()));
        Ok(Self {
            planner,
            config,
            rewards,
            pushes,
            state,
            last_plan: None,
            trace,
            footsteps: Vec::new(),
            total_reward: 0.0,
            decisions: 0,
            fallback_ticks: 0,
            noise_rng,
        })
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn footsteps(&self) -> &[Footstep] {
        &self.footsteps
    }

    pub fn last_plan(&self) -> Option<&PlanOutput> {
        self.last_plan.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.state.status != SimStatus::Walking || self.state.tick >= self.config.total_ticks()
    }

    /// Observation against the nominal (unadjusted) plan.
    pub fn observe(&mut self) -> Result<Observation> {
        let pc = self.planner.config();
        let (f, r) = (pc.gait.step_frequency, pc.gait.ss_ratio);
        let nominal = self.planner.nominal_plan(&self.state.gait, f, r)?;
        let split = self.planner.split(&self.state.dcm_state, &nominal)?;
        let mut obs = build_observation(
            &self.state.gait,
            self.state.swing_foot,
            self.state.dcm_state.com_vel,
            &split,
            f,
            r,
            pc.gait.v_ref,
        );
        if let Some(rng) = self.noise_rng.as_mut() {
            let n = rand_distr::Normal::new(0.0, self.config.obs_noise).expect("noise std validated");
            let mut jitter = |v: &mut Vec3| {
                v.x += rng.sample(n);
                v.y += rng.sample(n);
                v.z += rng.sample(n);
            };
            jitter(&mut obs.dcm_error_ankle);
            jitter(&mut obs.dcm_error_step);
            jitter(&mut obs.com_vel);
        }
        Ok(obs)
    }

    fn push_force(&self, tick: usize) -> Vec3 {
        let mut f = Vec3::ZERO;
        for p in &self.pushes {
            let t0 = self.config.tick_of(p.start);
            let t1 = self.config.tick_of(p.start + p.duration);
            if tick >= t0 && tick < t1 {
                f += p.force;
            }
        }
        f
    }

    /// Runs one policy period with `action` held, or until the episode ends.
    pub fn advance(&mut self, action: AdjustAction, obs: Option<&Observation>) -> Result<DecisionOutcome> {
        if self.is_done() {
            return Err(Error::Domain("episode already finished".into()));
        }
        if !(action.theta.abs() <= std::f64::consts::FRAC_PI_2) || !action.f_hat.is_finite() || !action.r_hat.is_finite() {
            return Err(Error::Domain(format!("invalid action {action:?}")));
        }
        let start_time = self.state.time;
        for _ in 0..self.config.ticks_per_decision() {
            self.tick(&action)?;
            if self.is_done() {
                break;
            }
        }
        let plan = self.last_plan.as_ref().expect("at least one tick ran");
        let reward = compute_reward(
            &action,
            plan.xi_n,
            plan.xi_n_d,
            self.state.status == SimStatus::Fallen,
            self.state.status == SimStatus::SelfCollision,
            &self.rewards,
        );
        self.total_reward += reward.total;
        self.decisions += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.decisions.push(DecisionRecord {
                time: start_time,
                observation: obs.copied(),
                action,
                reward,
            });
        }
        let done = self.is_done();
        Ok(DecisionOutcome {
            reward,
            done,
            truncated: done && self.state.status == SimStatus::Walking,
        })
    }

    fn tick(&mut self, action: &AdjustAction) -> Result<()> {
        let pc = *self.planner.config();
        let dz = pc.model.delta_z;
        let b = pc.model.b();
        let dt = self.config.dt;
        let force = self.push_force(self.state.tick);
        let s = &mut self.state;
        let out = self.planner.plan_step(&s.dcm_state, &s.gait, action, self.config.timing_mode)?;
        if out.fallback != Fallback::None {
            self.fallback_ticks += 1;
        }
        let v_raw = dcm_tracking_law(s.dcm_state.dcm, out.dcm_ref, out.vrp_ref, pc.k_xi_vec(), b)?;
        let support = match s.gait.kind {
            PhaseKind::SingleSupport => pc.foot.rect(s.gait.foot(s.gait.stance_side).xy()),
            PhaseKind::DoubleSupport => support_polygon(&[s.gait.left, s.gait.right], &pc.foot),
        };
        let v_cmd = clamp_vrp_to_support(v_raw, &support, dz);
        s.dcm_state = step_dynamics(&s.dcm_state, v_cmd, force, &pc.model, dt);
        s.impulse += force * (dt / pc.model.mass);
        s.tick += 1;
        s.time = s.tick as f64 * dt;
        s.gait.elapsed += dt;

        let phase_ends = out.remaining < 1.5 * dt;
        let mut landed = None;
        match s.gait.kind {
            PhaseKind::SingleSupport => {
                let target = out.swing_target.expect("single support has a swing target");
                let remaining = (out.remaining - dt).max(0.0);
                let s_new = if phase_ends {
                    1.0
                } else {
                    (s.gait.elapsed / (s.gait.elapsed + remaining)).clamp(s.swing_progress, 1.0)
                };
                s.swing_foot = advance_swing(
                    s.swing_foot,
                    target,
                    s.swing_progress,
                    s_new,
                    self.config.swing_apex,
                    self.config.swing_speed_limit * dt,
                );
                s.swing_progress = s_new;
                if phase_ends {
                    let side = s.gait.stance_side.other();
                    s.gait.set_foot(side, target.with_z(0.0));
                    s.gait.kind = PhaseKind::DoubleSupport;
                    s.gait.elapsed = 0.0;
                    s.gait.entry_vrp = s.gait.foot(s.gait.stance_side).with_z(dz);
                    s.swing_foot = s.gait.foot(s.gait.stance_side);
                    s.swing_progress = 0.0;
                    landed = Some(Footstep {
                        time: s.time,
                        side,
                        position: target.with_z(0.0),
                    });
                }
            }
            PhaseKind::DoubleSupport => {
                s.gait.entry_vrp = out.next_entry_vrp;
                if phase_ends {
                    s.gait.kind = PhaseKind::SingleSupport;
                    s.gait.stance_side = s.gait.stance_side.other();
                    s.gait.elapsed = 0.0;
                    s.gait.entry_vrp = s.gait.foot(s.gait.stance_side).with_z(dz);
                    s.swing_foot = s.gait.foot(s.gait.stance_side.other());
                    s.swing_progress = 0.0;
                }
            }
        }
        if let Some(f) = landed {
            self.footsteps.push(f);
        }

        let swing_side = first_swing_side(&s.gait);
        let stance = s.gait.foot(swing_side.other());
        if check_fall(
            s.dcm_state.dcm,
            v_cmd,
            s.dcm_state.com_vel,
            self.config.fall_radius,
            self.config.fall_speed,
        ) {
            s.status = SimStatus::Fallen;
        } else if check_self_collision(
            stance,
            s.swing_foot,
            s.dcm_state.com,
            &pc.foot,
            self.config.collision_clearance,
            self.config.collision_height,
        ) {
            s.status = SimStatus::SelfCollision;
        }

        if let Some(trace) = self.trace.as_mut() {
            let s = &self.state;
            trace.ticks.push(TickRecord {
                time: s.time,
                com: s.dcm_state.com,
                com_vel: s.dcm_state.com_vel,
                dcm: s.dcm_state.dcm,
                dcm_ref: out.dcm_ref,
                vrp_ref: out.vrp_ref,
                vrp_cmd: v_cmd,
                left: s.left_foot(),
                right: s.right_foot(),
                phase: out.plan.parity,
                stance: out.plan.foot_sides[0],
                remaining: out.remaining,
                nominal_remaining: out.nominal_remaining,
                eta: out.eta,
                f: out.f,
                r: out.r,
                theta: out.theta_applied,
                fallback: out.fallback,
                force,
                status: s.status,
            });
            if let Some(f) = landed {
                trace.footsteps.push(f);
            }
        }
        self.last_plan = Some(out);
        Ok(())
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        EpisodeOutcome {
            status: self.state.status,
            end_time: self.state.time,
            total_reward: self.total_reward,
            decisions: self.decisions,
            footsteps: self.footsteps.len(),
            fallback_ticks: self.fallback_ticks,
        }
    }

    /// Final outcome and, when recording, the full trace.
    pub fn finish(self) -> (EpisodeOutcome, Option<EpisodeTrace>) {
        let outcome = self.outcome();
        let trace = self.trace.map(|mut t| {
            t.outcome = Some(outcome);
            t
        });
        (outcome, trace)
    }
}

/// Runs a whole episode with `policy`.
pub fn run_episode(
    planner_config: PlannerConfig,
    config: SimConfig,
    rewards: RewardParams,
    policy: &mut dyn AdjustPolicy,
    pushes: Vec<Push>,
    header: Option<TraceHeader>,
) -> Result<(EpisodeOutcome, Option<EpisodeTrace>)> {
    let mut sim = Simulator::new(planner_config, config, rewards, pushes, header)?;
    while !sim.is_done() {
        let obs = sim.observe()?;
        let action = policy.act(&obs, &sim)?;
        sim.advance(action, Some(&obs))?;
    }
    Ok(sim.finish())
}

/// Direction of a push in degrees in `[0, 360)`.
pub fn push_direction_deg(p: &Push) -> f64 {
    let d = p.force.y.atan2(p.force.x) * 180.0 / PI;
    if d < 0.0 {
        d + 360.0
    } else {
        d
    }
}
