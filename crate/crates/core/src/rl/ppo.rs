//! Clipped-surrogate policy optimization with generalized advantage
//! estimation, on parallel simulator workers.

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::PlannerConfig;
use crate::rl::mlp::Mlp;
use crate::rl::observation::Observation;
use crate::rl::policy::PolicyParams;
use crate::rl::reward::RewardParams;
use crate::sim::{random_push_schedule, SimConfig, SimStatus, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Rewards are multiplied by this before advantage and value targets
    /// are formed, keeping the critic's loss from swamping the clipped
    /// gradient norm.
    pub reward_scale: f64,
    pub hidden: usize,
    pub init_log_std: f64,
    /// Simulators collecting each batch; must divide `batch_size`.
    pub n_envs: usize,
    pub iterations: usize,
    /// Push magnitudes during training (N).
    pub force_range: [f64; 2],
    pub seed: u64,
    /// Where to write the diagnostic dump if training diverges.
    pub dump_dir: Option<PathBuf>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_ratio: 0.2,
            discount: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            epochs_per_batch: 4,
            batch_size: 4096,
            minibatch_size: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            reward_scale: 0.01,
            hidden: 256,
            init_log_std: -1.0,
            n_envs: 8,
            iterations: 300,
            force_range: [100.0, 300.0],
            seed: 0,
            dump_dir: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip ratio must be in (0, 1)");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("discount must be in (0, 1] and lambda in [0, 1]");
        }
        if !(self.learning_rate >= 0.0) || !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return bad("learning rate and loss coefficients must be non-negative");
        }
        if self.n_envs == 0 || self.batch_size == 0 || !self.batch_size.is_multiple_of(self.n_envs) {
            return bad("batch size must be a positive multiple of the worker count");
        }
        if self.minibatch_size == 0 || self.minibatch_size > self.batch_size || self.epochs_per_batch == 0 {
            return bad("minibatch size must be in [1, batch size] and epochs positive");
        }
        if self.hidden == 0 || !(self.max_grad_norm > 0.0) || !(self.reward_scale > 0.0) {
            return bad("hidden width, gradient clip and reward scale must be positive");
        }
        if !(self.force_range[0] >= 0.0 && self.force_range[1] >= self.force_range[0]) {
            return bad("force range must be ordered and non-negative");
        }
        Ok(())
    }
}

/// Advantages and returns. `next_values[t]` is the value of the state after
/// step `t` (zero if that step ended the episode by falling), and
/// `boundaries[t]` marks the last step of a trajectory segment.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    boundaries: &[bool],
    discount: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        if boundaries[t] {
            running = 0.0;
        }
        let delta = rewards[t] + discount * next_values[t] - values[t];
        running = delta + discount * lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Largest `|ratio − 1|` in the minibatch.
    pub max_ratio_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Array1<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    /// Normalized observations.
    pub x: ArrayView2<'a, f64>,
    /// Pre-squash actions.
    pub u: ArrayView2<'a, f64>,
    pub log_prob_old: ArrayView1<'a, f64>,
    pub advantages: ArrayView1<'a, f64>,
    pub returns: ArrayView1<'a, f64>,
}

/// Loss `−mean(min(ρA, clip(ρ)A)) + c_v·½mean((V−R)²) − c_e·H` and its
/// gradient.
pub fn ppo_loss(params: &PolicyParams, mb: &Minibatch<'_>, coefs: &LossCoefs) -> (LossStats, Gradients) {
    let m = mb.x.nrows() as f64;
    let (mean, actor_cache) = params.actor.forward(mb.x);
    let (value, critic_cache) = params.critic.forward(mb.x);
    let inv_std: Vec<f64> = params.log_std.iter().map(|ls| (-ls).exp()).collect();
    let act_dim = params.act_dim();
    let (lo, hi) = (1.0 - coefs.clip_ratio, 1.0 + coefs.clip_ratio);

    let mut grad_mean = Array2::zeros(mean.raw_dim());
    let mut grad_log_std = Array1::from_elem(act_dim, -coefs.entropy_coef);
    let mut policy_loss = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    let mut max_dev: f64 = 0.0;
    for i in 0..mb.x.nrows() {
        let u = mb.u.row(i);
        let mu = mean.row(i);
        let mut logp = 0.0;
        for k in 0..act_dim {
            let z = (u[k] - mu[k]) * inv_std[k];
            logp += -0.5 * z * z - params.log_std[k] - 0.5 * 1.837_877_066_409_345_3;
        }
        let log_ratio = logp - mb.log_prob_old[i];
        let ratio = log_ratio.exp();
        let a = mb.advantages[i];
        let unclipped = ratio * a;
        let clipped_obj = ratio.clamp(lo, hi) * a;
        policy_loss -= unclipped.min(clipped_obj);
        kl += (ratio - 1.0) - log_ratio;
        max_dev = max_dev.max((ratio - 1.0).abs());
        let inside = ratio > lo && ratio < hi;
        if !inside {
            clipped += 1;
        }
        // d(−surrogate)/d logp
        let g = if unclipped <= clipped_obj || inside { -a * ratio / m } else { 0.0 };
        if g != 0.0 {
            for k in 0..act_dim {
                let z = (u[k] - mu[k]) * inv_std[k];
                grad_mean[[i, k]] = g * z * inv_std[k];
                grad_log_std[k] += g * (z * z - 1.0);
            }
        }
    }
    let diff = &value.column(0) - &mb.returns;
    let value_loss = 0.5 * diff.mapv(|d| d * d).sum() / m;
    let grad_value = diff.mapv(|d| coefs.value_coef * d / m).insert_axis(Axis(1));
    let entropy = params.entropy();
    policy_loss /= m;
    let stats = LossStats {
        total: policy_loss + coefs.value_coef * value_loss - coefs.entropy_coef * entropy,
        policy_loss,
        value_loss,
        entropy,
        approx_kl: kl / m,
        clip_fraction: clipped as f64 / m,
        max_ratio_deviation: max_dev,
    };
    let grads = Gradients {
        actor: params.actor.backward(&actor_cache, grad_mean.view()),
        critic: params.critic.backward(&critic_cache, grad_value.view()),
        log_std: grad_log_std,
    };
    (stats, grads)
}

fn flatten(params: &PolicyParams) -> Vec<f64> {
    let mut v = Vec::new();
    params.actor.flatten_into(&mut v);
    v.extend(params.log_std.iter());
    params.critic.flatten_into(&mut v);
    v
}

fn flatten_grads(g: &Gradients) -> Vec<f64> {
    let mut v = Vec::new();
    g.actor.flatten_into(&mut v);
    v.extend(g.log_std.iter());
    g.critic.flatten_into(&mut v);
    v
}

fn assign(params: &mut PolicyParams, v: &[f64]) {
    let mut k = params.actor.assign_from(v);
    for x in params.log_std.iter_mut() {
        *x = v[k];
        k += 1;
    }
    params.critic.assign_from(&v[k..]);
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Per-iteration learning-curve row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Mean total reward of the last (up to) 20 finished episodes.
    pub mean_reward: f64,
    pub std_reward: f64,
    pub fall_rate: f64,
    pub collision_rate: f64,
    pub episodes: usize,
    pub loss: LossStats,
    /// `|ratio − 1|` on the first minibatch of the first epoch.
    pub first_ratio_deviation: f64,
}

#[derive(Debug, Clone, Copy)]
struct Finished {
    reward: f64,
    status: SimStatus,
}

struct Worker {
    sim: Simulator,
    obs: Observation,
    episode_reward: f64,
    push_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
    planner: PlannerConfig,
    config: SimConfig,
    rewards: RewardParams,
    force_range: (f64, f64),
}

struct Segment {
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    log_prob: Vec<f64>,
    value: Vec<f64>,
    next_value: Vec<f64>,
    reward: Vec<f64>,
    boundary: Vec<bool>,
    finished: Vec<Finished>,
}

impl Worker {
    fn new(
        seed: u64,
        id: u64,
        planner: PlannerConfig,
        config: SimConfig,
        rewards: RewardParams,
        force_range: (f64, f64),
    ) -> Result<Self> {
        let mut push_rng = ChaCha8Rng::seed_from_u64(seed);
        push_rng.set_stream(2 * id);
        let mut action_rng = ChaCha8Rng::seed_from_u64(seed);
        action_rng.set_stream(2 * id + 1);
        let pushes = random_push_schedule(&mut push_rng, &config, force_range);
        let mut sim = Simulator::new(planner, config, rewards, pushes, None)?;
        let obs = sim.observe()?;
        Ok(Self {
            sim,
            obs,
            episode_reward: 0.0,
            push_rng,
            action_rng,
            planner,
            config,
            rewards,
            force_range,
        })
    }

    fn reset(&mut self) -> Result<()> {
        let pushes = random_push_schedule(&mut self.push_rng, &self.config, self.force_range);
        self.sim = Simulator::new(self.planner, self.config, self.rewards, pushes, None)?;
        self.obs = self.sim.observe()?;
        self.episode_reward = 0.0;
        Ok(())
    }

    fn collect(&mut self, params: &PolicyParams, steps: usize, reward_scale: f64) -> Result<Segment> {
        let mut seg = Segment {
            x: Vec::with_capacity(steps),
            u: Vec::with_capacity(steps),
            log_prob: Vec::with_capacity(steps),
            value: Vec::with_capacity(steps),
            next_value: Vec::with_capacity(steps),
            reward: Vec::with_capacity(steps),
            boundary: Vec::with_capacity(steps),
            finished: Vec::new(),
        };
        for step in 0..steps {
            let x = params.normalize(&self.obs.to_array());
            let s = params.sample(&x, &mut self.action_rng);
            let action = PolicyParams::to_action(&params.squash(&s.u));
            let out = self.sim.advance(action, None)?;
            self.episode_reward += out.reward.total;
            seg.x.push(x);
            seg.u.push(s.u);
            seg.log_prob.push(s.log_prob);
            seg.value.push(s.value);
            seg.reward.push(out.reward.total * reward_scale);
            if out.done {
                let next = if out.truncated {
                    let o = self.sim.observe()?;
                    params.value(&params.normalize(&o.to_array()))
                } else {
                    0.0
                };
                seg.next_value.push(next);
                seg.boundary.push(true);
                seg.finished.push(Finished {
                    reward: self.episode_reward,
                    status: self.sim.state().status,
                });
                self.reset()?;
            } else {
                self.obs = self.sim.observe()?;
                let next = params.value(&params.normalize(&self.obs.to_array()));
                seg.next_value.push(next);
                seg.boundary.push(step + 1 == steps);
            }
        }
        Ok(seg)
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: PolicyParams,
    pub curve: Vec<IterationStats>,
}

fn diverged(cfg: &PpoConfig, iteration: usize, stats: &LossStats, params: &PolicyParams, why: &str) -> Error {
    let mut msg = format!("{why} at iteration {iteration}: {stats:?}");
    if let Some(dir) = &cfg.dump_dir {
        let path = dir.join(format!("diverged_iter{iteration}.json"));
        let dump = serde_json::json!({ "iteration": iteration, "why": why, "loss": stats, "params": params });
        match std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, dump.to_string())) {
            Ok(()) => msg.push_str(&format!(" (dump: {})", path.display())),
            Err(e) => msg.push_str(&format!(" (dump failed: {e})")),
        }
    }
    Error::Training(msg)
}

/// Trains from a fresh initialization, or continues from `init`.
pub fn train(
    cfg: &PpoConfig,
    planner: PlannerConfig,
    sim: SimConfig,
    rewards: RewardParams,
    init: Option<PolicyParams>,
    mut progress: impl FnMut(&IterationStats),
) -> Result<TrainResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = match init {
        Some(p) => p,
        None => PolicyParams::for_adjustment(cfg.hidden, cfg.init_log_std, &mut rng),
    };
    let force_range = (cfg.force_range[0], cfg.force_range[1]);
    let mut workers = (0..cfg.n_envs as u64)
        .map(|id| Worker::new(cfg.seed, id, planner, sim, rewards, force_range))
        .collect::<Result<Vec<_>>>()?;
    let steps = cfg.batch_size / cfg.n_envs;
    let coefs = LossCoefs {
        clip_ratio: cfg.clip_ratio,
        entropy_coef: cfg.entropy_coef,
        value_coef: cfg.value_coef,
    };
    let mut flat = flatten(&params);
    let mut adam = Adam::new(flat.len());
    let mut recent: Vec<Finished> = Vec::new();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let obs_dim = params.obs_dim();
    let act_dim = params.act_dim();

    for iteration in 0..cfg.iterations {
        let snapshot = &params;
        let segments: Vec<Segment> = workers
            .par_iter_mut()
            .map(|w| w.collect(snapshot, steps, cfg.reward_scale))
            .collect::<Result<_>>()?;

        let n = cfg.batch_size;
        let mut x = Array2::zeros((n, obs_dim));
        let mut u = Array2::zeros((n, act_dim));
        let mut logp = Array1::zeros(n);
        let mut adv = Array1::zeros(n);
        let mut ret = Array1::zeros(n);
        let mut row = 0;
        for seg in &segments {
            let (a, r) = gae(&seg.reward, &seg.value, &seg.next_value, &seg.boundary, cfg.discount, cfg.gae_lambda);
            for t in 0..seg.reward.len() {
                x.row_mut(row).assign(&ArrayView1::from(&seg.x[t]));
                u.row_mut(row).assign(&ArrayView1::from(&seg.u[t]));
                logp[row] = seg.log_prob[t];
                adv[row] = a[t];
                ret[row] = r[t];
                row += 1;
            }
            recent.extend(seg.finished.iter().copied());
        }
        let finished_now: usize = segments.iter().map(|s| s.finished.len()).sum();
        let mean = adv.mean().unwrap_or(0.0);
        let std = adv.std(0.0).max(1e-8);
        adv.mapv_inplace(|a| (a - mean) / std);

        let mut order: Vec<usize> = (0..n).collect();
        let mut last = LossStats::default();
        let mut first_dev = f64::NAN;
        for epoch in 0..cfg.epochs_per_batch {
            order.shuffle(&mut rng);
            for (k, chunk) in order.chunks(cfg.minibatch_size).enumerate() {
                let xb = x.select(Axis(0), chunk);
                let ub = u.select(Axis(0), chunk);
                let lb = logp.select(Axis(0), chunk);
                let ab = adv.select(Axis(0), chunk);
                let rb = ret.select(Axis(0), chunk);
                let mb = Minibatch {
                    x: xb.view(),
                    u: ub.view(),
                    log_prob_old: lb.view(),
                    advantages: ab.view(),
                    returns: rb.view(),
                };
                let (stats, grads) = ppo_loss(&params, &mb, &coefs);
                if epoch == 0 && k == 0 {
                    first_dev = stats.max_ratio_deviation;
                }
                let mut g = flatten_grads(&grads);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !stats.total.is_finite() || !norm.is_finite() {
                    return Err(diverged(cfg, iteration, &stats, &params, "non-finite loss or gradient"));
                }
                if norm > 1e8 {
                    return Err(diverged(cfg, iteration, &stats, &params, "exploding gradient"));
                }
                if norm > cfg.max_grad_norm {
                    let s = cfg.max_grad_norm / norm;
                    g.iter_mut().for_each(|v| *v *= s);
                }
                adam.step(&mut flat, &g, cfg.learning_rate);
                assign(&mut params, &flat);
                last = stats;
            }
        }
        if !params.is_finite() {
            return Err(diverged(cfg, iteration, &last, &params, "non-finite parameters"));
        }

        if recent.len() > 20 {
            recent.drain(..recent.len() - 20);
        }
        let k = recent.len().max(1) as f64;
        let mean_reward = if recent.is_empty() {
            f64::NAN
        } else {
            recent.iter().map(|f| f.reward).sum::<f64>() / k
        };
        let std_reward = if recent.is_empty() {
            f64::NAN
        } else {
            (recent.iter().map(|f| (f.reward - mean_reward).powi(2)).sum::<f64>() / k).sqrt()
        };
        let stats = IterationStats {
            iteration,
            mean_reward,
            std_reward,
            fall_rate: recent.iter().filter(|f| f.status == SimStatus::Fallen).count() as f64 / k,
            collision_rate: recent.iter().filter(|f| f.status == SimStatus::SelfCollision).count() as f64 / k,
            episodes: finished_now,
            loss: last,
            first_ratio_deviation: first_dev,
        };
        progress(&stats);
        curve.push(stats);
    }
    Ok(TrainResult { params, curve })
}

/// Learning curve as CSV.
pub fn write_curve_csv<W: std::io::Write>(curve: &[IterationStats], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "mean_reward", "std_reward", "fall_rate", "collision_rate"])?;
    for s in curve {
        out.write_record([
            s.iteration.to_string(),
            format!("{:?}", s.mean_reward),
            format!("{:?}", s.std_reward),
            format!("{:?}", s.fall_rate),
            format!("{:?}", s.collision_rate),
        ])?;
    }
    out.flush()?;
    Ok(())
}
