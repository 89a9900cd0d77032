//! Push sweeps: one episode per (magnitude, direction, phase bucket).

use std::io::Write;

use dcmstep::error::Result;
use dcmstep::sim::{run_episode, Push, SimStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, LoadedPolicy, PhaseBucket};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub push_start: f64,
    pub status: SimStatus,
    pub end_time: f64,
    pub total_reward: f64,
}

impl TrialResult {
    pub fn success(&self) -> bool {
        self.status == SimStatus::Walking
    }
}

/// One episode: undisturbed warm-up, a push in `bucket`, then the settle
/// window. A zero magnitude runs the same episode without a push.
pub fn run_trial(
    cfg: &ExperimentConfig,
    policy: &LoadedPolicy,
    magnitude: f64,
    direction_deg: f64,
    bucket: PhaseBucket,
) -> Result<TrialResult> {
    let push_start = bucket.push_start(&cfg.planner, cfg.warmup);
    let sim = cfg.trial_sim(push_start);
    let pushes = if magnitude > 0.0 {
        vec![Push::horizontal(magnitude, direction_deg, push_start, cfg.sim.push_duration)]
    } else {
        Vec::new()
    };
    let mut p = policy.instance();
    let (out, _) = run_episode(cfg.planner, sim, cfg.rewards, p.as_mut(), pushes, None)?;
    Ok(TrialResult {
        push_start,
        status: out.status,
        end_time: out.end_time,
        total_reward: out.total_reward,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub direction_deg: f64,
    pub magnitude: f64,
    pub bucket: PhaseBucket,
    pub result: TrialResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// The grid had no magnitudes, so only undisturbed walking was run.
    pub no_disturbances: bool,
}

impl SweepReport {
    pub fn all_success(&self) -> bool {
        self.rows.iter().all(|r| r.result.success())
    }
}

/// The points to simulate, in output order.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<(f64, f64, PhaseBucket)> {
    let g = &cfg.sweep;
    if g.forces.is_empty() {
        return Vec::new();
    }
    if g.random_samples > 0 {
        let lo = g.forces.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.forces.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        return (0..g.random_samples)
            .map(|_| {
                let m = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let d = rng.random_range(0.0..360.0);
                let b = g.buckets[rng.random_range(0..g.buckets.len())];
                (m, d, b)
            })
            .collect();
    }
    let mut pts = Vec::new();
    for &b in &g.buckets {
        for &d in &g.directions_deg {
            for &m in &g.forces {
                pts.push((m, d, b));
            }
        }
    }
    pts
}

/// Runs every sweep point in parallel; row order follows [`sweep_points`].
pub fn run_sweep(cfg: &ExperimentConfig, policy: &LoadedPolicy) -> Result<SweepReport> {
    let pts = sweep_points(cfg);
    if pts.is_empty() {
        let r = run_trial(cfg, policy, 0.0, 0.0, PhaseBucket::SsFirstHalf)?;
        return Ok(SweepReport {
            rows: vec![SweepRow {
                direction_deg: 0.0,
                magnitude: 0.0,
                bucket: PhaseBucket::SsFirstHalf,
                result: r,
            }],
            no_disturbances: true,
        });
    }
    let rows = pts
        .par_iter()
        .map(|&(m, d, b)| {
            run_trial(cfg, policy, m, d, b).map(|result| SweepRow {
                direction_deg: d,
                magnitude: m,
                bucket: b,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        rows,
        no_disturbances: false,
    })
}

pub(crate) fn f(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn status_str(s: SimStatus) -> &'static str {
    match s {
        SimStatus::Walking => "walking",
        SimStatus::Fallen => "fallen",
        SimStatus::SelfCollision => "self_collision",
    }
}

pub fn write_sweep_csv<W: Write>(report: &SweepReport, config_hash: &str, seed: u64, policy: &str, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "direction_deg",
        "magnitude_n",
        "phase_bucket",
        "push_start",
        "success",
        "status",
        "end_time",
        "total_reward",
        "no_disturbances",
        "policy",
        "config_hash",
        "seed",
    ])?;
    for r in &report.rows {
        out.write_record([
            f(r.direction_deg),
            f(r.magnitude),
            r.bucket.name().to_string(),
            f(r.result.push_start),
            u8::from(r.result.success()).to_string(),
            status_str(r.result.status).to_string(),
            f(r.result.end_time),
            f(r.result.total_reward),
            u8::from(report.no_disturbances).to_string(),
            policy.to_string(),
            config_hash.to_string(),
            seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
