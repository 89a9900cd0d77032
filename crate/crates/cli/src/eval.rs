//! Paired baseline-versus-policy evaluation with a bootstrap lower bound.

use std::io::Write;

use dcmstep::error::Result;
use dcmstep::sim::{random_push_schedule, run_episode, EpisodeOutcome, SimConfig, SimStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, LoadedPolicy};
use crate::sweep::{f, status_str};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPair {
    pub seed: u64,
    pub pushes: usize,
    pub baseline: EpisodeOutcome,
    pub policy: EpisodeOutcome,
}

/// Mean of a paired difference and its one-sided lower confidence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bootstrap {
    pub mean: f64,
    pub lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub policy: String,
    pub seeds: usize,
    pub confidence: f64,
    pub baseline_mean_reward: f64,
    pub policy_mean_reward: f64,
    /// Fraction of episodes ending early (fall or self-collision).
    pub baseline_fall_rate: f64,
    pub policy_fall_rate: f64,
    /// Policy reward minus baseline reward.
    pub reward_gain: Bootstrap,
    /// Baseline failure indicator minus policy failure indicator.
    pub fall_reduction: Bootstrap,
    pub config_hash: String,
    pub seed: u64,
}

impl EvalSummary {
    /// Both improvements are significant at the configured level.
    pub fn policy_better(&self) -> bool {
        self.reward_gain.lower > 0.0 && self.fall_reduction.lower > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pairs: Vec<EvalPair>,
    pub summary: EvalSummary,
}

/// Percentile bootstrap of the mean of `diffs`, resampling with replacement.
pub fn bootstrap_lower(diffs: &[f64], samples: usize, confidence: f64, seed: u64) -> Bootstrap {
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..samples)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let k = (((1.0 - confidence) * samples as f64).floor() as usize).min(samples - 1);
    Bootstrap { mean, lower: means[k] }
}

fn failed(o: &EpisodeOutcome) -> f64 {
    if o.status == SimStatus::Walking {
        0.0
    } else {
        1.0
    }
}

pub fn eval_sim(cfg: &ExperimentConfig) -> SimConfig {
    SimConfig {
        episode_length: cfg.eval.episode_length,
        ..cfg.sim
    }
}

/// Both controllers face the same push schedule for each seed.
pub fn run_eval(cfg: &ExperimentConfig, policy: &LoadedPolicy) -> Result<EvalReport> {
    let e = &cfg.eval;
    let sim = eval_sim(cfg);
    let range = (e.force_range[0], e.force_range[1]);
    let baseline = LoadedPolicy::Baseline;
    let pairs = (0..e.seeds as u64)
        .into_par_iter()
        .map(|i| -> Result<EvalPair> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i);
            let pushes = random_push_schedule(&mut rng, &sim, range);
            let run = |p: &LoadedPolicy| -> Result<EpisodeOutcome> {
                let mut inst = p.instance();
                Ok(run_episode(cfg.planner, sim, cfg.rewards, inst.as_mut(), pushes.clone(), None)?.0)
            };
            Ok(EvalPair {
                seed: i,
                pushes: pushes.len(),
                baseline: run(&baseline)?,
                policy: run(policy)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len() as f64;
    let mean = |g: &dyn Fn(&EvalPair) -> f64| pairs.iter().map(g).sum::<f64>() / n;
    let reward_diffs: Vec<f64> = pairs.iter().map(|p| p.policy.total_reward - p.baseline.total_reward).collect();
    let fall_diffs: Vec<f64> = pairs.iter().map(|p| failed(&p.baseline) - failed(&p.policy)).collect();
    let summary = EvalSummary {
        policy: policy.label().to_string(),
        seeds: pairs.len(),
        confidence: e.confidence,
        baseline_mean_reward: mean(&|p| p.baseline.total_reward),
        policy_mean_reward: mean(&|p| p.policy.total_reward),
        baseline_fall_rate: mean(&|p| failed(&p.baseline)),
        policy_fall_rate: mean(&|p| failed(&p.policy)),
        reward_gain: bootstrap_lower(&reward_diffs, e.bootstrap_samples, e.confidence, cfg.seed),
        fall_reduction: bootstrap_lower(&fall_diffs, e.bootstrap_samples, e.confidence, cfg.seed.wrapping_add(1)),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    Ok(EvalReport { pairs, summary })
}

pub fn write_eval_csv<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let s = &report.summary;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "seed",
        "pushes",
        "baseline_status",
        "baseline_end_time",
        "baseline_reward",
        "policy_status",
        "policy_end_time",
        "policy_reward",
        "policy",
        "config_hash",
        "run_seed",
    ])?;
    for p in &report.pairs {
        out.write_record([
            p.seed.to_string(),
            p.pushes.to_string(),
            status_str(p.baseline.status).to_string(),
            f(p.baseline.end_time),
            f(p.baseline.total_reward),
            status_str(p.policy.status).to_string(),
            f(p.policy.end_time),
            f(p.policy.total_reward),
            s.policy.clone(),
            s.config_hash.clone(),
            s.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
