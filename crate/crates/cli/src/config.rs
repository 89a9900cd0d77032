//! Experiment configuration: one strict JSON document.

use std::path::{Path, PathBuf};

use dcmstep::error::{Error, Result};
use dcmstep::gait::phase_duration;
use dcmstep::lip::PhaseKind;
use dcmstep::planner::PlannerConfig;
use dcmstep::rl::checkpoint::Checkpoint;
use dcmstep::rl::oracle::OracleThetaPolicy;
use dcmstep::rl::policy::{LearnedPolicy, PolicyParams};
use dcmstep::rl::ppo::PpoConfig;
use dcmstep::rl::reward::RewardParams;
use dcmstep::sim::{AdjustPolicy, SimConfig, ZeroPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which adjuster drives the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// No adjustment: the model-based planner alone.
    #[default]
    Baseline,
    /// Per-decision grid search over the region rotation.
    Oracle,
    Checkpoint(PathBuf),
}

/// When during the gait cycle a push starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseBucket {
    DsFirstHalf,
    DsSecondHalf,
    SsFirstHalf,
    SsSecondHalf,
}

impl PhaseBucket {
    pub const ALL: [PhaseBucket; 4] = [
        PhaseBucket::DsFirstHalf,
        PhaseBucket::DsSecondHalf,
        PhaseBucket::SsFirstHalf,
        PhaseBucket::SsSecondHalf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhaseBucket::DsFirstHalf => "ds_first_half",
            PhaseBucket::DsSecondHalf => "ds_second_half",
            PhaseBucket::SsFirstHalf => "ss_first_half",
            PhaseBucket::SsSecondHalf => "ss_second_half",
        }
    }

    fn kind_and_fraction(self) -> (PhaseKind, f64) {
        match self {
            PhaseBucket::DsFirstHalf => (PhaseKind::DoubleSupport, 0.25),
            PhaseBucket::DsSecondHalf => (PhaseKind::DoubleSupport, 0.75),
            PhaseBucket::SsFirstHalf => (PhaseKind::SingleSupport, 0.25),
            PhaseBucket::SsSecondHalf => (PhaseKind::SingleSupport, 0.75),
        }
    }

    /// Push start time: the middle of this half of the first matching phase
    /// after `after` seconds of undisturbed walking. Walking starts in single
    /// support and, undisturbed, follows the nominal timing exactly.
    pub fn push_start(self, planner: &PlannerConfig, after: f64) -> f64 {
        let (f, r) = (planner.gait.step_frequency, planner.gait.ss_ratio);
        let t_ss = phase_duration(PhaseKind::SingleSupport, f, r);
        let t_ds = phase_duration(PhaseKind::DoubleSupport, f, r);
        let cycle = t_ss + t_ds;
        let (kind, frac) = self.kind_and_fraction();
        let offset = match kind {
            PhaseKind::SingleSupport => frac * t_ss,
            PhaseKind::DoubleSupport => t_ss + frac * t_ds,
        };
        let k = ((after - offset) / cycle).ceil().max(0.0);
        // Snap to the control tick so the push lines up with the simulator.
        let t = k * cycle + offset;
        (t / planner.dt).round() * planner.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    /// Push magnitudes (N). Empty means a single undisturbed run.
    pub forces: Vec<f64>,
    pub directions_deg: Vec<f64>,
    pub buckets: Vec<PhaseBucket>,
    /// When non-zero, draw this many random (magnitude, direction, bucket)
    /// samples instead of the grid; magnitudes are uniform in
    /// `[min(forces), max(forces)]`.
    pub random_samples: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            forces: vec![100.0, 200.0, 300.0, 400.0],
            directions_deg: evenly_spaced(8),
            buckets: PhaseBucket::ALL.to_vec(),
            random_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeConfig {
    pub directions_deg: Vec<f64>,
    pub buckets: Vec<PhaseBucket>,
    /// Bisection stops when the bracket is this narrow (N).
    pub resolution: f64,
    /// First bracket; the upper end doubles until a failure is seen.
    pub initial_bracket: [f64; 2],
    /// Give up expanding past this magnitude (N).
    pub max_force: f64,
    /// Extra forces tested below the estimate and above the failure bracket
    /// to check that recoverability is monotone.
    pub monotonicity_probes: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            directions_deg: evenly_spaced(8),
            buckets: PhaseBucket::ALL.to_vec(),
            resolution: 10.0,
            initial_bracket: [50.0, 1000.0],
            max_force: 8000.0,
            monotonicity_probes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seeds: usize,
    /// Random pushes during evaluation episodes (N).
    pub force_range: [f64; 2],
    pub episode_length: f64,
    pub bootstrap_samples: usize,
    /// One-sided confidence level.
    pub confidence: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            force_range: [100.0, 300.0],
            episode_length: 20.0,
            bootstrap_samples: 10_000,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub planner: PlannerConfig,
    pub sim: SimConfig,
    pub rewards: RewardParams,
    pub ppo: PpoConfig,
    pub policy: PolicySpec,
    pub sweep: SweepGrid,
    pub envelope: EnvelopeConfig,
    pub eval: EvalConfig,
    /// Undisturbed walking before a sweep or envelope push (s).
    pub warmup: f64,
    /// Walking after the push ends before a trial counts as recovered (s).
    pub settle: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            sim: SimConfig::default(),
            rewards: RewardParams::default(),
            ppo: PpoConfig::default(),
            policy: PolicySpec::Baseline,
            sweep: SweepGrid::default(),
            envelope: EnvelopeConfig::default(),
            eval: EvalConfig::default(),
            warmup: 1.6,
            settle: 2.5,
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

pub fn evenly_spaced(n: usize) -> Vec<f64> {
    (0..n).map(|k| 360.0 * k as f64 / n as f64).collect()
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    /// Parses a config; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.sim.validate()?;
        self.ppo.validate()?;
        if (self.planner.dt - self.sim.dt).abs() > 1e-15 {
            return bad("planner and simulator ticks differ");
        }
        let s = &self.sweep;
        if s.forces.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return bad("sweep magnitudes must be positive");
        }
        if !s.forces.is_empty() && (s.directions_deg.is_empty() || s.buckets.is_empty()) {
            return bad("sweep needs directions and phase buckets when magnitudes are given");
        }
        if s.directions_deg.iter().any(|d| !d.is_finite()) {
            return bad("sweep directions must be finite");
        }
        let e = &self.envelope;
        if e.directions_deg.is_empty() || e.buckets.is_empty() || e.directions_deg.iter().any(|d| !d.is_finite()) {
            return bad("envelope grid must be nonempty and finite");
        }
        if !(e.resolution > 0.0) || !(e.initial_bracket[0] > 0.0) || !(e.initial_bracket[1] > e.initial_bracket[0]) {
            return bad("envelope resolution and bracket must be positive and ordered");
        }
        if !(e.max_force >= e.initial_bracket[1]) {
            return bad("envelope max force must be at least the initial upper bracket");
        }
        let v = &self.eval;
        if v.seeds == 0 || v.bootstrap_samples == 0 || !(v.confidence > 0.0 && v.confidence < 1.0) {
            return bad("eval needs seeds, bootstrap samples and a confidence in (0, 1)");
        }
        if !(v.force_range[0] >= 0.0 && v.force_range[1] >= v.force_range[0]) || !(v.episode_length > 0.0) {
            return bad("eval force range must be ordered and the episode positive");
        }
        if !(self.warmup >= 0.0) || !(self.settle > 0.0) {
            return bad("warmup must be non-negative and settle positive");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Episode length for a trial whose push starts at `push_start`.
    pub fn trial_sim(&self, push_start: f64) -> SimConfig {
        SimConfig {
            episode_length: push_start + self.sim.push_duration + self.settle,
            ..self.sim
        }
    }
}

/// A policy ready to be instantiated once per episode.
#[derive(Debug, Clone)]
pub enum LoadedPolicy {
    Baseline,
    Oracle,
    Learned(PolicyParams),
}

impl LoadedPolicy {
    pub fn load(spec: &PolicySpec) -> Result<Self> {
        Ok(match spec {
            PolicySpec::Baseline => LoadedPolicy::Baseline,
            PolicySpec::Oracle => LoadedPolicy::Oracle,
            PolicySpec::Checkpoint(path) => {
                let f = std::fs::File::open(path)
                    .map_err(|e| Error::Config(format!("cannot open checkpoint {}: {e}", path.display())))?;
                LoadedPolicy::Learned(Checkpoint::read(std::io::BufReader::new(f))?.params)
            }
        })
    }

    pub fn instance(&self) -> Box<dyn AdjustPolicy> {
        match self {
            LoadedPolicy::Baseline => Box::new(ZeroPolicy),
            LoadedPolicy::Oracle => Box::new(OracleThetaPolicy::default()),
            LoadedPolicy::Learned(p) => Box::new(LearnedPolicy::deterministic(p.clone())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LoadedPolicy::Baseline => "baseline",
            LoadedPolicy::Oracle => "oracle",
            LoadedPolicy::Learned(_) => "learned",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json("{}").is_ok());
        assert!(ExperimentConfig::from_json(r#"{"seed": 3, "sede": 4}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sim": {"dt": 0.001, "dtt": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sweep": {"forces": [-5]}}"#).is_err());
    }

    #[test]
    fn hash_ignores_out_dir_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out_dir: "elsewhere".into(),
            ..a.clone()
        };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn push_starts_land_in_their_buckets() {
        let p = PlannerConfig::default();
        let (f, r) = (p.gait.step_frequency, p.gait.ss_ratio);
        let cycle = 1.0 / f;
        for b in PhaseBucket::ALL {
            let t = b.push_start(&p, 1.6);
            assert!(t >= 1.6 - 1e-9);
            let phase = (t % cycle) / cycle;
            let (kind, frac) = b.kind_and_fraction();
            let expected = match kind {
                PhaseKind::SingleSupport => frac * r,
                PhaseKind::DoubleSupport => r + frac * (1.0 - r),
            };
            assert!((phase - expected).abs() < 2e-3, "{b:?}: {phase} vs {expected}");
        }
    }

    #[test]
    fn shipped_default_matches_code() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default.json");
        assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
    }
}
