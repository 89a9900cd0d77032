//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use dcmstep::gait::AdjustAction;
use dcmstep::lip::DcmState;
use dcmstep::gait::GaitState;
use dcmstep::planner::Planner;
use dcmstep::rl::checkpoint::Checkpoint;
use dcmstep::rl::ppo::{train, write_curve_csv};
use dcmstep::sim::{random_push_schedule, read_trace_jsonl, run_episode, Push, SimConfig, Simulator, TraceHeader};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::{ExperimentConfig, LoadedPolicy, PhaseBucket, PolicySpec};
use crate::envelope::{envelope_svg, estimate_envelope, write_envelope_csv};
use crate::eval::{run_eval, write_eval_csv};
use crate::replay::render_replay;
use crate::sweep::{run_sweep, write_sweep_csv};

#[derive(Debug, Parser)]
#[command(name = "dcmstep", version, about = "DCM walking planner with step/timing adaptation: experiments and tools")]
struct Cli {
    /// Experiment configuration (JSON); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (also used for training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one planning tick and dump the QP and its solution.
    Plan {
        /// JSON with optional `dcm_state`, `gait` and `action`; the standing
        /// start is used for anything missing.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Run one episode and write its trace.
    Simulate {
        /// `baseline`, `oracle` or a checkpoint path.
        #[arg(long)]
        policy: Option<String>,
        /// Single push magnitude (N); random pushes from the eval range when
        /// omitted.
        #[arg(long)]
        force: Option<f64>,
        /// Single push direction (degrees, 0 = forward, 90 = left).
        #[arg(long, default_value_t = 90.0)]
        direction: f64,
        /// Phase bucket of the single push.
        #[arg(long, default_value = "ss_first_half")]
        bucket: String,
        /// Episode length (s).
        #[arg(long)]
        length: Option<f64>,
    },
    /// One episode per grid point; writes sweep.csv.
    Sweep {
        /// `baseline`, `oracle` or a checkpoint path.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Bisect the recoverable push per direction and phase bucket.
    Envelope {
        /// `baseline`, `oracle` or a checkpoint path.
        #[arg(long)]
        policy: Option<String>,
        /// Also estimate the baseline envelope and overlay it.
        #[arg(long)]
        compare_baseline: bool,
    },
    /// Train the adjustment policy; writes policy.json and learning_curve.csv.
    Train {
        /// Overrides the configured iteration count.
        #[arg(long)]
        iters: Option<usize>,
        /// Continue from this checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Paired comparison of a policy against the baseline.
    Eval {
        /// `baseline`, `oracle` or a checkpoint path.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Render a recorded trace to SVG and CSV.
    Replay {
        /// JSONL trace written by `simulate`.
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<dcmstep::error::Error> for Failure {
    fn from(e: dcmstep::error::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.ppo.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn parse_policy(arg: &Option<String>, cfg: &ExperimentConfig) -> Result<LoadedPolicy, Failure> {
    let spec = match arg.as_deref() {
        None => cfg.policy.clone(),
        Some("baseline") => PolicySpec::Baseline,
        Some("oracle") => PolicySpec::Oracle,
        Some(path) => PolicySpec::Checkpoint(PathBuf::from(path)),
    };
    LoadedPolicy::load(&spec).map_err(|e| Failure::Usage(e.to_string()))
}

fn parse_bucket(s: &str) -> Result<PhaseBucket, Failure> {
    PhaseBucket::ALL
        .into_iter()
        .find(|b| b.name() == s)
        .ok_or_else(|| {
            let names: Vec<&str> = PhaseBucket::ALL.iter().map(|b| b.name()).collect();
            Failure::Usage(format!("unknown phase bucket {s:?}; expected one of {}", names.join(", ")))
        })
}

/// Creates the output directory and opens every output file before any
/// simulation runs, so an unwritable destination fails immediately.
fn open_outputs(dir: &Path, names: &[&str]) -> Result<Vec<(PathBuf, BufWriter<File>)>, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    names
        .iter()
        .map(|n| {
            let p = dir.join(n);
            File::create(&p)
                .map(|f| (p.clone(), BufWriter::new(f)))
                .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display())))
        })
        .collect()
}

fn provenance(cfg: &ExperimentConfig) -> String {
    format!("config_hash={} seed={}", cfg.hash(), cfg.seed)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    let hash = cfg.hash();
    match &cli.command {
        Command::Plan { state } => cmd_plan(&cfg, state.as_deref()),
        Command::Simulate {
            policy,
            force,
            direction,
            bucket,
            length,
        } => {
            let policy = parse_policy(policy, &cfg)?;
            let bucket = parse_bucket(bucket)?;
            if let Some(f) = force {
                if !(*f >= 0.0) {
                    return Err(Failure::Usage("push force must be non-negative".into()));
                }
            }
            let mut outs = open_outputs(&cfg.out_dir, &["trace.jsonl", "trace.csv"])?;
            let sim = SimConfig {
                episode_length: length.unwrap_or(cfg.sim.episode_length),
                ..cfg.sim
            };
            let pushes = match force {
                Some(f) if *f > 0.0 => {
                    vec![Push::horizontal(*f, *direction, bucket.push_start(&cfg.planner, cfg.warmup), sim.push_duration)]
                }
                Some(_) => Vec::new(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    random_push_schedule(&mut rng, &sim, (cfg.eval.force_range[0], cfg.eval.force_range[1]))
                }
            };
            let header = TraceHeader::new(hash, cfg.seed, policy.label());
            let mut inst = policy.instance();
            let (outcome, trace) = run_episode(cfg.planner, sim, cfg.rewards, inst.as_mut(), pushes, Some(header))?;
            let trace = trace.expect("header given");
            trace.write_jsonl(&mut outs[0].1)?;
            trace.write_csv(&mut outs[1].1)?;
            flush_all(&mut outs)?;
            println!("{}", serde_json::to_string(&outcome)?);
            Ok(())
        }
        Command::Sweep { policy } => {
            let policy = parse_policy(policy, &cfg)?;
            let mut outs = open_outputs(&cfg.out_dir, &["sweep.csv"])?;
            let report = run_sweep(&cfg, &policy)?;
            write_sweep_csv(&report, &hash, cfg.seed, policy.label(), &mut outs[0].1)?;
            flush_all(&mut outs)?;
            let ok = report.rows.iter().filter(|r| r.result.success()).count();
            if report.no_disturbances {
                println!("no disturbances: undisturbed walking {}", if ok == 1 { "succeeded" } else { "failed" });
            } else {
                println!("{ok}/{} trials recovered", report.rows.len());
            }
            Ok(())
        }
        Command::Envelope {
            policy,
            compare_baseline,
        } => {
            let policy = parse_policy(policy, &cfg)?;
            let mut names = vec!["envelope.csv", "envelope.svg"];
            if *compare_baseline {
                names.push("envelope_baseline.csv");
            }
            let mut outs = open_outputs(&cfg.out_dir, &names)?;
            let points = estimate_envelope(&cfg, &policy)?;
            write_envelope_csv(&points, &hash, cfg.seed, policy.label(), &mut outs[0].1)?;
            let mut sets = vec![(policy.label(), points.as_slice())];
            let base;
            if *compare_baseline {
                base = estimate_envelope(&cfg, &LoadedPolicy::Baseline)?;
                write_envelope_csv(&base, &hash, cfg.seed, "baseline", &mut outs[2].1)?;
                sets.push(("baseline", base.as_slice()));
                println!(
                    "{} dominates baseline in {:.0}% of cells",
                    policy.label(),
                    100.0 * crate::envelope::dominance_fraction(&points, &base)
                );
            }
            outs[1].1.write_all(envelope_svg(&sets, &provenance(&cfg)).as_bytes())?;
            flush_all(&mut outs)?;
            for p in points.iter().filter(|p| !p.monotone()) {
                eprintln!(
                    "warning: non-monotone cell {}° {}: bracket [{}, {:?}], contradicting probes {:?}",
                    p.direction_deg,
                    p.bucket.name(),
                    p.max_recoverable_force,
                    p.min_failure_force,
                    p.violations
                );
            }
            Ok(())
        }
        Command::Train { iters, init } => {
            let mut ppo = cfg.ppo.clone();
            if let Some(n) = iters {
                ppo.iterations = *n;
            }
            ppo.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let init = match init {
                Some(p) => {
                    let f = File::open(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                    Some(Checkpoint::read(BufReader::new(f))?.params)
                }
                None => None,
            };
            if ppo.dump_dir.is_none() {
                ppo.dump_dir = Some(cfg.out_dir.clone());
            }
            let mut outs = open_outputs(&cfg.out_dir, &["policy.json", "learning_curve.csv"])?;
            let start = Instant::now();
            let result = train(&ppo, cfg.planner, cfg.sim, cfg.rewards, init, |s| {
                eprintln!(
                    "[{:7.1}s] iter {:4} reward {:9.1} ± {:8.1} fall {:.2} collision {:.2} kl {:.4}",
                    start.elapsed().as_secs_f64(),
                    s.iteration,
                    s.mean_reward,
                    s.std_reward,
                    s.fall_rate,
                    s.collision_rate,
                    s.loss.approx_kl
                );
            })?;
            let metadata = serde_json::json!({
                "config_hash": hash,
                "seed": ppo.seed,
                "iterations": ppo.iterations,
                "ppo": ppo_metadata(&ppo),
            });
            Checkpoint::new(result.params, metadata).write(&mut outs[0].1)?;
            write_curve_csv(&result.curve, &mut outs[1].1)?;
            flush_all(&mut outs)?;
            eprintln!("trained {} iterations in {:.1}s", ppo.iterations, start.elapsed().as_secs_f64());
            Ok(())
        }
        Command::Eval { policy } => {
            let policy = parse_policy(policy, &cfg)?;
            let mut outs = open_outputs(&cfg.out_dir, &["eval.csv", "eval_summary.json"])?;
            let report = run_eval(&cfg, &policy)?;
            write_eval_csv(&report, &mut outs[0].1)?;
            serde_json::to_writer_pretty(&mut outs[1].1, &report.summary)?;
            flush_all(&mut outs)?;
            let s = &report.summary;
            println!(
                "reward {:.1} vs baseline {:.1} (gain lower bound {:.1}); failure rate {:.2} vs {:.2} (reduction lower bound {:.2}); {}",
                s.policy_mean_reward,
                s.baseline_mean_reward,
                s.reward_gain.lower,
                s.policy_fall_rate,
                s.baseline_fall_rate,
                s.fall_reduction.lower,
                if s.policy_better() { "policy better" } else { "not significant" }
            );
            Ok(())
        }
        Command::Replay { trace } => {
            let f = File::open(trace).map_err(|e| Failure::Usage(format!("{}: {e}", trace.display())))?;
            let trace = read_trace_jsonl(BufReader::new(f))?;
            let mut outs = open_outputs(&cfg.out_dir, &["footsteps.svg", "timeline.svg", "timeline.csv"])?;
            let art = render_replay(&trace, &cfg.planner.foot)?;
            outs[0].1.write_all(art.footsteps_svg.as_bytes())?;
            outs[1].1.write_all(art.timeline_svg.as_bytes())?;
            outs[2].1.write_all(art.timeline_csv.as_bytes())?;
            flush_all(&mut outs)?;
            Ok(())
        }
    }
}

/// PPO settings worth keeping with a checkpoint; the dump directory is a
/// local path and would make checkpoints differ between machines.
fn ppo_metadata(ppo: &dcmstep::rl::ppo::PpoConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(ppo).expect("config serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("dump_dir");
    }
    v
}

fn flush_all(outs: &mut [(PathBuf, BufWriter<File>)]) -> Result<(), Failure> {
    for (p, w) in outs.iter_mut() {
        w.flush().map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanInput {
    dcm_state: Option<DcmState>,
    gait: Option<GaitState>,
    #[serde(default)]
    action: AdjustAction,
}

fn cmd_plan(cfg: &ExperimentConfig, state: Option<&Path>) -> Result<(), Failure> {
    let input: PlanInput = match state {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => PlanInput::default(),
    };
    let mut outs = open_outputs(&cfg.out_dir, &["plan.json"])?;
    let start = Simulator::new(cfg.planner, cfg.sim, cfg.rewards, Vec::new(), None)?;
    let dcm_state = input.dcm_state.unwrap_or(start.state().dcm_state);
    let gait = input.gait.unwrap_or(start.state().gait);
    let planner = Planner::new(cfg.planner)?;
    let detail = planner.plan_step_detailed(&dcm_state, &gait, &input.action, cfg.sim.timing_mode)?;
    let doc = serde_json::json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "dcm_state": dcm_state,
        "gait": gait,
        "action": input.action,
        "output": detail.output,
        "qp": detail.qp,
        "solution": detail.solution,
    });
    serde_json::to_writer_pretty(&mut outs[0].1, &doc)?;
    flush_all(&mut outs)?;
    let o = &detail.output;
    println!(
        "status {:?}, fallback {:?}, step error |{:.4}|, remaining {:.4}s (nominal {:.4}s)",
        o.status,
        o.fallback,
        o.split.step.xy().norm(),
        o.remaining,
        o.nominal_remaining
    );
    Ok(())
}
