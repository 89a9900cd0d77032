//! Experiment harness behind the `dcmstep` command: configuration, push
//! sweeps, envelope estimation, paired evaluation, trace replay and plots.

// Config validation uses `!(x > 0.0)` style checks on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod envelope;
pub mod eval;
pub mod replay;
pub mod svg;
pub mod sweep;

pub use config::{ExperimentConfig, LoadedPolicy, PhaseBucket, PolicySpec};
pub use envelope::{dominance_fraction, estimate_envelope, EnvelopePoint};
pub use eval::{run_eval, EvalReport, EvalSummary};
pub use sweep::{run_sweep, run_trial, SweepReport};
