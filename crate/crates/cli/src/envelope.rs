//! Recoverable-push envelopes by bisection on the push magnitude, one per
//! (direction, phase bucket) cell.

use std::io::Write;

use dcmstep::error::Result;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, LoadedPolicy, PhaseBucket};
use crate::sweep::{f, run_trial, SweepReport};
use crate::svg::polar_chart;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePoint {
    pub direction_deg: f64,
    pub bucket: PhaseBucket,
    /// Largest magnitude seen to recover (N); zero if even an undisturbed
    /// episode fails.
    pub max_recoverable_force: f64,
    /// Smallest magnitude seen to fail; `None` when expansion hit the cap.
    pub min_failure_force: Option<f64>,
    pub trials: usize,
    /// Outcomes at the monotonicity probes that contradict the bracket:
    /// `(magnitude, recovered)`.
    pub violations: Vec<(f64, bool)>,
}

impl EnvelopePoint {
    pub fn monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Bisection for one cell. The bracket starts at the configured pair and
/// its upper end doubles until a failure is observed.
pub fn estimate_cell(
    cfg: &ExperimentConfig,
    policy: &LoadedPolicy,
    direction_deg: f64,
    bucket: PhaseBucket,
) -> Result<EnvelopePoint> {
    let e = &cfg.envelope;
    let mut trials = 0;
    let mut recovers = |m: f64| -> Result<bool> {
        trials += 1;
        Ok(run_trial(cfg, policy, m, direction_deg, bucket)?.success())
    };
    let mut point = EnvelopePoint {
        direction_deg,
        bucket,
        max_recoverable_force: 0.0,
        min_failure_force: Some(0.0),
        trials: 0,
        violations: Vec::new(),
    };
    if !recovers(0.0)? {
        point.trials = trials;
        return Ok(point);
    }
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let [a, b] = e.initial_bracket;
    if !recovers(a)? {
        hi = a;
    } else {
        lo = a;
        let mut h = b;
        loop {
            if recovers(h)? {
                lo = h;
                if h >= e.max_force {
                    break;
                }
                h = (2.0 * h).min(e.max_force);
            } else {
                hi = h;
                break;
            }
        }
    }
    if hi.is_finite() {
        while hi - lo > e.resolution {
            let mid = 0.5 * (lo + hi);
            if recovers(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let n = e.monotonicity_probes;
    for k in 1..=n {
        if lo > 0.0 {
            let m = lo * k as f64 / (n + 1) as f64;
            if !recovers(m)? {
                point.violations.push((m, false));
            }
        }
        if hi.is_finite() {
            let m = hi * (1.0 + 0.25 * k as f64);
            if recovers(m)? {
                point.violations.push((m, true));
            }
        }
    }
    point.max_recoverable_force = lo;
    point.min_failure_force = hi.is_finite().then_some(hi);
    point.trials = trials;
    Ok(point)
}

/// Every configured cell, estimated in parallel; output is ordered by bucket
/// then direction.
pub fn estimate_envelope(cfg: &ExperimentConfig, policy: &LoadedPolicy) -> Result<Vec<EnvelopePoint>> {
    let cells: Vec<(f64, PhaseBucket)> = cfg
        .envelope
        .buckets
        .iter()
        .flat_map(|&b| cfg.envelope.directions_deg.iter().map(move |&d| (d, b)))
        .collect();
    cells
        .par_iter()
        .map(|&(d, b)| estimate_cell(cfg, policy, d, b))
        .collect()
}

/// Fraction of cells in which `a` recovers at least as much as `b`. Cells
/// are matched by position, so both must come from the same config.
pub fn dominance_fraction(a: &[EnvelopePoint], b: &[EnvelopePoint]) -> f64 {
    assert_eq!(a.len(), b.len(), "envelopes must cover the same cells");
    if a.is_empty() {
        return 1.0;
    }
    let wins = a
        .iter()
        .zip(b)
        .filter(|(x, y)| {
            debug_assert!(x.bucket == y.bucket && x.direction_deg == y.direction_deg);
            x.max_recoverable_force >= y.max_recoverable_force
        })
        .count();
    wins as f64 / a.len() as f64
}

/// Sweep outcomes that disagree with the envelope by more than the
/// resolution: a success well above it or a failure well below it.
pub fn incoherent_rows(sweep: &SweepReport, envelope: &[EnvelopePoint], resolution: f64) -> Vec<usize> {
    let mut bad = Vec::new();
    for (i, row) in sweep.rows.iter().enumerate() {
        let Some(p) = envelope
            .iter()
            .find(|p| p.bucket == row.bucket && (p.direction_deg - row.direction_deg).abs() < 1e-9)
        else {
            continue;
        };
        let ok = row.result.success();
        let upper = p.min_failure_force.unwrap_or(f64::INFINITY);
        if (ok && row.magnitude > upper + resolution) || (!ok && row.magnitude < p.max_recoverable_force - resolution) {
            bad.push(i);
        }
    }
    bad
}

pub fn write_envelope_csv<W: Write>(
    points: &[EnvelopePoint],
    config_hash: &str,
    seed: u64,
    policy: &str,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "direction_deg",
        "phase_bucket",
        "max_recoverable_n",
        "min_failure_n",
        "trials",
        "monotone",
        "violations",
        "policy",
        "config_hash",
        "seed",
    ])?;
    for p in points {
        let violations: Vec<String> = p
            .violations
            .iter()
            .map(|(m, ok)| format!("{}:{}", f(*m), if *ok { "recovered" } else { "failed" }))
            .collect();
        out.write_record([
            f(p.direction_deg),
            p.bucket.name().to_string(),
            f(p.max_recoverable_force),
            p.min_failure_force.map(f).unwrap_or_default(),
            p.trials.to_string(),
            u8::from(p.monotone()).to_string(),
            violations.join(";"),
            policy.to_string(),
            config_hash.to_string(),
            seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Polar plot with one curve per (policy, bucket).
pub fn envelope_svg(sets: &[(&str, &[EnvelopePoint])], provenance: &str) -> String {
    let mut series = Vec::new();
    for (label, points) in sets {
        for b in PhaseBucket::ALL {
            let pts: Vec<(f64, f64)> = points
                .iter()
                .filter(|p| p.bucket == b)
                .map(|p| (p.direction_deg, p.max_recoverable_force))
                .collect();
            if !pts.is_empty() {
                series.push((format!("{label} {}", b.name()), pts));
            }
        }
    }
    polar_chart("Maximal recoverable push (N)", provenance, &series)
}
