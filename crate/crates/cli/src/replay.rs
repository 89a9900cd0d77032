//! Renders a recorded episode: top-down footsteps with planned and measured
//! DCM, and the remaining-phase-time timeline.

use dcmstep::ankle::FootGeometry;
use dcmstep::error::Result;
use dcmstep::lip::Side;
use dcmstep::sim::EpisodeTrace;

use crate::svg::{padded_range, Figure, PALETTE};
use crate::sweep::f;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayArtifacts {
    pub footsteps_svg: String,
    pub timeline_svg: String,
    pub timeline_csv: String,
}

pub fn provenance(trace: &EpisodeTrace) -> String {
    format!(
        "config_hash={} seed={} label={}",
        trace.header.config_hash, trace.header.seed, trace.header.label
    )
}

pub fn render_replay(trace: &EpisodeTrace, foot: &FootGeometry) -> Result<ReplayArtifacts> {
    let prov = provenance(trace);
    let h = foot.half_extents();

    // Initial footprints are the feet at the first tick.
    let mut steps: Vec<(Side, f64, f64)> = Vec::new();
    if let Some(t0) = trace.ticks.first() {
        steps.push((Side::Left, t0.left.x, t0.left.y));
        steps.push((Side::Right, t0.right.x, t0.right.y));
    }
    steps.extend(trace.footsteps.iter().map(|s| (s.side, s.position.x, s.position.y)));

    let xs = steps
        .iter()
        .flat_map(|s| [s.1 - h.x, s.1 + h.x])
        .chain(trace.ticks.iter().flat_map(|t| [t.dcm.x, t.dcm_ref.x]));
    let ys = steps
        .iter()
        .flat_map(|s| [s.2 - h.y, s.2 + h.y])
        .chain(trace.ticks.iter().flat_map(|t| [t.dcm.y, t.dcm_ref.y]));
    let mut fig = Figure::equal_aspect(900.0, 420.0, padded_range(xs), padded_range(ys));
    fig.axes("x (m)", "y (m)");
    for (i, (side, x, y)) in steps.iter().enumerate() {
        let color = if *side == Side::Left { PALETTE[0] } else { PALETTE[1] };
        fig.rect(*x, *y, h.x, h.y, color);
        // Initial feet are 0; footsteps are numbered from 1.
        fig.text(*x, *y, &i.saturating_sub(1).to_string());
    }
    let planned: Vec<(f64, f64)> = trace.ticks.iter().map(|t| (t.dcm_ref.x, t.dcm_ref.y)).collect();
    let measured: Vec<(f64, f64)> = trace.ticks.iter().map(|t| (t.dcm.x, t.dcm.y)).collect();
    let com: Vec<(f64, f64)> = trace.ticks.iter().map(|t| (t.com.x, t.com.y)).collect();
    fig.polyline(&planned, PALETTE[3], true);
    fig.polyline(&measured, PALETTE[2], false);
    fig.polyline(&com, PALETTE[5], false);
    fig.legend(&[
        ("left foot", PALETTE[0]),
        ("right foot", PALETTE[1]),
        ("planned DCM", PALETTE[3]),
        ("measured DCM", PALETTE[2]),
        ("CoM", PALETTE[5]),
    ]);
    let footsteps_svg = fig.finish("Footsteps and DCM", &prov);

    let ts = trace.ticks.iter().map(|t| t.time);
    let rs = trace.ticks.iter().flat_map(|t| [t.remaining, t.nominal_remaining]).chain([0.0]);
    let mut tl = Figure::new(900.0, 320.0, padded_range(ts), padded_range(rs));
    tl.axes("time (s)", "remaining phase time (s)");
    let nominal: Vec<(f64, f64)> = trace.ticks.iter().map(|t| (t.time, t.nominal_remaining)).collect();
    let adjusted: Vec<(f64, f64)> = trace.ticks.iter().map(|t| (t.time, t.remaining)).collect();
    tl.polyline(&nominal, PALETTE[5], true);
    tl.polyline(&adjusted, PALETTE[0], false);
    tl.legend(&[("nominal", PALETTE[5]), ("adjusted", PALETTE[0])]);
    let timeline_svg = tl.finish("Remaining phase time", &prov);

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["time", "phase", "remaining", "nominal_remaining", "eta", "f", "r", "theta"])?;
    for t in &trace.ticks {
        out.write_record([
            f(t.time),
            t.phase.short().to_string(),
            f(t.remaining),
            f(t.nominal_remaining),
            u8::from(t.eta).to_string(),
            f(t.f),
            f(t.r),
            f(t.theta),
        ])?;
    }
    let timeline_csv = String::from_utf8(out.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
        .expect("csv output is utf-8");
    Ok(ReplayArtifacts {
        footsteps_svg,
        timeline_svg,
        timeline_csv,
    })
}
