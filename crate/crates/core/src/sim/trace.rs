//! Episode traces: line-delimited JSON (header first) and per-tick CSV.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Push, SimStatus};
use crate::error::{Error, Result};
use crate::gait::AdjustAction;
use crate::geometry::Vec3;
use crate::lip::{PhaseKind, Side};
use crate::planner::Fallback;
use crate::rl::observation::Observation;
use crate::rl::reward::RewardBreakdown;

pub const TRACE_SCHEMA_VERSION: u32 = 1;
const TRACE_SCHEMA: &str = "dcmstep-trace";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Free-form label (policy name, experiment id).
    pub label: String,
}

impl TraceHeader {
    pub fn new(config_hash: impl Into<String>, seed: u64, label: impl Into<String>) -> Self {
        Self {
            schema: TRACE_SCHEMA.into(),
            version: TRACE_SCHEMA_VERSION,
            config_hash: config_hash.into(),
            seed,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time: f64,
    pub com: Vec3,
    pub com_vel: Vec3,
    pub dcm: Vec3,
    pub dcm_ref: Vec3,
    pub vrp_ref: Vec3,
    pub vrp_cmd: Vec3,
    pub left: Vec3,
    pub right: Vec3,
    /// Phase the tick was planned in.
    pub phase: PhaseKind,
    pub stance: Side,
    pub remaining: f64,
    pub nominal_remaining: f64,
    pub eta: bool,
    pub f: f64,
    pub r: f64,
    pub theta: f64,
    pub fallback: Fallback,
    pub force: Vec3,
    pub status: SimStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub observation: Option<Observation>,
    pub action: AdjustAction,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footstep {
    pub time: f64,
    pub side: Side,
    pub position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub status: SimStatus,
    pub end_time: f64,
    pub total_reward: f64,
    pub decisions: usize,
    pub footsteps: usize,
    pub fallback_ticks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub pushes: Vec<Push>,
    pub ticks: Vec<TickRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub footsteps: Vec<Footstep>,
    pub outcome: Option<EpisodeOutcome>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Push(Push),
    Tick(TickRecord),
    Decision(DecisionRecord),
    Footstep(Footstep),
    Outcome(EpisodeOutcome),
}

impl EpisodeTrace {
    pub fn new(header: TraceHeader, pushes: Vec<Push>) -> Self {
        Self {
            header,
            pushes,
            ticks: Vec::new(),
            decisions: Vec::new(),
            footsteps: Vec::new(),
            outcome: None,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = |l: &Line| -> Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&Line::Header(self.header.clone()))?;
        for p in &self.pushes {
            line(&Line::Push(*p))?;
        }
        for t in &self.ticks {
            line(&Line::Tick(*t))?;
        }
        for d in &self.decisions {
            line(&Line::Decision(*d))?;
        }
        for f in &self.footsteps {
            line(&Line::Footstep(*f))?;
        }
        if let Some(o) = self.outcome {
            line(&Line::Outcome(o))?;
        }
        Ok(())
    }

    /// One row per tick.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "time", "com_x", "com_y", "com_z", "dcm_x", "dcm_y", "dcm_z", "dcm_ref_x", "dcm_ref_y", "vrp_cmd_x",
            "vrp_cmd_y", "vrp_cmd_z", "left_x", "left_y", "left_z", "right_x", "right_y", "right_z", "phase",
            "stance", "remaining", "nominal_remaining", "eta", "f", "r", "theta", "force_x", "force_y", "fallback",
            "reward", "status",
        ])?;
        let mut decisions = self.decisions.iter().peekable();
        for t in &self.ticks {
            // Reward is reported on the first tick of its decision period.
            let mut reward = String::new();
            if let Some(d) = decisions.peek() {
                if d.time < t.time {
                    reward = fmt(d.reward.total);
                    decisions.next();
                }
            }
            let row = [
                fmt(t.time),
                fmt(t.com.x),
                fmt(t.com.y),
                fmt(t.com.z),
                fmt(t.dcm.x),
                fmt(t.dcm.y),
                fmt(t.dcm.z),
                fmt(t.dcm_ref.x),
                fmt(t.dcm_ref.y),
                fmt(t.vrp_cmd.x),
                fmt(t.vrp_cmd.y),
                fmt(t.vrp_cmd.z),
                fmt(t.left.x),
                fmt(t.left.y),
                fmt(t.left.z),
                fmt(t.right.x),
                fmt(t.right.y),
                fmt(t.right.z),
                t.phase.short().to_string(),
                format!("{:?}", t.stance).to_lowercase(),
                fmt(t.remaining),
                fmt(t.nominal_remaining),
                u8::from(t.eta).to_string(),
                fmt(t.f),
                fmt(t.r),
                fmt(t.theta),
                fmt(t.force.x),
                fmt(t.force.y),
                serde_json::to_value(t.fallback)?.as_str().unwrap_or_default().to_string(),
                reward,
                serde_json::to_value(t.status)?.as_str().unwrap_or_default().to_string(),
            ];
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest round-tripping decimal form.
pub(crate) fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a trace written by [`EpisodeTrace::write_jsonl`].
pub fn read_trace_jsonl<R: BufRead>(r: R) -> Result<EpisodeTrace> {
    let mut lines = r.lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::Domain("empty trace file".into())),
    };
    let header = match serde_json::from_str::<serde_json::Value>(&first)? {
        v if v.get("type").and_then(|t| t.as_str()) == Some("header") => {
            let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0);
            let schema = v.get("schema").and_then(|x| x.as_str()).unwrap_or("");
            if schema != TRACE_SCHEMA || found != u64::from(TRACE_SCHEMA_VERSION) {
                return Err(Error::SchemaVersion {
                    expected: format!("{TRACE_SCHEMA} v{TRACE_SCHEMA_VERSION}"),
                    found: format!("{schema} v{found}"),
                });
            }
            match serde_json::from_value::<Line>(v)? {
                Line::Header(h) => h,
                _ => unreachable!("tag checked above"),
            }
        }
        _ => return Err(Error::Domain("trace does not start with a header line".into())),
    };
    let mut trace = EpisodeTrace::new(header, Vec::new());
    for l in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&l)? {
            Line::Header(_) => return Err(Error::Domain("duplicate trace header".into())),
            Line::Push(p) => trace.pushes.push(p),
            Line::Tick(t) => trace.ticks.push(t),
            Line::Decision(d) => trace.decisions.push(d),
            Line::Footstep(f) => trace.footsteps.push(f),
            Line::Outcome(o) => trace.outcome = Some(o),
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_mismatch_is_reported() {
        let text = "{\"type\":\"header\",\"schema\":\"dcmstep-trace\",\"version\":99,\"config_hash\":\"x\",\"seed\":1,\"label\":\"\"}\n";
        match read_trace_jsonl(text.as_bytes()) {
            Err(Error::SchemaVersion { expected, found }) => {
                assert!(expected.ends_with("v1"));
                assert!(found.ends_with("v99"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_trace_jsonl("".as_bytes()).is_err());
    }

    #[test]
    fn round_trip_header_only() {
        let t = EpisodeTrace::new(TraceHeader::new("abc", 3, "baseline"), vec![]);
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        assert_eq!(read_trace_jsonl(buf.as_slice()).unwrap(), t);
    }
}
