//! Per-iteration log records (one JSON object per line).

use std::collections::BTreeMap;
use std::io::Write;

use pesc::benchmarks::IterationRecord;
use pesc::controller::UpdateMode;
use pesc::domain::Domain;
use pesc::scheduler::Recommendation;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// JSON schema every [`RunRecord`] line validates against.
pub const RUN_RECORD_SCHEMA: &str = include_str!("../schema/run_record.schema.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Observed,
    Abandoned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendationRecord {
    pub x: Vec<f64>,
    pub expected_objective: f64,
    pub constraint_probs: Vec<f64>,
    pub feasible_mode: bool,
}

impl RecommendationRecord {
    pub fn new(r: &Recommendation, domain: &Domain) -> Self {
        Self {
            x: domain.from_unit(&r.x),
            expected_objective: r.expected_objective,
            constraint_probs: r.constraint_probs.clone(),
            feasible_mode: r.feasible_mode,
        }
    }
}

/// Wall-clock stamp plus run-relative durations, kept apart from the
/// deterministic fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// ISO-8601 UTC time at which the record was written.
    pub timestamp: String,
    /// Run clock (simulated for built-in problems) when the evaluation completed.
    pub elapsed_seconds: f64,
    pub bo_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub repetition: usize,
    pub iteration: usize,
    pub mode: UpdateMode,
    pub task: String,
    /// Input in the problem's own coordinates.
    pub x: Vec<f64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub values: BTreeMap<String, f64>,
    pub recommendation: Option<RecommendationRecord>,
    pub utility_gap: Option<f64>,
    pub timing: Timing,
}

pub fn now_iso() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunRecord {
    pub fn from_iteration(rep: usize, r: &IterationRecord, names: &[String], fns: &[usize], domain: &Domain) -> Self {
        Self {
            repetition: rep,
            iteration: r.iteration,
            mode: r.mode,
            task: r.task.clone(),
            x: domain.from_unit(&r.x),
            status: Status::Observed,
            error: None,
            values: fns.iter().zip(&r.values).map(|(&i, v)| (names[i].clone(), *v)).collect(),
            recommendation: r.recommendation.as_ref().map(|x| RecommendationRecord::new(x, domain)),
            utility_gap: r.utility_gap,
            timing: Timing { timestamp: now_iso(), elapsed_seconds: r.time, bo_seconds: r.bo_seconds },
        }
    }
}

/// Append-only JSONL writer enforcing a monotone iteration index per repetition.
pub struct TraceWriter<W: Write> {
    out: W,
    last: BTreeMap<usize, usize>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, last: BTreeMap::new() }
    }

    pub fn write(&mut self, r: &RunRecord) -> Result<(), CliError> {
        let prev = self.last.insert(r.repetition, r.iteration).unwrap_or(0);
        if r.iteration <= prev {
            return Err(CliError::Io(format!("iteration {} written after {prev}", r.iteration)));
        }
        let line = serde_json::to_string(r).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_trace(text: &str) -> Result<Vec<RunRecord>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Io(format!("trace line {}: {e}", i + 1))))
        .collect()
}
