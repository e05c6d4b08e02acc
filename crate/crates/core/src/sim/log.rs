//! JSON-lines episode logs, their schema check, and replay.
//!
//! A log is one JSON object per line, tagged by `kind`:
//!
//! - `header`: scenario, model, seed, noise level, engine configuration,
//!   the `D*` values used (sequence model only), prior, and initial plan
//! - `tick`: clock after advancing, executed positions, belief
//! - `correction`: requested and applied correction, whether the force
//!   was clamped, the `K` of the `D*` entry used, belief, deformed
//!   trajectory, and the replanned trajectory
//! - `final`: final belief, number of corrections, true and predicted
//!   candidate indices
//!
//! Replaying re-executes the recorded corrections and requires every
//! re-serialized record to match the logged line exactly.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::episode::{Engine, EngineConfig, Episode, InferenceModel};
use crate::dstar::DStarLibrary;
use crate::error::{Error, Result};
use crate::evidence::Belief;
use crate::rewards::Scenario;
use crate::trajectory::{Correction, Point, Trajectory};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        schema_version: u32,
        scenario: Box<Scenario>,
        model: InferenceModel,
        seed: u64,
        sigma: Option<f64>,
        engine: EngineConfig,
        dstar: BTreeMap<String, f64>,
        prior: Belief,
        initial_plan: Trajectory,
    },
    Tick {
        clock: usize,
        positions: Vec<Point>,
        belief: Belief,
    },
    Correction {
        clock: usize,
        requested: Correction,
        applied: Correction,
        clamped: bool,
        k_used: Option<usize>,
        belief: Belief,
        deformed: Trajectory,
        plan: Trajectory,
    },
    Final {
        clock: usize,
        belief: Belief,
        corrections: usize,
        true_theta_index: Option<usize>,
        predicted_theta_index: usize,
    },
}

impl LogRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Header { .. } => "header",
            Self::Tick { .. } => "tick",
            Self::Correction { .. } => "correction",
            Self::Final { .. } => "final",
        }
    }

    pub fn clock(&self) -> usize {
        match self {
            Self::Header { .. } => 0,
            Self::Tick { clock, .. } | Self::Correction { clock, .. } | Self::Final { clock, .. } => *clock,
        }
    }

    pub fn belief(&self) -> &Belief {
        match self {
            Self::Header { prior, .. } => prior,
            Self::Tick { belief, .. } | Self::Correction { belief, .. } | Self::Final { belief, .. } => belief,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// A complete, schema-checked episode log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    records: Vec<LogRecord>,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Log(msg.into())
}

impl EpisodeLog {
    pub fn from_records(records: Vec<LogRecord>) -> Result<Self> {
        validate_records(&records)?;
        Ok(Self { records })
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn scenario(&self) -> &Scenario {
        match &self.records[0] {
            LogRecord::Header { scenario, .. } => scenario,
            _ => unreachable!("validated"),
        }
    }

    pub fn model(&self) -> InferenceModel {
        match &self.records[0] {
            LogRecord::Header { model, .. } => *model,
            _ => unreachable!("validated"),
        }
    }

    pub fn seed(&self) -> u64 {
        match &self.records[0] {
            LogRecord::Header { seed, .. } => *seed,
            _ => unreachable!("validated"),
        }
    }

    fn final_record(&self) -> (&Belief, usize, Option<usize>, usize) {
        match self.records.last() {
            Some(LogRecord::Final {
                belief,
                corrections,
                true_theta_index,
                predicted_theta_index,
                ..
            }) => (belief, *corrections, *true_theta_index, *predicted_theta_index),
            _ => unreachable!("validated"),
        }
    }

    pub fn final_belief(&self) -> &Belief {
        self.final_record().0
    }

    pub fn num_corrections(&self) -> usize {
        self.final_record().1
    }

    pub fn true_theta_index(&self) -> Option<usize> {
        self.final_record().2
    }

    pub fn predicted_theta_index(&self) -> usize {
        self.final_record().3
    }

    /// Whether the prediction matches the declared true candidate.
    pub fn correct(&self) -> Option<bool> {
        self.true_theta_index().map(|t| t == self.predicted_theta_index())
    }

    /// Beliefs after the header: one per tick, correction, and the final
    /// record, in order.
    pub fn belief_trace(&self) -> impl Iterator<Item = (&'static str, usize, &Belief)> {
        self.records[1..].iter().map(|r| (r.kind(), r.clock(), r.belief()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| schema(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<LogRecord>>>()?;
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_jsonl())?)
    }
}

/// Structural checks: one header first, one final record last, clocks
/// non-decreasing and within the horizon, ticks gap-free, normalized
/// beliefs, correction count and predicted index consistent.
pub fn validate_records(records: &[LogRecord]) -> Result<()> {
    let (scenario, n) = match records.first() {
        Some(LogRecord::Header {
            schema_version,
            scenario,
            prior,
            ..
        }) => {
            if *schema_version != LOG_SCHEMA_VERSION {
                return Err(schema(format!("unsupported log schema version {schema_version}")));
            }
            (scenario, prior.len())
        }
        _ => return Err(schema("first record must be the header")),
    };
    if !matches!(records.last(), Some(LogRecord::Final { .. })) || records.len() < 2 {
        return Err(schema("last record must be the final record"));
    }
    let mut clock = 0;
    let mut corrections = 0;
    for (i, r) in records.iter().enumerate().skip(1) {
        let line = i + 1;
        match r {
            LogRecord::Header { .. } => return Err(schema(format!("line {line}: repeated header"))),
            LogRecord::Tick { clock: c, positions, .. } => {
                if *c != clock + 1 {
                    return Err(schema(format!("line {line}: tick {c} after clock {clock}")));
                }
                if positions.len() != scenario.num_agents {
                    return Err(schema(format!("line {line}: wrong number of positions")));
                }
                clock = *c;
            }
            LogRecord::Correction { clock: c, applied, .. } => {
                if *c != clock {
                    return Err(schema(format!("line {line}: correction stamped {c} at clock {clock}")));
                }
                if applied.timestep <= clock || applied.timestep >= scenario.horizon {
                    return Err(schema(format!("line {line}: correction time outside the active horizon")));
                }
                corrections += 1;
            }
            LogRecord::Final {
                clock: c,
                belief,
                corrections: k,
                predicted_theta_index,
                ..
            } => {
                if i != records.len() - 1 {
                    return Err(schema(format!("line {line}: final record before the end")));
                }
                if *c != clock || *k != corrections {
                    return Err(schema(format!("line {line}: final record disagrees with the events")));
                }
                if *predicted_theta_index != belief.argmax() {
                    return Err(schema(format!("line {line}: predicted index is not the belief argmax")));
                }
            }
        }
        if clock > scenario.horizon {
            return Err(schema(format!("line {line}: clock beyond the horizon")));
        }
        let b = r.belief();
        let total: f64 = b.probabilities().iter().sum();
        if b.len() != n || (total - 1.0).abs() > 1e-9 {
            return Err(schema(format!("line {line}: belief is not a distribution over {n} candidates")));
        }
    }
    Ok(())
}

/// First point where a replay departs from the log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    /// 1-based line number in the log.
    pub line: usize,
    pub kind: String,
    /// JSON pointer to the first differing value.
    pub path: String,
    pub expected: Value,
    pub actual: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub records: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

fn first_difference(expected: &Value, actual: &Value, path: &mut String) -> Option<(Value, Value)> {
    match (expected, actual) {
        (Value::Object(a), Value::Object(b)) => {
            let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
            for k in keys {
                let (x, y) = (a.get(k).unwrap_or(&Value::Null), b.get(k).unwrap_or(&Value::Null));
                let len = path.len();
                path.push('/');
                path.push_str(k);
                if let Some(d) = first_difference(x, y, path) {
                    return Some(d);
                }
                path.truncate(len);
            }
            None
        }
        (Value::Array(a), Value::Array(b)) if a.len() == b.len() => {
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                let len = path.len();
                path.push_str(&format!("/{i}"));
                if let Some(d) = first_difference(x, y, path) {
                    return Some(d);
                }
                path.truncate(len);
            }
            None
        }
        _ if expected == actual => None,
        _ => Some((expected.clone(), actual.clone())),
    }
}

/// Re-executes a JSON-lines log.
///
/// The engine is rebuilt from the header (including the recorded `D*`
/// values), the logged corrections are re-applied as requested, and each
/// produced record must equal the logged one value for value. When
/// `expected_model` is given and differs from the log's, the replay is
/// refused.
pub fn replay_jsonl(text: &str, expected_model: Option<InferenceModel>) -> Result<ReplayReport> {
    let log = EpisodeLog::from_jsonl(text)?;
    let raw: Vec<(usize, Value)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Ok((i + 1, serde_json::from_str(l)?)))
        .collect::<Result<_>>()?;

    let LogRecord::Header {
        scenario,
        model,
        seed,
        sigma,
        engine: config,
        dstar,
        ..
    } = &log.records[0]
    else {
        unreachable!("validated")
    };
    if let Some(m) = expected_model {
        if m != *model {
            return Err(Error::Log(format!("model mismatch: log was recorded with `{model}`, not `{m}`")));
        }
    }
    let library = (!dstar.is_empty()).then(|| DStarLibrary::from_dstar_table(dstar));
    let engine = Arc::new(Engine::new((**scenario).clone(), *config, library)?);
    let mut episode = Episode::new(engine, *model, *seed, *sigma)?;

    let compare = |produced: &LogRecord, idx: usize| -> Result<Option<Divergence>> {
        let actual = serde_json::to_value(produced)?;
        let (line, expected) = &raw[idx];
        let mut path = String::new();
        Ok(first_difference(expected, &actual, &mut path).map(|(e, a)| Divergence {
            line: *line,
            kind: produced.kind().to_string(),
            path,
            expected: e,
            actual: a,
        }))
    };
    let diverged = |d: Divergence, n: usize| ReplayReport {
        records: n,
        divergence: Some(d),
    };

    if let Some(d) = compare(&episode.records()[0], 0)? {
        return Ok(diverged(d, 1));
    }
    let n = log.records.len();
    for (idx, record) in log.records.iter().enumerate().skip(1) {
        let produced = match record {
            LogRecord::Tick { .. } => {
                episode.advance()?;
                episode.records().last().expect("tick").clone()
            }
            LogRecord::Correction { requested, .. } => {
                episode.apply_correction(*requested)?;
                episode.records().last().expect("correction").clone()
            }
            LogRecord::Final { .. } => {
                let finished = episode.clone().finalize()?;
                finished.records.last().expect("final").clone()
            }
            LogRecord::Header { .. } => unreachable!("validated"),
        };
        if let Some(d) = compare(&produced, idx)? {
            return Ok(diverged(d, idx + 1));
        }
    }
    Ok(ReplayReport {
        records: n,
        divergence: None,
    })
}

pub fn replay(log: &EpisodeLog, expected_model: Option<InferenceModel>) -> Result<ReplayReport> {
    replay_jsonl(&log.to_jsonl(), expected_model)
}
