//! Line-oriented workload files and a seeded workload generator.
//!
//! One procedure per line as space-separated `key=value` pairs:
//!
//! ```text
//! # id size time [arrival] [priority] [owner] [class] [segments]
//! id=1 size=4 time=3
//! id=2 size=6 time=2 arrival=1 priority=5 owner=alice class=IoBound segments=2,4
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{CoreError, ProcId, Procedure, ProcedureSet, WorkClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate procedure id {id}")]
    DuplicateId { line: usize, id: ProcId },
    #[error("line {line}: {field}: {message}")]
    Invariant { line: usize, field: &'static str, message: String },
}

impl WorkloadError {
    pub fn line(&self) -> usize {
        match self {
            WorkloadError::Syntax { line, .. }
            | WorkloadError::DuplicateId { line, .. }
            | WorkloadError::Invariant { line, .. } => *line,
        }
    }
}

fn number(line: usize, key: &str, value: &str) -> Result<u64, WorkloadError> {
    value.parse().map_err(|_| WorkloadError::Syntax {
        line,
        message: format!("{key}: expected a natural number, got {value:?}"),
    })
}

fn parse_record(line: usize, text: &str) -> Result<Procedure, WorkloadError> {
    let mut id = None;
    let mut size = None;
    let mut time = None;
    let mut arrival = 0;
    let mut priority = None;
    let mut owner = None;
    let mut class = None;
    let mut segments = None;
    let mut seen = BTreeSet::new();
    for pair in text.split_whitespace() {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| WorkloadError::Syntax { line, message: format!("expected key=value, got {pair:?}") })?;
        if !seen.insert(key) {
            return Err(WorkloadError::Syntax { line, message: format!("repeated key {key:?}") });
        }
        match key {
            "id" => {
                let n = number(line, key, value)?;
                id = Some(
                    u32::try_from(n)
                        .map_err(|_| WorkloadError::Syntax { line, message: format!("id {n} out of range") })?,
                );
            }
            "size" => size = Some(number(line, key, value)?),
            "time" => time = Some(number(line, key, value)?),
            "arrival" => arrival = number(line, key, value)?,
            "priority" => priority = Some(number(line, key, value)?),
            "owner" => owner = Some(value.to_string()),
            "class" => {
                class = Some(match value {
                    "IoBound" => WorkClass::IoBound,
                    "CpuBound" => WorkClass::CpuBound,
                    _ => {
                        return Err(WorkloadError::Syntax {
                            line,
                            message: format!("class must be IoBound or CpuBound, got {value:?}"),
                        })
                    }
                })
            }
            "segments" => {
                segments = Some(value.split(',').map(|s| number(line, key, s)).collect::<Result<Vec<_>, _>>()?)
            }
            _ => return Err(WorkloadError::Syntax { line, message: format!("unknown key {key:?}") }),
        }
    }
    let missing = |field: &str| WorkloadError::Syntax { line, message: format!("missing {field}") };
    let (id, size, time) =
        (id.ok_or_else(|| missing("id"))?, size.ok_or_else(|| missing("size"))?, time.ok_or_else(|| missing("time"))?);
    if time == 0 {
        return Err(WorkloadError::Invariant { line, field: "time", message: "time must be ≥ 1".into() });
    }
    let mut p = Procedure::new(id, size, time)
        .map_err(|e| WorkloadError::Invariant { line, field: "time", message: e.to_string() })?
        .arriving_at(arrival);
    p.priority = priority;
    p.owner = owner;
    p.class = class;
    if let Some(segs) = segments {
        p = p.with_segments(segs);
        p.validate().map_err(|e| WorkloadError::Invariant {
            line,
            field: "segments",
            message: match e {
                CoreError::InvalidProcedure { reason, .. } => reason,
                other => other.to_string(),
            },
        })?;
    }
    Ok(p)
}

/// Parses a workload file into an arrival-ordered procedure set.
pub fn parse_workload(text: &str) -> Result<ProcedureSet, WorkloadError> {
    let mut members = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split_once('#').map_or(raw, |(b, _)| b).trim();
        if body.is_empty() {
            continue;
        }
        let p = parse_record(line, body)?;
        if !ids.insert(p.id) {
            return Err(WorkloadError::DuplicateId { line, id: p.id });
        }
        members.push(p);
    }
    Ok(ProcedureSet::arrival_ordered(members).expect("ids checked above"))
}

/// Serializes a workload in the format read by [`parse_workload`].
pub fn emit_workload(set: &ProcedureSet) -> String {
    let mut out = String::new();
    for p in set.iter() {
        let _ = write!(out, "id={} size={} time={} arrival={}", p.id.0, p.size, p.time, p.arrival);
        if let Some(pr) = p.priority {
            let _ = write!(out, " priority={pr}");
        }
        if let Some(o) = &p.owner {
            let _ = write!(out, " owner={o}");
        }
        if let Some(c) = p.class {
            let _ = write!(out, " class={}", c.as_str());
        }
        if let Some(segs) = &p.segments {
            let list: Vec<String> = segs.iter().map(u64::to_string).collect();
            let _ = write!(out, " segments={}", list.join(","));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenParams {
    pub count: usize,
    pub max_size: u64,
    pub max_time: u64,
    /// Largest gap between consecutive arrivals; 0 gives a batch.
    pub max_gap: u64,
    pub priorities: bool,
    pub classes: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { count: 10, max_size: 16, max_time: 10, max_gap: 3, priorities: true, classes: true }
    }
}

/// Random workload; the same seed always yields the same set.
pub fn generate(seed: u64, params: &GenParams) -> ProcedureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arrival = 0;
    let members = (1..=params.count as u32)
        .map(|id| {
            let mut p = Procedure::new(
                id,
                rng.random_range(1..=params.max_size.max(1)),
                rng.random_range(1..=params.max_time.max(1)),
            )
            .expect("time ≥ 1")
            .arriving_at(arrival);
            if params.priorities {
                p = p.with_priority(rng.random_range(0..10));
            }
            if params.classes {
                p = p.with_class(if rng.random_bool(0.5) { WorkClass::IoBound } else { WorkClass::CpuBound });
            }
            arrival += rng.random_range(0..=params.max_gap);
            p
        })
        .collect();
    ProcedureSet::arrival_ordered(members).expect("ids are distinct")
}
