//! The case set: (state, action) exemplars with FIFO eviction, persisted as
//! one JSON object per line.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::decision::ActionMatrix;
use crate::metrics::SlotMetrics;

pub const DEFAULT_CAPACITY: usize = 10_000;

/// Slot-level summary stored with a case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub qos_system: f64,
    pub e_system: f64,
    pub mean_delay: f64,
}

impl From<&SlotMetrics> for CaseOutcome {
    fn from(m: &SlotMetrics) -> Self {
        Self {
            qos_system: m.qos_system,
            e_system: m.e_system,
            mean_delay: m.mean_delay(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    /// N×(K+3) normalised observation rows.
    pub state: Vec<Vec<f64>>,
    /// N×2K rows, ω columns then α columns.
    pub action: Vec<Vec<f64>>,
    pub outcome: Option<CaseOutcome>,
    /// Slot the case was recorded in.
    pub ts: u64,
}

impl CaseRecord {
    pub fn new(state: &Array2<f64>, action: &ActionMatrix, outcome: Option<CaseOutcome>, slot: u64) -> Self {
        Self {
            state: state.rows().into_iter().map(|r| r.to_vec()).collect(),
            action: action.to_rows(),
            outcome,
            ts: slot,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: String| Err(LlmError::InvalidCase(m));
        if self.state.len() != self.action.len() {
            return bad(format!("{} state rows but {} action rows", self.state.len(), self.action.len()));
        }
        let width = self.action.first().map_or(0, Vec::len);
        if width % 2 != 0 || self.action.iter().any(|r| r.len() != width) {
            return bad("action rows must share an even width".into());
        }
        let sw = self.state.first().map_or(0, Vec::len);
        if self.state.iter().any(|r| r.len() != sw) {
            return bad("state rows must share one width".into());
        }
        if let Some(x) = self.action.iter().flatten().find(|x| !(0.0..=1.0).contains(*x)) {
            return bad(format!("action entry {x} outside [0, 1]"));
        }
        if self.state.iter().flatten().any(|x| !x.is_finite()) {
            return bad("non-finite state entry".into());
        }
        Ok(())
    }

    pub fn n_types(&self) -> usize {
        self.action.first().map_or(0, |r| r.len() / 2)
    }

    pub fn action_matrix(&self) -> Result<ActionMatrix, LlmError> {
        Ok(ActionMatrix::from_rows(&self.action, self.n_types())?)
    }

    /// Euclidean distance between state matrices; infinite when shapes differ.
    pub fn distance(&self, state: &[Vec<f64>]) -> f64 {
        if self.state.len() != state.len() || self.state.iter().zip(state).any(|(a, b)| a.len() != b.len()) {
            return f64::INFINITY;
        }
        self.state
            .iter()
            .flatten()
            .zip(state.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSet {
    capacity: usize,
    records: VecDeque<CaseRecord>,
}

impl Default for CaseSet {
    fn default() -> Self {
        Self::new()
    }
}

impl CaseSet {
    pub fn new() -> Self {
        Self::with_capacity_limit(DEFAULT_CAPACITY)
    }

    pub fn with_capacity_limit(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            records: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends, evicting the oldest record when full.
    pub fn push(&mut self, record: CaseRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &CaseRecord> + ExactSizeIterator {
        self.records.iter()
    }

    pub fn get(&self, i: usize) -> Option<&CaseRecord> {
        self.records.get(i)
    }

    /// Indices by increasing distance to `state`; equal distances put the most
    /// recently added case first. Cases of another shape are left out.
    pub fn ranked(&self, state: &[Vec<f64>]) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.distance(state)))
            .filter(|(_, d)| d.is_finite())
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        ranked
    }

    pub fn nearest(&self, state: &[Vec<f64>]) -> Option<&CaseRecord> {
        self.ranked(state).first().map(|&(i, _)| &self.records[i])
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: Read>(input: R, capacity: usize) -> Result<Self, LlmError> {
        let mut set = Self::with_capacity_limit(capacity);
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| LlmError::InvalidCase(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: CaseRecord =
                serde_json::from_str(&line).map_err(|e| LlmError::InvalidCase(format!("line {}: {e}", i + 1)))?;
            r.validate()
                .map_err(|e| LlmError::InvalidCase(format!("line {}: {e}", i + 1)))?;
            set.push(r);
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let f = fs::File::create(path).map_err(|e| storage(path, e))?;
        self.write_jsonl(BufWriter::new(f)).map_err(|e| storage(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let f = fs::File::open(path).map_err(|e| storage(path, e))?;
        Self::read_jsonl(f, DEFAULT_CAPACITY)
    }

    /// Appends one record to a JSONL file without rewriting it.
    pub fn append_to_file(record: &CaseRecord, path: &Path) -> Result<(), LlmError> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| storage(path, e))?;
        let mut line = serde_json::to_string(record).map_err(|e| storage(path, e))?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| storage(path, e))
    }
}

fn storage(path: &Path, e: impl std::fmt::Display) -> LlmError {
    LlmError::Storage {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Validates and appends; the record is also written to `persist` if given.
pub fn append_case(set: &mut CaseSet, record: CaseRecord, persist: Option<&Path>) -> Result<(), LlmError> {
    record.validate()?;
    if let Some(p) = persist {
        CaseSet::append_to_file(&record, p)?;
    }
    set.push(record);
    Ok(())
}
