//! Line records of the boundary, token, and emission files.

use std::path::Path;

use mocha_core::ctc::{BoundarySequence, BoundarySource};
use mocha_core::decoder::EmissionRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryRecord {
    pub utt_id: String,
    pub boundaries: Vec<usize>,
    pub source: BoundarySource,
    pub frame_ms: f64,
}

impl BoundaryRecord {
    pub fn new(utt_id: &str, seq: &BoundarySequence) -> Self {
        Self { utt_id: utt_id.into(), boundaries: seq.boundaries.clone(), source: seq.source, frame_ms: seq.frame_ms }
    }

    pub fn sequence(&self) -> BoundarySequence {
        BoundarySequence::new(self.boundaries.clone(), self.source, self.frame_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub utt_id: String,
    pub tokens: Vec<usize>,
}

/// One emitted token; `i` is the 1-based output position, `frame` the
/// 1-based encoder frame it fired at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionLine {
    pub utt_id: String,
    pub token: usize,
    pub i: usize,
    pub frame: usize,
    pub p: f64,
}

impl EmissionLine {
    pub fn new(utt_id: &str, e: &EmissionRecord) -> Self {
        Self { utt_id: utt_id.into(), token: e.token, i: e.i, frame: e.frame, p: e.p }
    }
}

pub fn write_boundaries(path: &Path, records: &[BoundaryRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_boundaries(path: &Path) -> Result<Vec<BoundaryRecord>> {
    read_jsonl(path)
}

pub fn write_emissions(path: &Path, lines: &[EmissionLine]) -> Result<()> {
    write_jsonl(path, lines)
}

pub fn read_emissions(path: &Path) -> Result<Vec<EmissionLine>> {
    read_jsonl(path)
}

/// Boundary sequences of `utt_ids` in order, looked up from `records`.
pub fn boundaries_for(records: &[BoundaryRecord], utt_ids: &[&str]) -> Result<Vec<BoundarySequence>> {
    let map: std::collections::HashMap<&str, &BoundaryRecord> =
        records.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    utt_ids
        .iter()
        .map(|id| {
            map.get(id)
                .map(|r| r.sequence())
                .ok_or_else(|| Error::config(format!("no reference boundaries for utterance {id}")))
        })
        .collect()
}
