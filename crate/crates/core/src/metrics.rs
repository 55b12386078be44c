//! Token emission latency and token error accounting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::ctc::BoundarySequence;
use crate::decoder::EmissionRecord;
use crate::error::{Error, Result};
use crate::math;

/// One step of the canonical edit alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    /// `(hyp index, ref index)`, tokens equal.
    Match(usize, usize),
    Substitute(usize, usize),
    /// Reference token missing from the hypothesis.
    Delete(usize),
    /// Hypothesis token with no reference counterpart.
    Insert(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_tokens: usize,
    /// `(S + I + D) / N` as a fraction; `0` when `N = 0` and nothing was inserted.
    pub rate: f64,
}

impl ErrorReport {
    fn finish(mut self) -> Self {
        let errors = (self.substitutions + self.insertions + self.deletions) as f64;
        self.rate = if self.reference_tokens == 0 {
            if errors == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            errors / self.reference_tokens as f64
        };
        self
    }

    /// Sum of several reports; the rate is recomputed from the totals.
    pub fn combine(reports: &[ErrorReport]) -> Self {
        let mut t = ErrorReport::default();
        for r in reports {
            t.substitutions += r.substitutions;
            t.insertions += r.insertions;
            t.deletions += r.deletions;
            t.reference_tokens += r.reference_tokens;
        }
        t.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatencyReport {
    pub latencies_ms: Vec<f64>,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
    pub p95: Option<f64>,
    pub deletions: usize,
}

impl LatencyReport {
    pub fn from_latencies(latencies_ms: Vec<f64>, deletions: usize) -> Self {
        let pick = |q| percentile(&latencies_ms, q).ok();
        Self { p50: pick(50.0), p90: pick(90.0), p95: pick(95.0), latencies_ms, deletions }
    }

    pub fn combine(reports: &[LatencyReport]) -> Self {
        let all: Vec<f64> = reports.iter().flat_map(|r| r.latencies_ms.iter().copied()).collect();
        Self::from_latencies(all, reports.iter().map(|r| r.deletions).sum())
    }
}

/// Minimal unit-cost edit alignment of `hyp` against `reference`, read from
/// one backtrace that prefers match, then substitution, deletion, insertion.
pub fn align(hyp: &[usize], reference: &[usize]) -> Vec<EditOp> {
    let (n, m) = (hyp.len(), reference.len());
    // d[i][j]: distance between hyp[..i] and reference[..j]
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i][j] = sub.min(d[i][j - 1] + 1).min(d[i - 1][j] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == reference[j - 1];
            if same && d[i][j] == d[i - 1][j - 1] {
                ops.push(EditOp::Match(i - 1, j - 1));
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && d[i][j] == d[i - 1][j - 1] + 1 {
                ops.push(EditOp::Substitute(i - 1, j - 1));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            ops.push(EditOp::Delete(j - 1));
            j -= 1;
        } else {
            ops.push(EditOp::Insert(i - 1));
            i -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn token_error_rate(hyp: &[usize], reference: &[usize]) -> ErrorReport {
    let mut r = ErrorReport { reference_tokens: reference.len(), ..ErrorReport::default() };
    for op in align(hyp, reference) {
        match op {
            EditOp::Match(..) => {}
            EditOp::Substitute(..) => r.substitutions += 1,
            EditOp::Delete(_) => r.deletions += 1,
            EditOp::Insert(_) => r.insertions += 1,
        }
    }
    r.finish()
}

/// Nearest-rank percentile: the `ceil(q/100 * N)`-th smallest value.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty list".into()));
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile q must be in (0, 100], got {}", q)));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = math::ceil(q / 100.0 * sorted.len() as f64) as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Emission latency of every matched or substituted token,
/// `(emission frame - reference boundary) * frame_ms`. Deleted reference
/// tokens are counted, not timed.
pub fn tel(
    emissions: &[EmissionRecord],
    reference_tokens: &[usize],
    reference: &BoundarySequence,
) -> Result<LatencyReport> {
    if !(reference.frame_ms > 0.0) {
        return Err(Error::InvalidArgument(format!("frame_ms must be positive, got {}", reference.frame_ms)));
    }
    if reference.len() != reference_tokens.len() {
        return Err(Error::Shape(format!(
            "{} reference tokens but {} boundaries",
            reference_tokens.len(),
            reference.len()
        )));
    }
    let hyp: Vec<usize> = emissions.iter().map(|e| e.token).collect();
    let mut latencies = Vec::new();
    let mut deletions = 0;
    for op in align(&hyp, reference_tokens) {
        match op {
            EditOp::Match(h, r) | EditOp::Substitute(h, r) => {
                let diff = emissions[h].frame as f64 - reference.boundaries[r] as f64;
                latencies.push(diff * reference.frame_ms);
            }
            EditOp::Delete(_) => deletions += 1,
            EditOp::Insert(_) => {}
        }
    }
    Ok(LatencyReport::from_latencies(latencies, deletions))
}
