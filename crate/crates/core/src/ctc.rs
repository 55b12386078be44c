//! CTC loss (log-space forward-backward) and Viterbi best-path alignment.
//!
//! The blank label is the last column of the log-probability matrix.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::math::{self, log_add, LOG_ZERO};

/// Where a boundary sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BoundarySource {
    GroundTruth,
    CtcViterbi,
    ExternalFile,
}

/// Per-token (1-based) frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySequence {
    pub boundaries: Vec<usize>,
    pub source: BoundarySource,
    pub frame_ms: f64,
}

impl BoundarySequence {
    pub fn new(boundaries: Vec<usize>, source: BoundarySource, frame_ms: f64) -> Self {
        Self { boundaries, source, frame_ms }
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// Non-decreasing and within `1..=frames`.
    pub fn validate(&self, frames: usize) -> Result<()> {
        for (k, &b) in self.boundaries.iter().enumerate() {
            if b == 0 || b > frames {
                return Err(Error::InvalidArgument(format!("boundary {} outside 1..={}", b, frames)));
            }
            if k > 0 && b < self.boundaries[k - 1] {
                return Err(Error::InvalidArgument("boundaries must be non-decreasing".into()));
            }
        }
        Ok(())
    }
}

/// Which frame of a token's run in the best path is its boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BoundaryRule {
    /// First frame of the run (spike onset).
    #[default]
    Onset,
    /// Most probable frame within the run.
    Peak,
}

/// Frame-level log-distributions over `V + 1` labels, with the blank last.
#[derive(Debug, Clone)]
pub struct CtcLattice {
    pub log_probs: Array,
    pub target: Vec<usize>,
}

impl CtcLattice {
    pub fn new(log_probs: Array, target: Vec<usize>) -> Result<Self> {
        let (frames, classes) = log_probs.dims2()?;
        if classes < 2 {
            return Err(Error::Shape("lattice needs at least one label plus blank".into()));
        }
        for t in 0..frames {
            let z = math::log_sum_exp(log_probs.row_slice(t));
            if z.abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("row {} is not a log-distribution ({})", t, z)));
            }
        }
        let lattice = Self { log_probs, target };
        lattice.check_target()?;
        Ok(lattice)
    }

    fn check_target(&self) -> Result<()> {
        let blank = self.blank();
        if let Some(&bad) = self.target.iter().find(|&&y| y >= blank) {
            return Err(Error::InvalidArgument(format!("target label {} collides with blank {}", bad, blank)));
        }
        let frames = self.frames();
        if frames == 0 {
            return Err(Error::Shape("lattice has no frames".into()));
        }
        if min_frames(&self.target) > frames {
            return Err(Error::NoAlignment(format!(
                "target of length {} cannot fit in {} frames",
                self.target.len(),
                frames
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.log_probs.shape()[0]
    }

    pub fn blank(&self) -> usize {
        self.log_probs.shape()[1] - 1
    }

    fn extended(&self) -> Vec<usize> {
        extend_with_blanks(&self.target, self.blank())
    }
}

/// Frames needed to emit `target`: one per token plus a blank between repeats.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn extend_with_blanks(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &y in target {
        ext.push(y);
        ext.push(blank);
    }
    ext
}

/// Whether state `s` of the extended sequence may be entered from `s - 2`.
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Log-space forward variables `T' x S`.
fn forward_vars(lp: &Array, ext: &[usize], blank: usize) -> Vec<Vec<f64>> {
    let frames = lp.shape()[0];
    let states = ext.len();
    let mut a = vec![vec![LOG_ZERO; states]; frames];
    a[0][0] = lp.get2(0, ext[0]);
    if states > 1 {
        a[0][1] = lp.get2(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = a[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, a[t - 1][s - 1]);
            }
            if can_skip(ext, s, blank) {
                acc = log_add(acc, a[t - 1][s - 2]);
            }
            a[t][s] = if acc <= LOG_ZERO { LOG_ZERO } else { acc + lp.get2(t, ext[s]) };
        }
    }
    a
}

fn backward_vars(lp: &Array, ext: &[usize], blank: usize) -> Vec<Vec<f64>> {
    let frames = lp.shape()[0];
    let states = ext.len();
    let mut b = vec![vec![LOG_ZERO; states]; frames];
    b[frames - 1][states - 1] = lp.get2(frames - 1, ext[states - 1]);
    if states > 1 {
        b[frames - 1][states - 2] = lp.get2(frames - 1, ext[states - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = b[t + 1][s];
            if s + 1 < states {
                acc = log_add(acc, b[t + 1][s + 1]);
            }
            if s + 2 < states && can_skip(ext, s + 2, blank) {
                acc = log_add(acc, b[t + 1][s + 2]);
            }
            b[t][s] = if acc <= LOG_ZERO { LOG_ZERO } else { acc + lp.get2(t, ext[s]) };
        }
    }
    b
}

fn total_log_prob(alpha_last: &[f64]) -> f64 {
    let n = alpha_last.len();
    if n == 1 {
        alpha_last[0]
    } else {
        log_add(alpha_last[n - 1], alpha_last[n - 2])
    }
}

/// `-log P(target | lattice)` summed over all CTC paths.
pub fn ctc_neg_log_likelihood(lattice: &CtcLattice) -> Result<f64> {
    let ext = lattice.extended();
    let a = forward_vars(&lattice.log_probs, &ext, lattice.blank());
    let lp = total_log_prob(&a[lattice.frames() - 1]);
    if lp <= LOG_ZERO / 2.0 {
        return Err(Error::NoAlignment("no CTC path collapses to the target".into()));
    }
    Ok(-lp)
}

struct CtcBackward {
    grad: Array,
}

impl CustomOp for CtcBackward {
    fn name(&self) -> &'static str {
        "ctc_loss"
    }

    fn backward(&self, grad: &Array, _inputs: &[&Array], _output: &Array) -> Vec<Array> {
        let g = grad.item();
        vec![self.grad.map(|v| v * g)]
    }
}

/// Differentiable CTC loss. `log_probs` is a `T' x (V + 1)` node holding
/// log-distributions (blank last).
pub fn ctc_loss(tape: &Tape, log_probs: Var, target: &[usize]) -> Result<Var> {
    let lp = tape.value(log_probs).clone();
    if lp.ndim() != 2 || lp.shape()[0] == 0 {
        return Err(Error::Shape(format!("ctc log_probs must be non-empty 2-D, got {:?}", lp.shape())));
    }
    let lattice = CtcLattice { log_probs: lp, target: target.to_vec() };
    lattice.check_target()?;
    let blank = lattice.blank();
    let ext = lattice.extended();
    let lpv = &lattice.log_probs;
    let a = forward_vars(lpv, &ext, blank);
    let b = backward_vars(lpv, &ext, blank);
    let frames = lattice.frames();
    let log_total = total_log_prob(&a[frames - 1]);
    if log_total <= LOG_ZERO / 2.0 {
        return Err(Error::NoAlignment("no CTC path collapses to the target".into()));
    }
    // d(-log P)/d log y[t,k] = -sum_{s: ext[s] = k} a[t,s] b[t,s] / (y[t,k] P)
    let classes = lpv.shape()[1];
    let mut grad = Array::zeros(&[frames, classes]);
    for t in 0..frames {
        for (s, &k) in ext.iter().enumerate() {
            let l = a[t][s] + b[t][s];
            if l <= LOG_ZERO {
                continue;
            }
            grad.data_mut()[t * classes + k] -= math::exp(l - lpv.get2(t, k) - log_total);
        }
    }
    tape.custom(&[log_probs], Array::scalar(-log_total), Box::new(CtcBackward { grad }))
}

/// Most probable single path (per-frame labels) that collapses to the target.
pub fn viterbi_alignment(lattice: &CtcLattice) -> Result<Vec<usize>> {
    let blank = lattice.blank();
    let ext = lattice.extended();
    let lp = &lattice.log_probs;
    let frames = lattice.frames();
    let states = ext.len();
    let mut score = vec![vec![LOG_ZERO; states]; frames];
    let mut back = vec![vec![0usize; states]; frames];
    score[0][0] = lp.get2(0, ext[0]);
    if states > 1 {
        score[0][1] = lp.get2(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..states {
            let mut best = (score[t - 1][s], s);
            if s >= 1 && score[t - 1][s - 1] > best.0 {
                best = (score[t - 1][s - 1], s - 1);
            }
            if can_skip(&ext, s, blank) && score[t - 1][s - 2] > best.0 {
                best = (score[t - 1][s - 2], s - 2);
            }
            if best.0 > LOG_ZERO {
                score[t][s] = best.0 + lp.get2(t, ext[s]);
                back[t][s] = best.1;
            }
        }
    }
    let last = &score[frames - 1];
    let mut s = if states > 1 && last[states - 2] > last[states - 1] { states - 2 } else { states - 1 };
    if last[s] <= LOG_ZERO {
        return Err(Error::NoAlignment("no CTC path collapses to the target".into()));
    }
    let mut path = vec![0usize; frames];
    for t in (0..frames).rev() {
        path[t] = ext[s];
        s = back[t][s];
    }
    Ok(path)
}

/// Log-probability of one frame-level path.
pub fn path_log_prob(log_probs: &Array, path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(t, &k)| log_probs.get2(t, k)).sum()
}

/// Collapse repeats then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    token_runs(path, blank).into_iter().map(|(label, _, _)| label).collect()
}

/// `(label, first frame, run length)` for each emitted token, 0-based frames.
fn token_runs(path: &[usize], blank: usize) -> Vec<(usize, usize, usize)> {
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    for (t, &k) in path.iter().enumerate() {
        if k == blank {
            continue;
        }
        match runs.last_mut() {
            Some(run) if t > 0 && path[t - 1] == k => run.2 += 1,
            _ => runs.push((k, t, 1)),
        }
    }
    runs
}

/// Token boundaries from a best path using the onset rule.
pub fn boundaries_from_alignment(
    path: &[usize],
    target: &[usize],
    blank: usize,
    frame_ms: f64,
) -> Result<BoundarySequence> {
    boundaries_with_rule(path, target, blank, frame_ms, BoundaryRule::Onset, None)
}

/// Token boundaries from a best path. `Peak` needs the lattice's log-probs.
pub fn boundaries_with_rule(
    path: &[usize],
    target: &[usize],
    blank: usize,
    frame_ms: f64,
    rule: BoundaryRule,
    log_probs: Option<&Array>,
) -> Result<BoundarySequence> {
    let runs = token_runs(path, blank);
    if runs.len() != target.len() || runs.iter().zip(target).any(|(r, &y)| r.0 != y) {
        return Err(Error::InvalidArgument("path does not collapse to the target".into()));
    }
    let boundaries = runs
        .iter()
        .map(|&(label, start, len)| match (rule, log_probs) {
            (BoundaryRule::Onset, _) => Ok(start + 1),
            (BoundaryRule::Peak, Some(lp)) => {
                let best = (start..start + len)
                    .max_by(|&a, &b| lp.get2(a, label).total_cmp(&lp.get2(b, label)).then(b.cmp(&a)))
                    .unwrap_or(start);
                Ok(best + 1)
            }
            (BoundaryRule::Peak, None) => {
                Err(Error::InvalidArgument("peak boundaries need log-probabilities".into()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundarySequence::new(boundaries, BoundarySource::CtcViterbi, frame_ms))
}
