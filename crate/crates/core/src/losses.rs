//! Alignment regularizers and the combined training objective.

use alloc::format;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::ctc::BoundarySequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub lambda_ctc: f64,
    pub lambda_qua: f64,
    pub lambda_latency: f64,
    pub lambda_se: f64,
    /// DeCoT slack in frames.
    pub delta: usize,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_ctc: 0.3, lambda_qua: 2.0, lambda_latency: 0.0, lambda_se: 0.0, delta: 2, tau: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda_ctc, self.lambda_qua, self.lambda_latency, self.lambda_se, self.tau];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_ctc) {
            return Err(Error::Config(format!("lambda_ctc must be in [0, 1], got {}", self.lambda_ctc)));
        }
        if !(0.0..1.0).contains(&self.lambda_se) {
            return Err(Error::Config(format!("lambda_se must be in [0, 1), got {}", self.lambda_se)));
        }
        if self.lambda_qua < 0.0 || self.lambda_latency < 0.0 {
            return Err(Error::Config("lambda_qua and lambda_latency must be non-negative".into()));
        }
        if self.lambda_latency > 0.0 && self.lambda_qua > 0.0 {
            return Err(Error::Config(format!(
                "lambda_latency = {} requires lambda_qua = 0, got {}",
                self.lambda_latency, self.lambda_qua
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// Scalar loss nodes. `l_total` is the weighted combination.
#[derive(Debug, Clone, Copy)]
pub struct LossBundle {
    pub l_mocha: Var,
    pub l_ctc: Var,
    pub l_qua: Var,
    pub l_latency: Var,
    pub l_total: Var,
}

/// `|count - sum(alpha)|`.
pub fn quantity_loss(tape: &Tape, alpha: Var, count: usize) -> Result<Var> {
    if tape.shape(alpha).len() != 2 {
        return Err(Error::Shape("alpha must be 2-D".into()));
    }
    let mass = tape.sum(alpha)?;
    tape.abs(tape.affine(mass, -1.0, count as f64)?)
}

/// `sum_j j * alpha_j` with 1-based `j`.
pub fn expected_boundary(alpha_row: &[f64]) -> f64 {
    alpha_row.iter().enumerate().map(|(j, a)| (j + 1) as f64 * a).sum()
}

/// Expected boundaries of every row of `alpha`, shape `rows x 1`.
pub fn expected_boundaries(tape: &Tape, alpha: Var) -> Result<Var> {
    let shape = tape.shape(alpha);
    if shape.len() != 2 {
        return Err(Error::Shape("alpha must be 2-D".into()));
    }
    let frames = shape[1];
    let idx = Array::new(&[frames, 1], (1..=frames).map(|j| j as f64).collect())?;
    tape.matmul(alpha, tape.constant(idx))
}

/// `(1/U) sum_i |b_ref_i - b_mocha_i|`, computed from the first `U` rows of
/// `alpha` where `U = b_ref.len()`.
pub fn latency_loss(tape: &Tape, b_ref: &BoundarySequence, alpha: Var) -> Result<Var> {
    let shape = tape.shape(alpha);
    let u = b_ref.len();
    if shape.len() != 2 || shape[0] != u {
        return Err(Error::Shape(format!("b_ref has {} tokens but alpha is {:?}", u, shape)));
    }
    if u == 0 {
        return Ok(tape.scalar(0.0));
    }
    let reference = Array::new(&[u, 1], b_ref.boundaries.iter().map(|&b| b as f64).collect())?;
    let diff = tape.sub(tape.constant(reference), expected_boundaries(tape, alpha)?)?;
    tape.mean(tape.abs(diff)?)
}

/// `(1 - l_ctc) l_mocha + l_ctc L_ctc + l_lat L_latency + l_qua L_qua`.
pub fn total_loss(
    tape: &Tape,
    l_mocha: Var,
    l_ctc: Var,
    l_qua: Var,
    l_latency: Var,
    weights: &LossWeights,
) -> Result<LossBundle> {
    weights.validate()?;
    let terms = [
        (l_mocha, 1.0 - weights.lambda_ctc),
        (l_ctc, weights.lambda_ctc),
        (l_latency, weights.lambda_latency),
        (l_qua, weights.lambda_qua),
    ];
    let mut total = tape.scalar(0.0);
    for (term, w) in terms {
        if !tape.shape(term).is_empty() {
            return Err(Error::Shape("loss terms must be scalars".into()));
        }
        total = tape.add(total, tape.scale(term, w)?)?;
    }
    Ok(LossBundle { l_mocha, l_ctc, l_qua, l_latency, l_total: total })
}
