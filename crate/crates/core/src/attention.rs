//! Monotonic chunkwise attention: selection probabilities, the StableEmit
//! discount, expected alignments (recursive and parallel forms),
//! delay-constrained path masking, and chunkwise attention weights.
//!
//! Frame indices exposed to callers (boundaries, mask limits) are 1-based.
//! Row `i` of an alignment matrix is token `i + 1`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::autodiff::{CustomOp, Tape, Var};
use crate::ctc::BoundarySequence;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{normal_array, Rng64};

/// Selection probabilities are clamped to `[P_FLOOR, 1 - P_FLOOR]` before
/// entering either alignment recurrence.
pub const P_FLOOR: f64 = 1e-12;

/// Floor on the chunk-softmax denominators. Only reached when every energy
/// in a window underflows; its square is still a normal `f64`, so the
/// quotient's gradient stays finite.
pub const DENOM_FLOOR: f64 = 1e-150;

/// Raw and discounted selection probabilities for a block of tokens.
#[derive(Debug, Clone, Copy)]
pub struct SelectionMatrix {
    /// `rows x T'`, each entry in `[0, 1]`.
    pub p: Var,
    /// `(1 - lambda_se) * p`.
    pub p_discounted: Var,
    pub lambda_se: f64,
}

/// Expected alignment and chunkwise weights for one utterance.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentPosterior {
    pub alpha: Var,
    pub beta: Var,
    pub chunk_width: usize,
}

/// Delay constraint: token `i` may not place its boundary after frame
/// `b_ref[i] + delta`. Tokens past the end of `b_ref` are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMask {
    pub b_ref: BoundarySequence,
    pub delta: usize,
}

impl PathMask {
    pub fn new(b_ref: BoundarySequence, delta: usize, frames: usize) -> Result<Self> {
        b_ref.validate(frames)?;
        Ok(Self { b_ref, delta })
    }

    /// Last allowed (1-based) frame for row `i`, if constrained.
    pub fn limit(&self, i: usize) -> Option<usize> {
        self.b_ref.boundaries.get(i).map(|&b| b + self.delta)
    }
}

/// Trainable variables of the monotonic energy
/// `e = g * (v . tanh(W q + V h + b)) / |v| + r`.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicEnergy {
    pub w_query: Var,
    pub w_key: Var,
    pub bias: Var,
    pub v: Var,
    pub gain: Var,
    pub offset: Var,
}

/// Trainable variables of the chunk energy `u = v . tanh(W q + V h + b)`.
#[derive(Debug, Clone, Copy)]
pub struct ChunkEnergy {
    pub w_query: Var,
    pub w_key: Var,
    pub bias: Var,
    pub v: Var,
}

/// `tanh(q W + K + b) v` for each query row against pre-projected keys
/// `K` (`T' x a`); returns `rows x T'`.
fn additive_scores(tape: &Tape, queries: Var, keys: Var, w_query: Var, bias: Var, v: Var) -> Result<Var> {
    let rows = tape.shape(queries)[0];
    let frames = tape.shape(keys)[0];
    let qw = tape.matmul(queries, w_query)?;
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let q = tape.reshape(tape.row(qw, r)?, &[tape.shape(qw)[1]])?;
        let qb = tape.add(q, bias)?;
        let hidden = tape.tanh(tape.add(keys, qb)?)?;
        let s = tape.matmul(hidden, v)?;
        out.push(tape.reshape(s, &[1, frames])?);
    }
    if out.len() == 1 {
        Ok(out[0])
    } else {
        tape.concat(&out, 0)
    }
}

impl MonotonicEnergy {
    /// `V h_j` for every encoder frame; shared by all tokens.
    pub fn project_keys(&self, tape: &Tape, encoder_outputs: Var) -> Result<Var> {
        tape.matmul(encoder_outputs, self.w_key)
    }

    pub fn energies(&self, tape: &Tape, queries: Var, keys: Var) -> Result<Var> {
        let s = additive_scores(tape, queries, keys, self.w_query, self.bias, self.v)?;
        let norm = tape.sqrt(tape.sum(tape.mul(self.v, self.v)?)?)?;
        let scale = tape.div(self.gain, norm)?;
        tape.add(tape.mul(s, scale)?, self.offset)
    }
}

impl ChunkEnergy {
    pub fn project_keys(&self, tape: &Tape, encoder_outputs: Var) -> Result<Var> {
        tape.matmul(encoder_outputs, self.w_key)
    }

    pub fn energies(&self, tape: &Tape, queries: Var, keys: Var) -> Result<Var> {
        additive_scores(tape, queries, keys, self.w_query, self.bias, self.v)
    }
}

/// `p = sigmoid(e + n)` with `n ~ N(0, noise_std^2)` when `noise` is
/// given, then discounted by `lambda_se`.
pub fn selection_probabilities(
    tape: &Tape,
    energies: Var,
    noise: Option<(&mut Rng64, f64)>,
    lambda_se: f64,
) -> Result<SelectionMatrix> {
    let logits = match noise {
        Some((rng, std)) if std > 0.0 => {
            let n = tape.constant(normal_array(rng, &tape.shape(energies), std));
            tape.add(energies, n)?
        }
        _ => energies,
    };
    let p = tape.sigmoid(logits)?;
    discount(tape, p, lambda_se)
}

/// StableEmit: `p' = (1 - lambda_se) p`.
pub fn discount(tape: &Tape, p: Var, lambda_se: f64) -> Result<SelectionMatrix> {
    check_lambda_se(lambda_se)?;
    let p_discounted = if lambda_se == 0.0 { p } else { tape.scale(p, 1.0 - lambda_se)? };
    Ok(SelectionMatrix { p, p_discounted, lambda_se })
}

pub fn check_lambda_se(lambda_se: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda_se) {
        return Err(Error::InvalidArgument(format!("lambda_se must be in [0, 1), got {}", lambda_se)));
    }
    Ok(())
}

/// Initial alignment row: a virtual boundary just before frame 1.
pub fn initial_alignment(frames: usize) -> Array {
    let mut a = Array::zeros(&[1, frames]);
    a.data_mut()[0] = 1.0;
    a
}

fn clamp_p(tape: &Tape, p: Var) -> Result<Var> {
    tape.clamp(p, P_FLOOR, 1.0 - P_FLOOR)
}

/// Expected alignment by the left-to-right recurrence
/// `a[i,j] = p[i,j] ((1 - p[i,j-1]) a[i,j-1] / p[i,j-1] + a[i-1,j])`,
/// built one element at a time.
pub fn expected_alignment_recursive(tape: &Tape, p_eff: Var, mask: Option<&PathMask>) -> Result<Var> {
    let (rows, frames) = dims(tape, p_eff)?;
    let p = clamp_p(tape, p_eff)?;
    let zero = tape.scalar(0.0);
    let mut prev: Vec<Var> = (0..frames).map(|j| tape.scalar(if j == 0 { 1.0 } else { 0.0 })).collect();
    let mut out_rows = Vec::with_capacity(rows);
    for i in 0..rows {
        let limit = mask.and_then(|m| m.limit(i));
        let mut row: Vec<Var> = Vec::with_capacity(frames);
        let mut p_prev: Option<Var> = None;
        for j in 0..frames {
            if limit.is_some_and(|lim| j + 1 > lim) {
                row.push(zero);
                continue;
            }
            let pij = tape.reshape(tape.slice(tape.row(p, i)?, 1, j, 1)?, &[])?;
            let carried = match p_prev {
                None => prev[j],
                Some(pp) => {
                    let stay = tape.mul(tape.one_minus(pp)?, tape.div(row[j - 1], pp)?)?;
                    tape.add(stay, prev[j])?
                }
            };
            row.push(tape.mul(pij, carried)?);
            p_prev = Some(pij);
        }
        let stacked: Vec<Var> =
            row.iter().map(|&v| tape.reshape(v, &[1, 1])).collect::<Result<_>>()?;
        out_rows.push(tape.concat(&stacked, 1)?);
        prev = row;
    }
    tape.concat(&out_rows, 0)
}

/// `R[k][j] = exp(L[j] - L[k])` for `k <= j`, else 0, from a `1 x T'` row `L`.
struct TransferMatrix;

impl CustomOp for TransferMatrix {
    fn name(&self) -> &'static str {
        "transfer_matrix"
    }

    fn backward(&self, grad: &Array, _inputs: &[&Array], output: &Array) -> Vec<Array> {
        let n = output.shape()[0];
        let mut g = vec![0.0; n];
        for k in 0..n {
            for j in k..n {
                let v = grad.get2(k, j) * output.get2(k, j);
                g[j] += v;
                g[k] -= v;
            }
        }
        vec![Array::row(g)]
    }
}

fn transfer_matrix(tape: &Tape, log_stay: Var) -> Result<Var> {
    let l = tape.value(log_stay).clone();
    let n = l.numel();
    let mut r = Array::zeros(&[n, n]);
    for k in 0..n {
        for j in k..n {
            r.data_mut()[k * n + j] = math::exp(l.data()[j] - l.data()[k]);
        }
    }
    tape.custom(&[log_stay], r, Box::new(TransferMatrix))
}

/// One row of the parallel form,
/// `a_i[j] = p_i[j] sum_{k<=j} a_{i-1}[k] prod_{m=k}^{j-1} (1 - p_i[m])`,
/// which is `p_i * cp_i * cumsum(a_{i-1} / cp_i)` with `cp_i` the exclusive
/// cumulative product of `1 - p_i`. Each ratio `cp_i[j] / cp_i[k]` is formed
/// as `exp(L[j] - L[k])` from the exclusive cumsum `L` of `log(1 - p_i)`,
/// so nothing is divided by an underflowed product. `prev` and `p_row` are
/// `1 x T'`; `limit` is the last allowed 1-based frame.
pub fn alignment_row(tape: &Tape, prev: Var, p_row: Var, limit: Option<usize>) -> Result<Var> {
    let frames = dims(tape, p_row)?.1;
    let p = clamp_p(tape, p_row)?;
    let log_stay = tape.cumsum_exclusive(tape.log(tape.one_minus(p)?)?, 1)?;
    let row = tape.mul(p, tape.matmul(prev, transfer_matrix(tape, log_stay)?)?)?;
    match limit {
        Some(lim) if lim < frames => {
            let m = Array::row((1..=frames).map(|j| if j <= lim { 1.0 } else { 0.0 }).collect());
            tape.mul(row, tape.constant(m))
        }
        _ => Ok(row),
    }
}

/// Expected alignment using the parallel form row by row.
pub fn expected_alignment_parallel(tape: &Tape, p_eff: Var, mask: Option<&PathMask>) -> Result<Var> {
    let (rows, frames) = dims(tape, p_eff)?;
    let mut prev = tape.constant(initial_alignment(frames));
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let limit = mask.and_then(|m| m.limit(i));
        prev = alignment_row(tape, prev, tape.row(p_eff, i)?, limit)?;
        out.push(prev);
    }
    tape.concat(&out, 0)
}

/// Expected chunkwise weights
/// `beta[i,j] = sum_{k=j}^{j+w-1} a[i,k] exp(u[i,j]) / sum_{l=k-w+1}^{k} exp(u[i,l])`.
pub fn chunkwise_weights(tape: &Tape, alpha: Var, chunk_energies: Var, width: usize) -> Result<Var> {
    if width == 0 {
        return Err(Error::InvalidArgument("chunk width must be >= 1".into()));
    }
    let (rows, frames) = dims(tape, alpha)?;
    if dims(tape, chunk_energies)? != (rows, frames) {
        return Err(Error::Shape("alpha and chunk energies differ in shape".into()));
    }
    if width == 1 {
        return Ok(alpha);
    }
    // The ratio is invariant to a per-row shift, so the shift is a constant.
    let shift = {
        let u = tape.value(chunk_energies);
        let mut s = Array::zeros(&[rows, frames]);
        for r in 0..rows {
            let m = u.row_slice(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s.data_mut()[r * frames..(r + 1) * frames].fill(m);
        }
        s
    };
    let e = tape.exp(tape.sub(chunk_energies, tape.constant(shift))?)?;
    let denom = tape.clamp(tape.window_sum(e, 1, width, false)?, DENOM_FLOOR, f64::INFINITY)?;
    let spread = tape.window_sum(tape.div(alpha, denom)?, 1, width, true)?;
    tape.mul(e, spread)
}

/// Full training-time posterior: alignment (parallel form) plus chunkwise
/// weights.
pub fn alignment_posterior(
    tape: &Tape,
    p_eff: Var,
    chunk_energies: Var,
    chunk_width: usize,
    mask: Option<&PathMask>,
) -> Result<AlignmentPosterior> {
    let alpha = expected_alignment_parallel(tape, p_eff, mask)?;
    let beta = chunkwise_weights(tape, alpha, chunk_energies, chunk_width)?;
    Ok(AlignmentPosterior { alpha, beta, chunk_width })
}

/// Test-time chunk attention: softmax over `chunk_energies_row` on frames
/// `[max(1, boundary - w + 1), boundary]` (1-based) and the matching
/// weighted sum of encoder rows.
pub fn hard_chunk_attend(
    encoder_outputs: &Array,
    boundary: usize,
    width: usize,
    chunk_energies_row: &[f64],
) -> Result<Vec<f64>> {
    let (frames, dim) = encoder_outputs.dims2()?;
    if boundary == 0 || boundary > frames {
        return Err(Error::InvalidArgument(format!("boundary {} outside 1..={}", boundary, frames)));
    }
    if width == 0 {
        return Err(Error::InvalidArgument("chunk width must be >= 1".into()));
    }
    let start = boundary.saturating_sub(width);
    let window = &chunk_energies_row[start..boundary];
    let weights = softmax(window);
    let mut ctx = vec![0.0; dim];
    for (k, &wk) in weights.iter().enumerate() {
        for (c, &h) in ctx.iter_mut().zip(encoder_outputs.row_slice(start + k)) {
            *c += wk * h;
        }
    }
    Ok(ctx)
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| math::exp(x - m)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn dims(tape: &Tape, v: Var) -> Result<(usize, usize)> {
    tape.value(v).dims2()
}

#[cfg(test)]
mod tests;
