use alloc::format;
use alloc::vec::Vec;

use super::{ModelConfig, ParamVars};
use crate::array::Array;
use crate::attention::{alignment_row, check_lambda_se, chunkwise_weights, initial_alignment, PathMask};
use crate::autodiff::{Tape, Var};
use crate::ctc::{self, BoundaryRule, BoundarySequence, CtcLattice};
use crate::error::{Error, Result};
use crate::losses::{latency_loss, quantity_loss, total_loss, LossBundle, LossWeights};
use crate::rng::{normal_array, Rng64};

/// Where a reference boundary sequence comes from during training.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Given(&'a BoundarySequence),
    /// Best path of the model's own CTC branch on this forward pass.
    CtcViterbi { rule: BoundaryRule, frame_ms: f64 },
}

/// One training utterance plus its regularization wiring.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a Array,
    pub tokens: &'a [usize],
    /// Delay constraint reference and slack.
    pub decot: Option<(Reference<'a>, usize)>,
    /// Reference for the expected-latency loss.
    pub latency: Option<Reference<'a>>,
}

pub struct ForwardOutput {
    pub losses: LossBundle,
    /// Raw selection probabilities, `(U + 1) x T'` (last row is end-of-sequence).
    pub p: Var,
    /// Expected alignment from the discounted probabilities.
    pub alpha: Var,
    pub beta: Var,
    /// Log-probabilities of the CTC branch when it was evaluated.
    pub ctc_log_probs: Option<Var>,
    /// CTC best-path boundaries when a CTC reference was requested.
    pub ctc_boundaries: Option<BoundarySequence>,
}

fn lstm_gates(tape: &Tape, z: Var, c: Var, d: usize) -> Result<(Var, Var)> {
    let i = tape.sigmoid(tape.slice(z, 1, 0, d)?)?;
    let f = tape.sigmoid(tape.slice(z, 1, d, d)?)?;
    let g = tape.tanh(tape.slice(z, 1, 2 * d, d)?)?;
    let o = tape.sigmoid(tape.slice(z, 1, 3 * d, d)?)?;
    let c2 = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
    let h2 = tape.mul(o, tape.tanh(c2)?)?;
    Ok((h2, c2))
}

/// Causal multi-layer LSTM over `T x input_dim` features; returns `T x d`.
pub fn encode(tape: &Tape, pv: &ParamVars, config: &ModelConfig, features: Var) -> Result<Var> {
    let shape = tape.shape(features);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Shape(format!("encoder input must be non-empty T x dim, got {:?}", shape)));
    }
    if shape[1] != config.input_dim {
        return Err(Error::Shape(format!("feature dim {} != input_dim {}", shape[1], config.input_dim)));
    }
    let frames = shape[0];
    let d = config.hidden_dim;
    let mut x = features;
    for l in 0..config.encoder_layers {
        let w_h = pv.get(&format!("enc.{l}.w_h"));
        let xw = tape.add(tape.matmul(x, pv.get(&format!("enc.{l}.w_x")))?, pv.get(&format!("enc.{l}.b")))?;
        let mut h = tape.constant(Array::zeros(&[1, d]));
        let mut c = h;
        let mut rows = Vec::with_capacity(frames);
        for t in 0..frames {
            let z = tape.add(tape.row(xw, t)?, tape.matmul(h, w_h)?)?;
            (h, c) = lstm_gates(tape, z, c, d)?;
            rows.push(h);
        }
        x = tape.concat(&rows, 0)?;
    }
    Ok(x)
}

fn resolve(
    reference: Reference<'_>,
    viterbi: &mut Option<BoundarySequence>,
    lattice: impl FnOnce() -> Result<BoundarySequence>,
) -> Result<BoundarySequence> {
    match reference {
        Reference::Given(b) => Ok(b.clone()),
        Reference::CtcViterbi { .. } => {
            if viterbi.is_none() {
                *viterbi = Some(lattice()?);
            }
            Ok(viterbi.clone().unwrap())
        }
    }
}

/// Teacher-forced forward pass of one utterance with every loss term.
///
/// `noise` supplies the pre-sigmoid Gaussian noise stream; pass `None` for
/// a noise-free evaluation.
pub fn train_forward(
    tape: &Tape,
    pv: &ParamVars,
    config: &ModelConfig,
    weights: &LossWeights,
    example: &Example<'_>,
    mut noise: Option<&mut Rng64>,
) -> Result<ForwardOutput> {
    weights.validate()?;
    check_lambda_se(weights.lambda_se)?;
    let tokens = example.tokens;
    let u = tokens.len();
    if u == 0 {
        return Err(Error::InvalidArgument("target must be non-empty".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&y| y >= config.vocab_size) {
        return Err(Error::InvalidArgument(format!("token {} outside vocabulary {}", bad, config.vocab_size)));
    }
    let d = config.hidden_dim;
    let eos = config.eos();

    let features = tape.constant(example.features.clone());
    let enc = encode(tape, pv, config, features)?;
    let frames = tape.shape(enc)[0];
    if u > frames {
        return Err(Error::NoAlignment(format!("{} tokens cannot align to {} frames", u, frames)));
    }

    // CTC branch.
    let wants_ctc = |r: Option<Reference<'_>>| matches!(r, Some(Reference::CtcViterbi { .. }));
    let need_ctc =
        weights.lambda_ctc > 0.0 || wants_ctc(example.decot.map(|(r, _)| r)) || wants_ctc(example.latency);
    let mut l_ctc = tape.scalar(0.0);
    let mut ctc_log_probs = None;
    if need_ctc {
        let logits = tape.add(tape.matmul(enc, pv.get("ctc.w"))?, pv.get("ctc.b"))?;
        let lp = tape.log_softmax(logits, 1)?;
        l_ctc = tape.scale(ctc::ctc_loss(tape, lp, tokens)?, 1.0 / u as f64)?;
        ctc_log_probs = Some(lp);
    }
    let mut viterbi: Option<BoundarySequence> = None;
    let ctc_bounds = |r: Reference<'_>| -> Result<BoundarySequence> {
        let (rule, frame_ms) = match r {
            Reference::CtcViterbi { rule, frame_ms } => (rule, frame_ms),
            Reference::Given(_) => unreachable!(),
        };
        let lp = tape.value(ctc_log_probs.expect("ctc branch evaluated")).clone();
        let lattice = CtcLattice { log_probs: lp, target: tokens.to_vec() };
        let path = ctc::viterbi_alignment(&lattice)?;
        ctc::boundaries_with_rule(&path, tokens, config.blank(), frame_ms, rule, Some(&lattice.log_probs))
    };
    let mask = match example.decot {
        Some((r, delta)) => {
            let b = resolve(r, &mut viterbi, || ctc_bounds(r))?;
            Some(PathMask::new(b, delta, frames)?)
        }
        None => None,
    };
    let latency_ref = match example.latency {
        Some(r) => Some(resolve(r, &mut viterbi, || ctc_bounds(r))?),
        None => None,
    };

    // Attention decoder, one token per step.
    let mono = pv.monotonic();
    let chunk = pv.chunk();
    let keys_m = mono.project_keys(tape, enc)?;
    let keys_c = chunk.project_keys(tape, enc)?;
    let emb = pv.get("dec.emb");
    let (w_x, w_h, b) = (pv.get("dec.w_x"), pv.get("dec.w_h"), pv.get("dec.b"));
    let mut h = tape.constant(Array::zeros(&[1, d]));
    let mut c = h;
    let mut ctx = tape.constant(Array::zeros(&[1, d]));
    let mut prev = tape.constant(initial_alignment(frames));
    let (mut p_rows, mut alpha_rows, mut beta_rows, mut logit_rows) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut targets = Vec::with_capacity(u + 1);
    for i in 0..=u {
        let y_prev = if i == 0 { eos } else { tokens[i - 1] };
        targets.push(if i < u { tokens[i] } else { eos });
        let x = tape.concat(&[tape.index_select(emb, &[y_prev])?, ctx], 1)?;
        let z = tape.add(tape.add(tape.matmul(x, w_x)?, b)?, tape.matmul(h, w_h)?)?;
        (h, c) = lstm_gates(tape, z, c, d)?;
        let q = h;

        let mut e = mono.energies(tape, q, keys_m)?;
        if let Some(rng) = noise.as_deref_mut() {
            if config.noise_std > 0.0 {
                e = tape.add(e, tape.constant(normal_array(rng, &[1, frames], config.noise_std)))?;
            }
        }
        let p = tape.sigmoid(e)?;
        let p_eff = if weights.lambda_se == 0.0 { p } else { tape.scale(p, 1.0 - weights.lambda_se)? };
        let limit = mask.as_ref().and_then(|m| m.limit(i));
        let alpha = alignment_row(tape, prev, p_eff, limit)?;
        let uc = chunk.energies(tape, q, keys_c)?;
        let beta = chunkwise_weights(tape, alpha, uc, config.chunk_width)?;
        ctx = tape.matmul(beta, enc)?;

        let hidden = tape.tanh(tape.add(tape.matmul(tape.concat(&[q, ctx], 1)?, pv.get("out.w_a"))?, pv.get("out.b_a"))?)?;
        let logits = tape.add(tape.matmul(hidden, pv.get("out.w_o"))?, pv.get("out.b_o"))?;
        p_rows.push(p);
        alpha_rows.push(alpha);
        beta_rows.push(beta);
        logit_rows.push(logits);
        prev = alpha;
    }
    let p = tape.concat(&p_rows, 0)?;
    let alpha = tape.concat(&alpha_rows, 0)?;
    let beta = tape.concat(&beta_rows, 0)?;
    let logits = tape.concat(&logit_rows, 0)?;
    let l_mocha = tape.neg(tape.mean(tape.pick(tape.log_softmax(logits, 1)?, &targets)?)?)?;

    let l_qua = quantity_loss(tape, alpha, u + 1)?;
    let l_latency = match &latency_ref {
        Some(b) => latency_loss(tape, b, tape.slice(alpha, 0, 0, u)?)?,
        None => tape.scalar(0.0),
    };
    let losses = total_loss(tape, l_mocha, l_ctc, l_qua, l_latency, weights)?;
    Ok(ForwardOutput { losses, p, alpha, beta, ctc_log_probs, ctc_boundaries: viterbi })
}
