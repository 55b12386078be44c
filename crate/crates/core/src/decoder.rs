//! Test-time greedy streaming decoding with threshold boundary detection
//! and hard chunkwise attention.

use alloc::format;
use alloc::vec::Vec;

use crate::array::Array;
use crate::attention::{check_lambda_se, hard_chunk_attend};
use crate::error::{Error, Result};
use crate::math;
use crate::model::infer::{DecoderState, EncodedFrame, Inference, LstmState};
use crate::model::{ModelConfig, Parameters};

/// One emitted token. `i` and `frame` are 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmissionRecord {
    pub token: usize,
    pub i: usize,
    pub frame: usize,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecodeConfig {
    pub tau: f64,
    pub max_tokens: usize,
    pub discount_at_test: bool,
    pub lambda_se: f64,
    /// Frames a token may scan past its start before decoding stops;
    /// `None` means unbounded.
    pub max_lookahead: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { tau: 0.5, max_tokens: 64, discount_at_test: false, lambda_se: 0.0, max_lookahead: None }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if self.discount_at_test {
            check_lambda_se(self.lambda_se).map_err(|e| Error::Config(format!("{e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Termination {
    /// The decoder emitted end-of-sequence.
    Eos,
    /// Frames ran out before the current token found a boundary.
    NoBoundary,
    MaxTokens,
    /// The current token scanned `max_lookahead` frames without firing.
    MaxLookahead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub emissions: Vec<EmissionRecord>,
    pub termination: Termination,
}

impl DecodeResult {
    pub fn tokens(&self) -> Vec<usize> {
        self.emissions.iter().map(|e| e.token).collect()
    }
}

/// Token currently being scanned for.
struct Pending {
    query: Vec<f64>,
    qb_mono: Vec<f64>,
    qb_chunk: Vec<f64>,
    start: usize,
}

/// Incremental decoder: frames are pushed in order and emissions become
/// available as soon as their boundary frame has arrived.
pub struct StreamingSession<'a> {
    model: Inference<'a>,
    config: DecodeConfig,
    encoder: Vec<LstmState>,
    frames: Vec<EncodedFrame>,
    decoder: DecoderState,
    pending: Option<Pending>,
    scan: usize,
    emissions: Vec<EmissionRecord>,
    done: Option<Termination>,
    closed: bool,
}

impl<'a> StreamingSession<'a> {
    pub fn new(model_config: &'a ModelConfig, params: &'a Parameters, config: DecodeConfig) -> Result<Self> {
        config.validate()?;
        let model = Inference::new(model_config, params)?;
        Ok(Self {
            encoder: model.encoder_state(),
            decoder: model.decoder_state(),
            model,
            config,
            frames: Vec::new(),
            pending: None,
            scan: 0,
            emissions: Vec::new(),
            done: None,
            closed: false,
        })
    }

    /// Append frames (rows of a `n x input_dim` array, or a flat slice of
    /// whole frames) and decode as far as they allow.
    pub fn push_frames(&mut self, frames: &[f64]) -> Result<()> {
        if self.closed {
            return Err(Error::InvalidArgument("push after close".into()));
        }
        let dim = self.model.config.input_dim;
        if frames.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values is not a whole number of {}-dim frames", frames.len(), dim)));
        }
        if self.done.is_some() {
            return Ok(());
        }
        for f in frames.chunks(dim) {
            let enc = self.model.encode_frame(&mut self.encoder, f)?;
            self.frames.push(enc);
        }
        self.advance()
    }

    pub fn push_array(&mut self, frames: &Array) -> Result<()> {
        self.push_frames(frames.data())
    }

    /// Emissions so far.
    pub fn emissions(&self) -> &[EmissionRecord] {
        &self.emissions
    }

    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    /// Signal end of input and return the final result. Further pushes fail.
    pub fn close(&mut self) -> DecodeResult {
        self.closed = true;
        let termination = self.done.unwrap_or(Termination::NoBoundary);
        DecodeResult { emissions: self.emissions.clone(), termination }
    }

    fn selection(&self, qb: &[f64], frame: &EncodedFrame) -> f64 {
        let p = math::sigmoid(self.model.monotonic_energy(qb, frame));
        if self.config.discount_at_test {
            (1.0 - self.config.lambda_se) * p
        } else {
            p
        }
    }

    fn advance(&mut self) -> Result<()> {
        while self.done.is_none() {
            if self.pending.is_none() {
                if self.emissions.len() >= self.config.max_tokens {
                    self.done = Some(Termination::MaxTokens);
                    return Ok(());
                }
                let query = self.model.query(&mut self.decoder);
                let (qb_mono, qb_chunk) = self.model.project_query(&query);
                self.pending = Some(Pending { query, qb_mono, qb_chunk, start: self.scan });
            }
            let pending = self.pending.as_ref().expect("pending token");
            let mut fired = None;
            while self.scan < self.frames.len() {
                if let Some(cap) = self.config.max_lookahead {
                    if self.scan - pending.start >= cap {
                        self.done = Some(Termination::MaxLookahead);
                        return Ok(());
                    }
                }
                let p = self.selection(&pending.qb_mono, &self.frames[self.scan]);
                if p >= self.config.tau {
                    fired = Some(p);
                    break;
                }
                self.scan += 1;
            }
            let Some(p) = fired else { return Ok(()) };
            let boundary = self.scan + 1;
            let w = self.model.config.chunk_width;
            let lo = boundary.saturating_sub(w);
            let window = &self.frames[lo..boundary];
            let energies: Vec<f64> = window.iter().map(|f| self.model.chunk_energy(&pending.qb_chunk, f)).collect();
            let enc = Array::new(
                &[window.len(), self.model.config.hidden_dim],
                window.iter().flat_map(|f| f.h.iter().copied()).collect(),
            )?;
            let context = hard_chunk_attend(&enc, window.len(), w, &energies)?;
            let logits = self.model.logits(&pending.query, &context);
            let token = argmax(&logits);
            if token == self.model.config.eos() {
                self.done = Some(Termination::Eos);
                return Ok(());
            }
            self.emissions.push(EmissionRecord { token, i: self.emissions.len() + 1, frame: boundary, p });
            self.decoder.context = context;
            self.decoder.prev_token = token;
            self.pending = None;
        }
        Ok(())
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

/// Offline decode: the whole utterance pushed at once.
pub fn greedy_streaming_decode(
    model_config: &ModelConfig,
    params: &Parameters,
    features: &Array,
    config: DecodeConfig,
) -> Result<DecodeResult> {
    let mut session = StreamingSession::new(model_config, params, config)?;
    if features.numel() > 0 {
        session.push_array(features)?;
    }
    Ok(session.close())
}
