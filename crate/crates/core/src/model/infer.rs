//! Tape-free evaluation of the model, one frame or one token at a time.
//! Used by the streaming decoder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ModelConfig, Parameters};
use crate::array::Array;
use crate::error::{Error, Result};
use crate::math;

/// `x W` for a row vector `x` and a 2-D `W`, accumulated in the same order
/// as the tape's matmul.
pub fn vecmat(x: &[f64], w: &Array) -> Vec<f64> {
    let (n, m) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(x.len(), n);
    let mut out = vec![0.0; m];
    for (p, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &w.data()[p * m..(p + 1) * m];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xv * wv;
        }
    }
    out
}

fn add_in_place(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(d: usize) -> Self {
        Self { h: vec![0.0; d], c: vec![0.0; d] }
    }

    /// Advance with pre-activation `z = x W_x + b` (without the recurrent term).
    fn step(&mut self, mut z: Vec<f64>, w_h: &Array) {
        let d = self.h.len();
        add_in_place(&mut z, &vecmat(&self.h, w_h));
        for k in 0..d {
            let i = math::sigmoid(z[k]);
            let f = math::sigmoid(z[d + k]);
            let g = math::tanh(z[2 * d + k]);
            let o = math::sigmoid(z[3 * d + k]);
            self.c[k] = f * self.c[k] + i * g;
            self.h[k] = o * math::tanh(self.c[k]);
        }
    }
}

struct Layer<'a> {
    w_x: &'a Array,
    w_h: &'a Array,
    b: &'a Array,
}

/// Read-only view of the parameters used for inference.
pub struct Inference<'a> {
    pub config: &'a ModelConfig,
    layers: Vec<Layer<'a>>,
    emb: &'a Array,
    dec: Layer<'a>,
    mono_wq: &'a Array,
    mono_wk: &'a Array,
    mono_b: &'a Array,
    mono_v: &'a Array,
    mono_scale: f64,
    mono_r: f64,
    chunk_wq: &'a Array,
    chunk_wk: &'a Array,
    chunk_b: &'a Array,
    chunk_v: &'a Array,
    out_wa: &'a Array,
    out_ba: &'a Array,
    out_wo: &'a Array,
    out_bo: &'a Array,
}

/// Everything derived from one encoder frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub h: Vec<f64>,
    pub key_mono: Vec<f64>,
    pub key_chunk: Vec<f64>,
}

/// Decoder state between tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub lstm: LstmState,
    pub context: Vec<f64>,
    pub prev_token: usize,
}

impl<'a> Inference<'a> {
    pub fn new(config: &'a ModelConfig, params: &'a Parameters) -> Result<Self> {
        params.check_against(config)?;
        let g = |n: &str| params.get(n);
        let layers = (0..config.encoder_layers)
            .map(|l| {
                Ok(Layer {
                    w_x: g(&format!("enc.{l}.w_x"))?,
                    w_h: g(&format!("enc.{l}.w_h"))?,
                    b: g(&format!("enc.{l}.b"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let v = g("mono.v")?;
        let norm = math::sqrt(v.data().iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            return Err(Error::NonFinite("monotonic energy has zero-norm v".into()));
        }
        Ok(Self {
            config,
            layers,
            emb: g("dec.emb")?,
            dec: Layer { w_x: g("dec.w_x")?, w_h: g("dec.w_h")?, b: g("dec.b")? },
            mono_wq: g("mono.w_query")?,
            mono_wk: g("mono.w_key")?,
            mono_b: g("mono.b")?,
            mono_v: v,
            mono_scale: g("mono.g")?.item() / norm,
            mono_r: g("mono.r")?.item(),
            chunk_wq: g("chunk.w_query")?,
            chunk_wk: g("chunk.w_key")?,
            chunk_b: g("chunk.b")?,
            chunk_v: g("chunk.v")?,
            out_wa: g("out.w_a")?,
            out_ba: g("out.b_a")?,
            out_wo: g("out.w_o")?,
            out_bo: g("out.b_o")?,
        })
    }

    pub fn encoder_state(&self) -> Vec<LstmState> {
        vec![LstmState::zeros(self.config.hidden_dim); self.config.encoder_layers]
    }

    /// Push one input frame through the encoder.
    pub fn encode_frame(&self, state: &mut [LstmState], frame: &[f64]) -> Result<EncodedFrame> {
        if frame.len() != self.config.input_dim {
            return Err(Error::Shape(format!("frame has dim {}, expected {}", frame.len(), self.config.input_dim)));
        }
        let mut x = frame.to_vec();
        for (layer, st) in self.layers.iter().zip(state.iter_mut()) {
            let mut z = vecmat(&x, layer.w_x);
            add_in_place(&mut z, layer.b.data());
            st.step(z, layer.w_h);
            x = st.h.clone();
        }
        Ok(EncodedFrame { key_mono: vecmat(&x, self.mono_wk), key_chunk: vecmat(&x, self.chunk_wk), h: x })
    }

    pub fn decoder_state(&self) -> DecoderState {
        let d = self.config.hidden_dim;
        DecoderState { lstm: LstmState::zeros(d), context: vec![0.0; d], prev_token: self.config.eos() }
    }

    /// Advance the decoder LSTM by one token; returns the query.
    pub fn query(&self, state: &mut DecoderState) -> Vec<f64> {
        let mut x = self.emb.row_slice(state.prev_token).to_vec();
        x.extend_from_slice(&state.context);
        let mut z = vecmat(&x, self.dec.w_x);
        add_in_place(&mut z, self.dec.b.data());
        state.lstm.step(z, self.dec.w_h);
        state.lstm.h.clone()
    }

    /// `q W + b` for the monotonic and chunk energies.
    pub fn project_query(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut m = vecmat(q, self.mono_wq);
        add_in_place(&mut m, self.mono_b.data());
        let mut c = vecmat(q, self.chunk_wq);
        add_in_place(&mut c, self.chunk_b.data());
        (m, c)
    }

    fn score(key: &[f64], qb: &[f64], v: &Array) -> f64 {
        let mut s = 0.0;
        for ((k, q), w) in key.iter().zip(qb).zip(v.data()) {
            let hdn = math::tanh(k + q);
            if hdn != 0.0 {
                s += hdn * w;
            }
        }
        s
    }

    pub fn monotonic_energy(&self, qb: &[f64], frame: &EncodedFrame) -> f64 {
        Self::score(&frame.key_mono, qb, self.mono_v) * self.mono_scale + self.mono_r
    }

    pub fn chunk_energy(&self, qb: &[f64], frame: &EncodedFrame) -> f64 {
        Self::score(&frame.key_chunk, qb, self.chunk_v)
    }

    /// Output-layer logits over `V + 1` classes.
    pub fn logits(&self, q: &[f64], context: &[f64]) -> Vec<f64> {
        let mut x = q.to_vec();
        x.extend_from_slice(context);
        let mut hidden = vecmat(&x, self.out_wa);
        add_in_place(&mut hidden, self.out_ba.data());
        for v in hidden.iter_mut() {
            *v = math::tanh(*v);
        }
        let mut out = vecmat(&hidden, self.out_wo);
        add_in_place(&mut out, self.out_bo.data());
        out
    }
}
