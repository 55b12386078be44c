//! Toy streaming encoder-decoder: causal LSTM encoder, MoChA decoder cell,
//! CTC branch, and output layers.
//!
//! Output vocabulary is `V + 1` with end-of-sequence at id `V`; the same id
//! doubles as the start symbol fed to the first decoder step. The CTC branch
//! predicts `V + 1` classes with the blank at id `V`.

mod forward;
pub mod infer;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::array::Array;
use crate::attention::{ChunkEnergy, MonotonicEnergy};
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::math;
use crate::rng::{stream, uniform_array};

pub use forward::{encode, train_forward, Example, ForwardOutput, Reference};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub encoder_layers: usize,
    pub chunk_width: usize,
    pub weights: LossWeights,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dim: 64,
            vocab_size: 20,
            encoder_layers: 2,
            chunk_width: 4,
            weights: LossWeights::default(),
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.vocab_size == 0 || self.encoder_layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.chunk_width == 0 {
            return Err(Error::Config("chunk_width must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        self.weights.validate()
    }

    /// End-of-sequence id in the output vocabulary.
    pub fn eos(&self) -> usize {
        self.vocab_size
    }

    /// Blank id of the CTC branch.
    pub fn blank(&self) -> usize {
        self.vocab_size
    }
}

const INIT_KEY: u64 = 0x1a17;

/// Named parameter arrays, iterated in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub map: BTreeMap<String, Array>,
}

fn name_key(name: &str) -> u64 {
    // FNV-1a, so each tensor's init stream depends on its name only.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Parameters {
    /// Shapes of every tensor for `config`.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let d = config.hidden_dim;
        let out = config.vocab_size + 1;
        let mut v = Vec::new();
        for l in 0..config.encoder_layers {
            let input = if l == 0 { config.input_dim } else { d };
            v.push((format!("enc.{l}.w_x"), alloc::vec![input, 4 * d]));
            v.push((format!("enc.{l}.w_h"), alloc::vec![d, 4 * d]));
            v.push((format!("enc.{l}.b"), alloc::vec![4 * d]));
        }
        let shapes: [(&str, Vec<usize>); 20] = [
            ("dec.emb", alloc::vec![out, d]),
            ("dec.w_x", alloc::vec![2 * d, 4 * d]),
            ("dec.w_h", alloc::vec![d, 4 * d]),
            ("dec.b", alloc::vec![4 * d]),
            ("mono.w_query", alloc::vec![d, d]),
            ("mono.w_key", alloc::vec![d, d]),
            ("mono.b", alloc::vec![d]),
            ("mono.v", alloc::vec![d, 1]),
            ("mono.g", alloc::vec![]),
            ("mono.r", alloc::vec![]),
            ("chunk.w_query", alloc::vec![d, d]),
            ("chunk.w_key", alloc::vec![d, d]),
            ("chunk.b", alloc::vec![d]),
            ("chunk.v", alloc::vec![d, 1]),
            ("out.w_a", alloc::vec![2 * d, d]),
            ("out.b_a", alloc::vec![d]),
            ("out.w_o", alloc::vec![d, out]),
            ("out.b_o", alloc::vec![out]),
            ("ctc.w", alloc::vec![d, config.vocab_size + 1]),
            ("ctc.b", alloc::vec![config.vocab_size + 1]),
        ];
        v.extend(shapes.into_iter().map(|(n, s)| (n.to_string(), s)));
        v
    }

    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim as f64;
        let mut map = BTreeMap::new();
        for (name, shape) in Self::layout(config) {
            let mut rng = stream(config.seed, &[INIT_KEY, name_key(&name)]);
            let value = match name.as_str() {
                "mono.g" => Array::scalar(1.0 / math::sqrt(d)),
                "mono.r" => Array::scalar(-4.0),
                n if n.ends_with(".b") && n.starts_with(['e', 'd']) => {
                    // LSTM biases: forget gate starts at 1.
                    let mut b = Array::zeros(&shape);
                    let h = shape[0] / 4;
                    b.data_mut()[h..2 * h].fill(1.0);
                    b
                }
                n if n.contains(".b") => Array::zeros(&shape),
                _ => {
                    let fan_in = shape[0] as f64;
                    let s = 1.0 / math::sqrt(fan_in);
                    uniform_array(&mut rng, &shape, -s, s)
                }
            };
            map.insert(name, value);
        }
        Ok(Self { map })
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.map.get(name).ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    /// Checks that names and shapes match `config` exactly.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let layout = Self::layout(config);
        if layout.len() != self.map.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, found {}",
                layout.len(),
                self.map.len()
            )));
        }
        for (name, shape) in layout {
            let a = self.map.get(&name).ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            if a.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, config needs {:?}",
                    a.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(Array::numel).sum()
    }
}

/// Parameters registered on a tape, looked up by name.
pub struct ParamVars {
    pub vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn bind(tape: &Tape, params: &Parameters) -> Self {
        let vars = params.map.iter().map(|(n, a)| (n.clone(), tape.param(a.clone()))).collect();
        Self { vars }
    }

    /// Wrap existing vars, given in the parameters' name order.
    pub fn from_vars(params: &Parameters, vars: &[Var]) -> Result<Self> {
        if vars.len() != params.map.len() {
            return Err(Error::InvalidArgument("variable count does not match parameters".into()));
        }
        Ok(Self { vars: params.map.keys().cloned().zip(vars.iter().copied()).collect() })
    }

    pub fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn monotonic(&self) -> MonotonicEnergy {
        MonotonicEnergy {
            w_query: self.get("mono.w_query"),
            w_key: self.get("mono.w_key"),
            bias: self.get("mono.b"),
            v: self.get("mono.v"),
            gain: self.get("mono.g"),
            offset: self.get("mono.r"),
        }
    }

    pub fn chunk(&self) -> ChunkEnergy {
        ChunkEnergy {
            w_query: self.get("chunk.w_query"),
            w_key: self.get("chunk.w_key"),
            bias: self.get("chunk.b"),
            v: self.get("chunk.v"),
        }
    }

    /// Gradients keyed by parameter name, zero where unused.
    pub fn collect(&self, grads: &Gradients, params: &Parameters) -> BTreeMap<String, Array> {
        self.vars
            .iter()
            .map(|(n, &v)| (n.clone(), grads.get_or_zeros(v, params.map[n].shape())))
            .collect()
    }
}
