//! Mini-batch training loop state: parameters, optimizer, and the wiring of
//! reference boundaries into each forward pass.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::array::Array;
use crate::autodiff::Tape;
use crate::ctc::{BoundaryRule, BoundarySequence};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::math;
use crate::model::{train_forward, Example, ModelConfig, ParamVars, Parameters, Reference};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{permutation, stream};

const NOISE_KEY: u64 = 0x0153;
const SHUFFLE_KEY: u64 = 0x5f1e;

/// Where a training reference comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RefSource {
    /// The boundaries attached to the utterance (ground truth or a file).
    Provided,
    /// Best path of the model's own CTC branch, recomputed every step.
    CtcViterbi,
}

/// Which alignment regularizers are active.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainPlan {
    pub decot: Option<RefSource>,
    pub latency: Option<RefSource>,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Steps before the quantity and latency losses and the mask switch on.
    pub warmup_steps: u64,
    /// Learning rate is multiplied by this once per epoch.
    pub lr_decay: f64,
    pub boundary_rule: BoundaryRule,
    pub frame_ms: f64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            decot: None,
            latency: None,
            batch_size: 8,
            adam: AdamConfig::default(),
            warmup_steps: 0,
            lr_decay: 1.0,
            boundary_rule: BoundaryRule::Onset,
            frame_ms: 40.0,
        }
    }
}

/// A training utterance. `id` keys its noise stream.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub id: u64,
    pub features: &'a Array,
    pub tokens: &'a [usize],
    pub boundaries: Option<&'a BoundarySequence>,
}

/// Batch-mean loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepReport {
    pub step: u64,
    pub l_mocha: f64,
    pub l_ctc: f64,
    pub l_qua: f64,
    pub l_latency: f64,
    pub l_total: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: ModelConfig,
    pub plan: TrainPlan,
    pub params: Parameters,
    pub adam: AdamState,
}

/// Utterance order of every batch in `epoch`.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let order = permutation(&mut stream(seed, &[SHUFFLE_KEY, epoch]), n);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

impl Trainer {
    pub fn new(config: ModelConfig, plan: TrainPlan) -> Result<Self> {
        config.validate()?;
        Self::check_plan(&config, &plan)?;
        let params = Parameters::init(&config)?;
        Ok(Self { config, plan, params, adam: AdamState::default() })
    }

    pub fn check_plan(config: &ModelConfig, plan: &TrainPlan) -> Result<()> {
        if plan.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if plan.latency.is_some() && config.weights.lambda_latency == 0.0 {
            return Err(Error::Config("a latency reference needs lambda_latency > 0".into()));
        }
        if plan.latency.is_none() && config.weights.lambda_latency > 0.0 {
            return Err(Error::Config("lambda_latency > 0 needs a latency reference".into()));
        }
        if !(plan.lr_decay > 0.0 && plan.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", plan.lr_decay)));
        }
        if !(plan.frame_ms > 0.0) {
            return Err(Error::Config("frame_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    /// Weights in effect at `step` (regularizers off during warm-up).
    pub fn weights_at(&self, step: u64) -> LossWeights {
        let mut w = self.config.weights;
        if step < self.plan.warmup_steps {
            w.lambda_qua = 0.0;
            w.lambda_latency = 0.0;
        }
        w
    }

    fn example<'a>(&self, item: &TrainItem<'a>, step: u64) -> Result<Example<'a>> {
        let warm = step < self.plan.warmup_steps;
        let reference = |src: RefSource| -> Result<Reference<'a>> {
            match src {
                RefSource::Provided => item
                    .boundaries
                    .map(Reference::Given)
                    .ok_or_else(|| Error::Config("utterance has no reference boundaries".into())),
                RefSource::CtcViterbi => {
                    Ok(Reference::CtcViterbi { rule: self.plan.boundary_rule, frame_ms: self.plan.frame_ms })
                }
            }
        };
        let decot = match self.plan.decot {
            Some(src) if !warm => Some((reference(src)?, self.config.weights.delta)),
            _ => None,
        };
        let latency = match self.plan.latency {
            Some(src) if !warm => Some(reference(src)?),
            _ => None,
        };
        Ok(Example { features: item.features, tokens: item.tokens, decot, latency })
    }

    /// Mean loss and gradient over `batch` at the current parameters,
    /// using the noise streams of the current step.
    pub fn batch_gradient(&self, batch: &[TrainItem<'_>]) -> Result<(StepReport, BTreeMap<String, Array>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let step = self.adam.step;
        let weights = self.weights_at(step);
        let scale = 1.0 / batch.len() as f64;
        let mut report = StepReport { step: step + 1, ..StepReport::default() };
        let mut total: BTreeMap<String, Array> =
            self.params.map.iter().map(|(n, a)| (n.clone(), Array::zeros(a.shape()))).collect();
        for item in batch {
            let tape = Tape::new();
            let pv = ParamVars::bind(&tape, &self.params);
            let ex = self.example(item, step)?;
            let mut rng = stream(self.config.seed, &[NOISE_KEY, step, item.id]);
            let out = train_forward(&tape, &pv, &self.config, &weights, &ex, Some(&mut rng))?;
            let l = out.losses;
            for (name, v) in
                [("l_mocha", l.l_mocha), ("l_ctc", l.l_ctc), ("l_qua", l.l_qua), ("l_latency", l.l_latency)]
            {
                if !tape.item(v).is_finite() {
                    return Err(Error::NonFinite(name.into()));
                }
            }
            report.l_mocha += scale * tape.item(l.l_mocha);
            report.l_ctc += scale * tape.item(l.l_ctc);
            report.l_qua += scale * tape.item(l.l_qua);
            report.l_latency += scale * tape.item(l.l_latency);
            report.l_total += scale * tape.item(l.l_total);
            let grads = tape.backward(l.l_total)?;
            for (name, g) in pv.collect(&grads, &self.params) {
                let acc = total.get_mut(&name).expect("same names");
                for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * x;
                }
            }
        }
        Ok((report, total))
    }

    /// One optimizer step on `batch` at learning-rate multiplier `lr_scale`.
    pub fn train_step_scaled(&mut self, batch: &[TrainItem<'_>], lr_scale: f64) -> Result<StepReport> {
        let (mut report, grads) = self.batch_gradient(batch)?;
        let adam = AdamConfig { lr: self.plan.adam.lr * lr_scale, ..self.plan.adam };
        report.grad_norm = adam_step(&mut self.params, &grads, &mut self.adam, &adam)?;
        Ok(report)
    }

    /// One optimizer step on `batch` at the base learning rate.
    pub fn train_step(&mut self, batch: &[TrainItem<'_>]) -> Result<StepReport> {
        self.train_step_scaled(batch, 1.0)
    }

    /// Runs step `self.step_count()` of the deterministic epoch schedule over
    /// `items`. Resuming from a checkpoint continues the same schedule.
    pub fn scheduled_step(&mut self, items: &[TrainItem<'_>]) -> Result<StepReport> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("no training utterances".into()));
        }
        let per_epoch = items.len().div_ceil(self.plan.batch_size) as u64;
        let step = self.adam.step;
        let epoch = step / per_epoch;
        let batches = epoch_batches(items.len(), self.plan.batch_size, self.config.seed, epoch);
        let batch: Vec<TrainItem<'_>> = batches[(step % per_epoch) as usize].iter().map(|&k| items[k]).collect();
        self.train_step_scaled(&batch, math::powi(self.plan.lr_decay, epoch as i32))
    }
}
