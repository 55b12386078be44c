//! Training and evaluation drivers shared by the CLI and the experiments.

use mocha_core::ctc::BoundarySequence;
use mocha_core::data::Utterance;
use mocha_core::decoder::{greedy_streaming_decode, DecodeConfig, DecodeResult};
use mocha_core::metrics::{tel, token_error_rate, ErrorReport, LatencyReport};
use mocha_core::model::{ModelConfig, Parameters};
use mocha_core::train::{StepReport, TrainItem, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::Resolved;
use crate::error::{Error, Result};

/// Mean loss terms over the steps of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub step: u64,
    pub steps: u64,
    pub l_mocha: f64,
    pub l_ctc: f64,
    pub l_qua: f64,
    pub l_latency: f64,
    pub l_total: f64,
    pub grad_norm: f64,
}

impl EpochLog {
    fn new(epoch: u64) -> Self {
        Self { epoch, step: 0, steps: 0, l_mocha: 0.0, l_ctc: 0.0, l_qua: 0.0, l_latency: 0.0, l_total: 0.0, grad_norm: 0.0 }
    }

    fn add(&mut self, r: &StepReport) {
        self.step = r.step;
        self.steps += 1;
        self.l_mocha += r.l_mocha;
        self.l_ctc += r.l_ctc;
        self.l_qua += r.l_qua;
        self.l_latency += r.l_latency;
        self.l_total += r.l_total;
        self.grad_norm += r.grad_norm;
    }

    fn finish(mut self) -> Self {
        let n = self.steps.max(1) as f64;
        for x in [&mut self.l_mocha, &mut self.l_ctc, &mut self.l_qua, &mut self.l_latency, &mut self.l_total, &mut self.grad_norm]
        {
            *x /= n;
        }
        self
    }
}

pub fn steps_per_epoch(n_utts: usize, batch_size: usize) -> u64 {
    n_utts.div_ceil(batch_size.max(1)) as u64
}

/// Trains until `resolved.epochs` complete, continuing from the trainer's
/// current step. `on_epoch` runs after every finished epoch.
pub fn run_training(
    resolved: &Resolved,
    utts: &[Utterance],
    refs: Option<&[BoundarySequence]>,
    trainer: &mut Trainer,
    mut on_epoch: impl FnMut(&Trainer, &EpochLog) -> Result<()>,
) -> Result<()> {
    if utts.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    if let Some(r) = refs {
        if r.len() != utts.len() {
            return Err(Error::config(format!("{} reference sequences for {} utterances", r.len(), utts.len())));
        }
    }
    for u in utts {
        if u.features.shape()[1] != resolved.model.input_dim {
            return Err(Error::config(format!(
                "{} has feature dim {}, model expects {}",
                u.utt_id,
                u.features.shape()[1],
                resolved.model.input_dim
            )));
        }
        if let Some(&t) = u.tokens.iter().find(|&&t| t >= resolved.model.vocab_size) {
            return Err(Error::config(format!("{} has token {t} outside the vocabulary", u.utt_id)));
        }
    }
    let items: Vec<TrainItem<'_>> = utts
        .iter()
        .enumerate()
        .map(|(k, u)| TrainItem {
            id: k as u64,
            features: &u.features,
            tokens: &u.tokens,
            boundaries: refs.map(|r| &r[k]),
        })
        .collect();
    let per_epoch = steps_per_epoch(items.len(), trainer.plan.batch_size);
    let total = resolved.epochs * per_epoch;
    let mut log = EpochLog::new(trainer.step_count() / per_epoch + 1);
    while trainer.step_count() < total {
        let report = trainer.scheduled_step(&items)?;
        log.add(&report);
        if trainer.step_count() % per_epoch == 0 {
            let epoch = trainer.step_count() / per_epoch;
            let done = std::mem::replace(&mut log, EpochLog::new(epoch + 1)).finish();
            on_epoch(trainer, &done)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub results: Vec<DecodeResult>,
    pub error: ErrorReport,
    pub latency: LatencyReport,
    /// Mean selection probability at emitted boundaries.
    pub mean_emit_p: Option<f64>,
}

pub fn evaluate(model: &ModelConfig, params: &Parameters, utts: &[Utterance], dcfg: DecodeConfig) -> Result<Evaluation> {
    let mut results = Vec::with_capacity(utts.len());
    let mut errors = Vec::with_capacity(utts.len());
    let mut latencies = Vec::with_capacity(utts.len());
    let (mut p_sum, mut p_n) = (0.0, 0usize);
    for u in utts {
        let r = greedy_streaming_decode(model, params, &u.features, dcfg)?;
        errors.push(token_error_rate(&r.tokens(), &u.tokens));
        latencies.push(tel(&r.emissions, &u.tokens, &u.boundaries)?);
        for e in &r.emissions {
            p_sum += e.p;
            p_n += 1;
        }
        results.push(r);
    }
    Ok(Evaluation {
        results,
        error: ErrorReport::combine(&errors),
        latency: LatencyReport::combine(&latencies),
        mean_emit_p: (p_n > 0).then(|| p_sum / p_n as f64),
    })
}
