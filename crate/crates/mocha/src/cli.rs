//! Subcommands: generate-data, train, decode, ablate.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mocha_core::ctc::BoundarySequence;
use mocha_core::data::generate_corpus;
use mocha_core::model::Parameters;
use mocha_core::train::Trainer;
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint, CheckpointHeader};
use crate::config::{load_config, parse_mode, split_overrides, Component, Resolved, RunConfig};
use crate::corpus::{read_corpus, write_corpus, Corpus};
use crate::error::{Error, Result};
use crate::experiment::{evaluate, run_training};
use crate::formats::{boundaries_for, read_boundaries, write_emissions, EmissionLine};
use crate::jsonl::{append_jsonl, write_canonical, write_text};
use crate::report::{render_table, sort_rows, Report, ResultRow};
use crate::version::VERSION;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Debug, Parser)]
#[command(name = "mocha", version = VERSION, about = "MoChA with StableEmit: data, training, decoding, ablations")]
#[command(after_help = "Any config key can be overridden with --<section>.<key>=<value>, e.g. --train.epochs=3.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model, logging every epoch and checkpointing after it.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode a corpus with a checkpoint and score it.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Boundary thresholds; several values sweep them.
        #[arg(long, value_delimiter = ',')]
        tau: Vec<f64>,
    },
    /// Train and decode every cell of a (mode, lambda_se, tau) grid.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        test_corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (args, overrides) = split_overrides(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, overrides: &[(String, String)]) -> Result<()> {
    match command {
        Command::GenerateData { out, config } => {
            let cfg = load_config(None, config.as_deref(), overrides)?;
            generate_data(&cfg, &out)
        }
        Command::Train { corpus, out, config, resume } => {
            let resume = resume.map(|p| checkpoint::load(&p)).transpose()?;
            let base = resume.as_ref().map(|c| &c.header.config);
            let cfg = load_config(base, config.as_deref(), overrides)?;
            let corpus = read_corpus(&corpus)?;
            train(&cfg, &corpus, &out, resume).map(|_| ())
        }
        Command::Decode { checkpoint: path, corpus, out, tau } => {
            let ckpt = checkpoint::load(&path)?;
            let cfg = load_config(Some(&ckpt.header.config), None, overrides)?;
            let corpus = read_corpus(&corpus)?;
            let taus = if tau.is_empty() { vec![cfg.decode.tau] } else { tau };
            decode(&cfg, &ckpt, &corpus, &taus, &out).map(|_| ())
        }
        Command::Ablate { corpus, test_corpus, out, config } => {
            let cfg = load_config(None, config.as_deref(), overrides)?;
            let train_set = read_corpus(&corpus)?;
            let test_set = read_corpus(&test_corpus)?;
            ablate(&cfg, &train_set, &test_set, &out).map(|_| ())
        }
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    version: &'a str,
    config: &'a RunConfig,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn generate_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.corpus_spec();
    let utterances = generate_corpus(&spec)?;
    write_corpus(out, &Corpus { spec: Some(spec), utterances })?;
    eprintln!("wrote {} utterances to {}", cfg.data.n_utts, out.display());
    Ok(())
}

fn load_refs(resolved: &Resolved, corpus: &Corpus) -> Result<Option<Vec<BoundarySequence>>> {
    let Some(path) = &resolved.boundaries else { return Ok(None) };
    let records = read_boundaries(path)?;
    let ids: Vec<&str> = corpus.utterances.iter().map(|u| u.utt_id.as_str()).collect();
    let refs = boundaries_for(&records, &ids)?;
    for (u, r) in corpus.utterances.iter().zip(&refs) {
        if r.len() != u.tokens.len() {
            return Err(Error::config(format!("{}: reference has {} boundaries for {} tokens", u.utt_id, r.len(), u.tokens.len())));
        }
        r.validate(u.frames()).map_err(|e| Error::config(format!("{}: {e}", u.utt_id)))?;
    }
    Ok(Some(refs))
}

/// Trains per `cfg`, writing `meta.json`, the epoch log, and checkpoints
/// into `out`. Returns the final parameters.
pub fn train(cfg: &RunConfig, corpus: &Corpus, out: &Path, resume: Option<Checkpoint>) -> Result<Trainer> {
    let resolved = cfg.resolve()?;
    let refs = load_refs(&resolved, corpus)?;
    let mut trainer = Trainer::new(resolved.model.clone(), resolved.plan)?;
    if let Some(ckpt) = resume {
        if ckpt.header.model != resolved.model {
            return Err(Error::config("resumed run must keep the checkpoint's model config"));
        }
        trainer.params = ckpt.params;
        trainer.adam = ckpt.adam.ok_or_else(|| Error::config("checkpoint has no optimizer state to resume"))?;
    }
    create_dir(out)?;
    write_canonical(&out.join("meta.json"), &Meta { version: VERSION, config: cfg })?;
    let log_path = out.join(LOG_FILE);
    write_text(&log_path, "")?;
    run_training(&resolved, &corpus.utterances, refs.as_deref(), &mut trainer, |t, log| {
        append_jsonl(&log_path, log)?;
        eprintln!(
            "epoch {} step {} l_total {:.4} l_mocha {:.4} l_ctc {:.4} l_qua {:.4} l_latency {:.4}",
            log.epoch, log.step, log.l_total, log.l_mocha, log.l_ctc, log.l_qua, log.l_latency
        );
        let ckpt = Checkpoint {
            header: CheckpointHeader { version: VERSION.into(), config: cfg.clone(), model: t.config.clone(), epoch: log.epoch },
            params: t.params.clone(),
            adam: Some(t.adam.clone()),
        };
        checkpoint::save(&out.join(format!("ckpt-epoch-{:03}.ckpt", log.epoch)), &ckpt)?;
        checkpoint::save(&out.join(LAST_CHECKPOINT), &ckpt)
    })?;
    Ok(trainer)
}

fn check_corpus(params: &Parameters, model: &mocha_core::model::ModelConfig, corpus: &Corpus) -> Result<()> {
    params.check_against(model)?;
    for u in &corpus.utterances {
        if u.features.shape()[1] != model.input_dim {
            return Err(Error::config(format!(
                "{} has feature dim {}, model expects {}",
                u.utt_id,
                u.features.shape()[1],
                model.input_dim
            )));
        }
    }
    Ok(())
}

fn tau_label(tau: f64) -> String {
    format!("emissions-tau{tau}.jsonl")
}

/// Decodes `corpus` at each threshold, writing emissions per threshold and
/// one report.
pub fn decode(cfg: &RunConfig, ckpt: &Checkpoint, corpus: &Corpus, taus: &[f64], out: &Path) -> Result<Report> {
    let model = &ckpt.header.model;
    check_corpus(&ckpt.params, model, corpus)?;
    create_dir(out)?;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let dcfg = mocha_core::decoder::DecodeConfig { tau, ..cfg.decode };
        dcfg.validate()?;
        let eval = evaluate(model, &ckpt.params, &corpus.utterances, dcfg)?;
        let lines: Vec<EmissionLine> = corpus
            .utterances
            .iter()
            .zip(&eval.results)
            .flat_map(|(u, r)| r.emissions.iter().map(|e| EmissionLine::new(&u.utt_id, e)))
            .collect();
        write_emissions(&out.join(tau_label(tau)), &lines)?;
        rows.push(ResultRow::new(&cfg.mode, model.weights.lambda_se, tau, corpus.utterances.len(), &eval));
    }
    sort_rows(&mut rows);
    let report = Report::new("decode", cfg, rows);
    write_canonical(&out.join("report.json"), &report)?;
    write_text(&out.join("report.txt"), &render_table(&report))?;
    Ok(report)
}

/// Config of one ablation cell: `lambda_se > 0` turns StableEmit on.
pub fn cell_config(cfg: &RunConfig, mode: &str, lambda_se: f64) -> Result<RunConfig> {
    let mut set = parse_mode(mode)?;
    if lambda_se > 0.0 {
        set.insert(Component::StableEmit);
    } else {
        set.remove(&Component::StableEmit);
    }
    let mut cell = cfg.clone();
    cell.mode = crate::config::mode_string(&set);
    cell.loss.lambda_se = lambda_se;
    Ok(cell)
}

pub fn ablate(cfg: &RunConfig, train_set: &Corpus, test_set: &Corpus, out: &Path) -> Result<Report> {
    let modes = if cfg.ablate.modes.is_empty() { vec![cfg.mode.clone()] } else { cfg.ablate.modes.clone() };
    if cfg.ablate.lambda_se.is_empty() || cfg.ablate.tau.is_empty() {
        return Err(Error::config("ablation grid is empty"));
    }
    let mut rows = Vec::new();
    for mode in &modes {
        for &lambda_se in &cfg.ablate.lambda_se {
            let cell = cell_config(cfg, mode, lambda_se)?;
            let dir = out.join("cells").join(format!("{}_lse{}", mode.replace('+', "-"), lambda_se));
            eprintln!("cell mode={} lambda_se={}", cell.mode, lambda_se);
            train(&cell, train_set, &dir, None)?;
            let ckpt = checkpoint::load(&dir.join(LAST_CHECKPOINT))?;
            let report = decode(&cell, &ckpt, test_set, &cfg.ablate.tau, &dir.join("decode"))?;
            rows.extend(report.rows.into_iter().map(|r| ResultRow { mode: mode.clone(), ..r }));
        }
    }
    sort_rows(&mut rows);
    let report = Report::new("ablation", cfg, rows);
    write_canonical(&out.join("ablation.json"), &report)?;
    write_text(&out.join("ablation.txt"), &render_table(&report))?;
    Ok(report)
}
