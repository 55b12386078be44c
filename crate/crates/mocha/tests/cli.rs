use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mocha::checkpoint;
use mocha::corpus::{read_corpus, write_corpus};
use mocha::experiment::EpochLog;
use mocha::formats::read_emissions;
use mocha::jsonl::{read_json, read_jsonl};
use mocha::report::Report;

fn mocha(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mocha")).args(args).output().expect("run mocha")
}

fn ok(args: &[&str]) -> Output {
    let out = mocha(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    mocha(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &["--model.hidden_dim=6", "--train.epochs=2", "--train.batch_size=4", "--data.tokens_max=4"];

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["generate-data", "--out", s(&out), "--data.n_utts=8", "--data.tokens_max=4"];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn train(corpus: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--corpus", s(corpus), "--out", s(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    mocha(&args)
}

fn log(dir: &Path) -> Vec<EpochLog> {
    read_jsonl(&dir.join("train_log.jsonl")).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&["--help"]), 0);
    let out = ok(&["--version"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains(mocha::version::VERSION));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["train"]), 1);
    assert_eq!(code(&["generate-data", "--out", "/tmp/x", "--model.bogus=1"]), 1);
}

#[test]
fn generate_data_is_reproducible_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", &["--seed=3"]);
    let b = gen(dir.path(), "b", &["--seed=3"]);
    let c = gen(dir.path(), "c", &["--seed=4"]);
    for f in ["features.f32", "tokens.jsonl", "boundaries.jsonl", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(std::fs::read(a.join("features.f32")).unwrap(), std::fs::read(c.join("features.f32")).unwrap());
    assert_eq!(read_corpus(&a).unwrap().utterances.len(), 8);
    assert_eq!(code(&["generate-data", "--out", s(&dir.path().join("d")), "--data.seg_min=1"]), 1);
}

#[test]
fn train_logs_and_checkpoints_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "train", &[]);
    let out = dir.path().join("run");
    assert_eq!(train(&corpus, &out, &["--mode=stableemit"]).status.code(), Some(0));
    let entries = log(&out);
    assert_eq!(entries.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(entries[1].step, 4);
    assert!(entries.iter().all(|e| e.l_total.is_finite() && e.l_mocha > 0.0 && e.l_ctc > 0.0));
    for name in ["ckpt-epoch-001.ckpt", "ckpt-epoch-002.ckpt", "last.ckpt"] {
        let ckpt = checkpoint::load(&out.join(name)).unwrap();
        assert_eq!(ckpt.header.config.mode, "stableemit");
        assert_eq!(ckpt.header.version, mocha::version::VERSION);
    }
    let meta: serde_json::Value = read_json(&out.join("meta.json")).unwrap();
    assert_eq!(meta["version"], mocha::version::VERSION);
    assert_eq!(meta["config"]["model"]["hidden_dim"], 6);
}

#[test]
fn baseline_equals_stableemit_at_zero_discount() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "train", &[]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(train(&corpus, &a, &["--mode=baseline"]).status.code(), Some(0));
    assert_eq!(train(&corpus, &b, &["--mode=stableemit", "--loss.lambda_se=0"]).status.code(), Some(0));
    assert_eq!(log(&a), log(&b));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "train", &[]);
    let full = dir.path().join("full");
    assert_eq!(train(&corpus, &full, &["--mode=stableemit+ctc-st", "--train.epochs=3"]).status.code(), Some(0));
    let resumed = dir.path().join("resumed");
    let ckpt = full.join("ckpt-epoch-001.ckpt");
    ok(&["train", "--corpus", s(&corpus), "--out", s(&resumed), "--resume", s(&ckpt), "--train.epochs=3"]);
    let (f, r) = (log(&full), log(&resumed));
    assert_eq!(r.len(), 2);
    assert_eq!(&f[1..], &r[..]);
    assert_eq!(
        checkpoint::load(&full.join("last.ckpt")).unwrap().params,
        checkpoint::load(&resumed.join("last.ckpt")).unwrap().params
    );
}

#[test]
fn decot_needs_a_boundary_source() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "train", &[]);
    assert_eq!(train(&corpus, &dir.path().join("x"), &["--mode=decot"]).status.code(), Some(1));
    let refs = format!("--paths.boundaries={}", s(&corpus.join("boundaries.jsonl")));
    assert_eq!(train(&corpus, &dir.path().join("y"), &["--mode=decot", &refs]).status.code(), Some(0));
    assert_eq!(train(&corpus, &dir.path().join("z"), &["--mode=decot-ctc"]).status.code(), Some(0));
    assert_eq!(train(&corpus, &dir.path().join("w"), &["--mode=minlt", &refs]).status.code(), Some(0));
}

#[test]
fn non_finite_features_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = gen(dir.path(), "train", &[]);
    let mut corpus = read_corpus(&corpus_dir).unwrap();
    corpus.utterances[0].features.data_mut()[0] = f64::NAN;
    let bad = dir.path().join("bad");
    write_corpus(&bad, &corpus).unwrap();
    assert_eq!(train(&bad, &dir.path().join("run"), &[]).status.code(), Some(2));
}

#[test]
fn decode_writes_emissions_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "train", &[]);
    let test = gen(dir.path(), "test", &["--data.split=1", "--data.n_utts=5"]);
    let run = dir.path().join("run");
    assert_eq!(train(&corpus, &run, &[]).status.code(), Some(0));
    let ckpt = run.join("last.ckpt");
    let out = dir.path().join("dec");
    ok(&["decode", "--checkpoint", s(&ckpt), "--corpus", s(&test), "--out", s(&out)]);
    let report: Report = read_json(&out.join("report.json")).unwrap();
    assert_eq!(report.version, mocha::version::VERSION);
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].tau, 0.5);
    assert_eq!(report.rows[0].utterances, 5);
    assert!(std::fs::read_to_string(out.join("report.txt")).unwrap().contains("TEL90"));
    let lines = read_emissions(&out.join("emissions-tau0.5.jsonl")).unwrap();
    assert!(lines.iter().all(|l| l.i >= 1 && l.frame >= 1 && l.p >= 0.5));

    let again = dir.path().join("dec2");
    ok(&["decode", "--checkpoint", s(&ckpt), "--corpus", s(&test), "--out", s(&again)]);
    assert_eq!(std::fs::read(out.join("report.json")).unwrap(), std::fs::read(again.join("report.json")).unwrap());

    let sweep = dir.path().join("sweep");
    ok(&["decode", "--checkpoint", s(&ckpt), "--corpus", s(&test), "--out", s(&sweep), "--tau", "0.5,0.3,0.1"]);
    let report: Report = read_json(&sweep.join("report.json")).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.tau).collect::<Vec<_>>(), vec![0.1, 0.3, 0.5]);
    assert!(sweep.join("emissions-tau0.1.jsonl").exists());

    assert_eq!(code(&["decode", "--checkpoint", s(&ckpt), "--corpus", s(&test), "--out", s(&out), "--tau", "1.5"]), 1);
}

#[test]
fn decode_of_empty_corpus_gives_empty_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "train", &[]);
    let empty = gen(dir.path(), "empty", &["--data.n_utts=0"]);
    let run = dir.path().join("run");
    assert_eq!(train(&corpus, &run, &["--train.epochs=1"]).status.code(), Some(0));
    let out = dir.path().join("dec");
    ok(&["decode", "--checkpoint", s(&run.join("last.ckpt")), "--corpus", s(&empty), "--out", s(&out)]);
    let report: Report = read_json(&out.join("report.json")).unwrap();
    let r = &report.rows[0];
    assert_eq!((r.utterances, r.error.reference_tokens, r.error.rate), (0, 0, 0.0));
    assert_eq!((r.latency.p50, r.latency.timed_tokens), (None, 0));
    assert!(read_emissions(&out.join("emissions-tau0.5.jsonl")).unwrap().is_empty());
}

#[test]
fn decode_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "train", &[]);
    let run = dir.path().join("run");
    assert_eq!(train(&corpus, &run, &["--train.epochs=1"]).status.code(), Some(0));
    let ckpt = run.join("last.ckpt");
    let wide = gen(dir.path(), "wide", &["--data.input_dim=5"]);
    assert_eq!(code(&["decode", "--checkpoint", s(&ckpt), "--corpus", s(&wide), "--out", s(&dir.path().join("o"))]), 1);
    let broken = dir.path().join("broken.ckpt");
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&broken, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&["decode", "--checkpoint", s(&broken), "--corpus", s(&corpus), "--out", s(&dir.path().join("o"))]), 1);
}

#[test]
fn ablate_grid_rows_and_single_cell_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), "train", &[]);
    let test = gen(dir.path(), "test", &["--data.split=1", "--data.n_utts=4"]);
    let out = dir.path().join("grid");
    let mut args = vec!["ablate", "--corpus", s(&corpus), "--test-corpus", s(&test), "--out", s(&out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--train.epochs=1", "--ablate.lambda_se=[0.1, 0.0]", "--ablate.tau=[0.5, 0.3, 0.1]"]);
    ok(&args);
    let report: Report = read_json(&out.join("ablation.json")).unwrap();
    let keys: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.lambda_se, r.tau)).collect();
    assert_eq!(keys, vec![(0.0, 0.1), (0.0, 0.3), (0.0, 0.5), (0.1, 0.1), (0.1, 0.3), (0.1, 0.5)]);
    let table = std::fs::read_to_string(out.join("ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 4 + 6);

    let one = dir.path().join("one");
    let mut args = vec!["ablate", "--corpus", s(&corpus), "--test-corpus", s(&test), "--out", s(&one)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--train.epochs=1", "--ablate.lambda_se=[0.1]", "--ablate.tau=[0.3]"]);
    ok(&args);
    let cell: Report = read_json(&one.join("ablation.json")).unwrap();
    assert_eq!(cell.rows.len(), 1);
    let run = dir.path().join("run");
    assert_eq!(train(&corpus, &run, &["--train.epochs=1", "--mode=stableemit"]).status.code(), Some(0));
    let dec = dir.path().join("dec");
    ok(&["decode", "--checkpoint", s(&run.join("last.ckpt")), "--corpus", s(&test), "--out", s(&dec), "--tau", "0.3"]);
    let single: Report = read_json(&dec.join("report.json")).unwrap();
    let (a, b) = (&cell.rows[0], &single.rows[0]);
    assert_eq!((a.lambda_se, a.tau, a.error, &a.latency, a.mean_emit_p), (b.lambda_se, b.tau, b.error, &b.latency, b.mean_emit_p));

    let mut args = vec!["ablate", "--corpus", s(&corpus), "--test-corpus", s(&test), "--out", s(&one)];
    args.push("--ablate.tau=[]");
    assert_eq!(code(&args), 1);
}
