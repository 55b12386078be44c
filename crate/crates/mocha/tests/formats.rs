use std::collections::BTreeSet;

use mocha::checkpoint::{self, Checkpoint, CheckpointHeader};
use mocha::config::{load_config, parse_mode, RunConfig};
use mocha::corpus::{read_corpus, read_manifest, write_corpus, Corpus, FEATURES_FILE};
use mocha::formats::{read_boundaries, read_emissions, write_boundaries, write_emissions, BoundaryRecord, EmissionLine};
use mocha::jsonl::canonical_json;
use mocha::report::{render_table, sort_rows, Report, ResultRow};
use mocha::Error;
use mocha_core::ctc::{BoundarySequence, BoundarySource};
use mocha_core::data::{generate_corpus, CorpusSpec};
use mocha_core::metrics::ErrorReport;
use mocha_core::model::{ModelConfig, Parameters};
use mocha_core::optim::AdamState;
use mocha_core::train::RefSource;

fn small_corpus(n: usize) -> Corpus {
    let spec = CorpusSpec { n_utts: n, ..CorpusSpec::default() };
    Corpus { utterances: generate_corpus(&spec).unwrap(), spec: Some(spec) }
}

#[test]
fn corpus_round_trip_up_to_f32() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(7);
    write_corpus(dir.path(), &corpus).unwrap();
    let back = read_corpus(dir.path()).unwrap();
    assert_eq!(back.spec, corpus.spec);
    assert_eq!(back.utterances.len(), 7);
    for (a, b) in corpus.utterances.iter().zip(&back.utterances) {
        assert_eq!(a.utt_id, b.utt_id);
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.boundaries, b.boundaries);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.features.shape(), b.features.shape());
        for (x, y) in a.features.data().iter().zip(b.features.data()) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.utterances.len(), corpus.utterances.len());
    assert!(!manifest.version.is_empty());
    assert!(manifest.prng.contains("xoshiro256++"));
}

#[test]
fn truncated_or_padded_features_are_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_corpus(3)).unwrap();
    let path = dir.path().join(FEATURES_FILE);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(read_corpus(dir.path()), Err(Error::Corrupt { .. })));
    let mut padded = bytes.clone();
    padded.extend_from_slice(&[0; 4]);
    std::fs::write(&path, &padded).unwrap();
    assert!(matches!(read_corpus(dir.path()), Err(Error::Corrupt { .. })));
}

#[test]
fn missing_token_rows_are_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_corpus(3)).unwrap();
    let path = dir.path().join("tokens.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let first_two: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, first_two).unwrap();
    assert!(matches!(read_corpus(dir.path()), Err(Error::Corrupt { .. })));
}

#[test]
fn empty_corpus_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &small_corpus(0)).unwrap();
    assert!(read_corpus(dir.path()).unwrap().utterances.is_empty());
}

fn tiny_checkpoint(with_adam: bool) -> Checkpoint {
    let model = ModelConfig { hidden_dim: 4, vocab_size: 5, input_dim: 3, ..ModelConfig::default() };
    let params = Parameters::init(&model).unwrap();
    let adam = with_adam.then(|| AdamState {
        step: 7,
        m: params.map.iter().map(|(k, a)| (k.clone(), a.map(|x| x * 0.5))).collect(),
        v: params.map.iter().map(|(k, a)| (k.clone(), a.map(|x| x * x))).collect(),
    });
    Checkpoint {
        header: CheckpointHeader { version: "v0-test".into(), config: RunConfig::default(), model, epoch: 3 },
        params,
        adam,
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for with_adam in [false, true] {
        let ckpt = tiny_checkpoint(with_adam);
        let bytes = checkpoint::encode(&ckpt).unwrap();
        assert_eq!(&bytes[..8], checkpoint::MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), checkpoint::FORMAT_VERSION);
        let back = checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(checkpoint::encode(&back).unwrap(), bytes);
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let ckpt = tiny_checkpoint(true);
    checkpoint::save(&path, &ckpt).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap(), ckpt);
}

#[test]
fn checkpoint_rejects_mismatch_and_corruption() {
    let ckpt = tiny_checkpoint(false);
    let other = ModelConfig { vocab_size: 6, ..ckpt.header.model.clone() };
    assert!(matches!(ckpt.check_model(&other), Err(Error::Config(_))));
    assert!(ckpt.check_model(&ckpt.header.model).is_ok());

    let bytes = checkpoint::encode(&ckpt).unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 1;
    assert!(matches!(checkpoint::decode(&bad_magic), Err(Error::Corrupt { .. })));
    let mut bad_version = bytes.clone();
    bad_version[8] = 9;
    assert!(matches!(checkpoint::decode(&bad_version), Err(Error::Corrupt { .. })));
    for cut in [5, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(checkpoint::decode(&bytes[..cut]), Err(Error::Corrupt { .. })), "cut {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(checkpoint::decode(&extra).is_err());
}

#[test]
fn checkpoint_header_must_match_parameters() {
    let mut ckpt = tiny_checkpoint(false);
    ckpt.header.model.vocab_size = 9;
    let bytes = checkpoint::encode(&ckpt).unwrap();
    assert!(matches!(checkpoint::decode(&bytes), Err(Error::Corrupt { .. })));
}

#[test]
fn boundary_lines_round_trip_with_fixed_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.jsonl");
    let recs = vec![
        BoundaryRecord::new("u0-00000", &BoundarySequence::new(vec![2, 5], BoundarySource::GroundTruth, 40.0)),
        BoundaryRecord::new("u0-00001", &BoundarySequence::new(vec![1], BoundarySource::CtcViterbi, 40.0)),
    ];
    write_boundaries(&path, &recs).unwrap();
    assert_eq!(read_boundaries(&path).unwrap(), recs);
    let first = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first, r#"{"boundaries":[2,5],"frame_ms":40.0,"source":"ground-truth","utt_id":"u0-00000"}"#);
}

#[test]
fn emission_lines_round_trip_with_fixed_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.jsonl");
    let lines = vec![
        EmissionLine { utt_id: "a".into(), token: 3, i: 1, frame: 4, p: 0.75 },
        EmissionLine { utt_id: "a".into(), token: 1, i: 2, frame: 9, p: 0.5 },
    ];
    write_emissions(&path, &lines).unwrap();
    assert_eq!(read_emissions(&path).unwrap(), lines);
    let v: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().next().unwrap()).unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["utt_id", "token", "i", "frame", "p"]));
}

#[test]
fn canonical_json_sorts_keys() {
    #[derive(serde::Serialize)]
    struct S {
        z: u8,
        a: u8,
    }
    assert_eq!(canonical_json(&S { z: 1, a: 2 }).unwrap(), r#"{"a":2,"z":1}"#);
}

fn write(dir: &std::path::Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "run.toml", "mode = \"stableemit\"\nseed = 4\n[train]\nepochs = 3\n[train.adam]\nlr = 0.01\n[loss]\nlambda_se = 0.2\n");
    let cfg = load_config(None, Some(&path), &[("train.epochs".into(), "5".into()), ("decode.tau".into(), "0.3".into())])
        .unwrap();
    assert_eq!(cfg.mode, "stableemit");
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.train.epochs, 5);
    assert_eq!(cfg.train.adam.lr, 0.01);
    assert_eq!(cfg.decode.tau, 0.3);
    let r = cfg.resolve().unwrap();
    assert_eq!(r.model.weights.lambda_se, 0.2);
    assert_eq!(r.model.seed, 4);
}

#[test]
fn unknown_or_mistyped_keys_are_config_errors() {
    assert!(matches!(load_config(None, None, &[("train.nope".into(), "1".into())]), Err(Error::Config(_))));
    assert!(matches!(load_config(None, None, &[("train".into(), "1".into())]), Err(Error::Config(_))));
    assert!(matches!(load_config(None, None, &[("train.epochs".into(), "many".into())]), Err(Error::Config(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.toml", "[model]\nwidth = 3\n");
    assert!(matches!(load_config(None, Some(&path), &[]), Err(Error::Config(_))));
    let path = write(dir.path(), "syntax.toml", "mode = \n");
    assert!(matches!(load_config(None, Some(&path), &[]), Err(Error::Config(_))));
}

fn with_mode(mode: &str) -> RunConfig {
    RunConfig { mode: mode.into(), ..RunConfig::default() }
}

#[test]
fn mode_rules() {
    let b = with_mode("baseline").resolve().unwrap();
    assert_eq!(b.model.weights.lambda_se, 0.0);
    assert_eq!(b.plan.decot, None);
    assert_eq!(b.plan.latency, None);

    let mut se0 = with_mode("stableemit");
    se0.loss.lambda_se = 0.0;
    assert_eq!(se0.resolve().unwrap(), b);

    let st = with_mode("ctc-st").resolve().unwrap();
    assert_eq!((st.model.weights.lambda_latency, st.model.weights.lambda_qua), (1.0, 0.0));
    assert_eq!(st.plan.latency, Some(RefSource::CtcViterbi));

    let combo = with_mode("stableemit+ctc-st").resolve().unwrap();
    assert_eq!(combo.model.weights.lambda_se, 0.1);
    assert_eq!(combo.plan.latency, Some(RefSource::CtcViterbi));

    let dc = with_mode("decot-ctc").resolve().unwrap();
    assert_eq!(dc.plan.decot, Some(RefSource::CtcViterbi));

    assert!(matches!(with_mode("decot").resolve(), Err(Error::Config(_))));
    assert!(matches!(with_mode("minlt").resolve(), Err(Error::Config(_))));
    let mut decot = with_mode("decot+minlt");
    decot.paths.boundaries = Some("refs.jsonl".into());
    let r = decot.resolve().unwrap();
    assert_eq!(r.plan.decot, Some(RefSource::Provided));
    assert_eq!(r.plan.latency, Some(RefSource::Provided));

    for bad in ["baseline+stableemit", "decot+decot-ctc", "ctc-st+minlt", "stableemit+stableemit", "fastemit", ""] {
        assert!(matches!(parse_mode(bad).and(Ok(())), Err(Error::Config(_))), "{bad}");
    }
    let mut lat = with_mode("baseline");
    lat.loss.lambda_latency = 0.5;
    assert!(matches!(lat.resolve(), Err(Error::Config(_))));
    let mut se = with_mode("stableemit");
    se.loss.lambda_se = 1.0;
    assert!(matches!(se.resolve(), Err(Error::Config(_))));
}

fn row(lse: f64, tau: f64) -> ResultRow {
    ResultRow {
        mode: "baseline".into(),
        lambda_se: lse,
        tau,
        utterances: 1,
        error: ErrorReport { substitutions: 1, insertions: 0, deletions: 1, reference_tokens: 4, rate: 0.5 },
        latency: mocha::report::LatencySummary { p50: Some(40.0), p90: Some(80.0), p95: None, timed_tokens: 3, deletions: 1 },
        mean_emit_p: Some(0.7),
    }
}

#[test]
fn rows_sort_by_lambda_then_tau_and_render() {
    let mut rows = vec![row(0.1, 0.5), row(0.0, 0.3), row(0.1, 0.1), row(0.0, 0.5)];
    sort_rows(&mut rows);
    let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda_se, r.tau)).collect();
    assert_eq!(keys, vec![(0.0, 0.3), (0.0, 0.5), (0.1, 0.1), (0.1, 0.5)]);
    let report = Report::new("decode", &RunConfig::default(), rows);
    let table = render_table(&report);
    assert!(table.contains("sub / ins / del [%]"));
    assert!(table.contains("25.00 / 0.00 / 25.00"));
    assert!(table.contains("TEL90 [ms]"));
    assert_eq!(table.lines().count(), 4 + 4);
}
