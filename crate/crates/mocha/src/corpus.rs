//! Corpus directory: `features.f32` (little-endian f32 frames), a JSON
//! manifest indexing it, and `tokens.jsonl` / `boundaries.jsonl`.

use std::path::{Path, PathBuf};

use mocha_core::data::{CorpusSpec, Utterance};
use mocha_core::Array;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_boundaries, write_boundaries, BoundaryRecord, TokenRecord};
use crate::jsonl::{read_json, read_jsonl, write_canonical, write_jsonl};
use crate::version::VERSION;

pub const FEATURES_FILE: &str = "features.f32";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOKENS_FILE: &str = "tokens.jsonl";
pub const BOUNDARIES_FILE: &str = "boundaries.jsonl";

/// Generator recorded in every manifest so corpora can be reproduced elsewhere.
pub fn prng_description() -> String {
    format!("{}; normals: rand_distr 0.4 StandardNormal; integers: rand 0.8 gen_range", mocha_core::rng::ALGORITHM)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utt_id: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub dim: usize,
    /// Byte offset of the first frame in the features file.
    pub offset: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub prng: String,
    pub spec: Option<CorpusSpec>,
    pub utterances: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: Option<CorpusSpec>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn dim(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.features.shape()[1])
    }
}

fn file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let (t, dim) = u.features.dims2()?;
        entries.push(ManifestEntry { utt_id: u.utt_id.clone(), t, dim, offset: payload.len() as u64, seed: u.seed });
        for &x in u.features.data() {
            payload.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let features = file(dir, FEATURES_FILE);
    std::fs::write(&features, &payload).map_err(Error::io(&features))?;
    let manifest =
        Manifest { version: VERSION.into(), prng: prng_description(), spec: corpus.spec.clone(), utterances: entries };
    write_canonical(&file(dir, MANIFEST_FILE), &manifest)?;
    let tokens: Vec<TokenRecord> = corpus
        .utterances
        .iter()
        .map(|u| TokenRecord { utt_id: u.utt_id.clone(), tokens: u.tokens.clone() })
        .collect();
    write_jsonl(&file(dir, TOKENS_FILE), &tokens)?;
    let bounds: Vec<BoundaryRecord> =
        corpus.utterances.iter().map(|u| BoundaryRecord::new(&u.utt_id, &u.boundaries)).collect();
    write_boundaries(&file(dir, BOUNDARIES_FILE), &bounds)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&file(dir, MANIFEST_FILE))
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = read_manifest(dir)?;
    let features_path = file(dir, FEATURES_FILE);
    let payload = std::fs::read(&features_path).map_err(Error::io(&features_path))?;
    let tokens: Vec<TokenRecord> = read_jsonl(&file(dir, TOKENS_FILE))?;
    let bounds = read_boundaries(&file(dir, BOUNDARIES_FILE))?;
    let n = manifest.utterances.len();
    let bad = |detail: String| Error::corrupt(format!("corpus {}", dir.display()), detail);
    if tokens.len() != n || bounds.len() != n {
        return Err(bad(format!(
            "manifest lists {n} utterances but found {} token rows and {} boundary rows",
            tokens.len(),
            bounds.len()
        )));
    }
    let mut expected_offset = 0u64;
    let mut utterances = Vec::with_capacity(n);
    for ((e, tok), b) in manifest.utterances.iter().zip(tokens).zip(bounds) {
        if tok.utt_id != e.utt_id || b.utt_id != e.utt_id {
            return Err(bad(format!("row order mismatch at {}", e.utt_id)));
        }
        if e.offset != expected_offset {
            return Err(bad(format!("{}: offset {} but expected {}", e.utt_id, e.offset, expected_offset)));
        }
        let len = e.t * e.dim * 4;
        let start = e.offset as usize;
        let bytes = payload
            .get(start..start + len)
            .ok_or_else(|| bad(format!("{}: features truncated ({} bytes present)", e.utt_id, payload.len())))?;
        let data: Vec<f64> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let features = Array::new(&[e.t, e.dim], data)?;
        let boundaries = b.sequence();
        boundaries.validate(e.t).map_err(|err| bad(format!("{}: {err}", e.utt_id)))?;
        if boundaries.len() != tok.tokens.len() {
            return Err(bad(format!("{}: {} tokens but {} boundaries", e.utt_id, tok.tokens.len(), boundaries.len())));
        }
        utterances.push(Utterance { utt_id: e.utt_id.clone(), features, tokens: tok.tokens, boundaries, seed: e.seed });
        expected_offset += len as u64;
    }
    if expected_offset != payload.len() as u64 {
        return Err(bad(format!("features file has {} bytes, manifest covers {}", payload.len(), expected_offset)));
    }
    Ok(Corpus { spec: manifest.spec, utterances })
}
