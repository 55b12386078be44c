//! Deterministic synthetic streaming corpus with known token boundaries.
//!
//! Token `v` owns two random template vectors `A_v`, `B_v`; a segment of
//! length `L` for `v` linearly interpolates from `A_v` to `B_v`. An
//! utterance is a run of segments followed by a short silence (zeros), with
//! Gaussian noise on every frame. The ground-truth boundary of a token is
//! its segment's final frame.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;

use crate::array::Array;
use crate::ctc::{BoundarySequence, BoundarySource};
use crate::error::{Error, Result};
use crate::rng::{derive, int_inclusive, normal, normal_array, stream, Rng64};

const TEMPLATE_KEY: u64 = 0x7e4a;
const UTT_KEY: u64 = 0x0771;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusSpec {
    pub n_utts: usize,
    pub vocab_size: usize,
    pub input_dim: usize,
    pub seg_min: usize,
    pub seg_max: usize,
    pub tokens_min: usize,
    pub tokens_max: usize,
    pub noise: f64,
    pub seed: u64,
    /// Distinguishes corpora that share templates (e.g. train and test).
    pub split: u64,
    pub trailing_silence: usize,
    pub frame_ms: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_utts: 2000,
            vocab_size: 20,
            input_dim: 16,
            seg_min: 3,
            seg_max: 8,
            tokens_min: 2,
            tokens_max: 12,
            noise: 0.1,
            seed: 0,
            split: 0,
            trailing_silence: 2,
            frame_ms: 40.0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seg_min < 2 || self.seg_max < self.seg_min {
            return bad(format!("segment length range [{}, {}] needs 2 <= min <= max", self.seg_min, self.seg_max));
        }
        if self.vocab_size < 3 {
            return bad(format!("vocab_size must be >= 3, got {}", self.vocab_size));
        }
        if self.tokens_min < 1 || self.tokens_max < self.tokens_min {
            return bad(format!("token count range [{}, {}] is invalid", self.tokens_min, self.tokens_max));
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if !(self.frame_ms > 0.0) {
            return bad(format!("frame_ms must be positive, got {}", self.frame_ms));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    /// `T x input_dim`.
    pub features: Array,
    pub tokens: Vec<usize>,
    pub boundaries: BoundarySequence,
    pub seed: u64,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }
}

/// Start and end templates of every token, each `V x input_dim`.
pub fn templates(spec: &CorpusSpec) -> (Array, Array) {
    let mut rng = stream(spec.seed, &[TEMPLATE_KEY]);
    let a = normal_array(&mut rng, &[spec.vocab_size, spec.input_dim], 1.0);
    let b = normal_array(&mut rng, &[spec.vocab_size, spec.input_dim], 1.0);
    (a, b)
}

/// Noise-free frames of one segment.
pub fn segment(templates: &(Array, Array), token: usize, len: usize) -> Vec<Vec<f64>> {
    let (a, b) = (templates.0.row_slice(token), templates.1.row_slice(token));
    (0..len)
        .map(|k| {
            let t = if len > 1 { k as f64 / (len - 1) as f64 } else { 0.0 };
            a.iter().zip(b).map(|(x, y)| x + (y - x) * t).collect()
        })
        .collect()
}

pub fn generate_utterance(spec: &CorpusSpec, templates: &(Array, Array), index: usize) -> Utterance {
    let seed = derive(spec.seed, &[UTT_KEY, spec.split, index as u64]);
    let mut rng = Rng64::seed_from_u64(seed);
    let u = int_inclusive(&mut rng, spec.tokens_min, spec.tokens_max);
    let mut tokens = Vec::with_capacity(u);
    let mut frames: Vec<Vec<f64>> = Vec::new();
    let mut boundaries = Vec::with_capacity(u);
    for _ in 0..u {
        let token = int_inclusive(&mut rng, 0, spec.vocab_size - 1);
        let len = int_inclusive(&mut rng, spec.seg_min, spec.seg_max);
        frames.extend(segment(templates, token, len));
        tokens.push(token);
        boundaries.push(frames.len());
    }
    for _ in 0..spec.trailing_silence {
        frames.push(alloc::vec![0.0; spec.input_dim]);
    }
    let mut data = Vec::with_capacity(frames.len() * spec.input_dim);
    for f in &frames {
        for &x in f {
            data.push(if spec.noise > 0.0 { x + spec.noise * normal(&mut rng) } else { x });
        }
    }
    let features = Array::new(&[frames.len(), spec.input_dim], data).expect("frame shape");
    Utterance {
        utt_id: format!("u{}-{:05}", spec.split, index),
        features,
        tokens,
        boundaries: BoundarySequence::new(boundaries, BoundarySource::GroundTruth, spec.frame_ms),
        seed,
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Utterance>> {
    spec.validate()?;
    let t = templates(spec);
    Ok((0..spec.n_utts).map(|k| generate_utterance(spec, &t, k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> CorpusSpec {
        CorpusSpec { n_utts: 30, noise, ..CorpusSpec::default() }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_corpus(&small(0.1)).unwrap();
        assert_eq!(a, generate_corpus(&small(0.1)).unwrap());
        let b = generate_corpus(&CorpusSpec { seed: 1, ..small(0.1) }).unwrap();
        assert_ne!(a[0].features, b[0].features);
        let test = generate_corpus(&CorpusSpec { split: 1, ..small(0.1) }).unwrap();
        assert_ne!(a[0].tokens, test[0].tokens);
    }

    #[test]
    fn structure_matches_generation_parameters() {
        let spec = small(0.1);
        for u in generate_corpus(&spec).unwrap() {
            assert!((2..=12).contains(&u.tokens.len()));
            assert!(u.tokens.iter().all(|&t| t < spec.vocab_size));
            let b = &u.boundaries.boundaries;
            assert_eq!(b.len(), u.tokens.len());
            assert!(b.windows(2).all(|w| w[0] < w[1]));
            assert!(b[0] >= spec.seg_min);
            assert!(b.windows(2).all(|w| (spec.seg_min..=spec.seg_max).contains(&(w[1] - w[0]))));
            assert_eq!(u.frames(), b[b.len() - 1] + spec.trailing_silence);
            assert_eq!(u.boundaries.source, BoundarySource::GroundTruth);
        }
    }

    #[test]
    fn noiseless_segments_are_classified_perfectly() {
        let spec = small(0.0);
        let t = templates(&spec);
        for u in generate_corpus(&spec).unwrap() {
            let mut start = 0;
            for (&tok, &end) in u.tokens.iter().zip(&u.boundaries.boundaries) {
                let len = end - start;
                let seg: Vec<&[f64]> = (start..end).map(|j| u.features.row_slice(j)).collect();
                let dist = |v: usize| -> f64 {
                    segment(&t, v, len)
                        .iter()
                        .zip(&seg)
                        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)))
                        .sum()
                };
                let best = (0..spec.vocab_size).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
                assert_eq!(best, tok);
                assert_eq!(dist(tok), 0.0);
                start = end;
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for bad in [
            CorpusSpec { seg_min: 1, ..CorpusSpec::default() },
            CorpusSpec { seg_max: 2, ..CorpusSpec::default() },
            CorpusSpec { vocab_size: 2, ..CorpusSpec::default() },
            CorpusSpec { noise: -1.0, ..CorpusSpec::default() },
        ] {
            assert!(generate_corpus(&bad).is_err());
        }
    }
}
