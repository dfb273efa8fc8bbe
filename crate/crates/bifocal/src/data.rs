//! Seeded synthetic wake-word transduction task.
//!
//! Stands in for a speech corpus: every token owns a fixed random embedding,
//! an utterance is a few lead-in tokens drawn from a tiny low-perplexity
//! alphabet followed by body tokens from the full vocabulary, and frames are
//! the token embeddings plus Gaussian noise. The lead-in/body boundary is
//! the wake-word pivot. Generation is pure in (spec, utterance index) so
//! corpora are reproducible and trivially parallel.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, SeededRng};

/// Reserved label id; real tokens are 1..=vocab_size.
pub const BLANK: usize = 0;

pub const DATASET_FORMAT: &str = "bifocal-dataset";
pub const DATASET_VERSION: u32 = 1;

fn default_vocab_size() -> usize {
    32
}
fn default_feature_dim() -> usize {
    16
}
fn default_frames_per_token() -> usize {
    4
}
fn default_lead_alphabet() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_body_alphabet() -> Vec<usize> {
    (1..=default_vocab_size()).collect()
}
fn default_lead_in_fraction() -> f64 {
    0.318
}
fn default_noise_std() -> f64 {
    0.05
}
fn default_min_tokens() -> usize {
    4
}
fn default_max_tokens() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    /// Real (non-blank) token count; ids run 1..=vocab_size.
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_frames_per_token")]
    pub frames_per_token: usize,
    /// Low-perplexity alphabet the lead-in is sampled from.
    #[serde(default = "default_lead_alphabet")]
    pub lead_alphabet: Vec<usize>,
    #[serde(default = "default_body_alphabet")]
    pub body_alphabet: Vec<usize>,
    /// Target share of each utterance's tokens spent in the lead-in.
    #[serde(default = "default_lead_in_fraction")]
    pub lead_in_fraction: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_min_tokens")]
    pub min_tokens: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            vocab_size: default_vocab_size(),
            feature_dim: default_feature_dim(),
            frames_per_token: default_frames_per_token(),
            lead_alphabet: default_lead_alphabet(),
            body_alphabet: default_body_alphabet(),
            lead_in_fraction: default_lead_in_fraction(),
            noise_std: default_noise_std(),
            min_tokens: default_min_tokens(),
            max_tokens: default_max_tokens(),
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn with_seed(seed: u64) -> Self {
        TaskSpec { seed, ..TaskSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::config("data.vocab_size", "need at least one real token"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("data.feature_dim", "must be positive"));
        }
        if self.frames_per_token == 0 {
            return Err(Error::config("data.frames_per_token", "must be positive"));
        }
        for (path, alphabet) in
            [("data.lead_alphabet", &self.lead_alphabet), ("data.body_alphabet", &self.body_alphabet)]
        {
            if alphabet.is_empty() {
                return Err(Error::config(path, "alphabet is empty"));
            }
            if let Some(&t) = alphabet.iter().find(|&&t| t == BLANK || t > self.vocab_size) {
                return Err(Error::config(path, format!("token {t} outside 1..={}", self.vocab_size)));
            }
        }
        if !(self.lead_in_fraction > 0.0 && self.lead_in_fraction < 1.0) {
            return Err(Error::config("data.lead_in_fraction", "must lie strictly inside (0, 1)"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("data.noise_std", "must be non-negative"));
        }
        if self.min_tokens < 2 || self.max_tokens < self.min_tokens {
            return Err(Error::config(
                "data.min_tokens",
                "need min_tokens >= 2 (one lead plus one body) and max_tokens >= min_tokens",
            ));
        }
        Ok(())
    }

    /// Fixed per-token embeddings, uniform on [-1, 1); row 0 (blank) stays
    /// zero and is never emitted.
    pub fn token_embeddings(&self) -> Vec<Vec<f32>> {
        let mut rng = SeededRng::with_stream(self.seed, 0);
        let mut table = vec![vec![0.0f32; self.feature_dim]];
        for _ in 1..=self.vocab_size {
            table.push((0..self.feature_dim).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect());
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub frames: Vec<Vec<f32>>,
    /// First frame index after the lead-in.
    pub ww_frame_index: usize,
    pub labels: Vec<usize>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frames_cast<F: Scalar>(&self) -> Vec<Vec<F>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|&v| F::from_real(v as f64)).collect())
            .collect()
    }
}

/// Lead-in token count: floor(n*p) plus a Bernoulli on the fractional part,
/// so the expected share is exactly p before the [1, n-1] clamp.
fn sample_lead_tokens(n: usize, p: f64, rng: &mut SeededRng) -> usize {
    let target = n as f64 * p;
    let mut k = target.floor() as usize;
    if rng.chance(target.fract()) {
        k += 1;
    }
    k.clamp(1, n - 1)
}

fn generate_one(spec: &TaskSpec, embeddings: &[Vec<f32>], index: usize) -> Utterance {
    let mut rng = SeededRng::with_stream(spec.seed, 1 + index as u64);
    let n_tokens = spec.min_tokens + rng.below(spec.max_tokens - spec.min_tokens + 1);
    let n_lead = sample_lead_tokens(n_tokens, spec.lead_in_fraction, &mut rng);

    let mut labels = Vec::with_capacity(n_tokens);
    for _ in 0..n_lead {
        labels.push(spec.lead_alphabet[rng.below(spec.lead_alphabet.len())]);
    }
    for _ in n_lead..n_tokens {
        labels.push(spec.body_alphabet[rng.below(spec.body_alphabet.len())]);
    }

    let mut frames = Vec::with_capacity(n_tokens * spec.frames_per_token);
    for &token in &labels {
        for _ in 0..spec.frames_per_token {
            let frame = embeddings[token]
                .iter()
                .map(|&e| (e as f64 + rng.normal(0.0, spec.noise_std)) as f32)
                .collect();
            frames.push(frame);
        }
    }

    Utterance { frames, ww_frame_index: n_lead * spec.frames_per_token, labels }
}

pub fn generate(spec: &TaskSpec, count: usize) -> Result<Vec<Utterance>> {
    spec.validate()?;
    let embeddings = spec.token_embeddings();
    Ok((0..count).map(|i| generate_one(spec, &embeddings, i)).collect())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    version: u32,
    feature_dim: usize,
    count: usize,
}

/// One structured-text record per line, after a versioned header line.
pub fn write_dataset(path: impl AsRef<Path>, corpus: &[Utterance]) -> Result<()> {
    let path = path.as_ref();
    let feature_dim = corpus
        .first()
        .and_then(|u| u.frames.first())
        .map_or(0, Vec::len);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = DatasetHeader {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        feature_dim,
        count: corpus.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for u in corpus {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let bad = |line: usize, message: String| Error::Dataset { path: shown.clone(), line, message };

    let mut lines = BufReader::new(std::fs::File::open(path)?).lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| bad(1, "empty file, expected a header line".into()))?;
    let header: DatasetHeader = serde_json::from_str(&first?).map_err(|e| bad(1, e.to_string()))?;
    if header.format != DATASET_FORMAT {
        return Err(bad(1, format!("format {:?}, expected {DATASET_FORMAT:?}", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(bad(1, format!("version {}, expected {DATASET_VERSION}", header.version)));
    }

    let mut corpus = Vec::with_capacity(header.count);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let u: Utterance = serde_json::from_str(&text).map_err(|e| bad(line_no, e.to_string()))?;
        if u.labels.is_empty() {
            return Err(bad(line_no, "labels are empty".into()));
        }
        if u.labels.contains(&BLANK) {
            return Err(bad(line_no, "labels contain the blank id".into()));
        }
        if u.ww_frame_index >= u.frames.len() {
            return Err(bad(
                line_no,
                format!("ww_frame_index {} outside {} frames", u.ww_frame_index, u.frames.len()),
            ));
        }
        if let Some(f) = u.frames.iter().find(|f| f.len() != header.feature_dim) {
            return Err(bad(
                line_no,
                format!("frame width {}, header says {}", f.len(), header.feature_dim),
            ));
        }
        corpus.push(u);
    }
    if corpus.len() != header.count {
        return Err(bad(1, format!("header count {}, found {}", header.count, corpus.len())));
    }
    Ok(corpus)
}
