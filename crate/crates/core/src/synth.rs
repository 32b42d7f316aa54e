//! Known-truth corpus generator for end-to-end checks.
//!
//! Sentences are sampled from a typed IOB Markov chain. Every state owns a
//! vocabulary of words whose vectors are drawn around the state mean with
//! isotropic noise σ. With `a_i` unit vectors along orthogonal axes and `s` the
//! separation in units of σ, the means are
//!
//! - O: the origin
//! - B of type k: s·σ·(2·a_0 + a_1 + a_{3+k})
//! - I of type k: s·σ·(2·a_0 + a_2 + a_{3+k})
//!
//! so every pair of distinct states is at least s·σ·√2 apart and entity
//! states sit far from O. Each axis is spread evenly over `axis_width`
//! embedding dimensions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{write_conll, Corpus, EmbeddingTable, Sentence};
use crate::error::{Error, Result};
use crate::iob::{labels_from_spans, spans_from_labels, LabeledSpan};

const TYPE_NAMES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sentences: usize,
    pub types: usize,
    /// Embedding dimensions per axis; the embedding dimension is
    /// `(3 + types) · axis_width`.
    pub axis_width: usize,
    /// Distance scale between state means, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of opening a mention from O or at sentence start.
    pub entity_prob: f64,
    /// Probability that a mention continues with another I token.
    pub continue_prob: f64,
    /// Probability that a mention is directly followed by a new one.
    pub adjacent_prob: f64,
    pub outside_vocab: usize,
    /// Words per (B or I, type) pair.
    pub entity_vocab: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 500,
            types: 3,
            axis_width: 4,
            separation: 6.0,
            sigma: 1.0,
            min_len: 6,
            max_len: 14,
            entity_prob: 0.2,
            continue_prob: 0.5,
            adjacent_prob: 0.15,
            outside_vocab: 200,
            entity_vocab: 30,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// No mentions and no noise: every word sits exactly on the O mean.
    pub fn zero_entity() -> Self {
        SynthConfig {
            entity_prob: 0.0,
            sigma: 0.0,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.entity_prob, self.continue_prob, self.adjacent_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || self.continue_prob + self.adjacent_prob > 1.0
        {
            return Err(Error::Config(
                "synthetic transition probabilities must lie in [0, 1]".into(),
            ));
        }
        if self.types == 0 || self.axis_width == 0 {
            return Err(Error::Config(
                "synthetic data needs at least one type and a positive axis width".into(),
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(
                "synthetic sentence lengths need 1 <= min_len <= max_len".into(),
            ));
        }
        if self.outside_vocab == 0 || self.entity_vocab == 0 {
            return Err(Error::Config(
                "synthetic vocabularies must be non-empty".into(),
            ));
        }
        if !(self.sigma >= 0.0) || !self.separation.is_finite() {
            return Err(Error::Config(
                "synthetic sigma must be non-negative and separation finite".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        (3 + self.types) * self.axis_width
    }

    pub fn type_names(&self) -> Vec<String> {
        (0..self.types)
            .map(|k| {
                TYPE_NAMES
                    .get(k)
                    .map_or_else(|| format!("T{k}"), |s| s.to_string())
            })
            .collect()
    }
}

/// The generating parameters, kept for oracle checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub types: Vec<String>,
    /// O, then B-t and I-t for each type.
    pub states: Vec<String>,
    pub means: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    /// Generating state index of every word.
    pub word_state: BTreeMap<String, usize>,
}

pub struct SyntheticData {
    pub corpus: Corpus,
    pub embeddings: EmbeddingTable,
    pub truth: SynthTruth,
}

pub struct SynthPaths {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub truth: PathBuf,
}

fn state_index(is_b: bool, ty: usize) -> usize {
    1 + 2 * ty + usize::from(!is_b)
}

fn chain(config: &SynthConfig) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = config.types;
    let n = 1 + 2 * k;
    let open = config.entity_prob / k as f64;
    let mut initial = vec![0.0; n];
    initial[0] = 1.0 - config.entity_prob;
    for t in 0..k {
        initial[state_index(true, t)] = open;
    }
    let mut transition = vec![vec![0.0; n]; n];
    transition[0] = initial.clone();
    for s in 1..n {
        let ty = (s - 1) / 2;
        let row = &mut transition[s];
        row[0] = 1.0 - config.continue_prob - config.adjacent_prob;
        row[state_index(false, ty)] = config.continue_prob;
        for t in 0..k {
            row[state_index(true, t)] += config.adjacent_prob / k as f64;
        }
    }
    (initial, transition)
}

fn sample_from<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Samples a corpus with gold labels, its embeddings and the generating
/// parameters. Word names carry no information about their state.
pub fn make_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim();
    let w = config.axis_width;
    let types = config.type_names();
    let mut states = vec!["O".to_string()];
    let scale = config.separation * config.sigma / (w as f64).sqrt();
    let mut means = vec![vec![0.0; d]];
    for (t, name) in types.iter().enumerate() {
        for (prefix, axis) in [("B", 1), ("I", 2)] {
            states.push(format!("{prefix}-{name}"));
            let mut m = vec![0.0; d];
            for j in 0..w {
                m[j] = 2.0 * scale;
                m[axis * w + j] = scale;
                m[(3 + t) * w + j] = scale;
            }
            means.push(m);
        }
    }

    let mut owners: Vec<usize> = Vec::new();
    for s in 0..states.len() {
        let count = if s == 0 {
            config.outside_vocab
        } else {
            config.entity_vocab
        };
        owners.extend(std::iter::repeat_n(s, count));
    }
    owners.shuffle(&mut rng);
    let width = owners.len().to_string().len();
    let words: Vec<String> = (0..owners.len()).map(|i| format!("w{i:0width$}")).collect();
    let mut vocab: Vec<Vec<usize>> = vec![Vec::new(); states.len()];
    let mut entries = Vec::with_capacity(words.len());
    for (i, &s) in owners.iter().enumerate() {
        vocab[s].push(i);
        let v: Vec<f64> = means[s]
            .iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                m + config.sigma * z
            })
            .collect();
        entries.push((words[i].clone(), v));
    }
    let embeddings = EmbeddingTable::from_entries(entries)?;

    let (initial, transition) = chain(config);
    let mut sentences = Vec::with_capacity(config.sentences);
    for _ in 0..config.sentences {
        let len = rng.random_range(config.min_len..=config.max_len);
        let mut tokens = Vec::with_capacity(len);
        let mut labels = Vec::with_capacity(len);
        let mut s = sample_from(&initial, &mut rng);
        for i in 0..len {
            if i > 0 {
                s = sample_from(&transition[s], &mut rng);
            }
            let w = vocab[s][rng.random_range(0..vocab[s].len())];
            tokens.push(words[w].clone());
            labels.push(states[s].clone());
        }
        sentences.push(Sentence::labeled(tokens, labels));
    }

    let word_state = words.iter().cloned().zip(owners.iter().copied()).collect();
    Ok(SyntheticData {
        corpus: Corpus::new(sentences),
        embeddings,
        truth: SynthTruth {
            config: config.clone(),
            types,
            states,
            means,
            initial,
            transition,
            word_state,
        },
    })
}

impl SyntheticData {
    /// Writes `corpus.conll` (token and gold label), `embeddings.txt` and
    /// `truth.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SynthPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SynthPaths {
            corpus: dir.join("corpus.conll"),
            embeddings: dir.join("embeddings.txt"),
            truth: dir.join("truth.json"),
        };
        let gold = self.corpus.labels().unwrap_or_default();
        write_conll(&self.corpus, &gold, &paths.corpus)?;
        self.embeddings.save(&paths.embeddings)?;
        let f = File::create(&paths.truth).map_err(|e| Error::io(&paths.truth, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &self.truth)?;
        Ok(paths)
    }
}

/// Corrupts the labels of `round(fraction · n)` sentences chosen at random.
/// In a chosen sentence every mention is given a different type; a sentence
/// without mentions gets one spurious single-token mention. Returns the new
/// labels and the sorted indices of the corrupted sentences.
pub fn corrupt_labels<R: Rng>(
    labels: &[Vec<String>],
    types: &[String],
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<Vec<String>>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "corruption fraction {fraction} is not in [0, 1]"
        )));
    }
    if types.len() < 2 {
        return Err(Error::InvalidInput(
            "retyping mentions needs at least two types".into(),
        ));
    }
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut chosen: Vec<usize> = order[..(fraction * n as f64).round() as usize].to_vec();
    chosen.sort_unstable();
    let mut out = labels.to_vec();
    for &i in &chosen {
        let len = labels[i].len();
        if len == 0 {
            continue;
        }
        let mut spans = spans_from_labels(&labels[i]);
        if spans.is_empty() {
            let at = rng.random_range(0..len);
            spans.push(LabeledSpan {
                start: at,
                end: at,
                ty: Some(types[rng.random_range(0..types.len())].clone()),
            });
        } else {
            for s in &mut spans {
                let others: Vec<&String> =
                    types.iter().filter(|t| Some(*t) != s.ty.as_ref()).collect();
                s.ty = Some(others[rng.random_range(0..others.len())].clone());
            }
        }
        out[i] = labels_from_spans(len, &spans);
    }
    Ok((out, chosen))
}
