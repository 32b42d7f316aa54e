//! Reinforcement-learned instance selection for noisy tagger training.
//!
//! A logistic policy over a fixed-size sentence state decides which noisy
//! sentences the tagger trains on. After each batch of decisions the reward
//! is the mean tagger log-probability of the selected sentences' labels, and
//! the policy takes a REINFORCE step. After every pass over the corpus the
//! rejected sentences are relabeled by the tagger.

use std::collections::VecDeque;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::tagger::{self, TaggedSentence, TaggerConfig, TaggerModel, Tagset};
use crate::tensor::{log_sum_exp, sigmoid, Sgd};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    /// Sentences per decision batch.
    pub batch_size: usize,
    /// Passes over the corpus.
    pub rounds: usize,
    /// Tagger epochs on all noisy data before the first selection.
    pub warmup_epochs: usize,
    pub learning_rate: f64,
    /// Sampling probabilities are clamped to `[ε, 1 − ε]`.
    pub epsilon: f64,
    /// Subtract a moving average of recent rewards.
    pub baseline: bool,
    pub baseline_window: usize,
    /// Replace rejected sentences' labels by the tagger's decode after each pass.
    pub relabel: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            batch_size: 10,
            rounds: 3,
            warmup_epochs: 1,
            learning_rate: 0.03,
            epsilon: 0.05,
            baseline: false,
            baseline_window: 10,
            relabel: true,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.baseline_window == 0 {
            return Err(Error::Config(
                "selector batch size and baseline window must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::Config(
                "selector learning rate must be >= 0 and epsilon in [0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// Logistic policy weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorParams {
    pub w: Vec<f64>,
    pub b: f64,
}

impl SelectorParams {
    pub fn zeros(dim: usize) -> Self {
        SelectorParams {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn logit(&self, s: &[f64]) -> f64 {
        self.w.iter().zip(s).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    /// Probability of selecting a sentence with state `s`.
    pub fn select_prob(&self, s: &[f64]) -> f64 {
        sigmoid(self.logit(s))
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.w.iter().all(|x| x.is_finite())
    }
}

/// Decisions and reward for one batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionRound {
    pub sentences: Vec<usize>,
    pub actions: Vec<bool>,
    pub reward: f64,
}

impl SelectionRound {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.sentences
            .iter()
            .zip(&self.actions)
            .filter(|(_, &a)| a)
            .map(|(&i, _)| i)
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.sentences
            .iter()
            .zip(&self.actions)
            .filter(|(_, &a)| !a)
            .map(|(&i, _)| i)
    }
}

/// Mean recurrent feature vector followed by the mean of the row-normalized
/// (log-softmax) tag-score rows with every entry except the current label's
/// zeroed. Length `2H + T`.
pub fn state_repr(
    sentence: &TaggedSentence,
    tagger: &TaggerModel,
    embeddings: &EmbeddingTable,
) -> Result<Vec<f64>> {
    let (features, scores) = tagger.features(&sentence.tokens, embeddings)?;
    let rows =
        |m: &crate::tensor::Matrix| (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
    Ok(pool_state(&rows(&features), &rows(&scores), &sentence.tags))
}

/// Pooling behind [`state_repr`] on explicit feature and score rows.
pub fn pool_state(features: &[Vec<f64>], scores: &[Vec<f64>], tags: &[usize]) -> Vec<f64> {
    let fd = features.first().map_or(0, Vec::len);
    let t = scores.first().map_or(0, Vec::len);
    let mut s = vec![0.0; fd + t];
    let l = features.len();
    if l == 0 {
        return s;
    }
    for f in features {
        for (a, x) in s[..fd].iter_mut().zip(f) {
            *a += x;
        }
    }
    for (row, &y) in scores.iter().zip(tags) {
        s[fd + y] += row[y] - log_sum_exp(row);
    }
    for a in &mut s {
        *a /= l as f64;
    }
    s
}

/// `A(s, a)` = σ(W·s + b) for `a` = select, 1 − σ(W·s + b) otherwise.
pub fn policy_prob(s: &[f64], action: bool, params: &SelectorParams) -> f64 {
    let p = params.select_prob(s);
    if action {
        p
    } else {
        1.0 - p
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log A(s, a)`, stable for large logits.
pub fn log_policy(s: &[f64], action: bool, params: &SelectorParams) -> f64 {
    let z = params.logit(s);
    if action {
        -softplus(-z)
    } else {
        -softplus(z)
    }
}

/// Gradient of [`log_policy`] with respect to `(W, b)`: `(a − σ)·(s, 1)`.
pub fn log_policy_grad(s: &[f64], action: bool, params: &SelectorParams) -> (Vec<f64>, f64) {
    let g = if action { 1.0 } else { 0.0 } - params.select_prob(s);
    (s.iter().map(|x| g * x).collect(), g)
}

/// Mean tagger log-probability of the given sentences' labels. Never positive.
pub fn compute_reward(
    selected: &[&TaggedSentence],
    tagger: &TaggerModel,
    embeddings: &EmbeddingTable,
) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::InvalidInput(
            "reward needs at least one sentence".into(),
        ));
    }
    let mut total = 0.0;
    for s in selected {
        total += tagger.sentence_log_prob(&s.tokens, &s.tags, embeddings)?;
    }
    Ok(total / selected.len() as f64)
}

/// `Θ ← Θ + α·(r − baseline)·Σⱼ ∇ log A(sⱼ, aⱼ)`.
pub fn reinforce_update(
    round: &SelectionRound,
    states: &[Vec<f64>],
    params: &mut SelectorParams,
    learning_rate: f64,
    baseline: f64,
) -> Result<()> {
    if states.len() != round.actions.len() {
        return Err(Error::Shape(format!(
            "{} states for {} actions",
            states.len(),
            round.actions.len()
        )));
    }
    let scale = learning_rate * (round.reward - baseline);
    if scale == 0.0 {
        return Ok(());
    }
    let mut gw = vec![0.0; params.w.len()];
    let mut gb = 0.0;
    for (s, &a) in states.iter().zip(&round.actions) {
        let (w, b) = log_policy_grad(s, a, params);
        for (acc, x) in gw.iter_mut().zip(w) {
            *acc += x;
        }
        gb += b;
    }
    for (w, g) in params.w.iter_mut().zip(gw) {
        *w += scale * g;
    }
    params.b += scale * gb;
    if !params.is_finite() {
        return Err(Error::Diverged(
            "selector parameters became non-finite".into(),
        ));
    }
    Ok(())
}

/// Statistics of one pass over the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub pass: usize,
    pub selected: usize,
    /// Sentences rejected during the pass, in index order.
    pub rejected: Vec<usize>,
    pub empty_batches: usize,
    pub mean_reward: f64,
    pub relabeled: usize,
}

pub struct RefineOutput {
    /// Final tagger decode of every sentence.
    pub labels: Vec<Vec<String>>,
    /// Training labels after the last relabeling step.
    pub training_labels: Vec<Vec<String>>,
    pub tagger: TaggerModel,
    pub selector: SelectorParams,
    pub passes: Vec<PassReport>,
}

/// Select probability of every sentence under the final tagger and policy.
pub fn select_probabilities(
    data: &[TaggedSentence],
    tagger: &TaggerModel,
    params: &SelectorParams,
    embeddings: &EmbeddingTable,
) -> Result<Vec<f64>> {
    data.iter()
        .map(|s| Ok(params.select_prob(&state_repr(s, tagger, embeddings)?)))
        .collect()
}

/// Alternates policy-driven selection, tagger training on the selected
/// sentences and relabeling of the rejected ones, starting from a fresh
/// tagger warmed up on all noisy labels.
pub fn refine_loop<R: Rng>(
    corpus: &Corpus,
    noisy: &[Vec<String>],
    tagset: &Tagset,
    embeddings: &EmbeddingTable,
    tagger_config: &TaggerConfig,
    config: &SelectorConfig,
    rng: &mut R,
) -> Result<RefineOutput> {
    config.validate()?;
    let data = tagger::tagged_sentences(corpus, noisy, tagset)?;
    let mut model = TaggerModel::for_corpus(
        tagger_config.clone(),
        tagset.clone(),
        corpus,
        embeddings,
        rng,
    )?;
    for epoch in 0..config.warmup_epochs {
        tagger::train_epoch(&mut model, &data, embeddings, epoch, rng)?;
    }
    let params = SelectorParams::zeros(model.feature_dim() + tagset.len());
    refine_with(
        corpus,
        data,
        model,
        params,
        embeddings,
        config,
        config.warmup_epochs,
        rng,
    )
}

/// The selection loop on an existing tagger and policy. `first_epoch` is the
/// tagger schedule position of the first pass.
#[allow(clippy::too_many_arguments)]
pub fn refine_with<R: Rng>(
    corpus: &Corpus,
    mut data: Vec<TaggedSentence>,
    mut model: TaggerModel,
    mut params: SelectorParams,
    embeddings: &EmbeddingTable,
    config: &SelectorConfig,
    first_epoch: usize,
    rng: &mut R,
) -> Result<RefineOutput> {
    config.validate()?;
    if data.len() != corpus.len() {
        return Err(Error::Shape(format!(
            "{} labeled sentences for a corpus of {}",
            data.len(),
            corpus.len()
        )));
    }
    let state_dim = model.feature_dim() + model.tagset.len();
    if params.w.len() != state_dim {
        return Err(Error::Shape(format!(
            "selector has {} weights, state has {state_dim}",
            params.w.len()
        )));
    }
    let opt = Sgd {
        clip_norm: Some(model.config.clip_norm),
    };
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(config.baseline_window);
    let mut passes = Vec::with_capacity(config.rounds);
    let mut epoch = first_epoch;

    for pass in 0..config.rounds {
        let lr = model.config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut negatives = Vec::new();
        let (mut selected, mut empty, mut reward_sum, mut batches) = (0, 0, 0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let states: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| state_repr(&data[i], &model, embeddings))
                .collect::<Result<_>>()?;
            let actions: Vec<bool> = states
                .iter()
                .map(|s| {
                    let p = params
                        .select_prob(s)
                        .clamp(config.epsilon, 1.0 - config.epsilon);
                    rng.random::<f64>() < p
                })
                .collect();
            let chosen: Vec<&TaggedSentence> = chunk
                .iter()
                .zip(&actions)
                .filter(|(_, &a)| a)
                .map(|(&i, _)| &data[i])
                .collect();
            // An all-rejected batch is scored on the whole batch.
            let reward = if chosen.is_empty() {
                empty += 1;
                let all: Vec<&TaggedSentence> = chunk.iter().map(|&i| &data[i]).collect();
                compute_reward(&all, &model, embeddings)?
            } else {
                compute_reward(&chosen, &model, embeddings)?
            };
            let round = SelectionRound {
                sentences: chunk.to_vec(),
                actions,
                reward,
            };
            let baseline = if config.baseline && !recent.is_empty() {
                recent.iter().sum::<f64>() / recent.len() as f64
            } else {
                0.0
            };
            for i in round.positives() {
                model
                    .crf_nll(
                        std::slice::from_ref(&data[i]),
                        embeddings,
                        Some(&mut *rng as &mut dyn RngCore),
                    )
                    .map_err(|e| match e {
                        Error::Diverged(_) => {
                            Error::Diverged(format!("non-finite tagger loss on sentence {i}"))
                        }
                        other => other,
                    })?;
                opt.step(model.params_mut(), lr);
                selected += 1;
            }
            reinforce_update(&round, &states, &mut params, config.learning_rate, baseline)?;
            if config.baseline {
                if recent.len() == config.baseline_window {
                    recent.pop_front();
                }
                recent.push_back(reward);
            }
            negatives.extend(round.negatives());
            reward_sum += reward;
            batches += 1;
        }
        negatives.sort_unstable();
        let mut relabeled = 0;
        for &i in negatives.iter().filter(|_| config.relabel) {
            let tags = model.predict(&data[i].tokens, embeddings)?;
            if tags != data[i].tags {
                relabeled += 1;
                data[i].tags = tags;
            }
        }
        epoch += 1;
        if selected == 0 {
            warn!("refine pass {pass}: every sentence was rejected");
        }
        let report = PassReport {
            pass,
            selected,
            rejected: negatives,
            empty_batches: empty,
            mean_reward: if batches == 0 {
                0.0
            } else {
                reward_sum / batches as f64
            },
            relabeled,
        };
        debug!(
            "refine pass {pass}: {} selected, {} rejected, {} relabeled, mean reward {:.4}",
            report.selected,
            report.rejected.len(),
            report.relabeled,
            report.mean_reward
        );
        passes.push(report);
    }
    info!(
        "refine: {} passes over {} sentences",
        passes.len(),
        data.len()
    );

    let labels = model.decode_corpus(corpus, embeddings)?;
    let training_labels = data.iter().map(|s| model.tagset.decode(&s.tags)).collect();
    Ok(RefineOutput {
        labels,
        training_labels,
        tagger: model,
        selector: params,
        passes,
    })
}
