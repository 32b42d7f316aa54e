//! Hidden Markov model over word embeddings with full-covariance Gaussian
//! emissions and a categorical emission over K-means cluster tags.
//!
//! The span detector uses three states in the order `O`, `I`, `B`. Everything
//! except [`init_from_seed_tags`] works for any number of states.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::kcluster::SeedTags;
use crate::tensor::log_sum_exp;

pub const STATE_O: usize = 0;
pub const STATE_I: usize = 1;
pub const STATE_B: usize = 2;
pub const IOB_STATES: [&str; 3] = ["O", "I", "B"];

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub labels: Vec<String>,
    pub initial: Vec<f64>,
    /// Row-stochastic, `transition[from][to]`.
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    /// `cluster_emission[state][cluster]` = p(cluster | state).
    pub cluster_emission: Vec<Vec<f64>>,
}

impl HmmParams {
    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_emission.first().map_or(0, Vec::len)
    }

    /// Checks shapes, normalization and positive definiteness.
    pub fn validate(&self) -> Result<()> {
        let s = self.n_states();
        let d = self.dim();
        let c = self.n_clusters();
        let shape_ok = s > 0
            && d > 0
            && c > 0
            && self.initial.len() == s
            && self.transition.len() == s
            && self.transition.iter().all(|r| r.len() == s)
            && self.means.len() == s
            && self.means.iter().all(|m| m.len() == d)
            && self.covariances.len() == s
            && self
                .covariances
                .iter()
                .all(|m| m.len() == d && m.iter().all(|r| r.len() == d))
            && self.cluster_emission.len() == s
            && self.cluster_emission.iter().all(|r| r.len() == c);
        if !shape_ok {
            return Err(Error::Shape("inconsistent HMM parameter shapes".into()));
        }
        let stochastic = |v: &[f64]| {
            v.iter().all(|&p| (0.0..=1.0).contains(&p))
                && (v.iter().sum::<f64>() - 1.0).abs() <= NORM_TOL
        };
        if !stochastic(&self.initial) {
            return Err(Error::InvalidInput(
                "initial distribution does not sum to 1".into(),
            ));
        }
        for (z, row) in self.transition.iter().enumerate() {
            if !stochastic(row) {
                return Err(Error::InvalidInput(format!(
                    "transition row {} does not sum to 1",
                    self.labels[z]
                )));
            }
        }
        for (z, row) in self.cluster_emission.iter().enumerate() {
            if !stochastic(row) {
                return Err(Error::InvalidInput(format!(
                    "cluster emission row {} does not sum to 1",
                    self.labels[z]
                )));
            }
        }
        self.gaussians().map(|_| ())
    }

    fn gaussians(&self) -> Result<Vec<Gaussian>> {
        self.means
            .iter()
            .zip(&self.covariances)
            .zip(&self.labels)
            .map(|((m, s), label)| {
                Gaussian::new(m, s).map_err(|_| {
                    Error::NotPositiveDefinite(format!(
                        "covariance of state {label} is not positive definite"
                    ))
                })
            })
            .collect()
    }

    fn log_tables(&self) -> LogTables {
        LogTables {
            initial: self.initial.iter().map(|p| p.ln()).collect(),
            transition: self
                .transition
                .iter()
                .map(|r| r.iter().map(|p| p.ln()).collect())
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let p: HmmParams = serde_json::from_reader(BufReader::new(f))?;
        p.validate()?;
        Ok(p)
    }
}

struct LogTables {
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

/// A multivariate normal prepared for repeated log-density evaluation.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: &[f64], cov: &[Vec<f64>]) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(format!("covariance must be {d}x{d}")));
        }
        let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let chol = m.cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite("covariance is not positive definite".into())
        })?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
        Ok(Gaussian {
            mean: DVector::from_column_slice(mean),
            chol_l: l,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Log of the multivariate normal density, evaluated through a Cholesky factor.
pub fn log_gaussian_density(x: &[f64], mu: &[f64], sigma: &[Vec<f64>]) -> Result<f64> {
    if x.len() != mu.len() {
        return Err(Error::Shape(format!(
            "x has {} components, mean has {}",
            x.len(),
            mu.len()
        )));
    }
    Ok(Gaussian::new(mu, sigma)?.log_pdf(x))
}

/// One observed sentence: embedding and cluster tag per token.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmSentence {
    pub x: Vec<Vec<f64>>,
    pub v: Vec<usize>,
}

impl HmmSentence {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Per-token, per-state log emission: log N(x; μ_z, Σ_z) + log p(v | z).
pub fn log_emissions(sentence: &HmmSentence, params: &HmmParams) -> Result<Vec<Vec<f64>>> {
    if sentence.x.len() != sentence.v.len() {
        return Err(Error::Shape(
            "sentence has mismatched embedding and cluster lengths".into(),
        ));
    }
    let gs = params.gaussians()?;
    sentence
        .x
        .iter()
        .zip(&sentence.v)
        .map(|(x, &v)| {
            if x.len() != params.dim() || v >= params.n_clusters() {
                return Err(Error::Shape(
                    "token does not match the model dimensions".into(),
                ));
            }
            Ok(gs
                .iter()
                .zip(&params.cluster_emission)
                .map(|(g, ce)| g.log_pdf(x) + ce[v].ln())
                .collect())
        })
        .collect()
}

/// Log joint probability of a sentence and a state path.
pub fn joint_log_prob(sentence: &HmmSentence, labels: &[usize], params: &HmmParams) -> Result<f64> {
    if labels.len() != sentence.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} tokens",
            labels.len(),
            sentence.len()
        )));
    }
    let em = log_emissions(sentence, params)?;
    let lt = params.log_tables();
    let mut total = 0.0;
    for (i, (&z, row)) in labels.iter().zip(&em).enumerate() {
        total += if i == 0 {
            lt.initial[z]
        } else {
            lt.transition[labels[i - 1]][z]
        };
        total += row[z];
    }
    Ok(total)
}

/// Log marginal likelihood of a sentence (forward algorithm).
pub fn forward_loglik(sentence: &HmmSentence, params: &HmmParams) -> Result<f64> {
    let em = log_emissions(sentence, params)?;
    Ok(forward(&em, &params.log_tables()).1)
}

/// Most probable state path; ties go to the lower state index.
pub fn viterbi_decode(sentence: &HmmSentence, params: &HmmParams) -> Result<Vec<usize>> {
    let em = log_emissions(sentence, params)?;
    Ok(viterbi_from_emissions(&em, params))
}

fn forward(em: &[Vec<f64>], lt: &LogTables) -> (Vec<Vec<f64>>, f64) {
    let s = lt.initial.len();
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(em.len());
    let mut buf = vec![0.0; s];
    for (t, row) in em.iter().enumerate() {
        let a: Vec<f64> = if t == 0 {
            (0..s).map(|z| lt.initial[z] + row[z]).collect()
        } else {
            let prev = &alpha[t - 1];
            (0..s)
                .map(|z| {
                    for (y, b) in buf.iter_mut().enumerate() {
                        *b = prev[y] + lt.transition[y][z];
                    }
                    log_sum_exp(&buf) + row[z]
                })
                .collect()
        };
        alpha.push(a);
    }
    let ll = alpha.last().map_or(0.0, |a| log_sum_exp(a));
    (alpha, ll)
}

fn backward(em: &[Vec<f64>], lt: &LogTables) -> Vec<Vec<f64>> {
    let s = lt.initial.len();
    let n = em.len();
    let mut beta = vec![vec![0.0; s]; n];
    let mut buf = vec![0.0; s];
    for t in (0..n.saturating_sub(1)).rev() {
        for y in 0..s {
            for (z, b) in buf.iter_mut().enumerate() {
                *b = lt.transition[y][z] + em[t + 1][z] + beta[t + 1][z];
            }
            beta[t][y] = log_sum_exp(&buf);
        }
    }
    beta
}

/// State posteriors and expected transition counts for one sentence.
#[derive(Clone, Debug)]
pub struct Posteriors {
    /// `gamma[t][z]` = p(z_t = z | x).
    pub gamma: Vec<Vec<f64>>,
    /// Σ_t p(z_t = y, z_{t+1} = z | x).
    pub xi: Vec<Vec<f64>>,
    pub loglik: f64,
}

/// Forward-backward in log space from a log-emission table.
pub fn posteriors_from_emissions(em: &[Vec<f64>], params: &HmmParams) -> Posteriors {
    let lt = params.log_tables();
    posteriors_inner(em, &lt)
}

fn posteriors_inner(em: &[Vec<f64>], lt: &LogTables) -> Posteriors {
    let s = lt.initial.len();
    let (alpha, ll) = forward(em, lt);
    let beta = backward(em, lt);
    let gamma = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y - ll).exp()).collect())
        .collect();
    let mut xi = vec![vec![0.0; s]; s];
    for t in 0..em.len().saturating_sub(1) {
        for (y, row) in xi.iter_mut().enumerate() {
            for (z, cell) in row.iter_mut().enumerate() {
                let lp = alpha[t][y] + lt.transition[y][z] + em[t + 1][z] + beta[t + 1][z] - ll;
                if lp > f64::NEG_INFINITY {
                    *cell += lp.exp();
                }
            }
        }
    }
    Posteriors {
        gamma,
        xi,
        loglik: ll,
    }
}

/// Max-product decode from a log-emission table.
pub fn viterbi_from_emissions(em: &[Vec<f64>], params: &HmmParams) -> Vec<usize> {
    viterbi_inner(em, &params.log_tables())
}

fn viterbi_inner(em: &[Vec<f64>], lt: &LogTables) -> Vec<usize> {
    let s = lt.initial.len();
    let n = em.len();
    if n == 0 {
        return Vec::new();
    }
    let mut delta: Vec<f64> = (0..s).map(|z| lt.initial[z] + em[0][z]).collect();
    let mut back = vec![vec![0usize; s]; n];
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; s];
        for z in 0..s {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for y in 0..s {
                let v = delta[y] + lt.transition[y][z];
                if v > best {
                    best = v;
                    arg = y;
                }
            }
            next[z] = best + em[t][z];
            back[t][z] = arg;
        }
        delta = next;
    }
    let mut last = 0;
    for z in 1..s {
        if delta[z] > delta[last] {
            last = z;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    path
}

/// Observations indexed by token type, so that emission densities are
/// evaluated once per distinct token rather than once per occurrence.
#[derive(Clone, Debug, Default)]
pub struct HmmCorpus {
    pub type_vectors: Vec<Vec<f64>>,
    pub type_clusters: Vec<usize>,
    pub sentences: Vec<Vec<usize>>,
}

impl HmmCorpus {
    /// Types are the corpus vocabulary in first-occurrence order; vectors
    /// come from the embedding fallback chain, clusters from the seed tags.
    pub fn from_corpus(corpus: &Corpus, embeddings: &EmbeddingTable, tags: &SeedTags) -> Self {
        let vocab = corpus.vocabulary();
        let index: std::collections::HashMap<&str, usize> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        HmmCorpus {
            type_vectors: vocab
                .iter()
                .map(|w| embeddings.lookup(w).to_vec())
                .collect(),
            type_clusters: vocab.iter().map(|w| usize::from(tags.get(w))).collect(),
            sentences: corpus
                .sentences
                .iter()
                .map(|s| s.tokens.iter().map(|t| index[t.as_str()]).collect())
                .collect(),
        }
    }

    /// Every token becomes its own type.
    pub fn from_sentences(sentences: &[HmmSentence]) -> Self {
        let mut c = HmmCorpus::default();
        for s in sentences {
            let mut ids = Vec::with_capacity(s.len());
            for (x, &v) in s.x.iter().zip(&s.v) {
                ids.push(c.type_vectors.len());
                c.type_vectors.push(x.clone());
                c.type_clusters.push(v);
            }
            c.sentences.push(ids);
        }
        c
    }

    pub fn sentence(&self, i: usize) -> HmmSentence {
        HmmSentence {
            x: self.sentences[i]
                .iter()
                .map(|&t| self.type_vectors[t].clone())
                .collect(),
            v: self.sentences[i]
                .iter()
                .map(|&t| self.type_clusters[t])
                .collect(),
        }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.type_vectors.first().map_or(0, Vec::len)
    }

    fn type_counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.type_vectors.len()];
        for s in &self.sentences {
            for &t in s {
                counts[t] += 1.0;
            }
        }
        counts
    }

    /// Token-weighted mean of the per-dimension variances.
    pub fn mean_variance(&self) -> f64 {
        let counts = self.type_counts();
        weighted_moments(&self.type_vectors, &counts)
            .1
            .map_or(0.0, |c| c.diagonal().mean())
    }

    fn emission_table(&self, params: &HmmParams) -> Result<Vec<Vec<f64>>> {
        if self.dim() != params.dim() {
            return Err(Error::Shape(format!(
                "corpus vectors have dimension {}, model has {}",
                self.dim(),
                params.dim()
            )));
        }
        if let Some(&v) = self
            .type_clusters
            .iter()
            .find(|&&v| v >= params.n_clusters())
        {
            return Err(Error::Shape(format!(
                "cluster tag {v} outside the model's emission table"
            )));
        }
        let gs = params.gaussians()?;
        let log_ce: Vec<Vec<f64>> = params
            .cluster_emission
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect();
        Ok(self
            .type_vectors
            .par_iter()
            .zip(&self.type_clusters)
            .map(|(x, &v)| {
                gs.iter()
                    .zip(&log_ce)
                    .map(|(g, ce)| g.log_pdf(x) + ce[v])
                    .collect()
            })
            .collect())
    }

    fn sentence_emissions(&self, table: &[Vec<f64>], i: usize) -> Vec<Vec<f64>> {
        self.sentences[i]
            .iter()
            .map(|&t| table[t].clone())
            .collect()
    }
}

/// Weighted mean and biased covariance; `None` when the total weight is zero.
fn weighted_moments(xs: &[Vec<f64>], w: &[f64]) -> (Option<DVector<f64>>, Option<DMatrix<f64>>) {
    let d = xs.first().map_or(0, Vec::len);
    let total: f64 = w.iter().sum();
    if total <= 0.0 || d == 0 {
        return (None, None);
    }
    let mut mean = DVector::zeros(d);
    for (x, &wi) in xs.iter().zip(w) {
        if wi != 0.0 {
            mean.axpy(wi, &DVector::from_column_slice(x), 1.0);
        }
    }
    mean /= total;
    let centered = DMatrix::from_fn(xs.len(), d, |r, c| w[r].sqrt() * (xs[r][c] - mean[c]));
    let mut cov = centered.transpose() * centered;
    cov /= total;
    (Some(mean), Some(cov))
}

/// Projects a symmetric matrix onto {Σ : λ_min(Σ) ≥ floor}.
fn clip_eigenvalues(cov: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return (&cov + cov.transpose()) * 0.5;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood improvement falls below this.
    pub tol: f64,
    /// Covariance eigenvalue floor as a fraction of the mean embedding variance.
    pub cov_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 100,
            tol: 1e-5,
            cov_floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Corpus log-likelihood of the parameters entering each iteration, plus
    /// that of the returned parameters as the last entry.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Baum-Welch EM. The covariance M-step is the constrained maximizer with
/// eigenvalues at or above the floor, so the likelihood never decreases.
pub fn em_fit(
    corpus: &HmmCorpus,
    init: HmmParams,
    opts: &EmOptions,
) -> Result<(HmmParams, TrainReport)> {
    init.validate()?;
    if corpus.sentences.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput("empty sentence in HMM corpus".into()));
    }
    let floor = (opts.cov_floor * corpus.mean_variance()).max(f64::MIN_POSITIVE);
    let mut params = init;
    let mut report = TrainReport::default();
    loop {
        let table = corpus.emission_table(&params)?;
        let lt = params.log_tables();
        let posts: Vec<Posteriors> = (0..corpus.sentences.len())
            .into_par_iter()
            .map(|i| posteriors_inner(&corpus.sentence_emissions(&table, i), &lt))
            .collect();
        let ll: f64 = posts.iter().map(|p| p.loglik).sum();
        if !ll.is_finite() {
            return Err(Error::Diverged(format!(
                "corpus log-likelihood is {ll} at iteration {}",
                report.iterations
            )));
        }
        let prev = report.log_likelihood.last().copied();
        report.log_likelihood.push(ll);
        debug!(
            "hmm iteration {}: log-likelihood {ll:.6}",
            report.iterations
        );
        if let Some(prev) = prev {
            if (ll - prev) / prev.abs().max(f64::MIN_POSITIVE) < opts.tol {
                report.converged = true;
                break;
            }
        }
        if report.iterations == opts.max_iters {
            break;
        }
        params = m_step(corpus, &params, &posts, floor);
        report.iterations += 1;
    }
    info!(
        "hmm: {} iterations, final log-likelihood {:.4}, converged {}",
        report.iterations,
        report.log_likelihood.last().copied().unwrap_or(f64::NAN),
        report.converged
    );
    Ok((params, report))
}

fn m_step(corpus: &HmmCorpus, old: &HmmParams, posts: &[Posteriors], floor: f64) -> HmmParams {
    let s = old.n_states();
    let c = old.n_clusters();
    let mut init = vec![0.0; s];
    let mut trans = vec![vec![0.0; s]; s];
    let mut type_gamma = vec![vec![0.0; corpus.type_vectors.len()]; s];
    for (sent, p) in corpus.sentences.iter().zip(posts) {
        for (z, g) in p.gamma[0].iter().enumerate() {
            init[z] += g;
        }
        for (row, xi_row) in trans.iter_mut().zip(&p.xi) {
            for (a, b) in row.iter_mut().zip(xi_row) {
                *a += b;
            }
        }
        for (&t, g) in sent.iter().zip(&p.gamma) {
            for (z, gz) in g.iter().enumerate() {
                type_gamma[z][t] += gz;
            }
        }
    }

    let normalize = |v: &[f64], fallback: &[f64]| -> Vec<f64> {
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter().map(|x| x / total).collect()
        } else {
            fallback.to_vec()
        }
    };

    let mut next = old.clone();
    next.initial = normalize(&init, &old.initial);
    for z in 0..s {
        next.transition[z] = normalize(&trans[z], &old.transition[z]);
        let mut counts = vec![0.0; c];
        for (&v, g) in corpus.type_clusters.iter().zip(&type_gamma[z]) {
            counts[v] += g;
        }
        next.cluster_emission[z] = normalize(&counts, &old.cluster_emission[z]);
        if let (Some(mean), Some(cov)) = weighted_moments(&corpus.type_vectors, &type_gamma[z]) {
            next.means[z] = mean.iter().copied().collect();
            next.covariances[z] = to_rows(&clip_eigenvalues(cov, floor));
        }
    }
    next
}

/// Starting point for the three-state span detector. Tag-0 tokens set the
/// `O` Gaussian; tag-1 tokens set both `I` and `B`, separated by a small
/// jitter. Covariances start at the global covariance.
pub fn init_from_seed_tags<R: Rng>(
    corpus: &HmmCorpus,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<HmmParams> {
    const SMOOTH: f64 = 1e-3;
    const JITTER: f64 = 1e-2;
    let d = corpus.dim();
    if d == 0 || corpus.token_count() == 0 {
        return Err(Error::InvalidInput(
            "cannot initialize an HMM from an empty corpus".into(),
        ));
    }
    let counts = corpus.type_counts();
    let by_tag = |tag: usize| -> Vec<f64> {
        counts
            .iter()
            .zip(&corpus.type_clusters)
            .map(|(&n, &v)| if v == tag { n } else { 0.0 })
            .collect()
    };
    let (global_mean, global_cov) = weighted_moments(&corpus.type_vectors, &counts);
    let global_mean = global_mean.expect("non-empty corpus");
    let floor = (opts.cov_floor * corpus.mean_variance()).max(f64::MIN_POSITIVE);
    let cov = to_rows(&clip_eigenvalues(
        global_cov.expect("non-empty corpus"),
        floor,
    ));
    let mean_o = weighted_moments(&corpus.type_vectors, &by_tag(0))
        .0
        .unwrap_or_else(|| global_mean.clone());
    let mean_ne = weighted_moments(&corpus.type_vectors, &by_tag(1))
        .0
        .unwrap_or_else(|| global_mean.clone());
    let scale = JITTER * corpus.mean_variance().sqrt().max(f64::MIN_POSITIVE);
    let mut jittered = || -> Vec<f64> {
        mean_ne
            .iter()
            .map(|m| {
                let n: f64 = StandardNormal.sample(rng);
                m + scale * n
            })
            .collect::<Vec<f64>>()
    };
    let mean_i = jittered();
    let mean_b = jittered();

    let smooth = |row: [f64; 2]| -> Vec<f64> {
        let total: f64 = row.iter().sum::<f64>() + 2.0 * SMOOTH;
        row.iter().map(|p| (p + SMOOTH) / total).collect()
    };
    let third = 1.0 / 3.0;
    let params = HmmParams {
        labels: IOB_STATES.iter().map(|s| s.to_string()).collect(),
        initial: vec![0.5, 0.0, 0.5],
        transition: vec![vec![0.5, 0.0, 0.5], vec![third; 3], vec![third; 3]],
        means: vec![mean_o.iter().copied().collect(), mean_i, mean_b],
        covariances: vec![cov.clone(), cov.clone(), cov],
        cluster_emission: vec![smooth([1.0, 0.0]), smooth([0.0, 1.0]), smooth([0.0, 1.0])],
    };
    params.validate()?;
    Ok(params)
}

/// Viterbi decode of every sentence.
pub fn decode_corpus(corpus: &HmmCorpus, params: &HmmParams) -> Result<Vec<Vec<usize>>> {
    let table = corpus.emission_table(params)?;
    let lt = params.log_tables();
    Ok((0..corpus.sentences.len())
        .into_par_iter()
        .map(|i| viterbi_inner(&corpus.sentence_emissions(&table, i), &lt))
        .collect())
}

/// Total corpus log-likelihood under `params`.
pub fn corpus_loglik(corpus: &HmmCorpus, params: &HmmParams) -> Result<f64> {
    let table = corpus.emission_table(params)?;
    let lt = params.log_tables();
    let lls: Vec<f64> = (0..corpus.sentences.len())
        .into_par_iter()
        .map(|i| forward(&corpus.sentence_emissions(&table, i), &lt).1)
        .collect();
    Ok(lls.iter().sum())
}

/// State indices to label strings.
pub fn state_labels(path: &[usize], params: &HmmParams) -> Vec<String> {
    path.iter().map(|&z| params.labels[z].clone()).collect()
}

#[cfg(test)]
mod tests;
