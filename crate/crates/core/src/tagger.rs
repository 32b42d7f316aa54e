//! BiLSTM-CRF sequence tagger over typed IOB labels.
//!
//! Each token is the frozen pre-trained word vector concatenated with the
//! final states of a character-level BiLSTM. A word-level BiLSTM feeds a
//! one-hidden-layer bridge MLP that scores every tag; a linear-chain CRF with
//! START/STOP states scores tag sequences. Transitions that would produce an
//! invalid IOB sequence carry a fixed -1e4 offset, so decoding always yields
//! well-formed spans.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::spans::type_name;
use crate::tensor::{log_sum_exp, Axis, Graph, Matrix, ParamId, ParamStore, Sgd, TensorError, Var};

/// Offset added to structurally invalid transitions.
pub const MASK_PENALTY: f64 = -1e4;

/// Ordered tag inventory: `O`, then `B-t`, `I-t` for every type `t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tagset {
    types: Vec<String>,
}

impl Tagset {
    pub fn new(types: Vec<String>) -> Self {
        Tagset { types }
    }

    /// Types `C0 .. C{k-1}`.
    pub fn components(k: usize) -> Self {
        Tagset::new((0..k).map(type_name).collect())
    }

    /// The distinct mention types in IOB label sequences, sorted.
    pub fn from_labels<S: AsRef<str>>(labels: &[Vec<S>]) -> Self {
        let types: std::collections::BTreeSet<String> = labels
            .iter()
            .flatten()
            .filter_map(|l| {
                crate::iob::Tag::parse(l.as_ref()).and_then(|t| t.ty.map(str::to_string))
            })
            .collect();
        Tagset::new(types.into_iter().collect())
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> usize {
        self.len()
    }

    pub fn stop(&self) -> usize {
        self.len() + 1
    }

    pub fn begin(&self, k: usize) -> usize {
        1 + 2 * k
    }

    pub fn inside(&self, k: usize) -> usize {
        2 + 2 * k
    }

    pub fn name(&self, i: usize) -> String {
        match i {
            0 => "O".to_string(),
            i if i % 2 == 1 => format!("B-{}", self.types[(i - 1) / 2]),
            i => format!("I-{}", self.types[(i - 2) / 2]),
        }
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.name(i)).collect()
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        if tag == "O" {
            return Some(0);
        }
        let (prefix, ty) = tag.split_once('-')?;
        let k = self.types.iter().position(|t| t == ty)?;
        match prefix {
            "B" => Some(self.begin(k)),
            "I" => Some(self.inside(k)),
            _ => None,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                self.index(l).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "label {l:?} is not in the tagset {:?}",
                        self.names()
                    ))
                })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.name(i)).collect()
    }

    /// Whether `from → to` is structurally allowed. Indices include START and STOP.
    pub fn allowed(&self, from: usize, to: usize) -> bool {
        if to == self.start() || from == self.stop() {
            return false;
        }
        if to != self.stop() && to != 0 && to % 2 == 0 {
            let k = (to - 2) / 2;
            return from == self.begin(k) || from == self.inside(k);
        }
        true
    }

    /// `(T+2) × (T+2)` matrix of 0 for allowed and [`MASK_PENALTY`] for
    /// forbidden transitions.
    pub fn mask(&self) -> Matrix {
        let n = self.len() + 2;
        Matrix::from_fn(n, n, |r, c| {
            if self.allowed(r, c) {
                0.0
            } else {
                MASK_PENALTY
            }
        })
    }
}

fn check_crf_shapes(p: &Matrix, trans: &Matrix) {
    let t = p.cols() + 2;
    assert_eq!(
        trans.shape(),
        (t, t),
        "transition matrix must be (tags+2) square"
    );
}

/// Sum of START→y₁, yᵢ→yᵢ₊₁, y_l→STOP transitions and emissions `P[i, yᵢ]`.
/// `trans` is `(T+2) × (T+2)` with START at `T` and STOP at `T+1`.
pub fn crf_score(p: &Matrix, trans: &Matrix, y: &[usize]) -> f64 {
    check_crf_shapes(p, trans);
    assert_eq!(
        y.len(),
        p.rows(),
        "tag sequence length must match emissions"
    );
    let (start, stop) = (p.cols(), p.cols() + 1);
    let mut prev = start;
    let mut s = 0.0;
    for (i, &t) in y.iter().enumerate() {
        s += trans[(prev, t)] + p[(i, t)];
        prev = t;
    }
    s + trans[(prev, stop)]
}

/// Log-sum-exp of [`crf_score`] over every tag sequence, by the forward recursion.
pub fn crf_log_partition(p: &Matrix, trans: &Matrix) -> f64 {
    check_crf_shapes(p, trans);
    let (t, l) = (p.cols(), p.rows());
    let (start, stop) = (t, t + 1);
    if l == 0 {
        return trans[(start, stop)];
    }
    let mut alpha: Vec<f64> = (0..t).map(|j| trans[(start, j)] + p[(0, j)]).collect();
    let mut buf = vec![0.0; t];
    for i in 1..l {
        let next: Vec<f64> = (0..t)
            .map(|j| {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = alpha[k] + trans[(k, j)];
                }
                log_sum_exp(&buf) + p[(i, j)]
            })
            .collect();
        alpha = next;
    }
    let last: Vec<f64> = (0..t).map(|k| alpha[k] + trans[(k, stop)]).collect();
    log_sum_exp(&last)
}

/// Highest-scoring tag sequence; ties resolve to the lower tag index.
pub fn crf_viterbi(p: &Matrix, trans: &Matrix) -> Vec<usize> {
    check_crf_shapes(p, trans);
    let (t, l) = (p.cols(), p.rows());
    if l == 0 {
        return Vec::new();
    }
    let (start, stop) = (t, t + 1);
    let mut delta: Vec<f64> = (0..t).map(|j| trans[(start, j)] + p[(0, j)]).collect();
    let mut back = vec![vec![0usize; t]; l];
    for i in 1..l {
        let mut next = vec![0.0; t];
        for j in 0..t {
            let mut best = 0;
            for k in 1..t {
                if delta[k] + trans[(k, j)] > delta[best] + trans[(best, j)] {
                    best = k;
                }
            }
            back[i][j] = best;
            next[j] = delta[best] + trans[(best, j)] + p[(i, j)];
        }
        delta = next;
    }
    let mut last = 0;
    for k in 1..t {
        if delta[k] + trans[(k, stop)] > delta[last] + trans[(last, stop)] {
            last = k;
        }
    }
    let mut path = vec![last; l];
    for i in (1..l).rev() {
        path[i - 1] = back[i][path[i]];
    }
    path
}

/// Negative log-likelihood `log Z − score(gold)` of one sentence on a graph.
/// `scores` is `l × T`, `trans` is the effective `(T+2) × (T+2)` matrix.
pub fn crf_nll_graph(
    g: &mut Graph,
    scores: Var,
    trans: Var,
    gold: &[usize],
) -> std::result::Result<Var, TensorError> {
    let (l, t) = g.shape(scores);
    if gold.len() != l || g.shape(trans) != (t + 2, t + 2) || gold.iter().any(|&y| y >= t) {
        return Err(TensorError::Shape {
            op: "crf_nll",
            lhs: (l, t),
            rhs: (gold.len(), g.shape(trans).0),
        });
    }
    let (start, stop) = (t, t + 1);
    if l == 0 {
        let z = g.gather(trans, &[(start, stop)])?;
        let s = g.gather(trans, &[(start, stop)])?;
        return g.sub(z, s);
    }
    let inner = g.slice_rows(trans, 0, t)?;
    let inner = g.slice_cols(inner, 0, t)?;
    let from_start = g.slice_rows(trans, start, 1)?;
    let from_start = g.slice_cols(from_start, 0, t)?;
    let to_stop = g.slice_rows(trans, 0, t)?;
    let to_stop = g.slice_cols(to_stop, stop, 1)?;
    let to_stop = g.transpose(to_stop);

    let p0 = g.row(scores, 0)?;
    let mut alpha = g.add(from_start, p0)?;
    for i in 1..l {
        let col = g.transpose(alpha);
        let m = g.add(inner, col)?;
        let lse = g.logsumexp(m, Axis::Cols);
        let pi = g.row(scores, i)?;
        alpha = g.add(lse, pi)?;
    }
    let fin = g.add(alpha, to_stop)?;
    let log_z = g.logsumexp(fin, Axis::Rows);

    let emit: Vec<(usize, usize)> = gold.iter().enumerate().map(|(i, &y)| (i, y)).collect();
    let mut steps = vec![(start, gold[0])];
    steps.extend(gold.windows(2).map(|w| (w[0], w[1])));
    steps.push((gold[l - 1], stop));
    let e = g.gather(scores, &emit)?;
    let e = g.sum(e);
    let tr = g.gather(trans, &steps)?;
    let tr = g.sum(tr);
    let gold_score = g.add(e, tr)?;
    g.sub(log_z, gold_score)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    /// Word-level hidden size per direction.
    pub hidden: usize,
    pub use_chars: bool,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Fractional learning-rate shrink applied after every epoch.
    pub lr_decay: f64,
    pub clip_norm: f64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            hidden: 64,
            use_chars: true,
            char_dim: 16,
            char_hidden: 16,
            dropout: 0.5,
            learning_rate: 0.015,
            lr_decay: 0.05,
            clip_norm: 5.0,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || (self.use_chars && (self.char_dim == 0 || self.char_hidden == 0)) {
            return Err(Error::Config("tagger hidden sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.lr_decay)
            || !(self.clip_norm > 0.0)
        {
            return Err(Error::Config(
                "tagger learning rate, decay and clip norm are out of range".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * (1.0 - self.lr_decay).powi(epoch as i32)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct Lstm {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
    hidden: usize,
}

impl Lstm {
    /// Gate order: input, forget, cell, output. Forget bias starts at 1.
    fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.add_glorot(format!("{name}.wx"), input, 4 * hidden, rng);
        let wh = store.add_glorot(format!("{name}.wh"), hidden, 4 * hidden, rng);
        let b = store.add_zeros(format!("{name}.b"), 1, 4 * hidden);
        for v in &mut store.value_mut(b).as_mut_slice()[hidden..2 * hidden] {
            *v = 1.0;
        }
        Lstm { wx, wh, b, hidden }
    }

    /// Hidden state at every position; `reverse` runs right to left.
    fn run(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        xs: Var,
        reverse: bool,
    ) -> std::result::Result<Vec<Var>, TensorError> {
        let h_dim = self.hidden;
        let n = g.shape(xs).0;
        let wx = g.param(store, self.wx);
        let wh = g.param(store, self.wh);
        let b = g.param(store, self.b);
        let xw = g.matmul(xs, wx)?;
        let xw = g.add(xw, b)?;
        let mut h = g.constant(Matrix::zeros(1, h_dim));
        let mut c = g.constant(Matrix::zeros(1, h_dim));
        let mut out = vec![h; n];
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for t in order {
            let xt = g.row(xw, t)?;
            let hh = g.matmul(h, wh)?;
            let z = g.add(xt, hh)?;
            let i = g.slice_cols(z, 0, h_dim)?;
            let i = g.sigmoid(i);
            let f = g.slice_cols(z, h_dim, h_dim)?;
            let f = g.sigmoid(f);
            let u = g.slice_cols(z, 2 * h_dim, h_dim)?;
            let u = g.tanh(u);
            let o = g.slice_cols(z, 3 * h_dim, h_dim)?;
            let o = g.sigmoid(o);
            let fc = g.mul(f, c)?;
            let iu = g.mul(i, u)?;
            c = g.add(fc, iu)?;
            let tc = g.tanh(c);
            h = g.mul(o, tc)?;
            out[t] = h;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, i: usize, o: usize, rng: &mut R) -> Self {
        Linear {
            w: store.add_glorot(format!("{name}.w"), i, o, rng),
            b: store.add_zeros(format!("{name}.b"), 1, o),
        }
    }

    fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> std::result::Result<Var, TensorError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let h = g.matmul(x, w)?;
        g.add(h, b)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CharEncoder {
    /// Known characters, sorted; index 0 of the embedding table is unknown.
    alphabet: Vec<char>,
    embedding: ParamId,
    fwd: Lstm,
    bwd: Lstm,
}

impl CharEncoder {
    fn ids(&self, token: &str) -> Vec<usize> {
        token
            .chars()
            .map(|ch| self.alphabet.binary_search(&ch).map_or(0, |i| i + 1))
            .collect()
    }

    /// `1 × 2·char_hidden` summary of one token.
    fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        table: Var,
        token: &str,
    ) -> std::result::Result<Var, TensorError> {
        let mut ids = self.ids(token);
        if ids.is_empty() {
            ids.push(0);
        }
        let xs = g.gather_rows(table, &ids)?;
        let f = self.fwd.run(g, store, xs, false)?;
        let b = self.bwd.run(g, store, xs, true)?;
        g.concat_cols(&[f[f.len() - 1], b[0]])
    }
}

/// Recurrent features (`l × 2H`) and tag scores (`l × T`) on a graph.
pub struct Encoded {
    pub features: Var,
    pub scores: Var,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaggerModel {
    pub config: TaggerConfig,
    pub tagset: Tagset,
    word_dim: usize,
    store: ParamStore,
    chars: Option<CharEncoder>,
    fwd: Lstm,
    bwd: Lstm,
    bridge: Linear,
    output: Linear,
    /// Raw `(T+2) × (T+2)` transition parameters; the mask is added on use.
    trans: ParamId,
}

/// One training sentence with tag indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut dyn RngCore) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    Matrix::from_fn(
        rows,
        cols,
        |_, _| if rng.random::<f64>() < p { 0.0 } else { keep },
    )
}

impl TaggerModel {
    /// Fresh model. `alphabet` lists characters seen in training; others map
    /// to a shared unknown slot.
    pub fn new<R: Rng>(
        config: TaggerConfig,
        tagset: Tagset,
        word_dim: usize,
        alphabet: impl IntoIterator<Item = char>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if word_dim == 0 {
            return Err(Error::Config(
                "word vectors must have positive dimension".into(),
            ));
        }
        let mut store = ParamStore::new();
        let chars = if config.use_chars {
            let mut alphabet: Vec<char> = alphabet.into_iter().collect();
            alphabet.sort_unstable();
            alphabet.dedup();
            let embedding = store.add_glorot("char.emb", alphabet.len() + 1, config.char_dim, rng);
            let fwd = Lstm::new(
                &mut store,
                "char.fwd",
                config.char_dim,
                config.char_hidden,
                rng,
            );
            let bwd = Lstm::new(
                &mut store,
                "char.bwd",
                config.char_dim,
                config.char_hidden,
                rng,
            );
            Some(CharEncoder {
                alphabet,
                embedding,
                fwd,
                bwd,
            })
        } else {
            None
        };
        let input = word_dim
            + if config.use_chars {
                2 * config.char_hidden
            } else {
                0
            };
        let h = config.hidden;
        let fwd = Lstm::new(&mut store, "word.fwd", input, h, rng);
        let bwd = Lstm::new(&mut store, "word.bwd", input, h, rng);
        let bridge = Linear::new(&mut store, "bridge", 2 * h, h, rng);
        let output = Linear::new(&mut store, "output", h, tagset.len(), rng);
        let n = tagset.len() + 2;
        let trans = store.add_zeros("crf.trans", n, n);
        Ok(TaggerModel {
            config,
            tagset,
            word_dim,
            store,
            chars,
            fwd,
            bwd,
            bridge,
            output,
            trans,
        })
    }

    /// Model whose alphabet covers every character of `corpus`.
    pub fn for_corpus<R: Rng>(
        config: TaggerConfig,
        tagset: Tagset,
        corpus: &Corpus,
        embeddings: &EmbeddingTable,
        rng: &mut R,
    ) -> Result<Self> {
        let alphabet: std::collections::BTreeSet<char> = corpus
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter())
            .flat_map(|t| t.chars())
            .collect();
        TaggerModel::new(config, tagset, embeddings.dim(), alphabet, rng)
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn word_dim(&self) -> usize {
        self.word_dim
    }

    /// Width of the recurrent feature vector, `2H`.
    pub fn feature_dim(&self) -> usize {
        2 * self.config.hidden
    }

    /// Exchanges the forward and backward word-level cells.
    pub fn swap_directions(&mut self) {
        std::mem::swap(&mut self.fwd, &mut self.bwd);
    }

    /// Effective transition matrix: parameters plus the structural mask.
    pub fn transitions(&self) -> Matrix {
        let mut t = self.store.value(self.trans).clone();
        t.add_assign(&self.tagset.mask());
        t
    }

    fn check_embeddings(
        &self,
        embeddings: &EmbeddingTable,
    ) -> std::result::Result<(), TensorError> {
        if embeddings.dim() != self.word_dim {
            return Err(TensorError::Shape {
                op: "word embeddings",
                lhs: (1, embeddings.dim()),
                rhs: (1, self.word_dim),
            });
        }
        Ok(())
    }

    /// Forward pass on `g` reading weights from `store`. With `dropout`
    /// set, inverted dropout masks are drawn for the token inputs and the
    /// recurrent features.
    pub fn forward<S: AsRef<str>>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[S],
        embeddings: &EmbeddingTable,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> std::result::Result<Encoded, TensorError> {
        self.check_embeddings(embeddings)?;
        let l = tokens.len();
        let t = self.tagset.len();
        if l == 0 {
            let features = g.constant(Matrix::zeros(0, self.feature_dim()));
            let scores = g.constant(Matrix::zeros(0, t));
            return Ok(Encoded { features, scores });
        }
        let mut words = Vec::with_capacity(l * self.word_dim);
        for tok in tokens {
            words.extend_from_slice(embeddings.lookup(tok.as_ref()));
        }
        let mut input = g.constant(Matrix::from_vec(l, self.word_dim, words));
        if let Some(ch) = &self.chars {
            let table = g.param(store, ch.embedding);
            let mut cache: Vec<(&str, Var)> = Vec::new();
            let mut rows = Vec::with_capacity(l);
            for tok in tokens {
                let tok = tok.as_ref();
                let v = match cache.iter().find(|(s, _)| *s == tok) {
                    Some(&(_, v)) => v,
                    None => {
                        let v = ch.encode(g, store, table, tok)?;
                        cache.push((tok, v));
                        v
                    }
                };
                rows.push(v);
            }
            let cv = g.concat_rows(&rows)?;
            input = g.concat_cols(&[input, cv])?;
        }
        let p = self.config.dropout;
        if let Some(rng) = dropout.as_deref_mut() {
            if p > 0.0 {
                let (r, c) = g.shape(input);
                let m = g.constant(dropout_mask(r, c, p, rng));
                input = g.mul(input, m)?;
            }
        }
        let f = self.fwd.run(g, store, input, false)?;
        let b = self.bwd.run(g, store, input, true)?;
        let f = g.concat_rows(&f)?;
        let b = g.concat_rows(&b)?;
        let features = g.concat_cols(&[f, b])?;
        let mut hidden = features;
        if let Some(rng) = dropout {
            if p > 0.0 {
                let (r, c) = g.shape(hidden);
                let m = g.constant(dropout_mask(r, c, p, rng));
                hidden = g.mul(hidden, m)?;
            }
        }
        let h = self.bridge.apply(g, store, hidden)?;
        let h = g.tanh(h);
        let scores = self.output.apply(g, store, h)?;
        Ok(Encoded { features, scores })
    }

    /// Effective transitions as a graph node (parameters plus constant mask).
    pub fn transitions_on(
        &self,
        g: &mut Graph,
        store: &ParamStore,
    ) -> std::result::Result<Var, TensorError> {
        let t = g.param(store, self.trans);
        let m = g.constant(self.tagset.mask());
        g.add(t, m)
    }

    /// Sentence negative log-likelihood on a graph.
    pub fn nll_on<S: AsRef<str>>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[S],
        gold: &[usize],
        embeddings: &EmbeddingTable,
        dropout: Option<&mut dyn RngCore>,
    ) -> std::result::Result<Var, TensorError> {
        let enc = self.forward(g, store, tokens, embeddings, dropout)?;
        let trans = self.transitions_on(g, store)?;
        crf_nll_graph(g, enc.scores, trans, gold)
    }

    /// Recurrent features and tag scores without dropout.
    pub fn features<S: AsRef<str>>(
        &self,
        tokens: &[S],
        embeddings: &EmbeddingTable,
    ) -> Result<(Matrix, Matrix)> {
        let mut g = Graph::new();
        let enc = self.forward(&mut g, &self.store, tokens, embeddings, None)?;
        Ok((g.value(enc.features).clone(), g.value(enc.scores).clone()))
    }

    /// Emission score matrix `P` (`l × T`).
    pub fn encode<S: AsRef<str>>(
        &self,
        tokens: &[S],
        embeddings: &EmbeddingTable,
    ) -> Result<Matrix> {
        Ok(self.features(tokens, embeddings)?.1)
    }

    pub fn predict<S: AsRef<str>>(
        &self,
        tokens: &[S],
        embeddings: &EmbeddingTable,
    ) -> Result<Vec<usize>> {
        let p = self.encode(tokens, embeddings)?;
        Ok(crf_viterbi(&p, &self.transitions()))
    }

    pub fn predict_labels<S: AsRef<str>>(
        &self,
        tokens: &[S],
        embeddings: &EmbeddingTable,
    ) -> Result<Vec<String>> {
        Ok(self.tagset.decode(&self.predict(tokens, embeddings)?))
    }

    /// Viterbi labels for every sentence of `corpus`.
    pub fn decode_corpus(
        &self,
        corpus: &Corpus,
        embeddings: &EmbeddingTable,
    ) -> Result<Vec<Vec<String>>> {
        corpus
            .sentences
            .iter()
            .map(|s| self.predict_labels(&s.tokens, embeddings))
            .collect()
    }

    /// `score(gold) − log Z`; never positive.
    pub fn sentence_log_prob<S: AsRef<str>>(
        &self,
        tokens: &[S],
        tags: &[usize],
        embeddings: &EmbeddingTable,
    ) -> Result<f64> {
        if tags.len() != tokens.len() || tags.iter().any(|&t| t >= self.tagset.len()) {
            return Err(Error::Shape(format!(
                "{} tags for {} tokens over a tagset of {}",
                tags.len(),
                tokens.len(),
                self.tagset.len()
            )));
        }
        let p = self.encode(tokens, embeddings)?;
        let trans = self.transitions();
        Ok((crf_score(&p, &trans, tags) - crf_log_partition(&p, &trans)).min(0.0))
    }

    /// Mean NLL of `batch`; gradients of the mean are added to the store.
    pub fn crf_nll(
        &mut self,
        batch: &[TaggedSentence],
        embeddings: &EmbeddingTable,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let w = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (i, s) in batch.iter().enumerate() {
            let mut g = Graph::new();
            let rng = dropout.as_mut().map(|r| &mut **r as &mut dyn RngCore);
            let nll = self.nll_on(&mut g, &self.store, &s.tokens, &s.tags, embeddings, rng)?;
            let loss = g.scalar(nll);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite tagger loss on sentence {i}"
                )));
            }
            let root = g.scale(nll, w);
            let grads = g.backward(root);
            self.store.accumulate(&g, &grads);
            total += w * loss;
        }
        Ok(total)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let m: TaggerModel = serde_json::from_reader(BufReader::new(f))?;
        m.config.validate()?;
        Ok(m)
    }
}

/// Converts a labeled corpus into tag indices.
pub fn tagged_sentences(
    corpus: &Corpus,
    labels: &[Vec<String>],
    tagset: &Tagset,
) -> Result<Vec<TaggedSentence>> {
    if labels.len() != corpus.len() {
        return Err(Error::Shape(format!(
            "{} label rows for {} sentences",
            labels.len(),
            corpus.len()
        )));
    }
    corpus
        .sentences
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (s, l))| {
            if l.len() != s.len() {
                return Err(Error::Shape(format!(
                    "sentence {i}: {} labels for {} tokens",
                    l.len(),
                    s.len()
                )));
            }
            Ok(TaggedSentence {
                tokens: s.tokens.clone(),
                tags: tagset.encode(l)?,
            })
        })
        .collect()
}

/// One SGD pass over shuffled sentences, one sentence per update, at the
/// learning rate scheduled for `epoch`.
pub fn train_epoch<R: Rng>(
    model: &mut TaggerModel,
    data: &[TaggedSentence],
    embeddings: &EmbeddingTable,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochReport> {
    let lr = model.config.learning_rate_at(epoch);
    let opt = Sgd {
        clip_norm: Some(model.config.clip_norm),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for &i in &order {
        let loss = model
            .crf_nll(
                std::slice::from_ref(&data[i]),
                embeddings,
                Some(rng as &mut dyn RngCore),
            )
            .map_err(|e| match e {
                Error::Diverged(_) => {
                    Error::Diverged(format!("non-finite tagger loss on sentence {i}"))
                }
                other => other,
            })?;
        opt.step(&mut model.store, lr);
        total += loss;
    }
    let mean_loss = if data.is_empty() {
        0.0
    } else {
        total / data.len() as f64
    };
    debug!("tagger epoch {epoch}: lr {lr:.5}, mean loss {mean_loss:.5}");
    Ok(EpochReport {
        epoch,
        learning_rate: lr,
        mean_loss,
    })
}

/// `epochs` passes of [`train_epoch`] starting from schedule position `first_epoch`.
pub fn train<R: Rng>(
    model: &mut TaggerModel,
    data: &[TaggedSentence],
    embeddings: &EmbeddingTable,
    first_epoch: usize,
    epochs: usize,
    rng: &mut R,
) -> Result<Vec<EpochReport>> {
    let reports = (first_epoch..first_epoch + epochs)
        .map(|e| train_epoch(model, data, embeddings, e, rng))
        .collect::<Result<Vec<_>>>()?;
    if let Some(last) = reports.last() {
        info!(
            "tagger: {} epochs, final mean loss {:.5}",
            reports.len(),
            last.mean_loss
        );
    }
    Ok(reports)
}

#[cfg(test)]
mod tests;
