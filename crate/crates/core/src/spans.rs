//! Candidate entity spans from decoded IOB labels, the single-word
//! false-positive filter, collocation-based merging, and span vectors.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, EmbeddingTable, PhraseStats};
use crate::error::{Error, Result};
use crate::iob;

/// A mention candidate: inclusive token range in one sentence, plus the
/// induced type once one has been assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub ty: Option<usize>,
}

impl Span {
    pub fn new(sentence: usize, start: usize, end: usize) -> Self {
        Span {
            sentence,
            start,
            end,
            ty: None,
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Name used for induced type `k` in labels and files.
pub fn type_name(k: usize) -> String {
    format!("C{k}")
}

pub fn parse_type_name(s: &str) -> Option<usize> {
    s.strip_prefix('C')?.parse().ok()
}

/// How often each token was decoded inside a mention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TokenNeStats {
    pub tagged: u64,
    pub total: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpanSet {
    /// Sorted by (sentence, start); disjoint within a sentence.
    pub spans: Vec<Span>,
    pub token_stats: HashMap<String, TokenNeStats>,
}

impl SpanSet {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn covered_tokens(&self) -> usize {
        self.spans.iter().map(Span::len).sum()
    }

    /// Per-sentence IOB labels; typed spans use `B-Ck`/`I-Ck`.
    pub fn to_labels(&self, corpus: &Corpus) -> Vec<Vec<String>> {
        spans_to_labels(corpus, &self.spans)
    }

    /// Spans are sorted, disjoint and inside their sentences.
    pub fn is_well_formed(&self, corpus: &Corpus) -> bool {
        self.spans.iter().all(|s| {
            s.sentence < corpus.len()
                && s.start <= s.end
                && s.end < corpus.sentences[s.sentence].len()
        }) && self
            .spans
            .windows(2)
            .all(|w| (w[0].sentence, w[0].end) < (w[1].sentence, w[1].start))
    }
}

pub fn spans_to_labels(corpus: &Corpus, spans: &[Span]) -> Vec<Vec<String>> {
    let mut per_sentence: Vec<Vec<iob::LabeledSpan>> = vec![Vec::new(); corpus.len()];
    for s in spans {
        per_sentence[s.sentence].push(iob::LabeledSpan {
            start: s.start,
            end: s.end,
            ty: s.ty.map(type_name),
        });
    }
    corpus
        .sentences
        .iter()
        .zip(&per_sentence)
        .map(|(sent, sp)| iob::labels_from_spans(sent.len(), sp))
        .collect()
}

/// Maximal `B I*` runs become spans. A stray `I` opens a new span and is
/// counted as a repair. Types in the labels are ignored.
pub fn extract_spans(corpus: &Corpus, decoded: &[Vec<String>]) -> Result<(SpanSet, usize)> {
    if decoded.len() != corpus.len() {
        return Err(Error::Shape(format!(
            "{} label sequences for {} sentences",
            decoded.len(),
            corpus.len()
        )));
    }
    let mut set = SpanSet::default();
    let mut repairs = 0;
    for (si, (sent, labels)) in corpus.sentences.iter().zip(decoded).enumerate() {
        if sent.len() != labels.len() {
            return Err(Error::Shape(format!(
                "sentence {si} has {} tokens but {} labels",
                sent.len(),
                labels.len()
            )));
        }
        let mut fixed = labels.clone();
        repairs += iob::repair_iob(&mut fixed);
        let mut open: Option<usize> = None;
        for (i, (tok, label)) in sent.tokens.iter().zip(&fixed).enumerate() {
            let kind = iob::Tag::parse(label).map_or(iob::TagKind::O, |t| t.kind);
            let entry = set.token_stats.entry(tok.clone()).or_default();
            entry.total += 1;
            if kind != iob::TagKind::O {
                entry.tagged += 1;
            }
            match kind {
                iob::TagKind::O => {
                    if let Some(st) = open.take() {
                        set.spans.push(Span::new(si, st, i - 1));
                    }
                }
                iob::TagKind::B => {
                    if let Some(st) = open.replace(i) {
                        set.spans.push(Span::new(si, st, i - 1));
                    }
                }
                iob::TagKind::I => {}
            }
        }
        if let Some(st) = open {
            set.spans.push(Span::new(si, st, sent.len() - 1));
        }
    }
    if repairs > 0 {
        debug!("extract_spans: repaired {repairs} stray I tags");
    }
    Ok((set, repairs))
}

/// Drops length-1 spans whose token is decoded as an entity in fewer than
/// half of its occurrences, unless the token is in the coarse dictionary.
pub fn filter_single_word(
    set: &SpanSet,
    corpus: &Corpus,
    dictionary: &BTreeSet<String>,
) -> SpanSet {
    let keep = |s: &Span| {
        if s.len() > 1 {
            return true;
        }
        let tok = &corpus.sentences[s.sentence].tokens[s.start];
        if dictionary.contains(tok) {
            return true;
        }
        let st = set.token_stats.get(tok).copied().unwrap_or_default();
        2 * st.tagged >= st.total
    };
    let spans: Vec<Span> = set.spans.iter().copied().filter(keep).collect();
    debug!(
        "single-word filter removed {} spans",
        set.len() - spans.len()
    );
    SpanSet {
        spans,
        token_stats: set.token_stats.clone(),
    }
}

/// Collocation score count(a,b)·n / (count(a)·count(b)); zero when either
/// unigram count is zero.
pub fn phrase_score(a: &str, b: &str, stats: &PhraseStats) -> f64 {
    let ca = stats.unigram(a);
    let cb = stats.unigram(b);
    if ca == 0 || cb == 0 {
        return 0.0;
    }
    stats.bigram(a, b) as f64 * stats.total_tokens as f64 / (ca as f64 * cb as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseFilterConfig {
    pub threshold: f64,
}

impl Default for PhraseFilterConfig {
    fn default() -> Self {
        PhraseFilterConfig { threshold: 100.0 }
    }
}

/// Merges spans that touch (no gap token) when the collocation score of the
/// boundary pair exceeds the threshold. Runs left to right until nothing
/// changes.
pub fn merge_phrases(
    set: &SpanSet,
    corpus: &Corpus,
    stats: &PhraseStats,
    config: &PhraseFilterConfig,
) -> SpanSet {
    let mut spans = set.spans.clone();
    let mut merged = 0;
    loop {
        let mut changed = false;
        let mut out: Vec<Span> = Vec::with_capacity(spans.len());
        for s in spans {
            if let Some(last) = out.last_mut() {
                if last.sentence == s.sentence && last.end + 1 == s.start {
                    let toks = &corpus.sentences[s.sentence].tokens;
                    if phrase_score(&toks[last.end], &toks[s.start], stats) > config.threshold {
                        last.end = s.end;
                        last.ty = None;
                        changed = true;
                        merged += 1;
                        continue;
                    }
                }
            }
            out.push(s);
        }
        spans = out;
        if !changed {
            break;
        }
    }
    debug!("phrase merge joined {merged} span pairs");
    SpanSet {
        spans,
        token_stats: set.token_stats.clone(),
    }
}

/// [x_start ; mean(x_start..=x_end) ; x_end].
pub fn span_representation(span: &Span, corpus: &Corpus, embeddings: &EmbeddingTable) -> Vec<f64> {
    let toks = &corpus.sentences[span.sentence].tokens[span.start..=span.end];
    let vecs: Vec<&[f64]> = toks.iter().map(|t| embeddings.lookup(t)).collect();
    representation_from_vectors(&vecs)
}

pub fn representation_from_vectors(vecs: &[&[f64]]) -> Vec<f64> {
    let d = vecs[0].len();
    let mut mean = vec![0.0; d];
    for v in vecs {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= vecs.len() as f64);
    let mut out = Vec::with_capacity(3 * d);
    out.extend_from_slice(vecs[0]);
    out.extend_from_slice(&mean);
    out.extend_from_slice(vecs[vecs.len() - 1]);
    out
}

/// Writes `sentence TAB start TAB end[ TAB Ck]` lines.
pub fn save_spans(spans: &[Span], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        for s in spans {
            match s.ty {
                Some(k) => writeln!(
                    w,
                    "{}\t{}\t{}\t{}",
                    s.sentence,
                    s.start,
                    s.end,
                    type_name(k)
                )?,
                None => writeln!(w, "{}\t{}\t{}", s.sentence, s.start, s.end)?,
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_spans(path: impl AsRef<Path>) -> Result<Vec<Span>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&cols.len()) {
            return Err(Error::parse(
                path,
                i + 1,
                "expected 3 or 4 tab-separated columns",
            ));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse(path, i + 1, format!("{s:?}: {e}")))
        };
        let mut span = Span::new(num(cols[0])?, num(cols[1])?, num(cols[2])?);
        if span.end < span.start {
            return Err(Error::parse(path, i + 1, "span end precedes start"));
        }
        if let Some(t) = cols.get(3) {
            span.ty = Some(
                parse_type_name(t)
                    .ok_or_else(|| Error::parse(path, i + 1, format!("bad type {t:?}")))?,
            );
        }
        out.push(span);
    }
    Ok(out)
}

/// Checks spans against a corpus: in bounds, sorted and disjoint.
pub fn validate_spans(spans: &[Span], corpus: &Corpus) -> Result<()> {
    let set = SpanSet {
        spans: spans.to_vec(),
        token_stats: HashMap::new(),
    };
    if set.is_well_formed(corpus) {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "spans are out of bounds, unsorted or overlapping".into(),
        ))
    }
}
