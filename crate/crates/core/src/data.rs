//! Corpus and embedding ingestion, CoNLL output, and corpus co-occurrence counts.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::iob;

/// Pre-trained word vectors with a deterministic fallback for unknown tokens.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Vec<f64>,
    fallback: Vec<f64>,
    /// Try the lowercased token before digit folding and the fallback vector.
    pub lowercase_fallback: bool,
}

/// Which rule resolved a lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LookupKind {
    Exact,
    Lowercase,
    DigitFolded,
    Fallback,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` pairs. Later duplicates replace
    /// earlier ones.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = EmbeddingTable {
            dim: 0,
            index: HashMap::new(),
            words: Vec::new(),
            vectors: Vec::new(),
            fallback: Vec::new(),
            lowercase_fallback: true,
        };
        for (n, (word, vec)) in entries.into_iter().enumerate() {
            if n == 0 {
                if vec.is_empty() {
                    return Err(Error::InvalidInput(
                        "embedding dimension must be positive".into(),
                    ));
                }
                table.dim = vec.len();
            }
            if vec.len() != table.dim {
                return Err(Error::Shape(format!(
                    "vector for {word:?} has {} components, expected {}",
                    vec.len(),
                    table.dim
                )));
            }
            if vec.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "vector for {word:?} is not finite"
                )));
            }
            table.insert(word, &vec);
        }
        if table.words.is_empty() {
            return Err(Error::InvalidInput("embedding table is empty".into()));
        }
        table.refresh_fallback();
        Ok(table)
    }

    fn insert(&mut self, word: String, vec: &[f64]) {
        match self.index.get(&word) {
            Some(&i) => self.vectors[i * self.dim..(i + 1) * self.dim].copy_from_slice(vec),
            None => {
                self.index.insert(word.clone(), self.words.len());
                self.words.push(word);
                self.vectors.extend_from_slice(vec);
            }
        }
    }

    fn refresh_fallback(&mut self) {
        let n = self.words.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for row in self.vectors.chunks(self.dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        self.fallback = mean;
    }

    /// Reads `token v1 … vd` lines with an optional `count dim` header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;

        let mut entries = Vec::new();
        let mut dim: Option<usize> = None;
        let mut header: Option<(usize, usize)> = None;
        for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
            let lineno = i + 1;
            let line = std::str::from_utf8(raw)
                .map_err(|e| Error::parse(path, lineno, format!("invalid UTF-8: {e}")))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line");
            let rest: Vec<&str> = fields.collect();

            if lineno == 1 && rest.len() == 1 {
                if let (Ok(count), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                    if d == 0 {
                        return Err(Error::parse(path, lineno, "header dimension is zero"));
                    }
                    header = Some((count, d));
                    dim = Some(d);
                    continue;
                }
            }

            let values = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, lineno, format!("non-numeric component: {e}")))?;
            if values.is_empty() {
                return Err(Error::parse(path, lineno, "line has no vector components"));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("dimension mismatch: expected {d}, found {}", values.len()),
                    ))
                }
                _ => {}
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, lineno, "non-finite component"));
            }
            entries.push((token.to_string(), values));
        }
        if let Some((count, _)) = header {
            if count != entries.len() {
                warn!(
                    "{}: header declares {count} vectors, found {}",
                    path.display(),
                    entries.len()
                );
            }
        }
        if entries.is_empty() {
            return Err(Error::parse(path, 1, "no embedding vectors"));
        }
        Self::from_entries(entries)
    }

    /// Writes the table in the text format accepted by [`EmbeddingTable::load`],
    /// with a header line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "{} {}", self.words.len(), self.dim)?;
            for (i, word) in self.words.iter().enumerate() {
                write!(w, "{word}")?;
                for x in self.vector_at(i) {
                    write!(w, " {x}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    fn vector_at(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn fallback(&self) -> &[f64] {
        &self.fallback
    }

    /// Resolves a token: exact match, lowercase, digits folded to `0`, then the
    /// mean vector. Never fails.
    pub fn resolve(&self, token: &str) -> (&[f64], LookupKind) {
        if let Some(&i) = self.index.get(token) {
            return (self.vector_at(i), LookupKind::Exact);
        }
        let lower = self.lowercase_fallback.then(|| token.to_lowercase());
        if let Some(i) = lower.as_ref().and_then(|l| self.index.get(l)) {
            return (self.vector_at(*i), LookupKind::Lowercase);
        }
        if token.chars().any(|c| c.is_ascii_digit()) {
            let folded = fold_digits(token);
            let hit = self
                .index
                .get(&folded)
                .or_else(|| lower.as_ref().and_then(|l| self.index.get(&fold_digits(l))));
            if let Some(&i) = hit {
                return (self.vector_at(i), LookupKind::DigitFolded);
            }
        }
        (&self.fallback, LookupKind::Fallback)
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.resolve(token).0
    }
}

fn fold_digits(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect()
}

/// One tokenised sentence; `labels`, when present, has one IOB tag per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub labels: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Self {
        Sentence {
            tokens,
            labels: None,
        }
    }

    pub fn labeled(tokens: Vec<String>, labels: Vec<String>) -> Self {
        assert_eq!(tokens.len(), labels.len());
        Sentence {
            tokens,
            labels: Some(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Corpus { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn has_labels(&self) -> bool {
        !self.sentences.is_empty() && self.sentences.iter().all(|s| s.labels.is_some())
    }

    /// Label sequences, or `None` if any sentence is unlabeled.
    pub fn labels(&self) -> Option<Vec<Vec<String>>> {
        self.sentences.iter().map(|s| s.labels.clone()).collect()
    }

    /// A copy carrying `labels` instead of the current ones.
    pub fn with_labels(&self, labels: &[Vec<String>]) -> Result<Corpus> {
        check_shapes(self, labels)?;
        Ok(Corpus {
            sentences: self
                .sentences
                .iter()
                .zip(labels)
                .map(|(s, l)| Sentence::labeled(s.tokens.clone(), l.clone()))
                .collect(),
        })
    }

    /// Distinct tokens in first-occurrence order.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for s in &self.sentences {
            for t in &s.tokens {
                if !seen.contains_key(t.as_str()) {
                    seen.insert(t.as_str(), ());
                    out.push(t.clone());
                }
            }
        }
        out
    }
}

fn check_shapes(corpus: &Corpus, labels: &[Vec<String>]) -> Result<()> {
    if corpus.len() != labels.len() {
        return Err(Error::Shape(format!(
            "corpus has {} sentences, labels have {}",
            corpus.len(),
            labels.len()
        )));
    }
    for (i, (s, l)) in corpus.sentences.iter().zip(labels).enumerate() {
        if s.len() != l.len() {
            return Err(Error::Shape(format!(
                "sentence {i} has {} tokens but {} labels",
                s.len(),
                l.len()
            )));
        }
    }
    Ok(())
}

const DOCSTART: &str = "-DOCSTART-";

/// Number of whitespace-separated columns on the first token line of a CoNLL
/// file; 0 for a file without token lines.
pub fn conll_columns(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if !cols.is_empty() && cols[0] != DOCSTART {
            return Ok(cols.len());
        }
    }
    Ok(0)
}

/// Reads CoNLL column text. Blank lines separate sentences; `-DOCSTART-`
/// lines are dropped. IOB1-style labels (a mention opened by `I-X`) are
/// rewritten to `B-X`.
pub fn load_conll(
    path: impl AsRef<Path>,
    token_column: usize,
    label_column: Option<usize>,
) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut repaired = 0;
    let mut flush = |tokens: &mut Vec<String>, labels: &mut Vec<String>, repaired: &mut usize| {
        if tokens.is_empty() {
            return;
        }
        let toks = std::mem::take(tokens);
        let sentence = if label_column.is_some() {
            let mut l = std::mem::take(labels);
            *repaired += iob::repair_iob(&mut l);
            Sentence::labeled(toks, l)
        } else {
            Sentence::new(toks)
        };
        sentences.push(sentence);
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::parse(path, lineno, "invalid UTF-8"),
            _ => Error::io(path, e),
        })?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut tokens, &mut labels, &mut repaired);
            continue;
        }
        if cols[0] == DOCSTART {
            continue;
        }
        let need = label_column.map_or(token_column, |l| l.max(token_column));
        if cols.len() <= need {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "expected at least {} columns, found {}",
                    need + 1,
                    cols.len()
                ),
            ));
        }
        tokens.push(cols[token_column].to_string());
        if let Some(lc) = label_column {
            let label = cols[lc];
            if iob::Tag::parse(label).is_none() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("invalid IOB tag {label:?}"),
                ));
            }
            labels.push(label.to_string());
        }
    }
    flush(&mut tokens, &mut labels, &mut repaired);
    if repaired > 0 {
        debug!("{}: rewrote {repaired} IOB1-style tags", path.display());
    }
    Ok(Corpus { sentences })
}

/// Writes `token label` lines with blank lines between sentences. Shapes are
/// validated before the file is touched.
pub fn write_conll(
    corpus: &Corpus,
    predicted: &[Vec<String>],
    path: impl AsRef<Path>,
) -> Result<()> {
    check_shapes(corpus, predicted)?;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        for (i, (s, labels)) in corpus.sentences.iter().zip(predicted).enumerate() {
            if i > 0 {
                writeln!(w)?;
            }
            for (t, l) in s.tokens.iter().zip(labels) {
                writeln!(w, "{t} {l}")?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Unigram and within-sentence adjacent bigram counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PhraseStats {
    pub unigram_counts: HashMap<String, u64>,
    pub bigram_counts: HashMap<(String, String), u64>,
    pub total_tokens: u64,
}

impl PhraseStats {
    pub fn unigram(&self, token: &str) -> u64 {
        self.unigram_counts.get(token).copied().unwrap_or(0)
    }

    pub fn bigram(&self, a: &str, b: &str) -> u64 {
        // Allocation-free lookup would need a borrowed pair key; bigram queries
        // are rare enough (span boundaries only) that this is fine.
        self.bigram_counts
            .get(&(a.to_string(), b.to_string()))
            .copied()
            .unwrap_or(0)
    }
}

pub fn collect_stats(corpus: &Corpus) -> PhraseStats {
    let mut stats = PhraseStats::default();
    for s in &corpus.sentences {
        for t in &s.tokens {
            *stats.unigram_counts.entry(t.clone()).or_insert(0) += 1;
            stats.total_tokens += 1;
        }
        for pair in s.tokens.windows(2) {
            *stats
                .bigram_counts
                .entry((pair[0].clone(), pair[1].clone()))
                .or_insert(0) += 1;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        File::create(&p).unwrap().write_all(content).unwrap();
        p
    }

    fn sent(tokens: &[&str]) -> Sentence {
        Sentence::new(tokens.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn column_count_skips_docstart_and_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "a.conll", b"-DOCSTART- -X- O\n\nEU NNP B-ORG\n");
        assert_eq!(conll_columns(p).unwrap(), 3);
        assert_eq!(
            conll_columns(write_file(&dir, "b.conll", b"\n")).unwrap(),
            0
        );
    }

    #[test]
    fn embeddings_plain_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let a =
            EmbeddingTable::load(write_file(&dir, "a.txt", b"a 1.0 2.0\nb 0.0 -1.0\n")).unwrap();
        assert_eq!(a.dim(), 2);
        assert_eq!(a.len(), 2);
        assert_eq!(a.lookup("b"), &[0.0, -1.0]);
        let b = EmbeddingTable::load(write_file(&dir, "b.txt", b"2 2\na 1.0 2.0\nb 0.0 -1.0\n"))
            .unwrap();
        assert_eq!(b.dim(), 2);
        assert_eq!(b.lookup("a"), a.lookup("a"));
        assert_eq!(b.lookup("b"), a.lookup("b"));
    }

    #[test]
    fn embeddings_dimension_mismatch_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            EmbeddingTable::load(write_file(&dir, "c.txt", b"a 1.0\nb 1.0 2.0\n")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = EmbeddingTable::load(write_file(&dir, "d.txt", b"a 1.0 x\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err =
            EmbeddingTable::load(write_file(&dir, "e.txt", b"a 1.0\n\xff\xfe 2.0\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn lookup_chain() {
        let t = EmbeddingTable::from_entries(vec![
            ("paris".to_string(), vec![1.0, 0.0]),
            ("0000".to_string(), vec![0.0, 1.0]),
            ("x".to_string(), vec![2.0, 2.0]),
        ])
        .unwrap();
        assert_eq!(t.resolve("paris").1, LookupKind::Exact);
        assert_eq!(t.resolve("Paris").1, LookupKind::Lowercase);
        assert_eq!(t.resolve("1996").1, LookupKind::DigitFolded);
        let (v, kind) = t.resolve("unseen");
        assert_eq!(kind, LookupKind::Fallback);
        assert_eq!(v, &[1.0, 1.0]);

        let mut strict = t.clone();
        strict.lowercase_fallback = false;
        assert_eq!(strict.resolve("Paris").1, LookupKind::Fallback);
    }

    #[test]
    fn conll_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "c.conll", b"-DOCSTART- -X- O O\n\nEU NNP B-NP B-ORG\nrejects VBZ B-VP O\n\nGerman JJ B-NP I-MISC\n");
        let c = load_conll(&p, 0, Some(3)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].tokens, ["EU", "rejects"]);
        assert_eq!(c.sentences[0].labels.as_ref().unwrap(), &["B-ORG", "O"]);
        // IOB1 opening tag rewritten.
        assert_eq!(c.sentences[1].labels.as_ref().unwrap(), &["B-MISC"]);

        let unlabeled = load_conll(&p, 0, None).unwrap();
        assert!(unlabeled.sentences.iter().all(|s| s.labels.is_none()));
    }

    #[test]
    fn conll_two_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "c.conll", b"EU B-ORG\nrejects O\n\n");
        let c = load_conll(&p, 0, Some(1)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].len(), 2);
    }

    #[test]
    fn conll_ragged_row_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "c.conll", b"EU B-ORG\nrejects\n");
        assert!(matches!(
            load_conll(&p, 0, Some(1)),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn write_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::new(vec![sent(&["EU", "rejects", "German"])]);
        let labels = vec![vec![
            "B-ORG".to_string(),
            "O".to_string(),
            "B-MISC".to_string(),
        ]];
        let p = dir.path().join("out.conll");
        write_conll(&corpus, &labels, &p).unwrap();
        let back = load_conll(&p, 0, Some(1)).unwrap();
        assert_eq!(back, corpus.with_labels(&labels).unwrap());

        let empty = dir.path().join("empty.conll");
        write_conll(&Corpus::default(), &[], &empty).unwrap();
        assert_eq!(std::fs::read(&empty).unwrap().len(), 0);

        let untouched = dir.path().join("untouched.conll");
        let bad = vec![vec!["O".to_string()]];
        assert!(matches!(
            write_conll(&corpus, &bad, &untouched),
            Err(Error::Shape(_))
        ));
        assert!(!untouched.exists());
    }

    #[test]
    fn stats_hand_counts() {
        let c = Corpus::new(vec![sent(&["a", "b", "a"])]);
        let s = collect_stats(&c);
        assert_eq!(s.unigram("a"), 2);
        assert_eq!(s.unigram("b"), 1);
        assert_eq!(s.bigram("a", "b"), 1);
        assert_eq!(s.bigram("b", "a"), 1);
        assert_eq!(s.bigram_counts.len(), 2);
        assert_eq!(s.total_tokens, 3);

        let split = collect_stats(&Corpus::new(vec![sent(&["a"]), sent(&["b"])]));
        assert!(split.bigram_counts.is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus_strategy() -> impl Strategy<Value = Corpus> {
            prop::collection::vec(prop::collection::vec("[a-e]", 1..8), 1..20)
                .prop_map(|ss| Corpus::new(ss.into_iter().map(Sentence::new).collect()))
        }

        proptest! {
            #[test]
            fn unigram_total_and_bigram_bound(c in corpus_strategy()) {
                let s = collect_stats(&c);
                prop_assert_eq!(s.unigram_counts.values().sum::<u64>(), s.total_tokens);
                prop_assert_eq!(s.total_tokens as usize, c.token_count());
                for ((a, b), n) in &s.bigram_counts {
                    prop_assert!(*n <= s.unigram(a).min(s.unigram(b)));
                }
            }

            #[test]
            fn stats_ignore_sentence_order(c in corpus_strategy()) {
                let mut rev = c.clone();
                rev.sentences.reverse();
                prop_assert_eq!(collect_stats(&c), collect_stats(&rev));
            }

            #[test]
            fn conll_roundtrip(c in corpus_strategy(), seed in 0u64..1000) {
                let labels: Vec<Vec<String>> = c.sentences.iter().enumerate().map(|(i, s)| {
                    let spans = vec![iob::LabeledSpan { start: 0, end: (seed as usize + i) % s.len(), ty: Some("T".into()) }];
                    iob::labels_from_spans(s.len(), &spans)
                }).collect();
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("rt.conll");
                write_conll(&c, &labels, &p).unwrap();
                let back = load_conll(&p, 0, Some(1)).unwrap();
                prop_assert_eq!(back, c.with_labels(&labels).unwrap());
            }
        }
    }

    #[test]
    fn thousand_random_tokens() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut sentences = Vec::new();
        let mut left = 1000;
        while left > 0 {
            let n = rng.random_range(1..=20usize).min(left);
            left -= n;
            sentences.push(Sentence::new(
                (0..n)
                    .map(|_| format!("w{}", rng.random_range(0..50)))
                    .collect(),
            ));
        }
        let s = collect_stats(&Corpus::new(sentences));
        assert_eq!(s.total_tokens, 1000);
        assert_eq!(s.unigram_counts.values().sum::<u64>(), 1000);
    }
}
