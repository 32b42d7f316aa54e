//! Binary K-means over word vectors and the NE / non-NE seed tags derived from it.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, warn};
use rand::Rng;
use rayon::prelude::*;

use crate::data::{Corpus, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ClusterAssignment {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input vector, in input order.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_history: Vec<f64>,
    pub converged: bool,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lower index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Points are visited in a canonical (lexicographic) order, so the result does
/// not depend on the order of `vectors`. A cluster that empties is reseeded at
/// the point farthest from its current centroid.
pub fn kmeans<R: Rng>(
    vectors: &[Vec<f64>],
    k: usize,
    rng: &mut R,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    if vectors.is_empty() {
        return Err(Error::InvalidInput("k-means on an empty set".into()));
    }
    if k == 0 || k > vectors.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} is not in 1..={} (number of points)",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if vectors
        .iter()
        .any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::InvalidInput(
            "k-means input must be finite vectors of equal length".into(),
        ));
    }

    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| {
        vectors[a]
            .iter()
            .zip(&vectors[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let pts: Vec<&[f64]> = order.iter().map(|&i| vectors[i].as_slice()).collect();
    let distinct = 1 + pts.windows(2).filter(|w| w[0] != w[1]).count();
    if distinct < k {
        warn!("k-means: {distinct} distinct points for k = {k}; some clusters will stay empty");
    }

    let mut centroids = plus_plus_init(&pts, k, rng);
    let mut assign = vec![usize::MAX; pts.len()];
    let mut history = Vec::new();
    let mut converged = false;
    for iter in 0..max_iters {
        let nearest_all: Vec<(usize, f64)> =
            pts.par_iter().map(|p| nearest(p, &centroids)).collect();
        let changed = nearest_all.iter().zip(&assign).any(|(n, &a)| n.0 != a);
        for (a, n) in assign.iter_mut().zip(&nearest_all) {
            *a = n.0;
        }
        if !changed {
            converged = true;
            debug!("k-means converged after {iter} iterations");
            break;
        }
        update_centroids(&pts, &assign, &mut centroids);
        reseed_empty(&pts, &mut assign, &mut centroids);
        history.push(wcss(&pts, &assign, &centroids));
    }

    let mut assignment = vec![0; pts.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignment[orig] = assign[pos];
    }
    Ok(ClusterAssignment {
        centroids,
        assignment,
        wcss_history: history,
        converged,
    })
}

fn plus_plus_init<R: Rng>(pts: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![pts[rng.random_range(0..pts.len())].to_vec()];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = pts.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..pts.len())
        };
        let c = pts[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn update_centroids(pts: &[&[f64]], assign: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = pts[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in pts.iter().zip(assign) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|x| x / n as f64).collect();
        }
    }
}

fn reseed_empty(pts: &[&[f64]], assign: &mut [usize], centroids: &mut [Vec<f64>]) {
    for k in 0..centroids.len() {
        if assign.contains(&k) {
            continue;
        }
        let mut counts = vec![0usize; centroids.len()];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let mut far = (usize::MAX, 0.0);
        for (i, (p, &a)) in pts.iter().zip(assign.iter()).enumerate() {
            // Never strip the last member from a singleton cluster.
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a]);
            if d > far.1 {
                far = (i, d);
            }
        }
        if far.0 == usize::MAX {
            debug!("k-means: cluster {k} empty and no point to reseed from");
            continue;
        }
        let (i, _) = far;
        let old = assign[i];
        assign[i] = k;
        centroids[k] = pts[i].to_vec();
        update_centroids(pts, assign, centroids);
        debug!("k-means: reseeded empty cluster {k} from a point of cluster {old}");
    }
}

fn wcss(pts: &[&[f64]], assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    pts.iter()
        .zip(assign)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Word-level seed tags: 1 for the minority (NE) cluster, 0 otherwise.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeedTags {
    pub tag: HashMap<String, u8>,
    pub coarse_dictionary: BTreeSet<String>,
}

impl SeedTags {
    pub fn from_map(tag: HashMap<String, u8>) -> Self {
        let coarse_dictionary = tag
            .iter()
            .filter(|(_, &t)| t == 1)
            .map(|(w, _)| w.clone())
            .collect();
        SeedTags {
            tag,
            coarse_dictionary,
        }
    }

    /// Tag for `token`; unknown tokens count as non-NE.
    pub fn get(&self, token: &str) -> u8 {
        self.tag.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tag.is_empty()
    }

    /// Reads `token TAB {0|1}` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tag = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (token, t) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected token<TAB>tag"))?;
            let t = match t {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::parse(
                        path,
                        i + 1,
                        format!("tag must be 0 or 1, found {other:?}"),
                    ))
                }
            };
            tag.insert(token.to_string(), t);
        }
        Ok(Self::from_map(tag))
    }

    /// Writes tags sorted by token so that output is reproducible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut entries: Vec<_> = self.tag.iter().collect();
        entries.sort();
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            for (token, t) in entries {
                writeln!(w, "{token}\t{t}")?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }
}

/// Tags the smaller of two clusters as NE; with equal sizes cluster 1 wins.
/// `vocabulary[i]` is the token clustered as point `i`.
pub fn assign_seed_tags(assignment: &ClusterAssignment, vocabulary: &[String]) -> Result<SeedTags> {
    if assignment.k() != 2 {
        return Err(Error::InvalidInput(format!(
            "seed tags need k = 2, got {}",
            assignment.k()
        )));
    }
    if assignment.assignment.len() != vocabulary.len() {
        return Err(Error::Shape(format!(
            "{} assignments for {} tokens",
            assignment.assignment.len(),
            vocabulary.len()
        )));
    }
    let sizes = assignment.sizes();
    let ne = if sizes[0] < sizes[1] { 0 } else { 1 };
    let tag = vocabulary
        .iter()
        .zip(&assignment.assignment)
        .map(|(w, &a)| (w.clone(), u8::from(a == ne)))
        .collect();
    Ok(SeedTags::from_map(tag))
}

/// Clusters the distinct corpus tokens (resolved through the embedding
/// fallback chain) into two groups and derives seed tags. A vocabulary with
/// fewer than two distinct vectors has no NE cluster: every tag is 0.
pub fn seed_corpus<R: Rng>(
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
    rng: &mut R,
    max_iters: usize,
) -> Result<(ClusterAssignment, SeedTags)> {
    let vocab = corpus.vocabulary();
    let vectors: Vec<Vec<f64>> = vocab
        .iter()
        .map(|w| embeddings.lookup(w).to_vec())
        .collect();
    if vectors.iter().all(|v| Some(v) == vectors.first()) {
        warn!("seed clustering: fewer than two distinct vectors; no token is seed-tagged");
        let centroid = vectors
            .first()
            .cloned()
            .unwrap_or_else(|| vec![0.0; embeddings.dim()]);
        let assignment = ClusterAssignment {
            centroids: vec![centroid.clone(), centroid],
            assignment: vec![0; vectors.len()],
            wcss_history: Vec::new(),
            converged: true,
        };
        let tags = vocab.into_iter().map(|w| (w, 0)).collect();
        return Ok((assignment, SeedTags::from_map(tags)));
    }
    let assignment = kmeans(&vectors, 2, rng, max_iters)?;
    let tags = assign_seed_tags(&assignment, &vocab)?;
    Ok((assignment, tags))
}

/// Untyped IOB labels from seed tags: each maximal run of NE-tagged tokens is
/// one mention.
pub fn seed_labels(tokens: &[String], tags: &SeedTags) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut prev = 0;
    for t in tokens {
        let cur = tags.get(t);
        out.push(
            match (prev, cur) {
                (_, 0) => "O",
                (0, _) => "B",
                _ => "I",
            }
            .to_string(),
        );
        prev = cur;
    }
    out
}
