//! Span-level precision, recall and F1 with component-to-type matching.
//!
//! Scoring is exact match: a predicted mention is correct only when its
//! sentence, boundaries and (for typed scoring) mapped type all equal a gold
//! mention. Induced components are mapped to gold types by the assignment that
//! maximises the number of exactly matching mentions.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use log::warn;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as PfMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iob::spans_from_labels;

/// A mention located in a corpus. `end` is inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvalSpan {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub ty: Option<String>,
}

impl EvalSpan {
    fn key(&self) -> (usize, usize, usize) {
        (self.sentence, self.start, self.end)
    }
}

/// Every mention encoded by per-sentence IOB labels.
pub fn collect_spans<S: AsRef<str>>(labels: &[Vec<S>]) -> Vec<EvalSpan> {
    labels
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            spans_from_labels(l).into_iter().map(move |s| EvalSpan {
                sentence: i,
                start: s.start,
                end: s.end,
                ty: s.ty,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    /// Precision is 0 when nothing was predicted; recall is 0 when there is no gold.
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            correct as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            correct as f64 / gold as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            correct,
            predicted,
            gold,
        }
    }
}

/// Exact-boundary matches between predicted components (rows) and gold types (columns).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub components: Vec<String>,
    pub types: Vec<String>,
    pub matrix: Vec<Vec<u64>>,
    pub predicted: usize,
    pub gold: usize,
}

impl ConfusionCounts {
    /// Counts over the given row and column names. Mentions whose type is not
    /// listed still count toward the totals.
    pub fn new(
        components: Vec<String>,
        types: Vec<String>,
        predicted: &[EvalSpan],
        gold: &[EvalSpan],
    ) -> Self {
        let mut matrix = vec![vec![0u64; types.len()]; components.len()];
        let gold_by_key: BTreeMap<(usize, usize, usize), &EvalSpan> =
            gold.iter().map(|s| (s.key(), s)).collect();
        for p in predicted {
            let Some(g) = gold_by_key.get(&p.key()) else {
                continue;
            };
            let row = components.iter().position(|c| Some(c) == p.ty.as_ref());
            let col = types.iter().position(|t| Some(t) == g.ty.as_ref());
            if let (Some(r), Some(c)) = (row, col) {
                matrix[r][c] += 1;
            }
        }
        ConfusionCounts {
            components,
            types,
            matrix,
            predicted: predicted.len(),
            gold: gold.len(),
        }
    }

    /// Rows and columns named by the distinct types present, sorted.
    pub fn from_spans(predicted: &[EvalSpan], gold: &[EvalSpan]) -> Self {
        let names = |s: &[EvalSpan]| -> Vec<String> {
            s.iter()
                .filter_map(|x| x.ty.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        ConfusionCounts::new(names(predicted), names(gold), predicted, gold)
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }
}

/// Bijection component → type maximising the matched-mention count.
pub fn match_components_to_types(counts: &ConfusionCounts) -> Result<BTreeMap<String, String>> {
    let k = counts.components.len();
    if k != counts.types.len() {
        return Err(Error::InvalidInput(format!(
            "{k} components cannot be matched one-to-one with {} gold types",
            counts.types.len()
        )));
    }
    if k == 0 {
        return Ok(BTreeMap::new());
    }
    let weights = PfMatrix::from_rows(
        counts
            .matrix
            .iter()
            .map(|row| row.iter().map(|&c| c as i64).collect::<Vec<_>>()),
    )
    .map_err(|e| Error::Shape(format!("confusion matrix: {e:?}")))?;
    let (_, assignment) = kuhn_munkres(&weights);
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(r, c)| (counts.components[r].clone(), counts.types[c].clone()))
        .collect())
}

/// Overall and per-type exact-match scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypedPrf {
    pub overall: Prf,
    pub per_type: BTreeMap<String, Prf>,
}

/// Typed micro-averaged scores. Predicted types are renamed through
/// `mapping`; names missing from it are kept as they are.
pub fn span_prf(
    predicted: &[EvalSpan],
    gold: &[EvalSpan],
    mapping: &BTreeMap<String, String>,
) -> TypedPrf {
    let mapped: Vec<EvalSpan> = predicted
        .iter()
        .map(|p| EvalSpan {
            ty: p
                .ty
                .as_ref()
                .map(|t| mapping.get(t).cloned().unwrap_or_else(|| t.clone())),
            ..p.clone()
        })
        .collect();
    let gold_set: HashSet<&EvalSpan> = gold.iter().collect();
    let mut per: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let name = |s: &EvalSpan| s.ty.clone().unwrap_or_default();
    for g in gold {
        per.entry(name(g)).or_default().2 += 1;
    }
    let mut correct = 0;
    for p in &mapped {
        let e = per.entry(name(p)).or_default();
        e.1 += 1;
        if gold_set.contains(p) {
            e.0 += 1;
            correct += 1;
        }
    }
    if predicted.is_empty() {
        warn!("no predicted spans; precision is reported as 0");
    }
    TypedPrf {
        overall: Prf::from_counts(correct, predicted.len(), gold.len()),
        per_type: per
            .into_iter()
            .map(|(t, (c, p, g))| (t, Prf::from_counts(c, p, g)))
            .collect(),
    }
}

/// Type-blind exact boundary match.
pub fn span_detection_prf(predicted: &[EvalSpan], gold: &[EvalSpan]) -> Prf {
    let gold_keys: HashSet<_> = gold.iter().map(EvalSpan::key).collect();
    let pred_keys: HashSet<_> = predicted.iter().map(EvalSpan::key).collect();
    let correct = pred_keys.iter().filter(|k| gold_keys.contains(k)).count();
    if predicted.is_empty() {
        warn!("no predicted spans; precision is reported as 0");
    }
    Prf::from_counts(correct, pred_keys.len(), gold_keys.len())
}

/// Typed evaluation with its matching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypedEvaluation {
    pub mapping: BTreeMap<String, String>,
    pub confusion: ConfusionCounts,
    pub spans: Prf,
    pub typed: TypedPrf,
}

/// Matches predicted components to gold types on this data and scores both
/// span detection and typed spans. `components` fixes the component names
/// (all induced components, including any that received no mention);
/// otherwise the predicted type names are used. When there are fewer
/// components than gold types the missing rows are padded with unused names.
pub fn evaluate_typed<S: AsRef<str>, T: AsRef<str>>(
    predicted: &[Vec<S>],
    gold: &[Vec<T>],
    components: Option<Vec<String>>,
) -> Result<TypedEvaluation> {
    if predicted.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences, {} gold sentences",
            predicted.len(),
            gold.len()
        )));
    }
    for (i, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "sentence {i}: {} predicted labels, {} gold labels",
                p.len(),
                g.len()
            )));
        }
    }
    let pred = collect_spans(predicted);
    let gold = collect_spans(gold);
    let base = ConfusionCounts::from_spans(&pred, &gold);
    let mut components = components.unwrap_or(base.components);
    if components.len() > base.types.len() && !base.types.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} components but only {} gold types",
            components.len(),
            base.types.len()
        )));
    }
    let mut pad = 0;
    while components.len() < base.types.len() {
        let name = format!("<unused{pad}>");
        pad += 1;
        if !components.contains(&name) {
            components.push(name);
        }
    }
    let types = if base.types.is_empty() {
        Vec::new()
    } else {
        base.types
    };
    if types.is_empty() {
        components.clear();
    }
    let confusion = ConfusionCounts::new(components, types, &pred, &gold);
    let mapping = match_components_to_types(&confusion)?;
    Ok(TypedEvaluation {
        typed: span_prf(&pred, &gold, &mapping),
        spans: span_detection_prf(&pred, &gold),
        mapping,
        confusion,
    })
}

/// Fixed-width text table of a typed evaluation.
pub fn format_report(eval: &TypedEvaluation) -> String {
    let mut out = String::new();
    let row = |name: &str, p: &Prf| {
        format!(
            "{name:<12} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>8} {:>8}\n",
            p.precision, p.recall, p.f1, p.correct, p.predicted, p.gold
        )
    };
    out += &format!(
        "{:<12} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}\n",
        "", "precision", "recall", "f1", "correct", "pred", "gold"
    );
    out += &row("spans", &eval.spans);
    out += &row("typed", &eval.typed.overall);
    for (t, p) in &eval.typed.per_type {
        out += &row(&format!("  {t}"), p);
    }
    if !eval.mapping.is_empty() {
        let pairs: Vec<String> = eval
            .mapping
            .iter()
            .map(|(c, t)| format!("{c}->{t}"))
            .collect();
        out += &format!("mapping: {}\n", pairs.join(" "));
    }
    out
}
