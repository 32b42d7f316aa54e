//! End-to-end orchestration: cluster → hmm → spans → dagmm → refine → eval.
//!
//! Each stage writes a JSON artifact into the output directory that embeds the
//! config hash, the stage metrics and the data later stages need. A stage
//! that is disabled, or that finds its artifact while resuming, loads the
//! artifact instead of running; an artifact from a different config is an
//! error. Artifacts are written through a temporary file and renamed, so a
//! failing stage leaves earlier artifacts untouched.
//!
//! Every stage draws from its own random stream derived from the config seed
//! and the stage name.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::dagmm::{self, DagmmModel, DagmmReport};
use crate::data::{collect_stats, conll_columns, load_conll, write_conll, Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{
    collect_spans, evaluate_typed, span_detection_prf, EvalSpan, Prf, TypedEvaluation,
};
use crate::ghmm::{self, HmmCorpus, HmmParams, TrainReport};
use crate::kcluster::{seed_corpus, seed_labels, SeedTags};
use crate::selector::{refine_loop, PassReport, SelectorParams};
use crate::spans::{
    extract_spans, filter_single_word, merge_phrases, save_spans, span_representation,
    spans_to_labels, type_name, Span,
};
use crate::tagger::Tagset;

pub const STAGES: [&str; 6] = ["cluster", "hmm", "spans", "dagmm", "refine", "eval"];

/// Independent generator for one named stage.
pub fn stage_rng(seed: u64, stage: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(stage.as_bytes());
    let mut stream = [0u8; 8];
    stream.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(stream));
    rng
}

#[derive(Serialize, Deserialize)]
struct Artifact<T> {
    stage: String,
    config_hash: String,
    metrics: Value,
    data: T,
}

#[derive(Serialize, Deserialize)]
struct ClusterData {
    tags: BTreeMap<String, u8>,
}

#[derive(Serialize, Deserialize)]
struct HmmData {
    /// Absent when no token was seed-tagged.
    model: Option<HmmParams>,
    report: Option<TrainReport>,
    decoded: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct SpansData {
    spans: Vec<Span>,
}

#[derive(Serialize, Deserialize)]
struct DagmmData {
    /// Absent when there were no spans to type.
    model: Option<DagmmModel>,
    report: Option<DagmmReport>,
    spans: Vec<Span>,
}

#[derive(Serialize, Deserialize)]
struct RefineData {
    labels: Vec<Vec<String>>,
    selector: SelectorParams,
    passes: Vec<PassReport>,
}

/// What a finished run produced.
pub struct PipelineOutput {
    pub output_dir: PathBuf,
    pub config_hash: String,
    /// Contents of `metrics.json`.
    pub metrics: Value,
    pub seed_tags: SeedTags,
    /// Untyped HMM decode.
    pub decoded: Vec<Vec<String>>,
    /// Repaired spans with their induced types.
    pub spans: Vec<Span>,
    /// Typed labels straight from type induction.
    pub basic: Vec<Vec<String>>,
    /// Final labels: the refined decode, or `basic` when refinement is off.
    pub predictions: Vec<Vec<String>>,
    pub evaluation: Option<TypedEvaluation>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_conll_atomic(corpus: &Corpus, labels: &[Vec<String>], path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_conll(corpus, labels, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn artifact_path(dir: &Path, stage: &str) -> PathBuf {
    dir.join(format!("{stage}.json"))
}

fn save_artifact<T: Serialize>(dir: &Path, art: &Artifact<T>) -> Result<()> {
    let bytes = serde_json::to_vec(art)?;
    write_atomic(&artifact_path(dir, &art.stage), &bytes)
}

fn load_artifact<T: DeserializeOwned>(
    dir: &Path,
    stage: &str,
    hash: &str,
) -> Result<Option<Artifact<T>>> {
    let path = artifact_path(dir, stage);
    if !path.is_file() {
        return Ok(None);
    }
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let art: Artifact<T> = serde_json::from_reader(std::io::BufReader::new(f))?;
    if art.stage != stage {
        return Err(Error::Config(format!(
            "{} holds stage `{}`",
            path.display(),
            art.stage
        )));
    }
    if art.config_hash != hash {
        return Err(Error::Config(format!(
            "{} was produced by config {} but the current config is {}",
            path.display(),
            art.config_hash,
            hash
        )));
    }
    Ok(Some(art))
}

fn prf_json(p: &Prf) -> Value {
    json!({
        "precision": p.precision,
        "recall": p.recall,
        "f1": p.f1,
        "correct": p.correct,
        "predicted": p.predicted,
        "gold": p.gold,
    })
}

fn detection(labels: &[Vec<String>], gold: Option<&[EvalSpan]>) -> Value {
    gold.map_or(Value::Null, |g| {
        prf_json(&span_detection_prf(&collect_spans(labels), g))
    })
}

fn typed_json(e: &TypedEvaluation) -> Value {
    let per_type: serde_json::Map<String, Value> = e
        .typed
        .per_type
        .iter()
        .map(|(t, p)| (t.clone(), prf_json(p)))
        .collect();
    json!({
        "spans": prf_json(&e.spans),
        "typed": prf_json(&e.typed.overall),
        "per_type": per_type,
        "mapping": e.mapping,
    })
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    dir: PathBuf,
    hash: String,
    log: File,
    metrics: serde_json::Map<String, Value>,
}

impl Runner<'_> {
    /// Loads or runs one stage, wrapping any failure with the stage name.
    fn stage<T, F>(&mut self, stage: &str, enabled: bool, run: F) -> Result<Artifact<T>>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&mut ChaCha8Rng) -> Result<(Value, T)>,
    {
        let started = Instant::now();
        let wrap = |e: Error| Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        };
        let loaded = if !enabled || self.config.resume {
            load_artifact::<T>(&self.dir, stage, &self.hash).map_err(wrap)?
        } else {
            None
        };
        let (art, action) = match loaded {
            Some(a) => (a, "loaded"),
            None if !enabled => {
                return Err(wrap(Error::Config(format!(
                    "stage is disabled but {} does not exist",
                    artifact_path(&self.dir, stage).display()
                ))))
            }
            None => {
                info!("stage {stage}: running");
                let mut rng = stage_rng(self.config.seed, stage);
                let (metrics, data) = run(&mut rng).map_err(wrap)?;
                let art = Artifact {
                    stage: stage.to_string(),
                    config_hash: self.hash.clone(),
                    metrics,
                    data,
                };
                save_artifact(&self.dir, &art).map_err(wrap)?;
                (art, "ran")
            }
        };
        self.record(stage, action, started, art.metrics.clone())?;
        Ok(art)
    }

    fn record(
        &mut self,
        stage: &str,
        action: &str,
        started: Instant,
        metrics: Value,
    ) -> Result<()> {
        let line = json!({
            "stage": stage,
            "action": action,
            "wall_seconds": started.elapsed().as_secs_f64(),
            "metrics": metrics,
        });
        let path = self.dir.join("log.jsonl");
        writeln!(self.log, "{line}").map_err(|e| Error::io(&path, e))?;
        self.metrics.insert(stage.to_string(), metrics);
        Ok(())
    }
}

fn load_inputs(config: &PipelineConfig) -> Result<(Corpus, EmbeddingTable)> {
    let gold_column = match config.gold_column {
        Some(c) => Some(c),
        None => {
            let n = conll_columns(&config.corpus)?;
            (n > 1 && n - 1 != config.token_column).then(|| n - 1)
        }
    };
    let corpus = load_conll(&config.corpus, config.token_column, gold_column)?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} has no sentences",
            config.corpus.display()
        )));
    }
    let mut embeddings = EmbeddingTable::load(&config.embeddings)?;
    embeddings.lowercase_fallback = config.lowercase_fallback;
    Ok((corpus, embeddings))
}

/// Runs the configured stages in order. Validation problems surface as
/// [`Error::Config`]; a failing stage as [`Error::Stage`].
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let hash = config.hash();
    config.save(dir.join("config.json"))?;
    let log_path = dir.join("log.jsonl");
    let log = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut runner = Runner {
        config,
        dir: dir.clone(),
        hash: hash.clone(),
        log,
        metrics: serde_json::Map::new(),
    };

    let started = Instant::now();
    let (corpus, embeddings) = load_inputs(config).map_err(|e| Error::Stage {
        stage: "input".into(),
        source: Box::new(e),
    })?;
    let gold_labels = corpus.labels();
    let gold: Option<Vec<EvalSpan>> = gold_labels.as_deref().map(collect_spans);
    let gold = gold.as_deref();
    runner.record(
        "input",
        "ran",
        started,
        json!({
            "sentences": corpus.len(),
            "tokens": corpus.token_count(),
            "embedding_dim": embeddings.dim(),
            "gold_spans": gold.map(<[EvalSpan]>::len),
        }),
    )?;

    let cluster: Artifact<ClusterData> = runner.stage("cluster", config.run_cluster, |rng| {
        let (assignment, tags) = seed_corpus(&corpus, &embeddings, rng, config.kmeans_max_iters)?;
        tags.save(dir.join("tags.tsv"))?;
        let seeded: Vec<Vec<String>> = corpus
            .sentences
            .iter()
            .map(|s| seed_labels(&s.tokens, &tags))
            .collect();
        let metrics = json!({
            "vocabulary": tags.len(),
            "dictionary": tags.coarse_dictionary.len(),
            "iterations": assignment.wcss_history.len(),
            "converged": assignment.converged,
            "span_detection": detection(&seeded, gold),
        });
        let data = ClusterData {
            tags: tags.tag.iter().map(|(w, &t)| (w.clone(), t)).collect(),
        };
        Ok((metrics, data))
    })?;
    let seed_tags = SeedTags::from_map(cluster.data.tags.into_iter().collect::<HashMap<_, _>>());

    let hmm: Artifact<HmmData> = runner.stage("hmm", config.run_hmm, |rng| {
        let hc = HmmCorpus::from_corpus(&corpus, &embeddings, &seed_tags);
        let (model, report, decoded): (_, _, Vec<Vec<String>>) = if seed_tags.coarse_dictionary.is_empty() {
            warn!("no seed-tagged token; every token is decoded as O");
            let decoded = corpus.sentences.iter().map(|s| vec!["O".to_string(); s.len()]).collect();
            (None, None, decoded)
        } else {
            let opts = config.em_options();
            let init = ghmm::init_from_seed_tags(&hc, &opts, rng)?;
            let (params, report) = ghmm::em_fit(&hc, init, &opts)?;
            let decoded = ghmm::decode_corpus(&hc, &params)?
                .iter()
                .map(|p| ghmm::state_labels(p, &params))
                .collect();
            (Some(params), Some(report), decoded)
        };
        write_conll_atomic(&corpus, &decoded, &dir.join("decoded.conll"))?;
        let metrics = json!({
            "iterations": report.as_ref().map(|r| r.iterations),
            "converged": report.as_ref().map(|r| r.converged),
            "initial_log_likelihood": report.as_ref().and_then(|r| r.log_likelihood.first().copied()),
            "final_log_likelihood": report.as_ref().and_then(|r| r.log_likelihood.last().copied()),
            "span_detection": detection(&decoded, gold),
        });
        Ok((metrics, HmmData { model, report, decoded }))
    })?;
    let decoded = hmm.data.decoded;

    let spans: Artifact<SpansData> = runner.stage("spans", config.run_spans, |_| {
        let (raw, repairs) = extract_spans(&corpus, &decoded)?;
        let filtered = filter_single_word(&raw, &corpus, &seed_tags.coarse_dictionary);
        let merged = merge_phrases(
            &filtered,
            &corpus,
            &collect_stats(&corpus),
            &config.phrase_filter(),
        );
        save_spans(&merged.spans, dir.join("spans.tsv"))?;
        let labels = merged.to_labels(&corpus);
        let metrics = json!({
            "repairs": repairs,
            "extracted": raw.len(),
            "after_single_word_filter": filtered.len(),
            "after_phrase_merge": merged.len(),
            "span_detection": detection(&labels, gold),
        });
        Ok((
            metrics,
            SpansData {
                spans: merged.spans,
            },
        ))
    })?;

    let typed: Artifact<DagmmData> = runner.stage("dagmm", config.run_dagmm, |rng| {
        let mut spans = spans.data.spans.clone();
        if spans.is_empty() {
            warn!("no spans to type");
            write_conll_atomic(
                &corpus,
                &spans_to_labels(&corpus, &spans),
                &dir.join("typed.conll"),
            )?;
            let metrics = json!({ "spans": 0, "component_sizes": vec![0; config.k] });
            return Ok((
                metrics,
                DagmmData {
                    model: None,
                    report: None,
                    spans,
                },
            ));
        }
        let reps: Vec<Vec<f64>> = spans
            .iter()
            .map(|s| span_representation(s, &corpus, &embeddings))
            .collect();
        let (model, report) = dagmm::train(&reps, &config.dagmm(reps[0].len()), rng)?;
        let types = dagmm::assign_types(&reps, &model)?;
        let mut sizes = vec![0usize; config.k];
        for (s, &t) in spans.iter_mut().zip(&types) {
            s.ty = Some(t);
            sizes[t] += 1;
        }
        let labels = spans_to_labels(&corpus, &spans);
        write_conll_atomic(&corpus, &labels, &dir.join("typed.conll"))?;
        let metrics = json!({
            "spans": spans.len(),
            "component_sizes": sizes,
            "final_objective": report.epochs.last().map(|e| e.total),
            "span_detection": detection(&labels, gold),
        });
        Ok((
            metrics,
            DagmmData {
                model: Some(model),
                report: Some(report),
                spans,
            },
        ))
    })?;
    let basic = spans_to_labels(&corpus, &typed.data.spans);
    let components: Vec<String> = (0..config.k).map(type_name).collect();

    let predictions = if !config.run_refine {
        basic.clone()
    } else {
        let refined: Artifact<RefineData> = runner.stage("refine", true, |rng| {
            if typed.data.spans.is_empty() {
                warn!("no spans; refinement keeps the empty annotation");
                let data = RefineData {
                    labels: basic.clone(),
                    selector: SelectorParams::zeros(0),
                    passes: Vec::new(),
                };
                write_conll_atomic(&corpus, &data.labels, &dir.join("refined.conll"))?;
                return Ok((json!({ "skipped": "no spans" }), data));
            }
            let out = refine_loop(
                &corpus,
                &basic,
                &Tagset::new(components.clone()),
                &embeddings,
                &config.tagger(),
                &config.selector(),
                rng,
            )?;
            out.tagger.save(dir.join("tagger.json"))?;
            write_conll_atomic(&corpus, &out.labels, &dir.join("refined.conll"))?;
            let passes: Vec<Value> = out
                .passes
                .iter()
                .map(|p| {
                    json!({
                        "selected": p.selected,
                        "rejected": p.rejected.len(),
                        "empty_batches": p.empty_batches,
                        "mean_reward": p.mean_reward,
                        "relabeled": p.relabeled,
                    })
                })
                .collect();
            let metrics = json!({
                "passes": passes,
                "span_detection": detection(&out.labels, gold),
            });
            let data = RefineData {
                labels: out.labels,
                selector: out.selector,
                passes: out.passes,
            };
            Ok((metrics, data))
        })?;
        refined.data.labels
    };
    write_conll_atomic(&corpus, &predictions, &dir.join("pred.conll"))?;

    let mut evaluation = None;
    if config.run_eval {
        match &gold_labels {
            None => warn!("corpus has no gold column; skipping evaluation"),
            Some(gold_labels) => {
                let started = Instant::now();
                let wrap = |e: Error| Error::Stage {
                    stage: "eval".into(),
                    source: Box::new(e),
                };
                let basic_eval =
                    evaluate_typed(&basic, gold_labels, Some(components.clone())).map_err(wrap)?;
                let final_eval =
                    evaluate_typed(&predictions, gold_labels, Some(components.clone()))
                        .map_err(wrap)?;
                let metrics = json!({
                    "basic": typed_json(&basic_eval),
                    "final": typed_json(&final_eval),
                    "refined": config.run_refine,
                });
                let report = json!({
                    "config_hash": hash,
                    "stage": "eval",
                    "metrics": metrics,
                    "confusion": final_eval.confusion,
                });
                write_atomic(&dir.join("eval.json"), &serde_json::to_vec_pretty(&report)?)
                    .map_err(wrap)?;
                runner.record("eval", "ran", started, metrics)?;
                evaluation = Some(final_eval);
            }
        }
    }

    runner
        .metrics
        .insert("config_hash".into(), Value::String(hash.clone()));
    let metrics = Value::Object(std::mem::take(&mut runner.metrics));
    let mut text = serde_json::to_string_pretty(&metrics)?;
    text.push('\n');
    write_atomic(&dir.join("metrics.json"), text.as_bytes())?;
    if evaluation.is_some() {
        write_atomic(
            &dir.join("report.txt"),
            format_stage_report(&metrics).as_bytes(),
        )?;
    }
    Ok(PipelineOutput {
        output_dir: dir,
        config_hash: hash,
        metrics,
        seed_tags,
        decoded,
        spans: typed.data.spans,
        basic,
        predictions,
        evaluation,
    })
}

/// Span detection by stage, then typed scores before and after refinement.
pub fn format_stage_report(metrics: &Value) -> String {
    let row = |name: &str, p: &Value| -> String {
        let f = |k: &str| p[k].as_f64().map_or("-".to_string(), |x| format!("{x:.4}"));
        format!(
            "{name:<10} {:>9} {:>9} {:>9}\n",
            f("precision"),
            f("recall"),
            f("f1")
        )
    };
    let header = format!(
        "{:<10} {:>9} {:>9} {:>9}\n",
        "", "precision", "recall", "f1"
    );
    let mut out = String::from("span detection by stage\n");
    out += &header;
    for stage in ["cluster", "hmm", "spans"] {
        out += &row(stage, &metrics[stage]["span_detection"]);
    }
    out += "\ntyped spans\n";
    out += &header;
    let eval = &metrics["eval"];
    out += &row("basic", &eval["basic"]["typed"]);
    if eval["refined"].as_bool() == Some(true) {
        out += &row("refined", &eval["final"]["typed"]);
    }
    if let Some(m) = eval["final"]["mapping"].as_object() {
        let pairs: Vec<String> = m
            .iter()
            .map(|(c, t)| format!("{c}->{}", t.as_str().unwrap_or("")))
            .collect();
        out += &format!("mapping: {}\n", pairs.join(" "));
    }
    out
}
