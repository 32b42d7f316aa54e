use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use embner::config::PipelineConfig;
use embner::dagmm;
use embner::data::{collect_stats, conll_columns, load_conll, write_conll, Corpus, EmbeddingTable};
use embner::eval::{collect_spans, evaluate_typed, format_report, span_detection_prf};
use embner::ghmm::{self, HmmCorpus};
use embner::kcluster::{seed_corpus, SeedTags};
use embner::pipeline::{format_stage_report, run_pipeline, stage_rng};
use embner::selector::refine_loop;
use embner::spans::{
    extract_spans, filter_single_word, load_spans, merge_phrases, save_spans, span_representation,
    spans_to_labels, validate_spans,
};
use embner::synth::{make_synthetic, SynthConfig};
use embner::tagger::{self, TaggerModel, Tagset};
use embner::Error;

#[derive(Parser)]
#[command(
    name = "embner",
    version,
    about = "Unsupervised named-entity induction from word embeddings"
)]
struct Cli {
    /// Pipeline configuration (JSON). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seed tags from two-way K-means over the corpus vocabulary.
    Cluster(ClusterArgs),
    /// Fit the Gaussian HMM and decode untyped IOB labels.
    Hmm(HmmArgs),
    /// Extract spans from a decode and apply the repair heuristics.
    Spans(SpansArgs),
    /// Induce span types with the deep autoencoding mixture model.
    Dagmm(DagmmArgs),
    /// Train the BiLSTM-CRF tagger on labeled (possibly noisy) data.
    Tagger(TaggerArgs),
    /// Refine noisy labels with the tagger and the instance selector.
    Refine(RefineArgs),
    /// Score predicted labels against gold labels.
    Eval(EvalArgs),
    /// Run every stage from one configuration.
    Pipeline(PipelineArgs),
    /// Generate a synthetic corpus with known truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HmmArgs {
    #[arg(long)]
    tags: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Decoded CoNLL output.
    #[arg(long)]
    decode: Option<PathBuf>,
}

#[derive(Args)]
struct SpansArgs {
    /// CoNLL with tokens in the first column and IOB labels in the last.
    #[arg(long)]
    decoded: PathBuf,
    #[arg(long)]
    tags: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DagmmArgs {
    #[arg(long)]
    spans: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// CoNLL file whose first column holds the tokens the spans refer to.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Spans with a type column.
    #[arg(long)]
    assign: Option<PathBuf>,
    /// Typed CoNLL output.
    #[arg(long)]
    decode: Option<PathBuf>,
}

#[derive(Args)]
struct TaggerArgs {
    /// CoNLL with tokens first and typed IOB labels last.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    decode: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    noisy: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    rounds: Option<usize>,
    /// Sentences per selector batch.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    baseline: Option<Switch>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tagger_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Typed,
    Span,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Typed)]
    mode: Mode,
    /// Label column of the gold file; defaults to the last column.
    #[arg(long)]
    gold_column: Option<usize>,
    /// Also write the JSON block to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    refine: Option<Switch>,
    #[arg(long, value_enum)]
    baseline: Option<Switch>,
    /// Reuse stage artifacts produced by the same configuration.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long)]
    types: Option<usize>,
    #[arg(long)]
    axis_width: Option<usize>,
    /// Distance scale between state means in units of the word noise.
    #[arg(long)]
    separation: Option<f64>,
    /// Generate a corpus without any mention.
    #[arg(long)]
    zero_entity: bool,
}

/// Exit 2 for bad input or configuration, 3 for a failure while computing.
enum Failure {
    Validation(anyhow::Error),
    Stage(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Stage(_) => 3,
        }
    }
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn failed(self, stage: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn failed(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Stage(e.into().context(format!("stage `{stage}` failed"))))
    }
}

fn base_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p).invalid()?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn load_embeddings(path: &Path, config: &PipelineConfig) -> Result<EmbeddingTable, Failure> {
    let mut e = EmbeddingTable::load(path).invalid()?;
    e.lowercase_fallback = config.lowercase_fallback;
    Ok(e)
}

fn load_tokens(path: &Path) -> Result<Corpus, Failure> {
    load_conll(path, 0, None).invalid()
}

/// Tokens from the first column and labels from the last.
fn load_labeled(path: &Path, label_column: Option<usize>) -> Result<Corpus, Failure> {
    let column = match label_column {
        Some(c) => c,
        None => {
            let n = conll_columns(path).invalid()?;
            if n < 2 {
                return Err(Failure::Validation(anyhow::anyhow!(
                    "{} has no label column",
                    path.display()
                )));
            }
            n - 1
        }
    };
    load_conll(path, 0, Some(column)).invalid()
}

fn cluster(cli: &Cli, a: &ClusterArgs) -> Result<(), Failure> {
    let mut config = base_config(cli)?;
    if let Some(m) = a.max_iters {
        config.kmeans_max_iters = m;
    }
    let emb = load_embeddings(&a.embeddings, &config)?;
    let corpus = load_tokens(&a.corpus)?;
    let mut rng = stage_rng(config.seed, "cluster");
    let (assignment, tags) =
        seed_corpus(&corpus, &emb, &mut rng, config.kmeans_max_iters).failed("cluster")?;
    tags.save(&a.out).failed("cluster")?;
    println!(
        "{}",
        json!({
            "vocabulary": tags.len(),
            "dictionary": tags.coarse_dictionary.len(),
            "converged": assignment.converged,
        })
    );
    Ok(())
}

fn hmm(cli: &Cli, a: &HmmArgs) -> Result<(), Failure> {
    let mut config = base_config(cli)?;
    if let Some(m) = a.max_iters {
        config.hmm_max_iters = m;
    }
    if let Some(t) = a.tol {
        config.hmm_tol = t;
    }
    let emb = load_embeddings(&a.embeddings, &config)?;
    let corpus = load_tokens(&a.corpus)?;
    let tags = SeedTags::load(&a.tags).invalid()?;
    if tags.coarse_dictionary.is_empty() {
        return Err(Failure::Validation(anyhow::anyhow!(
            "{} tags no token as NE",
            a.tags.display()
        )));
    }
    let hc = HmmCorpus::from_corpus(&corpus, &emb, &tags);
    let opts = config.em_options();
    let mut rng = stage_rng(config.seed, "hmm");
    let init = ghmm::init_from_seed_tags(&hc, &opts, &mut rng).failed("hmm")?;
    let (params, report) = ghmm::em_fit(&hc, init, &opts).failed("hmm")?;
    params.save(&a.out).failed("hmm")?;
    if let Some(path) = &a.decode {
        let labels: Vec<Vec<String>> = ghmm::decode_corpus(&hc, &params)
            .failed("hmm")?
            .iter()
            .map(|p| ghmm::state_labels(p, &params))
            .collect();
        write_conll(&corpus, &labels, path).failed("hmm")?;
    }
    println!(
        "{}",
        json!({
            "iterations": report.iterations,
            "converged": report.converged,
            "log_likelihood": report.log_likelihood.last(),
        })
    );
    Ok(())
}

fn spans(cli: &Cli, a: &SpansArgs) -> Result<(), Failure> {
    let mut config = base_config(cli)?;
    if let Some(t) = a.threshold {
        config.phrase_threshold = t;
    }
    let decoded = load_labeled(&a.decoded, None)?;
    let tags = SeedTags::load(&a.tags).invalid()?;
    let labels = decoded.labels().unwrap_or_default();
    let (raw, repairs) = extract_spans(&decoded, &labels).failed("spans")?;
    let filtered = filter_single_word(&raw, &decoded, &tags.coarse_dictionary);
    let merged = merge_phrases(
        &filtered,
        &decoded,
        &collect_stats(&decoded),
        &config.phrase_filter(),
    );
    save_spans(&merged.spans, &a.out).failed("spans")?;
    println!(
        "{}",
        json!({
            "repairs": repairs,
            "extracted": raw.len(),
            "after_single_word_filter": filtered.len(),
            "after_phrase_merge": merged.len(),
        })
    );
    Ok(())
}

fn dagmm_cmd(cli: &Cli, a: &DagmmArgs) -> Result<(), Failure> {
    let mut config = base_config(cli)?;
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(e) = a.epochs {
        config.dagmm_epochs = e;
    }
    if config.k < 2 {
        return Err(Failure::Validation(anyhow::anyhow!("k must be at least 2")));
    }
    let emb = load_embeddings(&a.embeddings, &config)?;
    let corpus = load_tokens(&a.corpus)?;
    let mut spans = load_spans(&a.spans).invalid()?;
    validate_spans(&spans, &corpus).invalid()?;
    let reps: Vec<Vec<f64>> = spans
        .iter()
        .map(|s| span_representation(s, &corpus, &emb))
        .collect();
    let dim = reps.first().map_or(3 * emb.dim(), Vec::len);
    let mut rng = stage_rng(config.seed, "dagmm");
    let (model, report) = dagmm::train(&reps, &config.dagmm(dim), &mut rng).failed("dagmm")?;
    let types = dagmm::assign_types(&reps, &model).failed("dagmm")?;
    model.save(&a.out).failed("dagmm")?;
    for (s, t) in spans.iter_mut().zip(types) {
        s.ty = Some(t);
    }
    if let Some(p) = &a.assign {
        save_spans(&spans, p).failed("dagmm")?;
    }
    if let Some(p) = &a.decode {
        write_conll(&corpus, &spans_to_labels(&corpus, &spans), p).failed("dagmm")?;
    }
    let mut sizes = vec![0usize; config.k];
    for s in &spans {
        sizes[s.ty.unwrap_or(0)] += 1;
    }
    println!(
        "{}",
        json!({
            "spans": spans.len(),
            "component_sizes": sizes,
            "final_objective": report.epochs.last().map(|e| e.total),
        })
    );
    Ok(())
}

fn tagger_cmd(cli: &Cli, a: &TaggerArgs) -> Result<(), Failure> {
    let config = base_config(cli)?;
    let emb = load_embeddings(&a.embeddings, &config)?;
    let corpus = load_labeled(&a.train, None)?;
    let labels = corpus.labels().unwrap_or_default();
    let tagset = Tagset::from_labels(&labels);
    let tc = config.tagger();
    tc.validate().invalid()?;
    let data = tagger::tagged_sentences(&corpus, &labels, &tagset).invalid()?;
    let mut rng = stage_rng(config.seed, "tagger");
    let mut model =
        TaggerModel::for_corpus(tc, tagset, &corpus, &emb, &mut rng).failed("tagger")?;
    let reports = tagger::train(&mut model, &data, &emb, 0, a.epochs, &mut rng).failed("tagger")?;
    model.save(&a.out).failed("tagger")?;
    if let Some(p) = &a.decode {
        let pred = model.decode_corpus(&corpus, &emb).failed("tagger")?;
        write_conll(&corpus, &pred, p).failed("tagger")?;
    }
    let losses: Vec<f64> = reports.iter().map(|r| r.mean_loss).collect();
    println!("{}", json!({ "epochs": a.epochs, "mean_loss": losses }));
    Ok(())
}

fn refine(cli: &Cli, a: &RefineArgs) -> Result<(), Failure> {
    let mut config = base_config(cli)?;
    if let Some(r) = a.rounds {
        config.selector_rounds = r;
    }
    if let Some(n) = a.n {
        config.selector_n = n;
    }
    if let Some(b) = a.baseline {
        config.selector_baseline = matches!(b, Switch::On);
    }
    config.selector().validate().invalid()?;
    config.tagger().validate().invalid()?;
    let emb = load_embeddings(&a.embeddings, &config)?;
    let corpus = load_labeled(&a.noisy, None)?;
    let labels = corpus.labels().unwrap_or_default();
    let tagset = Tagset::from_labels(&labels);
    let mut rng = stage_rng(config.seed, "refine");
    let out = refine_loop(
        &corpus,
        &labels,
        &tagset,
        &emb,
        &config.tagger(),
        &config.selector(),
        &mut rng,
    )
    .failed("refine")?;
    write_conll(&corpus, &out.labels, &a.out).failed("refine")?;
    if let Some(p) = &a.tagger_out {
        out.tagger.save(p).failed("refine")?;
    }
    let passes: Vec<_> = out
        .passes
        .iter()
        .map(|p| json!({ "selected": p.selected, "rejected": p.rejected.len(), "mean_reward": p.mean_reward }))
        .collect();
    println!("{}", json!({ "passes": passes }));
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let pred = load_labeled(&a.pred, None)?;
    let gold = load_labeled(&a.gold, a.gold_column)?;
    let pl = pred.labels().unwrap_or_default();
    let gl = gold.labels().unwrap_or_default();
    let shapes_match = pl.len() == gl.len() && pl.iter().zip(&gl).all(|(p, g)| p.len() == g.len());
    if !shapes_match {
        return Err(Failure::Validation(anyhow::anyhow!(
            "{} and {} have different sentence or token counts",
            a.pred.display(),
            a.gold.display()
        )));
    }
    match a.mode {
        Mode::Span => {
            let p = span_detection_prf(&collect_spans(&pl), &collect_spans(&gl));
            println!(
                "span detection  precision {:.4}  recall {:.4}  f1 {:.4}  ({} correct, {} predicted, {} gold)",
                p.precision, p.recall, p.f1, p.correct, p.predicted, p.gold
            );
            let block = json!({ "mode": "span", "overall": p });
            println!("{}", serde_json::to_string_pretty(&block).failed("eval")?);
            if let Some(path) = &a.json {
                std::fs::write(path, block.to_string()).failed("eval")?;
            }
        }
        Mode::Typed => {
            let e = evaluate_typed(&pl, &gl, None).invalid()?;
            print!("{}", format_report(&e));
            let block = json!({
                "mode": "typed",
                "overall": e.typed.overall,
                "per_type": e.typed.per_type,
                "spans": e.spans,
                "mapping": e.mapping,
            });
            println!("{}", serde_json::to_string_pretty(&block).failed("eval")?);
            if let Some(path) = &a.json {
                std::fs::write(path, block.to_string()).failed("eval")?;
            }
        }
    }
    Ok(())
}

fn pipeline(cli: &Cli, a: &PipelineArgs) -> Result<(), Failure> {
    let mut config = base_config(cli)?;
    if let Some(p) = &a.embeddings {
        config.embeddings = p.clone();
    }
    if let Some(p) = &a.corpus {
        config.corpus = p.clone();
    }
    if let Some(p) = &a.out_dir {
        config.output_dir = p.clone();
    }
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(r) = a.refine {
        config.run_refine = matches!(r, Switch::On);
    }
    if let Some(b) = a.baseline {
        config.selector_baseline = matches!(b, Switch::On);
    }
    if a.resume {
        config.resume = true;
    }
    config.validate().invalid()?;
    let out = match run_pipeline(&config) {
        Ok(o) => o,
        Err(e @ Error::Config(_)) => return Err(Failure::Validation(e.into())),
        // Unreadable input and artifacts from another config are input problems.
        Err(e @ Error::Stage { .. }) if is_input_problem(&e) => {
            return Err(Failure::Validation(e.into()))
        }
        Err(e) => return Err(Failure::Stage(e.into())),
    };
    info!("artifacts in {}", out.output_dir.display());
    if out.evaluation.is_some() {
        print!("{}", format_stage_report(&out.metrics));
    }
    println!(
        "{}",
        serde_json::to_string(&out.metrics).failed("pipeline")?
    );
    Ok(())
}

fn is_input_problem(e: &Error) -> bool {
    match e {
        Error::Stage { stage, source } => stage == "input" || matches!(**source, Error::Config(_)),
        _ => false,
    }
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<(), Failure> {
    let mut config = if a.zero_entity {
        SynthConfig::zero_entity()
    } else {
        SynthConfig::default()
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(n) = a.sentences {
        config.sentences = n;
    }
    if let Some(t) = a.types {
        config.types = t;
    }
    if let Some(w) = a.axis_width {
        config.axis_width = w;
    }
    if let Some(s) = a.separation {
        config.separation = s;
    }
    config.validate().invalid()?;
    let data = make_synthetic(&config).failed("synth")?;
    let paths = data.write(&a.out).failed("synth")?;
    println!(
        "{}",
        json!({
            "corpus": paths.corpus,
            "embeddings": paths.embeddings,
            "truth": paths.truth,
            "sentences": data.corpus.len(),
        })
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Cluster(a) => cluster(cli, a),
        Command::Hmm(a) => hmm(cli, a),
        Command::Spans(a) => spans(cli, a),
        Command::Dagmm(a) => dagmm_cmd(cli, a),
        Command::Tagger(a) => tagger_cmd(cli, a),
        Command::Refine(a) => refine(cli, a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(cli, a),
        Command::Synth(a) => synth(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(e) | Failure::Stage(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
