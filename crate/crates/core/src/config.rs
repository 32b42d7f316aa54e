//! Declarative pipeline configuration: one flat JSON document.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dagmm::DagmmConfig;
use crate::error::{Error, Result};
use crate::ghmm::EmOptions;
use crate::selector::SelectorConfig;
use crate::spans::PhraseFilterConfig;
use crate::tagger::TaggerConfig;

/// Every key is optional in the file and falls back to its default. Unknown
/// keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Word vectors, `token v1 .. vd` per line.
    pub embeddings: PathBuf,
    /// CoNLL corpus; blank lines separate sentences.
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub token_column: usize,
    /// Gold label column used by the eval stage; `null` means the last column
    /// when the file has more than one.
    pub gold_column: Option<usize>,
    pub lowercase_fallback: bool,
    pub seed: u64,

    /// Stage toggles. A disabled cluster, hmm, spans or dagmm stage loads its
    /// artifact from `output_dir` instead of running. A disabled refine stage
    /// leaves the type-induction output as the final prediction; a disabled
    /// eval stage writes no scores.
    pub run_cluster: bool,
    pub run_hmm: bool,
    pub run_spans: bool,
    pub run_dagmm: bool,
    pub run_refine: bool,
    pub run_eval: bool,
    /// Reuse any stage artifact already present with a matching config hash.
    pub resume: bool,

    pub kmeans_max_iters: usize,
    pub hmm_max_iters: usize,
    pub hmm_tol: f64,
    pub hmm_cov_floor: f64,
    pub phrase_threshold: f64,

    /// Number of induced entity types.
    pub k: usize,
    pub dagmm_compression: Vec<usize>,
    pub dagmm_estimation_hidden: usize,
    pub dagmm_lambda1: f64,
    pub dagmm_lambda2: f64,
    pub dagmm_epochs: usize,
    pub dagmm_batch_size: usize,
    pub dagmm_learning_rate: f64,
    pub dagmm_cov_eps: f64,
    pub dagmm_pretrain_epochs: usize,
    pub dagmm_warm_start_epochs: usize,
    pub dagmm_restarts: usize,

    pub tagger_hidden: usize,
    pub tagger_use_chars: bool,
    pub tagger_char_dim: usize,
    pub tagger_char_hidden: usize,
    pub tagger_dropout: f64,
    pub tagger_learning_rate: f64,
    pub tagger_lr_decay: f64,
    pub tagger_clip_norm: f64,

    /// Sentences per selector batch.
    pub selector_n: usize,
    pub selector_rounds: usize,
    pub selector_warmup_epochs: usize,
    pub selector_learning_rate: f64,
    pub selector_epsilon: f64,
    pub selector_baseline: bool,
    pub selector_baseline_window: usize,
    pub selector_relabel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let em = EmOptions::default();
        let dagmm = DagmmConfig::new(1, 4);
        let tagger = TaggerConfig::default();
        let sel = SelectorConfig::default();
        PipelineConfig {
            embeddings: PathBuf::new(),
            corpus: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            token_column: 0,
            gold_column: None,
            lowercase_fallback: true,
            seed: 0,
            run_cluster: true,
            run_hmm: true,
            run_spans: true,
            run_dagmm: true,
            run_refine: true,
            run_eval: true,
            resume: false,
            kmeans_max_iters: 100,
            hmm_max_iters: em.max_iters,
            hmm_tol: em.tol,
            hmm_cov_floor: em.cov_floor,
            phrase_threshold: PhraseFilterConfig::default().threshold,
            k: dagmm.k,
            dagmm_compression: dagmm.compression,
            dagmm_estimation_hidden: dagmm.estimation_hidden,
            dagmm_lambda1: dagmm.lambda1,
            dagmm_lambda2: dagmm.lambda2,
            dagmm_epochs: dagmm.epochs,
            dagmm_batch_size: dagmm.batch_size,
            dagmm_learning_rate: dagmm.learning_rate,
            dagmm_cov_eps: dagmm.cov_eps,
            dagmm_pretrain_epochs: dagmm.pretrain_epochs,
            dagmm_warm_start_epochs: dagmm.warm_start_epochs,
            dagmm_restarts: dagmm.restarts,
            tagger_hidden: tagger.hidden,
            tagger_use_chars: tagger.use_chars,
            tagger_char_dim: tagger.char_dim,
            tagger_char_hidden: tagger.char_hidden,
            tagger_dropout: tagger.dropout,
            tagger_learning_rate: tagger.learning_rate,
            tagger_lr_decay: tagger.lr_decay,
            tagger_clip_norm: tagger.clip_norm,
            selector_n: sel.batch_size,
            selector_rounds: sel.rounds,
            selector_warmup_epochs: sel.warmup_epochs,
            selector_learning_rate: sel.learning_rate,
            selector_epsilon: sel.epsilon,
            selector_baseline: sel.baseline,
            selector_baseline_window: sel.baseline_window,
            selector_relabel: sel.relabel,
        }
    }
}

/// Keys that change how a run is executed but not what it computes.
const EXECUTION_KEYS: [&str; 8] = [
    "output_dir",
    "run_cluster",
    "run_hmm",
    "run_spans",
    "run_dagmm",
    "run_refine",
    "run_eval",
    "resume",
];

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Checks values and that the input files exist.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        for (key, path) in [("embeddings", &self.embeddings), ("corpus", &self.corpus)] {
            if path.as_os_str().is_empty() {
                return Err(Error::Config(format!("`{key}` path is not set")));
            }
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "`{key}` file {} does not exist",
                    path.display()
                )));
            }
        }
        if self.kmeans_max_iters == 0 || self.hmm_max_iters == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        if !(self.hmm_tol >= 0.0)
            || !(self.hmm_cov_floor > 0.0)
            || !self.phrase_threshold.is_finite()
        {
            return Err(Error::Config(
                "hmm_tol, hmm_cov_floor and phrase_threshold must be valid numbers".into(),
            ));
        }
        self.dagmm(1).validate()?;
        self.tagger().validate()?;
        self.selector().validate()?;
        Ok(())
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            max_iters: self.hmm_max_iters,
            tol: self.hmm_tol,
            cov_floor: self.hmm_cov_floor,
        }
    }

    pub fn phrase_filter(&self) -> PhraseFilterConfig {
        PhraseFilterConfig {
            threshold: self.phrase_threshold,
        }
    }

    pub fn dagmm(&self, input_dim: usize) -> DagmmConfig {
        DagmmConfig {
            input_dim,
            compression: self.dagmm_compression.clone(),
            estimation_hidden: self.dagmm_estimation_hidden,
            k: self.k,
            lambda1: self.dagmm_lambda1,
            lambda2: self.dagmm_lambda2,
            epochs: self.dagmm_epochs,
            batch_size: self.dagmm_batch_size,
            learning_rate: self.dagmm_learning_rate,
            cov_eps: self.dagmm_cov_eps,
            standardize: true,
            pretrain_epochs: self.dagmm_pretrain_epochs,
            warm_start_epochs: self.dagmm_warm_start_epochs,
            restarts: self.dagmm_restarts,
        }
    }

    pub fn tagger(&self) -> TaggerConfig {
        TaggerConfig {
            hidden: self.tagger_hidden,
            use_chars: self.tagger_use_chars,
            char_dim: self.tagger_char_dim,
            char_hidden: self.tagger_char_hidden,
            dropout: self.tagger_dropout,
            learning_rate: self.tagger_learning_rate,
            lr_decay: self.tagger_lr_decay,
            clip_norm: self.tagger_clip_norm,
        }
    }

    pub fn selector(&self) -> SelectorConfig {
        SelectorConfig {
            batch_size: self.selector_n,
            rounds: self.selector_rounds,
            warmup_epochs: self.selector_warmup_epochs,
            learning_rate: self.selector_learning_rate,
            epsilon: self.selector_epsilon,
            baseline: self.selector_baseline,
            baseline_window: self.selector_baseline_window,
            relabel: self.selector_relabel,
        }
    }

    /// Hex SHA-256 of the canonical JSON of every key except the execution
    /// keys (output directory, stage toggles, resume).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in EXECUTION_KEYS {
                map.remove(key);
            }
        }
        // serde_json maps are sorted by key, so the text is canonical.
        let text = serde_json::to_string(&value).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_files(dir: &Path) -> PipelineConfig {
        let e = dir.join("e.txt");
        let c = dir.join("c.conll");
        std::fs::write(&e, "a 1 2\n").unwrap();
        std::fs::write(&c, "a O\n").unwrap();
        PipelineConfig {
            embeddings: e,
            corpus: c,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn defaults_match_module_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.tagger(), TaggerConfig::default());
        assert_eq!(c.selector(), SelectorConfig::default());
        assert_eq!(c.dagmm(6), DagmmConfig::new(6, 4));
        assert_eq!(c.phrase_filter().threshold, 100.0);
        assert_eq!(c.selector_n, 10);
    }

    #[test]
    fn partial_file_fills_defaults_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        std::fs::write(&p, r#"{"k": 3, "seed": 7}"#).unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!((c.k, c.seed), (3, 7));
        assert_eq!(c.hmm_max_iters, PipelineConfig::default().hmm_max_iters);
        std::fs::write(&p, r#"{"kk": 3}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(Error::Config(_))));
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let c = with_files(dir.path());
        c.validate().unwrap();
        assert!(PipelineConfig { k: 1, ..c.clone() }.validate().is_err());
        assert!(PipelineConfig {
            corpus: dir.path().join("missing"),
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(PipelineConfig::default().validate().is_err());
        assert!(PipelineConfig {
            selector_n: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn round_trip_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let c = with_files(dir.path());
        let p = dir.path().join("p.json");
        c.save(&p).unwrap();
        assert_eq!(PipelineConfig::load(&p).unwrap(), c);
        assert_eq!(c.hash().len(), 64);
        let toggled = PipelineConfig {
            run_refine: false,
            resume: true,
            output_dir: "elsewhere".into(),
            ..c.clone()
        };
        assert_eq!(toggled.hash(), c.hash());
        assert_ne!(
            PipelineConfig {
                seed: 1,
                ..c.clone()
            }
            .hash(),
            c.hash()
        );
        assert_ne!(PipelineConfig { k: 3, ..c.clone() }.hash(), c.hash());
    }
}
