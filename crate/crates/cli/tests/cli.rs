use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn embner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embner"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> String {
    let out = embner(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small models so every test runs in seconds.
fn fast_config(dir: &Path, extra: Value) -> std::path::PathBuf {
    let mut config = json!({
        "k": 3,
        "dagmm_epochs": 10,
        "dagmm_pretrain_epochs": 3,
        "dagmm_restarts": 1,
        "tagger_hidden": 16,
        "tagger_use_chars": false,
        "selector_rounds": 1,
    });
    for (k, v) in extra.as_object().unwrap() {
        config[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

fn synth(dir: &Path, sentences: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let n = sentences.to_string();
    let stdout = ok(&["synth", "--out", p(&data), "--sentences", &n]);
    let v: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(v["sentences"], json!(sentences));
    (data.join("corpus.conll"), data.join("embeddings.txt"))
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (corpus, emb) = synth(d, 80);
    let config = fast_config(d, json!({}));
    let cfg = p(&config);
    let tags = d.join("tags.tsv");
    let decoded = d.join("decoded.conll");
    let spans = d.join("spans.tsv");
    let typed_spans = d.join("typed.tsv");
    let typed = d.join("typed.conll");
    let refined = d.join("refined.conll");
    let eval_json = d.join("eval.json");

    ok(&[
        "--config",
        cfg,
        "cluster",
        "--embeddings",
        p(&emb),
        "--corpus",
        p(&corpus),
        "--out",
        p(&tags),
    ]);
    let hmm_out = d.join("hmm.json");
    let stdout = ok(&[
        "--config",
        cfg,
        "hmm",
        "--tags",
        p(&tags),
        "--embeddings",
        p(&emb),
        "--corpus",
        p(&corpus),
        "--out",
        p(&hmm_out),
        "--decode",
        p(&decoded),
    ]);
    let v: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert!(v["iterations"].as_u64().unwrap() >= 1);
    ok(&[
        "--config",
        cfg,
        "spans",
        "--decoded",
        p(&decoded),
        "--tags",
        p(&tags),
        "--out",
        p(&spans),
    ]);
    ok(&[
        "--config",
        cfg,
        "dagmm",
        "--spans",
        p(&spans),
        "--embeddings",
        p(&emb),
        "--corpus",
        p(&corpus),
        "--out",
        p(&d.join("dagmm.json")),
        "--assign",
        p(&typed_spans),
        "--decode",
        p(&typed),
    ]);
    ok(&[
        "--config",
        cfg,
        "tagger",
        "--train",
        p(&typed),
        "--embeddings",
        p(&emb),
        "--epochs",
        "1",
        "--out",
        p(&d.join("tagger.json")),
    ]);
    let stdout = ok(&[
        "--config",
        cfg,
        "refine",
        "--noisy",
        p(&typed),
        "--embeddings",
        p(&emb),
        "--rounds",
        "1",
        "--n",
        "5",
        "--baseline",
        "on",
        "--out",
        p(&refined),
        "--tagger-out",
        p(&d.join("refined_tagger.json")),
    ]);
    let v: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(v["passes"].as_array().unwrap().len(), 1);
    let stdout = ok(&[
        "eval",
        "--pred",
        p(&refined),
        "--gold",
        p(&corpus),
        "--json",
        p(&eval_json),
    ]);
    assert!(stdout.contains("precision"));
    let block: Value = serde_json::from_str(&std::fs::read_to_string(&eval_json).unwrap()).unwrap();
    assert_eq!(block["mode"], "typed");
    let f1 = block["overall"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    for f in [&tags, &decoded, &spans, &typed_spans, &typed, &refined] {
        assert!(f.is_file(), "missing {}", f.display());
    }
}

#[test]
fn span_mode_scores_identical_files_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, _) = synth(tmp.path(), 30);
    let stdout = ok(&[
        "eval",
        "--mode",
        "span",
        "--pred",
        p(&corpus),
        "--gold",
        p(&corpus),
    ]);
    assert!(stdout.contains("f1 1.0000"), "{stdout}");
}

#[test]
fn pipeline_runs_from_a_config_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (corpus, emb) = synth(d, 80);
    let config = fast_config(d, json!({ "embeddings": emb, "corpus": corpus }));
    let a = d.join("a");
    let b = d.join("b");
    let stdout = ok(&[
        "--config",
        p(&config),
        "pipeline",
        "--out-dir",
        p(&a),
        "--refine",
        "off",
    ]);
    assert!(stdout.contains("span detection by stage"));
    ok(&[
        "--config",
        p(&config),
        "pipeline",
        "--out-dir",
        p(&b),
        "--refine",
        "off",
    ]);
    assert_eq!(
        std::fs::read(a.join("metrics.json")).unwrap(),
        std::fs::read(b.join("metrics.json")).unwrap()
    );
    ok(&[
        "--config",
        p(&config),
        "pipeline",
        "--out-dir",
        p(&a),
        "--refine",
        "off",
        "--resume",
    ]);
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let missing = d.join("missing.txt");
    let out = embner(&[
        "cluster",
        "--embeddings",
        p(&missing),
        "--corpus",
        p(&missing),
        "--out",
        p(&d.join("t")),
    ]);
    assert_eq!(code(&out), 2);

    let bad_config = d.join("bad.json");
    std::fs::write(&bad_config, r#"{"no_such_key": 1}"#).unwrap();
    let out = embner(&[
        "--config",
        p(&bad_config),
        "cluster",
        "--embeddings",
        p(&missing),
        "--corpus",
        p(&missing),
        "--out",
        p(&d.join("t")),
    ]);
    assert_eq!(code(&out), 2);

    let out = embner(&["synth", "--out", p(&d.join("s")), "--types", "0"]);
    assert_eq!(code(&out), 2);

    let out = embner(&["no-such-command"]);
    assert_eq!(code(&out), 2);

    let (corpus, emb) = synth(d, 20);
    let short = d.join("short.conll");
    std::fs::write(&short, "Ann B-C0\n\n").unwrap();
    let out = embner(&["eval", "--pred", p(&short), "--gold", p(&corpus)]);
    assert_eq!(code(&out), 2);

    let config = fast_config(d, json!({ "embeddings": emb, "corpus": corpus, "k": 1 }));
    let out = embner(&[
        "--config",
        p(&config),
        "pipeline",
        "--out-dir",
        p(&d.join("run")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn resume_with_another_seed_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (corpus, emb) = synth(d, 40);
    let config = fast_config(d, json!({ "embeddings": emb, "corpus": corpus }));
    let run = d.join("run");
    ok(&[
        "--config",
        p(&config),
        "pipeline",
        "--out-dir",
        p(&run),
        "--refine",
        "off",
    ]);
    let out = embner(&[
        "--config",
        p(&config),
        "--seed",
        "7",
        "pipeline",
        "--out-dir",
        p(&run),
        "--refine",
        "off",
        "--resume",
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stage_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (corpus, emb) = synth(d, 40);
    let config = fast_config(d, json!({ "embeddings": emb, "corpus": corpus }));
    let run = d.join("run");
    // A directory where the spans stage writes its table.
    std::fs::create_dir_all(run.join("spans.tsv")).unwrap();
    let out = embner(&[
        "--config",
        p(&config),
        "pipeline",
        "--out-dir",
        p(&run),
        "--refine",
        "off",
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("spans"));
    assert!(run.join("hmm.json").is_file());
}

#[test]
fn zero_entity_corpus_runs_to_an_empty_annotation() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    ok(&[
        "synth",
        "--out",
        p(&data),
        "--sentences",
        "40",
        "--zero-entity",
    ]);
    let config = fast_config(
        d,
        json!({ "embeddings": data.join("embeddings.txt"), "corpus": data.join("corpus.conll") }),
    );
    let run = d.join("run");
    ok(&["--config", p(&config), "pipeline", "--out-dir", p(&run)]);
    let pred = std::fs::read_to_string(run.join("pred.conll")).unwrap();
    assert!(pred
        .lines()
        .filter(|l| !l.trim().is_empty())
        .all(|l| l.ends_with(" O") || l.ends_with("\tO")));
}
