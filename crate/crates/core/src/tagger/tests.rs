use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::data::Sentence;
use crate::iob::is_valid_iob;
use crate::tensor::grad_check;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
}

/// Every tag sequence of length `l` over `t` tags.
fn all_paths(l: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..l {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..t).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

fn tiny_embeddings() -> EmbeddingTable {
    let mut r = rng(77);
    let words = ["the", "Paris", "visited", "John", "Smith", "in", "."];
    EmbeddingTable::from_entries(words.iter().map(|w| {
        (
            w.to_string(),
            (0..3)
                .map(|_| r.random_range(-1.0..1.0))
                .collect::<Vec<f64>>(),
        )
    }))
    .unwrap()
}

fn tiny_config() -> TaggerConfig {
    TaggerConfig {
        hidden: 3,
        char_dim: 2,
        char_hidden: 2,
        dropout: 0.0,
        ..TaggerConfig::default()
    }
}

fn tiny_model(seed: u64, k: usize) -> TaggerModel {
    TaggerModel::new(
        tiny_config(),
        Tagset::components(k),
        3,
        "PJSadehilnmorstiv.".chars(),
        &mut rng(seed),
    )
    .unwrap()
}

fn randomize(model: &mut TaggerModel, seed: u64, scale: f64) {
    let mut r = rng(seed);
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().value_mut(id).as_mut_slice() {
            *v = r.random_range(-scale..scale);
        }
    }
}

#[test]
fn tagset_layout_and_mask() {
    let ts = Tagset::components(2);
    assert_eq!(ts.len(), 5);
    assert_eq!(ts.names(), ["O", "B-C0", "I-C0", "B-C1", "I-C1"]);
    for (i, n) in ts.names().iter().enumerate() {
        assert_eq!(ts.index(n), Some(i));
    }
    assert_eq!(ts.index("B-C7"), None);
    assert_eq!(ts.index("X-C0"), None);
    assert!(ts.encode(&["O", "B-PER"]).is_err());
    assert!(!ts.allowed(0, ts.inside(0)));
    assert!(!ts.allowed(ts.start(), ts.inside(1)));
    assert!(!ts.allowed(ts.begin(0), ts.inside(1)));
    assert!(!ts.allowed(ts.inside(1), ts.inside(0)));
    assert!(ts.allowed(ts.begin(1), ts.inside(1)));
    assert!(ts.allowed(ts.inside(1), ts.inside(1)));
    assert!(ts.allowed(ts.inside(1), ts.begin(0)));
    assert!(ts.allowed(ts.inside(1), ts.stop()));
    assert!(!ts.allowed(0, ts.start()));
    assert!(!ts.allowed(ts.stop(), 0));
    let m = ts.mask();
    assert_eq!(m.shape(), (7, 7));
    assert_eq!(m[(0, 2)], MASK_PENALTY);
    assert_eq!(m[(1, 2)], 0.0);

    let from = Tagset::from_labels(&[vec!["B-PER", "O"], vec!["B-LOC", "I-LOC", "B-PER"]]);
    assert_eq!(from.types(), ["LOC", "PER"]);
}

#[test]
fn crf_score_small_cases() {
    let mut r = rng(1);
    let p = random_matrix(&mut r, 1, 3, 2.0);
    let t = random_matrix(&mut r, 5, 5, 2.0);
    assert_eq!(crf_score(&p, &t, &[1]), t[(3, 1)] + p[(0, 1)] + t[(1, 4)]);

    let p = random_matrix(&mut r, 4, 3, 2.0);
    let zero = Matrix::zeros(5, 5);
    let y = [2, 0, 1, 1];
    let emissions: f64 = y.iter().enumerate().map(|(i, &t)| p[(i, t)]).sum();
    assert_eq!(crf_score(&p, &zero, &y), emissions);

    let p = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]);
    let t = Matrix::from_rows(&[
        vec![0.1, 0.2, 0.0, 0.3],
        vec![0.4, 0.5, 0.0, 0.6],
        vec![0.7, 0.8, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
    ]);
    // START→1 (0.8) + P[0,1] (2) + 1→0 (0.4) + P[1,0] (0.5) + 0→STOP (0.3)
    assert!((crf_score(&p, &t, &[1, 0]) - 4.0).abs() < 1e-12);
}

#[test]
fn log_partition_matches_enumeration() {
    let mut r = rng(2);
    for _ in 0..60 {
        let l = r.random_range(1..=5);
        let t = r.random_range(1..=4);
        let p = random_matrix(&mut r, l, t, 3.0);
        let tr = random_matrix(&mut r, t + 2, t + 2, 3.0);
        let scores: Vec<f64> = all_paths(l, t)
            .iter()
            .map(|y| crf_score(&p, &tr, y))
            .collect();
        let brute = log_sum_exp(&scores);
        assert!((crf_log_partition(&p, &tr) - brute).abs() < 1e-8);

        let c = r.random_range(-5.0..5.0);
        let shifted = p.map(|x| x + c);
        let diff = crf_log_partition(&shifted, &tr) - crf_log_partition(&p, &tr);
        assert!((diff - l as f64 * c).abs() < 1e-9);
    }
}

#[test]
fn single_admissible_path_partition_is_its_score() {
    let mut r = rng(3);
    let p = random_matrix(&mut r, 3, 3, 2.0);
    let path = [2, 0, 1];
    let mut tr = Matrix::filled(5, 5, MASK_PENALTY);
    tr[(3, 2)] = 0.3;
    tr[(2, 0)] = -0.1;
    tr[(0, 1)] = 0.7;
    tr[(1, 4)] = 0.2;
    // Emissions cannot rescue another path: the other transitions cost 1e4.
    let z = crf_log_partition(&p, &tr);
    assert!((z - crf_score(&p, &tr, &path)).abs() < 1e-8);
    assert_eq!(crf_viterbi(&p, &tr), path);
}

#[test]
fn viterbi_matches_enumeration() {
    let mut r = rng(4);
    for _ in 0..60 {
        let l = r.random_range(1..=5);
        let t = r.random_range(1..=4);
        let p = random_matrix(&mut r, l, t, 3.0);
        let tr = random_matrix(&mut r, t + 2, t + 2, 3.0);
        let paths = all_paths(l, t);
        let best = paths
            .iter()
            .max_by(|a, b| crf_score(&p, &tr, a).total_cmp(&crf_score(&p, &tr, b)))
            .unwrap();
        let v = crf_viterbi(&p, &tr);
        assert_eq!(&v, best);
        for _ in 0..5 {
            let y: Vec<usize> = (0..l).map(|_| r.random_range(0..t)).collect();
            assert!(crf_score(&p, &tr, &v) >= crf_score(&p, &tr, &y));
        }
    }
}

#[test]
fn viterbi_respects_mask_and_dominance() {
    let ts = Tagset::components(2);
    let mut r = rng(5);
    for _ in 0..50 {
        let l = r.random_range(1..8);
        let p = random_matrix(&mut r, l, ts.len(), 50.0);
        let mut tr = random_matrix(&mut r, 7, 7, 5.0);
        tr.add_assign(&ts.mask());
        let y = ts.decode(&crf_viterbi(&p, &tr));
        assert!(is_valid_iob(&y), "{y:?}");
    }
    let p = Matrix::from_rows(&[
        vec![0.0, 90.0, 0.0],
        vec![0.0, 0.0, 90.0],
        vec![80.0, 0.0, 0.0],
    ]);
    let tr = random_matrix(&mut r, 5, 5, 1.0);
    assert_eq!(crf_viterbi(&p, &tr), [1, 2, 0]);
}

#[test]
fn viterbi_ties_prefer_lower_index() {
    let p = Matrix::zeros(3, 3);
    let tr = Matrix::zeros(5, 5);
    assert_eq!(crf_viterbi(&p, &tr), [0, 0, 0]);
}

#[test]
fn crf_nll_gradient_matches_finite_differences() {
    let mut r = rng(6);
    let mut store = ParamStore::new();
    let p = store.add("p", random_matrix(&mut r, 2, 3, 1.0));
    let t = store.add("t", random_matrix(&mut r, 5, 5, 1.0));
    let report = grad_check(&mut store, 1e-5, 1e-4, |g, s| {
        let pv = g.param(s, p);
        let tv = g.param(s, t);
        crf_nll_graph(g, pv, tv, &[2, 1])
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn crf_nll_graph_matches_plain_functions() {
    let mut r = rng(7);
    for l in 0..5 {
        let p = random_matrix(&mut r, l, 3, 2.0);
        let tr = random_matrix(&mut r, 5, 5, 2.0);
        let y: Vec<usize> = (0..l).map(|_| r.random_range(0..3)).collect();
        let mut g = Graph::new();
        let pv = g.constant(p.clone());
        let tv = g.constant(tr.clone());
        let nll = crf_nll_graph(&mut g, pv, tv, &y).unwrap();
        let want = crf_log_partition(&p, &tr) - crf_score(&p, &tr, &y);
        assert!((g.scalar(nll) - want).abs() < 1e-10);
        assert!(g.scalar(nll) >= -1e-12);
    }
    let mut g = Graph::new();
    let pv = g.constant(Matrix::zeros(2, 3));
    let tv = g.constant(Matrix::zeros(5, 5));
    assert!(crf_nll_graph(&mut g, pv, tv, &[0]).is_err());
    assert!(crf_nll_graph(&mut g, pv, tv, &[0, 3]).is_err());
}

#[test]
fn saturated_model_has_near_zero_loss() {
    let p = Matrix::from_rows(&[vec![0.0, 40.0, 0.0], vec![0.0, 0.0, 40.0]]);
    let tr = Tagset::components(1).mask();
    let mut g = Graph::new();
    let pv = g.constant(p);
    let tv = g.constant(tr);
    let nll = crf_nll_graph(&mut g, pv, tv, &[1, 2]).unwrap();
    assert!(g.scalar(nll) < 1e-12);
}

#[test]
fn model_gradient_matches_finite_differences() {
    let emb = tiny_embeddings();
    let mut model = tiny_model(8, 1);
    randomize(&mut model, 9, 0.5);
    let tokens = ["John", "Smith", "visited"];
    let gold = [1, 2, 0];
    let mut store = model.params().clone();
    let report = grad_check(&mut store, 1e-5, 1e-4, |g, s| {
        model.nll_on(g, s, &tokens, &gold, &emb, None)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn encode_shape_and_constant_net() {
    let emb = tiny_embeddings();
    let mut model = tiny_model(10, 2);
    for n in [1, 2, 5] {
        let tokens: Vec<&str> = ["the", "Paris", "in", "John", "."]
            .into_iter()
            .take(n)
            .collect();
        let p = model.encode(&tokens, &emb).unwrap();
        assert_eq!(p.shape(), (n, 5));
    }
    assert_eq!(model.encode::<&str>(&[], &emb).unwrap().shape(), (0, 5));
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        model.params_mut().value_mut(id).fill(0.0);
    }
    let p = model.encode(&["the", "Paris", "xyz"], &emb).unwrap();
    for i in 1..3 {
        assert_eq!(p.row(i), p.row(0));
    }
}

#[test]
fn mirrored_sentence_with_swapped_cells_mirrors_features() {
    let emb = tiny_embeddings();
    let mut model = tiny_model(11, 1);
    randomize(&mut model, 12, 0.8);
    let tokens = ["Paris", "John"];
    let (f, _) = model.features(&tokens, &emb).unwrap();
    model.swap_directions();
    let (fr, _) = model.features(&["John", "Paris"], &emb).unwrap();
    let h = model.config.hidden;
    for i in 0..2 {
        let j = 1 - i;
        for c in 0..h {
            assert!((f[(i, c)] - fr[(j, h + c)]).abs() < 1e-12);
            assert!((f[(i, h + c)] - fr[(j, c)]).abs() < 1e-12);
        }
    }
}

#[test]
fn inference_is_deterministic_with_dropout_configured() {
    let emb = tiny_embeddings();
    let cfg = TaggerConfig {
        dropout: 0.5,
        ..tiny_config()
    };
    let model =
        TaggerModel::new(cfg, Tagset::components(2), 3, "abc".chars(), &mut rng(13)).unwrap();
    let tokens = ["the", "Paris", "visited"];
    assert_eq!(
        model.encode(&tokens, &emb).unwrap(),
        model.encode(&tokens, &emb).unwrap()
    );
}

#[test]
fn sentence_log_prob_is_a_distribution() {
    let emb = tiny_embeddings();
    let mut model = tiny_model(14, 1);
    randomize(&mut model, 15, 0.7);
    let tokens = ["John", "Smith", "in"];
    let total: f64 = all_paths(3, 3)
        .iter()
        .map(|y| model.sentence_log_prob(&tokens, y, &emb).unwrap())
        .inspect(|lp| assert!(*lp <= 0.0))
        .map(f64::exp)
        .sum();
    assert!((total - 1.0).abs() < 1e-8, "{total}");

    let gold = [1, 2, 0];
    let lp = model.sentence_log_prob(&tokens, &gold, &emb).unwrap();
    let batch = [TaggedSentence {
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        tags: gold.to_vec(),
    }];
    let nll = model.crf_nll(&batch, &emb, None).unwrap();
    assert!((lp + nll).abs() < 1e-10);
    assert!(model.sentence_log_prob(&tokens, &[1, 2], &emb).is_err());
}

#[test]
fn learning_rate_schedule() {
    let cfg = TaggerConfig::default();
    for e in 0..10 {
        let want = 0.015 * 0.95f64.powi(e as i32);
        assert!((cfg.learning_rate_at(e) - want).abs() < 1e-15);
    }
}

#[test]
fn config_validation() {
    assert!(TaggerConfig::default().validate().is_ok());
    for bad in [
        TaggerConfig {
            hidden: 0,
            ..TaggerConfig::default()
        },
        TaggerConfig {
            dropout: 1.0,
            ..TaggerConfig::default()
        },
        TaggerConfig {
            learning_rate: 0.0,
            ..TaggerConfig::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn small_steps_never_increase_fixed_batch_loss() {
    let emb = tiny_embeddings();
    let mut model = tiny_model(16, 2);
    let ts = model.tagset.clone();
    let batch: Vec<TaggedSentence> = [
        (
            vec!["John", "Smith", "visited", "Paris"],
            vec!["B-C0", "I-C0", "O", "B-C1"],
        ),
        (vec!["the", "Paris", "."], vec!["O", "B-C1", "O"]),
        (vec!["John", "in", "Paris"], vec!["B-C0", "O", "B-C1"]),
    ]
    .into_iter()
    .map(|(t, l)| TaggedSentence {
        tokens: t.into_iter().map(String::from).collect(),
        tags: ts.encode(&l).unwrap(),
    })
    .collect();
    let opt = Sgd { clip_norm: None };
    let mut prev = f64::INFINITY;
    for step in 0..50 {
        let loss = model.crf_nll(&batch, &emb, None).unwrap();
        assert!(loss <= prev + 1e-6, "step {step}: {prev} -> {loss}");
        prev = loss;
        opt.step(model.params_mut(), 1e-3);
    }
}

#[test]
fn non_finite_loss_names_the_sentence() {
    let emb = tiny_embeddings();
    let mut model = tiny_model(17, 1);
    let id = model.params().ids().last().unwrap();
    model.params_mut().value_mut(id).fill(f64::NAN);
    let data = vec![TaggedSentence {
        tokens: vec!["John".into()],
        tags: vec![1],
    }];
    let err = train_epoch(&mut model, &data, &emb, 0, &mut rng(0)).unwrap_err();
    assert!(err.to_string().contains("sentence 0"), "{err}");
}

/// Sentences of filler words with embedded one- or two-token mentions of
/// two entity types; labels follow deterministically from the tokens.
fn learnable_corpus(r: &mut ChaCha8Rng, n: usize) -> (Vec<TaggedSentence>, Vec<Sentence>) {
    let filler: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let a: Vec<String> = (0..6).map(|i| format!("Ana{i}")).collect();
    let b: Vec<String> = (0..6).map(|i| format!("Bor{i}")).collect();
    let ts = Tagset::components(2);
    let mut out = Vec::new();
    let mut raw = Vec::new();
    for _ in 0..n {
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        let len = r.random_range(4..9);
        while tokens.len() < len {
            match r.random_range(0..6) {
                0 | 1 => {
                    let (names, ty) = if r.random_bool(0.5) {
                        (&a, "C0")
                    } else {
                        (&b, "C1")
                    };
                    let span = r.random_range(1..=2);
                    for j in 0..span {
                        tokens.push(names[r.random_range(0..names.len())].clone());
                        labels.push(format!("{}-{ty}", if j == 0 { "B" } else { "I" }));
                    }
                }
                _ => {
                    tokens.push(filler[r.random_range(0..filler.len())].clone());
                    labels.push("O".to_string());
                }
            }
        }
        raw.push(Sentence::labeled(tokens.clone(), labels.clone()));
        out.push(TaggedSentence {
            tokens,
            tags: ts.encode(&labels).unwrap(),
        });
    }
    (out, raw)
}

#[test]
fn tagger_learns_a_synthetic_pattern() {
    let mut r = rng(18);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut vocab: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    vocab.extend((0..6).map(|i| format!("Ana{i}")));
    vocab.extend((0..6).map(|i| format!("Bor{i}")));
    let emb = EmbeddingTable::from_entries(vocab.iter().map(|w| {
        (
            w.clone(),
            (0..10).map(|_| normal.sample(&mut r)).collect::<Vec<f64>>(),
        )
    }))
    .unwrap();
    let (train_set, raw) = learnable_corpus(&mut r, 200);
    let (test_set, _) = learnable_corpus(&mut r, 100);
    let corpus = Corpus::new(raw);
    let mut model = TaggerModel::for_corpus(
        TaggerConfig::default(),
        Tagset::components(2),
        &corpus,
        &emb,
        &mut r,
    )
    .unwrap();
    let accuracy = |m: &TaggerModel| {
        let (mut ok, mut total) = (0, 0);
        for s in &test_set {
            let pred = m.predict(&s.tokens, &emb).unwrap();
            ok += pred.iter().zip(&s.tags).filter(|(a, b)| a == b).count();
            total += s.tags.len();
        }
        ok as f64 / total as f64
    };
    let mut acc = 0.0;
    for epoch in 0..30 {
        train_epoch(&mut model, &train_set, &emb, epoch, &mut r).unwrap();
        acc = accuracy(&model);
        if acc >= 0.95 {
            break;
        }
    }
    assert!(acc >= 0.95, "token accuracy {acc}");
    for s in &test_set {
        assert!(is_valid_iob(
            &model.predict_labels(&s.tokens, &emb).unwrap()
        ));
    }
}

#[test]
fn json_round_trip_preserves_predictions() {
    let emb = tiny_embeddings();
    let mut model = tiny_model(19, 2);
    randomize(&mut model, 20, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tagger.json");
    model.save(&path).unwrap();
    let back = TaggerModel::load(&path).unwrap();
    let tokens = ["John", "visited", "Paris", "."];
    assert_eq!(
        model.encode(&tokens, &emb).unwrap(),
        back.encode(&tokens, &emb).unwrap()
    );
    assert_eq!(model.transitions(), back.transitions());
}

#[test]
fn wrong_embedding_dimension_is_rejected() {
    let model = tiny_model(21, 1);
    let emb = EmbeddingTable::from_entries([("a".to_string(), vec![1.0, 2.0])]).unwrap();
    assert!(model.encode(&["a"], &emb).is_err());
}
