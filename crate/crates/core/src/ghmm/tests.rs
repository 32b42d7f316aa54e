use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_simplex(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_spd(r: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

fn random_params(r: &mut ChaCha8Rng, s: usize, d: usize, c: usize) -> HmmParams {
    HmmParams {
        labels: (0..s).map(|i| format!("S{i}")).collect(),
        initial: random_simplex(r, s),
        transition: (0..s).map(|_| random_simplex(r, s)).collect(),
        means: (0..s)
            .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect(),
        covariances: (0..s).map(|_| random_spd(r, d)).collect(),
        cluster_emission: (0..s).map(|_| random_simplex(r, c)).collect(),
    }
}

fn random_sentence(r: &mut ChaCha8Rng, len: usize, d: usize, c: usize) -> HmmSentence {
    HmmSentence {
        x: (0..len)
            .map(|_| (0..d).map(|_| r.random_range(-3.0..3.0)).collect())
            .collect(),
        v: (0..len).map(|_| r.random_range(0..c)).collect(),
    }
}

fn all_paths(s: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..s).map(move |z| {
                    let mut q = p.clone();
                    q.push(z);
                    q
                })
            })
            .collect();
    }
    out
}

#[test]
fn density_closed_forms() {
    let v = log_gaussian_density(&[0.0], &[0.0], &[vec![1.0]]).unwrap();
    assert!((v - (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-12);
    assert!((v + 0.91894).abs() < 1e-5);
    let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let v = log_gaussian_density(&[0.3, -1.0], &[0.3, -1.0], &eye).unwrap();
    assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
}

#[test]
fn density_matches_explicit_inverse() {
    let mut r = rng(5);
    for _ in 0..20 {
        let sigma = random_spd(&mut r, 3);
        let mu: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        let m = DMatrix::from_fn(3, 3, |i, j| sigma[i][j]);
        let inv = m.clone().try_inverse().unwrap();
        let diff = DVector::from_fn(3, |i, _| x[i] - mu[i]);
        let quad = (diff.transpose() * inv * &diff)[(0, 0)];
        let oracle = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + m.determinant().ln() + quad);
        let got = log_gaussian_density(&x, &mu, &sigma).unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn non_pd_error_names_state() {
    let mut p = random_params(&mut rng(1), 3, 2, 2);
    p.labels = IOB_STATES.iter().map(|s| s.to_string()).collect();
    p.covariances[2] = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
    let err = p.validate().unwrap_err().to_string();
    assert!(err.contains("state B"), "{err}");
}

#[test]
fn joint_single_token_and_hand_case() {
    let mut r = rng(2);
    let p = random_params(&mut r, 3, 2, 2);
    let s = random_sentence(&mut r, 1, 2, 2);
    let z = 1;
    let oracle = p.initial[z].ln()
        + log_gaussian_density(&s.x[0], &p.means[z], &p.covariances[z]).unwrap()
        + p.cluster_emission[z][s.v[0]].ln();
    assert!((joint_log_prob(&s, &[z], &p).unwrap() - oracle).abs() < 1e-12);

    let s = random_sentence(&mut r, 2, 2, 2);
    let path = [2, 0];
    let factor = |t: usize, z: usize| {
        log_gaussian_density(&s.x[t], &p.means[z], &p.covariances[z])
            .unwrap()
            .exp()
            * p.cluster_emission[z][s.v[t]]
    };
    let hand = p.initial[2] * factor(0, 2) * p.transition[2][0] * factor(1, 0);
    assert!((joint_log_prob(&s, &path, &p).unwrap() - hand.ln()).abs() < 1e-12);
}

#[test]
fn forward_matches_path_enumeration() {
    let mut r = rng(3);
    for _ in 0..30 {
        let p = random_params(&mut r, 3, 2, 2);
        let len = r.random_range(1..=4);
        let s = random_sentence(&mut r, len, 2, 2);
        let joints: Vec<f64> = all_paths(3, len)
            .iter()
            .map(|z| joint_log_prob(&s, z, &p).unwrap())
            .collect();
        let oracle = joints.iter().map(|j| j.exp()).sum::<f64>().ln();
        let f = forward_loglik(&s, &p).unwrap();
        assert!((f - oracle).abs() < 1e-8, "{f} vs {oracle}");
        assert!(joints.iter().all(|&j| j <= f + 1e-12));
    }
}

#[test]
fn forward_single_token_and_degenerate_chain() {
    let mut r = rng(4);
    let mut p = random_params(&mut r, 3, 2, 2);
    let s = random_sentence(&mut r, 1, 2, 2);
    let em = log_emissions(&s, &p).unwrap();
    let terms: Vec<f64> = (0..3).map(|z| p.initial[z].ln() + em[0][z]).collect();
    assert!((forward_loglik(&s, &p).unwrap() - log_sum_exp(&terms)).abs() < 1e-12);

    p.initial = vec![1.0, 0.0, 0.0];
    p.transition[0] = vec![1.0, 0.0, 0.0];
    let s = random_sentence(&mut r, 4, 2, 2);
    let all_o = joint_log_prob(&s, &[0, 0, 0, 0], &p).unwrap();
    assert!((forward_loglik(&s, &p).unwrap() - all_o).abs() < 1e-12);
}

#[test]
fn viterbi_matches_enumeration() {
    let mut r = rng(6);
    for _ in 0..30 {
        let p = random_params(&mut r, 3, 2, 2);
        let len = r.random_range(1..=4);
        let s = random_sentence(&mut r, len, 2, 2);
        let mut best = (f64::NEG_INFINITY, vec![]);
        for path in all_paths(3, len) {
            let j = joint_log_prob(&s, &path, &p).unwrap();
            if j > best.0 {
                best = (j, path);
            }
        }
        assert_eq!(viterbi_decode(&s, &p).unwrap(), best.1);
    }
}

#[test]
fn viterbi_dominant_o_and_mask() {
    let mut r = rng(7);
    let mut p = random_params(&mut r, 3, 2, 2);
    p.means[STATE_O] = vec![0.0, 0.0];
    p.covariances[STATE_O] = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    for z in [STATE_I, STATE_B] {
        p.means[z] = vec![50.0, 50.0];
        p.covariances[z] = vec![vec![0.1, 0.0], vec![0.0, 0.1]];
    }
    let s = HmmSentence {
        x: vec![vec![0.1, -0.1]; 5],
        v: vec![0; 5],
    };
    assert_eq!(viterbi_decode(&s, &p).unwrap(), vec![STATE_O; 5]);

    p.transition[STATE_O] = vec![0.6, 0.0, 0.4];
    p.initial = vec![0.5, 0.0, 0.5];
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let p2 = HmmParams {
            means: (0..3)
                .map(|_| (0..2).map(|_| r.random_range(-1.0..1.0)).collect())
                .collect(),
            ..p.clone()
        };
        let s = random_sentence(&mut r, 8, 2, 2);
        let path = viterbi_decode(&s, &p2).unwrap();
        assert_ne!(path[0], STATE_I);
        for w in path.windows(2) {
            assert!(!(w[0] == STATE_O && w[1] == STATE_I), "{path:?}");
        }
    }
}

#[test]
fn viterbi_shift_invariance() {
    let mut r = rng(8);
    let p = random_params(&mut r, 3, 2, 2);
    let s = random_sentence(&mut r, 6, 2, 2);
    let em = log_emissions(&s, &p).unwrap();
    let mut shifted = em.clone();
    for (t, row) in shifted.iter_mut().enumerate() {
        row.iter_mut().for_each(|x| *x += 10.0 * t as f64 - 7.0);
    }
    assert_eq!(
        viterbi_from_emissions(&em, &p),
        viterbi_from_emissions(&shifted, &p)
    );
}

#[test]
fn posteriors_normalized() {
    let mut r = rng(9);
    let p = random_params(&mut r, 3, 2, 2);
    let s = random_sentence(&mut r, 7, 2, 2);
    let post = posteriors_from_emissions(&log_emissions(&s, &p).unwrap(), &p);
    for g in &post.gamma {
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let xi_total: f64 = post.xi.iter().flatten().sum();
    assert!((xi_total - 6.0).abs() < 1e-9);
}

#[test]
fn single_state_mean_is_sample_mean() {
    let mut r = rng(10);
    let sentences: Vec<HmmSentence> = (0..30)
        .map(|_| {
            let len = r.random_range(1..6);
            random_sentence(&mut r, len, 3, 1)
        })
        .collect();
    let corpus = HmmCorpus::from_sentences(&sentences);
    let init = HmmParams {
        labels: vec!["O".into()],
        initial: vec![1.0],
        transition: vec![vec![1.0]],
        means: vec![vec![5.0, 5.0, 5.0]],
        covariances: vec![random_spd(&mut r, 3)],
        cluster_emission: vec![vec![1.0]],
    };
    let (fit, _) = em_fit(&corpus, init, &EmOptions::default()).unwrap();
    let n = corpus.token_count() as f64;
    for j in 0..3 {
        let mean: f64 = sentences
            .iter()
            .flat_map(|s| &s.x)
            .map(|x| x[j])
            .sum::<f64>()
            / n;
        assert!((fit.means[0][j] - mean).abs() < 1e-10);
    }
}

/// Samples sentences from a fully known 3-state chain.
fn sample_hmm(
    r: &mut ChaCha8Rng,
    truth: &HmmParams,
    n_sent: usize,
    len: usize,
) -> Vec<HmmSentence> {
    let pick = |r: &mut ChaCha8Rng, p: &[f64]| {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n_sent)
        .map(|_| {
            let mut z = pick(r, &truth.initial);
            let mut s = HmmSentence {
                x: vec![],
                v: vec![],
            };
            for t in 0..len {
                if t > 0 {
                    z = pick(r, &truth.transition[z]);
                }
                s.x.push(truth.means[z].iter().map(|m| m + noise.sample(r)).collect());
                s.v.push(0);
            }
            s
        })
        .collect()
}

#[test]
fn recovers_known_transitions() {
    let truth = HmmParams {
        labels: vec!["a".into(), "b".into(), "c".into()],
        initial: vec![0.5, 0.3, 0.2],
        transition: vec![
            vec![0.7, 0.2, 0.1],
            vec![0.3, 0.5, 0.2],
            vec![0.25, 0.25, 0.5],
        ],
        means: vec![vec![0.0, 0.0], vec![8.0, 0.0], vec![0.0, 8.0]],
        covariances: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 3],
        cluster_emission: vec![vec![1.0]; 3],
    };
    let mut r = rng(11);
    let sentences = sample_hmm(&mut r, &truth, 500, 10);
    let corpus = HmmCorpus::from_sentences(&sentences);

    let points: Vec<Vec<f64>> = sentences.iter().flat_map(|s| s.x.clone()).collect();
    let km = crate::kcluster::kmeans(&points, 3, &mut r, 100).unwrap();
    let init = HmmParams {
        labels: truth.labels.clone(),
        initial: vec![1.0 / 3.0; 3],
        transition: vec![vec![1.0 / 3.0; 3]; 3],
        means: km.centroids.clone(),
        covariances: vec![vec![vec![2.0, 0.0], vec![0.0, 2.0]]; 3],
        cluster_emission: vec![vec![1.0]; 3],
    };
    let (fit, report) = em_fit(&corpus, init, &EmOptions::default()).unwrap();
    assert!(report.converged);

    // Match fitted states to true states by nearest mean.
    let perm: Vec<usize> = truth
        .means
        .iter()
        .map(|m| {
            (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = fit.means[a]
                        .iter()
                        .zip(m)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    let db: f64 = fit.means[b]
                        .iter()
                        .zip(m)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    da.total_cmp(&db)
                })
                .unwrap()
        })
        .collect();
    for i in 0..3 {
        for j in 0..3 {
            let got = fit.transition[perm[i]][perm[j]];
            assert!(
                (got - truth.transition[i][j]).abs() < 0.05,
                "({i},{j}): {got}"
            );
        }
    }
}

#[test]
fn em_monotone_and_rows_normalized() {
    for seed in 0..4 {
        let mut r = rng(200 + seed);
        let truth = random_params(&mut r, 3, 2, 2);
        let sentences: Vec<HmmSentence> = sample_hmm(&mut r, &truth, 60, 6)
            .into_iter()
            .map(|mut s| {
                s.v = s.v.iter().map(|_| r.random_range(0..2)).collect();
                s
            })
            .collect();
        let corpus = HmmCorpus::from_sentences(&sentences);
        let init = random_params(&mut r, 3, 2, 2);
        let opts = EmOptions {
            max_iters: 50,
            tol: 0.0,
            cov_floor: 1e-4,
        };
        let (fit, report) = em_fit(&corpus, init, &opts).unwrap();
        for w in report.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
        }
        fit.validate().unwrap();
    }
}

#[test]
fn seed_init_masks_and_json_roundtrip() {
    let mut r = rng(12);
    let sentences: Vec<HmmSentence> = (0..20)
        .map(|_| {
            let mut s = random_sentence(&mut r, 5, 2, 2);
            for (x, v) in s.x.iter_mut().zip(&s.v) {
                x[0] += 5.0 * *v as f64;
            }
            s
        })
        .collect();
    let corpus = HmmCorpus::from_sentences(&sentences);
    let p = init_from_seed_tags(&corpus, &EmOptions::default(), &mut r).unwrap();
    assert_eq!(p.initial[STATE_I], 0.0);
    assert_eq!(p.transition[STATE_O][STATE_I], 0.0);
    assert!(p.cluster_emission[STATE_O][0] > 0.99);
    assert!(p.cluster_emission[STATE_B][1] > 0.99);
    assert!(p.means[STATE_I] != p.means[STATE_B]);

    let (fit, _) = em_fit(&corpus, p, &EmOptions::default()).unwrap();
    assert_eq!(fit.transition[STATE_O][STATE_I], 0.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    fit.save(&path).unwrap();
    assert_eq!(HmmParams::load(&path).unwrap(), fit);
    for path in decode_corpus(&corpus, &fit).unwrap() {
        assert_ne!(path[0], STATE_I);
        assert!(path
            .windows(2)
            .all(|w| !(w[0] == STATE_O && w[1] == STATE_I)));
    }
}
