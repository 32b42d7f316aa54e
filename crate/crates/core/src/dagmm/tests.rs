use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::ghmm::log_gaussian_density;
use crate::tensor::grad_check;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn zero_all(model: &mut DagmmModel) {
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        model.params_mut().value_mut(id).fill(0.0);
    }
}

fn dense_rows(layer: &Dense, store: &ParamStore, x: &[f64]) -> Vec<f64> {
    let w = store.value(layer.w);
    let b = store.value(layer.b);
    (0..w.cols())
        .map(|o| {
            let z = b[(0, o)] + (0..w.rows()).map(|i| x[i] * w[(i, o)]).sum::<f64>();
            match layer.act {
                Activation::Tanh => z.tanh(),
                Activation::Linear => z,
            }
        })
        .collect()
}

#[test]
fn default_sizes_give_17_dim_latent() {
    let m = DagmmModel::new(DagmmConfig::new(150, 4), &mut rng(0)).unwrap();
    let u: Vec<f64> = (0..150).map(|i| (i as f64).sin()).collect();
    let (t, up) = compress(&u, &m).unwrap();
    assert_eq!(t.len(), 17);
    assert_eq!(up.len(), 150);
}

#[test]
fn zero_network_is_constant() {
    let mut m = DagmmModel::new(DagmmConfig::new(6, 3), &mut rng(1)).unwrap();
    zero_all(&mut m);
    let (t1, r1) = compress(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &m).unwrap();
    let (t2, r2) = compress(&[-1.0, 0.5, 0.0, 2.0, 1.0, 9.0], &m).unwrap();
    assert!(t1[..15].iter().all(|&x| x == 0.0));
    assert_eq!(t1[..15], t2[..15]);
    assert!(r1.iter().chain(&r2).all(|&x| x == 0.0));
    let gamma = membership(&t1, &m).unwrap();
    assert!(gamma.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn compress_matches_straight_line_arithmetic() {
    let mut cfg = DagmmConfig::new(5, 2);
    cfg.compression = vec![4, 3];
    let mut m = DagmmModel::new(cfg, &mut rng(2)).unwrap();
    m.input_mean = vec![0.1, -0.2, 0.3, 0.0, 1.0];
    m.input_std = vec![1.0, 2.0, 0.5, 1.5, 1.0];
    let mut r = rng(3);
    let ids: Vec<ParamId> = m.params().ids().collect();
    for id in ids {
        m.params_mut()
            .value_mut(id)
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = r.random_range(-1.0..1.0));
    }
    let u = [0.7, -1.2, 0.4, 2.0, -0.3];
    let (t, up) = compress(&u, &m).unwrap();

    let x: Vec<f64> = (0..5)
        .map(|i| (u[i] - m.input_mean[i]) / m.input_std[i])
        .collect();
    let code = m
        .encoder
        .iter()
        .fold(x.clone(), |h, l| dense_rows(l, m.params(), &h));
    let recon = m
        .decoder
        .iter()
        .fold(code.clone(), |h, l| dense_rows(l, m.params(), &h));
    let feats = reconstruction_features(&x, &recon);
    for (a, b) in up.iter().zip(&recon) {
        assert!((a - b).abs() < 1e-10);
    }
    for (a, b) in t.iter().zip(code.iter().chain(&feats)) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn reconstruction_feature_cases() {
    let u = [1.0, -2.0, 0.5];
    assert_eq!(reconstruction_features(&u, &u), [0.0, 1.0]);
    let neg: Vec<f64> = u.iter().map(|x| -x).collect();
    let f = reconstruction_features(&u, &neg);
    assert!((f[0] - 2.0).abs() < 1e-15 && (f[1] + 1.0).abs() < 1e-15);
    let up = [0.3, 0.1, -0.7];
    let un = (1.0f64 + 4.0 + 0.25).sqrt();
    let dist = (0.49f64 + 4.41 + 1.44).sqrt();
    let dot = 0.3 - 0.2 - 0.35;
    let upn = (0.09f64 + 0.01 + 0.49).sqrt();
    let f = reconstruction_features(&u, &up);
    assert!((f[0] - dist / un).abs() < 1e-12);
    assert!((f[1] - dot / (un * upn)).abs() < 1e-12);
    assert_eq!(
        reconstruction_features(&[0.0, 0.0], &[3.0, 4.0]),
        [5.0, 0.0]
    );
}

#[test]
fn reconstruction_loss_cases() {
    assert_eq!(reconstruction_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert_eq!(reconstruction_loss(&[1.0, 0.0], &[0.0, 1.0]), 2.0);
    let (a, b) = ([0.5, -1.0, 2.0], [1.5, 1.0, 0.0]);
    assert_eq!(reconstruction_loss(&a, &b), 1.0 + 4.0 + 4.0);
}

#[test]
fn membership_simplex_and_shift() {
    let mut m = DagmmModel::new(DagmmConfig::new(6, 4), &mut rng(4)).unwrap();
    let t: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).cos()).collect();
    let g1 = membership(&t, &m).unwrap();
    assert!((g1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let b = m.estimator[1].b;
    m.params_mut()
        .value_mut(b)
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v += 3.5);
    let g2 = membership(&t, &m).unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn random_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect()
}

#[test]
fn gmm_single_component_is_batch_moments() {
    let mut r = rng(5);
    let t = random_rows(&mut r, 20, 3);
    let mix = estimate_gmm(&t, &vec![vec![1.0]; 20], 0.0).unwrap();
    assert_eq!(mix.phi, [1.0]);
    for j in 0..3 {
        let mean = t.iter().map(|x| x[j]).sum::<f64>() / 20.0;
        assert!((mix.mu[0][j] - mean).abs() < 1e-12);
        for l in 0..3 {
            let ml = t.iter().map(|x| x[l]).sum::<f64>() / 20.0;
            let c = t.iter().map(|x| (x[j] - mean) * (x[l] - ml)).sum::<f64>() / 20.0;
            assert!((mix.sigma[0][j][l] - c).abs() < 1e-12);
            assert_eq!(mix.sigma[0][j][l], mix.sigma[0][l][j]);
        }
    }
}

#[test]
fn gmm_one_hot_partition_and_uniform() {
    let mut r = rng(6);
    let t = random_rows(&mut r, 12, 2);
    let gamma: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            if i < 5 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            }
        })
        .collect();
    let mix = estimate_gmm(&t, &gamma, 1e-6).unwrap();
    let part = estimate_gmm(&t[5..], &vec![vec![1.0]; 7], 1e-6).unwrap();
    assert!((mix.phi[1] - 7.0 / 12.0).abs() < 1e-15);
    for j in 0..2 {
        assert!((mix.mu[1][j] - part.mu[0][j]).abs() < 1e-12);
        for l in 0..2 {
            assert!((mix.sigma[1][j][l] - part.sigma[0][j][l]).abs() < 1e-12);
        }
    }

    let uni = estimate_gmm(&t, &vec![vec![0.25; 4]; 12], 1e-6).unwrap();
    for c in 1..4 {
        assert_eq!(uni.mu[c], uni.mu[0]);
    }

    let dead = estimate_gmm(&t, &vec![vec![1.0, 0.0]; 12], 1e-6).unwrap();
    assert_eq!(dead.degenerate, [false, true]);
}

#[test]
fn energy_identities() {
    let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let mix = Mixture {
        phi: vec![1.0],
        mu: vec![vec![0.5, -0.5]],
        sigma: vec![eye],
        degenerate: vec![false],
    };
    let e = energy(&[0.5, -0.5], &mix).unwrap();
    assert!((e - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

    let mut r = rng(7);
    let t = random_rows(&mut r, 30, 3);
    let mix = estimate_gmm(&t, &vec![vec![1.0]; 30], 1e-6).unwrap();
    for x in &t[..5] {
        let oracle = -log_gaussian_density(x, &mix.mu[0], &mix.sigma[0]).unwrap();
        assert!((energy(x, &mix).unwrap() - oracle).abs() < 1e-10);
    }

    let gamma: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![(i % 3) as f64 / 2.0, 1.0 - (i % 3) as f64 / 2.0])
        .collect();
    let mix = estimate_gmm(&t, &gamma, 1e-6).unwrap();
    let dir = [0.3, -0.8, 0.5];
    let mut prev = f64::NEG_INFINITY;
    for step in 0..20 {
        let x: Vec<f64> = dir.iter().map(|d| 10.0 + step as f64 * d * 2.0).collect();
        let e = energy(&x, &mix).unwrap();
        assert!(e > prev);
        prev = e;
    }
}

#[test]
fn penalty_hand_cases() {
    let eye3 = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let two = Mixture {
        phi: vec![0.5, 0.5],
        mu: vec![vec![0.0; 3]; 2],
        sigma: vec![eye3.clone(), eye3],
        degenerate: vec![false; 2],
    };
    assert_eq!(cov_penalty(&two), 6.0);
    let one = Mixture {
        phi: vec![1.0],
        mu: vec![vec![0.0]],
        sigma: vec![vec![vec![0.5]]],
        degenerate: vec![false],
    };
    assert_eq!(cov_penalty(&one), 2.0);
    let mut halved = two.clone();
    for s in &mut halved.sigma {
        for (j, row) in s.iter_mut().enumerate() {
            row[j] *= 0.5;
        }
    }
    assert_eq!(cov_penalty(&halved), 2.0 * cov_penalty(&two));
}

fn toy_config() -> DagmmConfig {
    let mut cfg = DagmmConfig::new(4, 2);
    cfg.compression = vec![3, 2];
    cfg.estimation_hidden = 3;
    cfg.cov_eps = 1e-3;
    cfg
}

#[test]
fn objective_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let mut r = rng(20 + seed);
        let model = DagmmModel::new(toy_config(), &mut r).unwrap();
        let rows = random_rows(&mut r, 8, 4);
        let x = Matrix::from_rows(&rows);
        let mut store = model.params().clone();
        let report = grad_check(&mut store, 1e-5, 1e-4, |g, s| {
            build_objective(&model, g, s, x.clone(), (0.1, 0.005)).map(|(v, _)| v)
        })
        .unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}

#[test]
fn plain_autoencoder_loss_decreases() {
    let mut r = rng(8);
    let data = random_rows(&mut r, 64, 6);
    let mut cfg = DagmmConfig::new(6, 2);
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    cfg.epochs = 20;
    cfg.batch_size = 16;
    cfg.compression = vec![8, 3];
    let (_, report) = train(&data, &cfg, &mut r).unwrap();
    let first = report.epochs[0].reconstruction;
    let last = report.epochs.last().unwrap().reconstruction;
    assert!(last < first, "{first} -> {last}");
}

fn three_blobs(r: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for c in 0..3 {
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..9).map(|_| noise.sample(r)).collect();
            for j in 0..3 {
                x[3 * c + j] += 5.0;
            }
            data.push(x);
            truth.push(c);
        }
    }
    (data, truth)
}

/// Fraction of points in agreement under the best component-to-blob matching.
fn purity(pred: &[usize], truth: &[usize]) -> (f64, [[usize; 3]; 3]) {
    let mut counts = [[0usize; 3]; 3];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let best = perms
        .iter()
        .map(|p| (0..3).map(|k| counts[k][p[k]]).sum::<usize>())
        .max()
        .unwrap();
    (best as f64 / pred.len() as f64, counts)
}

#[test]
fn separated_clusters_are_recovered() {
    let mut r = rng(9);
    let (data, truth) = three_blobs(&mut r);
    let mut cfg = DagmmConfig::new(9, 3);
    cfg.batch_size = 100;
    let (model, _) = train(&data, &cfg, &mut r).unwrap();
    let (purity, counts) = purity(&assign_types(&data, &model).unwrap(), &truth);
    assert!(purity >= 0.9, "purity {purity}, counts {counts:?}");

    let mix = model.mixture.as_ref().unwrap();
    assert!((mix.phi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    for s in &mix.sigma {
        assert!(Gaussian::new(&mix.mu[0], s).is_ok());
    }
}

#[test]
fn argmax_tie_break_and_json() {
    assert_eq!(argmax(&[0.7, 0.1, 0.1, 0.1]), 0);
    assert_eq!(argmax(&[0.25; 4]), 0);
    assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);

    let mut r = rng(10);
    let data = random_rows(&mut r, 12, 4);
    let mut cfg = toy_config();
    cfg.epochs = 2;
    let (model, _) = train(&data, &cfg, &mut r).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dagmm.json");
    model.save(&p).unwrap();
    let back = DagmmModel::load(&p).unwrap();
    assert_eq!(
        assign_types(&data, &back).unwrap(),
        assign_types(&data, &model).unwrap()
    );
    assert_eq!(back.mixture, model.mixture);
}

#[test]
fn too_few_spans_is_error() {
    let data = vec![vec![0.0; 4]];
    assert!(train(&data, &toy_config(), &mut rng(0)).is_err());
}

#[test]
fn restarts_zero_is_rejected() {
    let mut cfg = DagmmConfig::new(4, 2);
    cfg.restarts = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn single_restart_matches_training_once() {
    let data = random_rows(&mut rng(30), 40, 4);
    let mut cfg = toy_config();
    cfg.epochs = 5;
    cfg.pretrain_epochs = 2;
    cfg.batch_size = 10;
    cfg.restarts = 1;
    let (a, _) = train(&data, &cfg, &mut rng(31)).unwrap();
    let (b, _) = train(&data, &cfg, &mut rng(31)).unwrap();
    assert_eq!(a.mixture, b.mixture);
    cfg.restarts = 2;
    let (c, report) = train(&data, &cfg, &mut rng(31)).unwrap();
    assert_eq!(report.epochs.len(), 5);
    assert!(c.mixture.is_some());
}

#[test]
fn warm_start_fits_the_estimator_to_a_latent_partition() {
    let (data, truth) = three_blobs(&mut rng(9));
    let mut cfg = DagmmConfig::new(9, 3);
    cfg.batch_size = 100;
    cfg.warm_start_epochs = 30;
    let mut r = rng(4);
    let mut model = DagmmModel::new(cfg.clone(), &mut r).unwrap();
    let mut opt = Adam::new(&model.store);
    warm_start(&mut model, &data, &mut opt, &mut r).unwrap();
    let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let (_, _, gamma) = model.infer(&refs).unwrap();
    let pred: Vec<usize> = gamma.iter().map(|g| argmax(g)).collect();
    let (purity, counts) = purity(&pred, &truth);
    assert!(purity >= 0.95, "purity {purity}, counts {counts:?}");
}
