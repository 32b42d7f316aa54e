//! Deep autoencoding Gaussian mixture model over span representations.
//!
//! A tanh autoencoder compresses each span vector; its code plus two
//! reconstruction features feed an estimation network whose softmax output
//! is a soft assignment to K mixture components. Mixture parameters are
//! batch moments of the network outputs, so the energy term trains the whole
//! stack end to end.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghmm::Gaussian;
use crate::kcluster::kmeans;
use crate::tensor::{
    log_sum_exp, softmax_in_place, Adam, Axis, Graph, Matrix, ParamId, ParamStore, TensorError, Var,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Keeps square roots differentiable at zero inside the training graph.
const SQRT_EPS: f64 = 1e-18;
const MIN_RESPONSIBILITY: f64 = 1e-12;
const KMEANS_INITS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagmmConfig {
    pub input_dim: usize,
    /// Encoder layer widths; the last is the code size.
    pub compression: Vec<usize>,
    pub estimation_hidden: usize,
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Added to every mixture covariance diagonal.
    pub cov_eps: f64,
    /// Z-score inputs with statistics of the training set.
    pub standardize: bool,
    /// Leading epochs that train the autoencoder alone (both penalty weights
    /// treated as zero).
    pub pretrain_epochs: usize,
    /// Epochs that fit the estimation network alone to a k-means partition of
    /// the pretrained latent vectors before joint training. Zero disables.
    #[serde(default)]
    pub warm_start_epochs: usize,
    /// Independent training runs. The kept run has the fewest starved
    /// components (hard-assigned fewer than a tenth of an even share of the
    /// spans), then the lowest full-data objective.
    pub restarts: usize,
}

impl DagmmConfig {
    pub fn new(input_dim: usize, k: usize) -> Self {
        DagmmConfig {
            input_dim,
            compression: vec![75, 15],
            estimation_hidden: 10,
            k,
            lambda1: 1.0,
            lambda2: 0.005,
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            cov_eps: 1e-6,
            standardize: true,
            pretrain_epochs: 30,
            warm_start_epochs: 10,
            restarts: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes_ok = self.input_dim > 0
            && !self.compression.is_empty()
            && self.compression.iter().all(|&s| s > 0)
            && self.estimation_hidden > 0
            && self.k > 0
            && self.batch_size > 0
            && self.restarts > 0;
        if !sizes_ok {
            return Err(Error::Config(
                "DAGMM layer sizes, K, batch size and restarts must be positive".into(),
            ));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config(
                "DAGMM penalty weights must be non-negative".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.cov_eps >= 0.0) {
            return Err(Error::Config("DAGMM learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Size of the estimation network input: code plus two reconstruction features.
    pub fn latent_dim(&self) -> usize {
        self.compression.last().copied().unwrap_or(0) + 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum Activation {
    Tanh,
    Linear,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct Dense {
    w: ParamId,
    b: ParamId,
    act: Activation,
}

impl Dense {
    fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        i: usize,
        o: usize,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        Dense {
            w: store.add_glorot(format!("{name}.w"), i, o, rng),
            b: store.add_zeros(format!("{name}.b"), 1, o),
            act,
        }
    }

    fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
    ) -> std::result::Result<Var, TensorError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let h = g.matmul(x, w)?;
        let h = g.add(h, b)?;
        Ok(match self.act {
            Activation::Tanh => g.tanh(h),
            Activation::Linear => h,
        })
    }
}

fn run_stack(
    layers: &[Dense],
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
) -> std::result::Result<Var, TensorError> {
    layers.iter().try_fold(x, |h, l| l.apply(g, store, h))
}

/// Fitted mixture over the latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub phi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    /// Components whose total responsibility was negligible; their moments
    /// fall back to the batch mean and covariance.
    pub degenerate: Vec<bool>,
}

impl Mixture {
    pub fn k(&self) -> usize {
        self.phi.len()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DagmmModel {
    pub config: DagmmConfig,
    store: ParamStore,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    estimator: Vec<Dense>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub mixture: Option<Mixture>,
}

/// Forward pass of a batch on a graph.
struct Forward {
    input: Var,
    recon: Var,
    latent: Var,
    gamma: Var,
}

impl DagmmModel {
    /// Fresh Glorot-initialised network. Encoder layers use tanh; the decoder
    /// has a tanh hidden stack and a linear output; the estimator has a tanh
    /// hidden layer and softmax output.
    pub fn new<R: Rng>(config: DagmmConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut dims = vec![config.input_dim];
        dims.extend(&config.compression);
        let encoder: Vec<Dense> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Dense::new(
                    &mut store,
                    &format!("enc{i}"),
                    w[0],
                    w[1],
                    Activation::Tanh,
                    rng,
                )
            })
            .collect();
        let rev: Vec<usize> = dims.iter().rev().copied().collect();
        let decoder: Vec<Dense> = rev
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == rev.len() {
                    Activation::Linear
                } else {
                    Activation::Tanh
                };
                Dense::new(&mut store, &format!("dec{i}"), w[0], w[1], act, rng)
            })
            .collect();
        let estimator = vec![
            Dense::new(
                &mut store,
                "est0",
                config.latent_dim(),
                config.estimation_hidden,
                Activation::Tanh,
                rng,
            ),
            Dense::new(
                &mut store,
                "est1",
                config.estimation_hidden,
                config.k,
                Activation::Linear,
                rng,
            ),
        ];
        Ok(DagmmModel {
            input_mean: vec![0.0; config.input_dim],
            input_std: vec![1.0; config.input_dim],
            config,
            store,
            encoder,
            decoder,
            estimator,
            mixture: None,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn standardize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.input_mean)
            .zip(&self.input_std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    fn input_matrix(&self, us: &[&[f64]]) -> Result<Matrix> {
        if let Some(bad) = us.iter().find(|u| u.len() != self.config.input_dim) {
            return Err(Error::Shape(format!(
                "span vector has {} components, model expects {}",
                bad.len(),
                self.config.input_dim
            )));
        }
        let rows: Vec<Vec<f64>> = us.iter().map(|u| self.standardize(u)).collect();
        Ok(Matrix::from_rows(&rows))
    }

    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Matrix,
    ) -> std::result::Result<Forward, TensorError> {
        let input = g.constant(x);
        let code = run_stack(&self.encoder, g, store, input)?;
        let recon = run_stack(&self.decoder, g, store, code)?;
        let feats = reconstruction_features_graph(g, input, recon)?;
        let latent = g.concat_cols(&[code, feats])?;
        let logits = run_stack(&self.estimator, g, store, latent)?;
        let gamma = g.softmax_rows(logits);
        Ok(Forward {
            input,
            recon,
            latent,
            gamma,
        })
    }

    /// Latent vectors t = [code ; rel. distance ; cosine], reconstructions and
    /// memberships for a batch of raw span vectors.
    pub fn infer(&self, us: &[&[f64]]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if us.is_empty() {
            return Ok((vec![], vec![], vec![]));
        }
        let x = self.input_matrix(us)?;
        let mut g = Graph::new();
        let f = self.forward(&mut g, &self.store, x)?;
        let rows = |v: Var| -> Vec<Vec<f64>> {
            let m = g.value(v);
            (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
        };
        Ok((rows(f.latent), rows(f.recon), rows(f.gamma)))
    }

    /// Full objective on a batch of raw span vectors, as built for training.
    pub fn objective(&self, us: &[&[f64]]) -> Result<ObjectiveParts> {
        let x = self.input_matrix(us)?;
        let mut g = Graph::new();
        let lambda = (self.config.lambda1, self.config.lambda2);
        let (_, parts) = build_objective(self, &mut g, &self.store, x, lambda)?;
        Ok(parts)
    }

    /// The objective as a graph node over the parameters in `store`, which
    /// must share this model's layout.
    pub fn objective_on(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        us: &[&[f64]],
    ) -> std::result::Result<Var, TensorError> {
        if let Some(bad) = us.iter().find(|u| u.len() != self.config.input_dim) {
            return Err(TensorError::Shape {
                op: "dagmm objective",
                lhs: (1, bad.len()),
                rhs: (1, self.config.input_dim),
            });
        }
        let rows: Vec<Vec<f64>> = us.iter().map(|u| self.standardize(u)).collect();
        let lambda = (self.config.lambda1, self.config.lambda2);
        Ok(build_objective(self, g, store, Matrix::from_rows(&rows), lambda)?.0)
    }
}

/// Values of the objective terms for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub total: f64,
    pub reconstruction: f64,
    pub energy: f64,
    pub penalty: f64,
}

fn build_objective(
    model: &DagmmModel,
    g: &mut Graph,
    store: &ParamStore,
    x: Matrix,
    lambda: (f64, f64),
) -> std::result::Result<(Var, ObjectiveParts), TensorError> {
    let cfg = &model.config;
    let f = model.forward(g, store, x)?;
    let diff = g.sub(f.input, f.recon)?;
    let sq = g.square(diff);
    let per_row = g.sum_axis(sq, Axis::Rows);
    let recon = g.mean(per_row);
    let (energy, penalty) = gmm_energy_graph(g, f.latent, f.gamma, cfg.cov_eps)?;
    let mean_energy = g.mean(energy);
    let e_term = g.scale(mean_energy, lambda.0);
    let p_term = g.scale(penalty, lambda.1);
    let total = g.add(recon, e_term)?;
    let total = g.add(total, p_term)?;
    let parts = ObjectiveParts {
        total: g.scalar(total),
        reconstruction: g.scalar(recon),
        energy: g.scalar(mean_energy),
        penalty: g.scalar(penalty),
    };
    Ok((total, parts))
}

/// Row-wise [‖u−u'‖/‖u‖ , cos(u,u')] on the graph. Rows with ‖u‖ = 0 use
/// ‖u−u'‖ and a cosine of 0.
fn reconstruction_features_graph(
    g: &mut Graph,
    u: Var,
    up: Var,
) -> std::result::Result<Var, TensorError> {
    let um = g.value(u).clone();
    let norms: Vec<f64> = (0..um.rows())
        .map(|r| um.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let inv_norm = g.constant(Matrix::from_fn(um.rows(), 1, |r, _| {
        if norms[r] > 0.0 {
            1.0 / norms[r]
        } else {
            1.0
        }
    }));
    let cos_mask = g.constant(Matrix::from_fn(um.rows(), 1, |r, _| {
        f64::from(u8::from(norms[r] > 0.0))
    }));

    let diff = g.sub(u, up)?;
    let dsq = g.square(diff);
    let dsum = g.sum_axis(dsq, Axis::Rows);
    let dsum = g.offset(dsum, SQRT_EPS);
    let dist = g.sqrt(dsum);
    let rel = g.mul(dist, inv_norm)?;

    let prod = g.mul(u, up)?;
    let dot = g.sum_axis(prod, Axis::Rows);
    let upsq = g.square(up);
    let upsum = g.sum_axis(upsq, Axis::Rows);
    let upsum = g.offset(upsum, SQRT_EPS);
    let upn = g.sqrt(upsum);
    let cos = g.div(dot, upn)?;
    let cos = g.mul(cos, inv_norm)?;
    let cos = g.mul(cos, cos_mask)?;
    g.concat_cols(&[rel, cos])
}

/// Per-row energy (n × 1) and the covariance penalty (1 × 1) with mixture
/// moments computed from `gamma` on the graph.
fn gmm_energy_graph(
    g: &mut Graph,
    z: Var,
    gamma: Var,
    eps: f64,
) -> std::result::Result<(Var, Var), TensorError> {
    let (n, d) = g.shape(z);
    let k = g.shape(gamma).1;
    let gsum = g.sum_axis(gamma, Axis::Cols); // 1 × K
    let phi = g.scale(gsum, 1.0 / n as f64);
    let log_phi = g.log(phi);
    let gt = g.transpose(gamma);
    let weighted = g.matmul(gt, z)?; // K × d
    let gsum_col = g.transpose(gsum);
    let mu = g.div(weighted, gsum_col)?;
    let reg = g.constant(Matrix::from_fn(d, d, |i, j| if i == j { eps } else { 0.0 }));
    let diag: Vec<(usize, usize)> = (0..d).map(|j| (j, j)).collect();

    let mut log_comps = Vec::with_capacity(k);
    let mut penalty: Option<Var> = None;
    for c in 0..k {
        let mu_c = g.row(mu, c)?;
        let diff = g.sub(z, mu_c)?;
        let gc = g.slice_cols(gamma, c, 1)?;
        let wdiff = g.mul(diff, gc)?;
        let dt = g.transpose(diff);
        let scatter = g.matmul(dt, wdiff)?;
        let total_c = g.slice_cols(gsum, c, 1)?;
        let cov = g.div(scatter, total_c)?;
        let cov = g.add(cov, reg)?;

        let quad = g.inv_quad(diff, cov)?;
        let log_det = g.log_det(cov)?;
        let half_quad = g.scale(quad, -0.5);
        let half_ld = g.scale(log_det, -0.5);
        let lp = g.add(half_quad, half_ld)?;
        let lp = g.offset(lp, -0.5 * d as f64 * LN_2PI);
        let lphi_c = g.slice_cols(log_phi, c, 1)?;
        log_comps.push(g.add(lp, lphi_c)?);

        let dg = g.gather(cov, &diag)?;
        let inv = g.recip(dg);
        let p = g.sum(inv);
        penalty = Some(match penalty {
            Some(acc) => g.add(acc, p)?,
            None => p,
        });
    }
    let all = g.concat_cols(&log_comps)?;
    let lse = g.logsumexp(all, Axis::Rows);
    let energy = g.neg(lse);
    Ok((energy, penalty.expect("k >= 1")))
}

/// Latent code and reconstruction of a raw span vector.
pub fn compress(u: &[f64], model: &DagmmModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut t, mut r, _) = model.infer(&[u])?;
    Ok((t.remove(0), r.remove(0)))
}

/// [‖u−u'‖/‖u‖ , cos(u,u')]; for ‖u‖ = 0 the distance is not normalised
/// and the cosine is 0.
pub fn reconstruction_features(u: &[f64], up: &[f64]) -> [f64; 2] {
    let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let upn = up.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dist = u
        .iter()
        .zip(up)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if un == 0.0 {
        debug!("reconstruction_features: zero input vector");
        return [dist, 0.0];
    }
    let dot: f64 = u.iter().zip(up).map(|(a, b)| a * b).sum();
    let cos = if upn == 0.0 { 0.0 } else { dot / (un * upn) };
    [dist / un, cos]
}

pub fn reconstruction_loss(u: &[f64], up: &[f64]) -> f64 {
    u.iter().zip(up).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Soft component membership of a latent vector.
pub fn membership(t: &[f64], model: &DagmmModel) -> Result<Vec<f64>> {
    if t.len() != model.config.latent_dim() {
        return Err(Error::Shape(format!(
            "latent vector has {} components, expected {}",
            t.len(),
            model.config.latent_dim()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(Matrix::row_vector(t.to_vec()));
    let logits = run_stack(&model.estimator, &mut g, &model.store, x)?;
    let mut p = g.value(logits).row(0).to_vec();
    softmax_in_place(&mut p);
    Ok(p)
}

/// Weighted mixture moments. Covariances are symmetrised and get `eps` on
/// the diagonal.
pub fn estimate_gmm(t: &[Vec<f64>], gamma: &[Vec<f64>], eps: f64) -> Result<Mixture> {
    let n = t.len();
    if n == 0 || gamma.len() != n {
        return Err(Error::Shape(format!(
            "{} latent rows but {} membership rows",
            n,
            gamma.len()
        )));
    }
    let d = t[0].len();
    let k = gamma[0].len();
    let batch_mean: Vec<f64> = (0..d)
        .map(|j| t.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let moments = |w: &dyn Fn(usize) -> f64, total: f64| -> (Vec<f64>, Vec<Vec<f64>>) {
        let mu: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| w(i) * t[i][j]).sum::<f64>() / total)
            .collect();
        let mut s = vec![vec![0.0; d]; d];
        for i in 0..n {
            let wi = w(i);
            for a in 0..d {
                let da = t[i][a] - mu[a];
                for b in 0..d {
                    s[a][b] += wi * da * (t[i][b] - mu[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                s[a][b] /= total;
            }
        }
        for a in 0..d {
            for b in (a + 1)..d {
                let m = 0.5 * (s[a][b] + s[b][a]);
                s[a][b] = m;
                s[b][a] = m;
            }
            s[a][a] += eps;
        }
        (mu, s)
    };
    let (_, batch_cov) = moments(&|_| 1.0, n as f64);

    let mut mix = Mixture {
        phi: Vec::with_capacity(k),
        mu: Vec::with_capacity(k),
        sigma: Vec::with_capacity(k),
        degenerate: Vec::with_capacity(k),
    };
    for c in 0..k {
        let total: f64 = gamma.iter().map(|r| r[c]).sum();
        mix.phi.push(total / n as f64);
        if total < MIN_RESPONSIBILITY {
            warn!("mixture component {c} has negligible responsibility; using batch moments");
            mix.mu.push(batch_mean.clone());
            mix.sigma.push(batch_cov.clone());
            mix.degenerate.push(true);
        } else {
            let (mu, s) = moments(&|i| gamma[i][c], total);
            mix.mu.push(mu);
            mix.sigma.push(s);
            mix.degenerate.push(false);
        }
    }
    Ok(mix)
}

/// E(t) = −log Σ_k φ_k N(t; μ_k, Σ_k).
pub fn energy(t: &[f64], mixture: &Mixture) -> Result<f64> {
    let terms = mixture
        .phi
        .iter()
        .zip(&mixture.mu)
        .zip(&mixture.sigma)
        .enumerate()
        .map(|(c, ((phi, mu), sigma))| {
            let gauss = Gaussian::new(mu, sigma).map_err(|_| {
                Error::NotPositiveDefinite(format!("mixture component {c} covariance"))
            })?;
            Ok(phi.ln() + gauss.log_pdf(t))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(-log_sum_exp(&terms))
}

/// Σ_k Σ_j 1 / Σ_k[j][j].
pub fn cov_penalty(mixture: &Mixture) -> f64 {
    mixture
        .sigma
        .iter()
        .flat_map(|s| s.iter().enumerate().map(|(j, row)| 1.0 / row[j]))
        .sum()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DagmmReport {
    /// Mean objective terms per epoch.
    pub epochs: Vec<ObjectiveParts>,
}

/// Mini-batch training of the full objective, then a full-data pass that
/// freezes the inference mixture.
pub fn train<R: Rng>(
    spans: &[Vec<f64>],
    config: &DagmmConfig,
    rng: &mut R,
) -> Result<(DagmmModel, DagmmReport)> {
    config.validate()?;
    if spans.len() < config.k {
        return Err(Error::InvalidInput(format!(
            "{} spans is fewer than K = {}",
            spans.len(),
            config.k
        )));
    }
    let refs: Vec<&[f64]> = spans.iter().map(Vec::as_slice).collect();
    let mut best: Option<((usize, f64), DagmmModel, DagmmReport)> = None;
    for r in 0..config.restarts {
        let (model, report) = train_once(spans, config, rng)?;
        let total = model.objective(&refs)?.total;
        let (_, _, gamma) = model.infer(&refs)?;
        let mut sizes = vec![0usize; config.k];
        for g in &gamma {
            sizes[argmax(g)] += 1;
        }
        let min_size = (spans.len() / (10 * config.k)).max(1);
        let empty = sizes.iter().filter(|&&n| n < min_size).count();
        info!("dagmm restart {r}: full-data objective {total:.5}, component sizes {sizes:?}");
        let key = (empty, total);
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| key.0 < b.0 || (key.0 == b.0 && key.1 < b.1))
        {
            best = Some((key, model, report));
        }
    }
    let ((empty, _), model, report) = best.expect("restarts >= 1");
    if empty > 0 {
        warn!(
            "dagmm: {empty} of {} components received almost no spans",
            config.k
        );
    }
    Ok((model, report))
}

fn train_once<R: Rng>(
    spans: &[Vec<f64>],
    config: &DagmmConfig,
    rng: &mut R,
) -> Result<(DagmmModel, DagmmReport)> {
    let mut model = DagmmModel::new(config.clone(), rng)?;
    if config.standardize {
        let n = spans.len() as f64;
        for j in 0..config.input_dim {
            let mean = spans.iter().map(|u| u[j]).sum::<f64>() / n;
            let var = spans.iter().map(|u| (u[j] - mean).powi(2)).sum::<f64>() / n;
            model.input_mean[j] = mean;
            model.input_std[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
    }

    let n_batches = spans.len().div_ceil(config.batch_size);
    let mut order: Vec<usize> = (0..spans.len()).collect();
    let mut opt = Adam::new(&model.store);
    let mut report = DagmmReport::default();
    for epoch in 0..config.epochs {
        if epoch == config.pretrain_epochs && config.warm_start_epochs > 0 {
            warm_start(&mut model, spans, &mut opt, rng)?;
        }
        order.shuffle(rng);
        let lambda = if epoch < config.pretrain_epochs {
            (0.0, 0.0)
        } else {
            (config.lambda1, config.lambda2)
        };
        let mut acc = ObjectiveParts::default();
        for b in 0..n_batches {
            // Near-equal batches so the last one is never tiny.
            let lo = b * order.len() / n_batches;
            let hi = (b + 1) * order.len() / n_batches;
            let batch: Vec<&[f64]> = order[lo..hi].iter().map(|&i| spans[i].as_slice()).collect();
            let x = model.input_matrix(&batch)?;
            let mut g = Graph::new();
            let (root, parts) = build_objective(&model, &mut g, &model.store, x, lambda)
                .map_err(|e| Error::Diverged(format!("epoch {epoch}, batch {b}: {e}")))?;
            if !parts.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite DAGMM loss at epoch {epoch}, batch {b}"
                )));
            }
            let grads = g.backward(root);
            model.store.accumulate(&g, &grads);
            opt.step(&mut model.store, config.learning_rate);
            let w = batch.len() as f64 / spans.len() as f64;
            acc.total += w * parts.total;
            acc.reconstruction += w * parts.reconstruction;
            acc.energy += w * parts.energy;
            acc.penalty += w * parts.penalty;
        }
        debug!(
            "dagmm epoch {epoch}: objective {:.5} (recon {:.5}, energy {:.5}, penalty {:.5})",
            acc.total, acc.reconstruction, acc.energy, acc.penalty
        );
        report.epochs.push(acc);
    }

    let refs: Vec<&[f64]> = spans.iter().map(Vec::as_slice).collect();
    let (t, _, gamma) = model.infer(&refs)?;
    model.mixture = Some(estimate_gmm(&t, &gamma, config.cov_eps)?);
    if let Some(last) = report.epochs.last() {
        info!(
            "dagmm: {} epochs, final objective {:.5}",
            config.epochs, last.total
        );
    }
    Ok((model, report))
}

/// Fits the estimation network alone, by cross-entropy, to the best of a few
/// k-means partitions of the current latent vectors.
fn warm_start<R: Rng>(
    model: &mut DagmmModel,
    spans: &[Vec<f64>],
    opt: &mut Adam,
    rng: &mut R,
) -> Result<()> {
    let config = model.config.clone();
    let refs: Vec<&[f64]> = spans.iter().map(Vec::as_slice).collect();
    let (t, _, _) = model.infer(&refs)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_INITS {
        let fit = kmeans(&t, config.k, rng, 100)?;
        let wcss = fit.wcss_history.last().copied().unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(b, _)| wcss < *b) {
            best = Some((wcss, fit.assignment));
        }
    }
    let (_, labels) = best.expect("at least one k-means run");
    let mut order: Vec<usize> = (0..spans.len()).collect();
    let n_batches = spans.len().div_ceil(config.batch_size);
    for epoch in 0..config.warm_start_epochs {
        order.shuffle(rng);
        let mut loss = 0.0;
        for b in 0..n_batches {
            let idx = &order[b * order.len() / n_batches..(b + 1) * order.len() / n_batches];
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| t[i].clone()).collect();
            let mut target = Matrix::zeros(idx.len(), config.k);
            for (r, &i) in idx.iter().enumerate() {
                target[(r, labels[i])] = 1.0;
            }
            let mut g = Graph::new();
            let x = g.constant(Matrix::from_rows(&rows));
            let target = g.constant(target);
            let logits = run_stack(&model.estimator, &mut g, &model.store, x)?;
            let gamma = g.softmax_rows(logits);
            let log_gamma = g.log(gamma);
            let picked = g.mul(log_gamma, target)?;
            let total = g.sum(picked);
            let root = g.scale(total, -1.0 / idx.len() as f64);
            loss += g.value(root).item() * idx.len() as f64 / spans.len() as f64;
            let grads = g.backward(root);
            model.store.accumulate(&g, &grads);
            opt.step(&mut model.store, config.learning_rate);
        }
        debug!("dagmm warm start epoch {epoch}: cross-entropy {loss:.5}");
    }
    Ok(())
}

/// Index of the largest membership, ties to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Hard component per raw span vector.
pub fn assign_types(spans: &[Vec<f64>], model: &DagmmModel) -> Result<Vec<usize>> {
    let refs: Vec<&[f64]> = spans.iter().map(Vec::as_slice).collect();
    let (_, _, gamma) = model.infer(&refs)?;
    Ok(gamma.iter().map(|g| argmax(g)).collect())
}

impl DagmmModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let m: DagmmModel = serde_json::from_reader(BufReader::new(f))?;
        m.config.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests;
