//! Exact Gaussian-process regression with a squared-exponential ARD kernel.
//!
//! ```text
//! k(a, b) = σ_f² · exp(-Σ_i (a_i - b_i)² / (2 l_i²))
//! ```
//!
//! Observations carry i.i.d. Gaussian noise `σ_n²` and the prior mean is
//! zero. Hyperparameters live in log-space; [`optimize_hyperparams`] maximizes
//! the log marginal likelihood inside the box `[-bound, bound]` with a
//! projected gradient ascent.
//!
//! A [`GpMotionPattern`] pairs two independent regressors that map the same
//! transition features to the x and y components of the (unit) walking
//! direction.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jitter added to the diagonal when the plain factorization fails.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
/// Floor for posterior latent variances.
pub const MIN_VARIANCE: f64 = 1e-15;
/// Default half-width of the log-space hyperparameter box.
pub const DEFAULT_LOG_BOUND: f64 = 3.0;

/// Row-major matrix of feature vectors, one row per observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRows {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureRows {
    pub fn new(dim: usize) -> Self {
        FeatureRows {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::invalid("no feature rows"))?;
        let mut out = FeatureRows::new(dim);
        for r in rows {
            out.push(r.as_ref())?;
        }
        Ok(out)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::invalid(format!(
                "feature row has {} entries, expected {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn select(&self, idx: &[usize]) -> FeatureRows {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureRows {
            dim: self.dim,
            data,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    log_length_scales: Vec<f64>,
    log_signal_std: f64,
    log_noise_std: f64,
}

impl Hyperparams {
    pub fn new(length_scales: &[f64], signal_std: f64, noise_std: f64) -> Result<Self> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if length_scales.is_empty() || !length_scales.iter().all(|&l| positive(l)) {
            return Err(Error::invalid(format!(
                "length scales must be positive, got {length_scales:?}"
            )));
        }
        if !positive(signal_std) || !positive(noise_std) {
            return Err(Error::invalid(format!(
                "signal/noise std must be positive, got {signal_std}, {noise_std}"
            )));
        }
        Ok(Hyperparams {
            log_length_scales: length_scales.iter().map(|l| l.ln()).collect(),
            log_signal_std: signal_std.ln(),
            log_noise_std: noise_std.ln(),
        })
    }

    /// From the packed log vector `[ln l_1, ..., ln l_m, ln σ_f, ln σ_n]`.
    pub fn from_log_vec(theta: &[f64]) -> Result<Self> {
        if theta.len() < 3 || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("bad log-hyperparameter vector {theta:?}")));
        }
        let m = theta.len() - 2;
        Ok(Hyperparams {
            log_length_scales: theta[..m].to_vec(),
            log_signal_std: theta[m],
            log_noise_std: theta[m + 1],
        })
    }

    pub fn to_log_vec(&self) -> Vec<f64> {
        let mut v = self.log_length_scales.clone();
        v.push(self.log_signal_std);
        v.push(self.log_noise_std);
        v
    }

    pub fn dim(&self) -> usize {
        self.log_length_scales.len()
    }

    pub fn length_scales(&self) -> Vec<f64> {
        self.log_length_scales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_std(&self) -> f64 {
        self.log_signal_std.exp()
    }

    pub fn noise_std(&self) -> f64 {
        self.log_noise_std.exp()
    }

    pub fn signal_var(&self) -> f64 {
        (2.0 * self.log_signal_std).exp()
    }

    pub fn noise_var(&self) -> f64 {
        (2.0 * self.log_noise_std).exp()
    }

    fn inv_sq_lengths(&self) -> Vec<f64> {
        self.log_length_scales
            .iter()
            .map(|l| (-2.0 * l).exp())
            .collect()
    }

    fn clamped(&self, bound: f64) -> Hyperparams {
        let theta: Vec<f64> = self
            .to_log_vec()
            .into_iter()
            .map(|v| v.clamp(-bound, bound))
            .collect();
        Hyperparams::from_log_vec(&theta).expect("clamping keeps values finite")
    }
}

#[inline]
fn scaled_sq_dist(a: &[f64], b: &[f64], inv_l2: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_l2)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum()
}

/// The SE-ARD covariance between two feature vectors.
pub fn kernel(a: &[f64], b: &[f64], h: &Hyperparams) -> Result<f64> {
    if a.len() != h.dim() || b.len() != h.dim() {
        return Err(Error::invalid(format!(
            "kernel inputs have dims {} and {}, hyperparameters expect {}",
            a.len(),
            b.len(),
            h.dim()
        )));
    }
    Ok(h.signal_var() * (-0.5 * scaled_sq_dist(a, b, &h.inv_sq_lengths())).exp())
}

/// Noise-free gram matrix of the kernel over `inputs`.
pub fn gram_matrix(inputs: &FeatureRows, h: &Hyperparams) -> DMatrix<f64> {
    let n = inputs.len();
    let inv_l2 = h.inv_sq_lengths();
    let sf2 = h.signal_var();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2;
        let xi = inputs.row(i);
        for j in 0..i {
            let v = sf2 * (-0.5 * scaled_sq_dist(xi, inputs.row(j), &inv_l2)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Posterior at one test input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpPrediction {
    pub mean: f64,
    /// Variance of a new noisy observation, `latent_variance + σ_n²`.
    pub variance: f64,
    /// Variance of the latent function value.
    pub latent_variance: f64,
}

/// Serializable content of a fitted regressor; the factorization is rebuilt
/// on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpData {
    pub inputs: FeatureRows,
    pub targets: Vec<f64>,
    pub hyperparams: Hyperparams,
}

#[derive(Debug)]
pub struct GpRegressor {
    inputs: FeatureRows,
    targets: DVector<f64>,
    hyper: Hyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    clamp_events: AtomicU64,
}

impl Clone for GpRegressor {
    fn clone(&self) -> Self {
        GpRegressor {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            hyper: self.hyper.clone(),
            chol: self.chol.clone(),
            alpha: self.alpha.clone(),
            jitter: self.jitter,
            clamp_events: AtomicU64::new(self.clamp_events.load(Ordering::Relaxed)),
        }
    }
}

impl Serialize for GpRegressor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_data().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GpRegressor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = GpData::deserialize(d)?;
        fit(data.inputs, data.targets, data.hyperparams).map_err(serde::de::Error::custom)
    }
}

/// Conditions a zero-mean GP on `(inputs, targets)`.
pub fn fit(inputs: FeatureRows, targets: Vec<f64>, h: Hyperparams) -> Result<GpRegressor> {
    let n = inputs.len();
    if n == 0 {
        return Err(Error::invalid("GP needs at least one training pair"));
    }
    if targets.len() != n {
        return Err(Error::invalid(format!(
            "{} inputs but {} targets",
            n,
            targets.len()
        )));
    }
    if inputs.dim() != h.dim() {
        return Err(Error::invalid(format!(
            "inputs have {} features, hyperparameters {}",
            inputs.dim(),
            h.dim()
        )));
    }
    if inputs.data.iter().chain(&targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("GP training data must be finite"));
    }

    let mut k = gram_matrix(&inputs, &h);
    for i in 0..n {
        k[(i, i)] += h.noise_var();
    }
    let mut factored = None;
    for &jitter in &JITTER_LADDER {
        let mut kj = k.clone();
        if jitter > 0.0 {
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(kj) {
            factored = Some((chol, jitter));
            break;
        }
    }
    let (chol, jitter) = factored.ok_or_else(|| {
        let min_diag = (0..n).map(|i| k[(i, i)]).fold(f64::INFINITY, f64::min);
        Error::Numerical(format!(
            "Cholesky failed for {n} points ({} features) up to jitter {:e}; \
             min diagonal {min_diag:e}, hyperparameters {:?}",
            inputs.dim(),
            JITTER_LADDER[JITTER_LADDER.len() - 1],
            h
        ))
    })?;
    let targets = DVector::from_vec(targets);
    let alpha = chol.solve(&targets);
    Ok(GpRegressor {
        inputs,
        targets,
        hyper: h,
        chol,
        alpha,
        jitter,
        clamp_events: AtomicU64::new(0),
    })
}

impl GpRegressor {
    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn inputs(&self) -> &FeatureRows {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        self.targets.as_slice()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Diagonal jitter that was needed to factorize the gram matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of predictions whose latent variance had to be clamped.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    pub fn to_data(&self) -> GpData {
        GpData {
            inputs: self.inputs.clone(),
            targets: self.targets.as_slice().to_vec(),
            hyperparams: self.hyper.clone(),
        }
    }

    fn cross_covariance(&self, x: &[f64]) -> DVector<f64> {
        let inv_l2 = self.hyper.inv_sq_lengths();
        let sf2 = self.hyper.signal_var();
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .rows()
                .map(|r| sf2 * (-0.5 * scaled_sq_dist(r, x, &inv_l2)).exp()),
        )
    }

    pub fn predict(&self, x: &[f64]) -> Result<GpPrediction> {
        if x.len() != self.inputs.dim() {
            return Err(Error::invalid(format!(
                "query has {} features, model expects {}",
                x.len(),
                self.inputs.dim()
            )));
        }
        let ks = self.cross_covariance(x);
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("Cholesky factor has a positive diagonal");
        let prior = self.hyper.signal_var();
        let mut latent = prior - v.norm_squared();
        if latent < MIN_VARIANCE {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            latent = MIN_VARIANCE;
        }
        let latent = latent.min(prior);
        Ok(GpPrediction {
            mean,
            variance: latent + self.hyper.noise_var(),
            latent_variance: latent,
        })
    }

    /// Log marginal likelihood of the training targets and its gradient with
    /// respect to `[ln l_1, ..., ln l_m, ln σ_f, ln σ_n]`.
    pub fn log_marginal_likelihood(&self) -> (f64, Vec<f64>) {
        let n = self.inputs.len();
        let m = self.inputs.dim();
        let l = self.chol.l_dirty();
        let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        let value = -0.5 * self.targets.dot(&self.alpha)
            - log_det_half
            - 0.5 * n as f64 * (2.0 * PI).ln();

        // dL/dθ = ½ tr((ααᵀ - K⁻¹) ∂K/∂θ)
        let k_inv = self.chol.inverse();
        let inv_l2 = self.hyper.inv_sq_lengths();
        let sf2 = self.hyper.signal_var();
        let mut g_len = vec![0.0; m];
        let mut g_sig = 0.0;
        let mut trace_w = 0.0;
        for i in 0..n {
            let xi = self.inputs.row(i);
            let wii = self.alpha[i] * self.alpha[i] - k_inv[(i, i)];
            trace_w += wii;
            g_sig += wii * sf2;
            for j in 0..i {
                let xj = self.inputs.row(j);
                let kf = sf2 * (-0.5 * scaled_sq_dist(xi, xj, &inv_l2)).exp();
                // Off-diagonal terms appear twice.
                let w = 2.0 * (self.alpha[i] * self.alpha[j] - k_inv[(i, j)]);
                g_sig += w * kf;
                for d in 0..m {
                    let diff = xi[d] - xj[d];
                    g_len[d] += w * kf * diff * diff * inv_l2[d];
                }
            }
        }
        let mut grad: Vec<f64> = g_len.into_iter().map(|g| 0.5 * g).collect();
        grad.push(g_sig);
        grad.push(self.hyper.noise_var() * trace_w);
        (value, grad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub log_bound: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            restarts: 2,
            seed: 0,
            max_iters: 60,
            log_bound: DEFAULT_LOG_BOUND,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeOutcome {
    pub hyperparams: Hyperparams,
    pub log_marginal_likelihood: f64,
    /// Every start failed numerically and the (clamped) initial values were
    /// returned unchanged.
    pub fell_back: bool,
}

fn evaluate(inputs: &FeatureRows, targets: &[f64], theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let h = Hyperparams::from_log_vec(theta).ok()?;
    let gp = fit(inputs.clone(), targets.to_vec(), h).ok()?;
    let (v, g) = gp.log_marginal_likelihood();
    (v.is_finite() && g.iter().all(|x| x.is_finite())).then_some((v, g))
}

/// Projected gradient ascent with Barzilai-Borwein steps and Armijo
/// backtracking, confined to `[-bound, bound]` per coordinate.
fn ascend(
    inputs: &FeatureRows,
    targets: &[f64],
    start: Vec<f64>,
    max_iters: usize,
    bound: f64,
) -> Option<(Vec<f64>, f64)> {
    let clip = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x.clamp(-bound, bound)).collect() };
    let mut theta = clip(&start);
    let (mut f, mut g) = evaluate(inputs, targets, &theta)?;
    let mut step = 0.1 / g.iter().fold(1e-12f64, |a, x| a.max(x.abs())).max(1.0);

    for _ in 0..max_iters {
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = clip(
                &theta
                    .iter()
                    .zip(&g)
                    .map(|(t, gi)| t + step * gi)
                    .collect::<Vec<_>>(),
            );
            let moved: f64 = cand
                .iter()
                .zip(&theta)
                .fold(0.0f64, |a, (c, t)| a.max((c - t).abs()));
            if moved < 1e-10 {
                break;
            }
            let gain: f64 = cand.iter().zip(&theta).zip(&g).map(|((c, t), gi)| (c - t) * gi).sum();
            match evaluate(inputs, targets, &cand) {
                Some((fc, gc)) if fc >= f + 1e-4 * gain => {
                    accepted = Some((cand, fc, gc));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy < 0.0 { ss / -sy } else { step * 2.0 };
        step = step.clamp(1e-6, 10.0);

        let improvement = fc - f;
        theta = cand;
        f = fc;
        g = gc;
        if improvement < 1e-9 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((theta, f))
}

/// Maximizes the log marginal likelihood from `init` and from `restarts`
/// seeded perturbations of it. The result is never worse than the clamped
/// initial point.
pub fn optimize_hyperparams(
    inputs: &FeatureRows,
    targets: &[f64],
    init: &Hyperparams,
    opts: &OptimizeOptions,
) -> Result<OptimizeOutcome> {
    if inputs.len() < 2 || targets.len() != inputs.len() {
        return Err(Error::invalid(format!(
            "hyperparameter optimization needs >= 2 matching pairs, got {} inputs / {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if init.dim() != inputs.dim() {
        return Err(Error::invalid("initial hyperparameters do not match feature dim"));
    }
    let init = init.clamped(opts.log_bound);
    let theta0 = init.to_log_vec();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![theta0.clone()];
    for _ in 0..opts.restarts {
        starts.push(
            theta0
                .iter()
                .map(|t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t + z
                })
                .collect(),
        );
    }

    let mut best: Option<(Vec<f64>, f64)> =
        evaluate(inputs, targets, &theta0).map(|(f, _)| (theta0.clone(), f));
    for start in starts {
        if let Some((theta, f)) = ascend(inputs, targets, start, opts.max_iters, opts.log_bound) {
            if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                best = Some((theta, f));
            }
        }
    }
    Ok(match best {
        Some((theta, f)) => OptimizeOutcome {
            hyperparams: Hyperparams::from_log_vec(&theta)?,
            log_marginal_likelihood: f,
            fell_back: false,
        },
        None => OptimizeOutcome {
            hyperparams: init,
            log_marginal_likelihood: f64::NEG_INFINITY,
            fell_back: true,
        },
    })
}

/// Uniform seeded subsample of at most `max` indices, in increasing order.
pub fn subsample_indices(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, max).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// Initial length scale per feature; the last entry is reused when the
    /// feature set is longer.
    pub init_length_scales: Vec<f64>,
    pub init_signal_std: f64,
    pub noise_std: f64,
    pub optimize: bool,
    pub restarts: usize,
    pub max_opt_iters: usize,
    pub log_bound: f64,
    /// Upper bound on the training points of one regressor.
    pub max_points: usize,
    /// Upper bound on the points used while optimizing hyperparameters.
    pub opt_max_points: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            init_length_scales: vec![2.0, 2.0, 0.5],
            init_signal_std: 1.0,
            noise_std: 0.1,
            optimize: true,
            restarts: 1,
            max_opt_iters: 40,
            log_bound: DEFAULT_LOG_BOUND,
            max_points: 2000,
            opt_max_points: 250,
        }
    }
}

impl GpConfig {
    pub fn initial_hyperparams(&self, dim: usize) -> Result<Hyperparams> {
        let fallback = *self.init_length_scales.last().unwrap_or(&1.0);
        let ls: Vec<f64> = (0..dim)
            .map(|d| *self.init_length_scales.get(d).unwrap_or(&fallback))
            .collect();
        Hyperparams::new(&ls, self.init_signal_std, self.noise_std)
    }
}

/// Two independent GPs over shared inputs: features → unit x / y velocity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpMotionPattern {
    pub gp_x: GpRegressor,
    pub gp_y: GpRegressor,
}

/// One `(features, velocity)` observation.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub features: Vec<f64>,
    pub velocity: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowPrediction {
    pub x: GpPrediction,
    pub y: GpPrediction,
}

impl GpMotionPattern {
    pub fn dim(&self) -> usize {
        self.gp_x.inputs().dim()
    }

    pub fn predict(&self, features: &[f64]) -> Result<FlowPrediction> {
        Ok(FlowPrediction {
            x: self.gp_x.predict(features)?,
            y: self.gp_y.predict(features)?,
        })
    }

    /// Fits both regressors on `samples`, optionally optimizing each one's
    /// hyperparameters.
    pub fn train(samples: &[FlowSample], cfg: &GpConfig, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("motion pattern needs at least one sample"));
        }
        let keep = subsample_indices(samples.len(), cfg.max_points.max(1), seed);
        let rows: Vec<&[f64]> = keep.iter().map(|&i| samples[i].features.as_slice()).collect();
        let inputs = FeatureRows::from_rows(&rows)?;
        let tx: Vec<f64> = keep.iter().map(|&i| samples[i].velocity.0).collect();
        let ty: Vec<f64> = keep.iter().map(|&i| samples[i].velocity.1).collect();
        let init = cfg.initial_hyperparams(inputs.dim())?;

        let tune = |targets: &[f64], salt: u64| -> Result<Hyperparams> {
            if !cfg.optimize || inputs.len() < 2 {
                return Ok(init.clone());
            }
            let sub = subsample_indices(inputs.len(), cfg.opt_max_points.max(2), seed ^ salt);
            let sub_inputs = inputs.select(&sub);
            let sub_targets: Vec<f64> = sub.iter().map(|&i| targets[i]).collect();
            let opts = OptimizeOptions {
                restarts: cfg.restarts,
                seed: seed.wrapping_add(salt),
                max_iters: cfg.max_opt_iters,
                log_bound: cfg.log_bound,
            };
            Ok(optimize_hyperparams(&sub_inputs, &sub_targets, &init, &opts)?.hyperparams)
        };
        let hx = tune(&tx, 0x5851_f42d)?;
        let hy = tune(&ty, 0x14057b7e)?;
        Ok(GpMotionPattern {
            gp_x: fit(inputs.clone(), tx, hx)?,
            gp_y: fit(inputs, ty, hy)?,
        })
    }
}

fn normal_log_pdf(v: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (v - mean) * (v - mean) / (2.0 * var)
}

/// Log-likelihood of observed `(features, velocity)` pairs under a motion
/// pattern: the sum over points of the x and y Gaussian log densities.
pub fn trajectory_log_likelihood(observed: &[FlowSample], pattern: &GpMotionPattern) -> Result<f64> {
    if observed.is_empty() {
        return Err(Error::invalid("observed trajectory is empty"));
    }
    observed.iter().try_fold(0.0, |acc, s| {
        let p = pattern.predict(&s.features)?;
        Ok(acc
            + normal_log_pdf(s.velocity.0, p.x.mean, p.x.variance)
            + normal_log_pdf(s.velocity.1, p.y.mean, p.y.variance))
    })
}
