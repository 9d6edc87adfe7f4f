//! Diagonal-covariance Gaussian mixtures: EM training, means-only MAP
//! adaptation, and average log-likelihood-ratio scoring.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::vq::{train_vq, DEFAULT_MAX_ITERS as VQ_MAX_ITERS, DEFAULT_TOL as VQ_TOL};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_VAR_FLOOR_FACTOR: f64 = 0.01;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_RELEVANCE: f64 = 16.0;

/// Rows per E-step work unit. Partial sums are combined in chunk order, so
/// results do not depend on the thread count.
const CHUNK: usize = 512;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    dim: usize,
}

impl Gmm {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let m = weights.len();
        if m == 0 || dim == 0 || means.len() != m * dim || variances.len() != m * dim {
            return Err(Error::InvalidInput(format!(
                "inconsistent GMM shapes: {m} weights, {} means, {} variances, dim {dim}",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidInput(
                "GMM weights must form a probability simplex".into(),
            ));
        }
        if means.iter().any(|x| !x.is_finite())
            || variances.iter().any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::InvalidInput(
                "GMM means must be finite and variances positive".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            variances,
            dim,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, m: usize) -> &[f64] {
        &self.means[m * self.dim..(m + 1) * self.dim]
    }

    pub fn variance(&self, m: usize) -> &[f64] {
        &self.variances[m * self.dim..(m + 1) * self.dim]
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: features.dim(),
            });
        }
        Ok(())
    }

    /// `log p(x)` computed with log-sum-exp over components.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let scorer = Scorer::new(self);
        let mut buf = vec![0.0; self.n_components()];
        scorer.log_density(x, &mut buf)
    }

    pub fn total_log_likelihood(&self, features: &FeatureMatrix) -> Result<f64> {
        self.check_dim(features)?;
        let scorer = Scorer::new(self);
        let partial: Vec<f64> = features
            .data()
            .par_chunks(CHUNK * self.dim)
            .map(|chunk| {
                let mut buf = vec![0.0; self.n_components()];
                chunk
                    .chunks_exact(self.dim)
                    .map(|x| scorer.log_density(x, &mut buf))
                    .sum()
            })
            .collect();
        Ok(partial.iter().sum())
    }

    pub fn mean_log_likelihood(&self, features: &FeatureMatrix) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::InvalidInput("cannot score zero frames".into()));
        }
        Ok(self.total_log_likelihood(features)? / features.n_frames() as f64)
    }

    /// Draws `n` frames from the mixture.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> FeatureMatrix {
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut m = self.n_components() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    m = j;
                    break;
                }
            }
            for d in 0..self.dim {
                let z: f64 = StandardNormal.sample(rng);
                data.push(self.mean(m)[d] + z * self.variance(m)[d].sqrt());
            }
        }
        FeatureMatrix::from_rows("gmm-sample", self.dim, data).expect("finite samples")
    }
}

/// Per-component constants for fast log-density evaluation.
struct Scorer<'a> {
    gmm: &'a Gmm,
    log_consts: Vec<f64>,
    inv_vars: Vec<f64>,
}

impl<'a> Scorer<'a> {
    fn new(gmm: &'a Gmm) -> Self {
        let d = gmm.dim;
        let log_consts = (0..gmm.n_components())
            .map(|m| {
                let log_det: f64 = gmm.variance(m).iter().map(|v| v.ln()).sum();
                gmm.weights[m].ln() - 0.5 * (d as f64 * LN_2PI + log_det)
            })
            .collect();
        Self {
            gmm,
            log_consts,
            inv_vars: gmm.variances.iter().map(|v| 1.0 / v).collect(),
        }
    }

    /// Fills `out` with `log w_m + log N(x | m)` and returns their log-sum-exp.
    fn component_logs(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let d = self.gmm.dim;
        let mut max = f64::NEG_INFINITY;
        for (m, o) in out.iter_mut().enumerate() {
            let mean = &self.gmm.means[m * d..(m + 1) * d];
            let iv = &self.inv_vars[m * d..(m + 1) * d];
            let mut q = 0.0;
            for i in 0..d {
                let diff = x[i] - mean[i];
                q += diff * diff * iv[i];
            }
            *o = self.log_consts[m] - 0.5 * q;
            if *o > max {
                max = *o;
            }
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    fn log_density(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        self.component_logs(x, buf)
    }
}

/// Zeroth, first and centred second-order statistics of one E-step.
#[derive(Debug, Clone)]
struct Stats {
    log_likelihood: f64,
    occupancy: Vec<f64>,
    /// Σ γ (x − μ_old)
    first: Vec<f64>,
    /// Σ γ (x − μ_old)²
    second: Vec<f64>,
}

impl Stats {
    fn zeros(m: usize, d: usize) -> Self {
        Self {
            log_likelihood: 0.0,
            occupancy: vec![0.0; m],
            first: vec![0.0; m * d],
            second: vec![0.0; m * d],
        }
    }

    fn add(&mut self, other: &Stats) {
        self.log_likelihood += other.log_likelihood;
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            *a += b;
        }
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
    }
}

fn e_step(gmm: &Gmm, features: &FeatureMatrix, second_order: bool) -> Stats {
    let (m, d) = (gmm.n_components(), gmm.dim);
    let scorer = Scorer::new(gmm);
    let partial: Vec<Stats> = features
        .data()
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut s = Stats::zeros(m, d);
            let mut logs = vec![0.0; m];
            for x in chunk.chunks_exact(d) {
                let lse = scorer.component_logs(x, &mut logs);
                s.log_likelihood += lse;
                for (j, l) in logs.iter().enumerate() {
                    let g = (l - lse).exp();
                    if g == 0.0 {
                        continue;
                    }
                    s.occupancy[j] += g;
                    let mean = gmm.mean(j);
                    for i in 0..d {
                        let diff = x[i] - mean[i];
                        s.first[j * d + i] += g * diff;
                        if second_order {
                            s.second[j * d + i] += g * diff * diff;
                        }
                    }
                }
            }
            s
        })
        .collect();
    let mut total = Stats::zeros(m, d);
    for p in &partial {
        total.add(p);
    }
    total
}

/// Maximizes the expected log-likelihood subject to per-dimension variance
/// floors. Components with no occupancy keep their parameters at weight 0.
fn m_step(gmm: &Gmm, stats: &Stats, n: f64, floors: &[f64]) -> Gmm {
    let d = gmm.dim;
    let mut out = gmm.clone();
    for j in 0..gmm.n_components() {
        let occ = stats.occupancy[j];
        out.weights[j] = occ / n;
        if occ <= 0.0 {
            continue;
        }
        for (i, &floor) in floors.iter().enumerate() {
            let shift = stats.first[j * d + i] / occ;
            out.means[j * d + i] = gmm.means[j * d + i] + shift;
            let var = stats.second[j * d + i] / occ - shift * shift;
            out.variances[j * d + i] = var.max(floor);
        }
    }
    let total: f64 = out.weights.iter().sum();
    out.weights.iter_mut().for_each(|w| *w /= total);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmTrainConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub var_floor_factor: f64,
    pub tol: f64,
}

impl GmmTrainConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        Self {
            components,
            seed,
            max_iters: DEFAULT_MAX_ITERS,
            var_floor_factor: DEFAULT_VAR_FLOOR_FACTOR,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub gmm: Gmm,
    /// Total log-likelihood of the training data before each M-step.
    pub log_likelihood: Vec<f64>,
}

/// Population variance of every column.
pub fn column_variances(features: &FeatureMatrix) -> Vec<f64> {
    let n = features.n_frames() as f64;
    let d = features.dim();
    let mut mean = vec![0.0; d];
    for r in features.rows() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in features.rows() {
        for i in 0..d {
            var[i] += (r[i] - mean[i]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    var
}

/// k-means initialized diagonal-covariance EM.
///
/// Variances are floored per dimension at `var_floor_factor` times the
/// global variance of that dimension. Iteration stops when the relative
/// log-likelihood gain drops below `tol` or after `max_iters` M-steps.
pub fn train_gmm(features: &FeatureMatrix, cfg: &GmmTrainConfig) -> Result<GmmFit> {
    let n = features.n_frames();
    let m = cfg.components;
    if m == 0 {
        return Err(Error::InvalidInput(
            "a GMM needs at least one component".into(),
        ));
    }
    if n < m {
        return Err(Error::InsufficientData { have: n, need: m });
    }
    let global = column_variances(features);
    if let Some(i) = global.iter().position(|v| *v <= 0.0) {
        return Err(Error::Degenerate(format!(
            "feature dimension {i} has zero variance"
        )));
    }
    let floors: Vec<f64> = global.iter().map(|v| v * cfg.var_floor_factor).collect();
    let d = features.dim();

    let codebook = train_vq(features, m, cfg.seed, VQ_MAX_ITERS, VQ_TOL)?;
    let mut counts = vec![0usize; m];
    let mut sq = vec![0.0; m * d];
    for x in features.rows() {
        let (j, _) = codebook.nearest(x);
        counts[j] += 1;
        for i in 0..d {
            sq[j * d + i] += (x[i] - codebook.centroid(j)[i]).powi(2);
        }
    }
    let variances = (0..m * d)
        .map(|idx| {
            let (j, i) = (idx / d, idx % d);
            if counts[j] > 1 {
                (sq[idx] / counts[j] as f64).max(floors[i])
            } else {
                global[i]
            }
        })
        .collect();
    let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut gmm = Gmm::new(weights, codebook.centroids().to_vec(), variances, d)?;

    let mut history: Vec<f64> = Vec::new();
    for _ in 0..cfg.max_iters {
        let stats = e_step(&gmm, features, true);
        let ll = stats.log_likelihood;
        if let Some(&prev) = history.last() {
            if (ll - prev) < cfg.tol * prev.abs() {
                history.push(ll);
                break;
            }
        }
        history.push(ll);
        gmm = m_step(&gmm, &stats, n as f64, &floors);
    }
    Ok(GmmFit {
        gmm,
        log_likelihood: history,
    })
}

/// [`train_gmm`] with positional parameters.
pub fn train_gmm_em(
    features: &FeatureMatrix,
    components: usize,
    seed: u64,
    max_iters: usize,
    var_floor_factor: f64,
) -> Result<GmmFit> {
    train_gmm(
        features,
        &GmmTrainConfig {
            components,
            seed,
            max_iters,
            var_floor_factor,
            tol: DEFAULT_TOL,
        },
    )
}

/// Means-only MAP adaptation with relevance factor `relevance`:
/// `μ' = α·E[x] + (1 − α)·μ`, `α = n / (n + r)`. Weights and variances are
/// the UBM's.
pub fn map_adapt_means(ubm: &Gmm, features: &FeatureMatrix, relevance: f64) -> Result<Gmm> {
    ubm.check_dim(features)?;
    if !(relevance > 0.0 && relevance.is_finite()) {
        return Err(Error::Parameter(format!(
            "relevance factor must be positive, got {relevance}"
        )));
    }
    let stats = e_step(ubm, features, false);
    let d = ubm.dim;
    let mut adapted = ubm.clone();
    for j in 0..ubm.n_components() {
        let n = stats.occupancy[j];
        if n <= 0.0 {
            continue;
        }
        let alpha = n / (n + relevance);
        for i in 0..d {
            let mu = ubm.means[j * d + i];
            let expected = mu + stats.first[j * d + i] / n;
            adapted.means[j * d + i] = alpha * expected + (1.0 - alpha) * mu;
        }
    }
    Ok(adapted)
}

/// Mean per-frame `log p(x | speaker) − log p(x | ubm)`.
pub fn gmm_llr_score(speaker: &Gmm, ubm: &Gmm, features: &FeatureMatrix) -> Result<f64> {
    if speaker.n_components() != ubm.n_components() || speaker.dim != ubm.dim {
        return Err(Error::DimensionMismatch {
            expected: ubm.n_components() * ubm.dim,
            got: speaker.n_components() * speaker.dim,
        });
    }
    ubm.check_dim(features)?;
    if features.is_empty() {
        return Err(Error::InvalidInput("cannot score zero frames".into()));
    }
    let (s, u) = (Scorer::new(speaker), Scorer::new(ubm));
    let d = ubm.dim;
    let partial: Vec<f64> = features
        .data()
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let mut buf = vec![0.0; ubm.n_components()];
            chunk
                .chunks_exact(d)
                .map(|x| s.log_density(x, &mut buf) - u.log_density(x, &mut buf))
                .sum()
        })
        .collect();
    Ok(partial.iter().sum::<f64>() / features.n_frames() as f64)
}
