//! Vector-quantization codebooks: Lloyd's algorithm with k-means++ seeding.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::seed;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
const ASSIGN_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct VqTrainMeta {
    pub iterations: usize,
    /// Mean squared distance to the nearest centroid after the last
    /// assignment.
    pub distortion: f64,
    /// Distortion after each assignment step.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqCodebook {
    centroids: Vec<f64>,
    k: usize,
    dim: usize,
    meta: VqTrainMeta,
}

impl VqCodebook {
    pub fn from_centroids(centroids: Vec<f64>, dim: usize, meta: VqTrainMeta) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "{} values do not form a codebook of dimension {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(
                "codebook has non-finite entries".into(),
            ));
        }
        Ok(Self {
            k: centroids.len() / dim,
            centroids,
            dim,
            meta,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn meta(&self) -> &VqTrainMeta {
        &self.meta
    }

    /// Index and squared distance of the nearest centroid.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, self.dim, x)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    centroids
        .chunks_exact(dim)
        .map(|c| sq_dist(c, x))
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (j, d)| if d < best.1 { (j, d) } else { best },
        )
}

fn kmeans_pp(data: &FeatureMatrix, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = data.n_frames();
    let dim = data.dim();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = data.row(first).to_vec();
    let mut d2: Vec<f64> = data.rows().map(|r| sq_dist(r, data.row(first))).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = data.row(pick).to_vec();
        for (d, r) in d2.iter_mut().zip(data.rows()) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn assign(data: &FeatureMatrix, centroids: &[f64]) -> Vec<(usize, f64)> {
    let dim = data.dim();
    data.data()
        .par_chunks(ASSIGN_CHUNK * dim)
        .flat_map_iter(|chunk| {
            chunk
                .chunks_exact(dim)
                .map(|x| nearest(centroids, dim, x))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Trains a `k`-centroid codebook. Stops when the relative distortion
/// improvement falls below `tol`, the distortion reaches 0, or after
/// `max_iters` assignment steps. Clusters left empty by an update are
/// re-seeded at the point farthest from its centroid.
pub fn train_vq(
    features: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<VqCodebook> {
    let n = features.n_frames();
    if k == 0 {
        return Err(Error::InvalidInput(
            "codebook size must be at least 1".into(),
        ));
    }
    if n < k {
        return Err(Error::InsufficientData { have: n, need: k });
    }
    let dim = features.dim();
    let mut rng = seed::rng(seed);
    let mut centroids = kmeans_pp(features, k, &mut rng);
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut labels = assign(features, &centroids);
        let distortion = labels.iter().map(|l| l.1).sum::<f64>() / n as f64;
        let converged = match history.last() {
            Some(&prev) => distortion == 0.0 || prev - distortion < tol * prev,
            None => distortion == 0.0,
        };
        history.push(distortion);
        if converged || history.len() == max_iters.max(1) {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &(j, _)) in features.rows().zip(&labels) {
            counts[j] += 1;
            for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                for (dst, s) in centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *dst = s / c;
                }
            } else {
                let far = labels
                    .iter()
                    .enumerate()
                    .fold(
                        (0, -1.0),
                        |best, (i, l)| if l.1 > best.1 { (i, l.1) } else { best },
                    )
                    .0;
                centroids[j * dim..(j + 1) * dim].copy_from_slice(features.row(far));
                labels[far] = (j, 0.0);
            }
        }
    }
    let distortion = *history.last().expect("at least one iteration");
    VqCodebook::from_centroids(
        centroids,
        dim,
        VqTrainMeta {
            iterations: history.len(),
            distortion,
            history,
        },
    )
}

/// Negative mean squared quantization error; higher is a better match.
pub fn vq_score(model: &VqCodebook, features: &FeatureMatrix) -> Result<f64> {
    if features.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: features.dim(),
        });
    }
    if features.is_empty() {
        return Err(Error::InvalidInput("cannot score zero frames".into()));
    }
    let total: f64 = features.rows().map(|x| model.nearest(x).1).sum();
    Ok(-total / features.n_frames() as f64)
}
