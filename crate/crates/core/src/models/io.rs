//! JSON model files. Matrices are stored as base64 of little-endian f64
//! values in row-major order, next to explicit shape fields.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::gmm::Gmm;
use super::vq::{VqCodebook, VqTrainMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl Matrix {
    pub fn encode(rows: usize, cols: usize, values: &[f64]) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            rows,
            cols,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::InvalidInput(format!("bad base64 matrix: {e}")))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::InvalidInput(format!(
                "matrix of shape {}×{} has {} bytes",
                self.rows,
                self.cols,
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmRecord {
    pub components: usize,
    pub weights: Matrix,
    pub means: Matrix,
    pub variances: Matrix,
}

impl GmmRecord {
    pub fn from_gmm(g: &Gmm) -> Self {
        let (m, d) = (g.n_components(), g.dim());
        Self {
            components: m,
            weights: Matrix::encode(1, m, g.weights()),
            means: Matrix::encode(m, d, g.means()),
            variances: Matrix::encode(m, d, g.variances()),
        }
    }

    pub fn to_gmm(&self, dim: usize) -> Result<Gmm> {
        let shape_ok = self.weights.rows == 1
            && self.weights.cols == self.components
            && [&self.means, &self.variances]
                .iter()
                .all(|m| m.rows == self.components && m.cols == dim);
        if !shape_ok {
            return Err(Error::InvalidInput(
                "GMM matrices disagree with components/dim".into(),
            ));
        }
        Gmm::new(
            self.weights.decode()?,
            self.means.decode()?,
            self.variances.decode()?,
            dim,
        )
    }
}

/// Envelope of every model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    Vq {
        id: String,
        dim: usize,
        k: usize,
        centroids: Matrix,
        iterations: usize,
        distortion: f64,
    },
    /// A plain mixture, typically the UBM.
    Gmm {
        id: String,
        dim: usize,
        #[serde(flatten)]
        gmm: GmmRecord,
    },
    /// A MAP-adapted speaker mixture. `ubm_ref` names the UBM file.
    GmmMap {
        id: String,
        dim: usize,
        ubm_ref: String,
        #[serde(flatten)]
        gmm: GmmRecord,
    },
}

impl ModelFile {
    pub fn vq(id: impl Into<String>, cb: &VqCodebook) -> Self {
        ModelFile::Vq {
            id: id.into(),
            dim: cb.dim(),
            k: cb.k(),
            centroids: Matrix::encode(cb.k(), cb.dim(), cb.centroids()),
            iterations: cb.meta().iterations,
            distortion: cb.meta().distortion,
        }
    }

    pub fn gmm(id: impl Into<String>, g: &Gmm) -> Self {
        ModelFile::Gmm {
            id: id.into(),
            dim: g.dim(),
            gmm: GmmRecord::from_gmm(g),
        }
    }

    pub fn gmm_map(id: impl Into<String>, g: &Gmm, ubm_ref: impl Into<String>) -> Self {
        ModelFile::GmmMap {
            id: id.into(),
            dim: g.dim(),
            ubm_ref: ubm_ref.into(),
            gmm: GmmRecord::from_gmm(g),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            ModelFile::Vq { id, .. } | ModelFile::Gmm { id, .. } | ModelFile::GmmMap { id, .. } => {
                id
            }
        }
    }

    pub fn to_vq(&self) -> Result<VqCodebook> {
        match self {
            ModelFile::Vq {
                dim,
                k,
                centroids,
                iterations,
                distortion,
                ..
            } => {
                if centroids.rows != *k || centroids.cols != *dim {
                    return Err(Error::InvalidInput(
                        "codebook shape disagrees with k/dim".into(),
                    ));
                }
                VqCodebook::from_centroids(
                    centroids.decode()?,
                    *dim,
                    VqTrainMeta {
                        iterations: *iterations,
                        distortion: *distortion,
                        history: Vec::new(),
                    },
                )
            }
            _ => Err(Error::InvalidInput(format!(
                "model {} is not a VQ codebook",
                self.id()
            ))),
        }
    }

    pub fn to_gmm(&self) -> Result<Gmm> {
        match self {
            ModelFile::Gmm { dim, gmm, .. } | ModelFile::GmmMap { dim, gmm, .. } => {
                gmm.to_gmm(*dim)
            }
            _ => Err(Error::InvalidInput(format!(
                "model {} is not a GMM",
                self.id()
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("model file", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}
