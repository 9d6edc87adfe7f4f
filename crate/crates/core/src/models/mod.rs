//! Speaker model back-ends and their shared scoring interface. Scores are
//! oriented so that higher means "more likely the claimed speaker".

pub mod gmm;
pub mod io;
pub mod vq;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gmm::{
    gmm_llr_score, map_adapt_means, train_gmm, train_gmm_em, Gmm, GmmFit, GmmTrainConfig,
};
pub use io::ModelFile;
pub use vq::{train_vq, vq_score, VqCodebook, VqTrainMeta};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Vq,
    #[default]
    GmmUbm,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Vq => "vq",
            Backend::GmmUbm => "gmm_ubm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelPayload {
    Vq(VqCodebook),
    GmmMap { gmm: Gmm, ubm: Arc<Gmm> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub id: String,
    pub payload: ModelPayload,
}

impl SpeakerModel {
    pub fn vq(id: impl Into<String>, codebook: VqCodebook) -> Self {
        Self {
            id: id.into(),
            payload: ModelPayload::Vq(codebook),
        }
    }

    pub fn gmm_map(id: impl Into<String>, gmm: Gmm, ubm: Arc<Gmm>) -> Result<Self> {
        if gmm.n_components() != ubm.n_components() || gmm.dim() != ubm.dim() {
            return Err(Error::DimensionMismatch {
                expected: ubm.n_components() * ubm.dim(),
                got: gmm.n_components() * gmm.dim(),
            });
        }
        Ok(Self {
            id: id.into(),
            payload: ModelPayload::GmmMap { gmm, ubm },
        })
    }

    pub fn kind(&self) -> &'static str {
        match self.payload {
            ModelPayload::Vq(_) => "vq",
            ModelPayload::GmmMap { .. } => "gmm_map",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.payload {
            ModelPayload::Vq(cb) => cb.dim(),
            ModelPayload::GmmMap { gmm, .. } => gmm.dim(),
        }
    }

    pub fn score(&self, features: &FeatureMatrix) -> Result<f64> {
        match &self.payload {
            ModelPayload::Vq(cb) => vq_score(cb, features),
            ModelPayload::GmmMap { gmm, ubm } => gmm_llr_score(gmm, ubm, features),
        }
    }

    /// File envelope; `ubm_ref` is recorded for MAP-adapted models.
    pub fn to_file(&self, ubm_ref: &str) -> ModelFile {
        match &self.payload {
            ModelPayload::Vq(cb) => ModelFile::vq(&self.id, cb),
            ModelPayload::GmmMap { gmm, .. } => ModelFile::gmm_map(&self.id, gmm, ubm_ref),
        }
    }

    /// Rebuilds a model from its file. MAP-adapted models need the UBM they
    /// were adapted from.
    pub fn from_file(file: &ModelFile, ubm: Option<Arc<Gmm>>) -> Result<Self> {
        match file {
            ModelFile::Vq { id, .. } => Ok(Self::vq(id.clone(), file.to_vq()?)),
            ModelFile::GmmMap { id, ubm_ref, .. } => {
                let ubm = ubm.ok_or_else(|| {
                    Error::InvalidInput(format!("model {id} needs its UBM {ubm_ref}"))
                })?;
                Self::gmm_map(id.clone(), file.to_gmm()?, ubm)
            }
            ModelFile::Gmm { id, .. } => Err(Error::InvalidInput(format!(
                "{id} is a plain GMM, not an enrolled speaker model"
            ))),
        }
    }
}
