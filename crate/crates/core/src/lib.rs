//! Noise-invariant frame selection for speaker verification.
//!
//! Frames whose MFCCs move least when synthetic noise is mixed into the
//! utterance are kept; the rest are dropped before model training and
//! scoring. The crate covers the whole experiment: audio I/O, feature
//! extraction, noise mixing, selection, VQ and GMM-UBM back-ends, and
//! EER evaluation.

pub mod audio;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod models;
pub mod nifs;
pub mod noise;
pub mod seed;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
