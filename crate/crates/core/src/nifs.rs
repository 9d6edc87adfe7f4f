//! End-to-end frame selection for one utterance: mix each constraint noise
//! in, extract features from the original and every noisy copy, score, and
//! keep the selected rows of the original's features.

use rayon::prelude::*;

use crate::audio::Utterance;
use crate::dsp::{FeatureSource, FrameConfig, MfccConfig, MfccExtractor};
use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::noise::{mix_at_snr, NoiseConstraint, OffsetPolicy};
use crate::seed;
use crate::selection::{
    apply_selection, distance_table, select, select_with_retry, DistanceTable, FusionParams,
    SelectionMethod, SelectionResult,
};

#[derive(Debug, Clone, PartialEq)]
pub struct NifsConfig {
    pub method: SelectionMethod,
    pub w: f64,
    /// Fused-selector parameters; `None` takes the constraint weights and a
    /// zero bias.
    pub params: Option<FusionParams>,
    /// Raise `w` in steps of 0.05 after an empty selection.
    pub retry: bool,
    pub offset_policy: OffsetPolicy,
}

impl Default for NifsConfig {
    fn default() -> Self {
        Self {
            method: SelectionMethod::Intersection,
            w: 0.9,
            params: None,
            retry: false,
            offset_policy: OffsetPolicy::Loop,
        }
    }
}

impl FusionParams {
    pub fn from_constraints(constraints: &[NoiseConstraint]) -> Self {
        Self {
            weights: constraints.iter().map(|c| c.weight).collect(),
            bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NifsOutcome {
    /// Selected rows of the original utterance's features.
    pub features: FeatureMatrix,
    pub original: FeatureMatrix,
    pub table: DistanceTable,
    pub selection: SelectionResult,
}

/// Seed of constraint `k`'s noise for an utterance-level `seed`.
pub fn constraint_seed(seed: u64, constraint: &NoiseConstraint, k: usize) -> u64 {
    seed::derive(seed, &[seed::label_hash(&constraint.noise_id), k as u64])
}

/// Original features plus the frame × constraint distance table.
///
/// The K noisy branches run in parallel; each branch is independent so the
/// result does not depend on scheduling.
pub fn constraint_distances<S: FeatureSource>(
    utt: &Utterance,
    constraints: &[NoiseConstraint],
    source: &S,
    policy: OffsetPolicy,
    seed: u64,
) -> Result<(FeatureMatrix, DistanceTable)> {
    if constraints.is_empty() {
        return Err(crate::Error::InvalidInput(
            "at least one noise constraint is required".into(),
        ));
    }
    let original = source.features(utt)?;
    let noisy = constraints
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let noise =
                c.noise
                    .render(utt.len(), utt.sample_rate(), constraint_seed(seed, c, k))?;
            let mixed = mix_at_snr(utt, &noise, c.snr_db, policy)?;
            Ok(source
                .features(&mixed.mixed)?
                .with_source_id(c.noise_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = distance_table(&original, &noisy)?;
    Ok((original, table))
}

pub fn nifs_select_with<S: FeatureSource>(
    utt: &Utterance,
    constraints: &[NoiseConstraint],
    source: &S,
    cfg: &NifsConfig,
    seed: u64,
) -> Result<NifsOutcome> {
    let (original, table) =
        constraint_distances(utt, constraints, source, cfg.offset_policy, seed)?;
    let default_params;
    let params = match &cfg.params {
        Some(p) => p,
        None => {
            default_params = FusionParams::from_constraints(constraints);
            &default_params
        }
    };
    let selection = if cfg.retry {
        select_with_retry(&table, cfg.method, cfg.w, Some(params))?
    } else {
        select(&table, cfg.method, cfg.w, Some(params))?
    };
    Ok(NifsOutcome {
        features: apply_selection(&original, &selection)?,
        original,
        table,
        selection,
    })
}

/// Selects the noise-invariant frames of `utt` and returns them with the
/// selection record.
#[allow(clippy::too_many_arguments)]
pub fn nifs_select(
    utt: &Utterance,
    constraints: &[NoiseConstraint],
    frame: &FrameConfig,
    mfcc: &MfccConfig,
    w: f64,
    method: SelectionMethod,
    params: Option<FusionParams>,
    seed: u64,
) -> Result<(FeatureMatrix, SelectionResult)> {
    let extractor = MfccExtractor::new(frame, mfcc, utt.sample_rate())?;
    let cfg = NifsConfig {
        method,
        w,
        params,
        ..NifsConfig::default()
    };
    let out = nifs_select_with(utt, constraints, &extractor, &cfg, seed)?;
    Ok((out.features, out.selection))
}
