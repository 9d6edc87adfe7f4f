//! Frame scoring and selection.
//!
//! Every frame of the original utterance gets a distance vector: its
//! Euclidean feature distance to the same frame of each of K noisy copies.
//! Two selectors consume that table:
//!
//! * **fused**: score = Σₖ wₖ·dₖ + w₀, keep the ⌈w·N⌉ lowest scores;
//! * **intersection**: keep the ⌈w·N⌉ least-distorted frames for each
//!   constraint separately, then intersect. This is the fused selector with
//!   all weights equal and zero bias replaced by a per-constraint rank test,
//!   and leaves `w` as the only parameter.
//!
//! Ties at the cutoff go to the smaller frame index. Finding a good `w` is a
//! linear search ([`sweep_threshold`]); the weights of the fused selector are
//! plain configuration.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// N frames × K constraints of non-negative distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    values: Vec<f64>,
    n_frames: usize,
    constraint_ids: Vec<String>,
    frame_indices: Vec<usize>,
}

impl DistanceTable {
    pub fn new(
        values: Vec<f64>,
        constraint_ids: Vec<String>,
        frame_indices: Vec<usize>,
    ) -> Result<Self> {
        let k = constraint_ids.len();
        if k == 0 {
            return Err(Error::InvalidInput(
                "distance table needs at least one constraint".into(),
            ));
        }
        if values.len() != k * frame_indices.len() {
            return Err(Error::InvalidInput(format!(
                "{} distances do not fill {} frames x {k} constraints",
                values.len(),
                frame_indices.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(
                "distances must be finite and non-negative".into(),
            ));
        }
        if frame_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "frame indices must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            n_frames: frame_indices.len(),
            values,
            constraint_ids,
            frame_indices,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_constraints(&self) -> usize {
        self.constraint_ids.len()
    }

    pub fn value(&self, frame: usize, constraint: usize) -> f64 {
        self.values[frame * self.n_constraints() + constraint]
    }

    /// Distances of one frame position to every constraint.
    pub fn row(&self, frame: usize) -> &[f64] {
        let k = self.n_constraints();
        &self.values[frame * k..(frame + 1) * k]
    }

    pub fn column(&self, constraint: usize) -> Vec<f64> {
        (0..self.n_frames)
            .map(|n| self.value(n, constraint))
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn constraint_ids(&self) -> &[String] {
        &self.constraint_ids
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    /// Mean over constraints of the distances at a frame position.
    pub fn mean_row_distance(&self, frame: usize) -> f64 {
        self.row(frame).iter().sum::<f64>() / self.n_constraints() as f64
    }
}

/// Distance of every original frame to the corresponding frame of each
/// noisy copy. Constraint ids are the noisy matrices' source ids.
pub fn distance_table(orig: &FeatureMatrix, noisy: &[FeatureMatrix]) -> Result<DistanceTable> {
    if noisy.is_empty() {
        return Err(Error::InvalidInput("no noisy feature matrices".into()));
    }
    for m in noisy {
        if m.n_frames() != orig.n_frames()
            || m.dim() != orig.dim()
            || m.frame_indices() != orig.frame_indices()
        {
            return Err(Error::FrameCorrespondence(format!(
                "{} is {}x{} but {} is {}x{} (or frame indices differ)",
                orig.source_id(),
                orig.n_frames(),
                orig.dim(),
                m.source_id(),
                m.n_frames(),
                m.dim()
            )));
        }
    }
    let k = noisy.len();
    let mut values = Vec::with_capacity(orig.n_frames() * k);
    for n in 0..orig.n_frames() {
        let o = orig.row(n);
        for m in noisy {
            let d2: f64 = o.iter().zip(m.row(n)).map(|(a, b)| (a - b) * (a - b)).sum();
            values.push(d2.sqrt());
        }
    }
    DistanceTable::new(
        values,
        noisy.iter().map(|m| m.source_id().to_string()).collect(),
        orig.frame_indices().to_vec(),
    )
}

/// Per-constraint weights and a bias for the fused score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl FusionParams {
    /// All weights 1, bias 0.
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
            bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter(
                "weights must be finite and non-negative".into(),
            ));
        }
        if !self.bias.is_finite() {
            return Err(Error::Parameter("bias must be finite".into()));
        }
        Ok(())
    }
}

/// Fused score per frame: `Σₖ weights[k]·d[n][k] + bias`.
pub fn fused_scores(table: &DistanceTable, params: &FusionParams) -> Result<Vec<f64>> {
    params.validate()?;
    if params.weights.len() != table.n_constraints() {
        return Err(Error::Parameter(format!(
            "{} weights for {} constraints",
            params.weights.len(),
            table.n_constraints()
        )));
    }
    Ok((0..table.n_frames())
        .map(|n| {
            table
                .row(n)
                .iter()
                .zip(&params.weights)
                .map(|(d, w)| w * d)
                .sum::<f64>()
                + params.bias
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Fused,
    #[default]
    Intersection,
}

impl SelectionMethod {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Fused => "fused",
            SelectionMethod::Intersection => "intersection",
        }
    }
}

/// Selected frame indices, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    #[serde(rename = "w")]
    pub threshold_w: f64,
    pub selected: Vec<usize>,
    /// Fused score of each selected frame; `None` for intersection.
    pub scores: Option<Vec<f64>>,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("selection result", e))
    }
}

/// Slack for products like 0.7·10 that land just above an integer.
const KEEP_EPS: f64 = 1e-9;

/// ⌈w·N⌉ for `w` in (0, 1].
pub fn keep_count(w: f64, n: usize) -> Result<usize> {
    check_w(w)?;
    Ok((((w * n as f64) - KEEP_EPS).ceil().max(1.0) as usize).min(n))
}

fn check_w(w: f64) -> Result<()> {
    if w > 0.0 && w <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "selection threshold w must be in (0, 1], got {w}"
        )))
    }
}

/// Positions of the `keep` smallest values, lower position first on ties,
/// returned in ascending position order.
fn smallest_positions(values: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| match values[a].total_cmp(&values[b]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order.truncate(keep);
    order.sort_unstable();
    order
}

/// Keeps the ⌈w·N⌉ frames with the lowest scores.
pub fn select_top_fused(
    scores: &[f64],
    frame_indices: &[usize],
    w: f64,
) -> Result<SelectionResult> {
    if scores.len() != frame_indices.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} frames",
            scores.len(),
            frame_indices.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("no frames to select from".into()));
    }
    let keep = keep_count(w, scores.len())?;
    let positions = smallest_positions(scores, keep);
    Ok(SelectionResult {
        method: SelectionMethod::Fused,
        threshold_w: w,
        scores: Some(positions.iter().map(|&p| scores[p]).collect()),
        selected: positions.iter().map(|&p| frame_indices[p]).collect(),
    })
}

/// Intersection over constraints of each constraint's ⌈w·N⌉ least-distorted
/// frames.
pub fn select_intersection(table: &DistanceTable, w: f64) -> Result<SelectionResult> {
    if table.n_frames() == 0 {
        return Err(Error::InvalidInput("no frames to select from".into()));
    }
    let keep = keep_count(w, table.n_frames())?;
    let mut hits = vec![0usize; table.n_frames()];
    for k in 0..table.n_constraints() {
        for p in smallest_positions(&table.column(k), keep) {
            hits[p] += 1;
        }
    }
    let selected: Vec<usize> = hits
        .iter()
        .enumerate()
        .filter(|(_, &h)| h == table.n_constraints())
        .map(|(p, _)| table.frame_indices()[p])
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection {
            w,
            subset_sizes: vec![keep; table.n_constraints()],
        });
    }
    Ok(SelectionResult {
        method: SelectionMethod::Intersection,
        threshold_w: w,
        selected,
        scores: None,
    })
}

/// Runs the selector named by `method`. `params` defaults to uniform weights.
pub fn select(
    table: &DistanceTable,
    method: SelectionMethod,
    w: f64,
    params: Option<&FusionParams>,
) -> Result<SelectionResult> {
    match method {
        SelectionMethod::Intersection => select_intersection(table, w),
        SelectionMethod::Fused => {
            let uniform;
            let params = match params {
                Some(p) => p,
                None => {
                    uniform = FusionParams::uniform(table.n_constraints());
                    &uniform
                }
            };
            select_top_fused(&fused_scores(table, params)?, table.frame_indices(), w)
        }
    }
}

/// Step added to `w` after an empty intersection.
pub const RETRY_STEP: f64 = 0.05;

/// Like [`select`], but raises `w` by [`RETRY_STEP`] (capped at 1) until the
/// selection is non-empty. The returned `threshold_w` is the one that worked.
pub fn select_with_retry(
    table: &DistanceTable,
    method: SelectionMethod,
    w: f64,
    params: Option<&FusionParams>,
) -> Result<SelectionResult> {
    let mut w = w;
    loop {
        match select(table, method, w, params) {
            Err(Error::EmptySelection { .. }) if w < 1.0 => w = (w + RETRY_STEP).min(1.0),
            other => return other,
        }
    }
}

/// Rows of `features` whose frame index is selected.
pub fn apply_selection(features: &FeatureMatrix, sel: &SelectionResult) -> Result<FeatureMatrix> {
    if sel.selected.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Consistency(
            "selected frame indices are not strictly increasing".into(),
        ));
    }
    let positions = sel
        .selected
        .iter()
        .map(|&f| {
            features.position_of(f).ok_or_else(|| {
                Error::Consistency(format!("frame {f} is not in {}", features.source_id()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(features.gather(&positions))
}

/// One grid point of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub w: f64,
    /// Mean over selected frames of the per-frame mean distance; `None` when
    /// every table failed to select.
    pub mean_distance: Option<f64>,
    pub n_selected: usize,
    /// Tables whose selection came back empty at this `w`.
    pub empty: usize,
}

/// Selects at each `w` of an ascending grid over all `tables` and reports
/// the pooled mean distance of the selected frames.
pub fn sweep_threshold(
    tables: &[DistanceTable],
    w_grid: &[f64],
    method: SelectionMethod,
    params: Option<&FusionParams>,
) -> Result<Vec<SweepRow>> {
    for &w in w_grid {
        check_w(w)?;
    }
    if w_grid.windows(2).any(|p| p[0] > p[1]) {
        return Err(Error::Parameter("w grid must be sorted ascending".into()));
    }
    w_grid
        .iter()
        .map(|&w| {
            let (mut sum, mut n_selected, mut empty) = (0.0, 0usize, 0usize);
            for table in tables {
                match select(table, method, w, params) {
                    Ok(sel) => {
                        for f in &sel.selected {
                            let p = table
                                .frame_indices()
                                .binary_search(f)
                                .expect("selected frame");
                            sum += table.mean_row_distance(p);
                        }
                        n_selected += sel.len();
                    }
                    Err(Error::EmptySelection { .. }) => empty += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(SweepRow {
                w,
                mean_distance: (n_selected > 0).then(|| sum / n_selected as f64),
                n_selected,
                empty,
            })
        })
        .collect()
}
