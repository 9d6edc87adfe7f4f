//! Verification trials, equal error rate and DET curves.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub model_id: String,
    pub test_path: String,
    #[serde(with = "bool_as_int")]
    pub is_target: bool,
}

/// A trial with its score; higher scores favour the target hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub model_id: String,
    pub test_path: String,
    #[serde(with = "bool_as_int")]
    pub is_target: bool,
    pub score: f64,
}

mod bool_as_int {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            n => Err(de::Error::custom(format!(
                "is_target must be 0 or 1, got {n}"
            ))),
        }
    }
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_err(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        writer.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Reads a `model_id,test_path,is_target` trial list.
pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    read_csv(path.as_ref())
}

pub fn write_trials(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    write_csv(path.as_ref(), trials)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredTrial>> {
    read_csv(path.as_ref())
}

pub fn write_scores(path: impl AsRef<Path>, scores: &[ScoredTrial]) -> Result<()> {
    write_csv(path.as_ref(), scores)
}

/// One operating point: error rates when accepting scores `≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite".into()));
    }
    let n_target = labels.iter().filter(|&&l| l).count();
    let n_nontarget = labels.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::DegenerateTrials {
            n_target,
            n_nontarget,
        });
    }
    Ok((n_target, n_nontarget))
}

/// FAR/FRR at every distinct score, plus a final threshold above the
/// maximum score where everything is rejected. FAR is non-increasing and
/// FRR non-decreasing along the returned sequence.
pub fn det_points(scores: &[f64], labels: &[bool]) -> Result<Vec<DetPoint>> {
    let (n_target, n_nontarget) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = Vec::new();
    // Counts of trials strictly below the current threshold.
    let (mut targets_below, mut nontargets_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        points.push(DetPoint {
            far: (n_nontarget - nontargets_below) as f64 / n_nontarget as f64,
            frr: targets_below as f64 / n_target as f64,
            threshold: t,
        });
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                targets_below += 1;
            } else {
                nontargets_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        far: 0.0,
        frr: 1.0,
        threshold: scores[order[order.len() - 1]] + 1.0,
    });
    Ok(points)
}

/// Equal error rate and its threshold, linearly interpolated between the
/// two operating points where FAR − FRR changes sign.
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let points = det_points(scores, labels)?;
    Ok(eer_from_det(&points))
}

pub(crate) fn eer_from_det(points: &[DetPoint]) -> (f64, f64) {
    let diff = |p: &DetPoint| p.far - p.frr;
    let i = points
        .iter()
        .position(|p| diff(p) <= 0.0)
        .expect("the last point has FAR 0 and FRR 1");
    let b = points[i];
    if diff(&b) == 0.0 || i == 0 {
        return (b.far, b.threshold);
    }
    let a = points[i - 1];
    let frac = diff(&a) / (diff(&a) - diff(&b));
    let eer = a.far + frac * (b.far - a.far);
    (eer, a.threshold + frac * (b.threshold - a.threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Test condition label, e.g. `clean` or `hum_20db`.
    pub condition: String,
    pub phase: String,
    pub backend: String,
    pub eer: f64,
    pub eer_threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// Trials that could not be scored and are excluded from the EER.
    pub n_failed: usize,
    pub det_points: Vec<DetPoint>,
}

impl EvalReport {
    pub fn from_scores(
        condition: impl Into<String>,
        phase: impl Into<String>,
        backend: impl Into<String>,
        scores: &[f64],
        labels: &[bool],
        n_failed: usize,
    ) -> Result<Self> {
        let det = det_points(scores, labels)?;
        let (eer, eer_threshold) = eer_from_det(&det);
        let n_target = labels.iter().filter(|&&l| l).count();
        Ok(Self {
            condition: condition.into(),
            phase: phase.into(),
            backend: backend.into(),
            eer,
            eer_threshold,
            n_target,
            n_nontarget: labels.len() - n_target,
            n_failed,
            det_points: det,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::json("evaluation report", e))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// DET points as `far,frr,threshold` CSV.
    pub fn save_det_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &self.det_points)
    }
}
