//! Frame-indexed feature matrices and their on-disk cache format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// N frames × D coefficients, row-major, tagged with the original frame
/// position of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_frames: usize,
    dim: usize,
    frame_indices: Vec<usize>,
    source_id: String,
}

impl FeatureMatrix {
    pub fn new(
        source_id: impl Into<String>,
        dim: usize,
        data: Vec<f64>,
        frame_indices: Vec<usize>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "feature dimension must be positive".into(),
            ));
        }
        if data.len() != dim * frame_indices.len() {
            return Err(Error::InvalidInput(format!(
                "{} values do not fill {} frames of dimension {dim}",
                data.len(),
                frame_indices.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature value at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        if frame_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "frame indices must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            n_frames: frame_indices.len(),
            data,
            dim,
            frame_indices,
            source_id: source_id.into(),
        })
    }

    /// Rows with consecutive frame indices starting at 0.
    pub fn from_rows(source_id: impl Into<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        let n = data.len().checked_div(dim).unwrap_or(0);
        Self::new(source_id, dim, data, (0..n).collect())
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    /// Row position of a frame index, if present.
    pub fn position_of(&self, frame_index: usize) -> Option<usize> {
        self.frame_indices.binary_search(&frame_index).ok()
    }

    /// Gathers rows by position. Positions must be strictly increasing.
    pub(crate) fn gather(&self, positions: &[usize]) -> Self {
        let mut data = Vec::with_capacity(positions.len() * self.dim);
        for &p in positions {
            data.extend_from_slice(self.row(p));
        }
        Self {
            data,
            n_frames: positions.len(),
            dim: self.dim,
            frame_indices: positions.iter().map(|&p| self.frame_indices[p]).collect(),
            source_id: self.source_id.clone(),
        }
    }

    /// Stacks matrices of equal dimension; frame indices are renumbered
    /// 0..N in stacking order.
    pub fn concat<'a>(
        source_id: impl Into<String>,
        parts: impl IntoIterator<Item = &'a FeatureMatrix>,
    ) -> Result<Self> {
        let mut dim = None;
        let mut data = Vec::new();
        for p in parts {
            match dim {
                None => dim = Some(p.dim),
                Some(d) if d != p.dim => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: p.dim,
                    })
                }
                _ => {}
            }
            data.extend_from_slice(&p.data);
        }
        let dim = dim.ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?;
        Self::from_rows(source_id, dim, data)
    }

    /// Rounds every value through f32, the precision of the cache format.
    pub fn to_f32_precision(&self) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x = f64::from(*x as f32));
        out
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }
}

pub const FEATURE_MAGIC: &[u8; 8] = b"NIFSFEAT";
pub const FEATURE_VERSION: u32 = 1;

/// Encodes as `NIFSFEAT`, version, rows, cols (u32 LE), f32 LE row-major
/// values, then one u32 LE frame index per row.
pub fn encode_features(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(20 + m.data.len() * 4 + m.n_frames * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(m.n_frames, "rows")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(m.dim, "cols")?.to_le_bytes());
    for &x in &m.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    for &i in &m.frame_indices {
        buf.extend_from_slice(&to_u32(i, "frame index")?.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_features(bytes: &[u8], source_id: &str, path: &Path) -> Result<FeatureMatrix> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 20 || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("missing NIFSFEAT header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    if word(8) != FEATURE_VERSION {
        return Err(bad(&format!("unsupported version {}", word(8))));
    }
    let rows = word(12) as usize;
    let cols = word(16) as usize;
    let expected = 20 + rows * cols * 4 + rows * 4;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "expected {expected} bytes for {rows}x{cols}, found {}",
            bytes.len()
        )));
    }
    let data = (0..rows * cols)
        .map(|i| {
            let at = 20 + 4 * i;
            f64::from(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()))
        })
        .collect();
    let base = 20 + rows * cols * 4;
    let frames = (0..rows).map(|i| word(base + 4 * i) as usize).collect();
    FeatureMatrix::new(source_id, cols, data, frames).map_err(|e| bad(&e.to_string()))
}

pub fn write_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(m)?).map_err(|e| Error::io(path, e))
}

/// Reads a feature file; the source id is the file stem.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&bytes, &id, path)
}
