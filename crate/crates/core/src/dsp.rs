//! Framing and MFCC-family feature extraction.
//!
//! Per frame: pre-emphasis, Hamming window, |FFT|², triangular mel
//! filterbank on the HTK mel scale, log, orthonormal DCT-II. Optionally c0
//! is overwritten with the log energy of the windowed frame, and Δ / ΔΔ
//! regression coefficients are appended. No cepstral mean normalization and
//! no liftering are applied.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Utterance;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Floor added before every logarithm so silent frames stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hamming,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hamming if len == 1 => vec![1.0],
            Window::Hamming => (0..len)
                .map(|n| 0.54 - 0.46 * (std::f64::consts::TAU * n as f64 / (len - 1) as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    pub frame_len_ms: f64,
    pub shift_ms: f64,
    pub window: Window,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 25.0,
            shift_ms: 10.0,
            window: Window::Hamming,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift_ms > 0.0
            && self.shift_ms <= self.frame_len_ms
            && self.frame_len_ms.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "need 0 < shift_ms <= frame_len_ms, got shift {} and length {}",
                self.shift_ms, self.frame_len_ms
            )));
        }
        Ok(())
    }

    pub fn frame_len_samples(&self, rate: u32) -> usize {
        (self.frame_len_ms * f64::from(rate) / 1000.0).round() as usize
    }

    pub fn shift_samples(&self, rate: u32) -> usize {
        (self.shift_ms * f64::from(rate) / 1000.0).round().max(1.0) as usize
    }
}

/// Number of full frames: `floor((n - L) / S) + 1`.
pub fn frame_count(n_samples: usize, cfg: &FrameConfig, rate: u32) -> Result<usize> {
    cfg.validate()?;
    let len = cfg.frame_len_samples(rate);
    let shift = cfg.shift_samples(rate);
    if len == 0 {
        return Err(Error::InvalidInput(
            "frame length rounds to 0 samples".into(),
        ));
    }
    if n_samples < len {
        return Err(Error::TooShort {
            n_samples,
            required: len,
        });
    }
    Ok((n_samples - len) / shift + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub n_cepstra: usize,
    /// 1 appends Δ, 2 appends Δ and ΔΔ.
    pub delta_order: usize,
    pub replace_c0_with_log_energy: bool,
    pub n_mel_filters: usize,
    pub fft_size: usize,
    pub pre_emphasis: f64,
    pub mel_fmin: f64,
    /// `None` means half the sample rate.
    pub mel_fmax: Option<f64>,
    pub delta_window: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self::mfcc24()
    }
}

impl MfccConfig {
    /// 12 cepstra (c0 replaced by log energy) + 12 Δ.
    pub fn mfcc24() -> Self {
        Self {
            n_cepstra: 12,
            delta_order: 1,
            replace_c0_with_log_energy: true,
            n_mel_filters: 26,
            fft_size: 512,
            pre_emphasis: 0.97,
            mel_fmin: 0.0,
            mel_fmax: None,
            delta_window: 2,
        }
    }

    /// 13 + 13 Δ + 13 ΔΔ.
    pub fn mfcc39() -> Self {
        Self {
            n_cepstra: 13,
            delta_order: 2,
            ..Self::mfcc24()
        }
    }

    /// 20 + 20 Δ + 20 ΔΔ.
    pub fn mfcc60() -> Self {
        Self {
            n_cepstra: 20,
            delta_order: 2,
            ..Self::mfcc24()
        }
    }

    pub fn dim(&self) -> usize {
        self.n_cepstra * (1 + self.delta_order)
    }

    pub fn validate(&self, frame_len: usize, rate: u32) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(m));
        if self.n_cepstra == 0 || self.n_cepstra > self.n_mel_filters {
            return fail(format!(
                "need 1 <= n_cepstra <= n_mel_filters, got {} and {}",
                self.n_cepstra, self.n_mel_filters
            ));
        }
        if !matches!(self.delta_order, 1 | 2) {
            return fail(format!(
                "delta_order must be 1 or 2, got {}",
                self.delta_order
            ));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < frame_len {
            return fail(format!(
                "fft_size must be a power of two >= frame length {frame_len}, got {}",
                self.fft_size
            ));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return fail(format!(
                "pre_emphasis must be in [0, 1), got {}",
                self.pre_emphasis
            ));
        }
        if self.delta_window == 0 {
            return fail("delta_window must be at least 1".into());
        }
        let fmax = self.fmax(rate);
        if !(self.mel_fmin >= 0.0 && self.mel_fmin < fmax && fmax <= f64::from(rate) / 2.0) {
            return fail(format!(
                "need 0 <= mel_fmin < mel_fmax <= rate/2, got {} and {fmax}",
                self.mel_fmin
            ));
        }
        Ok(())
    }

    fn fmax(&self, rate: u32) -> f64 {
        self.mel_fmax.unwrap_or(f64::from(rate) / 2.0)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Orthonormal DCT-II basis, `n_out` rows of length `n_in`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(n_out * n_in);
    let norm = (2.0 / n_in as f64).sqrt();
    for k in 0..n_out {
        let scale = if k == 0 { norm / 2f64.sqrt() } else { norm };
        for n in 0..n_in {
            m.push(
                scale * (std::f64::consts::PI * k as f64 * (n as f64 + 0.5) / n_in as f64).cos(),
            );
        }
    }
    m
}

#[derive(Debug, Clone)]
struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

fn mel_filterbank(
    n_filters: usize,
    fft_size: usize,
    rate: u32,
    fmin: f64,
    fmax: f64,
) -> Vec<MelFilter> {
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    let bin_hz = f64::from(rate) / fft_size as f64;
    let n_bins = fft_size / 2 + 1;
    (0..n_filters)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let weight = |k: usize| {
                let f = k as f64 * bin_hz;
                if f > lo && f < center {
                    (f - lo) / (center - lo)
                } else if f >= center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                }
            };
            let first = (0..n_bins).find(|&k| weight(k) > 0.0).unwrap_or(0);
            let last = (0..n_bins).rev().find(|&k| weight(k) > 0.0).unwrap_or(0);
            MelFilter {
                first_bin: first,
                weights: (first..=last.max(first)).map(weight).collect(),
            }
        })
        .collect()
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one
/// (frame, MFCC, rate) configuration.
#[derive(Clone)]
pub struct MfccExtractor {
    frame: FrameConfig,
    mfcc: MfccConfig,
    rate: u32,
    frame_len: usize,
    shift: usize,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("frame", &self.frame)
            .field("mfcc", &self.mfcc)
            .field("rate", &self.rate)
            .finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(frame: &FrameConfig, mfcc: &MfccConfig, rate: u32) -> Result<Self> {
        frame.validate()?;
        let frame_len = frame.frame_len_samples(rate);
        if frame_len < 2 {
            return Err(Error::InvalidInput(format!(
                "frame of {} ms is {frame_len} samples at {rate} Hz",
                frame.frame_len_ms
            )));
        }
        mfcc.validate(frame_len, rate)?;
        Ok(Self {
            frame: *frame,
            mfcc: mfcc.clone(),
            rate,
            frame_len,
            shift: frame.shift_samples(rate),
            window: frame.window.coefficients(frame_len),
            filters: mel_filterbank(
                mfcc.n_mel_filters,
                mfcc.fft_size,
                rate,
                mfcc.mel_fmin,
                mfcc.fmax(rate),
            ),
            dct: dct_matrix(mfcc.n_cepstra, mfcc.n_mel_filters),
            fft: FftPlanner::new().plan_fft_forward(mfcc.fft_size),
        })
    }

    pub fn frame_config(&self) -> &FrameConfig {
        &self.frame
    }

    pub fn mfcc_config(&self) -> &MfccConfig {
        &self.mfcc
    }

    pub fn sample_rate(&self) -> u32 {
        self.rate
    }

    pub fn dim(&self) -> usize {
        self.mfcc.dim()
    }

    /// Minimum number of samples for a full feature matrix (deltas need
    /// `delta_window` frames of context on both sides).
    pub fn min_samples(&self) -> usize {
        self.frame_len + 2 * self.mfcc.delta_window * self.shift
    }

    fn check_input(&self, utt: &Utterance) -> Result<usize> {
        if utt.sample_rate() != self.rate {
            return Err(Error::InvalidInput(format!(
                "utterance {} is {} Hz, extractor expects {} Hz",
                utt.id(),
                utt.sample_rate(),
                self.rate
            )));
        }
        if let Some(i) = utt.samples().iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample {i} of {} is not finite",
                utt.id()
            )));
        }
        let n = frame_count(utt.len(), &self.frame, self.rate)?;
        let needed = 1 + 2 * self.mfcc.delta_window;
        if n < needed {
            return Err(Error::TooShort {
                n_samples: utt.len(),
                required: self.min_samples(),
            });
        }
        Ok(n)
    }

    /// Windowed, pre-emphasized frame `t` and its log energy.
    fn windowed_frame(&self, samples: &[f64], t: usize, out: &mut [f64]) -> f64 {
        let frame = &samples[t * self.shift..t * self.shift + self.frame_len];
        let k = self.mfcc.pre_emphasis;
        for i in (1..self.frame_len).rev() {
            out[i] = frame[i] - k * frame[i - 1];
        }
        out[0] = frame[0] * (1.0 - k);
        let mut energy = 0.0;
        for (x, w) in out.iter_mut().zip(&self.window) {
            *x *= w;
            energy += *x * *x;
        }
        (energy + LOG_FLOOR).ln()
    }

    fn log_mel_frame(&self, windowed: &[f64], buf: &mut [Complex<f64>], out: &mut [f64]) {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (c, &x) in buf.iter_mut().zip(windowed) {
            c.re = x;
        }
        self.fft.process(buf);
        for (o, f) in out.iter_mut().zip(&self.filters) {
            let e: f64 = f
                .weights
                .iter()
                .enumerate()
                .map(|(j, w)| w * buf[f.first_bin + j].norm_sqr())
                .sum();
            *o = (e + LOG_FLOOR).ln();
        }
    }

    /// Log mel filterbank energies, one row of `n_mel_filters` per frame.
    pub fn log_mel_energies(&self, utt: &Utterance) -> Result<Vec<Vec<f64>>> {
        self.check_input(utt)?;
        let n = frame_count(utt.len(), &self.frame, self.rate)?;
        let mut windowed = vec![0.0; self.frame_len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.mfcc.fft_size];
        Ok((0..n)
            .map(|t| {
                self.windowed_frame(utt.samples(), t, &mut windowed);
                let mut row = vec![0.0; self.mfcc.n_mel_filters];
                self.log_mel_frame(&windowed, &mut buf, &mut row);
                row
            })
            .collect())
    }

    pub fn extract(&self, utt: &Utterance) -> Result<FeatureMatrix> {
        let n = self.check_input(utt)?;
        let nc = self.mfcc.n_cepstra;
        let nf = self.mfcc.n_mel_filters;
        let mut statics = vec![0.0; n * nc];
        let mut windowed = vec![0.0; self.frame_len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.mfcc.fft_size];
        let mut log_mel = vec![0.0; nf];
        for t in 0..n {
            let log_energy = self.windowed_frame(utt.samples(), t, &mut windowed);
            self.log_mel_frame(&windowed, &mut buf, &mut log_mel);
            let row = &mut statics[t * nc..(t + 1) * nc];
            for (i, c) in row.iter_mut().enumerate() {
                *c = self.dct[i * nf..(i + 1) * nf]
                    .iter()
                    .zip(&log_mel)
                    .map(|(a, b)| a * b)
                    .sum();
            }
            if self.mfcc.replace_c0_with_log_energy {
                row[0] = log_energy;
            }
        }

        let dim = self.dim();
        let mut blocks = vec![statics];
        for _ in 0..self.mfcc.delta_order {
            let d = deltas(blocks.last().unwrap(), nc, self.mfcc.delta_window);
            blocks.push(d);
        }
        let mut data = Vec::with_capacity(n * dim);
        for t in 0..n {
            for b in &blocks {
                data.extend_from_slice(&b[t * nc..(t + 1) * nc]);
            }
        }
        FeatureMatrix::new(utt.id(), dim, data, (0..n).collect())
    }
}

/// Regression deltas over a `2·window + 1` frame span with the first and
/// last frames replicated at the edges. `rows` is row-major with `width`
/// columns.
pub fn deltas(rows: &[f64], width: usize, window: usize) -> Vec<f64> {
    let n = rows.len() / width;
    let denom = 2.0 * (1..=window).map(|t| (t * t) as f64).sum::<f64>();
    let mut out = vec![0.0; rows.len()];
    for t in 0..n {
        for tau in 1..=window {
            let ahead = (t + tau).min(n - 1);
            let behind = t.saturating_sub(tau);
            for j in 0..width {
                out[t * width + j] +=
                    tau as f64 * (rows[ahead * width + j] - rows[behind * width + j]);
            }
        }
        for j in 0..width {
            out[t * width + j] /= denom;
        }
    }
    out
}

pub fn extract_mfcc(
    utt: &Utterance,
    frame: &FrameConfig,
    mfcc: &MfccConfig,
) -> Result<FeatureMatrix> {
    MfccExtractor::new(frame, mfcc, utt.sample_rate())?.extract(utt)
}

/// Anything that maps an utterance to a feature matrix.
pub trait FeatureSource: Sync {
    fn features(&self, utt: &Utterance) -> Result<FeatureMatrix>;
}

impl FeatureSource for MfccExtractor {
    fn features(&self, utt: &Utterance) -> Result<FeatureMatrix> {
        self.extract(utt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise_utt(n: usize, seed: u64) -> Utterance {
        let mut rng = crate::seed::rng(seed);
        Utterance::new(
            "n",
            (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn frame_count_examples() {
        let cfg = FrameConfig::default();
        assert_eq!(frame_count(400, &cfg, 16000).unwrap(), 1);
        // floor((16000 - 400) / 160) + 1
        assert_eq!(frame_count(16000, &cfg, 16000).unwrap(), 98);
        assert!(matches!(
            frame_count(399, &cfg, 16000),
            Err(Error::TooShort {
                n_samples: 399,
                required: 400
            })
        ));
    }

    #[test]
    fn bad_frame_config() {
        let cfg = FrameConfig {
            shift_ms: 30.0,
            ..FrameConfig::default()
        };
        assert!(frame_count(16000, &cfg, 16000).is_err());
    }

    #[test]
    fn zero_input_has_constant_statics_and_zero_deltas() {
        let u = Utterance::new("z", vec![0.0; 8000], 16000).unwrap();
        let f = extract_mfcc(&u, &FrameConfig::default(), &MfccConfig::mfcc24()).unwrap();
        assert_eq!(f.dim(), 24);
        for row in f.rows() {
            assert_eq!(&row[..12], &f.row(0)[..12]);
            assert!(row[12..].iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn feature_dimensions() {
        let u = noise_utt(8000, 1);
        let fc = FrameConfig::default();
        assert_eq!(
            extract_mfcc(&u, &fc, &MfccConfig::mfcc24()).unwrap().dim(),
            24
        );
        assert_eq!(
            extract_mfcc(&u, &fc, &MfccConfig::mfcc39()).unwrap().dim(),
            39
        );
        assert_eq!(
            extract_mfcc(&u, &fc, &MfccConfig::mfcc60()).unwrap().dim(),
            60
        );
    }

    #[test]
    fn log_energy_replaces_c0() {
        let u = noise_utt(4000, 2);
        let f = extract_mfcc(&u, &FrameConfig::default(), &MfccConfig::mfcc24()).unwrap();
        // Independent log energy of frame 3.
        let frame = &u.samples()[480..880];
        let mut pre: Vec<f64> = (0..400)
            .map(|i| {
                if i == 0 {
                    frame[0] * 0.03
                } else {
                    frame[i] - 0.97 * frame[i - 1]
                }
            })
            .collect();
        for (i, x) in pre.iter_mut().enumerate() {
            *x *= 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / 399.0).cos();
        }
        let e = (pre.iter().map(|x| x * x).sum::<f64>() + 1e-10).ln();
        assert!((f.row(3)[0] - e).abs() < 1e-12);
    }

    #[test]
    fn too_short_and_non_finite() {
        let fc = FrameConfig::default();
        let mc = MfccConfig::mfcc24();
        // 4 frames, deltas need 5.
        let u = noise_utt(400 + 3 * 160, 3);
        assert!(matches!(
            extract_mfcc(&u, &fc, &mc),
            Err(Error::TooShort { .. })
        ));
        let u = noise_utt(400 + 4 * 160, 3);
        assert_eq!(extract_mfcc(&u, &fc, &mc).unwrap().n_frames(), 5);
        let mut s = vec![0.1; 4000];
        s[10] = f64::INFINITY;
        let u = Utterance::new("inf", s, 16000).unwrap();
        assert!(matches!(
            extract_mfcc(&u, &fc, &mc),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn dct_is_orthonormal() {
        for n in [12, 26, 40] {
            let m = dct_matrix(n, n);
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-10, "({i},{j}) = {dot}");
                }
            }
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 999.9855).abs() < 1e-3);
    }

    /// Peak filter located with a naive DFT and an independently built
    /// triangle response.
    #[test]
    fn sine_peaks_in_the_filter_covering_its_frequency() {
        let rate = 16000;
        let u = Utterance::new(
            "sine",
            (0..8000)
                .map(|i| 0.5 * (std::f64::consts::TAU * 1000.0 * i as f64 / 16000.0).sin())
                .collect(),
            rate,
        )
        .unwrap();
        let cfg = MfccConfig::mfcc24();
        let ex = MfccExtractor::new(&FrameConfig::default(), &cfg, rate).unwrap();
        let energies = ex.log_mel_energies(&u).unwrap();

        // Naive DFT of frame 10 after pre-emphasis and Hamming.
        let frame = &u.samples()[1600..2000];
        let x: Vec<f64> = (0..400)
            .map(|i| {
                let p = if i == 0 {
                    frame[0] * 0.03
                } else {
                    frame[i] - 0.97 * frame[i - 1]
                };
                p * (0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / 399.0).cos())
            })
            .collect();
        let power = |k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let a = -std::f64::consts::TAU * (k * n) as f64 / 512.0;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        };
        let peak_bin = (0..=256)
            .max_by(|&a, &b| power(a).total_cmp(&power(b)))
            .unwrap();
        let peak_hz = peak_bin as f64 * 16000.0 / 512.0;
        assert_eq!(peak_hz, 1000.0);

        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let step = mel(8000.0) / 27.0;
        let expected = (0..26)
            .max_by(|&a, &b| {
                // Triangles are linear in Hz between mel-spaced edges.
                let tri = |m: usize| {
                    let edge = |j: usize| 700.0 * (10f64.powf(step * j as f64 / 2595.0) - 1.0);
                    let (lo, c, hi) = (edge(m), edge(m + 1), edge(m + 2));
                    ((peak_hz - lo) / (c - lo))
                        .min((hi - peak_hz) / (hi - c))
                        .max(0.0)
                };
                tri(a).total_cmp(&tri(b))
            })
            .unwrap();
        let row = &energies[10];
        let got = (0..26).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn deterministic() {
        let u = noise_utt(6000, 9);
        let a = extract_mfcc(&u, &FrameConfig::default(), &MfccConfig::mfcc39()).unwrap();
        let b = extract_mfcc(&u, &FrameConfig::default(), &MfccConfig::mfcc39()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rate_mismatch_rejected() {
        let ex = MfccExtractor::new(&FrameConfig::default(), &MfccConfig::mfcc24(), 16000).unwrap();
        let u = Utterance::new("r", vec![0.1; 8000], 8000).unwrap();
        assert!(ex.extract(&u).is_err());
    }

    #[test]
    fn invalid_mfcc_config() {
        let fc = FrameConfig::default();
        let bad = MfccConfig {
            n_cepstra: 30,
            ..MfccConfig::mfcc24()
        };
        assert!(MfccExtractor::new(&fc, &bad, 16000).is_err());
        let bad = MfccConfig {
            fft_size: 256,
            ..MfccConfig::mfcc24()
        };
        assert!(MfccExtractor::new(&fc, &bad, 16000).is_err());
    }

    proptest! {
        #[test]
        fn deltas_are_linear(
            seed in any::<u64>(),
            n in 1usize..30,
            width in 1usize..6,
            a in -5.0f64..5.0,
        ) {
            let mut rng = crate::seed::rng(seed);
            let x: Vec<f64> = (0..n * width).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let d = deltas(&x, width, 2);
            let da = deltas(&ax, width, 2);
            for (p, q) in d.iter().zip(&da) {
                prop_assert!((a * p - q).abs() <= 1e-9 * (1.0 + q.abs()));
            }
        }

        #[test]
        fn noisy_copy_keeps_frame_layout(extra in 0usize..400, seed in any::<u64>()) {
            let u = noise_utt(3200 + extra, seed);
            let noisy: Vec<f64> = u.samples().iter().map(|x| x * 0.5 + 0.01).collect();
            let v = Utterance::new("v", noisy, 16000).unwrap();
            let ex = MfccExtractor::new(&FrameConfig::default(), &MfccConfig::mfcc24(), 16000).unwrap();
            let (a, b) = (ex.extract(&u).unwrap(), ex.extract(&v).unwrap());
            prop_assert_eq!(a.n_frames(), b.n_frames());
            prop_assert_eq!(a.frame_indices(), b.frame_indices());
        }
    }
}
