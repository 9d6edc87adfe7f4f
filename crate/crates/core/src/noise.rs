//! Additive noise: generators and mixing at an exact global SNR.
//!
//! SNR is the ratio of mean-square powers over the whole utterance, not over
//! speech-active regions. Mixtures are not clipped.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_square, Utterance};
use crate::error::{Error, Result};
use crate::seed;
use crate::synth::{normalize_rms, Voice};

/// Built-in noise generators.
///
/// `White`, `Pink` and `BabbleSynth` are the usual selection constraints.
/// The remaining kinds stand in for unseen test environments: `Brown` for
/// low-frequency vehicle rumble, `Hum` for harmonic machinery, `Impulsive`
/// for burst trains and `Bandpass` for mid-band noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    BabbleSynth,
    Brown,
    Hum,
    Impulsive,
    Bandpass,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 7] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::BabbleSynth,
        NoiseKind::Brown,
        NoiseKind::Hum,
        NoiseKind::Impulsive,
        NoiseKind::Bandpass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::BabbleSynth => "babble_synth",
            NoiseKind::Brown => "brown",
            NoiseKind::Hum => "hum",
            NoiseKind::Impulsive => "impulsive",
            NoiseKind::Bandpass => "bandpass",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown noise generator {s:?}")))
    }
}

/// How a noise shorter than the signal is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetPolicy {
    /// Repeat the noise cyclically from offset 0.
    #[default]
    Loop,
    Error,
}

/// Babble is a sum of this many independent synthetic talkers.
const BABBLE_TALKERS: usize = 8;
const GENERATOR_RMS: f64 = 0.1;
const PINK_WARMUP: usize = 2048;

/// Third-order pinking filter (three real pole/zero pairs), valid for 1/f
/// shaping over roughly 10 Hz to 5 kHz at 16 kHz.
const PINK_B: [f64; 4] = [0.049922035, -0.095993537, 0.050612699, -0.004408786];
const PINK_A: [f64; 4] = [1.0, -2.494956002, 2.017265875, -0.522189400];

fn white(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn pink(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    // Transposed direct form II.
    let mut z = [0.0; 3];
    let mut out = Vec::with_capacity(n);
    for i in 0..n + PINK_WARMUP {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let y = PINK_B[0] * x + z[0];
        z[0] = PINK_B[1] * x - PINK_A[1] * y + z[1];
        z[1] = PINK_B[2] * x - PINK_A[2] * y + z[2];
        z[2] = PINK_B[3] * x - PINK_A[3] * y;
        if i >= PINK_WARMUP {
            out.push(y);
        }
    }
    out
}

fn babble(n: usize, rate: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..BABBLE_TALKERS {
        let voice = Voice::draw(rng);
        for (o, s) in out.iter_mut().zip(voice.render(n, rate, rng)) {
            *o += s;
        }
    }
    normalize_rms(&mut out, GENERATOR_RMS);
    out
}

fn brown(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = (0..n + PINK_WARMUP)
        .map(|_| {
            acc = 0.995 * acc + rng.gen_range(-1.0..1.0);
            acc
        })
        .skip(PINK_WARMUP)
        .collect();
    normalize_rms(&mut out, GENERATOR_RMS);
    out
}

fn hum(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let fundamental = rng.gen_range(90.0..130.0);
    let harmonics: Vec<(f64, f64)> = (1..=20)
        .filter(|h| f64::from(*h) * fundamental < 0.45 * rate)
        .map(|h| {
            (
                f64::from(h) * fundamental,
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let tonal: f64 = harmonics
                .iter()
                .enumerate()
                .map(|(k, (f, ph))| (std::f64::consts::TAU * f * t + ph).sin() / (k + 1) as f64)
                .sum();
            tonal + 0.1 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    normalize_rms(&mut out, GENERATOR_RMS);
    out
}

fn impulsive(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let period = (rate / rng.gen_range(8.0..14.0)) as usize;
    let decay = (-1.0 / (0.008 * rate)).exp();
    let mut env = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            if i % period.max(1) == 0 {
                env = rng.gen_range(0.6..1.0);
            }
            env *= decay;
            env * rng.gen_range(-1.0..1.0) + 0.01 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    normalize_rms(&mut out, GENERATOR_RMS);
    out
}

fn bandpass(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    // Two cascaded resonators at 2 kHz, 1 kHz bandwidth.
    let (f, bw) = (2000.0_f64.min(0.3 * rate), 1000.0);
    let r = (-std::f64::consts::PI * bw / rate).exp();
    let a1 = 2.0 * r * (std::f64::consts::TAU * f / rate).cos();
    let a2 = -r * r;
    let mut state = [[0.0; 2]; 2];
    let mut out: Vec<f64> = (0..n + PINK_WARMUP)
        .map(|_| {
            let mut x = rng.gen_range(-1.0..1.0);
            for s in state.iter_mut() {
                let y = x + a1 * s[0] + a2 * s[1];
                s[1] = s[0];
                s[0] = y;
                x = y;
            }
            x
        })
        .skip(PINK_WARMUP)
        .collect();
    normalize_rms(&mut out, GENERATOR_RMS);
    out
}

/// Generates `n_samples` of noise; deterministic in `seed`.
///
/// White noise is i.i.d. uniform in (-1, 1); pink is white through the
/// pinking filter; babble sums eight synthetic talkers and is normalized to
/// RMS 0.1, as are the test-environment kinds.
pub fn generate_noise(
    kind: NoiseKind,
    n_samples: usize,
    rate: u32,
    seed: u64,
) -> Result<Utterance> {
    if n_samples == 0 {
        return Err(Error::InvalidInput(
            "noise needs at least one sample".into(),
        ));
    }
    let mut rng = seed::rng(seed);
    let r = f64::from(rate);
    let samples = match kind {
        NoiseKind::White => white(n_samples, &mut rng),
        NoiseKind::Pink => pink(n_samples, &mut rng),
        NoiseKind::BabbleSynth => babble(n_samples, r, &mut rng),
        NoiseKind::Brown => brown(n_samples, &mut rng),
        NoiseKind::Hum => hum(n_samples, r, &mut rng),
        NoiseKind::Impulsive => impulsive(n_samples, r, &mut rng),
        NoiseKind::Bandpass => bandpass(n_samples, r, &mut rng),
    };
    Utterance::new(kind.name(), samples, rate)
}

/// A noise that is either recorded or produced on demand.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Recorded(Utterance),
    Generated(NoiseKind),
}

impl Noise {
    /// Noise for a signal of `n_samples`: recordings are returned as-is
    /// (mixing loops or truncates them), generators render exactly `n_samples`.
    pub fn render(&self, n_samples: usize, rate: u32, seed: u64) -> Result<Utterance> {
        match self {
            Noise::Recorded(u) => Ok(u.clone()),
            Noise::Generated(kind) => generate_noise(*kind, n_samples, rate, seed),
        }
    }
}

/// Where a noise comes from, as written in configuration files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Generator(NoiseKind),
    Path(PathBuf),
}

impl NoiseSpec {
    pub fn label(&self) -> String {
        match self {
            NoiseSpec::Generator(k) => k.name().to_string(),
            NoiseSpec::Path(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
        }
    }

    pub fn resolve(&self, base: &std::path::Path) -> Result<Noise> {
        match self {
            NoiseSpec::Generator(k) => Ok(Noise::Generated(*k)),
            NoiseSpec::Path(p) => crate::audio::read_wav(base.join(p)).map(Noise::Recorded),
        }
    }
}

/// One of the K perturbations used to score frames.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConstraint {
    pub noise_id: String,
    pub noise: Noise,
    pub snr_db: f64,
    pub weight: f64,
}

impl NoiseConstraint {
    pub fn new(noise_id: impl Into<String>, noise: Noise, snr_db: f64) -> Result<Self> {
        Self::weighted(noise_id, noise, snr_db, 1.0)
    }

    pub fn weighted(
        noise_id: impl Into<String>,
        noise: Noise,
        snr_db: f64,
        weight: f64,
    ) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::InvalidInput(format!(
                "snr_db must be finite, got {snr_db}"
            )));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "weight must be >= 0, got {weight}"
            )));
        }
        Ok(Self {
            noise_id: noise_id.into(),
            noise,
            snr_db,
            weight,
        })
    }

    pub fn generated(kind: NoiseKind, snr_db: f64) -> Result<Self> {
        Self::new(kind.name(), Noise::Generated(kind), snr_db)
    }
}

/// Result of [`mix_at_snr`]: the mixture and the gain applied to the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixed: Utterance,
    pub gain: f64,
    /// The noise after looping or truncation to the signal length, unscaled.
    pub aligned_noise: Vec<f64>,
}

/// `signal + gain·noise′`, where `noise′` is the noise aligned at offset 0
/// to the signal length and `gain = sqrt(Ps / (Pn′·10^(snr/10)))`.
pub fn mix_at_snr(
    signal: &Utterance,
    noise: &Utterance,
    snr_db: f64,
    policy: OffsetPolicy,
) -> Result<Mixture> {
    if signal.sample_rate() != noise.sample_rate() {
        return Err(Error::InvalidInput(format!(
            "signal is {} Hz but noise is {} Hz",
            signal.sample_rate(),
            noise.sample_rate()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!(
            "snr_db must be finite, got {snr_db}"
        )));
    }
    let n = signal.len();
    if noise.len() < n && policy == OffsetPolicy::Error {
        return Err(Error::Length {
            noise_len: noise.len(),
            signal_len: n,
        });
    }
    let aligned: Vec<f64> = noise.samples().iter().copied().cycle().take(n).collect();
    let ps = signal.power();
    let pn = mean_square(&aligned);
    if ps <= 0.0 || !ps.is_finite() {
        return Err(Error::Degenerate(format!(
            "signal {} has zero power",
            signal.id()
        )));
    }
    if pn <= 0.0 || !pn.is_finite() {
        return Err(Error::Degenerate(format!(
            "noise {} has zero power",
            noise.id()
        )));
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = signal
        .samples()
        .iter()
        .zip(&aligned)
        .map(|(s, v)| s + gain * v)
        .collect();
    Ok(Mixture {
        mixed: Utterance::new(
            format!("{}+{}@{}dB", signal.id(), noise.id(), snr_db),
            samples,
            signal.sample_rate(),
        )?,
        gain,
        aligned_noise: aligned,
    })
}

/// SNR in dB of a signal against the scaled noise actually added.
pub fn measured_snr_db(signal: &[f64], scaled_noise: &[f64]) -> f64 {
    10.0 * (mean_square(signal) / mean_square(scaled_noise)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn utt(samples: Vec<f64>) -> Utterance {
        Utterance::new("u", samples, 16000).unwrap()
    }

    #[test]
    fn equal_power_zero_db_has_unit_gain() {
        let s = utt(vec![1.0, -1.0, 1.0, -1.0]);
        let n = utt(vec![-1.0, 1.0, 1.0, -1.0]);
        let m = mix_at_snr(&s, &n, 0.0, OffsetPolicy::Loop).unwrap();
        assert_eq!(m.gain, 1.0);
        assert_eq!(m.mixed.samples(), &[0.0, 0.0, 2.0, -2.0]);
    }

    #[test]
    fn snr_is_exact_and_mixture_is_additive() {
        let s = generate_noise(NoiseKind::BabbleSynth, 16000, 16000, 1).unwrap();
        for (kind, snr) in [
            (NoiseKind::White, 20.0),
            (NoiseKind::Pink, 15.0),
            (NoiseKind::Hum, 25.0),
        ] {
            let n = generate_noise(kind, 16000, 16000, 2).unwrap();
            let m = mix_at_snr(&s, &n, snr, OffsetPolicy::Loop).unwrap();
            let scaled: Vec<f64> = m.aligned_noise.iter().map(|v| m.gain * v).collect();
            assert!((measured_snr_db(s.samples(), &scaled) - snr).abs() <= 1e-6);
            for i in 0..s.len() {
                assert_eq!(
                    m.mixed.samples()[i],
                    s.samples()[i] + m.gain * m.aligned_noise[i]
                );
            }
            assert_eq!(m.mixed.len(), s.len());
        }
    }

    #[test]
    fn short_noise_loops_or_errors() {
        let s = utt(vec![0.5; 10]);
        let n = utt(vec![1.0, -1.0, 0.5]);
        let m = mix_at_snr(&s, &n, 10.0, OffsetPolicy::Loop).unwrap();
        assert_eq!(&m.aligned_noise[..6], &[1.0, -1.0, 0.5, 1.0, -1.0, 0.5]);
        assert!(matches!(
            mix_at_snr(&s, &n, 10.0, OffsetPolicy::Error),
            Err(Error::Length {
                noise_len: 3,
                signal_len: 10
            })
        ));
        let long = utt(vec![0.25; 20]);
        assert_eq!(
            mix_at_snr(&s, &long, 0.0, OffsetPolicy::Error)
                .unwrap()
                .aligned_noise
                .len(),
            10
        );
    }

    #[test]
    fn degenerate_and_mismatched_inputs() {
        let z = utt(vec![0.0; 8]);
        let n = utt(vec![1.0; 8]);
        assert!(matches!(
            mix_at_snr(&z, &n, 0.0, OffsetPolicy::Loop),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            mix_at_snr(&n, &z, 0.0, OffsetPolicy::Loop),
            Err(Error::Degenerate(_))
        ));
        let other = Utterance::new("o", vec![1.0; 8], 8000).unwrap();
        assert!(matches!(
            mix_at_snr(&n, &other, 0.0, OffsetPolicy::Loop),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn typical_snrs_are_valid_constraints() {
        for snr in [15.0, 20.0, 25.0] {
            assert!(NoiseConstraint::generated(NoiseKind::White, snr).is_ok());
        }
        assert!(NoiseConstraint::generated(NoiseKind::White, f64::NAN).is_err());
        assert!(
            NoiseConstraint::weighted("w", Noise::Generated(NoiseKind::White), 20.0, -1.0).is_err()
        );
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in NoiseKind::ALL {
            let a = generate_noise(kind, 4000, 16000, 5).unwrap();
            let b = generate_noise(kind, 4000, 16000, 5).unwrap();
            let c = generate_noise(kind, 4000, 16000, 6).unwrap();
            assert_eq!(a, b, "{kind}");
            assert_ne!(a, c, "{kind}");
            assert!(a.power() > 0.0);
            assert_eq!(kind.name().parse::<NoiseKind>().unwrap(), kind);
        }
        assert!(generate_noise(NoiseKind::White, 0, 16000, 1).is_err());
    }

    #[test]
    fn white_is_uniform_in_unit_interval() {
        let w = generate_noise(NoiseKind::White, 10000, 16000, 3).unwrap();
        assert!(w.samples().iter().all(|x| (-1.0..1.0).contains(x)));
    }

    /// Welch periodogram: Hann-windowed 1024-point segments, 50% overlap.
    fn welch(x: &[f64]) -> Vec<f64> {
        let n = 1024;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let win: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
            .collect();
        let mut acc = vec![0.0; n / 2 + 1];
        let mut count = 0;
        let mut start = 0;
        while start + n <= x.len() {
            let mut buf: Vec<Complex<f64>> = (0..n)
                .map(|i| Complex::new(x[start + i] * win[i], 0.0))
                .collect();
            fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
            count += 1;
            start += n / 2;
        }
        acc.iter().map(|a| a / count as f64).collect()
    }

    fn band_db(psd: &[f64], lo: f64, hi: f64) -> f64 {
        let bin = 16000.0 / 1024.0;
        let vals: Vec<f64> = (0..psd.len())
            .filter(|&k| k as f64 * bin >= lo && (k as f64 * bin) < hi)
            .map(|k| psd[k])
            .collect();
        10.0 * (vals.iter().sum::<f64>() / vals.len() as f64).log10()
    }

    #[test]
    fn pink_slope_is_minus_three_db_per_octave() {
        let p = generate_noise(NoiseKind::Pink, 16000 * 30, 16000, 7).unwrap();
        let psd = welch(p.samples());
        let bin = 16000.0 / 1024.0;
        // Least-squares fit of dB against log2(f) over 100 Hz..4 kHz.
        let pts: Vec<(f64, f64)> = (0..psd.len())
            .map(|k| (k as f64 * bin, psd[k]))
            .filter(|(f, _)| *f >= 100.0 && *f <= 4000.0)
            .map(|(f, p)| (f.log2(), 10.0 * p.log10()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 3.0).abs() <= 1.0, "slope {slope}");
    }

    #[test]
    fn white_is_flat_across_octaves() {
        let w = generate_noise(NoiseKind::White, 16000 * 30, 16000, 8).unwrap();
        let psd = welch(w.samples());
        let bands: Vec<f64> = [
            (125.0, 250.0),
            (250.0, 500.0),
            (500.0, 1000.0),
            (1000.0, 2000.0),
            (2000.0, 4000.0),
            (4000.0, 7900.0),
        ]
        .iter()
        .map(|&(lo, hi)| band_db(&psd, lo, hi))
        .collect();
        let mean = bands.iter().sum::<f64>() / bands.len() as f64;
        for b in bands {
            assert!((b - mean).abs() <= 1.5, "{b} vs {mean}");
        }
    }

    #[test]
    fn noise_spec_serializes_as_tagged_object() {
        let g: NoiseSpec = serde_json::from_str(r#"{"generator":"babble_synth"}"#).unwrap();
        assert_eq!(g, NoiseSpec::Generator(NoiseKind::BabbleSynth));
        let p: NoiseSpec = serde_json::from_str(r#"{"path":"noise/factory.wav"}"#).unwrap();
        assert_eq!(p.label(), "factory");
    }
}
