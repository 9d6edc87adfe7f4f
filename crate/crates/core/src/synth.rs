//! Resonator-shaped noise: the signal family behind both the synthetic
//! speakers and the babble generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Syllabic amplitude-modulation rate.
pub const MODULATION_HZ: f64 = 4.0;
/// Envelope value at the bottom of a modulation trough.
const ENVELOPE_FLOOR: f64 = 0.05;
const TARGET_RMS: f64 = 0.1;
const WARMUP: usize = 512;
const JITTER: f64 = 0.02;

/// Two-pole resonator with unity gain at DC.
#[derive(Debug, Clone)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, rate: f64) -> Self {
        let t = 1.0 / rate;
        let c = -(-2.0 * std::f64::consts::PI * bandwidth * t).exp();
        let b = 2.0
            * (-std::f64::consts::PI * bandwidth * t).exp()
            * (2.0 * std::f64::consts::PI * freq * t).cos();
        Self {
            a: 1.0 - b - c,
            b,
            c,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formant {
    pub freq: f64,
    pub bandwidth: f64,
}

/// Spectral identity of a synthetic talker: four resonances applied in
/// cascade to white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub formants: [Formant; 4],
}

const FORMANT_RANGES: [(f64, f64); 4] = [
    (250.0, 850.0),
    (850.0, 2300.0),
    (2300.0, 3300.0),
    (3300.0, 4500.0),
];

impl Voice {
    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let formants = FORMANT_RANGES.map(|(lo, hi)| Formant {
            freq: rng.gen_range(lo..hi),
            bandwidth: rng.gen_range(80.0..200.0),
        });
        Self { formants }
    }

    /// Renders `n_samples` of this voice: each resonance jittered by up to
    /// ±2%, white excitation, syllabic envelope at random phase, RMS 0.1.
    ///
    /// Formants above 45% of the sample rate are dropped.
    pub fn render(&self, n_samples: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut bank: Vec<Resonator> = self
            .formants
            .iter()
            .map(|f| {
                let jitter = rng.gen_range(1.0 - JITTER..=1.0 + JITTER);
                (f.freq * jitter, f.bandwidth)
            })
            .filter(|(freq, _)| *freq < 0.45 * rate)
            .map(|(freq, bw)| Resonator::new(freq, bw, rate))
            .collect();
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);

        let mut shaped = |x: f64| bank.iter_mut().fold(x, |acc, r| r.tick(acc));
        for _ in 0..WARMUP {
            shaped(rng.gen_range(-1.0..1.0));
        }
        let mut out: Vec<f64> = (0..n_samples)
            .map(|i| {
                let t = i as f64 / rate;
                let s = 0.5 * (1.0 + (std::f64::consts::TAU * MODULATION_HZ * t + phase).sin());
                let env = ENVELOPE_FLOOR + (1.0 - ENVELOPE_FLOOR) * s * s;
                env * shaped(rng.gen_range(-1.0..1.0))
            })
            .collect();
        normalize_rms(&mut out, TARGET_RMS);
        out
    }
}

pub(crate) fn normalize_rms(samples: &mut [f64], target: f64) {
    let power = samples.iter().map(|x| x * x).sum::<f64>() / samples.len().max(1) as f64;
    if power > 0.0 {
        let g = target / power.sqrt();
        samples.iter_mut().for_each(|x| *x *= g);
    }
}
