//! PCM audio I/O and the synthetic speaker corpus.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::synth::Voice;

/// Reference sample rate of the pipeline.
pub const REFERENCE_RATE: u32 = 16_000;

/// 16-bit full scale. Dividing by 2^15 keeps -1.0 exactly representable.
const PCM16_SCALE: f64 = 32768.0;

/// A mono utterance with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    id: String,
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Utterance {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::InvalidInput(format!(
                "utterance {id} has no samples"
            )));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput(format!(
                "utterance {id} has sample rate 0"
            )));
        }
        Ok(Self {
            id,
            samples,
            sample_rate,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean square over the whole utterance.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

pub(crate) fn mean_square(samples: &[f64]) -> f64 {
    samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64
}

/// Reads a mono RIFF/WAVE file, 16-bit PCM or 32-bit IEEE float.
///
/// The utterance id is the file stem.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Utterance> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedLayout {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported encoding {fmt:?} {bits}-bit"),
            })
        }
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if samples.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "no samples".into(),
        });
    }
    Utterance::new(id, samples, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Writes `utt` as 16-bit PCM mono and returns how many samples had to be
/// clipped into [-1, 1].
pub fn write_wav(utt: &Utterance, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    if let Some(i) = utt.samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sample {i} of {} is not finite",
            utt.id
        )));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: utt.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    let mut clipped = 0;
    for &x in &utt.samples {
        if x.abs() > 1.0 {
            clipped += 1;
        }
        let q = (x.clamp(-1.0, 1.0) * PCM16_SCALE)
            .round()
            .clamp(-PCM16_SCALE, PCM16_SCALE - 1.0) as i16;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))?;
    Ok(clipped)
}

/// Size and seed of a synthetic speaker corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    pub seed: u64,
}

fn default_rate() -> u32 {
    REFERENCE_RATE
}

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.utterances_per_speaker == 0 {
            return Err(Error::InvalidInput(
                "corpus needs at least one speaker and one utterance".into(),
            ));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("sample_rate must be positive".into()));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.duration_s * f64::from(self.sample_rate))
            .round()
            .max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    pub id: String,
    /// Paths relative to the manifest's directory.
    pub utterances: Vec<String>,
}

/// Speaker-to-file listing stored as `manifest.json` next to the audio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub speakers: Vec<SpeakerEntry>,
    pub sample_rate: u32,
    pub seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::json("corpus manifest", e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn speaker_id(i: usize) -> String {
    format!("spk{i:03}")
}

/// Renders the corpus in memory as `(speaker id, utterances)` pairs.
pub fn synth_speakers(spec: &SynthCorpusSpec) -> Result<Vec<(String, Vec<Utterance>)>> {
    spec.validate()?;
    let n = spec.n_samples();
    let rate = f64::from(spec.sample_rate);
    (0..spec.n_speakers)
        .map(|i| {
            let voice = Voice::draw(&mut seed::rng(seed::derive_labeled(
                spec.seed, "speaker", i as u64,
            )));
            let spk = speaker_id(i);
            let utts = (0..spec.utterances_per_speaker)
                .map(|j| {
                    let mut rng = seed::rng(seed::derive(
                        spec.seed,
                        &[seed::label_hash("utterance"), i as u64, j as u64],
                    ));
                    Utterance::new(
                        format!("{spk}_utt{j:02}"),
                        voice.render(n, rate, &mut rng),
                        spec.sample_rate,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((spk, utts))
        })
        .collect()
}

/// Writes the synthetic corpus as WAV files plus `manifest.json` under
/// `out_dir`.
pub fn generate_synth_corpus(
    spec: &SynthCorpusSpec,
    out_dir: impl AsRef<Path>,
) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    let speakers = synth_speakers(spec)?;
    let mut entries = Vec::with_capacity(speakers.len());
    for (spk, utts) in speakers {
        let dir = out_dir.join(&spk);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut rel = Vec::with_capacity(utts.len());
        for (j, utt) in utts.iter().enumerate() {
            let name = format!("utt{j:02}.wav");
            write_wav(utt, dir.join(&name))?;
            rel.push(format!("{spk}/{name}"));
        }
        entries.push(SpeakerEntry {
            id: spk,
            utterances: rel,
        });
    }
    let manifest = CorpusManifest {
        speakers: entries,
        sample_rate: spec.sample_rate,
        seed: spec.seed,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Resolves manifest-relative paths.
pub fn manifest_paths(manifest_dir: &Path, entry: &SpeakerEntry) -> Vec<PathBuf> {
    entry
        .utterances
        .iter()
        .map(|p| manifest_dir.join(p))
        .collect()
}
