//! Experiment configuration: one JSON document describing corpus, features,
//! selection, back-end, test conditions and outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::SynthCorpusSpec;
use crate::dsp::{FrameConfig, MfccConfig};
use crate::error::{Error, Result};
use crate::models::Backend;
use crate::noise::{NoiseKind, NoiseSpec, OffsetPolicy};
use crate::selection::{FusionParams, SelectionMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// Rendered in memory from a seed.
    Synth(SynthCorpusSpec),
    /// A `manifest.json` listing WAV files, relative to the config file.
    Manifest(PathBuf),
}

/// How each speaker's utterances are divided. The last
/// `background_speakers` speakers only train the UBM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_per_speaker: usize,
    pub test_per_speaker: usize,
    pub background_speakers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub noise: NoiseSpec,
    pub snr_db: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default)]
    pub method: SelectionMethod,
    pub w: f64,
    /// Fused-score parameters; absent means the constraint weights and no
    /// bias.
    #[serde(default)]
    pub params: Option<FusionParams>,
    /// Raise `w` in 0.05 steps after an empty intersection.
    #[serde(default)]
    pub retry: bool,
    #[serde(default)]
    pub offset_policy: OffsetPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backend: Backend,
    /// Codebook size for VQ, component count for GMM-UBM.
    pub size: usize,
    #[serde(default = "default_relevance")]
    pub relevance: f64,
    #[serde(default = "default_gmm_iters")]
    pub max_iters: usize,
    #[serde(default = "default_var_floor")]
    pub var_floor_factor: f64,
}

fn default_relevance() -> f64 {
    crate::models::gmm::DEFAULT_RELEVANCE
}

fn default_gmm_iters() -> usize {
    crate::models::gmm::DEFAULT_MAX_ITERS
}

fn default_var_floor() -> f64 {
    crate::models::gmm::DEFAULT_VAR_FLOOR_FACTOR
}

/// A test environment: clean when `noise` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub snr_db: Option<f64>,
}

impl ConditionConfig {
    pub fn clean() -> Self {
        Self {
            noise: None,
            snr_db: None,
        }
    }

    pub fn noisy(noise: NoiseSpec, snr_db: f64) -> Self {
        Self {
            noise: Some(noise),
            snr_db: Some(snr_db),
        }
    }

    /// `clean`, or `<noise>_<snr>db`.
    pub fn label(&self) -> String {
        match (&self.noise, self.snr_db) {
            (Some(n), Some(snr)) => format!("{}_{}db", n.label(), snr),
            _ => "clean".to_string(),
        }
    }
}

/// Where frame selection is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    None,
    Train,
    Test,
    Both,
}

impl PhaseMode {
    pub const ALL: [PhaseMode; 4] = [
        PhaseMode::None,
        PhaseMode::Train,
        PhaseMode::Test,
        PhaseMode::Both,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhaseMode::None => "none",
            PhaseMode::Train => "train",
            PhaseMode::Test => "test",
            PhaseMode::Both => "both",
        }
    }

    pub fn selects_train(self) -> bool {
        matches!(self, PhaseMode::Train | PhaseMode::Both)
    }

    pub fn selects_test(self) -> bool {
        matches!(self, PhaseMode::Test | PhaseMode::Both)
    }
}

impl fmt::Display for PhaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every derived seed.
    pub seed: u64,
    pub corpus: CorpusSource,
    pub split: SplitConfig,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub mfcc: MfccConfig,
    pub constraints: Vec<ConstraintConfig>,
    pub selection: SelectionConfig,
    pub model: ModelConfig,
    pub conditions: Vec<ConditionConfig>,
    pub phase_modes: Vec<PhaseMode>,
    /// Relative to the config file.
    pub output_dir: PathBuf,
}

/// One violated invariant, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Default for ExperimentConfig {
    /// Ten evaluation speakers and ten background speakers, three constraint
    /// noises at 20 dB, four unseen test noises at 15/20/25 dB plus clean.
    fn default() -> Self {
        let test_noises = [
            NoiseKind::Brown,
            NoiseKind::Hum,
            NoiseKind::Impulsive,
            NoiseKind::Bandpass,
        ];
        let mut conditions = vec![ConditionConfig::clean()];
        for kind in test_noises {
            for snr in [15.0, 20.0, 25.0] {
                conditions.push(ConditionConfig::noisy(NoiseSpec::Generator(kind), snr));
            }
        }
        Self {
            seed: 1,
            corpus: CorpusSource::Synth(SynthCorpusSpec {
                n_speakers: 20,
                utterances_per_speaker: 10,
                duration_s: 2.0,
                sample_rate: crate::audio::REFERENCE_RATE,
                seed: 1,
            }),
            split: SplitConfig {
                train_per_speaker: 8,
                test_per_speaker: 2,
                background_speakers: 10,
            },
            frame: FrameConfig::default(),
            mfcc: MfccConfig::default(),
            constraints: [NoiseKind::White, NoiseKind::Pink, NoiseKind::BabbleSynth]
                .into_iter()
                .map(|k| ConstraintConfig {
                    noise: NoiseSpec::Generator(k),
                    snr_db: 20.0,
                    weight: 1.0,
                })
                .collect(),
            selection: SelectionConfig {
                method: SelectionMethod::Intersection,
                w: 0.9,
                params: None,
                retry: true,
                offset_policy: OffsetPolicy::Loop,
            },
            model: ModelConfig {
                backend: Backend::GmmUbm,
                size: 32,
                relevance: default_relevance(),
                max_iters: default_gmm_iters(),
                var_floor_factor: default_var_floor(),
            },
            conditions,
            phase_modes: PhaseMode::ALL.to_vec(),
            output_dir: PathBuf::from("nifs-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("experiment config", e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Every violated invariant; paths are resolved against `base_dir`.
    pub fn validate(&self, base_dir: &Path) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut push = |field: &str, message: String| {
            issues.push(ConfigIssue {
                field: field.to_string(),
                message,
            })
        };

        let mut rate = crate::audio::REFERENCE_RATE;
        let mut speakers: Option<(usize, usize)> = None;
        match &self.corpus {
            CorpusSource::Synth(spec) => {
                if let Err(e) = spec.validate() {
                    push("corpus.synth", e.to_string());
                }
                rate = spec.sample_rate;
                speakers = Some((spec.n_speakers, spec.utterances_per_speaker));
            }
            CorpusSource::Manifest(p) => {
                let path = base_dir.join(p);
                match crate::audio::CorpusManifest::load(&path) {
                    Ok(m) => {
                        rate = m.sample_rate;
                        let dir = path.parent().unwrap_or(Path::new("."));
                        for (i, s) in m.speakers.iter().enumerate() {
                            for (j, u) in s.utterances.iter().enumerate() {
                                if !dir.join(u).is_file() {
                                    push(
                                        &format!("corpus.manifest.speakers[{i}].utterances[{j}]"),
                                        format!("missing audio file {}", dir.join(u).display()),
                                    );
                                }
                            }
                        }
                        let min_utts = m
                            .speakers
                            .iter()
                            .map(|s| s.utterances.len())
                            .min()
                            .unwrap_or(0);
                        speakers = Some((m.speakers.len(), min_utts));
                    }
                    Err(e) => push("corpus.manifest", e.to_string()),
                }
            }
        }

        let s = &self.split;
        if s.train_per_speaker == 0 || s.test_per_speaker == 0 {
            push(
                "split",
                "train_per_speaker and test_per_speaker must be positive".into(),
            );
        }
        if let Some((n_spk, n_utt)) = speakers {
            if s.background_speakers >= n_spk {
                push(
                    "split.background_speakers",
                    format!(
                        "{} background speakers leave no evaluation speakers out of {n_spk}",
                        s.background_speakers
                    ),
                );
            } else if n_spk - s.background_speakers < 2 {
                push(
                    "split.background_speakers",
                    "at least two evaluation speakers are needed for non-target trials".into(),
                );
            }
            if s.train_per_speaker + s.test_per_speaker > n_utt {
                push(
                    "split",
                    format!(
                        "{} train + {} test utterances exceed the {n_utt} available per speaker",
                        s.train_per_speaker, s.test_per_speaker
                    ),
                );
            }
        }
        if self.model.backend == Backend::GmmUbm && s.background_speakers == 0 {
            push(
                "split.background_speakers",
                "the gmm_ubm back-end needs background speakers for its UBM".into(),
            );
        }

        if let Err(e) = self.frame.validate() {
            push("frame", e.to_string());
        } else if let Err(e) = self.mfcc.validate(self.frame.frame_len_samples(rate), rate) {
            push("mfcc", e.to_string());
        }

        if self.constraints.is_empty() {
            push(
                "constraints",
                "at least one noise constraint is required".into(),
            );
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.snr_db.is_finite() {
                push(
                    &format!("constraints[{i}].snr_db"),
                    format!("must be finite, got {}", c.snr_db),
                );
            }
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                push(
                    &format!("constraints[{i}].weight"),
                    format!("must be finite and >= 0, got {}", c.weight),
                );
            }
            check_noise(
                &c.noise,
                base_dir,
                rate,
                &format!("constraints[{i}].noise"),
                &mut push,
            );
        }
        let mut ids: Vec<String> = self.constraints.iter().map(|c| c.noise.label()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            push("constraints", "constraint noises must be distinct".into());
        }

        let sel = &self.selection;
        if !(sel.w > 0.0 && sel.w <= 1.0) {
            push("selection.w", format!("must be in (0, 1], got {}", sel.w));
        }
        if let Some(p) = &sel.params {
            if p.weights.len() != self.constraints.len() {
                push(
                    "selection.params.weights",
                    format!(
                        "{} weights for {} constraints",
                        p.weights.len(),
                        self.constraints.len()
                    ),
                );
            }
            if let Err(e) = p.validate() {
                push("selection.params", e.to_string());
            }
        }

        let m = &self.model;
        if m.size == 0 {
            push("model.size", "must be at least 1".into());
        }
        if !(m.relevance > 0.0 && m.relevance.is_finite()) {
            push(
                "model.relevance",
                format!("must be positive, got {}", m.relevance),
            );
        }
        if m.max_iters == 0 {
            push("model.max_iters", "must be at least 1".into());
        }
        if !(m.var_floor_factor > 0.0 && m.var_floor_factor < 1.0) {
            push(
                "model.var_floor_factor",
                format!("must be in (0, 1), got {}", m.var_floor_factor),
            );
        }

        if self.conditions.is_empty() {
            push(
                "conditions",
                "at least one test condition is required".into(),
            );
        }
        for (i, c) in self.conditions.iter().enumerate() {
            match (&c.noise, c.snr_db) {
                (None, None) => {}
                (Some(n), Some(snr)) => {
                    if !snr.is_finite() {
                        push(
                            &format!("conditions[{i}].snr_db"),
                            format!("must be finite, got {snr}"),
                        );
                    }
                    check_noise(
                        n,
                        base_dir,
                        rate,
                        &format!("conditions[{i}].noise"),
                        &mut push,
                    );
                }
                _ => push(
                    &format!("conditions[{i}]"),
                    "noise and snr_db must be given together".into(),
                ),
            }
        }
        let mut labels: Vec<String> = self.conditions.iter().map(ConditionConfig::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            push("conditions", "condition labels must be distinct".into());
        }

        if self.phase_modes.is_empty() {
            push("phase_modes", "at least one phase mode is required".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            push("output_dir", "must not be empty".into());
        }
        issues
    }

    /// [`validate`](Self::validate), folded into one error.
    pub fn check(&self, base_dir: &Path) -> Result<()> {
        let issues = self.validate(base_dir);
        if issues.is_empty() {
            return Ok(());
        }
        Err(Error::InvalidInput(
            issues
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        ))
    }
}

fn check_noise(
    spec: &NoiseSpec,
    base_dir: &Path,
    rate: u32,
    field: &str,
    push: &mut impl FnMut(&str, String),
) {
    if let NoiseSpec::Path(p) = spec {
        let path = base_dir.join(p);
        if !path.is_file() {
            push(
                field,
                format!("noise file {} does not exist", path.display()),
            );
            return;
        }
        match crate::audio::read_wav(&path) {
            Ok(u) if u.sample_rate() != rate => push(
                field,
                format!(
                    "{} is sampled at {} Hz, corpus at {rate} Hz",
                    path.display(),
                    u.sample_rate()
                ),
            ),
            Ok(_) => {}
            Err(e) => push(field, e.to_string()),
        }
    }
}
