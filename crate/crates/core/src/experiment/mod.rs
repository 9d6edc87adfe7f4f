//! The verification experiment: corpus split, train/test frame selection,
//! enrollment, trial scoring and evaluation under each test condition.

pub mod cache;
pub mod config;
pub mod run;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

pub use cache::CachedSource;
pub use config::{
    ConditionConfig, ConfigIssue, ConstraintConfig, CorpusSource, ExperimentConfig, ModelConfig,
    PhaseMode, SelectionConfig, SplitConfig,
};
pub use run::{cmd_run, cmd_sweep, RunSummary, SweepRecord};

use crate::audio::{manifest_paths, read_wav, synth_speakers, CorpusManifest, Utterance};
use crate::dsp::FeatureSource;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, ScoredTrial, Trial};
use crate::features::FeatureMatrix;
use crate::models::{
    map_adapt_means, train_gmm, train_vq, Backend, Gmm, GmmTrainConfig, SpeakerModel,
};
use crate::nifs::{nifs_select_with, NifsConfig, NifsOutcome};
use crate::noise::{mix_at_snr, Noise, NoiseConstraint};
use crate::seed;
use crate::selection::SelectionResult;

/// Share of trials allowed to fail before a condition is abandoned.
pub const MAX_FAILED_TRIAL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerData {
    pub id: String,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Evaluation speakers with their train/test split, plus the pooled
/// background utterances used for the UBM.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sample_rate: u32,
    pub speakers: Vec<SpeakerData>,
    pub background: Vec<Utterance>,
}

impl Corpus {
    pub fn load(source: &CorpusSource, split: &SplitConfig, base_dir: &Path) -> Result<Self> {
        let (rate, all) = match source {
            CorpusSource::Synth(spec) => (spec.sample_rate, synth_speakers(spec)?),
            CorpusSource::Manifest(p) => {
                let path = base_dir.join(p);
                let manifest = CorpusManifest::load(&path)?;
                let dir = path.parent().unwrap_or(Path::new("."));
                let speakers = manifest
                    .speakers
                    .iter()
                    .map(|entry| {
                        let utts = manifest_paths(dir, entry)
                            .iter()
                            .zip(&entry.utterances)
                            .map(|(p, rel)| {
                                let u = read_wav(p)?;
                                if u.sample_rate() != manifest.sample_rate {
                                    return Err(Error::InvalidInput(format!(
                                        "{} is {} Hz, corpus is {} Hz",
                                        p.display(),
                                        u.sample_rate(),
                                        manifest.sample_rate
                                    )));
                                }
                                Ok(u.with_id(rel.trim_end_matches(".wav")))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok((entry.id.clone(), utts))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (manifest.sample_rate, speakers)
            }
        };
        Self::split(rate, all, split)
    }

    pub fn split(
        sample_rate: u32,
        speakers: Vec<(String, Vec<Utterance>)>,
        split: &SplitConfig,
    ) -> Result<Self> {
        if split.background_speakers >= speakers.len() {
            return Err(Error::InvalidInput(format!(
                "{} background speakers leave none of {} for evaluation",
                split.background_speakers,
                speakers.len()
            )));
        }
        let n_eval = speakers.len() - split.background_speakers;
        let need = split.train_per_speaker + split.test_per_speaker;
        let mut eval = Vec::with_capacity(n_eval);
        let mut background = Vec::new();
        for (i, (id, mut utts)) in speakers.into_iter().enumerate() {
            if i >= n_eval {
                background.extend(utts);
                continue;
            }
            if utts.len() < need {
                return Err(Error::InvalidInput(format!(
                    "speaker {id} has {} utterances, split needs {need}",
                    utts.len()
                )));
            }
            utts.truncate(need);
            let test = utts.split_off(split.train_per_speaker);
            eval.push(SpeakerData {
                id,
                train: utts,
                test,
            });
        }
        Ok(Self {
            sample_rate,
            speakers: eval,
            background,
        })
    }
}

/// A resolved test condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub label: String,
    /// Noise and SNR; `None` for clean.
    pub noise: Option<(Noise, f64)>,
}

/// Per-speaker training features after optional frame selection.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub speakers: Vec<(String, FeatureMatrix)>,
    /// Selection record of every training utterance, when selection ran.
    pub selections: Vec<(String, SelectionResult)>,
}

/// Features of one test utterance, or why they are unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct TestItem {
    pub id: String,
    pub speaker: String,
    pub features: std::result::Result<FeatureMatrix, String>,
    pub selection: Option<SelectionResult>,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    corpus: Corpus,
    source: CachedSource,
    constraints: Vec<NoiseConstraint>,
    conditions: Vec<Condition>,
}

impl Pipeline {
    /// Loads the corpus and resolves every noise. `cache_dir` enables the
    /// on-disk feature cache.
    pub fn new(cfg: ExperimentConfig, base_dir: &Path, cache_dir: Option<PathBuf>) -> Result<Self> {
        cfg.check(base_dir)?;
        let corpus = Corpus::load(&cfg.corpus, &cfg.split, base_dir)?;
        Self::with_corpus(cfg, corpus, base_dir, cache_dir)
    }

    pub fn with_corpus(
        cfg: ExperimentConfig,
        corpus: Corpus,
        base_dir: &Path,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let source = CachedSource::mfcc(&cfg.frame, &cfg.mfcc, corpus.sample_rate, cache_dir)?;
        let constraints = cfg
            .constraints
            .iter()
            .map(|c| {
                NoiseConstraint::weighted(
                    c.noise.label(),
                    c.noise.resolve(base_dir)?,
                    c.snr_db,
                    c.weight,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let conditions = cfg
            .conditions
            .iter()
            .map(|c| {
                let noise = match (&c.noise, c.snr_db) {
                    (Some(n), Some(snr)) => Some((n.resolve(base_dir)?, snr)),
                    _ => None,
                };
                Ok(Condition {
                    label: c.label(),
                    noise,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            corpus,
            source,
            constraints,
            conditions,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    pub fn constraints(&self) -> &[NoiseConstraint] {
        &self.constraints
    }

    pub fn source(&self) -> &CachedSource {
        &self.source
    }

    pub fn features(&self, utt: &Utterance) -> Result<FeatureMatrix> {
        self.source.features(utt)
    }

    fn nifs_config(&self, w: f64) -> NifsConfig {
        let s = &self.cfg.selection;
        NifsConfig {
            method: s.method,
            w,
            params: s.params.clone(),
            retry: s.retry,
            offset_policy: s.offset_policy,
        }
    }

    /// Runs frame selection on `utt`. `scope` separates the seeds of the
    /// training side from each test condition.
    pub fn select(&self, utt: &Utterance, w: f64, scope: &str) -> Result<NifsOutcome> {
        let seed = seed::derive_labeled(self.cfg.seed, &format!("select/{scope}/{}", utt.id()), 0);
        nifs_select_with(
            utt,
            &self.constraints,
            &self.source,
            &self.nifs_config(w),
            seed,
        )
    }

    /// Training features per speaker; frames are selected at `select_w`
    /// when given.
    pub fn training_set(&self, select_w: Option<f64>) -> Result<TrainingSet> {
        let per_speaker = self
            .corpus
            .speakers
            .par_iter()
            .map(|spk| {
                let utts = spk
                    .train
                    .par_iter()
                    .map(|u| match select_w {
                        Some(w) => {
                            let out = self
                                .select(u, w, "train")
                                .map_err(|e| e.at_stage("select", u.id()))?;
                            Ok((out.features, Some((u.id().to_string(), out.selection))))
                        }
                        None => Ok((
                            self.features(u)
                                .map_err(|e| e.at_stage("extract", u.id()))?,
                            None,
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let feats = FeatureMatrix::concat(&spk.id, utts.iter().map(|(f, _)| f))?;
                Ok((
                    (spk.id.clone(), feats),
                    utts.into_iter().filter_map(|(_, s)| s).collect::<Vec<_>>(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = TrainingSet {
            speakers: Vec::with_capacity(per_speaker.len()),
            selections: Vec::new(),
        };
        for (s, sel) in per_speaker {
            set.speakers.push(s);
            set.selections.extend(sel);
        }
        Ok(set)
    }

    /// UBM from the pooled, unselected background features.
    pub fn train_ubm(&self, model: &ModelConfig) -> Result<Arc<Gmm>> {
        let feats = self
            .corpus
            .background
            .par_iter()
            .map(|u| self.features(u).map_err(|e| e.at_stage("extract", u.id())))
            .collect::<Result<Vec<_>>>()?;
        let pooled = FeatureMatrix::concat("ubm", &feats)?;
        let cfg = GmmTrainConfig {
            max_iters: model.max_iters,
            var_floor_factor: model.var_floor_factor,
            ..GmmTrainConfig::new(model.size, seed::derive_labeled(self.cfg.seed, "ubm", 0))
        };
        let fit = train_gmm(&pooled, &cfg).map_err(|e| e.at_stage("train_ubm", "background"))?;
        Ok(Arc::new(fit.gmm))
    }

    /// One model per evaluation speaker. GMM-UBM needs the UBM.
    pub fn enroll(
        &self,
        model: &ModelConfig,
        set: &TrainingSet,
        ubm: Option<&Arc<Gmm>>,
    ) -> Result<Vec<SpeakerModel>> {
        set.speakers
            .par_iter()
            .map(|(id, feats)| {
                let m = match model.backend {
                    Backend::Vq => {
                        let s = seed::derive_labeled(self.cfg.seed, &format!("vq/{id}"), 0);
                        let cb = train_vq(
                            feats,
                            model.size,
                            s,
                            crate::models::vq::DEFAULT_MAX_ITERS,
                            crate::models::vq::DEFAULT_TOL,
                        )?;
                        SpeakerModel::vq(id.clone(), cb)
                    }
                    Backend::GmmUbm => {
                        let ubm = ubm.ok_or_else(|| {
                            Error::InvalidInput("gmm_ubm enrollment needs a UBM".into())
                        })?;
                        SpeakerModel::gmm_map(
                            id.clone(),
                            map_adapt_means(ubm, feats, model.relevance)?,
                            ubm.clone(),
                        )?
                    }
                };
                Ok(m)
            })
            .map(|r: Result<SpeakerModel>| {
                r.map_err(|e| e.at_stage("enroll", model.backend.name()))
            })
            .collect()
    }

    /// Test utterances as heard under `cond`, each paired with its speaker.
    pub fn condition_audio(&self, cond: &Condition) -> Result<Vec<(String, Utterance)>> {
        self.corpus
            .speakers
            .iter()
            .flat_map(|s| s.test.iter().map(move |u| (s, u)))
            .map(|(s, u)| {
                let heard = match &cond.noise {
                    None => u.clone(),
                    Some((noise, snr)) => {
                        let seed = seed::derive_labeled(
                            self.cfg.seed,
                            &format!("condition/{}/{}", cond.label, u.id()),
                            0,
                        );
                        let n = noise.render(u.len(), u.sample_rate(), seed)?;
                        mix_at_snr(u, &n, *snr, self.cfg.selection.offset_policy)?
                            .mixed
                            .with_id(u.id())
                    }
                };
                Ok((s.id.clone(), heard))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e: Error| e.at_stage("mix", &cond.label))
    }

    /// Test features under `cond`, selected at `select_w` when given. A
    /// failing utterance is recorded, not fatal.
    pub fn test_set(&self, cond: &Condition, select_w: Option<f64>) -> Result<Vec<TestItem>> {
        let audio = self.condition_audio(cond)?;
        Ok(audio
            .par_iter()
            .map(|(spk, u)| {
                let (features, selection) = match select_w {
                    Some(w) => match self.select(u, w, &cond.label) {
                        Ok(out) => (Ok(out.features), Some(out.selection)),
                        Err(e) => (Err(e.to_string()), None),
                    },
                    None => (self.features(u).map_err(|e| e.to_string()), None),
                };
                TestItem {
                    id: u.id().to_string(),
                    speaker: spk.clone(),
                    features,
                    selection,
                }
            })
            .collect())
    }

    /// Every test utterance against every enrolled speaker, test-major.
    pub fn trials(&self) -> Vec<Trial> {
        let mut out = Vec::new();
        for s in &self.corpus.speakers {
            for u in &s.test {
                for m in &self.corpus.speakers {
                    out.push(Trial {
                        model_id: m.id.clone(),
                        test_path: u.id().to_string(),
                        is_target: m.id == s.id,
                    });
                }
            }
        }
        out
    }

    /// Scores all trials. Trials whose test features or score failed are
    /// dropped and counted; more than 10% failures abort.
    pub fn score(
        &self,
        models: &[SpeakerModel],
        tests: &[TestItem],
    ) -> Result<(Vec<ScoredTrial>, usize)> {
        let pairs: Vec<(&TestItem, &SpeakerModel)> = tests
            .iter()
            .flat_map(|t| models.iter().map(move |m| (t, m)))
            .collect();
        let results: Vec<std::result::Result<ScoredTrial, String>> = pairs
            .par_iter()
            .map(|(t, m)| {
                let feats = t.features.as_ref().map_err(Clone::clone)?;
                let score = m.score(feats).map_err(|e| e.to_string())?;
                Ok(ScoredTrial {
                    model_id: m.id.clone(),
                    test_path: t.id.clone(),
                    is_target: m.id == t.speaker,
                    score,
                })
            })
            .collect();
        let total = results.len();
        let mut scored = Vec::with_capacity(total);
        let mut failures = Vec::new();
        for (r, (t, m)) in results.into_iter().zip(&pairs) {
            match r {
                Ok(s) => scored.push(s),
                Err(e) => failures.push(format!("{} vs {}: {e}", t.id, m.id)),
            }
        }
        if failures.len() as f64 > MAX_FAILED_TRIAL_FRACTION * total as f64 {
            return Err(Error::Stage {
                stage: "score",
                item: format!("{} of {total} trials", failures.len()),
                source: Box::new(Error::InvalidInput(failures[0].clone())),
            });
        }
        for f in &failures {
            log::warn!("trial failed: {f}");
        }
        Ok((scored, failures.len()))
    }

    pub fn evaluate(
        &self,
        cond: &Condition,
        phase: PhaseMode,
        backend: Backend,
        models: &[SpeakerModel],
        tests: &[TestItem],
    ) -> Result<(EvalReport, Vec<ScoredTrial>)> {
        let (scored, failed) = self.score(models, tests)?;
        let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
        let labels: Vec<bool> = scored.iter().map(|s| s.is_target).collect();
        let report = EvalReport::from_scores(
            &cond.label,
            phase.name(),
            backend.name(),
            &scores,
            &labels,
            failed,
        )
        .map_err(|e| e.at_stage("eval", &cond.label))?;
        Ok((report, scored))
    }

    /// Reports for every condition under one phase mode at selection
    /// threshold `w`, with the configured back-end.
    pub fn run_phase(
        &self,
        phase: PhaseMode,
        w: f64,
        model: &ModelConfig,
    ) -> Result<Vec<EvalReport>> {
        let ubm = match model.backend {
            Backend::GmmUbm => Some(self.train_ubm(model)?),
            Backend::Vq => None,
        };
        let set = self.training_set(phase.selects_train().then_some(w))?;
        let models = self.enroll(model, &set, ubm.as_ref())?;
        self.conditions
            .iter()
            .map(|c| {
                let tests = self.test_set(c, phase.selects_test().then_some(w))?;
                Ok(self.evaluate(c, phase, model.backend, &models, &tests)?.0)
            })
            .collect()
    }
}
