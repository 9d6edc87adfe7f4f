//! Full runs and threshold sweeps with their on-disk artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! cache/features/   content-addressed feature cache
//! models/           ubm.json, baseline/<spk>.json, selected/<spk>.json
//! selections/       train/<utt>.json, <condition>/<utt>.json
//! trials.csv        model_id,test_path,is_target
//! scores/<phase>/<condition>.csv
//! reports/<phase>/<condition>.json and .det.csv
//! run_log.jsonl     one record per stage with its wall time
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, PhaseMode, Pipeline, TestItem, TrainingSet};
use crate::error::{Error, Result};
use crate::eval::{write_scores, write_trials, EvalReport};
use crate::models::{Backend, Gmm, ModelFile, SpeakerModel};
use crate::selection::{sweep_threshold, SelectionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub item: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub reports: Vec<(PathBuf, EvalReport)>,
    pub stages: Vec<StageTiming>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

/// Stage timer that mirrors every record to the log.
struct StageLog {
    stages: Vec<StageTiming>,
}

impl StageLog {
    fn time<T>(&mut self, stage: &str, item: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        match &out {
            Ok(_) => log::info!("stage {stage} [{item}] done in {seconds:.3}s"),
            Err(e) => log::error!("stage {stage} [{item}] failed after {seconds:.3}s: {e}"),
        }
        self.stages.push(StageTiming {
            stage: stage.into(),
            item: item.into(),
            seconds,
        });
        out
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for s in &self.stages {
            text += &serde_json::to_string(s).map_err(|e| Error::json("run log", e))?;
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// File-name-safe form of an utterance or condition id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn save_selections(dir: &Path, selections: &[(String, SelectionResult)]) -> Result<()> {
    create_dir(dir)?;
    selections.par_iter().try_for_each(|(id, sel)| {
        write_text(
            &dir.join(format!("{}.json", file_stem(id))),
            &(sel.to_json()? + "\n"),
        )
    })
}

fn save_models(dir: &Path, models: &[SpeakerModel]) -> Result<()> {
    create_dir(dir)?;
    models.iter().try_for_each(|m| {
        m.to_file("../ubm.json")
            .save(dir.join(format!("{}.json", file_stem(&m.id))))
    })
}

/// Resolves the output directory of `cfg` against `base_dir`.
pub fn output_dir(cfg: &ExperimentConfig, base_dir: &Path) -> PathBuf {
    base_dir.join(&cfg.output_dir)
}

/// Extract → select → train/enroll → score → evaluate for every phase mode
/// and condition of `cfg`. Paths in `cfg` are relative to `base_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, base_dir: &Path) -> Result<RunSummary> {
    let out = output_dir(cfg, base_dir);
    create_dir(&out)?;
    let mut log = StageLog { stages: Vec::new() };
    let p = log.time("load", "corpus", || {
        Pipeline::new(
            cfg.clone(),
            base_dir,
            Some(out.join("cache").join("features")),
        )
    })?;
    let w = cfg.selection.w;
    let model = &cfg.model;

    write_trials(out.join("trials.csv"), &p.trials())?;

    let ubm: Option<Arc<Gmm>> = match model.backend {
        Backend::GmmUbm => {
            let ubm = log.time("train_ubm", "background", || p.train_ubm(model))?;
            create_dir(&out.join("models"))?;
            ModelFile::gmm("ubm", &ubm).save(out.join("models").join("ubm.json"))?;
            Some(ubm)
        }
        Backend::Vq => None,
    };

    // Models and test sets are shared between phase modes that agree on
    // the side in question.
    let mut models: BTreeMap<bool, Vec<SpeakerModel>> = BTreeMap::new();
    for selected in [false, true] {
        if !cfg
            .phase_modes
            .iter()
            .any(|m| m.selects_train() == selected)
        {
            continue;
        }
        let name = if selected { "selected" } else { "baseline" };
        let set: TrainingSet = log.time(
            if selected {
                "select_train"
            } else {
                "extract_train"
            },
            name,
            || p.training_set(selected.then_some(w)),
        )?;
        if selected {
            save_selections(&out.join("selections").join("train"), &set.selections)?;
        }
        let enrolled = log.time("enroll", name, || p.enroll(model, &set, ubm.as_ref()))?;
        save_models(&out.join("models").join(name), &enrolled)?;
        models.insert(selected, enrolled);
    }

    let mut reports = Vec::new();
    for cond in p.conditions() {
        let mut tests: BTreeMap<bool, Vec<TestItem>> = BTreeMap::new();
        for selected in [false, true] {
            if !cfg.phase_modes.iter().any(|m| m.selects_test() == selected) {
                continue;
            }
            let stage = if selected {
                "select_test"
            } else {
                "extract_test"
            };
            let items = log.time(stage, &cond.label, || {
                p.test_set(cond, selected.then_some(w))
            })?;
            if selected {
                let sels: Vec<(String, SelectionResult)> = items
                    .iter()
                    .filter_map(|t| t.selection.clone().map(|s| (t.id.clone(), s)))
                    .collect();
                save_selections(&out.join("selections").join(file_stem(&cond.label)), &sels)?;
            }
            tests.insert(selected, items);
        }
        for &phase in &cfg.phase_modes {
            let item = format!("{phase}/{}", cond.label);
            let (report, scored) = log.time("score", &item, || {
                p.evaluate(
                    cond,
                    phase,
                    model.backend,
                    &models[&phase.selects_train()],
                    &tests[&phase.selects_test()],
                )
            })?;
            let stem = file_stem(&cond.label);
            let score_dir = out.join("scores").join(phase.name());
            let report_dir = out.join("reports").join(phase.name());
            create_dir(&score_dir)?;
            create_dir(&report_dir)?;
            write_scores(score_dir.join(format!("{stem}.csv")), &scored)?;
            let path = report_dir.join(format!("{stem}.json"));
            report.save_json(&path)?;
            report.save_det_csv(report_dir.join(format!("{stem}.det.csv")))?;
            log::info!(
                "{item}: EER {:.4} ({} target, {} non-target)",
                report.eer,
                report.n_target,
                report.n_nontarget
            );
            reports.push((path, report));
        }
    }

    log.save(&out.join("run_log.jsonl"))?;
    Ok(RunSummary {
        output_dir: out,
        reports,
        cache_hits: p.source().hits(),
        cache_misses: p.source().misses(),
        stages: log.stages,
    })
}

/// One row of a threshold sweep: the selection statistics over training
/// utterances at `w`, and the EER under `condition` with selection in both
/// phases. `error` is set when that grid point failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub condition: String,
    pub w: f64,
    pub mean_distance: Option<f64>,
    pub n_selected: usize,
    pub eer: Option<f64>,
    pub error: Option<String>,
}

/// Sweeps `grid` and writes `sweep.csv` to the output directory.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    grid: &[f64],
) -> Result<Vec<SweepRecord>> {
    if grid.is_empty() {
        return Err(Error::Parameter("the w grid is empty".into()));
    }
    let out = output_dir(cfg, base_dir);
    create_dir(&out)?;
    let p = Pipeline::new(
        cfg.clone(),
        base_dir,
        Some(out.join("cache").join("features")),
    )?;
    let records = sweep(&p, grid)?;
    let path = out.join("sweep.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Csv {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    for r in &records {
        writer.serialize(r).map_err(|e| Error::Csv {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// In-memory sweep over `grid`, in grid order.
pub fn sweep(p: &Pipeline, grid: &[f64]) -> Result<Vec<SweepRecord>> {
    let cfg = p.config();
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let tables = p
        .corpus()
        .speakers
        .iter()
        .flat_map(|s| &s.train)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|u| p.select(u, 1.0, "train").map(|o| o.table))
        .collect::<Result<Vec<_>>>()?;
    let params = cfg
        .selection
        .params
        .clone()
        .unwrap_or_else(|| crate::selection::FusionParams::from_constraints(p.constraints()));
    let stats = sweep_threshold(&tables, &sorted, cfg.selection.method, Some(&params))?;

    let ubm = match cfg.model.backend {
        Backend::GmmUbm => Some(p.train_ubm(&cfg.model)?),
        Backend::Vq => None,
    };
    let mut records = Vec::new();
    for &w in grid {
        let row = &stats[sorted.iter().position(|&x| x == w).expect("grid value")];
        let enrolled = p
            .training_set(Some(w))
            .and_then(|set| p.enroll(&cfg.model, &set, ubm.as_ref()));
        for cond in p.conditions() {
            let eer = enrolled
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|models| {
                    let tests = p.test_set(cond, Some(w)).map_err(|e| e.to_string())?;
                    p.evaluate(cond, PhaseMode::Both, cfg.model.backend, models, &tests)
                        .map(|(r, _)| r.eer)
                        .map_err(|e| e.to_string())
                });
            if let Err(e) = &eer {
                log::warn!("sweep w = {w}, {}: {e}", cond.label);
            }
            records.push(SweepRecord {
                condition: cond.label.clone(),
                w,
                mean_distance: row.mean_distance,
                n_selected: row.n_selected,
                error: eer.as_ref().err().cloned(),
                eer: eer.ok(),
            });
        }
    }
    Ok(records)
}
