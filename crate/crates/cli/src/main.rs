//! `nifs`: corpus generation, feature extraction, frame selection, model
//! training, scoring and evaluation from the command line.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nifs::audio::{generate_synth_corpus, read_wav, SynthCorpusSpec, REFERENCE_RATE};
use nifs::dsp::{FeatureSource, FrameConfig, MfccConfig, MfccExtractor};
use nifs::eval::{read_scores, read_trials, write_scores, EvalReport, ScoredTrial};
use nifs::experiment::run::file_stem;
use nifs::experiment::{cmd_run, cmd_sweep, Corpus, ExperimentConfig, Pipeline};
use nifs::features::{read_features, write_features, FeatureMatrix};
use nifs::models::{
    map_adapt_means, train_gmm, train_vq, vq, GmmTrainConfig, ModelFile, SpeakerModel,
};

/// Exit status for configuration or input validation failures.
const EXIT_INVALID: u8 = 2;
/// Exit status when a pipeline stage fails at run time.
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
struct ValidationFailed(Vec<String>);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} validation error(s):", self.0.len())?;
        for issue in &self.0 {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationFailed {}

#[derive(Parser)]
#[command(
    name = "nifs",
    version,
    about = "Noise invariant frame selection for speaker verification"
)]
struct Cli {
    /// Print the default experiment configuration as JSON and exit.
    #[arg(long)]
    print_default_config: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,
    /// Increase log detail (-v info, -vv debug).
    #[arg(long, short = 'v', action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic speaker corpus as WAV files plus manifest.json.
    SynthCorpus(SynthArgs),
    /// Check an experiment config and report every problem found.
    Validate { config: PathBuf },
    /// Extract MFCC feature files from WAV files.
    Extract(ExtractArgs),
    /// Select noise-invariant frames of WAV files using a config's constraints.
    Select(SelectArgs),
    /// Train a UBM (gmm) or a VQ codebook from feature files.
    Train(TrainArgs),
    /// Enroll a speaker from feature files by MAP adaptation of a UBM or by VQ training.
    Enroll(EnrollArgs),
    /// Score a trial list against enrolled models.
    Score(ScoreArgs),
    /// Compute EER and DET points from a score file.
    Eval(EvalArgs),
    /// Run the full experiment described by a config.
    Run { config: PathBuf },
    /// Sweep the selection threshold and write sweep.csv.
    Sweep {
        config: PathBuf,
        /// Comma-separated w values.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5])]
        grid: Vec<f64>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    speakers: usize,
    #[arg(long, default_value_t = 10)]
    utterances: usize,
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = REFERENCE_RATE)]
    rate: u32,
    #[arg(long)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Mfcc24,
    Mfcc39,
    Mfcc60,
}

#[derive(Args)]
struct FeatureArgs {
    /// Take frame and MFCC settings from this experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl FeatureArgs {
    fn settings(&self) -> Result<(FrameConfig, MfccConfig)> {
        if let Some(path) = &self.config {
            let cfg = load_config(path)?;
            return Ok((cfg.frame, cfg.mfcc));
        }
        let mfcc = match self.preset.unwrap_or(Preset::Mfcc24) {
            Preset::Mfcc24 => MfccConfig::mfcc24(),
            Preset::Mfcc39 => MfccConfig::mfcc39(),
            Preset::Mfcc60 => MfccConfig::mfcc60(),
        };
        Ok((FrameConfig::default(), mfcc))
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    features: FeatureArgs,
    /// Output directory for `<stem>.feat` files.
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Experiment config supplying constraints, selection and features.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's threshold.
    #[arg(long)]
    w: Option<f64>,
    /// Output directory for `<stem>.json` selections and `<stem>.feat`.
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainKind {
    Gmm,
    Vq,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    kind: TrainKind,
    /// Components (gmm) or centroids (vq).
    #[arg(long)]
    size: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "ubm")]
    id: String,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    var_floor_factor: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    features: Vec<PathBuf>,
}

#[derive(Args)]
struct EnrollArgs {
    #[arg(long)]
    id: String,
    /// UBM for MAP adaptation; without it a VQ codebook is trained.
    #[arg(long, required_unless_present = "vq_size")]
    ubm: Option<PathBuf>,
    #[arg(long, conflicts_with = "ubm")]
    vq_size: Option<usize>,
    #[arg(long, default_value_t = 16.0)]
    relevance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    features: Vec<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// CSV with model_id,test_path,is_target.
    #[arg(long)]
    trials: PathBuf,
    /// Directory of `<model_id>.json` model files.
    #[arg(long)]
    models: PathBuf,
    /// Directory of test feature files named after each test_path.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write DET points as CSV.
    #[arg(long)]
    det: Option<PathBuf>,
    #[arg(long, default_value = "unspecified")]
    condition: String,
    #[arg(long, default_value = "unspecified")]
    phase: String,
    #[arg(long, default_value = "unspecified")]
    backend: String,
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ExperimentConfig::from_json(&text)
        .map_err(|e| ValidationFailed(vec![format!("{}: {e}", path.display())]))?;
    let issues = cfg.validate(&base_dir(path));
    if !issues.is_empty() {
        return Err(ValidationFailed(issues.iter().map(ToString::to_string).collect()).into());
    }
    Ok(cfg)
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| anyhow!("{} has no file name", path.display()))
}

fn load_features(paths: &[PathBuf]) -> Result<FeatureMatrix> {
    let parts = paths
        .iter()
        .map(read_features)
        .collect::<nifs::Result<Vec<_>>>()?;
    Ok(FeatureMatrix::concat("pooled", &parts)?)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthCorpusSpec {
        n_speakers: args.speakers,
        utterances_per_speaker: args.utterances,
        duration_s: args.duration,
        sample_rate: args.rate,
        seed: args.seed,
    };
    spec.validate()
        .map_err(|e| ValidationFailed(vec![e.to_string()]))?;
    let m = generate_synth_corpus(&spec, &args.out)?;
    println!(
        "wrote {} speakers to {}",
        m.speakers.len(),
        args.out.display()
    );
    Ok(())
}

fn extract(args: &ExtractArgs) -> Result<()> {
    let (frame, mfcc) = args.features.settings()?;
    fs::create_dir_all(&args.out)?;
    let mut extractors: Vec<MfccExtractor> = Vec::new();
    for input in &args.inputs {
        let utt = read_wav(input)?;
        let ex = match extractors
            .iter()
            .find(|e| e.sample_rate() == utt.sample_rate())
        {
            Some(e) => e,
            None => {
                extractors.push(MfccExtractor::new(&frame, &mfcc, utt.sample_rate())?);
                extractors.last().expect("just pushed")
            }
        };
        let feats = ex
            .features(&utt)
            .with_context(|| format!("extracting {}", input.display()))?;
        let out = args.out.join(format!("{}.feat", stem(input)?));
        write_features(&feats, &out)?;
        log::info!(
            "{} -> {} ({} frames)",
            input.display(),
            out.display(),
            feats.n_frames()
        );
    }
    Ok(())
}

fn select(args: &SelectArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(w) = args.w {
        if !(w > 0.0 && w <= 1.0) {
            return Err(ValidationFailed(vec![format!("--w must be in (0, 1], got {w}")]).into());
        }
        cfg.selection.w = w;
    }
    let w = cfg.selection.w;
    let base = base_dir(&args.config);
    fs::create_dir_all(&args.out)?;
    // One pipeline per sample rate; noises are resolved against it.
    let mut pipelines: BTreeMap<u32, Pipeline> = BTreeMap::new();
    for input in &args.inputs {
        let stem = stem(input)?;
        let utt = read_wav(input)?.with_id(stem.clone());
        let rate = utt.sample_rate();
        let p = match pipelines.entry(rate) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                let corpus = Corpus {
                    sample_rate: rate,
                    speakers: Vec::new(),
                    background: Vec::new(),
                };
                e.insert(Pipeline::with_corpus(cfg.clone(), corpus, &base, None)?)
            }
        };
        let out = p
            .select(&utt, w, "cli")
            .with_context(|| format!("selecting frames of {}", input.display()))?;
        fs::write(
            args.out.join(format!("{stem}.json")),
            out.selection.to_json()? + "\n",
        )?;
        write_features(&out.features, args.out.join(format!("{stem}.feat")))?;
        println!(
            "{stem}: kept {} of {} frames at w = {}",
            out.selection.len(),
            out.original.n_frames(),
            out.selection.threshold_w
        );
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let feats = load_features(&args.features)?;
    let file = match args.kind {
        TrainKind::Gmm => {
            let cfg = GmmTrainConfig {
                max_iters: args
                    .max_iters
                    .unwrap_or(nifs::models::gmm::DEFAULT_MAX_ITERS),
                var_floor_factor: args.var_floor_factor,
                ..GmmTrainConfig::new(args.size, args.seed)
            };
            let fit = train_gmm(&feats, &cfg)?;
            log::info!("EM log-likelihood per iteration: {:?}", fit.log_likelihood);
            ModelFile::gmm(&args.id, &fit.gmm)
        }
        TrainKind::Vq => {
            let cb = train_vq(
                &feats,
                args.size,
                args.seed,
                args.max_iters.unwrap_or(vq::DEFAULT_MAX_ITERS),
                vq::DEFAULT_TOL,
            )?;
            ModelFile::vq(&args.id, &cb)
        }
    };
    file.save(&args.out)?;
    println!(
        "wrote {} trained on {} frames",
        args.out.display(),
        feats.n_frames()
    );
    Ok(())
}

fn enroll(args: &EnrollArgs) -> Result<()> {
    let feats = load_features(&args.features)?.with_source_id(&args.id);
    let file = match (&args.ubm, args.vq_size) {
        (Some(ubm_path), _) => {
            let ubm = ModelFile::load(ubm_path)?.to_gmm()?;
            let adapted = map_adapt_means(&ubm, &feats, args.relevance)?;
            let out_dir = args.out.parent().unwrap_or(Path::new("."));
            let ubm_ref = relative_to(ubm_path, out_dir);
            ModelFile::gmm_map(&args.id, &adapted, ubm_ref)
        }
        (None, Some(k)) => ModelFile::vq(
            &args.id,
            &train_vq(&feats, k, args.seed, vq::DEFAULT_MAX_ITERS, vq::DEFAULT_TOL)?,
        ),
        (None, None) => bail!("either --ubm or --vq-size is required"),
    };
    file.save(&args.out)?;
    println!("enrolled {} from {} frames", args.id, feats.n_frames());
    Ok(())
}

/// `path` relative to `dir` when both are relative or share a prefix,
/// otherwise `path` as given.
fn relative_to(path: &Path, dir: &Path) -> String {
    let abs = |p: &Path| fs::canonicalize(p).ok();
    match (abs(path), abs(dir)) {
        (Some(p), Some(d)) => match p.strip_prefix(&d) {
            Ok(rel) => rel.display().to_string(),
            Err(_) => p.display().to_string(),
        },
        _ => path.display().to_string(),
    }
}

fn load_model(dir: &Path, id: &str) -> Result<SpeakerModel> {
    let path = dir.join(format!("{}.json", file_stem(id)));
    let file = ModelFile::load(&path)?;
    let ubm = match &file {
        ModelFile::GmmMap { ubm_ref, .. } => {
            let ubm_path = dir.join(ubm_ref);
            Some(Arc::new(ModelFile::load(&ubm_path)?.to_gmm()?))
        }
        _ => None,
    };
    Ok(SpeakerModel::from_file(&file, ubm)?)
}

/// Feature file of a trial's test utterance: the whole test path made
/// file-name safe, or failing that just its file stem.
fn test_feature_path(dir: &Path, test_path: &str) -> PathBuf {
    let full = dir.join(format!(
        "{}.feat",
        file_stem(test_path.trim_end_matches(".wav"))
    ));
    if full.is_file() {
        return full;
    }
    let short = Path::new(test_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dir.join(format!("{short}.feat"))
}

fn score(args: &ScoreArgs) -> Result<()> {
    let trials = read_trials(&args.trials)?;
    let mut models = BTreeMap::new();
    let mut features = BTreeMap::new();
    let mut scored = Vec::with_capacity(trials.len());
    let mut failed = Vec::new();
    for t in &trials {
        if !models.contains_key(&t.model_id) {
            models.insert(t.model_id.clone(), load_model(&args.models, &t.model_id)?);
        }
        if !features.contains_key(&t.test_path) {
            let path = test_feature_path(&args.features, &t.test_path);
            features.insert(
                t.test_path.clone(),
                read_features(&path).map_err(|e| e.to_string()),
            );
        }
        let result = features[&t.test_path]
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|f| models[&t.model_id].score(f).map_err(|e| e.to_string()));
        match result {
            Ok(s) => scored.push(ScoredTrial {
                model_id: t.model_id.clone(),
                test_path: t.test_path.clone(),
                is_target: t.is_target,
                score: s,
            }),
            Err(e) => failed.push(format!("{} vs {}: {e}", t.test_path, t.model_id)),
        }
    }
    if failed.len() as f64 > nifs::experiment::MAX_FAILED_TRIAL_FRACTION * trials.len() as f64 {
        bail!(
            "{} of {} trials failed, first: {}",
            failed.len(),
            trials.len(),
            failed[0]
        );
    }
    for f in &failed {
        log::warn!("trial failed: {f}");
    }
    write_scores(&args.out, &scored)?;
    println!("scored {} trials ({} failed)", scored.len(), failed.len());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let scored = read_scores(&args.scores)?;
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.is_target).collect();
    let report = EvalReport::from_scores(
        &args.condition,
        &args.phase,
        &args.backend,
        &scores,
        &labels,
        0,
    )?;
    report.save_json(&args.out)?;
    if let Some(det) = &args.det {
        report.save_det_csv(det)?;
    }
    println!(
        "EER {:.4} at threshold {:.6} ({} target, {} non-target)",
        report.eer, report.eer_threshold, report.n_target, report.n_nontarget
    );
    Ok(())
}

fn run(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let summary = cmd_run(&cfg, &base_dir(config))?;
    for (path, r) in &summary.reports {
        println!(
            "{:<6} {:<24} EER {:.4}  {}",
            r.phase,
            r.condition,
            r.eer,
            path.display()
        );
    }
    println!(
        "feature cache: {} hits, {} misses; outputs in {}",
        summary.cache_hits,
        summary.cache_misses,
        summary.output_dir.display()
    );
    Ok(())
}

fn sweep(config: &Path, grid: &[f64]) -> Result<()> {
    let cfg = load_config(config)?;
    if let Some(w) = grid.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
        return Err(ValidationFailed(vec![format!("--grid: w must be in (0, 1], got {w}")]).into());
    }
    let rows = cmd_sweep(&cfg, &base_dir(config), grid)?;
    println!("condition,w,mean_distance,n_selected,eer");
    for r in rows {
        let opt = |v: Option<f64>| {
            v.map(|x| format!("{x:.6}"))
                .unwrap_or_else(|| "failed".into())
        };
        println!(
            "{},{},{},{},{}",
            r.condition,
            r.w,
            opt(r.mean_distance),
            r.n_selected,
            opt(r.eer)
        );
    }
    Ok(())
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::SynthCorpus(a) => synth(a),
        Command::Validate { config } => {
            load_config(config)?;
            println!("{} is valid", config.display());
            Ok(())
        }
        Command::Extract(a) => extract(a),
        Command::Select(a) => select(a),
        Command::Train(a) => train(a),
        Command::Enroll(a) => enroll(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Run { config } => run(config),
        Command::Sweep { config, grid } => sweep(config, grid),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    if cli.print_default_config {
        print!("{}", ExperimentConfig::default().to_json());
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        eprintln!("no subcommand given; see `nifs --help`");
        return ExitCode::from(EXIT_INVALID);
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match dispatch(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<ValidationFailed>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
