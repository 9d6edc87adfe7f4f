//! Acceptance suite. Every criterion prints one PASS/FAIL line with its
//! measurement and wall time; the process fails if any criterion fails or
//! overruns its time budget.
//!
//! Run with `cargo test -p nifs --test acceptance`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use nifs::audio::{
    generate_synth_corpus, synth_speakers, SynthCorpusSpec, Utterance, MANIFEST_FILE,
};
use nifs::dsp::{FeatureSource, FrameConfig, MfccConfig, MfccExtractor};
use nifs::eval::compute_eer;
use nifs::experiment::{
    cmd_run, ConditionConfig, CorpusSource, ExperimentConfig, ModelConfig, PhaseMode, Pipeline,
    SplitConfig,
};
use nifs::features::FeatureMatrix;
use nifs::models::{train_gmm_em, train_vq, Backend};
use nifs::nifs::{constraint_distances, constraint_seed};
use nifs::noise::{
    generate_noise, mix_at_snr, Noise, NoiseConstraint, NoiseKind, NoiseSpec, OffsetPolicy,
};
use nifs::seed;
use nifs::selection::{
    fused_scores, select, select_intersection, select_top_fused, sweep_threshold, DistanceTable,
    FusionParams, SelectionMethod,
};
use nifs::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const CONSTRAINT_NOISES: [NoiseKind; 3] =
    [NoiseKind::White, NoiseKind::Pink, NoiseKind::BabbleSynth];
const TEST_NOISES: [NoiseKind; 4] = [
    NoiseKind::Brown,
    NoiseKind::Hum,
    NoiseKind::Impulsive,
    NoiseKind::Bandpass,
];

// ---------------------------------------------------------------------------
// Independent oracles

/// ⌈w·N⌉ with w given as a ratio of integers, in exact integer arithmetic.
fn ceil_ratio(num: usize, den: usize, n: usize) -> usize {
    (num * n).div_ceil(den).clamp(1, n)
}

/// Positions of the `keep` smallest values; ties to the lower position.
fn top_positions(values: &[f64], keep: usize) -> BTreeSet<usize> {
    let mut pairs: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    pairs.iter().take(keep).map(|p| p.1).collect()
}

fn random_table(rng: &mut impl Rng, n: usize, k: usize) -> DistanceTable {
    // Small integer grids produce plenty of ties.
    let tied = rng.gen_bool(0.3);
    let values = (0..n * k)
        .map(|_| {
            if tied {
                f64::from(rng.gen_range(0..6))
            } else {
                rng.gen_range(0.0..10.0)
            }
        })
        .collect();
    let ids = (0..k).map(|i| format!("c{i}")).collect();
    DistanceTable::new(values, ids, (0..n).map(|i| 3 * i + 1).collect()).unwrap()
}

/// EER as (FAR + FRR)/2 at the threshold where |FAR − FRR| is smallest,
/// trying every distinct score and one threshold above them all.
fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(scores.iter().cloned().fold(f64::MIN, f64::max) + 1.0);
    let nt = labels.iter().filter(|&&l| l).count() as f64;
    let nn = labels.len() as f64 - nt;
    let mut best = (f64::INFINITY, 0.0);
    for &t in &thresholds {
        let fa = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| !**l && **s >= t)
            .count() as f64
            / nn;
        let fr = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **l && **s < t)
            .count() as f64
            / nt;
        if (fa - fr).abs() < best.0 {
            best = ((fa - fr).abs(), (fa + fr) / 2.0);
        }
    }
    best.1
}

// ---------------------------------------------------------------------------
// Criteria

fn intersection_oracle() -> Outcome {
    let mut rng = seed::rng(0xA1);
    let ws = [(3, 10), (5, 10), (9, 10)];
    let (mut mismatches, mut empties) = (0, 0);
    for case in 0..1000 {
        let n = rng.gen_range(1..=50);
        let k = rng.gen_range(1..=5);
        let (num, den) = ws[case % 3];
        let table = random_table(&mut rng, n, k);
        let keep = ceil_ratio(num, den, n);
        let mut expected: BTreeSet<usize> = (0..n).collect();
        for c in 0..k {
            let col: Vec<f64> = (0..n).map(|i| table.values()[i * k + c]).collect();
            expected = expected
                .intersection(&top_positions(&col, keep))
                .copied()
                .collect();
        }
        let expected: Vec<usize> = expected.iter().map(|&p| table.frame_indices()[p]).collect();
        match select_intersection(&table, num as f64 / den as f64) {
            Ok(sel) if sel.selected == expected => {}
            Err(Error::EmptySelection { .. }) if expected.is_empty() => empties += 1,
            _ => mismatches += 1,
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches in 1000 tables ({empties} empty intersections)"),
    )
}

fn fused_oracle() -> Outcome {
    let mut rng = seed::rng(0xA2);
    let (mut mismatches, mut max_err) = (0, 0.0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let k = rng.gen_range(1..=5);
        let table = random_table(&mut rng, n, k);
        let params = FusionParams {
            weights: (0..k)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        0.0
                    } else {
                        rng.gen_range(0.0..3.0)
                    }
                })
                .collect(),
            bias: rng.gen_range(-5.0..5.0),
        };
        let w = [0.1, 0.3, 0.5, 0.77, 0.9, 1.0][rng.gen_range(0..6)];
        let mut naive = vec![0.0; n];
        for (i, s) in naive.iter_mut().enumerate() {
            for c in 0..k {
                *s += params.weights[c] * table.values()[i * k + c];
            }
            *s += params.bias;
        }
        let scores = fused_scores(&table, &params).unwrap();
        for (a, b) in scores.iter().zip(&naive) {
            max_err = max_err.max((a - b).abs());
        }
        let keep = ((w * n as f64) - 1e-9).ceil().max(1.0) as usize;
        let expected: Vec<usize> = top_positions(&naive, keep)
            .iter()
            .map(|&p| table.frame_indices()[p])
            .collect();
        let sel = select_top_fused(&scores, table.frame_indices(), w).unwrap();
        if sel.selected != expected {
            mismatches += 1;
        }
    }
    // K = 1: fused with any positive weight and bias equals intersection.
    let mut degenerate = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let table = random_table(&mut rng, n, 1);
        let w = rng.gen_range(0.01..=1.0);
        let params = FusionParams {
            weights: vec![rng.gen_range(0.1..3.0)],
            bias: rng.gen_range(-1.0..1.0),
        };
        let a = select(&table, SelectionMethod::Fused, w, Some(&params)).unwrap();
        let b = select(&table, SelectionMethod::Intersection, w, None).unwrap();
        if a.selected != b.selected {
            degenerate += 1;
        }
    }
    outcome(
        mismatches == 0 && max_err <= 1e-9 && degenerate == 0,
        format!("{mismatches} selection mismatches, max score error {max_err:.2e}, {degenerate} K=1 disagreements"),
    )
}

fn snr_exactness() -> Outcome {
    let mut rng = seed::rng(0xA3);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = rng.gen_range(100..20_000);
        let amp = 10f64.powf(rng.gen_range(-3.0..0.0));
        let signal = Utterance::new(
            "s",
            (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(),
            16000,
        )
        .unwrap();
        let noise_len = rng.gen_range(50..30_000);
        let kind = NoiseKind::ALL[i % NoiseKind::ALL.len()];
        let noise = generate_noise(kind, noise_len, 16000, rng.gen()).unwrap();
        let snr = rng.gen_range(-10.0..40.0);
        let mix = mix_at_snr(&signal, &noise, snr, OffsetPolicy::Loop).unwrap();
        let ps: f64 = signal.samples().iter().map(|x| x * x).sum();
        let pn: f64 = mix
            .aligned_noise
            .iter()
            .map(|x| (mix.gain * x).powi(2))
            .sum();
        worst = worst.max((10.0 * (ps / pn).log10() - snr).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("max |measured − target| = {worst:.2e} dB over 1000 mixes"),
    )
}

fn em_monotonicity() -> Outcome {
    let mut rng = seed::rng(0xA4);
    let (mut em_bad, mut km_bad, mut worst_drop) = (0, 0, 0.0f64);
    for case in 0..100 {
        let centres: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect())
            .collect();
        let spread = Normal::new(0.0, rng.gen_range(0.3..2.0)).unwrap();
        let data: Vec<f64> = (0..500)
            .flat_map(|_| {
                let c = &centres[rng.gen_range(0..4)];
                c.iter()
                    .map(|m| m + spread.sample(&mut rng))
                    .collect::<Vec<_>>()
            })
            .collect();
        let f = FeatureMatrix::from_rows("em", 4, data).unwrap();
        let fit = train_gmm_em(&f, 4, case, 50, 0.01).unwrap();
        for w in fit.log_likelihood.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        if fit.log_likelihood.windows(2).any(|w| w[1] < w[0] - 1e-8) {
            em_bad += 1;
        }
        let cb = train_vq(&f, 4, case, 100, 1e-6).unwrap();
        if cb
            .meta()
            .history
            .windows(2)
            .any(|w| w[1] > w[0] * (1.0 + 1e-12))
        {
            km_bad += 1;
        }
    }
    outcome(
        em_bad == 0 && km_bad == 0,
        format!("{em_bad} EM and {km_bad} k-means violations in 100 trainings (largest log-likelihood drop {worst_drop:.1e})"),
    )
}

fn eer_oracle() -> Outcome {
    let mut rng = seed::rng(0xA5);
    let transforms: [fn(f64) -> f64; 10] = [
        |x| x + 3.0,
        |x| 2.0 * x,
        |x| 0.5 * x - 1.0,
        |x| x * x * x + x,
        f64::exp,
        |x| (x / 2.0).exp() + x,
        |x| (x / 10.0).tanh(),
        |x| (x + 6.0).ln(),
        f64::sinh,
        |x| 1.0 / (6.0 - x),
    ];
    let (mut outside, mut not_invariant, mut worst) = (0, 0, 0.0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(2..200);
        let p_target = rng.gen_range(0.1..0.9);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(p_target)).collect();
        labels[0] = true;
        labels[1] = false;
        labels.shuffle(&mut rng);
        let shift = rng.gen_range(0.0..2.0);
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| rng.gen_range(-2.0..2.0) + if l { shift } else { 0.0 })
            .collect();
        let nt = labels.iter().filter(|&&l| l).count();
        let bound = 1.0 / (2.0 * nt.min(n - nt) as f64);
        let (eer, _) = compute_eer(&scores, &labels).unwrap();
        let err = (eer - brute_force_eer(&scores, &labels)).abs();
        worst = worst.max(err / bound);
        if err > bound {
            outside += 1;
        }
        for t in &transforms {
            let mapped: Vec<f64> = scores.iter().map(|&x| t(x)).collect();
            if compute_eer(&mapped, &labels).unwrap().0 != eer {
                not_invariant += 1;
            }
        }
    }
    outcome(
        outside == 0 && not_invariant == 0,
        format!(
            "{outside} of 1000 outside the oracle bound (worst {:.2} of the bound), {not_invariant} of 10000 transformed sets changed",
            worst
        ),
    )
}

fn constraints_at(snr: f64) -> Vec<NoiseConstraint> {
    CONSTRAINT_NOISES
        .iter()
        .map(|&k| NoiseConstraint::generated(k, snr).unwrap())
        .collect()
}

fn distance_trend() -> Outcome {
    let spec = SynthCorpusSpec {
        n_speakers: 10,
        utterances_per_speaker: 10,
        duration_s: 2.0,
        sample_rate: 16000,
        seed: 0xA6,
    };
    let extractor =
        MfccExtractor::new(&FrameConfig::default(), &MfccConfig::default(), 16000).unwrap();
    let constraints = constraints_at(20.0);
    let tables: Vec<DistanceTable> = synth_speakers(&spec)
        .unwrap()
        .iter()
        .flat_map(|(_, utts)| utts)
        .enumerate()
        .map(|(i, u)| {
            constraint_distances(u, &constraints, &extractor, OffsetPolicy::Loop, i as u64)
                .unwrap()
                .1
        })
        .collect();
    let grid = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    let rows = sweep_threshold(&tables, &grid, SelectionMethod::Intersection, None).unwrap();
    let means: Vec<f64> = rows
        .iter()
        .map(|r| r.mean_distance.unwrap_or(f64::NAN))
        .collect();
    let non_increasing = means.windows(2).all(|w| w[0] <= w[1]);
    let strict = means[2] < means[5];
    let shown: Vec<String> = grid
        .iter()
        .zip(&means)
        .rev()
        .map(|(w, m)| format!("{w:.1}:{m:.3}"))
        .collect();
    outcome(
        non_increasing && strict,
        format!("mean selected distance by w {}", shown.join(" ")),
    )
}

/// EERs for one seed: `[backend][phase][condition]`.
type EerGrid = Vec<Vec<Vec<f64>>>;

fn directional_runs() -> (EerGrid, Duration) {
    let start = Instant::now();
    let backends = [Backend::GmmUbm, Backend::Vq];
    let mut sum: EerGrid =
        vec![vec![vec![0.0; TEST_NOISES.len()]; PhaseMode::ALL.len()]; backends.len()];
    for s in 0..3u64 {
        let cfg = ExperimentConfig {
            seed: 0x7AB1 + s,
            corpus: CorpusSource::Synth(SynthCorpusSpec {
                n_speakers: 20,
                utterances_per_speaker: 10,
                duration_s: 2.0,
                sample_rate: 16000,
                seed: 0xC0 + s,
            }),
            split: SplitConfig {
                train_per_speaker: 8,
                test_per_speaker: 2,
                background_speakers: 10,
            },
            conditions: TEST_NOISES
                .iter()
                .map(|&k| ConditionConfig::noisy(NoiseSpec::Generator(k), 20.0))
                .collect(),
            ..ExperimentConfig::default()
        };
        let p = Pipeline::new(cfg.clone(), Path::new("."), None).unwrap();
        let w = cfg.selection.w;
        for (b, &backend) in backends.iter().enumerate() {
            let model = ModelConfig {
                backend,
                size: 32,
                ..cfg.model.clone()
            };
            for (ph, &phase) in PhaseMode::ALL.iter().enumerate() {
                for (c, r) in p.run_phase(phase, w, &model).unwrap().iter().enumerate() {
                    sum[b][ph][c] += r.eer / 3.0;
                }
            }
        }
    }
    (sum, start.elapsed())
}

fn fmt_row(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn selection_beats_baseline(avg: &EerGrid) -> Outcome {
    let names = ["gmm_ubm", "vq"];
    let both = PhaseMode::ALL
        .iter()
        .position(|&p| p == PhaseMode::Both)
        .unwrap();
    let mut detail = Vec::new();
    let mut any = false;
    for (b, name) in names.iter().enumerate() {
        let wins = (0..TEST_NOISES.len())
            .filter(|&c| avg[b][both][c] <= avg[b][0][c])
            .count();
        any |= wins >= 3;
        detail.push(format!(
            "{name}: {wins}/4 (baseline [{}] vs both [{}])",
            fmt_row(&avg[b][0]),
            fmt_row(&avg[b][both])
        ));
    }
    outcome(any, detail.join("; "))
}

/// Must hold for every back-end, not just one.
fn every_phase_beats_baseline(avg: &EerGrid) -> Outcome {
    let names = ["gmm_ubm", "vq"];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut detail = Vec::new();
    let mut all = true;
    for (b, name) in names.iter().enumerate() {
        let base = mean(&avg[b][0]);
        let phases: Vec<f64> = (1..4).map(|ph| mean(&avg[b][ph])).collect();
        let ok = phases.iter().all(|&m| m <= base);
        all &= ok;
        detail.push(format!(
            "{name}: none {base:.4}, train {:.4}, test {:.4}, both {:.4}",
            phases[0], phases[1], phases[2]
        ));
    }
    outcome(all, detail.join("; "))
}

fn frame_correspondence() -> Outcome {
    let mut rng = seed::rng(0xA9);
    let configs = [
        MfccConfig::mfcc24(),
        MfccConfig::mfcc39(),
        MfccConfig::mfcc60(),
    ];
    let (mut violations, mut checked) = (0, 0);
    for i in 0..200 {
        let n = rng.gen_range(2_000..24_000);
        let spec = SynthCorpusSpec {
            n_speakers: 1,
            utterances_per_speaker: 1,
            duration_s: n as f64 / 16000.0,
            sample_rate: 16000,
            seed: rng.gen(),
        };
        let utt = synth_speakers(&spec).unwrap().remove(0).1.remove(0);
        let frame = FrameConfig {
            frame_len_ms: [20.0, 25.0, 30.0][i % 3],
            shift_ms: [10.0, 5.0][i % 2],
            ..FrameConfig::default()
        };
        let ex = MfccExtractor::new(&frame, &configs[i % 3], 16000).unwrap();
        let mut kinds = NoiseKind::ALL.to_vec();
        kinds.shuffle(&mut rng);
        let k = rng.gen_range(1..=5);
        let orig = ex.features(&utt).unwrap();
        for (j, &kind) in kinds[..k].iter().enumerate() {
            let c = NoiseConstraint::new(
                kind.name(),
                Noise::Generated(kind),
                rng.gen_range(-5.0..40.0),
            )
            .unwrap();
            let noise = c
                .noise
                .render(utt.len(), 16000, constraint_seed(i as u64, &c, j))
                .unwrap();
            let mixed = mix_at_snr(&utt, &noise, c.snr_db, OffsetPolicy::Loop)
                .unwrap()
                .mixed;
            let noisy = ex.features(&mixed).unwrap();
            checked += 1;
            if noisy.n_frames() != orig.n_frames() || noisy.frame_indices() != orig.frame_indices()
            {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over {checked} noisy copies of 200 utterances"),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthCorpusSpec {
        n_speakers: 8,
        utterances_per_speaker: 5,
        duration_s: 1.0,
        sample_rate: 16000,
        seed: 0xAA,
    };
    generate_synth_corpus(&spec, dir.path().join("corpus")).unwrap();
    let make = |out: &str| ExperimentConfig {
        corpus: CorpusSource::Manifest(Path::new("corpus").join(MANIFEST_FILE)),
        split: SplitConfig {
            train_per_speaker: 4,
            test_per_speaker: 1,
            background_speakers: 3,
        },
        model: ModelConfig {
            size: 8,
            ..ExperimentConfig::default().model
        },
        conditions: vec![
            ConditionConfig::clean(),
            ConditionConfig::noisy(NoiseSpec::Generator(NoiseKind::Hum), 20.0),
        ],
        phase_modes: vec![PhaseMode::None, PhaseMode::Both],
        output_dir: out.into(),
        ..ExperimentConfig::default()
    };
    let a = cmd_run(&make("run_a"), dir.path()).unwrap();
    let warm = cmd_run(&make("run_a"), dir.path()).unwrap();
    let b = cmd_run(&make("run_b"), dir.path()).unwrap();
    let mut differing = 0;
    for ((pa, _), ((pw, _), (pb, _))) in a.reports.iter().zip(warm.reports.iter().zip(&b.reports)) {
        let bytes = fs::read(pa).unwrap();
        if fs::read(pw).unwrap() != bytes || fs::read(pb).unwrap() != bytes {
            differing += 1;
        }
    }
    let distinct = a
        .reports
        .iter()
        .map(|(p, _)| p.clone())
        .collect::<BTreeSet<_>>()
        .len();
    outcome(
        differing == 0 && warm.cache_misses == 0 && distinct == 4,
        format!(
            "{differing} of {} reports differ across cold, warm and fresh-directory runs; warm run had {} cache hits and {} misses",
            a.reports.len(),
            warm.cache_hits,
            warm.cache_misses
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, budget: Duration, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let timing = if in_time {
            String::new()
        } else {
            " [over time budget]".to_string()
        };
        println!(
            "{} {name}: {} ({:.1}s, budget {}s){timing}",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    };
    let secs = Duration::from_secs;

    report(
        "intersection selector vs set-intersection oracle",
        secs(5),
        &mut intersection_oracle,
    );
    report("fused selector vs naive oracle", secs(5), &mut fused_oracle);
    report("SNR exactness", secs(10), &mut snr_exactness);
    report(
        "EM and k-means monotonicity",
        secs(60),
        &mut em_monotonicity,
    );
    report(
        "EER vs exhaustive oracle and transform invariance",
        secs(10),
        &mut eer_oracle,
    );
    report(
        "selected distance falls with w",
        secs(120),
        &mut distance_trend,
    );

    let mut grid = None;
    report(
        "NIFS vs baseline under unseen noise",
        secs(600),
        &mut || {
            let (avg, _) = directional_runs();
            let o = selection_beats_baseline(&avg);
            grid = Some(avg);
            o
        },
    );
    let avg = grid.expect("directional runs finished");
    // Shares the runs above, so its own time is only the comparison.
    report(
        "every phase mode beats baseline on average",
        secs(900),
        &mut || every_phase_beats_baseline(&avg),
    );

    report(
        "frame correspondence of noisy copies",
        secs(30),
        &mut frame_correspondence,
    );
    report(
        "byte-identical reports across runs",
        secs(300),
        &mut reproducibility,
    );

    println!("{} criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
