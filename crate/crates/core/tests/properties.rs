//! Cross-module invariants exercised through the public API.

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use nifs::audio::{read_wav, write_wav, Utterance};
use nifs::dsp::{extract_mfcc, FrameConfig, MfccConfig};
use nifs::eval::{compute_eer, EvalReport};
use nifs::features::{read_features, write_features, FeatureMatrix};
use nifs::models::{map_adapt_means, train_gmm, train_vq, GmmTrainConfig, ModelFile, SpeakerModel};
use nifs::nifs::nifs_select;
use nifs::noise::{
    generate_noise, measured_snr_db, mix_at_snr, NoiseConstraint, NoiseKind, OffsetPolicy,
};
use nifs::selection::{apply_selection, select_intersection, DistanceTable, SelectionMethod};

fn tone(n: usize, freq: f64, amp: f64) -> Utterance {
    let samples = (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
        .collect();
    Utterance::new("tone", samples, 16_000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mixing_hits_requested_snr(
        n in 200usize..4000,
        noise_len in 50usize..4000,
        snr in -10.0f64..40.0,
        kind in 0usize..7,
        seed in any::<u64>(),
    ) {
        let signal = tone(n, 440.0, 0.3);
        let noise = generate_noise(NoiseKind::ALL[kind], noise_len, 16_000, seed).unwrap();
        for policy in [OffsetPolicy::Loop, OffsetPolicy::Error] {
            let Ok(mix) = mix_at_snr(&signal, &noise, snr, policy) else { continue };
            let scaled: Vec<f64> = mix.aligned_noise.iter().map(|v| v * mix.gain).collect();
            prop_assert!((measured_snr_db(signal.samples(), &scaled) - snr).abs() < 1e-6);
            prop_assert_eq!(mix.mixed.len(), n);
        }
    }

    #[test]
    fn selection_is_a_subset_of_original_frames(seed in any::<u64>(), w in 0.3f64..=1.0) {
        let utt = tone(6000, 220.0, 0.4);
        let constraints = [
            NoiseConstraint::generated(NoiseKind::White, 15.0).unwrap(),
            NoiseConstraint::generated(NoiseKind::Hum, 15.0).unwrap(),
        ];
        let frame = FrameConfig::default();
        let mfcc = MfccConfig::mfcc24();
        let all = extract_mfcc(&utt, &frame, &mfcc).unwrap();
        match nifs_select(&utt, &constraints, &frame, &mfcc, w, SelectionMethod::Intersection, None, seed) {
            Ok((kept, sel)) => {
                let orig: BTreeSet<usize> = all.frame_indices().iter().copied().collect();
                prop_assert!(sel.selected.iter().all(|i| orig.contains(i)));
                prop_assert!(sel.selected.windows(2).all(|p| p[0] < p[1]));
                for (row, &idx) in kept.rows().zip(kept.frame_indices()) {
                    prop_assert_eq!(row, all.row(all.position_of(idx).unwrap()));
                }
            }
            Err(nifs::Error::EmptySelection { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn selection_of_a_selection_keeps_original_indices(values in prop::collection::vec(0.0f64..10.0, 20..80)) {
        let n = values.len() / 2;
        let table = DistanceTable::new(values[..2 * n].to_vec(), vec!["a".into(), "b".into()], (0..n).map(|i| i * 3).collect()).unwrap();
        let data: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let feats = FeatureMatrix::new("u", 1, data, (0..n).map(|i| i * 3).collect()).unwrap();
        if let Ok(sel) = select_intersection(&table, 1.0) {
            let kept = apply_selection(&feats, &sel).unwrap();
            prop_assert_eq!(kept.frame_indices(), &sel.selected[..]);
        }
    }

    #[test]
    fn eer_is_symmetric_under_label_and_sign_flip(
        pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 4..60),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let (eer, _) = compute_eer(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&eer));
        let shifted: Vec<f64> = scores.iter().map(|s| 3.0 * s + 1.0).collect();
        prop_assert!((compute_eer(&shifted, &labels).unwrap().0 - eer).abs() < 1e-12);
    }
}

#[test]
fn wav_and_feature_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let utt = tone(3200, 300.0, 0.5);
    let wav = dir.path().join("tone.wav");
    assert_eq!(write_wav(&utt, &wav).unwrap(), 0);
    let back = read_wav(&wav).unwrap();
    assert_eq!(back.id(), "tone");
    assert!(utt
        .samples()
        .iter()
        .zip(back.samples())
        .all(|(a, b)| (a - b).abs() <= 1.0 / 32767.0));

    let feats = extract_mfcc(&back, &FrameConfig::default(), &MfccConfig::mfcc60())
        .unwrap()
        .to_f32_precision();
    let path = dir.path().join("tone.feat");
    write_features(&feats, &path).unwrap();
    let loaded = read_features(&path).unwrap();
    assert_eq!(loaded.data(), feats.data());
    assert_eq!(loaded.frame_indices(), feats.frame_indices());
}

#[test]
fn saved_models_score_identically() {
    let dir = tempfile::tempdir().unwrap();
    let train = extract_mfcc(
        &tone(8000, 200.0, 0.4),
        &FrameConfig::default(),
        &MfccConfig::mfcc24(),
    )
    .unwrap();
    let test = extract_mfcc(
        &tone(4000, 210.0, 0.4),
        &FrameConfig::default(),
        &MfccConfig::mfcc24(),
    )
    .unwrap();

    let ubm = Arc::new(train_gmm(&train, &GmmTrainConfig::new(2, 3)).unwrap().gmm);
    ModelFile::gmm("ubm", &ubm)
        .save(dir.path().join("ubm.json"))
        .unwrap();
    let adapted = map_adapt_means(&ubm, &train, 16.0).unwrap();
    let model = SpeakerModel::gmm_map("spk", adapted, ubm.clone()).unwrap();
    let path = dir.path().join("spk.json");
    model.to_file("ubm.json").save(&path).unwrap();

    let file = ModelFile::load(&path).unwrap();
    let ubm_back = Arc::new(
        ModelFile::load(dir.path().join("ubm.json"))
            .unwrap()
            .to_gmm()
            .unwrap(),
    );
    let restored = SpeakerModel::from_file(&file, Some(ubm_back)).unwrap();
    assert_eq!(restored.score(&test).unwrap(), model.score(&test).unwrap());

    let vq = SpeakerModel::vq("v", train_vq(&train, 4, 1, 50, 1e-6).unwrap());
    let vq_path = dir.path().join("v.json");
    vq.to_file("").save(&vq_path).unwrap();
    let vq_back = SpeakerModel::from_file(&ModelFile::load(&vq_path).unwrap(), None).unwrap();
    assert_eq!(vq_back.score(&test).unwrap(), vq.score(&test).unwrap());
}

#[test]
fn reports_round_trip_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let scores = [2.0, 1.5, 0.3, 1.7, -0.2, 0.1];
    let labels = [true, true, true, false, false, false];
    let report = EvalReport::from_scores("clean", "both", "gmm_ubm", &scores, &labels, 1).unwrap();
    let path = dir.path().join("r.json");
    report.save_json(&path).unwrap();
    assert_eq!(EvalReport::load_json(&path).unwrap(), report);
    assert_eq!(report.n_failed, 1);
}
