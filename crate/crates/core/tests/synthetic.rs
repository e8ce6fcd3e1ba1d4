//! Generator properties: determinism, speaker splits, mixture balance,
//! label corruption rates and the Bayes oracle.

use std::collections::BTreeSet;

use lhuc::synth::{
    corrupt_labels, gen_bump, gen_mixture_bump, gen_multicluster, sample_bump_fn, Bump, BumpSpec,
    ClusterTaskSpec, MixtureSpec,
};
use proptest::prelude::*;

fn small_spec(seed: u64) -> ClusterTaskSpec {
    ClusterTaskSpec {
        n_train_speakers: 6,
        n_test_speakers: 4,
        frames_per_speaker_per_env: 120,
        seed,
        ..ClusterTaskSpec::default()
    }
}

fn fer(pred: &[usize], reference: &[usize]) -> f64 {
    pred.iter().zip(reference).filter(|(a, b)| a != b).count() as f64 / pred.len() as f64
}

#[test]
fn multicluster_is_deterministic_in_seed() {
    let a = gen_multicluster(&small_spec(4)).unwrap();
    let b = gen_multicluster(&small_spec(4)).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    assert_eq!(a.test_targets, b.test_targets);
    assert_eq!(a.truth, b.truth);
    let c = gen_multicluster(&small_spec(5)).unwrap();
    assert_ne!(a.train.features, c.train.features);
}

#[test]
fn sessions_share_truth_but_not_frames() {
    let a = gen_multicluster(&small_spec(4)).unwrap();
    let b = gen_multicluster(&ClusterTaskSpec { session: 1, ..small_spec(4) }).unwrap();
    assert_eq!(a.truth, b.truth);
    assert_ne!(a.test.features, b.test.features);
}

#[test]
fn train_and_test_speakers_are_disjoint() {
    let task = gen_multicluster(&small_spec(2)).unwrap();
    let train: BTreeSet<u32> = task.train.speaker_ids().into_iter().collect();
    let test: BTreeSet<u32> = task.test.speaker_ids().into_iter().collect();
    assert_eq!(train.len(), 6);
    assert_eq!(test.len(), 4);
    assert!(train.is_disjoint(&test));
    assert!(!train.contains(&0) && !test.contains(&0));
    assert_eq!(task.train.len(), 6 * 3 * 120);
    assert_eq!(task.test.environment_ids().unwrap(), vec![1, 2, 3]);
}

#[test]
fn band_limited_noise_hits_the_requested_dimensions() {
    for (fraction, expect) in [(0.3, 6), (0.05, 1), (0.5, 10), (1.0, 20)] {
        let spec = ClusterTaskSpec { env_noise_fraction: fraction, env_noise_sd: vec![0.0, 3.0, 3.0], ..small_spec(8) };
        let task = gen_multicluster(&spec).unwrap();
        assert!(task.truth.environments[&1].noise_sd.iter().all(|&s| s == 0.0));
        for e in [2, 3] {
            let noisy = task.truth.environments[&e].noise_sd.iter().filter(|&&s| s == 3.0).count();
            assert_eq!(noisy, expect, "fraction {fraction}, env {e}");
        }
    }
}

#[test]
fn bayes_oracle_beats_a_warp_blind_classifier() {
    let task = gen_multicluster(&small_spec(3)).unwrap();
    let labels = task.test.labels().unwrap();
    let bayes = fer(&task.truth.bayes_labels(&task.test).unwrap(), labels);
    // nearest clean class mean, ignoring warps and environments
    let blind: Vec<usize> = (0..task.test.len())
        .map(|t| {
            let x = task.test.features.row(t);
            (0..task.truth.means.len())
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(&task.truth.means[a]).map(|(u, v)| (u - v) * (u - v)).sum();
                    let db: f64 = x.iter().zip(&task.truth.means[b]).map(|(u, v)| (u - v) * (u - v)).sum();
                    da.total_cmp(&db)
                })
                .unwrap()
        })
        .collect();
    let blind = fer(&blind, labels);
    assert!(bayes < blind, "bayes {bayes} vs blind {blind}");
    assert!(bayes < 0.5 && bayes > 0.0, "{bayes}");
}

#[test]
fn null_warp_is_identity_and_speakers_look_alike() {
    let spec = ClusterTaskSpec {
        speaker_warp_scale: 0.0,
        n_test_speakers: 8,
        frames_per_speaker_per_env: 400,
        ..small_spec(6)
    };
    let task = gen_multicluster(&spec).unwrap();
    for (a, off) in task.truth.warps.values() {
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(off.iter().all(|&o| o == 0.0));
    }
    let pred = task.truth.bayes_labels(&task.test).unwrap();
    let labels = task.test.labels().unwrap();
    let per: Vec<f64> = task
        .test
        .speaker_ids()
        .into_iter()
        .map(|s| {
            let idx: Vec<usize> = (0..task.test.len()).filter(|&t| task.test.speakers[t] == s).collect();
            idx.iter().filter(|&&t| pred[t] != labels[t]).count() as f64 / idx.len() as f64
        })
        .collect();
    let (lo, hi) = per.iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    // 1200 frames per speaker: sampling spread only
    assert!(hi - lo <= 0.05, "per-speaker Bayes FER spread {per:?}");
}

#[test]
fn corruption_rate_matches_at_10k_frames() {
    let n = 10_000;
    let labels: Vec<usize> = (0..n).map(|t| t % 10).collect();
    let out = corrupt_labels(&labels, 10, 0.3, 9).unwrap();
    let changed = labels.iter().zip(&out).filter(|(a, b)| a != b).count() as f64;
    let sd = (n as f64 * 0.3 * 0.7).sqrt();
    assert!((changed - 0.3 * n as f64).abs() <= 4.0 * sd, "{changed}");
    assert!(out.iter().all(|&c| c < 10));
    assert_eq!(corrupt_labels(&labels, 10, 0.0, 9).unwrap(), labels);
    assert!(corrupt_labels(&labels, 10, 1.0, 9).is_err());
}

#[test]
fn mixture_draws_modes_evenly() {
    let spec = MixtureSpec { n_points: 4000, ..MixtureSpec::default() };
    let d = gen_mixture_bump(&spec).unwrap();
    let a = d.speakers.iter().filter(|&&s| s == 1).count() as f64;
    let sd = (4000.0f64 * 0.25).sqrt();
    assert!((a - 2000.0).abs() <= 4.0 * sd, "{a}");
    assert!(d.features.is_finite());
    // the mode-a frames are exactly the single-mode sample
    let (sa, _) = spec.mode_seeds();
    let solo = sample_bump_fn(&spec.mode_a, a as usize, spec.x_range, spec.noise_sd, 1, sa).unwrap();
    assert_eq!(d.speaker(1).features, solo.features);
}

#[test]
fn bump_sets_are_separate_speakers() {
    let (f1, f2) = gen_bump(&BumpSpec::default()).unwrap();
    assert_eq!(f1.len(), f2.len());
    assert_eq!(f1.speaker_ids(), vec![1]);
    assert_eq!(f2.speaker_ids(), vec![2]);
    assert!(f1.features.is_finite() && f2.features.is_finite());
    assert!(sample_bump_fn(&[Bump { center: 0.0, width: -1.0, height: 1.0 }], 10, [-1.0, 1.0], 0.0, 1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_frames_are_finite(seed in any::<u64>(), warp in 0.0f64..1.5, corruption in 0.0f64..0.9) {
        let spec = ClusterTaskSpec {
            n_train_speakers: 2,
            n_test_speakers: 2,
            frames_per_speaker_per_env: 30,
            speaker_warp_scale: warp,
            label_corruption: corruption,
            seed,
            ..ClusterTaskSpec::default()
        };
        let task = gen_multicluster(&spec).unwrap();
        prop_assert!(task.train.features.is_finite());
        prop_assert!(task.test.features.is_finite());
        prop_assert_eq!(task.test_targets.len(), task.test.len());
        prop_assert!(task.train.validate().is_ok());
    }
}
