//! Behavioural checks of speaker adaptation against one shared SI model
//! trained on the default multi-cluster task.

use std::sync::OnceLock;

use lhuc::adapter::{adapt, adapt_with_labels, evaluate, one_shot_apply, two_pass_adapt, two_pass_with_targets};
use lhuc::synth::{corrupt_labels, gen_multicluster, ClusterTaskSpec, MultiClusterTask};
use lhuc::trainer::train_si;
use lhuc::{
    AdaptConfig, Amplitudes, FrameDataset, Matrix, Network64, NetworkParams, OutputKind, Targets, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    task: MultiClusterTask,
    si: Network64,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let task = gen_multicluster(&ClusterTaskSpec::default()).unwrap();
        let init = NetworkParams::init(
            &[20, 64, 64, 10],
            OutputKind::SoftmaxClassifier,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let (si, _) = train_si(&task.train, &init, &TrainConfig::default()).unwrap();
        Fixture { task, si }
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn constant_output_classifier_sits_at_chance() {
    let f = fixture();
    let mut flat = f.si.clone();
    let last = flat.layers.last_mut().unwrap();
    last.w.as_mut_slice().fill(0.0);
    last.b.data.fill(0.0);
    let m = evaluate(&flat, Amplitudes::None, &f.task.test).unwrap();
    assert!((0.888..=0.912).contains(&m.frame_error_rate), "{}", m.frame_error_rate);
    assert!((m.mean_loss - 10f64.ln()).abs() <= 1e-12);
}

#[test]
fn trained_model_is_far_above_chance_and_above_bayes() {
    let f = fixture();
    let m = evaluate(&f.si, Amplitudes::None, &f.task.test).unwrap();
    let labels = f.task.test.labels().unwrap();
    let bayes = f.task.truth.bayes_labels(&f.task.test).unwrap();
    let bayes_fer = bayes.iter().zip(labels).filter(|(a, b)| a != b).count() as f64 / labels.len() as f64;
    assert!(m.frame_error_rate < 0.3, "{}", m.frame_error_rate);
    assert!(bayes_fer <= m.frame_error_rate, "bayes {bayes_fer} vs SI {}", m.frame_error_rate);
}

#[test]
fn disabled_layers_keep_identity_amplitudes() {
    let f = fixture();
    let data = f.task.test.speaker(31);
    let before = f.si.clone();
    let cfg = AdaptConfig { layers_enabled: Some(vec![false, true]), ..AdaptConfig::default() };
    let t = adapt(&f.si, &data, &cfg).unwrap();
    assert!(t.r[0].data.iter().all(|&r| r == 0.0));
    assert!(t.r[1].data.iter().any(|&r| r != 0.0));
    assert_eq!(f.si, before);
    let bad = AdaptConfig { layers_enabled: Some(vec![true]), ..AdaptConfig::default() };
    assert!(adapt(&f.si, &data, &bad).is_err());
}

#[test]
fn supervised_targets_beat_pseudo_labels_for_most_speakers() {
    let f = fixture();
    let ids = f.task.test.speaker_ids();
    let sup = AdaptConfig { supervised: true, ..AdaptConfig::default() };
    let wins = ids
        .iter()
        .filter(|&&s| {
            let d = f.task.test.speaker(s);
            let u = two_pass_adapt(&f.si, None, &d, &AdaptConfig::default()).unwrap();
            let v = two_pass_adapt(&f.si, None, &d, &sup).unwrap();
            assert_eq!(v.target_accuracy, 1.0);
            v.adapted.frame_error_rate <= u.adapted.frame_error_rate
        })
        .count();
    assert!(wins >= 18, "supervised no worse on {wins}/20 speakers");
}

#[test]
fn transforms_are_speaker_specific() {
    let f = fixture();
    let ids = f.task.test.speaker_ids();
    let cfg = AdaptConfig::default();
    // estimate on session 0, score on a fresh session of the same speakers
    let fresh = gen_multicluster(&ClusterTaskSpec { session: 1, ..ClusterTaskSpec::default() }).unwrap();
    let transforms: Vec<_> = ids
        .iter()
        .map(|&s| two_pass_adapt(&f.si, None, &f.task.test.speaker(s), &cfg).unwrap().transform)
        .collect();
    let worse = (0..ids.len())
        .filter(|&i| {
            let other = (i + 1) % ids.len();
            let d = fresh.test.speaker(ids[i]);
            let own = one_shot_apply(&f.si, &transforms[i], &d).unwrap().frame_error_rate;
            let cross = one_shot_apply(&f.si, &transforms[other], &d).unwrap().frame_error_rate;
            cross > own
        })
        .count();
    assert!(worse > ids.len() / 2, "cross-speaker worse on {worse}/{} pairs", ids.len());
}

#[test]
fn more_adaptation_data_helps_on_average() {
    let f = fixture();
    let cfg = AdaptConfig::default();
    let (mut full, mut prefix) = (Vec::new(), Vec::new());
    for s in f.task.test.speaker_ids() {
        let d = f.task.test.speaker(s);
        let labels = d.labels().unwrap();
        let n = d.len() / 10;
        let idx: Vec<usize> = (0..n).collect();
        let t_full = adapt(&f.si, &d, &cfg).unwrap();
        let t_pre = adapt_with_labels(&f.si, &d.subset(&idx), &labels[..n], &cfg).unwrap();
        full.push(evaluate(&f.si, Amplitudes::Transform(&t_full), &d).unwrap().frame_error_rate);
        prefix.push(evaluate(&f.si, Amplitudes::Transform(&t_pre), &d).unwrap().frame_error_rate);
    }
    assert!(mean(&full) <= mean(&prefix), "full {} vs 10% {}", mean(&full), mean(&prefix));
}

#[test]
fn label_noise_never_helps() {
    let f = fixture();
    let cfg = AdaptConfig::default();
    let ids = f.task.test.speaker_ids();
    let fers: Vec<f64> = [0.0, 0.1, 0.3]
        .iter()
        .map(|&rate| {
            let per: Vec<f64> = ids
                .iter()
                .map(|&s| {
                    let d = f.task.test.speaker(s);
                    let noisy = corrupt_labels(d.labels().unwrap(), 10, rate, s as u64).unwrap();
                    two_pass_with_targets(&f.si, None, &d, &noisy, &cfg).unwrap().adapted.frame_error_rate
                })
                .collect();
            mean(&per)
        })
        .collect();
    assert!(fers.windows(2).all(|w| w[0] <= w[1]), "{fers:?}");
}

#[test]
fn separable_problem_trains_to_zero_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 400;
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        // margin of 0.2 around the line a + b = 0
        if (a + b).abs() < 0.2 {
            continue;
        }
        x.extend([a, b]);
        labels.push((a + b > 0.0) as usize);
    }
    let n = labels.len();
    let data = FrameDataset::new(
        Matrix::from_vec(n, 2, x).unwrap(),
        Targets::Classes { labels, n_classes: 2 },
        vec![1; n],
        (0..n as u32).map(|t| t / 20 + 1).collect(),
        None,
    )
    .unwrap();
    let init = NetworkParams::init(&[2, 8, 2], OutputKind::SoftmaxClassifier, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let cfg = TrainConfig { initial_lr: 0.5, batch_size: 8, max_epochs: 200, ..TrainConfig::default() };
    let (p, _) = train_si(&data, &init, &cfg).unwrap();
    let m = evaluate(&p, Amplitudes::None, &data).unwrap();
    assert_eq!(m.frame_error_rate, 0.0, "loss {}", m.mean_loss);
}
