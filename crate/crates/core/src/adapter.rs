//! Test-time LHUC adaptation of a frozen network.
//!
//! Only the amplitude parameters `r` of a fresh transform are estimated; the
//! network itself is borrowed immutably throughout. Adaptation targets are
//! either supplied labels or first-pass pseudo-labels from the
//! speaker-independent model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{FrameDataset, Targets};
use crate::error::{LhucError, Result};
use crate::model::{
    backward, forward, ClusterId, EffectiveScale, LhucTransform, NetworkParams, OutputKind,
    ReparamKind, Scaling, TransformBank,
};
use crate::objective::{loss_and_grad, predict};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub lr: f64,
    /// Passes over the adaptation data.
    pub sweeps: usize,
    pub kind: ReparamKind,
    /// Which hidden layers are adapted; `None` adapts all of them.
    pub layers_enabled: Option<Vec<bool>>,
    /// Use the reference labels instead of first-pass pseudo-labels.
    pub supervised: bool,
    pub batch_size: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            lr: 0.8,
            sweeps: 1,
            kind: ReparamKind::Exp,
            layers_enabled: None,
            supervised: false,
            batch_size: 32,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(LhucError::Config(format!("adaptation lr {} must be > 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(LhucError::Config("adaptation batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn enabled(&self, n_hidden: usize) -> Result<Vec<bool>> {
        match &self.layers_enabled {
            None => Ok(vec![true; n_hidden]),
            Some(v) if v.len() == n_hidden => Ok(v.clone()),
            Some(v) => Err(LhucError::Config(format!(
                "layers_enabled has {} entries, network has {n_hidden} hidden layers",
                v.len()
            ))),
        }
    }
}

/// Where hidden-unit amplitudes come from when running a frozen network.
#[derive(Debug, Clone, Copy)]
pub enum Amplitudes<'a, T = f64> {
    /// Unscaled network.
    None,
    Transform(&'a LhucTransform<T>),
    Scale(&'a EffectiveScale<T>),
}

impl<'a, T: Scalar> Amplitudes<'a, T> {
    /// The speaker-independent view of an optional SAT bank (cluster 0).
    pub fn si_of(bank: Option<&'a TransformBank<T>>) -> Result<Self> {
        match bank {
            None => Ok(Amplitudes::None),
            Some(b) => Ok(Amplitudes::Transform(b.get(ClusterId::SI)?)),
        }
    }

    fn resolve(self) -> Option<EffectiveScale<T>> {
        match self {
            Amplitudes::None => None,
            Amplitudes::Transform(t) => Some(t.effective()),
            Amplitudes::Scale(s) => Some(s.clone()),
        }
    }
}

fn outputs<T: Scalar>(
    params: &NetworkParams<T>,
    amps: Amplitudes<'_, T>,
    data: &FrameDataset<T>,
) -> Result<crate::tensor::Matrix<T>> {
    match amps.resolve() {
        None => predict(params, Scaling::None, &data.features),
        Some(s) => predict(params, Scaling::Effective(&s), &data.features),
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// First-pass labels: the most probable class per frame, lowest index on ties.
pub fn pseudo_label<T: Scalar>(
    params: &NetworkParams<T>,
    amps: Amplitudes<'_, T>,
    data: &FrameDataset<T>,
) -> Result<Vec<usize>> {
    if params.output_kind != OutputKind::SoftmaxClassifier {
        return Err(LhucError::Unsupported("pseudo-labels need a classifier head"));
    }
    let out = outputs(params, amps, data)?;
    Ok((0..out.rows()).map(|t| argmax(out.row(t))).collect())
}

/// Estimates a fresh transform on `data` (using its targets) by SGD on `r`
/// only. Batches follow temporal order.
pub fn adapt<T: Scalar>(
    params: &NetworkParams<T>,
    data: &FrameDataset<T>,
    cfg: &AdaptConfig,
) -> Result<LhucTransform<T>> {
    adapt_from(params, data, LhucTransform::for_network(cfg.kind, params), cfg)
}

/// As [`adapt`] with explicit class labels replacing the dataset's own.
pub fn adapt_with_labels<T: Scalar>(
    params: &NetworkParams<T>,
    data: &FrameDataset<T>,
    labels: &[usize],
    cfg: &AdaptConfig,
) -> Result<LhucTransform<T>> {
    if labels.len() != data.len() {
        return Err(LhucError::Dataset(format!(
            "{} labels for {} frames",
            labels.len(),
            data.len()
        )));
    }
    adapt(params, &data.with_labels(labels.to_vec())?, cfg)
}

/// Continues estimation from a given starting transform.
pub fn adapt_from<T: Scalar>(
    params: &NetworkParams<T>,
    data: &FrameDataset<T>,
    init: LhucTransform<T>,
    cfg: &AdaptConfig,
) -> Result<LhucTransform<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(LhucError::EmptyAdaptationSet);
    }
    let enabled = cfg.enabled(params.n_hidden())?;
    if init.widths() != params.hidden_widths() {
        return Err(LhucError::Topology("initial transform does not fit network".into()));
    }
    const ID: ClusterId = ClusterId(1);
    let mut bank = TransformBank::single(ID, init);
    let lr = T::lit(cfg.lr);
    let order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.sweeps {
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk);
            let routes = vec![ID; chunk.len()];
            let grads = {
                let tr = forward(params, Scaling::Routed { bank: &bank, routes: &routes }, &batch.features)?;
                let (_, g) = loss_and_grad(params.output_kind, &tr.output, &batch.targets)?;
                backward(&tr, params, &g)?
            };
            let t = bank.get_mut(ID)?;
            for (l, (rv, gv)) in t.r.iter_mut().zip(&grads.r[&ID]).enumerate() {
                if !enabled[l] {
                    continue;
                }
                for (r, &d) in rv.data.iter_mut().zip(&gv.data) {
                    *r -= lr * d;
                }
            }
        }
    }
    Ok(bank.map.remove(&ID).unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub frame_error_rate: f64,
    pub mean_loss: f64,
    pub frames: usize,
}

/// Frame error rate and mean loss, overall and per speaker.
///
/// For regression heads `frame_error_rate` is 0 and `mean_loss` is the MSE.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub frame_error_rate: f64,
    pub mean_loss: f64,
    pub frames: usize,
    pub per_cluster: BTreeMap<u32, ClusterMetrics>,
}

pub fn evaluate<T: Scalar>(
    params: &NetworkParams<T>,
    amps: Amplitudes<'_, T>,
    data: &FrameDataset<T>,
) -> Result<Metrics> {
    let out = outputs(params, amps, data)?;
    let n = data.len();
    // per speaker: (errors, loss sum, frames)
    let mut acc: BTreeMap<u32, (usize, f64, usize)> = BTreeMap::new();
    for t in 0..n {
        let row = out.row(t);
        let (err, loss) = match &data.targets {
            Targets::Classes { labels, n_classes } => {
                if row.len() != *n_classes {
                    return Err(LhucError::Shape {
                        op: "evaluate",
                        left: out.shape(),
                        right: (n, *n_classes),
                    });
                }
                let c = labels[t];
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
                ((argmax(row) != c) as usize, (lse - row[c]).to_f64_lossy())
            }
            Targets::Values(y) => {
                let yt = y.row(t);
                let se: f64 = row
                    .iter()
                    .zip(yt)
                    .map(|(&p, &q)| (p - q).to_f64_lossy().powi(2))
                    .sum();
                (0, se / yt.len().max(1) as f64)
            }
        };
        let e = acc.entry(data.speakers[t]).or_default();
        e.0 += err;
        e.1 += loss;
        e.2 += 1;
    }
    let (mut errs, mut loss) = (0usize, 0.0);
    let per_cluster = acc
        .into_iter()
        .map(|(s, (e, l, f))| {
            errs += e;
            loss += l;
            (
                s,
                ClusterMetrics {
                    frame_error_rate: e as f64 / f as f64,
                    mean_loss: l / f as f64,
                    frames: f,
                },
            )
        })
        .collect();
    let denom = n.max(1) as f64;
    Ok(Metrics {
        frame_error_rate: errs as f64 / denom,
        mean_loss: loss / denom,
        frames: n,
        per_cluster,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPassResult<T = f64> {
    pub transform: LhucTransform<T>,
    /// First-pass (speaker-independent) metrics.
    pub unadapted: Metrics,
    pub adapted: Metrics,
    /// Fraction of adaptation targets equal to the reference labels.
    pub target_accuracy: f64,
}

/// Unsupervised two-pass adaptation: label with the SI model (cluster 0 of a
/// SAT bank, the bare network otherwise), adapt on those labels, and score
/// the adapted model against the reference labels.
pub fn two_pass_adapt<T: Scalar>(
    params: &NetworkParams<T>,
    bank: Option<&TransformBank<T>>,
    data: &FrameDataset<T>,
    cfg: &AdaptConfig,
) -> Result<TwoPassResult<T>> {
    let si = Amplitudes::si_of(bank)?;
    let reference = data
        .labels()
        .ok_or(LhucError::Unsupported("two-pass adaptation needs class labels"))?;
    let targets = if cfg.supervised {
        reference.to_vec()
    } else {
        pseudo_label(params, si, data)?
    };
    two_pass_with_targets(params, bank, data, &targets, cfg)
}

/// Two-pass adaptation with externally supplied adaptation targets.
pub fn two_pass_with_targets<T: Scalar>(
    params: &NetworkParams<T>,
    bank: Option<&TransformBank<T>>,
    data: &FrameDataset<T>,
    targets: &[usize],
    cfg: &AdaptConfig,
) -> Result<TwoPassResult<T>> {
    let si = Amplitudes::si_of(bank)?;
    let reference = data
        .labels()
        .ok_or(LhucError::Unsupported("two-pass adaptation needs class labels"))?;
    let unadapted = evaluate(params, si, data)?;
    let transform = adapt_with_labels(params, data, targets, cfg)?;
    let adapted = evaluate(params, Amplitudes::Transform(&transform), data)?;
    let agree = targets.iter().zip(reference).filter(|(a, b)| a == b).count();
    Ok(TwoPassResult {
        transform,
        unadapted,
        adapted,
        target_accuracy: agree as f64 / data.len().max(1) as f64,
    })
}

/// Scores new data with a previously estimated transform, without
/// re-estimation.
pub fn one_shot_apply<T: Scalar>(
    params: &NetworkParams<T>,
    transform: &LhucTransform<T>,
    data: &FrameDataset<T>,
) -> Result<Metrics> {
    if transform.widths() != params.hidden_widths() {
        return Err(LhucError::Topology(format!(
            "transform widths {:?} vs hidden widths {:?}",
            transform.widths(),
            params.hidden_widths()
        )));
    }
    evaluate(params, Amplitudes::Transform(transform), data)
}

/// `alpha * speaker + (1 - alpha) * environment`, elementwise in scale space.
pub fn interpolate<T: Scalar>(
    speaker: &EffectiveScale<T>,
    environment: &EffectiveScale<T>,
    alpha: f64,
) -> Result<EffectiveScale<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LhucError::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    if speaker.widths() != environment.widths() {
        return Err(LhucError::Topology(format!(
            "scale widths {:?} vs {:?}",
            speaker.widths(),
            environment.widths()
        )));
    }
    let (a, b) = (T::lit(alpha), T::lit(1.0 - alpha));
    Ok(EffectiveScale {
        scales: speaker
            .scales
            .iter()
            .zip(&environment.scales)
            .map(|(s, e)| {
                crate::tensor::Vector::new(
                    s.data.iter().zip(&e.data).map(|(&x, &y)| a * x + b * y).collect(),
                )
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorisedConfig {
    /// Interpolation weights on the speaker transform.
    pub alphas: Vec<f64>,
    /// Environment whose frames are used to estimate speaker transforms.
    pub clean_environment: u32,
    /// Drop the target speaker's frames from environment adaptation data.
    pub exclude_target_speaker: bool,
}

impl Default for FactorisedConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.5, 0.7],
            clean_environment: 1,
            exclude_target_speaker: true,
        }
    }
}

/// Results for one (speaker, environment) test condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorisedRow {
    pub speaker: u32,
    pub environment: u32,
    pub unadapted: Metrics,
    pub speaker_only: Metrics,
    pub environment_only: Metrics,
    /// One entry per configured alpha.
    pub interpolated: Vec<Metrics>,
    pub joint: Metrics,
}

/// Frame-weighted FER of each condition over all test conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorisedSummary {
    pub unadapted: f64,
    pub speaker_only: f64,
    pub environment_only: f64,
    pub interpolated: Vec<f64>,
    pub joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorisedReport {
    pub alphas: Vec<f64>,
    pub rows: Vec<FactorisedRow>,
    pub summary: FactorisedSummary,
}

/// Speaker x environment factorisation on held-out data.
///
/// For each speaker and each noisy environment: a speaker transform from the
/// speaker's clean frames, an environment transform from the other
/// speakers' frames in that environment, their interpolation, and a joint
/// transform from the speaker's own frames in that environment. All are
/// scored on the speaker's frames in that environment.
pub fn factorised_experiment<T: Scalar>(
    params: &NetworkParams<T>,
    bank: Option<&TransformBank<T>>,
    data: &FrameDataset<T>,
    adapt_cfg: &AdaptConfig,
    cfg: &FactorisedConfig,
) -> Result<FactorisedReport> {
    let envs_all = data
        .environments
        .as_ref()
        .ok_or_else(|| LhucError::Dataset("factorised adaptation needs environment ids".into()))?;
    for &a in &cfg.alphas {
        if !(0.0..=1.0).contains(&a) {
            return Err(LhucError::Config(format!("alpha {a} outside [0, 1]")));
        }
    }
    let si = Amplitudes::si_of(bank)?;
    let reference = data
        .labels()
        .ok_or(LhucError::Unsupported("factorised adaptation needs class labels"))?;
    let targets = if adapt_cfg.supervised {
        reference.to_vec()
    } else {
        pseudo_label(params, si, data)?
    };
    let labelled = data.with_labels(targets)?;
    let env_ids = data.environment_ids().unwrap_or_default();
    let test_envs: Vec<u32> = if env_ids.len() == 1 {
        env_ids.clone()
    } else {
        env_ids.iter().copied().filter(|&e| e != cfg.clean_environment).collect()
    };

    let mut env_cache: BTreeMap<(u32, Option<u32>), EffectiveScale<T>> = BTreeMap::new();
    let mut rows = Vec::new();
    for s in data.speaker_ids() {
        let clean = labelled.filter(|t| data.speakers[t] == s && envs_all[t] == cfg.clean_environment);
        if clean.is_empty() {
            return Err(LhucError::Dataset(format!("speaker {s} has no clean-condition frames")));
        }
        let spk_scale = adapt(params, &clean, adapt_cfg)?.effective();
        for &e in &test_envs {
            let eval_idx: Vec<usize> = (0..data.len())
                .filter(|&t| data.speakers[t] == s && envs_all[t] == e)
                .collect();
            if eval_idx.is_empty() {
                continue;
            }
            let excluded = cfg.exclude_target_speaker.then_some(s);
            if !env_cache.contains_key(&(e, excluded)) {
                let env_data = labelled.filter(|t| envs_all[t] == e && Some(data.speakers[t]) != excluded);
                let scale = adapt(params, &env_data, adapt_cfg)?.effective();
                env_cache.insert((e, excluded), scale);
            }
            let env_scale = &env_cache[&(e, excluded)];
            let eval = data.subset(&eval_idx);
            let joint = adapt(params, &labelled.subset(&eval_idx), adapt_cfg)?;
            let interpolated = cfg
                .alphas
                .iter()
                .map(|&a| {
                    let mix = interpolate(&spk_scale, env_scale, a)?;
                    evaluate(params, Amplitudes::Scale(&mix), &eval)
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(FactorisedRow {
                speaker: s,
                environment: e,
                unadapted: evaluate(params, si, &eval)?,
                speaker_only: evaluate(params, Amplitudes::Scale(&spk_scale), &eval)?,
                environment_only: evaluate(params, Amplitudes::Scale(env_scale), &eval)?,
                interpolated,
                joint: evaluate(params, Amplitudes::Transform(&joint), &eval)?,
            });
        }
    }

    let pooled = |f: &dyn Fn(&FactorisedRow) -> &Metrics| -> f64 {
        let (mut err, mut n) = (0.0, 0usize);
        for r in &rows {
            let m = f(r);
            err += m.frame_error_rate * m.frames as f64;
            n += m.frames;
        }
        err / n.max(1) as f64
    };
    let summary = FactorisedSummary {
        unadapted: pooled(&|r| &r.unadapted),
        speaker_only: pooled(&|r| &r.speaker_only),
        environment_only: pooled(&|r| &r.environment_only),
        interpolated: (0..cfg.alphas.len())
            .map(|i| pooled(&|r: &FactorisedRow| &r.interpolated[i]))
            .collect(),
        joint: pooled(&|r| &r.joint),
    };
    Ok(FactorisedReport {
        alphas: cfg.alphas.clone(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, OutputKind};
    use crate::tensor::{Matrix, Vector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn classifier(seed: u64, sizes: &[usize]) -> NetworkParams<f64> {
        NetworkParams::init(sizes, OutputKind::SoftmaxClassifier, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_data(seed: u64, n: usize, dim: usize, classes: usize, speakers: u32) -> FrameDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        FrameDataset::new(
            Matrix::from_vec(n, dim, feats).unwrap(),
            Targets::Classes {
                labels: (0..n).map(|_| rng.random_range(0..classes)).collect(),
                n_classes: classes,
            },
            (0..n).map(|t| (t as u32 % speakers) + 1).collect(),
            (0..n).map(|t| t as u32 / 10 + 1).collect(),
            Some((0..n).map(|t| (t as u32 / 7) % 2 + 1).collect()),
        )
        .unwrap()
    }

    /// Output layer weights zeroed: logits equal the output bias.
    fn constant_logits(bias: Vec<f64>, dim: usize) -> NetworkParams<f64> {
        let k = bias.len();
        NetworkParams::new(
            vec![
                Layer { w: Matrix::zeros(3, dim), b: Vector::zeros(3) },
                Layer { w: Matrix::zeros(k, 3), b: Vector::new(bias) },
            ],
            OutputKind::SoftmaxClassifier,
        )
        .unwrap()
    }

    #[test]
    fn pseudo_label_argmax_and_ties() {
        let d = random_data(1, 3, 2, 3, 1);
        let p = constant_logits(vec![0.1, 2.0, 0.3], 2);
        assert_eq!(pseudo_label(&p, Amplitudes::None, &d).unwrap(), vec![1, 1, 1]);
        let p = constant_logits(vec![0.5, 0.5, 0.2], 2);
        assert_eq!(pseudo_label(&p, Amplitudes::None, &d).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn pseudo_label_rejects_regressors() {
        let mut p = classifier(1, &[2, 3, 1]);
        p.output_kind = OutputKind::LinearRegressor;
        let d = random_data(2, 4, 2, 2, 1);
        assert!(matches!(pseudo_label(&p, Amplitudes::None, &d), Err(LhucError::Unsupported(_))));
    }

    #[test]
    fn pseudo_label_accuracy_is_one_minus_fer() {
        let p = classifier(3, &[4, 6, 3]);
        let d = random_data(4, 200, 4, 3, 2);
        let labels = pseudo_label(&p, Amplitudes::None, &d).unwrap();
        let acc = labels.iter().zip(d.labels().unwrap()).filter(|(a, b)| a == b).count() as f64 / 200.0;
        let m = evaluate(&p, Amplitudes::None, &d).unwrap();
        assert!((acc - (1.0 - m.frame_error_rate)).abs() < 1e-15);
    }

    #[test]
    fn uniform_posterior_loss_is_log_k() {
        let p = constant_logits(vec![0.0; 10], 3);
        let d = random_data(5, 50, 3, 10, 2);
        let m = evaluate(&p, Amplitudes::None, &d).unwrap();
        assert!((m.mean_loss - 10f64.ln()).abs() < 1e-12);
        assert_eq!(m.per_cluster.len(), 2);
    }

    #[test]
    fn perfect_predictions_have_zero_fer() {
        let p = classifier(6, &[3, 4, 3]);
        let d = random_data(7, 40, 3, 3, 1);
        let labels = pseudo_label(&p, Amplitudes::None, &d).unwrap();
        let m = evaluate(&p, Amplitudes::None, &d.with_labels(labels).unwrap()).unwrap();
        assert_eq!(m.frame_error_rate, 0.0);
    }

    #[test]
    fn zero_sweeps_returns_identity_and_params_stay_frozen() {
        let p = classifier(8, &[3, 5, 4, 3]);
        let d = random_data(9, 64, 3, 3, 1);
        let before = format!("{:?}", p);
        let cfg = AdaptConfig { sweeps: 0, ..Default::default() };
        assert_eq!(adapt(&p, &d, &cfg).unwrap(), LhucTransform::for_network(ReparamKind::Exp, &p));
        let t = adapt(&p, &d, &AdaptConfig { sweeps: 3, ..Default::default() }).unwrap();
        assert_ne!(t, LhucTransform::for_network(ReparamKind::Exp, &p));
        assert_eq!(format!("{:?}", p), before);
    }

    #[test]
    fn adapt_rejects_empty_and_bad_layer_mask() {
        let p = classifier(10, &[3, 5, 3]);
        let d = random_data(11, 10, 3, 3, 1);
        assert_eq!(adapt(&p, &d.subset(&[]), &AdaptConfig::default()).unwrap_err(), LhucError::EmptyAdaptationSet);
        let cfg = AdaptConfig { layers_enabled: Some(vec![true, false]), ..Default::default() };
        assert!(matches!(adapt(&p, &d, &cfg), Err(LhucError::Config(_))));
    }

    #[test]
    fn disabled_layers_stay_at_identity() {
        let p = classifier(12, &[3, 5, 4, 3]);
        let d = random_data(13, 64, 3, 3, 1);
        let cfg = AdaptConfig { layers_enabled: Some(vec![false, true]), ..Default::default() };
        let t = adapt(&p, &d, &cfg).unwrap();
        assert!(t.r[0].data.iter().all(|&r| r == 0.0));
        assert!(t.r[1].data.iter().any(|&r| r != 0.0));
    }

    #[test]
    fn supervised_adaptation_reduces_training_loss() {
        let p = classifier(14, &[4, 8, 3]);
        let d = random_data(15, 128, 4, 3, 1);
        let before = evaluate(&p, Amplitudes::None, &d).unwrap().mean_loss;
        let t = adapt(&p, &d, &AdaptConfig { sweeps: 5, ..Default::default() }).unwrap();
        let after = evaluate(&p, Amplitudes::Transform(&t), &d).unwrap().mean_loss;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn one_shot_on_same_session_matches_two_pass() {
        let p = classifier(16, &[4, 8, 3]);
        let d = random_data(17, 96, 4, 3, 1);
        let r = two_pass_adapt(&p, None, &d, &AdaptConfig::default()).unwrap();
        assert_eq!(one_shot_apply(&p, &r.transform, &d).unwrap(), r.adapted);
        let wrong = LhucTransform::<f64>::identity(ReparamKind::Exp, &[3]);
        assert!(one_shot_apply(&p, &wrong, &d).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let s = EffectiveScale { scales: vec![Vector::new(vec![1.0, 3.0])] };
        let e = EffectiveScale { scales: vec![Vector::new(vec![0.5, 0.1])] };
        assert_eq!(interpolate(&s, &e, 1.0).unwrap(), s);
        assert_eq!(interpolate(&s, &e, 0.0).unwrap(), e);
        assert_eq!(interpolate(&s, &e, 0.5).unwrap().scales[0].data[0], 0.75);
        assert!(interpolate(&s, &e, 1.2).is_err());
        assert!(interpolate(&s, &e, -0.1).is_err());
    }

    #[test]
    fn factorised_needs_environments() {
        let p = classifier(18, &[3, 4, 3]);
        let mut d = random_data(19, 30, 3, 3, 2);
        d.environments = None;
        assert!(matches!(
            factorised_experiment(&p, None, &d, &AdaptConfig::default(), &FactorisedConfig::default()),
            Err(LhucError::Dataset(_))
        ));
    }

    #[test]
    fn single_environment_env_only_equals_joint() {
        let p = classifier(20, &[3, 6, 3]);
        let mut d = random_data(21, 80, 3, 3, 1);
        d.environments = Some(vec![1; 80]);
        let cfg = FactorisedConfig { exclude_target_speaker: false, ..Default::default() };
        let rep = factorised_experiment(&p, None, &d, &AdaptConfig::default(), &cfg).unwrap();
        assert_eq!(rep.rows.len(), 1);
        let row = &rep.rows[0];
        assert!((row.environment_only.frame_error_rate - row.joint.frame_error_rate).abs() <= 1e-12);
        assert!((row.speaker_only.frame_error_rate - row.joint.frame_error_rate).abs() <= 1e-12);
    }

    #[test]
    fn factorised_report_shape() {
        let p = classifier(22, &[3, 6, 3]);
        let d = random_data(23, 120, 3, 3, 3);
        let rep = factorised_experiment(&p, None, &d, &AdaptConfig::default(), &FactorisedConfig::default()).unwrap();
        // environments {1, 2}; clean = 1, so one test condition per speaker
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.rows.iter().all(|r| r.environment == 2 && r.interpolated.len() == 2));
        assert_eq!(rep.summary.interpolated.len(), 2);
    }

    proptest! {
        #[test]
        fn interpolation_is_monotone_and_stays_in_sigmoid2_range(
            rs in proptest::collection::vec(-20.0f64..20.0, 4),
            re in proptest::collection::vec(-20.0f64..20.0, 4),
            alpha in 0.0f64..=1.0,
        ) {
            let s = LhucTransform { kind: ReparamKind::Sigmoid2, r: vec![Vector::new(rs)] }.effective();
            let e = LhucTransform { kind: ReparamKind::Sigmoid2, r: vec![Vector::new(re)] }.effective();
            let m = interpolate(&s, &e, alpha).unwrap();
            for ((&v, &a), &b) in m.scales[0].data.iter().zip(&s.scales[0].data).zip(&e.scales[0].data) {
                prop_assert!(v > 0.0 && v < 2.0);
                prop_assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
            }
        }

        #[test]
        fn pseudo_labels_ignore_constant_logit_shift(shift in -50.0f64..50.0, seed in 0u64..100) {
            let p = classifier(seed, &[3, 4, 4]);
            let d = random_data(seed + 1, 20, 3, 4, 1);
            let mut q = p.clone();
            for b in &mut q.layers[1].b.data {
                *b += shift;
            }
            let a = pseudo_label(&p, Amplitudes::None, &d).unwrap();
            let b = pseudo_label(&q, Amplitudes::None, &d).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
