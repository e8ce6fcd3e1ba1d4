//! Speaker-independent and speaker-adaptive (SAT-LHUC) training.
//!
//! Both loops run plain mini-batch SGD under a newbob schedule driven by the
//! cross-entropy on a held-out slice of the training data. SAT training
//! routes each frame either through its speaker's transform or through the
//! speaker-independent cluster 0, with probability `gamma` of the latter.

use std::collections::BTreeMap;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FrameDataset;
use crate::error::{LhucError, Result};
use crate::model::{backward, forward, ClusterId, NetworkParams, ReparamKind, Scaling, TransformBank};
use crate::objective::{dataset_loss, loss_and_grad};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewbobConfig {
    /// Relative CV improvement below which the learning rate is halved.
    pub ramp_threshold: f64,
    /// Relative CV improvement below which training stops (once halving began).
    pub stop_threshold: f64,
    /// Fraction of frames held out for the CV loss.
    pub holdout_fraction: f64,
}

impl Default for NewbobConfig {
    fn default() -> Self {
        Self {
            ramp_threshold: 0.005,
            stop_threshold: 0.0005,
            holdout_fraction: 0.1,
        }
    }
}

impl NewbobConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.stop_threshold
            && self.stop_threshold <= self.ramp_threshold
            && self.ramp_threshold < 1.0)
        {
            return Err(LhucError::Config(format!(
                "newbob thresholds need 0 < stop ({}) <= ramp ({}) < 1",
                self.stop_threshold, self.ramp_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(LhucError::Config(format!(
                "holdout_fraction {} outside [0, 1)",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub newbob: NewbobConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.08,
            batch_size: 32,
            max_epochs: 20,
            newbob: NewbobConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) {
            return Err(LhucError::Config(format!("initial_lr {} must be > 0", self.initial_lr)));
        }
        if self.batch_size == 0 {
            return Err(LhucError::Config("batch_size must be >= 1".into()));
        }
        self.newbob.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Frame,
    Segment,
    Speaker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatConfig {
    /// Probability that a frame (or unit) is routed through cluster 0.
    pub gamma: f64,
    pub granularity: Granularity,
    pub seed: u64,
}

impl Default for SatConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            granularity: Granularity::Frame,
            seed: 0,
        }
    }
}

impl SatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(LhucError::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Per-frame cluster routes and the realized speaker-independent fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteAssignment {
    pub routes: Vec<ClusterId>,
    pub si_fraction: f64,
}

impl RouteAssignment {
    /// Every route is either cluster 0 or the frame's own speaker.
    pub fn is_legal<T: Scalar>(&self, data: &FrameDataset<T>) -> bool {
        self.routes.len() == data.len()
            && self
                .routes
                .iter()
                .zip(&data.speakers)
                .all(|(r, &s)| r.is_si() || r.0 == s)
    }
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws SI/SD routes for every frame.
///
/// Frame granularity makes an independent Bernoulli(`gamma`) draw per frame.
/// Segment and speaker granularity order units by a seeded random key and
/// route to cluster 0 the prefix whose frame mass is closest to
/// `gamma * frames`, so the realized ratio is within half a unit of `gamma`.
/// Segment id 0 means "no segment".
pub fn assign_routes<T: Scalar>(data: &FrameDataset<T>, cfg: &SatConfig) -> Result<RouteAssignment> {
    assign_routes_epoch(data, cfg, 0)
}

/// As [`assign_routes`], with an extra stream index for per-epoch redraws.
pub fn assign_routes_epoch<T: Scalar>(
    data: &FrameDataset<T>,
    cfg: &SatConfig,
    epoch: u64,
) -> Result<RouteAssignment> {
    cfg.validate()?;
    let n = data.len();
    let mut rng = derived_rng(cfg.seed, epoch);
    let own = |t: usize| ClusterId(data.speakers[t]);
    let routes: Vec<ClusterId> = match cfg.granularity {
        Granularity::Frame => (0..n)
            .map(|t| {
                if rng.random::<f64>() < cfg.gamma {
                    ClusterId::SI
                } else {
                    own(t)
                }
            })
            .collect(),
        Granularity::Segment | Granularity::Speaker => {
            if cfg.granularity == Granularity::Segment && data.segments.iter().any(|&s| s == 0) {
                return Err(LhucError::Dataset(
                    "segment granularity needs segment ids on every frame".into(),
                ));
            }
            let unit_of = |t: usize| match cfg.granularity {
                Granularity::Segment => (data.speakers[t], data.segments[t]),
                _ => (data.speakers[t], 0),
            };
            let mut mass: BTreeMap<(u32, u32), usize> = BTreeMap::new();
            for t in 0..n {
                *mass.entry(unit_of(t)).or_default() += 1;
            }
            let mut units: Vec<((u32, u32), usize)> = mass.into_iter().collect();
            units.shuffle(&mut rng);
            let target = cfg.gamma * n as f64;
            let (mut best_k, mut best_err, mut cum) = (0, target, 0usize);
            for (k, (_, m)) in units.iter().enumerate() {
                cum += m;
                let err = (cum as f64 - target).abs();
                if err < best_err {
                    best_err = err;
                    best_k = k + 1;
                }
            }
            let si: std::collections::BTreeSet<(u32, u32)> =
                units[..best_k].iter().map(|(u, _)| *u).collect();
            (0..n)
                .map(|t| if si.contains(&unit_of(t)) { ClusterId::SI } else { own(t) })
                .collect()
        }
    };
    let si = routes.iter().filter(|r| r.is_si()).count();
    Ok(RouteAssignment {
        si_fraction: if n == 0 { 0.0 } else { si as f64 / n as f64 },
        routes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewbobDecision {
    Continue,
    HalveAndContinue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewbobState {
    pub lr: f64,
    pub best_cv: f64,
    pub halved: bool,
    pub cfg: NewbobConfig,
}

impl NewbobState {
    pub fn new(lr: f64, initial_cv: f64, cfg: NewbobConfig) -> Self {
        Self {
            lr,
            best_cv: initial_cv,
            halved: false,
            cfg,
        }
    }
}

/// Applies one epoch's CV loss to the schedule.
pub fn newbob_update(state: &mut NewbobState, cv: f64) -> (f64, NewbobDecision) {
    let improvement = (state.best_cv - cv) / state.best_cv.abs().max(f64::MIN_POSITIVE);
    let decision = if improvement >= state.cfg.ramp_threshold {
        NewbobDecision::Continue
    } else if improvement < state.cfg.stop_threshold && state.halved {
        NewbobDecision::Stop
    } else {
        NewbobDecision::HalveAndContinue
    };
    if decision == NewbobDecision::HalveAndContinue {
        state.lr *= 0.5;
        state.halved = true;
    }
    if cv < state.best_cv {
        state.best_cv = cv;
    }
    (state.lr, decision)
}

/// One epoch's entry in a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub cv_loss: f64,
    pub decision: NewbobDecision,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    /// CV loss of the initial parameters.
    pub initial_cv_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

/// One forward/backward on `batch` and an SGD update of the network and of
/// every routed cluster. Returns the batch loss before the update.
///
/// With `bank == None` the network is trained as a plain SI model and
/// `routes` is ignored.
pub fn sgd_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    bank: Option<&mut TransformBank<T>>,
    batch: &FrameDataset<T>,
    routes: &[ClusterId],
    lr: T,
) -> Result<T> {
    let (loss, grads) = {
        let scaling = match &bank {
            Some(b) => Scaling::Routed { bank: b, routes },
            None => Scaling::None,
        };
        let tr = forward(params, scaling, &batch.features)?;
        let (loss, g) = loss_and_grad(params.output_kind, &tr.output, &batch.targets)?;
        if lr == T::zero() {
            return Ok(loss);
        }
        (loss, backward(&tr, params, &g)?)
    };
    for (layer, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (w, &d) in layer.w.as_mut_slice().iter_mut().zip(g.w.as_slice()) {
            *w -= lr * d;
        }
        for (b, &d) in layer.b.data.iter_mut().zip(&g.b.data) {
            *b -= lr * d;
        }
    }
    if let Some(bank) = bank {
        for (id, gr) in &grads.r {
            let t = bank.get_mut(*id)?;
            for (rv, gv) in t.r.iter_mut().zip(gr) {
                for (r, &d) in rv.data.iter_mut().zip(&gv.data) {
                    *r -= lr * d;
                }
            }
        }
    }
    Ok(loss)
}

/// Seeded split into (train, cv) frame indices.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived_rng(seed, u64::MAX));
    let n_cv = ((n as f64) * fraction).round() as usize;
    let n_cv = if n_cv >= n { 0 } else { n_cv };
    let mut cv = idx.split_off(n - n_cv);
    let mut train = idx;
    train.sort_unstable();
    cv.sort_unstable();
    (train, cv)
}

struct Schedule<T: Scalar> {
    train_idx: Vec<usize>,
    cv: FrameDataset<T>,
}

fn schedule<T: Scalar>(data: &FrameDataset<T>, cfg: &TrainConfig) -> Result<Schedule<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(LhucError::Dataset("empty training set".into()));
    }
    let (train_idx, cv_idx) = holdout_split(data.len(), cfg.newbob.holdout_fraction, cfg.seed);
    // tiny sets: evaluate CV on the training frames
    let cv = if cv_idx.is_empty() {
        data.subset(&train_idx)
    } else {
        data.subset(&cv_idx)
    };
    Ok(Schedule { train_idx, cv })
}

fn epoch_order(train_idx: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = train_idx.to_vec();
    order.shuffle(&mut derived_rng(seed, epoch as u64));
    order
}

/// Runs the shared SGD/newbob loop. `step` performs one update on the given
/// frame indices; `cv_loss` evaluates the current model; `snapshot` is
/// called whenever the CV loss improves.
fn run_schedule<T: Scalar>(
    data: &FrameDataset<T>,
    cfg: &TrainConfig,
    sched: &Schedule<T>,
    mut begin_epoch: impl FnMut(usize) -> Result<()>,
    mut step: impl FnMut(&FrameDataset<T>, &[usize], T) -> Result<T>,
    mut cv_loss: impl FnMut(&FrameDataset<T>) -> Result<T>,
    mut snapshot: impl FnMut(),
) -> Result<TrainingCurve> {
    let initial = cv_loss(&sched.cv)?.to_f64_lossy();
    let mut curve = TrainingCurve {
        initial_cv_loss: initial,
        epochs: Vec::new(),
    };
    let mut state = NewbobState::new(cfg.initial_lr, initial, cfg.newbob.clone());
    let mut best = initial;
    for epoch in 1..=cfg.max_epochs {
        begin_epoch(epoch)?;
        let order = epoch_order(&sched.train_idx, cfg.seed, epoch);
        let lr = T::lit(state.lr);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.subset(chunk);
            let loss = step(&batch, chunk, lr)?.to_f64_lossy();
            if !loss.is_finite() {
                return Err(LhucError::NonFiniteLoss { epoch, batch: b });
            }
            total += loss * chunk.len() as f64;
        }
        let cv = cv_loss(&sched.cv)?.to_f64_lossy();
        if !cv.is_finite() {
            return Err(LhucError::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        if cv < best {
            best = cv;
            snapshot();
        }
        let lr_used = state.lr;
        let (_, decision) = newbob_update(&mut state, cv);
        let train_loss = total / order.len().max(1) as f64;
        debug!("epoch {epoch}: lr {lr_used} train {train_loss:.5} cv {cv:.5} {decision:?}");
        curve.epochs.push(EpochRecord {
            epoch,
            lr: lr_used,
            train_loss,
            cv_loss: cv,
            decision,
        });
        if decision == NewbobDecision::Stop {
            break;
        }
    }
    Ok(curve)
}

/// Trains a plain speaker-independent network. Returns the parameters with
/// the best CV loss seen (the initial ones if no epoch improved).
pub fn train_si<T: Scalar>(
    data: &FrameDataset<T>,
    params_init: &NetworkParams<T>,
    cfg: &TrainConfig,
) -> Result<(NetworkParams<T>, TrainingCurve)> {
    if cfg.max_epochs == 0 {
        cfg.validate()?;
        return Ok((params_init.clone(), TrainingCurve::default()));
    }
    let sched = schedule(data, cfg)?;
    let params = std::cell::RefCell::new(params_init.clone());
    let best = std::cell::RefCell::new(params_init.clone());
    let curve = run_schedule(
        data,
        cfg,
        &sched,
        |_| Ok(()),
        |batch, _, lr| sgd_step(&mut params.borrow_mut(), None, batch, &[], lr),
        |cv| dataset_loss(&params.borrow(), Scaling::None, cv),
        || *best.borrow_mut() = params.borrow().clone(),
    )?;
    Ok((best.into_inner(), curve))
}

/// SAT-LHUC training: jointly learns the network, the speaker-independent
/// transform (cluster 0) and one transform per training speaker.
///
/// Frame-level routes are redrawn every epoch; segment- and speaker-level
/// routes are drawn once. The CV loss is measured through cluster 0.
pub fn train_sat<T: Scalar>(
    data: &FrameDataset<T>,
    params_init: &NetworkParams<T>,
    cfg: &TrainConfig,
    sat: &SatConfig,
    kind: ReparamKind,
) -> Result<(NetworkParams<T>, TransformBank<T>, TrainingCurve)> {
    sat.validate()?;
    let widths = params_init.hidden_widths();
    let ids = std::iter::once(ClusterId::SI)
        .chain(data.speaker_ids().into_iter().map(ClusterId));
    let bank_init = TransformBank::with_clusters(kind, &widths, ids);
    if cfg.max_epochs == 0 {
        cfg.validate()?;
        return Ok((params_init.clone(), bank_init, TrainingCurve::default()));
    }
    let sched = schedule(data, cfg)?;
    let state = std::cell::RefCell::new((params_init.clone(), bank_init.clone()));
    let best = std::cell::RefCell::new((params_init.clone(), bank_init));
    let routes = std::cell::RefCell::new(assign_routes_epoch(data, sat, 0)?.routes);
    let curve = run_schedule(
        data,
        cfg,
        &sched,
        |epoch| {
            if sat.granularity == Granularity::Frame && epoch > 1 {
                *routes.borrow_mut() = assign_routes_epoch(data, sat, epoch as u64)?.routes;
            }
            Ok(())
        },
        |batch, idx, lr| {
            let r = routes.borrow();
            let batch_routes: Vec<ClusterId> = idx.iter().map(|&t| r[t]).collect();
            let (p, b) = &mut *state.borrow_mut();
            sgd_step(p, Some(b), batch, &batch_routes, lr)
        },
        |cv| {
            let (p, b) = &*state.borrow();
            let si = b.get(ClusterId::SI)?.effective();
            dataset_loss(p, Scaling::Effective(&si), cv)
        },
        || *best.borrow_mut() = state.borrow().clone(),
    )?;
    let (p, b) = best.into_inner();
    Ok((p, b, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Targets;
    use crate::model::OutputKind;
    use crate::tensor::Matrix;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, seed: u64, speakers: u32) -> FrameDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut spk = Vec::new();
        let mut seg = Vec::new();
        for i in 0..2 * n_per {
            let c = i % 2;
            let centre = if c == 0 { -1.0 } else { 1.0 };
            rows.push(vec![centre + noise.sample(&mut rng), -centre + noise.sample(&mut rng)]);
            labels.push(c);
            let s = (i as u32 % speakers) + 1;
            spk.push(s);
            seg.push(s * 100 + (i / 10) as u32 % 4 + 1);
        }
        FrameDataset::new(
            Matrix::from_rows(&rows).unwrap(),
            Targets::Classes { labels, n_classes: 2 },
            spk,
            seg,
            None,
        )
        .unwrap()
    }

    fn net(seed: u64) -> NetworkParams<f64> {
        NetworkParams::init(&[2, 8, 2], OutputKind::SoftmaxClassifier, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
    }

    #[test]
    fn newbob_rules() {
        let cfg = NewbobConfig::default();
        let mut s = NewbobState::new(0.08, 1.0, cfg.clone());
        assert_eq!(newbob_update(&mut s, 0.9), (0.08, NewbobDecision::Continue));

        let mut s = NewbobState::new(0.08, 1.0, cfg.clone());
        assert_eq!(newbob_update(&mut s, 0.998), (0.04, NewbobDecision::HalveAndContinue));

        let mut s = NewbobState::new(0.08, 1.0, cfg);
        s.halved = true;
        assert_eq!(newbob_update(&mut s, 0.9999).1, NewbobDecision::Stop);
    }

    #[test]
    fn newbob_worse_cv_halves_and_keeps_best() {
        let mut s = NewbobState::new(0.1, 1.0, NewbobConfig::default());
        assert_eq!(newbob_update(&mut s, 1.2).1, NewbobDecision::HalveAndContinue);
        assert_eq!(s.best_cv, 1.0);
        assert_eq!(newbob_update(&mut s, 1.1).1, NewbobDecision::Stop);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.initial_lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.newbob.stop_threshold = 0.01;
        assert!(c.validate().is_err());
        assert!(SatConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn routes_at_gamma_extremes() {
        let d = blobs(50, 1, 3);
        for g in [Granularity::Frame, Granularity::Segment, Granularity::Speaker] {
            let all_si = assign_routes(&d, &SatConfig { gamma: 1.0, granularity: g, seed: 4 }).unwrap();
            assert!(all_si.routes.iter().all(|r| r.is_si()));
            let all_sd = assign_routes(&d, &SatConfig { gamma: 0.0, granularity: g, seed: 4 }).unwrap();
            assert!(all_sd.routes.iter().zip(&d.speakers).all(|(r, &s)| r.0 == s));
            assert_eq!(all_sd.si_fraction, 0.0);
        }
    }

    #[test]
    fn unit_routes_are_coherent_and_legal() {
        let d = blobs(200, 2, 5);
        for g in [Granularity::Segment, Granularity::Speaker] {
            let a = assign_routes(&d, &SatConfig { gamma: 0.5, granularity: g, seed: 9 }).unwrap();
            assert!(a.is_legal(&d));
            let mut seen: BTreeMap<(u32, u32), ClusterId> = BTreeMap::new();
            for t in 0..d.len() {
                let key = match g {
                    Granularity::Segment => (d.speakers[t], d.segments[t]),
                    _ => (d.speakers[t], 0),
                };
                let prev = seen.entry(key).or_insert(a.routes[t]);
                assert_eq!(*prev, a.routes[t]);
            }
        }
    }

    #[test]
    fn segment_granularity_requires_segments() {
        let mut d = blobs(10, 3, 2);
        d.segments[3] = 0;
        let err = assign_routes(&d, &SatConfig { gamma: 0.5, granularity: Granularity::Segment, seed: 0 });
        assert!(matches!(err, Err(LhucError::Dataset(_))));
    }

    #[test]
    fn sgd_step_with_zero_lr_is_a_no_op() {
        let d = blobs(8, 4, 2);
        let mut p = net(1);
        let mut bank = TransformBank::with_clusters(ReparamKind::Exp, &[8], [ClusterId(0), ClusterId(1), ClusterId(2)]);
        let (p0, b0) = (p.clone(), bank.clone());
        let routes: Vec<ClusterId> = d.speakers.iter().map(|&s| ClusterId(s)).collect();
        sgd_step(&mut p, Some(&mut bank), &d, &routes, 0.0).unwrap();
        assert_eq!(p, p0);
        assert_eq!(bank, b0);
    }

    #[test]
    fn single_frame_update_matches_hand_replay() {
        let d = blobs(1, 5, 1).subset(&[0]);
        let mut p = net(2);
        let mut bank = TransformBank::with_clusters(ReparamKind::Exp, &[8], [ClusterId(1)]);
        for (j, r) in bank.get_mut(ClusterId(1)).unwrap().r[0].data.iter_mut().enumerate() {
            *r = 0.1 * j as f64 - 0.3;
        }
        let (p0, b0) = (p.clone(), bank.clone());
        let lr = 0.5;
        sgd_step(&mut p, Some(&mut bank), &d, &[ClusterId(1)], lr).unwrap();

        // scalar replay: 2-8-2 net, one frame
        let x = d.features.row(0);
        let y = d.labels().unwrap()[0];
        let r0 = &b0.map[&ClusterId(1)].r[0].data;
        let (w1, b1, w2, b2) = (&p0.layers[0].w, &p0.layers[0].b.data, &p0.layers[1].w, &p0.layers[1].b.data);
        let mut psi = [0.0; 8];
        let mut h = [0.0; 8];
        for j in 0..8 {
            let z = w1[(j, 0)] * x[0] + w1[(j, 1)] * x[1] + b1[j];
            psi[j] = 1.0 / (1.0 + (-z).exp());
            h[j] = r0[j].exp() * psi[j];
        }
        let mut o = [0.0; 2];
        for k in 0..2 {
            o[k] = b2[k] + (0..8).map(|j| w2[(k, j)] * h[j]).sum::<f64>();
        }
        let m = o[0].max(o[1]);
        let z = (o[0] - m).exp() + (o[1] - m).exp();
        let dout: Vec<f64> = (0..2)
            .map(|k| (o[k] - m).exp() / z - if k == y { 1.0 } else { 0.0 })
            .collect();
        for j in 0..8 {
            let dh = dout[0] * w2[(0, j)] + dout[1] * w2[(1, j)];
            let dr = dh * r0[j].exp() * psi[j];
            let want = r0[j] - lr * dr;
            assert!((bank.map[&ClusterId(1)].r[0].data[j] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn fully_si_batch_leaves_speaker_transforms_alone() {
        let d = blobs(16, 6, 2);
        let mut p = net(3);
        let mut bank = TransformBank::with_clusters(ReparamKind::Exp, &[8], [ClusterId(0), ClusterId(1), ClusterId(2)]);
        let b0 = bank.clone();
        let routes = vec![ClusterId::SI; d.len()];
        sgd_step(&mut p, Some(&mut bank), &d, &routes, 0.3).unwrap();
        assert_eq!(bank.map[&ClusterId(1)], b0.map[&ClusterId(1)]);
        assert_eq!(bank.map[&ClusterId(2)], b0.map[&ClusterId(2)]);
        assert_ne!(bank.map[&ClusterId(0)], b0.map[&ClusterId(0)]);
    }

    #[test]
    fn tiny_steps_do_not_increase_batch_loss() {
        let d = blobs(16, 7, 2);
        let mut p = net(4);
        let mut bank = TransformBank::with_clusters(ReparamKind::Sigmoid2, &[8], [ClusterId(0), ClusterId(1), ClusterId(2)]);
        let routes: Vec<ClusterId> = d.speakers.iter().map(|&s| ClusterId(s)).collect();
        let mut prev = f64::INFINITY;
        for _ in 0..11 {
            let l = sgd_step(&mut p, Some(&mut bank), &d, &routes, 1e-4).unwrap();
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn train_si_separates_and_is_deterministic() {
        let d = blobs(100, 8, 2);
        let cfg = TrainConfig { max_epochs: 40, initial_lr: 0.5, seed: 3, ..Default::default() };
        let (p, curve) = train_si(&d, &net(5), &cfg).unwrap();
        let out = crate::objective::predict(&p, Scaling::None, &d.features).unwrap();
        let errors = (0..d.len())
            .filter(|&t| {
                let row = out.row(t);
                let pred = if row[1] > row[0] { 1 } else { 0 };
                pred != d.labels().unwrap()[t]
            })
            .count();
        assert_eq!(errors, 0);
        let (p2, curve2) = train_si(&d, &net(5), &cfg).unwrap();
        assert_eq!(p, p2);
        assert_eq!(curve, curve2);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let d = blobs(10, 9, 2);
        let init = net(6);
        let (p, curve) = train_si(&d, &init, &TrainConfig { max_epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(p, init);
        assert!(curve.epochs.is_empty());
    }

    #[test]
    fn sat_with_gamma_one_keeps_speaker_transforms_at_init() {
        let d = blobs(60, 10, 3);
        let cfg = TrainConfig { max_epochs: 3, seed: 1, ..Default::default() };
        let sat = SatConfig { gamma: 1.0, ..Default::default() };
        let (_, bank, _) = train_sat(&d, &net(7), &cfg, &sat, ReparamKind::Exp).unwrap();
        let init = crate::model::LhucTransform::<f64>::identity(ReparamKind::Exp, &[8]);
        for s in 1..=3 {
            assert_eq!(bank.map[&ClusterId(s)], init);
        }
        assert_ne!(bank.map[&ClusterId(0)], init);
        assert_eq!(bank.len(), 4);
    }

    #[test]
    fn sat_is_deterministic() {
        let d = blobs(60, 11, 3);
        let cfg = TrainConfig { max_epochs: 3, seed: 2, ..Default::default() };
        let sat = SatConfig { seed: 5, ..Default::default() };
        let a = train_sat(&d, &net(8), &cfg, &sat, ReparamKind::Exp).unwrap();
        let b = train_sat(&d, &net(8), &cfg, &sat, ReparamKind::Exp).unwrap();
        assert_eq!(a, b);
    }
}
