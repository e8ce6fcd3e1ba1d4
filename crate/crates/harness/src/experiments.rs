//! Experiment runners.
//!
//! Each runner computes a typed outcome and collects metric records, plot
//! tables and checkpoints into [`Artifacts`]; nothing here touches the
//! filesystem (see [`crate::run`]).

use std::collections::BTreeMap;

use lhuc::adapter::{
    adapt, adapt_from, evaluate, factorised_experiment, one_shot_apply, pseudo_label,
    two_pass_adapt, two_pass_with_targets, FactorisedSummary,
};
use lhuc::gradcheck::{run_gradcheck, GradcheckReport};
use lhuc::synth::{gen_bump, gen_mixture_bump, gen_multicluster, ClusterTaskSpec, MixtureSpec};
use lhuc::trainer::{train_sat, train_si, TrainingCurve};
use lhuc::{
    AdaptConfig, Amplitudes, Bank64, Dataset64, LhucTransform, Network64, NetworkParams, OutputKind,
    Targets,
};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::metrics::{MetricRecord, Table};

/// Everything an experiment emits, in emission order.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub experiment: String,
    pub metrics: Vec<MetricRecord>,
    /// File stem to table.
    pub tables: BTreeMap<String, Table>,
    /// File stem to checkpoint.
    pub checkpoints: BTreeMap<String, Checkpoint>,
}

impl Artifacts {
    fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            ..Self::default()
        }
    }

    fn metric(&mut self, step: u64, name: &str, value: f64, cluster: Option<u32>) {
        self.metrics
            .push(MetricRecord::new(&self.experiment, step, name, value, cluster));
    }

    fn curve(&mut self, prefix: &str, curve: &TrainingCurve) {
        self.metric(0, &format!("{prefix}cv_loss"), curve.initial_cv_loss, None);
        for e in &curve.epochs {
            let step = e.epoch as u64 + 1;
            self.metric(step, &format!("{prefix}lr"), e.lr, None);
            self.metric(step, &format!("{prefix}train_loss"), e.train_loss, None);
            self.metric(step, &format!("{prefix}cv_loss"), e.cv_loss, None);
        }
    }
}

/// Frame error rate of one held-out speaker before and after adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeakerFer {
    pub speaker: u32,
    pub unadapted: f64,
    pub adapted: f64,
}

fn pooled(rows: &[SpeakerFer], frames: &BTreeMap<u32, usize>, f: impl Fn(&SpeakerFer) -> f64) -> f64 {
    let (mut err, mut n) = (0.0, 0usize);
    for r in rows {
        let k = frames[&r.speaker];
        err += f(r) * k as f64;
        n += k;
    }
    err / n.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub epochs: usize,
    pub best_cv_loss: f64,
    /// Held-out FER; SAT models are scored through cluster 0.
    pub test_fer: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoPassOutcome {
    pub lhuc: Vec<SpeakerFer>,
    pub si_fer: f64,
    pub lhuc_fer: f64,
    /// Unadapted entries are the SAT model in SI mode.
    pub sat: Option<Vec<SpeakerFer>>,
    pub sat_si_fer: Option<f64>,
    pub sat_fer: Option<f64>,
    pub supervised: Option<Vec<SpeakerFer>>,
    pub supervised_fer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptStudyOutcome {
    pub si_fer: f64,
    /// `(number of bottom hidden layers adapted, mean FER)`, starting at 0.
    pub layers: Vec<(usize, f64)>,
    /// `(sweeps, mean FER)`, starting at 0.
    pub sweeps: Vec<(usize, f64)>,
    /// `(fraction of adaptation data, mean FER)`.
    pub fractions: Vec<(f64, f64)>,
    /// `(corruption rate, mean FER, mean target accuracy)`.
    pub corruption: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneShotRow {
    pub speaker: u32,
    pub unadapted_b: f64,
    pub two_pass_a: f64,
    pub one_shot_b: f64,
    pub two_pass_b: f64,
    /// Another speaker's session-A transform applied to this speaker's session B.
    pub cross_speaker_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneShotOutcome {
    pub rows: Vec<OneShotRow>,
    pub mean_one_shot: f64,
    pub mean_two_pass: f64,
    /// Mean over speakers of `|one-shot - two-pass|`.
    pub mean_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorisedOutcome {
    pub alphas: Vec<f64>,
    pub summary: FactorisedSummary,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureRow {
    pub seed: u64,
    /// Mean over the two modes of the adapted MSE.
    pub si_adapted_mse: f64,
    pub sat_adapted_mse: f64,
    /// Adapted MSE of each mode, in speaker-id order.
    pub si_per_mode: Vec<f64>,
    pub sat_per_mode: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BumpOutcome {
    pub train_mse: f64,
    pub unadapted_mse: f64,
    pub adapted_mse: f64,
    pub mixture: Vec<MixtureRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    TrainSi(TrainOutcome),
    TrainSat(TrainOutcome),
    Adapt(AdaptStudyOutcome),
    TwoPass(TwoPassOutcome),
    OneShot(OneShotOutcome),
    Factorised(FactorisedOutcome),
    BumpDemo(BumpOutcome),
    Gradcheck(GradcheckReport),
}

/// Runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Outcome, Artifacts)> {
    cfg.validate()?;
    let mut art = Artifacts::new(cfg.experiment_id());
    let outcome = match cfg.kind {
        ExperimentKind::TrainSi => Outcome::TrainSi(exp_train(cfg, false, &mut art)?),
        ExperimentKind::TrainSat => Outcome::TrainSat(exp_train(cfg, true, &mut art)?),
        ExperimentKind::Adapt => Outcome::Adapt(exp_adapt_study(cfg, &mut art)?),
        ExperimentKind::TwoPass => Outcome::TwoPass(exp_two_pass(cfg, &mut art)?),
        ExperimentKind::OneShot => Outcome::OneShot(exp_one_shot(cfg, &mut art)?),
        ExperimentKind::Factorised => Outcome::Factorised(exp_factorised(cfg, &mut art)?),
        ExperimentKind::BumpDemo => Outcome::BumpDemo(exp_bump(cfg, &mut art)?),
        ExperimentKind::Gradcheck => Outcome::Gradcheck(exp_gradcheck(cfg, &mut art)?),
    };
    Ok((outcome, art))
}

/// Maps `f` over `items` on scoped threads, preserving order.
fn par_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> lhuc::Result<O> + Sync) -> lhuc::Result<Vec<O>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<lhuc::Result<Vec<O>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

fn classifier_init(cfg: &ExperimentConfig, spec: &ClusterTaskSpec) -> Result<Network64> {
    let mut sizes = vec![spec.feature_dim];
    sizes.extend(&cfg.network.hidden);
    sizes.push(spec.n_classes);
    Ok(NetworkParams::init(
        &sizes,
        OutputKind::SoftmaxClassifier,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed),
    )?)
}

struct Trained {
    params: Network64,
    bank: Option<Bank64>,
    curve: TrainingCurve,
}

fn train_model(cfg: &ExperimentConfig, train: &Dataset64, sat: bool) -> Result<Trained> {
    let init = classifier_init(cfg, &cfg.task)?;
    Ok(if sat {
        let (params, bank, curve) = train_sat(train, &init, &cfg.train, &cfg.sat, cfg.adapt.kind)?;
        Trained { params, bank: Some(bank), curve }
    } else {
        let (params, curve) = train_si(train, &init, &cfg.train)?;
        Trained { params, bank: None, curve }
    })
}

fn checkpoint_of(cfg: &ExperimentConfig, t: &Trained) -> Result<Checkpoint> {
    Ok(Checkpoint {
        params: t.params.clone(),
        kind: t.bank.as_ref().map_or(cfg.adapt.kind, |b| b.kind),
        bank: t.bank.clone(),
        provenance: Provenance {
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            epoch: t.curve.epochs.len() as u64,
        },
    })
}

fn frames_per_speaker(d: &Dataset64) -> BTreeMap<u32, usize> {
    let mut m = BTreeMap::new();
    for &s in &d.speakers {
        *m.entry(s).or_insert(0) += 1;
    }
    m
}

fn exp_train(cfg: &ExperimentConfig, sat: bool, art: &mut Artifacts) -> Result<TrainOutcome> {
    let task = gen_multicluster(&cfg.task)?;
    let trained = train_model(cfg, &task.train, sat)?;
    art.curve("", &trained.curve);
    let m = evaluate(&trained.params, Amplitudes::si_of(trained.bank.as_ref())?, &task.test)?;
    for (s, c) in &m.per_cluster {
        art.metric(0, "test_fer", c.frame_error_rate, Some(*s));
    }
    art.metric(0, "test_fer", m.frame_error_rate, None);
    art.metric(0, "test_loss", m.mean_loss, None);
    let name = if sat { "sat" } else { "si" };
    art.checkpoints.insert(name.into(), checkpoint_of(cfg, &trained)?);
    let best_cv_loss = trained
        .curve
        .epochs
        .iter()
        .map(|e| e.cv_loss)
        .fold(trained.curve.initial_cv_loss, f64::min);
    info!("{name}: {} epochs, test FER {:.4}", trained.curve.epochs.len(), m.frame_error_rate);
    Ok(TrainOutcome {
        epochs: trained.curve.epochs.len(),
        best_cv_loss,
        test_fer: m.frame_error_rate,
        test_loss: m.mean_loss,
    })
}

fn two_pass_all(
    params: &Network64,
    bank: Option<&Bank64>,
    test: &Dataset64,
    acfg: &AdaptConfig,
) -> Result<Vec<SpeakerFer>> {
    let ids = test.speaker_ids();
    Ok(par_map(&ids, |&s| {
        let r = two_pass_adapt(params, bank, &test.speaker(s), acfg)?;
        Ok(SpeakerFer {
            speaker: s,
            unadapted: r.unadapted.frame_error_rate,
            adapted: r.adapted.frame_error_rate,
        })
    })?)
}

fn exp_two_pass(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<TwoPassOutcome> {
    let task = gen_multicluster(&cfg.task)?;
    let frames = frames_per_speaker(&task.test);
    let si = train_model(cfg, &task.train, false)?;
    art.curve("si_", &si.curve);
    art.checkpoints.insert("si".into(), checkpoint_of(cfg, &si)?);

    let lhuc = two_pass_all(&si.params, None, &task.test, &cfg.adapt)?;
    let mut table = Table::new(&["speaker", "unadapted_fer", "adapted_fer", "delta"]);
    for r in &lhuc {
        art.metric(0, "unadapted_fer", r.unadapted, Some(r.speaker));
        art.metric(0, "adapted_fer", r.adapted, Some(r.speaker));
        table.push(vec![r.speaker as f64, r.unadapted, r.adapted, r.adapted - r.unadapted]);
    }
    let si_fer = pooled(&lhuc, &frames, |r| r.unadapted);
    let lhuc_fer = pooled(&lhuc, &frames, |r| r.adapted);
    art.metric(0, "unadapted_fer", si_fer, None);
    art.metric(0, "adapted_fer", lhuc_fer, None);
    art.tables.insert("per_speaker".into(), table);
    info!("two-pass LHUC: {si_fer:.4} -> {lhuc_fer:.4}");

    let mut out = TwoPassOutcome {
        lhuc,
        si_fer,
        lhuc_fer,
        sat: None,
        sat_si_fer: None,
        sat_fer: None,
        supervised: None,
        supervised_fer: None,
    };
    if cfg.two_pass.compare_sat {
        let sat = train_model(cfg, &task.train, true)?;
        art.curve("sat_", &sat.curve);
        art.checkpoints.insert("sat".into(), checkpoint_of(cfg, &sat)?);
        let rows = two_pass_all(&sat.params, sat.bank.as_ref(), &task.test, &cfg.adapt)?;
        let mut table = Table::new(&["speaker", "si_mode_fer", "adapted_fer", "delta"]);
        for r in &rows {
            art.metric(0, "sat_si_mode_fer", r.unadapted, Some(r.speaker));
            art.metric(0, "sat_adapted_fer", r.adapted, Some(r.speaker));
            table.push(vec![r.speaker as f64, r.unadapted, r.adapted, r.adapted - r.unadapted]);
        }
        let (u, a) = (pooled(&rows, &frames, |r| r.unadapted), pooled(&rows, &frames, |r| r.adapted));
        art.metric(0, "sat_si_mode_fer", u, None);
        art.metric(0, "sat_adapted_fer", a, None);
        art.tables.insert("per_speaker_sat".into(), table);
        info!("two-pass SAT-LHUC: {u:.4} -> {a:.4}");
        out.sat = Some(rows);
        out.sat_si_fer = Some(u);
        out.sat_fer = Some(a);
    }
    if cfg.two_pass.compare_supervised {
        let sup = AdaptConfig { supervised: true, ..cfg.adapt.clone() };
        let rows = two_pass_all(&si.params, None, &task.test, &sup)?;
        for r in &rows {
            art.metric(0, "supervised_adapted_fer", r.adapted, Some(r.speaker));
        }
        let a = pooled(&rows, &frames, |r| r.adapted);
        art.metric(0, "supervised_adapted_fer", a, None);
        out.supervised = Some(rows);
        out.supervised_fer = Some(a);
    }
    Ok(out)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    s / n.max(1) as f64
}

/// Per-speaker results of the adaptation study, averaged afterwards.
struct StudyRow {
    unadapted: f64,
    layers: Vec<f64>,
    sweeps: Vec<f64>,
    fractions: Vec<f64>,
    corruption: Vec<(f64, f64)>,
}

fn exp_adapt_study(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<AdaptStudyOutcome> {
    let task = gen_multicluster(&cfg.task)?;
    let si = train_model(cfg, &task.train, false)?;
    art.curve("si_", &si.curve);
    let params = &si.params;
    let corrupted: Vec<Vec<usize>> = cfg
        .study
        .corruption_rates
        .iter()
        .map(|&rate| {
            let spec = ClusterTaskSpec { label_corruption: rate, ..cfg.task.clone() };
            gen_multicluster(&spec).map(|t| t.test_targets)
        })
        .collect::<lhuc::Result<_>>()?;
    let mut ids = task.test.speaker_ids();
    if cfg.study.speakers > 0 {
        ids.truncate(cfg.study.speakers);
    }
    let n_hidden = params.n_hidden();
    let acfg = &cfg.adapt;
    let fer = |t: &LhucTransform<f64>, d: &Dataset64| -> lhuc::Result<f64> {
        Ok(evaluate(params, Amplitudes::Transform(t), d)?.frame_error_rate)
    };
    let rows = par_map(&ids, |&s| {
        let idx: Vec<usize> = (0..task.test.len()).filter(|&t| task.test.speakers[t] == s).collect();
        let data = task.test.subset(&idx);
        let reference = data.labels().unwrap().to_vec();
        let targets = if acfg.supervised {
            reference.clone()
        } else {
            pseudo_label(params, Amplitudes::None, &data)?
        };
        let labelled = data.with_labels(targets)?;
        let unadapted = evaluate(params, Amplitudes::None, &data)?.frame_error_rate;

        let mut layers = Vec::with_capacity(n_hidden);
        for k in 1..=n_hidden {
            let c = AdaptConfig {
                layers_enabled: Some((0..n_hidden).map(|l| l < k).collect()),
                ..acfg.clone()
            };
            layers.push(fer(&adapt(params, &labelled, &c)?, &data)?);
        }

        let one = AdaptConfig { sweeps: 1, ..acfg.clone() };
        let mut t = LhucTransform::for_network(acfg.kind, params);
        let mut sweeps = Vec::with_capacity(cfg.study.max_sweeps);
        for _ in 0..cfg.study.max_sweeps {
            t = adapt_from(params, &labelled, t, &one)?;
            sweeps.push(fer(&t, &data)?);
        }

        let mut fractions = Vec::new();
        for &f in &cfg.study.fractions {
            let n = ((f * data.len() as f64).ceil() as usize).clamp(1, data.len());
            let prefix: Vec<usize> = (0..n).collect();
            fractions.push(fer(&adapt(params, &labelled.subset(&prefix), acfg)?, &data)?);
        }

        let mut corruption = Vec::new();
        for targets in &corrupted {
            let mine: Vec<usize> = idx.iter().map(|&t| targets[t]).collect();
            let r = two_pass_with_targets(params, None, &data, &mine, acfg)?;
            corruption.push((r.adapted.frame_error_rate, r.target_accuracy));
        }
        Ok(StudyRow { unadapted, layers, sweeps, fractions, corruption })
    })?;

    let si_fer = mean(rows.iter().map(|r| r.unadapted));
    let mut layers = vec![(0, si_fer)];
    layers.extend((0..n_hidden).map(|k| (k + 1, mean(rows.iter().map(|r| r.layers[k])))));
    let mut sweeps = vec![(0, si_fer)];
    sweeps.extend((0..cfg.study.max_sweeps).map(|i| (i + 1, mean(rows.iter().map(|r| r.sweeps[i])))));
    let fractions: Vec<(f64, f64)> = cfg
        .study
        .fractions
        .iter()
        .enumerate()
        .map(|(i, &f)| (f, mean(rows.iter().map(|r| r.fractions[i]))))
        .collect();
    let corruption: Vec<(f64, f64, f64)> = cfg
        .study
        .corruption_rates
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            (
                rate,
                mean(rows.iter().map(|r| r.corruption[i].0)),
                mean(rows.iter().map(|r| r.corruption[i].1)),
            )
        })
        .collect();

    let mut t = Table::new(&["layers_adapted", "mean_fer"]);
    for &(k, f) in &layers {
        art.metric(k as u64, "layers_adapted_fer", f, None);
        t.push(vec![k as f64, f]);
    }
    art.tables.insert("layers".into(), t);
    let mut t = Table::new(&["sweeps", "mean_fer"]);
    for &(k, f) in &sweeps {
        art.metric(k as u64, "sweeps_fer", f, None);
        t.push(vec![k as f64, f]);
    }
    art.tables.insert("sweeps".into(), t);
    let mut t = Table::new(&["fraction", "mean_fer"]);
    for (i, &(frac, f)) in fractions.iter().enumerate() {
        art.metric(i as u64, &format!("fraction_{frac}_fer"), f, None);
        t.push(vec![frac, f]);
    }
    art.tables.insert("data_amount".into(), t);
    let mut t = Table::new(&["corruption_rate", "mean_fer", "target_accuracy"]);
    for (i, &(rate, f, acc)) in corruption.iter().enumerate() {
        art.metric(i as u64, &format!("corruption_{rate}_fer"), f, None);
        t.push(vec![rate, f, acc]);
    }
    art.tables.insert("target_quality".into(), t);
    Ok(AdaptStudyOutcome { si_fer, layers, sweeps, fractions, corruption })
}

fn exp_one_shot(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<OneShotOutcome> {
    let a = gen_multicluster(&cfg.task)?;
    let b = gen_multicluster(&ClusterTaskSpec { session: cfg.one_shot.session_b, ..cfg.task.clone() })?;
    let si = train_model(cfg, &a.train, false)?;
    art.curve("si_", &si.curve);
    let params = &si.params;
    let mut ids = a.test.speaker_ids();
    ids.truncate(cfg.one_shot.speakers);
    let first = par_map(&ids, |&s| {
        let da = a.test.speaker(s);
        let db = b.test.speaker(s);
        let ra = two_pass_adapt(params, None, &da, &cfg.adapt)?;
        let rb = two_pass_adapt(params, None, &db, &cfg.adapt)?;
        let once = one_shot_apply(params, &ra.transform, &db)?;
        Ok((ra, rb, once))
    })?;
    let mut rows = Vec::new();
    let mut table = Table::new(&["speaker", "unadapted_b", "one_shot_b", "two_pass_b", "cross_speaker_b"]);
    for (i, &s) in ids.iter().enumerate() {
        let (ra, rb, once) = &first[i];
        let other = &first[(i + 1) % ids.len()].0.transform;
        let cross = one_shot_apply(params, other, &b.test.speaker(s))?;
        let row = OneShotRow {
            speaker: s,
            unadapted_b: rb.unadapted.frame_error_rate,
            two_pass_a: ra.adapted.frame_error_rate,
            one_shot_b: once.frame_error_rate,
            two_pass_b: rb.adapted.frame_error_rate,
            cross_speaker_b: cross.frame_error_rate,
        };
        art.metric(0, "unadapted_b_fer", row.unadapted_b, Some(s));
        art.metric(0, "two_pass_a_fer", row.two_pass_a, Some(s));
        art.metric(0, "one_shot_b_fer", row.one_shot_b, Some(s));
        art.metric(0, "two_pass_b_fer", row.two_pass_b, Some(s));
        art.metric(0, "cross_speaker_b_fer", row.cross_speaker_b, Some(s));
        table.push(vec![s as f64, row.unadapted_b, row.one_shot_b, row.two_pass_b, row.cross_speaker_b]);
        rows.push(row);
    }
    let mean_one_shot = mean(rows.iter().map(|r| r.one_shot_b));
    let mean_two_pass = mean(rows.iter().map(|r| r.two_pass_b));
    let mean_abs_diff = mean(rows.iter().map(|r| (r.one_shot_b - r.two_pass_b).abs()));
    art.metric(0, "one_shot_b_fer", mean_one_shot, None);
    art.metric(0, "two_pass_b_fer", mean_two_pass, None);
    art.metric(0, "mean_abs_diff", mean_abs_diff, None);
    art.tables.insert("one_shot".into(), table);
    Ok(OneShotOutcome { rows, mean_one_shot, mean_two_pass, mean_abs_diff })
}

fn exp_factorised(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<FactorisedOutcome> {
    let task = gen_multicluster(&cfg.task)?;
    let si = train_model(cfg, &task.train, false)?;
    art.curve("si_", &si.curve);
    let rep = factorised_experiment(&si.params, None, &task.test, &cfg.adapt, &cfg.factorised)?;
    let mut cols = vec!["speaker".to_string(), "environment".into(), "unadapted".into(), "speaker_only".into(), "environment_only".into()];
    cols.extend(rep.alphas.iter().map(|a| format!("interpolated_{a}")));
    cols.push("joint".into());
    let mut table = Table { columns: cols, rows: Vec::new() };
    for r in &rep.rows {
        let mut row = vec![
            r.speaker as f64,
            r.environment as f64,
            r.unadapted.frame_error_rate,
            r.speaker_only.frame_error_rate,
            r.environment_only.frame_error_rate,
        ];
        row.extend(r.interpolated.iter().map(|m| m.frame_error_rate));
        row.push(r.joint.frame_error_rate);
        table.push(row);
    }
    art.tables.insert("factorised".into(), table);
    let s = &rep.summary;
    art.metric(0, "unadapted_fer", s.unadapted, None);
    art.metric(0, "speaker_only_fer", s.speaker_only, None);
    art.metric(0, "environment_only_fer", s.environment_only, None);
    for (a, v) in rep.alphas.iter().zip(&s.interpolated) {
        art.metric(0, &format!("interpolated_{a}_fer"), *v, None);
    }
    art.metric(0, "joint_fer", s.joint, None);
    info!("factorised: {s:?}");
    Ok(FactorisedOutcome {
        alphas: rep.alphas.clone(),
        summary: rep.summary.clone(),
        rows: rep.rows.len(),
    })
}

/// A 1-h-1 regressor. With a nonzero `gain`, hidden unit j gets input
/// weight `±gain` (sign from the random draw) and a bias that puts its
/// sigmoid transition at the j-th of `hidden` evenly spaced points of
/// `range`; without this all transitions start at x = 0 and SGD rarely
/// separates them.
fn regressor_init(hidden: usize, seed: u64, gain: f64, range: [f64; 2]) -> Result<Network64> {
    let mut p = NetworkParams::init(
        &[1, hidden, 1],
        OutputKind::LinearRegressor,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    if gain > 0.0 {
        let l = &mut p.layers[0];
        for j in 0..hidden {
            let c = range[0] + (range[1] - range[0]) * (j as f64 + 0.5) / hidden as f64;
            let w = if l.w.as_slice()[j] < 0.0 { -gain } else { gain };
            l.w.as_mut_slice()[j] = w;
            l.b.data[j] = -w * c;
        }
    }
    Ok(p)
}

fn mse_of(params: &Network64, amps: Amplitudes<'_, f64>, d: &Dataset64) -> lhuc::Result<f64> {
    Ok(evaluate(params, amps, d)?.mean_loss)
}

/// MSE of each mixture mode after adapting a fresh transform to it.
fn per_mode_adapted(params: &Network64, data: &Dataset64, acfg: &AdaptConfig) -> lhuc::Result<(Vec<f64>, Vec<LhucTransform<f64>>)> {
    let mut mse = Vec::new();
    let mut ts = Vec::new();
    for s in data.speaker_ids() {
        let d = data.speaker(s);
        let t = adapt(params, &d, acfg)?;
        mse.push(mse_of(params, Amplitudes::Transform(&t), &d)?);
        ts.push(t);
    }
    Ok((mse, ts))
}


fn exp_bump(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<BumpOutcome> {
    let b = &cfg.bump;
    let (f1, f2) = gen_bump(&b.spec)?;
    let init = regressor_init(b.hidden_units, cfg.seed, b.init_gain, b.spec.x_range)?;
    let (params, curve) = train_si(&f1, &init, &b.train)?;
    art.curve("f1_", &curve);
    let train_mse = mse_of(&params, Amplitudes::None, &f1)?;
    let unadapted_mse = mse_of(&params, Amplitudes::None, &f2)?;
    let t = adapt(&params, &f2, &b.adapt)?;
    let adapted_mse = mse_of(&params, Amplitudes::Transform(&t), &f2)?;
    art.metric(0, "f1_train_mse", train_mse, None);
    art.metric(0, "f2_unadapted_mse", unadapted_mse, None);
    art.metric(0, "f2_adapted_mse", adapted_mse, None);
    info!("bump: train {train_mse:.5}, f2 unadapted {unadapted_mse:.5}, adapted {adapted_mse:.5}");

    let si_pred = lhuc::objective::predict(&params, lhuc::Scaling::None, &f2.features)?;
    let scale = t.effective();
    let ad_pred = lhuc::objective::predict(&params, lhuc::Scaling::Effective(&scale), &f2.features)?;
    let Targets::Values(y) = &f2.targets else { unreachable!("bump tasks are regression") };
    let mut order: Vec<usize> = (0..f2.len()).collect();
    order.sort_by(|&i, &j| f2.features[(i, 0)].total_cmp(&f2.features[(j, 0)]));
    let mut table = Table::new(&["x", "target", "si_prediction", "adapted_prediction"]);
    for i in order {
        table.push(vec![f2.features[(i, 0)], y[(i, 0)], si_pred[(i, 0)], ad_pred[(i, 0)]]);
    }
    art.tables.insert("bump_fig1".into(), table);

    let rows = par_map(&b.mixture_seeds, |&seed| {
        let data = gen_mixture_bump(&MixtureSpec { seed, ..b.mixture.clone() })?;
        let init = regressor_init(b.hidden_units, seed, b.init_gain, b.mixture.x_range).map_err(|e| lhuc::LhucError::Config(e.to_string()))?;
        let train = lhuc::TrainConfig { seed, ..b.train.clone() };
        let sat_cfg = lhuc::SatConfig { seed, ..b.sat.clone() };
        let (si_params, _) = train_si(&data, &init, &train)?;
        let (si_mse, si_ts) = per_mode_adapted(&si_params, &data, &b.adapt)?;
        let (sat_params, _, _) = train_sat(&data, &init, &train, &sat_cfg, b.adapt.kind)?;
        let (sat_mse, sat_ts) = per_mode_adapted(&sat_params, &data, &b.adapt)?;
        let row = MixtureRow {
            seed,
            si_adapted_mse: mean(si_mse.iter().copied()),
            sat_adapted_mse: mean(sat_mse.iter().copied()),
            si_per_mode: si_mse,
            sat_per_mode: sat_mse,
        };
        Ok((row, (data, si_params, si_ts, sat_params, sat_ts)))
    })?;
    let mut mixture = Vec::new();
    for (i, (row, extra)) in rows.into_iter().enumerate() {
        art.metric(row.seed, "mixture_si_adapted_mse", row.si_adapted_mse, None);
        art.metric(row.seed, "mixture_sat_adapted_mse", row.sat_adapted_mse, None);
        if i == 0 {
            art.tables.insert("bump_mixture".into(), mixture_table(&extra)?);
        }
        mixture.push(row);
    }
    Ok(BumpOutcome { train_mse, unadapted_mse, adapted_mse, mixture })
}

type MixtureRun = (Dataset64, Network64, Vec<LhucTransform<f64>>, Network64, Vec<LhucTransform<f64>>);

fn mixture_table((data, si, si_ts, sat, sat_ts): &MixtureRun) -> Result<Table> {
    let mut table = Table::new(&["mode", "x", "target", "si_adapted_prediction", "sat_adapted_prediction"]);
    for (k, s) in data.speaker_ids().into_iter().enumerate() {
        let d = data.speaker(s);
        let Targets::Values(y) = &d.targets else { unreachable!("bump tasks are regression") };
        let p_si = lhuc::objective::predict(si, lhuc::Scaling::Effective(&si_ts[k].effective()), &d.features)?;
        let p_sat = lhuc::objective::predict(sat, lhuc::Scaling::Effective(&sat_ts[k].effective()), &d.features)?;
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&i, &j| d.features[(i, 0)].total_cmp(&d.features[(j, 0)]));
        for i in order {
            table.push(vec![s as f64, d.features[(i, 0)], y[(i, 0)], p_si[(i, 0)], p_sat[(i, 0)]]);
        }
    }
    Ok(table)
}

fn exp_gradcheck(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<GradcheckReport> {
    let rep = run_gradcheck(cfg.seed, cfg.gradcheck.cases)?;
    for (g, e) in &rep.groups {
        art.metric(0, &format!("max_rel_err_{g}"), *e, None);
    }
    art.metric(0, "max_rel_err", rep.max_rel_err, None);
    let mut t = Table::new(&["case", "hidden_layers", "batch", "clusters", "max_rel_err"]);
    for c in &rep.cases {
        t.push(vec![c.case as f64, (c.sizes.len() - 2) as f64, c.batch as f64, c.clusters.len() as f64, c.max_rel_err]);
    }
    art.tables.insert("gradcheck".into(), t);
    Ok(rep)
}
