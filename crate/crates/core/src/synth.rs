//! Seeded synthetic tasks.
//!
//! Two families: 1-D "bump" regression problems for visualising how hidden
//! unit amplitudes recombine a basis, and a multi-speaker, multi-environment
//! Gaussian classification task standing in for acoustic frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FrameDataset, Targets};
use crate::error::{LhucError, Result};
use crate::tensor::Matrix;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gaussian bump `height * exp(-(x - center)^2 / (2 width^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

impl Bump {
    pub fn eval(&self, x: f64) -> f64 {
        let d = (x - self.center) / self.width;
        self.height * (-0.5 * d * d).exp()
    }
}

pub fn eval_bumps(bumps: &[Bump], x: f64) -> f64 {
    bumps.iter().map(|b| b.eval(x)).sum()
}

/// Training function f1 and adaptation function f2 for the bump demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BumpSpec {
    pub n_points: usize,
    pub x_range: [f64; 2],
    pub train_bumps: Vec<Bump>,
    pub adapt_bumps: Vec<Bump>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for BumpSpec {
    fn default() -> Self {
        Self {
            n_points: 400,
            x_range: [-3.0, 3.0],
            train_bumps: vec![
                Bump { center: -1.5, width: 0.6, height: 0.5 },
                Bump { center: 1.5, width: 0.6, height: 0.5 },
            ],
            adapt_bumps: vec![
                Bump { center: -1.5, width: 0.6, height: 0.2 },
                Bump { center: 1.5, width: 0.6, height: 0.8 },
            ],
            noise_sd: 0.02,
            seed: 1,
        }
    }
}

fn check_bumps(range: [f64; 2], bumps: &[Bump], noise_sd: f64) -> Result<()> {
    if !(range[0] < range[1]) {
        return Err(LhucError::Config(format!("empty x range {range:?}")));
    }
    if bumps.iter().any(|b| !(b.width > 0.0)) {
        return Err(LhucError::Config("bump widths must be > 0".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(LhucError::Config("noise_sd must be >= 0".into()));
    }
    Ok(())
}

/// `n` points with x uniform on `range` and targets from `bumps` plus noise.
/// All frames carry speaker `speaker`, one segment per 50 points.
pub fn sample_bump_fn(
    bumps: &[Bump],
    n: usize,
    range: [f64; 2],
    noise_sd: f64,
    speaker: u32,
    seed: u64,
) -> Result<FrameDataset> {
    check_bumps(range, bumps, noise_sd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(range[0]..range[1]);
        let y = eval_bumps(bumps, x) + if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        xs.push(x);
        ys.push(y);
    }
    FrameDataset::new(
        Matrix::from_vec(n, 1, xs)?,
        Targets::Values(Matrix::from_vec(n, 1, ys)?),
        vec![speaker; n],
        (0..n).map(|t| t as u32 / 50 + 1).collect(),
        None,
    )
}

/// `(f1 data as speaker 1, f2 data as speaker 2)`.
pub fn gen_bump(spec: &BumpSpec) -> Result<(FrameDataset, FrameDataset)> {
    let train = sample_bump_fn(&spec.train_bumps, spec.n_points, spec.x_range, spec.noise_sd, 1, spec.seed)?;
    let adapt = sample_bump_fn(
        &spec.adapt_bumps,
        spec.n_points,
        spec.x_range,
        spec.noise_sd,
        2,
        spec.seed.wrapping_add(0x9e37_79b9),
    )?;
    Ok((train, adapt))
}

/// Two competing functions drawn 50/50, tagged as speakers 1 (a) and 2 (b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub n_points: usize,
    pub x_range: [f64; 2],
    pub mode_a: Vec<Bump>,
    pub mode_b: Vec<Bump>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            n_points: 800,
            x_range: [-3.0, 3.0],
            mode_a: vec![Bump { center: 0.0, width: 0.8, height: 0.5 }],
            mode_b: vec![Bump { center: 0.0, width: 0.8, height: -0.5 }],
            noise_sd: 0.02,
            seed: 1,
        }
    }
}

impl MixtureSpec {
    /// Seeds used for the per-mode samples.
    pub fn mode_seeds(&self) -> (u64, u64) {
        (self.seed.wrapping_add(1), self.seed.wrapping_add(2))
    }
}

/// Mixture of the two modes. The speaker-a frames are exactly
/// `sample_bump_fn(mode_a, n_a, .., mode_seeds().0)` in order, likewise b.
pub fn gen_mixture_bump(spec: &MixtureSpec) -> Result<FrameDataset> {
    check_bumps(spec.x_range, &spec.mode_a, spec.noise_sd)?;
    check_bumps(spec.x_range, &spec.mode_b, spec.noise_sd)?;
    let mut rng = rng_for(spec.seed, 7);
    let is_a: Vec<bool> = (0..spec.n_points).map(|_| rng.random_bool(0.5)).collect();
    let n_a = is_a.iter().filter(|&&a| a).count();
    let (sa, sb) = spec.mode_seeds();
    let a = sample_bump_fn(&spec.mode_a, n_a, spec.x_range, spec.noise_sd, 1, sa)?;
    let b = sample_bump_fn(&spec.mode_b, spec.n_points - n_a, spec.x_range, spec.noise_sd, 2, sb)?;
    let (mut ia, mut ib) = (0, 0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut spk = Vec::new();
    let ya = match &a.targets {
        Targets::Values(m) => m.clone(),
        _ => unreachable!(),
    };
    let yb = match &b.targets {
        Targets::Values(m) => m.clone(),
        _ => unreachable!(),
    };
    for &from_a in &is_a {
        if from_a {
            xs.push(a.features[(ia, 0)]);
            ys.push(ya[(ia, 0)]);
            spk.push(1);
            ia += 1;
        } else {
            xs.push(b.features[(ib, 0)]);
            ys.push(yb[(ib, 0)]);
            spk.push(2);
            ib += 1;
        }
    }
    let n = spec.n_points;
    FrameDataset::new(
        Matrix::from_vec(n, 1, xs)?,
        Targets::Values(Matrix::from_vec(n, 1, ys)?),
        spk,
        (0..n).map(|t| t as u32 / 50 + 1).collect(),
        None,
    )
}

/// Multi-speaker, multi-environment Gaussian classification task.
///
/// Clean frames of class `c` are `mu_c + N(0, I)`; speaker `s` maps them
/// through an invertible affine warp `A_s x + o_s`; environment `e` then adds
/// a fixed offset `d_e` and Gaussian noise of its configured level on a
/// seeded subset of the dimensions (band-limited noise). Environment 1 is
/// conventionally the clean one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterTaskSpec {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub n_train_speakers: usize,
    pub n_test_speakers: usize,
    pub n_environments: usize,
    pub frames_per_speaker_per_env: usize,
    /// Frames per segment; segments never straddle a speaker/environment block.
    pub segment_frames: usize,
    /// Magnitude of the per-speaker warp `A_s = I + scale * G / sqrt(d)` and offset.
    pub speaker_warp_scale: f64,
    /// Additive noise level per environment (length `n_environments`).
    pub env_noise_sd: Vec<f64>,
    /// Fraction of the dimensions each environment's noise falls on; every
    /// environment draws its own subset.
    pub env_noise_fraction: f64,
    /// Magnitude of the per-environment offset; environment 1 gets none.
    pub env_shift_scale: f64,
    pub class_separation: f64,
    /// Rate at which [`MultiClusterTask::test_targets`] disagree with the
    /// reference labels (adaptation-target quality experiments).
    pub label_corruption: f64,
    /// Recording session. Sessions share class means, warps and environments
    /// and differ only in the frames drawn.
    pub session: u64,
    pub seed: u64,
}

impl Default for ClusterTaskSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            feature_dim: 20,
            n_train_speakers: 30,
            n_test_speakers: 20,
            n_environments: 3,
            frames_per_speaker_per_env: 500,
            segment_frames: 50,
            speaker_warp_scale: 0.7,
            env_noise_sd: vec![0.0, 0.3, 0.6],
            env_noise_fraction: 1.0,
            env_shift_scale: 0.6,
            class_separation: 5.0,
            label_corruption: 0.0,
            session: 0,
            seed: 1,
        }
    }
}

impl ClusterTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LhucError::Config(m.to_string()));
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2");
        }
        if self.n_classes > self.feature_dim + 1 {
            return bad("n_classes must be <= feature_dim + 1 for a simplex layout");
        }
        if self.n_environments == 0 || self.env_noise_sd.len() != self.n_environments {
            return bad("env_noise_sd needs one entry per environment");
        }
        if self.env_noise_sd.iter().any(|&s| !(s >= 0.0)) {
            return bad("env_noise_sd entries must be >= 0");
        }
        if !(self.env_noise_fraction > 0.0 && self.env_noise_fraction <= 1.0) {
            return bad("env_noise_fraction must be in (0, 1]");
        }
        if self.segment_frames == 0 {
            return bad("segment_frames must be >= 1");
        }
        if !(0.0..1.0).contains(&self.label_corruption) {
            return bad("label_corruption must be in [0, 1)");
        }
        if !(self.speaker_warp_scale >= 0.0) || !(self.env_shift_scale >= 0.0) {
            return bad("warp and shift scales must be >= 0");
        }
        Ok(())
    }
}

/// Ground-truth generative parameters, kept for oracle classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTruth {
    /// Class means, `n_classes x dim`.
    pub means: Vec<Vec<f64>>,
    /// Speaker id to `(A, offset)`.
    pub warps: std::collections::BTreeMap<u32, (Vec<Vec<f64>>, Vec<f64>)>,
    /// Environment id to its distortion.
    pub environments: std::collections::BTreeMap<u32, EnvDistortion>,
}

/// `x -> x + offset + noise_sd ⊙ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvDistortion {
    pub offset: Vec<f64>,
    pub noise_sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiClusterTask {
    pub train: FrameDataset,
    pub test: FrameDataset,
    /// Test labels corrupted at the spec's `label_corruption` rate.
    pub test_targets: Vec<usize>,
    pub truth: TaskTruth,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let g = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| sd * g.sample(rng)).collect()
}

fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

fn simplex_means(rng: &mut ChaCha8Rng, k: usize, d: usize, sep: f64) -> Vec<Vec<f64>> {
    // orthonormal directions via Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < k {
        let mut v = gaussian_vec(rng, d, 1.0);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    // vertex i = e_i - centroid, rescaled to norm `sep`
    let kf = k as f64;
    let vertex_norm = ((kf - 1.0) / kf).sqrt();
    (0..k)
        .map(|i| {
            let mut m = vec![0.0; d];
            for (j, b) in basis.iter().enumerate() {
                let coef = (if i == j { 1.0 } else { 0.0 } - 1.0 / kf) / vertex_norm * sep;
                m.iter_mut().zip(b).for_each(|(a, b)| *a += coef * b);
            }
            m
        })
        .collect()
}

fn speaker_warp(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    loop {
        let g = gaussian_vec(rng, d * d, scale / (d as f64).sqrt());
        let a: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| g[i * d + j] + if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        if determinant(a.clone()).abs() >= 0.2 {
            let offset = gaussian_vec(rng, d, scale);
            return (a, offset);
        }
    }
}

/// Generates train and held-out test speakers. Speaker ids `1..=n_train`
/// are training speakers, the following `n_test` ids are test speakers.
/// Within each speaker the environments follow one another in id order.
pub fn gen_multicluster(spec: &ClusterTaskSpec) -> Result<MultiClusterTask> {
    spec.validate()?;
    let d = spec.feature_dim;
    let mut rng = rng_for(spec.seed, 1);
    let means = simplex_means(&mut rng, spec.n_classes, d, spec.class_separation);
    let mut environments = std::collections::BTreeMap::new();
    for e in 0..spec.n_environments {
        let shift = if e == 0 {
            vec![0.0; d]
        } else {
            gaussian_vec(&mut rng, d, spec.env_shift_scale / (d as f64).sqrt() * 2.0)
        };
        let noisy = ((spec.env_noise_fraction * d as f64).round() as usize).clamp(1, d);
        let mut sd = vec![0.0; d];
        if noisy == d {
            sd.fill(spec.env_noise_sd[e]);
        } else {
            for i in rand::seq::index::sample(&mut rng, d, noisy) {
                sd[i] = spec.env_noise_sd[e];
            }
        }
        environments.insert(e as u32 + 1, EnvDistortion { offset: shift, noise_sd: sd });
    }
    let n_spk = spec.n_train_speakers + spec.n_test_speakers;
    let mut warps = std::collections::BTreeMap::new();
    let mut warp_rng = rng_for(spec.seed, 2);
    for s in 1..=n_spk as u32 {
        warps.insert(s, speaker_warp(&mut warp_rng, d, spec.speaker_warp_scale));
    }

    let mut segment = 0u32;
    let mut build = |speakers: std::ops::RangeInclusive<u32>| -> Result<FrameDataset> {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        let (mut spk, mut seg, mut env) = (Vec::new(), Vec::new(), Vec::new());
        for s in speakers {
            let mut frng = rng_for(spec.seed, 1000 + s as u64 + (spec.session << 32));
            let (a, off) = &warps[&s];
            for (&e, env_d) in &environments {
                for f in 0..spec.frames_per_speaker_per_env {
                    if f % spec.segment_frames == 0 {
                        segment += 1;
                    }
                    let c = frng.random_range(0..spec.n_classes);
                    let clean: Vec<f64> = means[c]
                        .iter()
                        .zip(gaussian_vec(&mut frng, d, 1.0))
                        .map(|(m, z)| m + z)
                        .collect();
                    let white = gaussian_vec(&mut frng, d, 1.0);
                    for i in 0..d {
                        let warped: f64 = a[i].iter().zip(&clean).map(|(w, x)| w * x).sum::<f64>() + off[i];
                        feats.push(warped + env_d.offset[i] + env_d.noise_sd[i] * white[i]);
                    }
                    labels.push(c);
                    spk.push(s);
                    seg.push(segment);
                    env.push(e);
                }
            }
        }
        let n = labels.len();
        FrameDataset::new(
            Matrix::from_vec(n, d, feats)?,
            Targets::Classes { labels, n_classes: spec.n_classes },
            spk,
            seg,
            Some(env),
        )
    };
    let n_train = spec.n_train_speakers as u32;
    let train = build(1..=n_train)?;
    let test = build(n_train + 1..=n_spk as u32)?;
    let test_targets = corrupt_labels(
        test.labels().unwrap_or_default(),
        spec.n_classes,
        spec.label_corruption,
        spec.seed ^ spec.session.rotate_left(17),
    )?;
    Ok(MultiClusterTask {
        train,
        test,
        test_targets,
        truth: TaskTruth { means, warps, environments },
    })
}

fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

fn forward_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; b.len()];
    for i in 0..b.len() {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    y
}

impl TaskTruth {
    /// Bayes-optimal decisions given the true generative parameters: the
    /// class whose warped mean is nearest in the Mahalanobis metric of the
    /// frame's (speaker, environment) covariance `A A^T + diag(sigma^2)`.
    pub fn bayes_labels(&self, data: &FrameDataset) -> Result<Vec<usize>> {
        let envs = data
            .environments
            .as_ref()
            .ok_or_else(|| LhucError::Dataset("oracle needs environment ids".into()))?;
        let d = data.dim();
        let mut cache: std::collections::BTreeMap<(u32, u32), (Vec<Vec<f64>>, Vec<Vec<f64>>)> =
            Default::default();
        let mut out = Vec::with_capacity(data.len());
        for t in 0..data.len() {
            let key = (data.speakers[t], envs[t]);
            if !cache.contains_key(&key) {
                let (a, off) = self
                    .warps
                    .get(&key.0)
                    .ok_or_else(|| LhucError::Dataset(format!("no warp for speaker {}", key.0)))?;
                let env = self
                    .environments
                    .get(&key.1)
                    .ok_or_else(|| LhucError::Dataset(format!("no environment {}", key.1)))?;
                let cov: Vec<Vec<f64>> = (0..d)
                    .map(|i| {
                        (0..d)
                            .map(|j| {
                                let s: f64 = (0..d).map(|k| a[i][k] * a[j][k]).sum();
                                s + if i == j { env.noise_sd[i] * env.noise_sd[i] } else { 0.0 }
                            })
                            .collect()
                    })
                    .collect();
                let l = cholesky(&cov);
                // whitened class means
                let wm = self
                    .means
                    .iter()
                    .map(|m| {
                        let mu: Vec<f64> = (0..d)
                            .map(|i| a[i].iter().zip(m).map(|(w, x)| w * x).sum::<f64>() + off[i] + env.offset[i])
                            .collect();
                        forward_solve(&l, &mu)
                    })
                    .collect();
                cache.insert(key, (l, wm));
            }
            let (l, wm) = &cache[&key];
            let z = forward_solve(l, data.features.row(t));
            let best = wm
                .iter()
                .enumerate()
                .map(|(c, m)| (c, z.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            out.push(best);
        }
        Ok(out)
    }
}

/// Replaces each label, with probability `rate`, by a uniformly drawn
/// different class.
pub fn corrupt_labels(labels: &[usize], n_classes: usize, rate: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(LhucError::Config(format!("corruption rate {rate} outside [0, 1)")));
    }
    if n_classes < 2 {
        return Err(LhucError::Config("corruption needs at least 2 classes".into()));
    }
    let mut rng = rng_for(seed, 3);
    Ok(labels
        .iter()
        .map(|&c| {
            if rng.random::<f64>() < rate {
                let k = rng.random_range(0..n_classes - 1);
                if k >= c {
                    k + 1
                } else {
                    k
                }
            } else {
                c
            }
        })
        .collect())
}
