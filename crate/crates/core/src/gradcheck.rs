//! Finite-difference verification of the analytic gradients.
//!
//! Random small networks with mixed-cluster batches are checked entry by
//! entry against a five-point central difference of the cross-entropy loss.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{backward, forward, ClusterId, NetworkParams, OutputKind, ReparamKind, Scaling, TransformBank};
use crate::tensor::{softmax_xent, Matrix};

/// Step of the central difference stencil.
pub const FD_STEP: f64 = 2e-3;
/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Five-point central difference of `f` at `x` along one coordinate.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    let (p2, p1, m1, m2) = (f(x + 2.0 * h), f(x + h), f(x - h), f(x - 2.0 * h));
    // differences first, so a flat loss yields exactly zero
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: usize,
    pub kind: ReparamKind,
    pub sizes: Vec<usize>,
    pub batch: usize,
    pub clusters: Vec<u32>,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
    /// Parameter group ("W0", "b1", "r2", ...) to maximum relative error.
    pub groups: BTreeMap<String, f64>,
    pub max_rel_err: f64,
    pub entries_checked: usize,
}

struct Case {
    params: NetworkParams<f64>,
    bank: TransformBank<f64>,
    routes: Vec<ClusterId>,
    x: Matrix<f64>,
    y: Vec<usize>,
}

impl Case {
    fn random(rng: &mut ChaCha8Rng, kind: ReparamKind) -> Self {
        let n_hidden = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(2..=6)];
        for _ in 0..n_hidden {
            sizes.push(rng.random_range(2..=16));
        }
        let classes = rng.random_range(2..=5);
        sizes.push(classes);
        let mut params = NetworkParams::init(&sizes, OutputKind::SoftmaxClassifier, rng).unwrap();
        for l in &mut params.layers {
            for b in &mut l.b.data {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let widths = params.hidden_widths();
        let n_clusters = rng.random_range(2..=3u32);
        let mut bank = TransformBank::with_clusters(kind, &widths, (0..n_clusters).map(ClusterId));
        for t in bank.map.values_mut() {
            for v in &mut t.r {
                for r in &mut v.data {
                    *r = match kind {
                        // stay clear of the kink at 0
                        ReparamKind::Relu => {
                            if rng.random_bool(0.8) {
                                rng.random_range(0.3..1.5)
                            } else {
                                rng.random_range(-1.0..-0.3)
                            }
                        }
                        _ => kind.init_value::<f64>() + rng.random_range(-0.5..0.5),
                    };
                }
            }
        }
        let batch = rng.random_range(2..=8);
        let mut routes: Vec<ClusterId> = (0..batch).map(|_| ClusterId(rng.random_range(0..n_clusters))).collect();
        // guarantee a mixed batch
        routes[0] = ClusterId(0);
        routes[1] = ClusterId(1);
        let x = Matrix::from_vec(
            batch,
            sizes[0],
            (0..batch * sizes[0]).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let y = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        Self { params, bank, routes, x, y }
    }

    fn loss(&self, params: &NetworkParams<f64>, bank: &TransformBank<f64>) -> f64 {
        let tr = forward(params, Scaling::Routed { bank, routes: &self.routes }, &self.x).unwrap();
        softmax_xent(&tr.output, &self.y).unwrap().0
    }
}

/// Checks `n_cases` seeded random configurations, cycling through every
/// re-parametrisation kind.
pub fn run_gradcheck(seed: u64, n_cases: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<String, f64> = BTreeMap::new();
    let mut cases = Vec::new();
    let mut entries = 0;
    for case_no in 0..n_cases {
        let kind = ReparamKind::ALL[case_no % ReparamKind::ALL.len()];
        let case = Case::random(&mut rng, kind);
        let tr = forward(
            &case.params,
            Scaling::Routed { bank: &case.bank, routes: &case.routes },
            &case.x,
        )?;
        let (_, g) = softmax_xent(&tr.output, &case.y)?;
        let grads = backward(&tr, &case.params, &g)?;
        let mut case_max: f64 = 0.0;
        let mut record = |name: String, err: f64| {
            case_max = case_max.max(err);
            let e = groups.entry(name).or_insert(0.0);
            *e = e.max(err);
        };

        for l in 0..case.params.layers.len() {
            for k in 0..case.params.layers[l].w.as_slice().len() {
                let x0 = case.params.layers[l].w.as_slice()[k];
                let mut p = case.params.clone();
                let n = central_difference(
                    |v| {
                        p.layers[l].w.as_mut_slice()[k] = v;
                        case.loss(&p, &case.bank)
                    },
                    x0,
                    FD_STEP,
                );
                record(format!("W{l}"), relative_error(grads.layers[l].w.as_slice()[k], n));
                entries += 1;
            }
            for k in 0..case.params.layers[l].b.len() {
                let x0 = case.params.layers[l].b.data[k];
                let mut p = case.params.clone();
                let n = central_difference(
                    |v| {
                        p.layers[l].b.data[k] = v;
                        case.loss(&p, &case.bank)
                    },
                    x0,
                    FD_STEP,
                );
                record(format!("b{l}"), relative_error(grads.layers[l].b.data[k], n));
                entries += 1;
            }
        }
        let widths = case.params.hidden_widths();
        for id in case.bank.ids().collect::<Vec<_>>() {
            let analytic = grads.r_or_zero(id, &widths);
            for l in 0..widths.len() {
                for j in 0..widths[l] {
                    let x0 = case.bank.map[&id].r[l].data[j];
                    let mut b = case.bank.clone();
                    let n = central_difference(
                        |v| {
                            b.get_mut(id).unwrap().r[l].data[j] = v;
                            case.loss(&case.params, &b)
                        },
                        x0,
                        FD_STEP,
                    );
                    record(format!("r{l}"), relative_error(analytic[l].data[j], n));
                    entries += 1;
                }
            }
        }
        let mut clusters: Vec<u32> = case.routes.iter().map(|c| c.0).collect();
        clusters.sort_unstable();
        clusters.dedup();
        cases.push(CaseReport {
            case: case_no,
            kind,
            sizes: case.params.sizes(),
            batch: case.x.rows(),
            clusters,
            max_rel_err: case_max,
        });
    }
    let max_rel_err = groups.values().copied().fold(0.0, f64::max);
    Ok(GradcheckReport {
        cases,
        groups,
        max_rel_err,
        entries_checked: entries,
    })
}
