//! LHUC-parametrised feedforward network.
//!
//! Each hidden unit `j` of layer `l` computes
//! `h = xi(r_j) * psi(w_j . x + b_j)` where `r` belongs to the cluster
//! (speaker, environment, or the speaker-independent cluster 0) the frame is
//! routed to. The output layer is never scaled.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LhucError, Result};
use crate::scalar::Scalar;
use crate::tensor::{affine, sigmoid, Activation, Matrix, Vector};

/// Identity of an adaptation cluster. Cluster 0 is the speaker-independent
/// transform; real speakers and environments use ids >= 1.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct ClusterId(pub u32);

impl ClusterId {
    pub const SI: ClusterId = ClusterId(0);

    pub fn is_si(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Re-parametrisation `xi` mapping a raw parameter `r` to an amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReparamKind {
    /// `xi(r) = r`
    Identity,
    /// `xi(r) = exp(r)`
    #[default]
    Exp,
    /// `xi(r) = 2 / (1 + exp(-r))`, range (0, 2)
    Sigmoid2,
    /// `xi(r) = max(0, r)`
    Relu,
}

impl ReparamKind {
    pub const ALL: [ReparamKind; 4] = [
        ReparamKind::Identity,
        ReparamKind::Exp,
        ReparamKind::Sigmoid2,
        ReparamKind::Relu,
    ];

    /// `(xi(r), xi'(r))`. The relu derivative at exactly 0 is 0.
    #[inline]
    pub fn eval<T: Scalar>(self, r: T) -> (T, T) {
        match self {
            ReparamKind::Identity => (r, T::one()),
            ReparamKind::Exp => {
                let e = r.exp();
                (e, e)
            }
            ReparamKind::Sigmoid2 => {
                let s = sigmoid(r);
                let two = T::lit(2.0);
                (two * s, two * s * (T::one() - s))
            }
            ReparamKind::Relu => {
                if r > T::zero() {
                    (r, T::one())
                } else {
                    (T::zero(), T::zero())
                }
            }
        }
    }

    /// Raw value whose amplitude is exactly 1.
    pub fn init_value<T: Scalar>(self) -> T {
        match self {
            ReparamKind::Exp | ReparamKind::Sigmoid2 => T::zero(),
            ReparamKind::Identity | ReparamKind::Relu => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReparamKind::Identity => "identity",
            ReparamKind::Exp => "exp",
            ReparamKind::Sigmoid2 => "sigmoid2",
            ReparamKind::Relu => "relu",
        }
    }
}

/// Elementwise `xi(r)` and `xi'(r)`.
pub fn reparam<T: Scalar>(kind: ReparamKind, r: &Vector<T>) -> (Vector<T>, Vector<T>) {
    let (s, d) = r.data.iter().map(|&v| kind.eval(v)).unzip();
    (Vector::new(s), Vector::new(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    SoftmaxClassifier,
    LinearRegressor,
}

/// One affine layer; `w` is `units x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T = f64> {
    pub w: Matrix<T>,
    pub b: Vector<T>,
}

/// Speaker-independent parameters plus topology. The last layer is the
/// output layer; all others are sigmoid hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams<T = f64> {
    pub layers: Vec<Layer<T>>,
    pub hidden_activation: Activation,
    pub output_kind: OutputKind,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new(layers: Vec<Layer<T>>, output_kind: OutputKind) -> Result<Self> {
        let p = Self {
            layers,
            hidden_activation: Activation::Sigmoid,
            output_kind,
        };
        p.validate()?;
        Ok(p)
    }

    /// Glorot-uniform weights and zero biases. `sizes` lists the input width,
    /// every hidden width, then the output width.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output_kind: OutputKind, rng: &mut R) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(LhucError::Topology(format!(
                "need input, at least one hidden and an output size, got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|p| {
                let (fan_in, fan_out) = (p[0], p[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| T::lit(rng.random_range(-bound..bound)))
                    .collect();
                Layer {
                    w: Matrix::from_vec(fan_out, fan_in, w).unwrap(),
                    b: Vector::zeros(fan_out),
                }
            })
            .collect();
        Self::new(layers, output_kind)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(LhucError::Topology("at least one hidden layer required".into()));
        }
        if self.hidden_activation != Activation::Sigmoid {
            return Err(LhucError::Topology("hidden activation must be sigmoid".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.b.len() != layer.w.rows() {
                return Err(LhucError::Topology(format!(
                    "layer {l}: bias length {} vs {} units",
                    layer.b.len(),
                    layer.w.rows()
                )));
            }
            if l > 0 && layer.w.cols() != self.layers[l - 1].w.rows() {
                return Err(LhucError::Topology(format!(
                    "layer {l} expects {} inputs, previous layer has {} units",
                    layer.w.cols(),
                    self.layers[l - 1].w.rows()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.n_hidden()].iter().map(|l| l.w.rows()).collect()
    }

    /// Input, hidden and output sizes.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.w.rows()))
            .collect()
    }

    pub fn map_scalar<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: l.w.map_scalar(),
                    b: l.b.map_scalar(),
                })
                .collect(),
            hidden_activation: self.hidden_activation,
            output_kind: self.output_kind,
        }
    }
}

/// One cluster's raw amplitude parameters, one vector per hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhucTransform<T = f64> {
    pub kind: ReparamKind,
    pub r: Vec<Vector<T>>,
}

impl<T: Scalar> LhucTransform<T> {
    /// Transform whose amplitudes are all exactly 1.
    pub fn identity(kind: ReparamKind, widths: &[usize]) -> Self {
        Self {
            kind,
            r: widths
                .iter()
                .map(|&w| Vector::filled(w, kind.init_value()))
                .collect(),
        }
    }

    pub fn for_network(kind: ReparamKind, params: &NetworkParams<T>) -> Self {
        Self::identity(kind, &params.hidden_widths())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.r.iter().map(|v| v.len()).collect()
    }

    /// Amplitudes `xi(r)` in scale space.
    pub fn effective(&self) -> EffectiveScale<T> {
        EffectiveScale {
            scales: self.r.iter().map(|r| reparam(self.kind, r).0).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().all(|v| v.is_finite())
    }
}

/// Per-hidden-layer amplitudes `xi(r)` stored directly in scale space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveScale<T = f64> {
    pub scales: Vec<Vector<T>>,
}

impl<T: Scalar> EffectiveScale<T> {
    pub fn ones(widths: &[usize]) -> Self {
        Self {
            scales: widths.iter().map(|&w| Vector::filled(w, T::one())).collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.scales.iter().map(|v| v.len()).collect()
    }
}

/// Cluster id to transform, all sharing one re-parametrisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformBank<T = f64> {
    pub kind: ReparamKind,
    pub map: BTreeMap<ClusterId, LhucTransform<T>>,
}

impl<T: Scalar> TransformBank<T> {
    pub fn new(kind: ReparamKind) -> Self {
        Self {
            kind,
            map: BTreeMap::new(),
        }
    }

    /// Bank with identity transforms for every listed cluster.
    pub fn with_clusters(
        kind: ReparamKind,
        widths: &[usize],
        ids: impl IntoIterator<Item = ClusterId>,
    ) -> Self {
        let mut bank = Self::new(kind);
        for id in ids {
            bank.map.insert(id, LhucTransform::identity(kind, widths));
        }
        bank
    }

    /// Bank holding a single transform under `id`.
    pub fn single(id: ClusterId, transform: LhucTransform<T>) -> Self {
        let mut bank = Self::new(transform.kind);
        bank.map.insert(id, transform);
        bank
    }

    pub fn insert(&mut self, id: ClusterId, t: LhucTransform<T>) -> Result<()> {
        if t.kind != self.kind {
            return Err(LhucError::Config(format!(
                "transform kind {} does not match bank kind {}",
                t.kind.name(),
                self.kind.name()
            )));
        }
        self.map.insert(id, t);
        Ok(())
    }

    pub fn get(&self, id: ClusterId) -> Result<&LhucTransform<T>> {
        self.map.get(&id).ok_or(LhucError::UnknownCluster(id))
    }

    pub fn get_mut(&mut self, id: ClusterId) -> Result<&mut LhucTransform<T>> {
        self.map.get_mut(&id).ok_or(LhucError::UnknownCluster(id))
    }

    pub fn contains(&self, id: ClusterId) -> bool {
        self.map.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ClusterId> + '_ {
        self.map.keys().copied()
    }

    pub fn check_compatible(&self, params: &NetworkParams<T>) -> Result<()> {
        let widths = params.hidden_widths();
        for (id, t) in &self.map {
            if t.kind != self.kind || t.widths() != widths {
                return Err(LhucError::Topology(format!(
                    "cluster {id}: transform widths {:?} vs hidden widths {widths:?}",
                    t.widths()
                )));
            }
        }
        Ok(())
    }
}

/// How hidden units are scaled during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Scaling<'a, T = f64> {
    /// Plain speaker-independent network.
    None,
    /// Frame `t` uses the bank transform of `routes[t]`.
    Routed {
        bank: &'a TransformBank<T>,
        routes: &'a [ClusterId],
    },
    /// Every frame uses the same scale-space amplitudes.
    Effective(&'a EffectiveScale<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace<T = f64> {
    /// Affine pre-activations.
    pub pre: Matrix<T>,
    /// `psi(pre)`, the unscaled basis.
    pub basis: Matrix<T>,
    /// Scaled outputs `h = xi(r) * psi`.
    pub out: Matrix<T>,
    /// Per-frame `xi(r)`; absent when unscaled.
    pub scale: Option<Matrix<T>>,
    /// Per-frame `xi'(r)`; only present for routed scaling.
    pub dscale: Option<Matrix<T>>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T = f64> {
    pub input: Matrix<T>,
    pub hidden: Vec<HiddenTrace<T>>,
    /// Output-layer result: logits for classifiers, predictions for regressors.
    pub output: Matrix<T>,
    pub routes: Option<Vec<ClusterId>>,
}

fn scale_rows<T: Scalar>(
    scaling: &Scaling<'_, T>,
    layer: usize,
    width: usize,
    batch: usize,
) -> Result<Option<(Matrix<T>, Option<Matrix<T>>)>> {
    match scaling {
        Scaling::None => Ok(None),
        Scaling::Effective(eff) => {
            let v = &eff.scales[layer];
            let mut s = Matrix::zeros(batch, width);
            for t in 0..batch {
                s.row_mut(t).copy_from_slice(&v.data);
            }
            Ok(Some((s, None)))
        }
        Scaling::Routed { bank, routes } => {
            let mut cache: BTreeMap<ClusterId, (Vector<T>, Vector<T>)> = BTreeMap::new();
            let mut s = Matrix::zeros(batch, width);
            let mut d = Matrix::zeros(batch, width);
            for (t, id) in routes.iter().enumerate() {
                if !cache.contains_key(id) {
                    let tr = bank.get(*id)?;
                    cache.insert(*id, reparam(bank.kind, &tr.r[layer]));
                }
                let (sv, dv) = &cache[id];
                s.row_mut(t).copy_from_slice(&sv.data);
                d.row_mut(t).copy_from_slice(&dv.data);
            }
            Ok(Some((s, Some(d))))
        }
    }
}

/// Forward pass through every layer, caching what backward needs.
pub fn forward<T: Scalar>(
    params: &NetworkParams<T>,
    scaling: Scaling<'_, T>,
    x: &Matrix<T>,
) -> Result<ForwardTrace<T>> {
    if x.cols() != params.input_dim() {
        return Err(LhucError::Shape {
            op: "forward",
            left: params.layers[0].w.shape(),
            right: x.shape(),
        });
    }
    let batch = x.rows();
    let widths = params.hidden_widths();
    let routes = match &scaling {
        Scaling::None => None,
        Scaling::Effective(eff) => {
            if eff.widths() != widths {
                return Err(LhucError::Topology(format!(
                    "effective scale widths {:?} vs hidden widths {widths:?}",
                    eff.widths()
                )));
            }
            None
        }
        Scaling::Routed { bank, routes } => {
            if routes.len() != batch {
                return Err(LhucError::Shape {
                    op: "forward(routes)",
                    left: x.shape(),
                    right: (routes.len(), 1),
                });
            }
            for id in routes.iter() {
                bank.get(*id)?.widths().eq(&widths).then_some(()).ok_or_else(|| {
                    LhucError::Topology(format!("cluster {id} transform does not fit network"))
                })?;
            }
            Some(routes.to_vec())
        }
    };

    let mut hidden = Vec::with_capacity(params.n_hidden());
    let mut input = x.clone();
    for (l, layer) in params.layers[..params.n_hidden()].iter().enumerate() {
        let pre = affine(&layer.w, &layer.b, &input)?;
        let basis = pre.map(sigmoid);
        let (out, scale, dscale) = match scale_rows(&scaling, l, widths[l], batch)? {
            None => (basis.clone(), None, None),
            Some((s, d)) => {
                let mut out = basis.clone();
                for (o, &a) in out.as_mut_slice().iter_mut().zip(s.as_slice()) {
                    *o *= a;
                }
                (out, Some(s), d)
            }
        };
        input = out.clone();
        hidden.push(HiddenTrace {
            pre,
            basis,
            out,
            scale,
            dscale,
        });
    }
    let last = params.layers.last().unwrap();
    let output = affine(&last.w, &last.b, &input)?;
    Ok(ForwardTrace {
        input: x.clone(),
        hidden,
        output,
        routes,
    })
}

/// Gradient of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T = f64> {
    pub w: Matrix<T>,
    pub b: Vector<T>,
}

/// Gradients for the speaker-independent parameters and for every cluster
/// that had at least one routed frame. Absent clusters have zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f64> {
    pub layers: Vec<LayerGrad<T>>,
    pub r: BTreeMap<ClusterId, Vec<Vector<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// The cluster's r-gradient, zeros if no frame was routed to it.
    pub fn r_or_zero(&self, id: ClusterId, widths: &[usize]) -> Vec<Vector<T>> {
        self.r
            .get(&id)
            .cloned()
            .unwrap_or_else(|| widths.iter().map(|&w| Vector::zeros(w)).collect())
    }
}

/// Back-propagates `loss_grad` (dL/d output, `batch x outputs`).
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    params: &NetworkParams<T>,
    loss_grad: &Matrix<T>,
) -> Result<Gradients<T>> {
    let batch = trace.input.rows();
    if trace.hidden.len() != params.n_hidden() {
        return Err(LhucError::TraceMismatch(format!(
            "{} hidden layers in trace, {} in network",
            trace.hidden.len(),
            params.n_hidden()
        )));
    }
    for (l, (h, layer)) in trace.hidden.iter().zip(&params.layers).enumerate() {
        if h.pre.shape() != (batch, layer.w.rows()) {
            return Err(LhucError::TraceMismatch(format!(
                "layer {l}: trace {:?} vs {} units for batch {batch}",
                h.pre.shape(),
                layer.w.rows()
            )));
        }
    }
    if loss_grad.shape() != trace.output.shape() || trace.output.cols() != params.output_dim() {
        return Err(LhucError::Shape {
            op: "backward",
            left: trace.output.shape(),
            right: loss_grad.shape(),
        });
    }

    let n_layers = params.layers.len();
    let mut layer_grads: Vec<Option<LayerGrad<T>>> = vec![None; n_layers];
    let mut r_grads: BTreeMap<ClusterId, Vec<Vector<T>>> = BTreeMap::new();
    if let Some(routes) = &trace.routes {
        let widths = params.hidden_widths();
        for id in routes {
            r_grads
                .entry(*id)
                .or_insert_with(|| widths.iter().map(|&w| Vector::zeros(w)).collect());
        }
    }

    // delta = dL/d(pre-activation) of the current layer
    let mut delta = loss_grad.clone();
    for l in (0..n_layers).rev() {
        let layer_in = if l == 0 {
            &trace.input
        } else {
            &trace.hidden[l - 1].out
        };
        layer_grads[l] = Some(accumulate_layer(&delta, layer_in));
        if l == 0 {
            break;
        }

        // dL/dh for hidden layer l-1
        let w = &params.layers[l].w;
        let below = &trace.hidden[l - 1];
        let units = w.cols();
        let mut dh = Matrix::zeros(batch, units);
        for t in 0..batch {
            let dt = delta.row(t);
            let out = dh.row_mut(t);
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (k, &d) in dt.iter().enumerate() {
                    acc += d * w[(k, j)];
                }
                *o = acc;
            }
        }

        // dL/dpsi = dL/dh * xi(r); dL/dr accumulates dL/dh * xi'(r) * psi per route
        let mut dpsi = dh.clone();
        if let Some(scale) = &below.scale {
            for (g, &a) in dpsi.as_mut_slice().iter_mut().zip(scale.as_slice()) {
                *g *= a;
            }
        }
        if let (Some(dscale), Some(routes)) = (&below.dscale, &trace.routes) {
            for (t, id) in routes.iter().enumerate() {
                let acc = &mut r_grads.get_mut(id).unwrap()[l - 1].data;
                let (dh_t, ds_t, psi_t) = (dh.row(t), dscale.row(t), below.basis.row(t));
                for j in 0..units {
                    acc[j] += dh_t[j] * ds_t[j] * psi_t[j];
                }
            }
        }

        let mut next = dpsi;
        for (g, &p) in next.as_mut_slice().iter_mut().zip(below.basis.as_slice()) {
            *g *= p * (T::one() - p);
        }
        delta = next;
    }

    Ok(Gradients {
        layers: layer_grads.into_iter().map(Option::unwrap).collect(),
        r: r_grads,
    })
}

fn accumulate_layer<T: Scalar>(delta: &Matrix<T>, input: &Matrix<T>) -> LayerGrad<T> {
    let (units, inputs) = (delta.cols(), input.cols());
    let mut w = Matrix::zeros(units, inputs);
    let mut b = Vector::zeros(units);
    for t in 0..delta.rows() {
        let (dt, xt) = (delta.row(t), input.row(t));
        for j in 0..units {
            let d = dt[j];
            b.data[j] += d;
            let wj = w.row_mut(j);
            for i in 0..inputs {
                wj[i] += d * xt[i];
            }
        }
    }
    LayerGrad { w, b }
}

/// `(speaker-independent parameter count, LHUC parameters per cluster)`.
pub fn count_parameters<T: Scalar>(
    params: &NetworkParams<T>,
    bank: Option<&TransformBank<T>>,
) -> (usize, usize) {
    let si = params
        .layers
        .iter()
        .map(|l| l.w.as_slice().len() + l.b.len())
        .sum();
    let per_cluster = bank.map_or(0, |_| params.hidden_widths().iter().sum());
    (si, per_cluster)
}
