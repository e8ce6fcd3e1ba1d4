//! Training objectives and chunked whole-dataset evaluation.

use crate::data::{FrameDataset, Targets};
use crate::error::{LhucError, Result};
use crate::model::{forward, NetworkParams, OutputKind, Scaling};
use crate::scalar::Scalar;
use crate::tensor::{mse, softmax_xent, Matrix};

const EVAL_CHUNK: usize = 1024;

/// Loss of `output` against `targets` and its gradient: cross-entropy for
/// classifiers, mean squared error for regressors.
pub fn loss_and_grad<T: Scalar>(
    kind: OutputKind,
    output: &Matrix<T>,
    targets: &Targets<T>,
) -> Result<(T, Matrix<T>)> {
    match (kind, targets) {
        (OutputKind::SoftmaxClassifier, Targets::Classes { labels, .. }) => {
            softmax_xent(output, labels)
        }
        (OutputKind::LinearRegressor, Targets::Values(y)) => mse(output, y),
        _ => Err(LhucError::Unsupported("output head does not match target kind")),
    }
}

/// Restricts per-frame routing to frames `start..end`.
pub fn slice_scaling<'a, T>(s: Scaling<'a, T>, start: usize, end: usize) -> Scaling<'a, T> {
    match s {
        Scaling::Routed { bank, routes } => Scaling::Routed {
            bank,
            routes: &routes[start..end],
        },
        other => other,
    }
}

/// Network outputs for every frame, computed in fixed-size chunks.
pub fn predict<T: Scalar>(
    params: &NetworkParams<T>,
    scaling: Scaling<'_, T>,
    x: &Matrix<T>,
) -> Result<Matrix<T>> {
    let n = x.rows();
    let mut out = Vec::with_capacity(n * params.output_dim());
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let tr = forward(params, slice_scaling(scaling, start, end), &x.select_rows(&idx))?;
        out.extend_from_slice(tr.output.as_slice());
        start = end;
    }
    Matrix::from_vec(n, params.output_dim(), out)
}

/// Mean per-frame loss over the whole dataset.
pub fn dataset_loss<T: Scalar>(
    params: &NetworkParams<T>,
    scaling: Scaling<'_, T>,
    data: &FrameDataset<T>,
) -> Result<T> {
    let n = data.len();
    if n == 0 {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = data.subset(&idx);
        let tr = forward(params, slice_scaling(scaling, start, end), &chunk.features)?;
        let (l, _) = loss_and_grad(params.output_kind, &tr.output, &chunk.targets)?;
        let per_frame_units = match &chunk.targets {
            Targets::Classes { .. } => T::one(),
            Targets::Values(m) => T::from_usize(m.cols()).unwrap(),
        };
        // mse averages over entries; rescale to a per-frame sum so chunks combine exactly
        total += l * T::from_usize(end - start).unwrap() * per_frame_units;
        start = end;
    }
    let per_frame_units = match &data.targets {
        Targets::Classes { .. } => T::one(),
        Targets::Values(m) => T::from_usize(m.cols().max(1)).unwrap(),
    };
    Ok(total / (T::from_usize(n).unwrap() * per_frame_units))
}
