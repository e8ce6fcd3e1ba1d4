//! Dense row-major matrices and vectors, activations and loss functions.
//!
//! Everything here is a pure function of its inputs. Accumulations run over
//! the inner index in ascending order so results are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{LhucError, Result};
use crate::scalar::Scalar;

/// Dense vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector<T = f64> {
    pub data: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn new(data: Vec<T>) -> Self {
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(len: usize, v: T) -> Self {
        Self { data: vec![v; len] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map_scalar<U: Scalar>(&self) -> Vector<U> {
        Vector {
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Dense row-major matrix. Batched activations are stored batch-first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LhucError::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LhucError::Shape {
                    op: "from_rows",
                    left: (rows.len(), cols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| v * a)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "add")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn map_scalar<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(LhucError::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// `out[t][j] = sum_i w[j][i] * x[t][i] + b[j]`.
///
/// `w` is `units x inputs`, `x` is `batch x inputs`; the result is `batch x units`.
pub fn affine<T: Scalar>(w: &Matrix<T>, b: &Vector<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    if w.cols() != x.cols() {
        return Err(LhucError::Shape {
            op: "affine",
            left: w.shape(),
            right: x.shape(),
        });
    }
    if b.len() != w.rows() {
        return Err(LhucError::Shape {
            op: "affine(bias)",
            left: w.shape(),
            right: (b.len(), 1),
        });
    }
    let mut out = Matrix::zeros(x.rows(), w.rows());
    for t in 0..x.rows() {
        let xt = x.row(t);
        let ot = out.row_mut(t);
        for (j, o) in ot.iter_mut().enumerate() {
            let wj = w.row(j);
            let mut acc = T::zero();
            for i in 0..xt.len() {
                acc += wj[i] * xt[i];
            }
            *o = acc + b.data[j];
        }
    }
    Ok(out)
}

/// Hidden or output nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Linear,
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

pub fn activation<T: Scalar>(kind: Activation, z: &Matrix<T>) -> Matrix<T> {
    match kind {
        Activation::Sigmoid => z.map(sigmoid),
        Activation::Linear => z.clone(),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for t in 0..out.rows() {
        let row = out.row_mut(t);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Mean cross-entropy of softmax(logits) against class indices, and its
/// gradient with respect to the logits.
pub fn softmax_xent<T: Scalar>(logits: &Matrix<T>, targets: &[usize]) -> Result<(T, Matrix<T>)> {
    if targets.len() != logits.rows() {
        return Err(LhucError::Shape {
            op: "softmax_xent",
            left: logits.shape(),
            right: (targets.len(), 1),
        });
    }
    let classes = logits.cols();
    if let Some((row, &index)) = targets.iter().enumerate().find(|(_, &c)| c >= classes) {
        return Err(LhucError::TargetOutOfRange {
            row,
            index,
            classes,
        });
    }
    let batch = T::from_usize(logits.rows().max(1)).unwrap();
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut loss = T::zero();
    for (t, &c) in targets.iter().enumerate() {
        let row = logits.row(t);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for &v in row {
            s += (v - m).exp();
        }
        let log_z = m + s.ln();
        loss += log_z - row[c];
        let g = grad.row_mut(t);
        for k in 0..classes {
            g[k] = (row[k] - log_z).exp() / batch;
        }
        g[c] -= T::one() / batch;
    }
    Ok((loss / batch, grad))
}

/// Mean squared error and its gradient `2 (pred - target) / count`.
pub fn mse<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    pred.check_same(target, "mse")?;
    let n = T::from_usize(pred.as_slice().len().max(1)).unwrap();
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, &p), &y) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - y;
        loss += d * d;
        *g = two * d / n;
    }
    Ok((loss / n, grad))
}
