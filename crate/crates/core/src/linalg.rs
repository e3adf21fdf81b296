//! Minimal dense row-major matrix used for all model parameters and state.
//!
//! The models here are small enough that a hand-rolled container beats pulling
//! in a full linear algebra stack, and it keeps the checkpoint format trivial.

use serde::{Deserialize, Serialize};

/// Dense row-major `f64` matrix. Vectors are stored as single-column or
/// single-row matrices depending on how they are indexed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    /// k x k identity.
    pub fn identity(k: usize) -> Self {
        Mat::from_fn(k, k, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert!(r < self.rows);
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// out = v * w for a 1 x k row vector `v` and a k x k matrix `w` (row-major),
/// i.e. `out[c] = sum_r v[r] * w[r, c]`.
#[inline]
pub fn vec_mat(v: &[f64], w: &Mat, out: &mut [f64]) {
    debug_assert_eq!(v.len(), w.rows);
    debug_assert_eq!(out.len(), w.cols);
    out.iter_mut().for_each(|x| *x = 0.0);
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        axpy(vr, w.row(r), out);
    }
}

/// out += w * v for a k x k matrix `w` and a length-k column vector `v`,
/// i.e. `out[r] += sum_c w[r, c] * v[c]`. This is the adjoint of [`vec_mat`].
#[inline]
pub fn mat_vec_add(w: &Mat, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), w.cols);
    debug_assert_eq!(out.len(), w.rows);
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(w.row(r), v);
    }
}

/// Numerically stable softmax over `logits`, written into `out`.
/// Uses max-subtraction so that logits of large magnitude stay finite.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    out.copy_from_slice(logits);
    softmax_inplace(out);
}

/// In-place variant of [`softmax`].
pub fn softmax_inplace(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
