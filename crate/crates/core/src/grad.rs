//! Sparse gradient accumulation shared by the trainers and the optimizer.
//!
//! Model parameters are exposed as an ordered list of matrices (see
//! [`ParamArrays`]); a [`GradStore`] mirrors those shapes and tracks which
//! rows were touched by the current mini-batch so the optimizer and the
//! clearing pass stay O(touched) instead of O(all parameters).

use crate::linalg::Mat;

/// Ordered view over a model's parameter matrices. The order is part of each
/// model's contract; trainers address gradients by the same indices.
pub trait ParamArrays {
    fn arrays(&self) -> Vec<&Mat>;
    fn arrays_mut(&mut self) -> Vec<&mut Mat>;
}

/// Gradient buffers shaped like a model's parameter arrays.
#[derive(Debug, Clone)]
pub struct GradStore {
    arrays: Vec<Mat>,
    touched: Vec<Vec<usize>>,
    dirty: Vec<Vec<bool>>,
}

impl GradStore {
    pub fn zeros_like(params: &impl ParamArrays) -> Self {
        let arrays: Vec<Mat> = params
            .arrays()
            .iter()
            .map(|a| Mat::zeros(a.rows, a.cols))
            .collect();
        let touched = arrays.iter().map(|_| Vec::new()).collect();
        let dirty = arrays.iter().map(|a| vec![false; a.rows]).collect();
        GradStore {
            arrays,
            touched,
            dirty,
        }
    }

    pub fn n_arrays(&self) -> usize {
        self.arrays.len()
    }

    pub fn shape(&self, array: usize) -> (usize, usize) {
        (self.arrays[array].rows, self.arrays[array].cols)
    }

    #[inline]
    fn mark(&mut self, array: usize, row: usize) {
        if !self.dirty[array][row] {
            self.dirty[array][row] = true;
            self.touched[array].push(row);
        }
    }

    /// `grad[array][row] += scale * values`
    #[inline]
    pub fn add_scaled_row(&mut self, array: usize, row: usize, scale: f64, values: &[f64]) {
        self.mark(array, row);
        let dst = self.arrays[array].row_mut(row);
        debug_assert_eq!(dst.len(), values.len());
        for (d, v) in dst.iter_mut().zip(values) {
            *d += scale * v;
        }
    }

    /// `grad[array][row][offset .. offset + values.len()] += scale * values`;
    /// used for arrays whose rows stack several component vectors.
    #[inline]
    pub fn add_scaled_segment(
        &mut self,
        array: usize,
        row: usize,
        offset: usize,
        scale: f64,
        values: &[f64],
    ) {
        self.mark(array, row);
        let dst = &mut self.arrays[array].row_mut(row)[offset..offset + values.len()];
        for (d, v) in dst.iter_mut().zip(values) {
            *d += scale * v;
        }
    }

    /// `grad[array] += scale * left ⊗ right` (rank-one update over all rows).
    pub fn add_outer(&mut self, array: usize, scale: f64, left: &[f64], right: &[f64]) {
        debug_assert_eq!(left.len(), self.arrays[array].rows);
        for (r, &l) in left.iter().enumerate() {
            if l != 0.0 {
                self.add_scaled_row(array, r, scale * l, right);
            }
        }
    }

    /// Rank-one update into the k x k block whose rows start at `row_offset`.
    pub fn add_outer_block(
        &mut self,
        array: usize,
        row_offset: usize,
        scale: f64,
        left: &[f64],
        right: &[f64],
    ) {
        for (r, &l) in left.iter().enumerate() {
            if l != 0.0 {
                self.add_scaled_row(array, row_offset + r, scale * l, right);
            }
        }
    }

    /// `grad[array][row][col] += value`
    #[inline]
    pub fn add_scalar(&mut self, array: usize, row: usize, col: usize, value: f64) {
        self.mark(array, row);
        let m = &mut self.arrays[array];
        let v = m.get(row, col) + value;
        m.set(row, col, v);
    }

    pub fn row(&self, array: usize, row: usize) -> &[f64] {
        self.arrays[array].row(row)
    }

    /// Dense read; untouched entries are zero.
    pub fn get(&self, array: usize, row: usize, col: usize) -> f64 {
        self.arrays[array].get(row, col)
    }

    pub fn touched_rows(&self, array: usize) -> &[usize] {
        &self.touched[array]
    }

    /// Zero the touched rows and forget them.
    pub fn clear(&mut self) {
        for array in 0..self.arrays.len() {
            for &row in &self.touched[array] {
                self.dirty[array][row] = false;
            }
            let rows = std::mem::take(&mut self.touched[array]);
            for row in rows {
                self.arrays[array]
                    .row_mut(row)
                    .iter_mut()
                    .for_each(|x| *x = 0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct TwoArrays {
        a: Mat,
        b: Mat,
    }

    impl ParamArrays for TwoArrays {
        fn arrays(&self) -> Vec<&Mat> {
            vec![&self.a, &self.b]
        }
        fn arrays_mut(&mut self) -> Vec<&mut Mat> {
            vec![&mut self.a, &mut self.b]
        }
    }

    #[test]
    fn accumulates_and_clears_touched_rows_only() {
        let params = TwoArrays {
            a: Mat::zeros(4, 3),
            b: Mat::zeros(2, 2),
        };
        let mut g = GradStore::zeros_like(&params);
        g.add_scaled_row(0, 2, 2.0, &[1.0, 0.5, -1.0]);
        g.add_scaled_row(0, 2, 1.0, &[1.0, 0.0, 0.0]);
        g.add_scalar(1, 0, 1, 3.0);

        assert_eq!(g.row(0, 2), &[3.0, 1.0, -2.0]);
        assert_eq!(g.get(1, 0, 1), 3.0);
        assert_eq!(g.touched_rows(0), &[2]);
        assert_eq!(g.touched_rows(1), &[0]);

        g.clear();
        assert_eq!(g.row(0, 2), &[0.0, 0.0, 0.0]);
        assert!(g.touched_rows(0).is_empty());
    }

    #[test]
    fn outer_product_touches_every_nonzero_row() {
        let params = TwoArrays {
            a: Mat::zeros(3, 2),
            b: Mat::zeros(1, 1),
        };
        let mut g = GradStore::zeros_like(&params);
        g.add_outer(0, 1.0, &[2.0, 0.0, -1.0], &[1.0, 4.0]);
        assert_eq!(g.row(0, 0), &[2.0, 8.0]);
        assert_eq!(g.row(0, 1), &[0.0, 0.0]);
        assert_eq!(g.row(0, 2), &[-1.0, -4.0]);
        assert_eq!(g.touched_rows(0), &[0, 2]);
    }
}
