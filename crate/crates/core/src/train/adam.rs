//! ADAM with lazy (touched-rows-only) updates for sparse embedding training.

use crate::error::{Error, Result};
use crate::grad::{GradStore, ParamArrays};
use crate::linalg::Mat;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter first and second moment accumulators plus the shared step
/// counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &impl ParamArrays) -> Self {
        let m: Vec<Mat> = params
            .arrays()
            .iter()
            .map(|a| Mat::zeros(a.rows, a.cols))
            .collect();
        let v = m.clone();
        AdamState {
            m,
            v,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One ADAM update over the rows touched by `grads`. L2 regularization is
/// folded into the raw gradient (`g + l2 * theta`) before the moment update,
/// so it only applies to parameters the batch touched.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut impl ParamArrays,
    grads: &GradStore,
    lr: f64,
    l2: f64,
) -> Result<()> {
    let mut arrays = params.arrays_mut();
    if arrays.len() != state.m.len() || arrays.len() != grads.n_arrays() {
        return Err(Error::Shape(format!(
            "adam: {} parameter arrays vs {} moment arrays vs {} gradient arrays",
            arrays.len(),
            state.m.len(),
            grads.n_arrays()
        )));
    }
    for (idx, arr) in arrays.iter().enumerate() {
        if !arr.same_shape(&state.m[idx]) || grads.shape(idx) != (arr.rows, arr.cols) {
            return Err(Error::Shape(format!("adam: array {idx} shape mismatch")));
        }
    }

    state.step += 1;
    let bias1 = 1.0 - state.beta1.powi(state.step as i32);
    let bias2 = 1.0 - state.beta2.powi(state.step as i32);

    for (idx, arr) in arrays.iter_mut().enumerate() {
        for &row in grads.touched_rows(idx) {
            let g_row = grads.row(idx, row);
            let m_row = state.m[idx].row_mut(row);
            let v_row = state.v[idx].row_mut(row);
            let p_row = arr.row_mut(row);
            for d in 0..g_row.len() {
                let g = g_row[d] + l2 * p_row[d];
                m_row[d] = state.beta1 * m_row[d] + (1.0 - state.beta1) * g;
                v_row[d] = state.beta2 * v_row[d] + (1.0 - state.beta2) * g * g;
                let m_hat = m_row[d] / bias1;
                let v_hat = v_row[d] / bias2;
                p_row[d] -= lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct OneArray {
        a: Mat,
    }

    impl ParamArrays for OneArray {
        fn arrays(&self) -> Vec<&Mat> {
            vec![&self.a]
        }
        fn arrays_mut(&mut self) -> Vec<&mut Mat> {
            vec![&mut self.a]
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = OneArray {
            a: Mat::from_fn(2, 2, |r, c| (r + c) as f64),
        };
        let before = p.a.clone();
        let mut state = AdamState::new(&p);
        let mut grads = GradStore::zeros_like(&p);
        grads.add_scaled_row(0, 1, 0.0, &[0.0, 0.0]); // touched but zero
        adam_step(&mut state, &mut p, &grads, 0.01, 0.0).unwrap();
        assert_eq!(p.a, before);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // bias-corrected m_hat = g, v_hat = g^2, so the first update is
        // lr * g / |g| regardless of the gradient's scale
        for g in [1.0, 10.0, 0.03] {
            let mut p = OneArray {
                a: Mat::zeros(1, 1),
            };
            let mut state = AdamState::new(&p);
            let mut grads = GradStore::zeros_like(&p);
            grads.add_scalar(0, 0, 0, g);
            adam_step(&mut state, &mut p, &grads, 0.001, 0.0).unwrap();
            let update = p.a.get(0, 0);
            assert!(
                (update.abs() - 0.001).abs() < 1e-8,
                "g = {g}: update {update}"
            );
            assert!(update < 0.0); // descent direction for positive gradient
        }
    }

    #[test]
    fn untouched_rows_never_move() {
        let mut p = OneArray {
            a: Mat::from_fn(3, 1, |r, _| r as f64),
        };
        let mut state = AdamState::new(&p);
        let mut grads = GradStore::zeros_like(&p);
        grads.add_scalar(0, 1, 0, 0.5);
        adam_step(&mut state, &mut p, &grads, 0.1, 0.5).unwrap();
        assert_eq!(p.a.get(0, 0), 0.0);
        assert_eq!(p.a.get(2, 0), 2.0);
        assert_ne!(p.a.get(1, 0), 1.0);
    }

    #[test]
    fn l2_is_folded_into_the_gradient() {
        // with zero raw gradient but l2 > 0, a touched parameter decays
        let mut p = OneArray {
            a: Mat::from_fn(1, 1, |_, _| 2.0),
        };
        let mut state = AdamState::new(&p);
        let mut grads = GradStore::zeros_like(&p);
        grads.add_scalar(0, 0, 0, 0.0);
        adam_step(&mut state, &mut p, &grads, 0.001, 0.1).unwrap();
        assert!(p.a.get(0, 0) < 2.0);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut p = OneArray {
            a: Mat::zeros(2, 2),
        };
        let other = OneArray {
            a: Mat::zeros(3, 2),
        };
        let mut state = AdamState::new(&other);
        let grads = GradStore::zeros_like(&p);
        assert!(matches!(
            adam_step(&mut state, &mut p, &grads, 0.1, 0.0),
            Err(Error::Shape(_))
        ));
    }
}
