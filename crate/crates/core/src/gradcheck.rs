//! Central finite-difference verification of analytic gradients.
//!
//! Every hand-derived gradient in the crate is checked against these
//! numerical derivatives; the trainers are only trusted because this suite
//! passes. Comparisons use `|a - n| <= atol + rtol * max(|a|, |n|)` so that
//! near-zero entries are judged on the absolute term.

use crate::grad::{GradStore, ParamArrays};
use crate::linalg::Mat;

/// Central finite differences of `f` with respect to every parameter entry.
pub fn fd_grads<P: ParamArrays>(
    params: &mut P,
    mut f: impl FnMut(&P) -> f64,
    eps: f64,
) -> Vec<Mat> {
    let shapes: Vec<(usize, usize)> = params.arrays().iter().map(|a| (a.rows, a.cols)).collect();
    let mut grads: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
    for (idx, &(rows, cols)) in shapes.iter().enumerate() {
        for r in 0..rows {
            for c in 0..cols {
                let orig = params.arrays()[idx].get(r, c);
                params.arrays_mut()[idx].set(r, c, orig + eps);
                let up = f(params);
                params.arrays_mut()[idx].set(r, c, orig - eps);
                let down = f(params);
                params.arrays_mut()[idx].set(r, c, orig);
                grads[idx].set(r, c, (up - down) / (2.0 * eps));
            }
        }
    }
    grads
}

/// Compare an analytic [`GradStore`] against numeric gradients; returns the
/// worst offending entry on failure.
pub fn compare_grads(
    analytic: &GradStore,
    numeric: &[Mat],
    rtol: f64,
    atol: f64,
) -> std::result::Result<(), String> {
    assert_eq!(analytic.n_arrays(), numeric.len());
    let mut worst: Option<(f64, String)> = None;
    for (idx, num) in numeric.iter().enumerate() {
        for r in 0..num.rows {
            for c in 0..num.cols {
                let a = analytic.get(idx, r, c);
                let n = num.get(r, c);
                let err = (a - n).abs();
                let tol = atol + rtol * a.abs().max(n.abs());
                if err > tol {
                    let ratio = err / tol;
                    let msg = format!(
                        "array {idx} ({r},{c}): analytic {a} vs numeric {n} (err {err:.3e})"
                    );
                    if worst.as_ref().map_or(true, |(w, _)| ratio > *w) {
                        worst = Some((ratio, msg));
                    }
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some((_, msg)) => Err(msg),
    }
}
