//! Pairwise ranking losses and negative sampling.

use rand::Rng;

use crate::linalg::sigmoid;

/// Bayesian personalised ranking loss for a (positive, negative) score pair:
/// `1 - sigmoid(r_pos - r_neg)`, computed as `sigmoid(r_neg - r_pos)` so the
/// small-loss tail keeps its precision.
pub fn bpr_loss(r_pos: f64, r_neg: f64) -> f64 {
    sigmoid(r_neg - r_pos)
}

/// (dL/dr_pos, dL/dr_neg) for [`bpr_loss`].
pub(crate) fn bpr_grads(r_pos: f64, r_neg: f64) -> (f64, f64) {
    let s = sigmoid(r_pos - r_neg);
    let d = s * (1.0 - s);
    (-d, d)
}

/// Maximum-margin loss: `max(0, 1 - r_pos + r_neg)`.
pub fn hinge_loss(r_pos: f64, r_neg: f64) -> f64 {
    (1.0 - r_pos + r_neg).max(0.0)
}

/// (dL/dr_pos, dL/dr_neg) for [`hinge_loss`]; zero when the margin holds.
pub(crate) fn hinge_grads(r_pos: f64, r_neg: f64) -> (f64, f64) {
    if 1.0 - r_pos + r_neg > 0.0 {
        (-1.0, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Uniformly sample negatives until one violates the margin, up to
/// `max_attempts`; returns the first violator with its hinge loss, or the
/// last draw with loss 0 when none violates (no gradient contribution).
pub fn sample_adaptive_negative(
    rng: &mut impl Rng,
    n_items: usize,
    mut score_fn: impl FnMut(u32) -> f64,
    r_pos: f64,
    max_attempts: usize,
) -> (u32, f64) {
    debug_assert!(max_attempts >= 1);
    let mut neg = 0;
    for _ in 0..max_attempts.max(1) {
        neg = rng.gen_range(1..=n_items) as u32;
        let loss = hinge_loss(r_pos, score_fn(neg));
        if loss > 0.0 {
            return (neg, loss);
        }
    }
    (neg, 0.0)
}
