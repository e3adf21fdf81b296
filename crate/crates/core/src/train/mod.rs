//! Training: pairwise ranking losses over sampled negatives, ADAM with
//! touched-rows-only updates, and the epoch loops for both model families.
//!
//! The reference mode is single-threaded and fully deterministic: given the
//! same initial parameters, data, and config, two runs produce bit-identical
//! parameters.

mod adam;
mod loss;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{bpr_loss, hinge_loss, sample_adaptive_negative};

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionSet, SequenceSet};
use crate::error::{Error, Result};
use crate::grad::GradStore;
use crate::linalg::{dot, Mat};
use crate::models::factorization::{mixture_parts_into, EmfParams, MfParams, PmfParams};
use crate::models::sequence::{forward_cache, lstm_backward, LstmParams};
use crate::models::{ItemParams, Params, ProjectionHeads, Variant};
use crate::seeding;

const STREAM_TRAIN: u64 = 0x7472_6169;

/// The pairwise loss driving the gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bpr,
    AdaptiveHinge,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Bpr => "bpr",
            LossKind::AdaptiveHinge => "adaptive_hinge",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bpr" => Ok(LossKind::Bpr),
            "adaptive_hinge" => Ok(LossKind::AdaptiveHinge),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

/// One point of the hyperparameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub variant: Variant,
    pub k: usize,
    pub m: usize,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub max_neg_attempts: usize,
    pub seed: u64,
}

impl HyperConfig {
    /// Single-vector baselines have exactly one component.
    pub fn normalized(mut self) -> Self {
        if !self.variant.is_mixture() {
            self.m = 1;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 {
            return Err(Error::Config("k and m must be at least 1".into()));
        }
        if !self.variant.is_mixture() && self.m != 1 {
            return Err(Error::Config(format!(
                "variant {} is single-vector; m must be 1, got {}",
                self.variant, self.m
            )));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_neg_attempts == 0 {
            return Err(Error::Config("max_neg_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch progress record, also emitted as JSON lines while training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

/// One pairwise training example: a context (user id for factorization
/// models, sequence row for sequence models), the observed positive and the
/// sampled negative item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub context: u32,
    pub positive: u32,
    pub negative: u32,
}

/// The triplets consumed by one optimizer step.
#[derive(Debug, Clone, Default)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

// ---------------------------------------------------------------------------
// Shared gradient accumulation
// ---------------------------------------------------------------------------

/// Indices of the projection-head arrays inside a model's array list.
#[derive(Clone, Copy)]
struct HeadArrays {
    taste_w: usize,
    taste_b: usize,
    attn_w: usize,
    attn_b: usize,
    item_emb: usize,
    item_bias: usize,
}

const PMF_HEADS: HeadArrays = HeadArrays {
    taste_w: PmfParams::ARR_TASTE_W,
    taste_b: PmfParams::ARR_TASTE_B,
    attn_w: PmfParams::ARR_ATTN_W,
    attn_b: PmfParams::ARR_ATTN_B,
    item_emb: PmfParams::ARR_ITEM_EMB,
    item_bias: PmfParams::ARR_ITEM_BIAS,
};

const LSTM_HEADS: HeadArrays = HeadArrays {
    taste_w: LstmParams::ARR_TASTE_W,
    taste_b: LstmParams::ARR_TASTE_B,
    attn_w: LstmParams::ARR_ATTN_W,
    attn_b: LstmParams::ARR_ATTN_B,
    item_emb: LstmParams::ARR_ITEM_EMB,
    item_bias: LstmParams::ARR_ITEM_BIAS,
};

/// Reused buffers for the per-triplet math.
struct Scratch {
    /// projected tastes / attentions (m * k)
    tastes: Vec<f64>,
    attns: Vec<f64>,
    /// mixture parts for the currently scored item (m)
    weights: Vec<f64>,
    scores: Vec<f64>,
    /// gradient accumulators (k)
    d_item: Vec<f64>,
    d_context: Vec<f64>,
}

impl Scratch {
    fn new(m: usize, k: usize) -> Self {
        Scratch {
            tastes: vec![0.0; m * k],
            attns: vec![0.0; m * k],
            weights: vec![0.0; m],
            scores: vec![0.0; m],
            d_item: vec![0.0; k],
            d_context: vec![0.0; k],
        }
    }
}

/// d(score)/d(item embedding) of the mixture rule:
/// `sum_h w_h U_h + sum_h w_h (t_h - s) A_h`, written into `out`.
fn mixture_item_grad(
    tastes: &[f64],
    attns: &[f64],
    weights: &[f64],
    scores: &[f64],
    out: &mut [f64],
) {
    let k = out.len();
    let score: f64 = dot(weights, scores);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (h, &w) in weights.iter().enumerate() {
        let coef = w * (scores[h] - score);
        for (d, o) in out.iter_mut().enumerate() {
            *o += w * tastes[h * k + d] + coef * attns[h * k + d];
        }
    }
}

/// `dz[r] += sum_c W[block_row + r, c] * v[c]`, the adjoint of the row-vector
/// projection `z W`.
fn block_adjoint_add(w: &Mat, block_row: usize, v: &[f64], scale: f64, out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o += scale * dot(w.row(block_row + r), v);
    }
}

/// EM-F: gradients of `g * score(user, item)` into the directly embedded
/// taste/attention rows and the item side.
fn accum_emf(p: &EmfParams, grads: &mut GradStore, user: u32, item: u32, g: f64, s: &mut Scratch) {
    let (m, k) = (p.dims.m, p.dims.k);
    let u = user as usize;
    let e = p.items.embedding(item);
    let tastes = p.user_tastes.row(u);
    let attns = p.user_attentions.row(u);
    mixture_parts_into(tastes, attns, e, &mut s.weights, &mut s.scores);
    let score = dot(&s.weights, &s.scores);
    for h in 0..m {
        let w = s.weights[h];
        let coef = w * (s.scores[h] - score);
        grads.add_scaled_segment(EmfParams::ARR_TASTES, u, h * k, g * w, e);
        grads.add_scaled_segment(EmfParams::ARR_ATTNS, u, h * k, g * coef, e);
    }
    mixture_item_grad(tastes, attns, &s.weights, &s.scores, &mut s.d_item);
    grads.add_scaled_row(EmfParams::ARR_ITEM_EMB, item as usize, g, &s.d_item);
    grads.add_scalar(EmfParams::ARR_ITEM_BIAS, item as usize, 0, g);
}

/// Shared by PM-F and M-LSTM: gradients of `g * mixture_score` where the
/// tastes/attentions in `s` were projected from `z` through `heads`.
/// The gradient with respect to `z` is accumulated into `s.d_context`.
fn accum_projected(
    heads: &ProjectionHeads,
    arrays: HeadArrays,
    items: &ItemParams,
    grads: &mut GradStore,
    z: &[f64],
    item: u32,
    g: f64,
    s: &mut Scratch,
) {
    let (m, k) = (heads.n_components(), heads.dim());
    let e = items.embedding(item);
    mixture_parts_into(&s.tastes, &s.attns, e, &mut s.weights, &mut s.scores);
    let score = dot(&s.weights, &s.scores);
    for h in 0..m {
        let w_coef = g * s.weights[h];
        let a_coef = g * s.weights[h] * (s.scores[h] - score);
        // dW[h] = z ⊗ (coef * e), dB[h] = coef * e
        grads.add_outer_block(arrays.taste_w, h * k, w_coef, z, e);
        grads.add_scaled_row(arrays.taste_b, h, w_coef, e);
        grads.add_outer_block(arrays.attn_w, h * k, a_coef, z, e);
        grads.add_scaled_row(arrays.attn_b, h, a_coef, e);
        // chain into the projection input
        block_adjoint_add(&heads.taste_weights, h * k, e, w_coef, &mut s.d_context);
        block_adjoint_add(&heads.attention_weights, h * k, e, a_coef, &mut s.d_context);
    }
    mixture_item_grad(&s.tastes, &s.attns, &s.weights, &s.scores, &mut s.d_item);
    grads.add_scaled_row(arrays.item_emb, item as usize, g, &s.d_item);
    grads.add_scalar(arrays.item_bias, item as usize, 0, g);
}

fn accum_mf(p: &MfParams, grads: &mut GradStore, user: u32, item: u32, g: f64) {
    let u = user as usize;
    grads.add_scaled_row(MfParams::ARR_USER, u, g, p.items.embedding(item));
    grads.add_scaled_row(
        MfParams::ARR_ITEM_EMB,
        item as usize,
        g,
        p.user_embeddings.row(u),
    );
    grads.add_scalar(MfParams::ARR_ITEM_BIAS, item as usize, 0, g);
}

/// Sample a negative for `r_pos` and return (negative, loss, d/d r_pos,
/// d/d r_neg). BPR draws one uniform negative; the adaptive hinge resamples
/// until the margin is violated, up to `max_attempts`.
fn sample_negative(
    rng: &mut ChaCha8Rng,
    n_items: usize,
    score_fn: impl FnMut(u32) -> f64,
    r_pos: f64,
    kind: LossKind,
    max_attempts: usize,
) -> (u32, f64, f64, f64) {
    let mut score_fn = score_fn;
    match kind {
        LossKind::Bpr => {
            let neg = rng.gen_range(1..=n_items) as u32;
            let r_neg = score_fn(neg);
            let l = loss::bpr_loss(r_pos, r_neg);
            let (g_pos, g_neg) = loss::bpr_grads(r_pos, r_neg);
            (neg, l, g_pos, g_neg)
        }
        LossKind::AdaptiveHinge => {
            let (neg, l) =
                loss::sample_adaptive_negative(rng, n_items, &mut score_fn, r_pos, max_attempts);
            if l > 0.0 {
                (neg, l, -1.0, 1.0)
            } else {
                (neg, 0.0, 0.0, 0.0)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Factorization training
// ---------------------------------------------------------------------------

/// Loss and gradients of one (user, positive, negative) triplet with unit
/// scale — the factorization training objective without the optimizer.
/// Exposed so gradients can be verified against finite differences.
pub fn triplet_loss_grads(
    params: &Params,
    user: u32,
    positive: u32,
    negative: u32,
    kind: LossKind,
    grads: &mut GradStore,
) -> Result<f64> {
    let dims = *params.dims();
    let mut scratch = Scratch::new(dims.m, dims.k);
    let r_pos = params.score(user, positive)?;
    let r_neg = params.score(user, negative)?;
    let (l, g_pos, g_neg) = match kind {
        LossKind::Bpr => {
            let (gp, gn) = loss::bpr_grads(r_pos, r_neg);
            (loss::bpr_loss(r_pos, r_neg), gp, gn)
        }
        LossKind::AdaptiveHinge => {
            let (gp, gn) = loss::hinge_grads(r_pos, r_neg);
            (loss::hinge_loss(r_pos, r_neg), gp, gn)
        }
    };
    accum_factorization_pair(
        params,
        grads,
        user,
        positive,
        negative,
        g_pos,
        g_neg,
        &mut scratch,
    );
    Ok(l)
}

#[allow(clippy::too_many_arguments)]
fn accum_factorization_pair(
    params: &Params,
    grads: &mut GradStore,
    user: u32,
    positive: u32,
    negative: u32,
    g_pos: f64,
    g_neg: f64,
    scratch: &mut Scratch,
) {
    match params {
        Params::Mf(p) => {
            if g_pos != 0.0 {
                accum_mf(p, grads, user, positive, g_pos);
            }
            if g_neg != 0.0 {
                accum_mf(p, grads, user, negative, g_neg);
            }
        }
        Params::Emf(p) => {
            if g_pos != 0.0 {
                accum_emf(p, grads, user, positive, g_pos, scratch);
            }
            if g_neg != 0.0 {
                accum_emf(p, grads, user, negative, g_neg, scratch);
            }
        }
        Params::Pmf(p) => {
            let z = p.user_embeddings.row(user as usize);
            crate::models::apply_projections(z, &p.heads, &mut scratch.tastes, &mut scratch.attns);
            scratch.d_context.iter_mut().for_each(|v| *v = 0.0);
            if g_pos != 0.0 {
                accum_projected(
                    &p.heads, PMF_HEADS, &p.items, grads, z, positive, g_pos, scratch,
                );
            }
            if g_neg != 0.0 {
                accum_projected(
                    &p.heads, PMF_HEADS, &p.items, grads, z, negative, g_neg, scratch,
                );
            }
            if g_pos != 0.0 || g_neg != 0.0 {
                grads.add_scaled_row(PmfParams::ARR_USER, user as usize, 1.0, &scratch.d_context);
            }
        }
        _ => unreachable!("factorization accumulation on a sequence variant"),
    }
}

/// Train a factorization model. Each epoch shuffles the positives with the
/// seeded RNG; each mini-batch samples negatives per the configured loss,
/// accumulates the hand-derived gradients, and applies one ADAM step.
pub fn train_factorization(
    params: &mut Params,
    train: &InteractionSet,
    cfg: &HyperConfig,
    mut progress: Option<&mut dyn Write>,
) -> Result<Vec<EpochRecord>> {
    let cfg = cfg.normalized();
    cfg.validate()?;
    if cfg.variant.is_sequence() {
        return Err(Error::Config(format!(
            "train_factorization cannot train variant {}",
            cfg.variant
        )));
    }
    if params.variant() != cfg.variant {
        return Err(Error::Config(format!(
            "params are {}, config wants {}",
            params.variant(),
            cfg.variant
        )));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    let dims = *params.dims();
    if train.n_users > dims.n_users || train.n_items > dims.n_items {
        return Err(Error::Config(format!(
            "data id space ({} users, {} items) exceeds model dims ({}, {})",
            train.n_users, train.n_items, dims.n_users, dims.n_items
        )));
    }

    let mut rng = seeding::rng(cfg.seed, STREAM_TRAIN);
    let mut positives: Vec<(u32, u32)> = train
        .interactions
        .iter()
        .map(|it| (it.user, it.item))
        .collect();
    let mut grads = GradStore::zeros_like(params);
    let mut state = AdamState::new(params);
    let mut scratch = Scratch::new(dims.m, dims.k);
    let n_items = dims.n_items;
    let mut records = Vec::with_capacity(cfg.n_epochs);

    for epoch in 0..cfg.n_epochs {
        let start = Instant::now();
        positives.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for chunk in positives.chunks(cfg.batch_size) {
            grads.clear();
            let weight = 1.0 / chunk.len() as f64;
            let mut batch = TripletBatch::default();
            let mut pair_grads: Vec<(f64, f64)> = Vec::with_capacity(chunk.len());

            for &(user, pos) in chunk {
                // context representations for this user
                let (neg, l, g_pos, g_neg) = match &*params {
                    Params::Mf(p) => {
                        let z = p.user_embeddings.row(user as usize);
                        let r_pos = dot(z, p.items.embedding(pos)) + p.items.bias(pos);
                        sample_negative(
                            &mut rng,
                            n_items,
                            |j| dot(z, p.items.embedding(j)) + p.items.bias(j),
                            r_pos,
                            cfg.loss,
                            cfg.max_neg_attempts,
                        )
                    }
                    Params::Emf(p) => {
                        let tastes = p.user_tastes.row(user as usize);
                        let attns = p.user_attentions.row(user as usize);
                        let mut w = vec![0.0; dims.m];
                        let mut t = vec![0.0; dims.m];
                        let mut score = |j: u32| {
                            mixture_parts_into(tastes, attns, p.items.embedding(j), &mut w, &mut t);
                            dot(&w, &t) + p.items.bias(j)
                        };
                        let r_pos = score(pos);
                        sample_negative(
                            &mut rng,
                            n_items,
                            score,
                            r_pos,
                            cfg.loss,
                            cfg.max_neg_attempts,
                        )
                    }
                    Params::Pmf(p) => {
                        let z = p.user_embeddings.row(user as usize);
                        crate::models::apply_projections(
                            z,
                            &p.heads,
                            &mut scratch.tastes,
                            &mut scratch.attns,
                        );
                        let (tastes, attns) = (&scratch.tastes, &scratch.attns);
                        let mut w = vec![0.0; dims.m];
                        let mut t = vec![0.0; dims.m];
                        let mut score = |j: u32| {
                            mixture_parts_into(tastes, attns, p.items.embedding(j), &mut w, &mut t);
                            dot(&w, &t) + p.items.bias(j)
                        };
                        let r_pos = score(pos);
                        sample_negative(
                            &mut rng,
                            n_items,
                            score,
                            r_pos,
                            cfg.loss,
                            cfg.max_neg_attempts,
                        )
                    }
                    _ => unreachable!(),
                };
                epoch_loss += l;
                batch.triplets.push(Triplet {
                    context: user,
                    positive: pos,
                    negative: neg,
                });
                pair_grads.push((g_pos * weight, g_neg * weight));
            }
            for (triplet, &(g_pos, g_neg)) in batch.triplets.iter().zip(&pair_grads) {
                accum_factorization_pair(
                    params,
                    &mut grads,
                    triplet.context,
                    triplet.positive,
                    triplet.negative,
                    g_pos,
                    g_neg,
                    &mut scratch,
                );
            }
            adam_step(&mut state, params, &grads, cfg.learning_rate, cfg.l2)?;
        }

        let record = EpochRecord {
            epoch,
            mean_loss: epoch_loss / positives.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(sink) = progress.as_deref_mut() {
            writeln!(sink, "{}", serde_json::to_string(&record)?)?;
        }
        records.push(record);
    }
    debug_assert!(params.items().padding_row_is_zero());
    Ok(records)
}

// ---------------------------------------------------------------------------
// Sequence training
// ---------------------------------------------------------------------------

/// Loss and gradients (unit scale, summed over prediction steps) for one
/// padded sequence with pinned negatives: `negatives[i]` pairs with the
/// i-th real prediction step. Exposed for gradient verification.
pub fn sequence_loss_grads(
    params: &Params,
    seq: &[u32],
    negatives: &[u32],
    kind: LossKind,
    grads: &mut GradStore,
) -> Result<f64> {
    let lstm = params.as_lstm()?;
    let dims = lstm.dims;
    let first_real = seq
        .iter()
        .position(|&i| i != 0)
        .ok_or_else(|| Error::Contract("sequence has no real items".into()))?;
    let n_steps = seq.len() - first_real - 1;
    if negatives.len() != n_steps {
        return Err(Error::Shape(format!(
            "{} negatives for {} prediction steps",
            negatives.len(),
            n_steps
        )));
    }
    let cache = forward_cache(lstm, seq)?;
    let mut upstream = Mat::zeros(seq.len(), dims.k);
    let mut scratch = Scratch::new(dims.m, dims.k);
    let mut total = 0.0;
    for (i, t) in (first_real..seq.len() - 1).enumerate() {
        let pos = seq[t + 1];
        let neg = negatives[i];
        let h_t = cache.h.row(t);
        let (r_pos, r_neg) = if let Some(heads) = &lstm.heads {
            crate::models::apply_projections(h_t, heads, &mut scratch.tastes, &mut scratch.attns);
            let mut score = |j: u32| {
                mixture_parts_into(
                    &scratch.tastes,
                    &scratch.attns,
                    lstm.items.embedding(j),
                    &mut scratch.weights,
                    &mut scratch.scores,
                );
                dot(&scratch.weights, &scratch.scores) + lstm.items.bias(j)
            };
            (score(pos), score(neg))
        } else {
            let score = |j: u32| dot(h_t, lstm.items.embedding(j)) + lstm.items.bias(j);
            (score(pos), score(neg))
        };
        let (l, g_pos, g_neg) = match kind {
            LossKind::Bpr => {
                let (gp, gn) = loss::bpr_grads(r_pos, r_neg);
                (loss::bpr_loss(r_pos, r_neg), gp, gn)
            }
            LossKind::AdaptiveHinge => {
                let (gp, gn) = loss::hinge_grads(r_pos, r_neg);
                (loss::hinge_loss(r_pos, r_neg), gp, gn)
            }
        };
        total += l;
        accum_sequence_step(
            lstm,
            &cache,
            t,
            pos,
            g_pos,
            &mut upstream,
            grads,
            &mut scratch,
        );
        accum_sequence_step(
            lstm,
            &cache,
            t,
            neg,
            g_neg,
            &mut upstream,
            grads,
            &mut scratch,
        );
    }
    lstm_backward(lstm, &cache, &upstream, grads)?;
    Ok(total)
}

/// Output-side gradients of `g * score(h_t, item)`: item embedding and bias,
/// projection heads for the mixture variant, and the dL/dh_t contribution
/// into `upstream`.
#[allow(clippy::too_many_arguments)]
fn accum_sequence_step(
    lstm: &LstmParams,
    cache: &crate::models::sequence::ForwardCache,
    t: usize,
    item: u32,
    g: f64,
    upstream: &mut Mat,
    grads: &mut GradStore,
    scratch: &mut Scratch,
) {
    if g == 0.0 {
        return;
    }
    let h_t = cache.h.row(t);
    match &lstm.heads {
        None => {
            // baseline: r = h_t . e_j + b_j
            let e = lstm.items.embedding(item);
            for (u, &ev) in upstream.row_mut(t).iter_mut().zip(e) {
                *u += g * ev;
            }
            grads.add_scaled_row(LstmParams::ARR_ITEM_EMB, item as usize, g, h_t);
            grads.add_scalar(LstmParams::ARR_ITEM_BIAS, item as usize, 0, g);
        }
        Some(heads) => {
            // mixture: scratch.tastes/attns must already hold h_t's projection
            scratch.d_context.iter_mut().for_each(|v| *v = 0.0);
            accum_projected(heads, LSTM_HEADS, &lstm.items, grads, h_t, item, g, scratch);
            for (u, &d) in upstream.row_mut(t).iter_mut().zip(&scratch.d_context) {
                *u += d;
            }
        }
    }
}

/// Train a sequence model: each real step t predicts the item at t + 1 as
/// its positive, losses are averaged over real steps, and one ADAM step is
/// taken per mini-batch of sequences.
pub fn train_sequence(
    params: &mut Params,
    seqs: &SequenceSet,
    cfg: &HyperConfig,
    mut progress: Option<&mut dyn Write>,
) -> Result<Vec<EpochRecord>> {
    let cfg = cfg.normalized();
    cfg.validate()?;
    if !cfg.variant.is_sequence() {
        return Err(Error::Config(format!(
            "train_sequence cannot train variant {}",
            cfg.variant
        )));
    }
    if params.variant() != cfg.variant {
        return Err(Error::Config(format!(
            "params are {}, config wants {}",
            params.variant(),
            cfg.variant
        )));
    }
    if seqs.n_rows() == 0 {
        return Err(Error::EmptyDataset("no training sequences".into()));
    }
    for row in 0..seqs.n_rows() {
        if seqs.first_real(row) + 2 > seqs.max_len {
            return Err(Error::Contract(format!(
                "sequence row {row} has fewer than 2 real items"
            )));
        }
    }
    let dims = *params.dims();
    let n_items = dims.n_items;

    let mut rng = seeding::rng(cfg.seed, STREAM_TRAIN);
    let mut rows: Vec<usize> = (0..seqs.n_rows()).collect();
    let mut grads = GradStore::zeros_like(params);
    let mut state = AdamState::new(params);
    let mut scratch = Scratch::new(dims.m, dims.k);
    let mut upstream = Mat::zeros(seqs.max_len, dims.k);
    let mut records = Vec::with_capacity(cfg.n_epochs);

    for epoch in 0..cfg.n_epochs {
        let start = Instant::now();
        rows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;

        for chunk in rows.chunks(cfg.batch_size) {
            grads.clear();
            let total_steps: usize = chunk
                .iter()
                .map(|&r| seqs.max_len - seqs.first_real(r) - 1)
                .sum();
            if total_steps == 0 {
                continue;
            }
            let weight = 1.0 / total_steps as f64;

            for &row in chunk {
                let seq = seqs.row(row);
                let first_real = seqs.first_real(row);
                let lstm = params.as_lstm()?;
                let cache = forward_cache(lstm, seq)?;
                upstream.fill(0.0);

                for t in first_real..seq.len() - 1 {
                    let pos = seq[t + 1];
                    let h_t = cache.h.row(t);
                    let (neg, l, g_pos, g_neg) = if let Some(heads) = &lstm.heads {
                        crate::models::apply_projections(
                            h_t,
                            heads,
                            &mut scratch.tastes,
                            &mut scratch.attns,
                        );
                        let (tastes, attns) = (&scratch.tastes, &scratch.attns);
                        let mut w = vec![0.0; dims.m];
                        let mut s = vec![0.0; dims.m];
                        let mut score = |j: u32| {
                            mixture_parts_into(
                                tastes,
                                attns,
                                lstm.items.embedding(j),
                                &mut w,
                                &mut s,
                            );
                            dot(&w, &s) + lstm.items.bias(j)
                        };
                        let r_pos = score(pos);
                        sample_negative(
                            &mut rng,
                            n_items,
                            score,
                            r_pos,
                            cfg.loss,
                            cfg.max_neg_attempts,
                        )
                    } else {
                        let score = |j: u32| dot(h_t, lstm.items.embedding(j)) + lstm.items.bias(j);
                        let r_pos = score(pos);
                        sample_negative(
                            &mut rng,
                            n_items,
                            score,
                            r_pos,
                            cfg.loss,
                            cfg.max_neg_attempts,
                        )
                    };
                    epoch_loss += l;
                    epoch_steps += 1;
                    accum_sequence_step(
                        lstm,
                        &cache,
                        t,
                        pos,
                        g_pos * weight,
                        &mut upstream,
                        &mut grads,
                        &mut scratch,
                    );
                    accum_sequence_step(
                        lstm,
                        &cache,
                        t,
                        neg,
                        g_neg * weight,
                        &mut upstream,
                        &mut grads,
                        &mut scratch,
                    );
                }
                lstm_backward(lstm, &cache, &upstream, &mut grads)?;
            }
            adam_step(&mut state, params, &grads, cfg.learning_rate, cfg.l2)?;
        }

        let record = EpochRecord {
            epoch,
            mean_loss: epoch_loss / epoch_steps.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(sink) = progress.as_deref_mut() {
            writeln!(sink, "{}", serde_json::to_string(&record)?)?;
        }
        records.push(record);
    }
    debug_assert!(params.items().padding_row_is_zero());
    Ok(records)
}
