//! Sequence-family models: a single-layer LSTM over item-id sequences whose
//! hidden state either scores items directly (baseline) or is projected into
//! m taste and m attention vectors per step (mixture). Input and output item
//! embeddings are tied, and the hidden size equals the embedding size k.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{GradStore, ParamArrays};
use crate::linalg::{axpy, dot, mat_vec_add, sigmoid, Mat};

use super::{check_item, mixture_score_from_state, ItemParams, ModelDims, ProjectionHeads};

/// One LSTM gate: input weights, recurrent weights, bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// k x k, applied to the embedded input item.
    pub w_input: Mat,
    /// k x k, applied to the previous hidden state.
    pub w_recurrent: Mat,
    /// 1 x k.
    pub bias: Mat,
}

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

/// LSTM parameters; `heads` present for the mixture variant only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub dims: ModelDims,
    /// Indexed by the `GATE_*` constants.
    pub gates: [GateParams; 4],
    pub items: ItemParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<ProjectionHeads>,
}

impl LstmParams {
    // parameter array order: [w_input, w_recurrent, bias] per gate, then items, then heads
    pub const fn arr_w_input(gate: usize) -> usize {
        gate * 3
    }
    pub const fn arr_w_recurrent(gate: usize) -> usize {
        gate * 3 + 1
    }
    pub const fn arr_bias(gate: usize) -> usize {
        gate * 3 + 2
    }
    pub const ARR_ITEM_EMB: usize = 12;
    pub const ARR_ITEM_BIAS: usize = 13;
    pub const ARR_TASTE_W: usize = 14;
    pub const ARR_TASTE_B: usize = 15;
    pub const ARR_ATTN_W: usize = 16;
    pub const ARR_ATTN_B: usize = 17;

    pub(crate) fn init(
        dims: &ModelDims,
        heads: Option<ProjectionHeads>,
        rng: &mut impl Rng,
    ) -> Self {
        let k = dims.k;
        let scale = 1.0 / (k as f64).sqrt();
        let mut gate = || {
            let mut w_input = Mat::zeros(k, k);
            let mut w_recurrent = Mat::zeros(k, k);
            for m in [&mut w_input, &mut w_recurrent] {
                for v in &mut m.data {
                    let n: f64 = rng.sample(rand_distr::StandardNormal);
                    *v = n * scale;
                }
            }
            GateParams {
                w_input,
                w_recurrent,
                bias: Mat::zeros(1, k),
            }
        };
        let mut gates = [gate(), gate(), gate(), gate()];
        // forget-gate bias starts at 1 so early cell state survives long
        // enough for gradients to reach it
        gates[GATE_FORGET].bias.row_mut(0).fill(1.0);
        LstmParams {
            dims: *dims,
            gates,
            items: ItemParams::init(dims.n_items, dims.k, rng),
            heads,
        }
    }

    pub fn is_mixture(&self) -> bool {
        self.heads.is_some()
    }
}

impl ParamArrays for LstmParams {
    fn arrays(&self) -> Vec<&Mat> {
        let mut arrays = Vec::with_capacity(18);
        for g in &self.gates {
            arrays.push(&g.w_input);
            arrays.push(&g.w_recurrent);
            arrays.push(&g.bias);
        }
        arrays.push(&self.items.embeddings);
        arrays.push(&self.items.biases);
        if let Some(h) = &self.heads {
            arrays.push(&h.taste_weights);
            arrays.push(&h.taste_biases);
            arrays.push(&h.attention_weights);
            arrays.push(&h.attention_biases);
        }
        arrays
    }

    fn arrays_mut(&mut self) -> Vec<&mut Mat> {
        let mut arrays: Vec<&mut Mat> = Vec::with_capacity(18);
        for g in &mut self.gates {
            arrays.push(&mut g.w_input);
            arrays.push(&mut g.w_recurrent);
            arrays.push(&mut g.bias);
        }
        arrays.push(&mut self.items.embeddings);
        arrays.push(&mut self.items.biases);
        if let Some(h) = &mut self.heads {
            arrays.push(&mut h.taste_weights);
            arrays.push(&mut h.taste_biases);
            arrays.push(&mut h.attention_weights);
            arrays.push(&mut h.attention_biases);
        }
        arrays
    }
}

/// Hidden and cell states for a length-T sequence; rows at (left) padding
/// positions are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub h: Mat,
    pub c: Mat,
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub seq: Vec<u32>,
    pub h: Mat,
    pub c: Mat,
    pub tanh_c: Mat,
    pub gate_i: Mat,
    pub gate_f: Mat,
    pub gate_g: Mat,
    pub gate_o: Mat,
}

impl ForwardCache {
    pub fn states(&self) -> HiddenStates {
        HiddenStates {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

/// out = bias + x W_input + h_prev W_recurrent
#[inline]
fn gate_preactivation(gate: &GateParams, x: &[f64], h_prev: &[f64], out: &mut [f64]) {
    out.copy_from_slice(gate.bias.row(0));
    for (r, &xr) in x.iter().enumerate() {
        if xr != 0.0 {
            axpy(xr, gate.w_input.row(r), out);
        }
    }
    for (r, &hr) in h_prev.iter().enumerate() {
        if hr != 0.0 {
            axpy(hr, gate.w_recurrent.row(r), out);
        }
    }
}

/// Run the LSTM over a (left-padded) item sequence, keeping all activations.
/// Steps with item id 0 skip the state update: the previous hidden and cell
/// states are carried through unchanged.
pub fn forward_cache(params: &LstmParams, seq: &[u32]) -> Result<ForwardCache> {
    let k = params.dims.k;
    let t_len = seq.len();
    for &item in seq {
        if item as usize > params.dims.n_items {
            return Err(Error::Index(format!(
                "item {item} outside [0, {}]",
                params.dims.n_items
            )));
        }
    }

    let mut cache = ForwardCache {
        seq: seq.to_vec(),
        h: Mat::zeros(t_len, k),
        c: Mat::zeros(t_len, k),
        tanh_c: Mat::zeros(t_len, k),
        gate_i: Mat::zeros(t_len, k),
        gate_f: Mat::zeros(t_len, k),
        gate_g: Mat::zeros(t_len, k),
        gate_o: Mat::zeros(t_len, k),
    };

    let mut h_prev = vec![0.0; k];
    let mut c_prev = vec![0.0; k];
    let mut pre = vec![0.0; k];

    for (t, &item) in seq.iter().enumerate() {
        if item == 0 {
            // padding: carry state forward untouched
            cache.h.row_mut(t).copy_from_slice(&h_prev);
            cache.c.row_mut(t).copy_from_slice(&c_prev);
            for (dst, &c) in cache.tanh_c.row_mut(t).iter_mut().zip(&c_prev) {
                *dst = c.tanh();
            }
            continue;
        }
        let x = params.items.embeddings.row(item as usize);

        gate_preactivation(&params.gates[GATE_INPUT], x, &h_prev, &mut pre);
        for (dst, &p) in cache.gate_i.row_mut(t).iter_mut().zip(&pre) {
            *dst = sigmoid(p);
        }
        gate_preactivation(&params.gates[GATE_FORGET], x, &h_prev, &mut pre);
        for (dst, &p) in cache.gate_f.row_mut(t).iter_mut().zip(&pre) {
            *dst = sigmoid(p);
        }
        gate_preactivation(&params.gates[GATE_CELL], x, &h_prev, &mut pre);
        for (dst, &p) in cache.gate_g.row_mut(t).iter_mut().zip(&pre) {
            *dst = p.tanh();
        }
        gate_preactivation(&params.gates[GATE_OUTPUT], x, &h_prev, &mut pre);
        for (dst, &p) in cache.gate_o.row_mut(t).iter_mut().zip(&pre) {
            *dst = sigmoid(p);
        }

        for d in 0..k {
            let c = cache.gate_f.get(t, d) * c_prev[d]
                + cache.gate_i.get(t, d) * cache.gate_g.get(t, d);
            let tanh_c = c.tanh();
            cache.c.set(t, d, c);
            cache.tanh_c.set(t, d, tanh_c);
            cache.h.set(t, d, cache.gate_o.get(t, d) * tanh_c);
        }
        h_prev.copy_from_slice(cache.h.row(t));
        c_prev.copy_from_slice(cache.c.row(t));
    }

    Ok(cache)
}

/// Standard LSTM recurrence over an item sequence; returns the per-step
/// hidden and cell states.
pub fn lstm_forward(params: &LstmParams, seq: &[u32]) -> Result<HiddenStates> {
    let cache = forward_cache(params, seq)?;
    Ok(HiddenStates {
        h: cache.h,
        c: cache.c,
    })
}

fn check_step(states: &HiddenStates, seq: &[u32], t: usize) -> Result<()> {
    if t >= seq.len() || states.h.rows != seq.len() {
        return Err(Error::Contract(format!(
            "step {t} outside the {}-step sequence",
            seq.len()
        )));
    }
    if seq[t] == 0 {
        return Err(Error::Contract(format!("step {t} is padding")));
    }
    Ok(())
}

/// Baseline next-item score from the hidden state at step `t`:
/// `h_t . e_j + b_j`, the model's prediction for the item at step t + 1.
pub fn score_next_baseline(
    params: &LstmParams,
    states: &HiddenStates,
    seq: &[u32],
    t: usize,
    item: u32,
) -> Result<f64> {
    check_step(states, seq, t)?;
    check_item(&params.dims, item)?;
    Ok(dot(states.h.row(t), params.items.embedding(item)) + params.items.bias(item))
}

/// Mixture next-item score: the hidden state at step `t` is projected into
/// m taste and m attention vectors, then scored with the mixture rule. The
/// LSTM runs once per sequence; every step reuses the same forward pass.
pub fn score_next_mixture(
    params: &LstmParams,
    states: &HiddenStates,
    seq: &[u32],
    t: usize,
    item: u32,
) -> Result<f64> {
    check_step(states, seq, t)?;
    check_item(&params.dims, item)?;
    let heads = params
        .heads
        .as_ref()
        .ok_or_else(|| Error::Contract("mixture scoring needs projection heads".into()))?;
    Ok(mixture_score_from_state(
        states.h.row(t),
        heads,
        &params.items,
        item,
    ))
}

/// Scores for the whole catalog from one hidden state; element `j - 1` is
/// item j's score. Mixture params project the state once and reuse it.
pub fn score_all_from_state(params: &LstmParams, state: &[f64]) -> Vec<f64> {
    let n_items = params.dims.n_items;
    match &params.heads {
        None => (1..=n_items as u32)
            .map(|j| dot(state, params.items.embedding(j)) + params.items.bias(j))
            .collect(),
        Some(heads) => {
            let (m, k) = (heads.n_components(), heads.dim());
            let mut tastes = vec![0.0; m * k];
            let mut attentions = vec![0.0; m * k];
            super::apply_projections(state, heads, &mut tastes, &mut attentions);
            let mut weights = vec![0.0; m];
            let mut scores = vec![0.0; m];
            (1..=n_items as u32)
                .map(|j| {
                    super::factorization::mixture_parts_into(
                        &tastes,
                        &attentions,
                        params.items.embedding(j),
                        &mut weights,
                        &mut scores,
                    );
                    dot(&weights, &scores) + params.items.bias(j)
                })
                .collect()
        }
    }
}

/// Exact reverse-mode gradients of a loss whose partials with respect to the
/// hidden states are given row-wise in `upstream_h` (zeros elsewhere).
/// Accumulates into `grads`, which must be shaped like `params.arrays()`.
/// Tied item embeddings receive their input-side gradient here; output-side
/// (scoring) gradients are the caller's responsibility.
pub fn lstm_backward(
    params: &LstmParams,
    cache: &ForwardCache,
    upstream_h: &Mat,
    grads: &mut GradStore,
) -> Result<()> {
    let k = params.dims.k;
    let t_len = cache.seq.len();
    if upstream_h.rows != t_len || upstream_h.cols != k {
        return Err(Error::Shape(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            upstream_h.rows, upstream_h.cols, t_len, k
        )));
    }
    if cache.h.rows != t_len {
        return Err(Error::Contract(
            "forward cache does not match sequence".into(),
        ));
    }
    if grads.n_arrays() < 14
        || grads.shape(LstmParams::ARR_ITEM_EMB) != (params.items.embeddings.rows, k)
    {
        return Err(Error::Shape(
            "gradient store does not match LSTM parameters".into(),
        ));
    }

    let zeros = vec![0.0; k];
    let mut dh = vec![0.0; k];
    let mut dc = vec![0.0; k];
    let mut dct = vec![0.0; k];
    let mut dz = [vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    let mut dx = vec![0.0; k];
    let mut dh_prev = vec![0.0; k];

    for t in (0..t_len).rev() {
        for (d, &u) in dh.iter_mut().zip(upstream_h.row(t)) {
            *d += u;
        }
        let item = cache.seq[t];
        if item == 0 {
            // state was carried through: dh and dc flow to t-1 unchanged
            continue;
        }

        let (i, f, g, o) = (
            cache.gate_i.row(t),
            cache.gate_f.row(t),
            cache.gate_g.row(t),
            cache.gate_o.row(t),
        );
        let tanh_c = cache.tanh_c.row(t);
        let c_prev = if t > 0 {
            cache.c.row(t - 1)
        } else {
            &zeros[..]
        };
        let h_prev = if t > 0 {
            cache.h.row(t - 1)
        } else {
            &zeros[..]
        };

        for d in 0..k {
            // dL/dc_t via h_t = o * tanh(c_t), plus the carry from t+1
            dct[d] = dh[d] * o[d] * (1.0 - tanh_c[d] * tanh_c[d]) + dc[d];
            let di = dct[d] * g[d];
            let df = dct[d] * c_prev[d];
            let dg = dct[d] * i[d];
            let do_ = dh[d] * tanh_c[d];
            // through the activations
            dz[GATE_INPUT][d] = di * i[d] * (1.0 - i[d]);
            dz[GATE_FORGET][d] = df * f[d] * (1.0 - f[d]);
            dz[GATE_CELL][d] = dg * (1.0 - g[d] * g[d]);
            dz[GATE_OUTPUT][d] = do_ * o[d] * (1.0 - o[d]);
            // carry into c_{t-1}
            dc[d] = dct[d] * f[d];
        }

        let x = params.items.embeddings.row(item as usize);
        dx.iter_mut().for_each(|v| *v = 0.0);
        dh_prev.iter_mut().for_each(|v| *v = 0.0);
        for gate in 0..4 {
            grads.add_outer(LstmParams::arr_w_input(gate), 1.0, x, &dz[gate]);
            grads.add_outer(LstmParams::arr_w_recurrent(gate), 1.0, h_prev, &dz[gate]);
            grads.add_scaled_row(LstmParams::arr_bias(gate), 0, 1.0, &dz[gate]);
            mat_vec_add(&params.gates[gate].w_input, &dz[gate], &mut dx);
            mat_vec_add(&params.gates[gate].w_recurrent, &dz[gate], &mut dh_prev);
        }
        grads.add_scaled_row(LstmParams::ARR_ITEM_EMB, item as usize, 1.0, &dx);
        dh.copy_from_slice(&dh_prev);
    }
    Ok(())
}
