//! Factorization-family scoring: the single-vector baseline (MF), the
//! embedding mixture (EM-F) where each user owns m taste and m attention
//! vectors, and the projection mixture (PM-F) where both are linear
//! projections of a single user vector through shared heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::ParamArrays;
use crate::linalg::{dot, Mat};

use super::{apply_projections, check_ids, ItemParams, ModelDims, ProjectionHeads};

/// Baseline: one latent vector per user, score `z_i . e_j + b_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfParams {
    pub dims: ModelDims,
    /// n_users x k.
    pub user_embeddings: Mat,
    pub items: ItemParams,
}

/// Embedding mixture: per-user taste and attention matrices embedded directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmfParams {
    pub dims: ModelDims,
    /// n_users x (m * k); row u holds user u's m stacked taste vectors.
    pub user_tastes: Mat,
    /// n_users x (m * k); the paired attention vectors.
    pub user_attentions: Mat,
    pub items: ItemParams,
}

/// Projection mixture: a single user vector plus shared projection heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfParams {
    pub dims: ModelDims,
    /// n_users x k.
    pub user_embeddings: Mat,
    pub heads: ProjectionHeads,
    pub items: ItemParams,
}

impl MfParams {
    pub const ARR_USER: usize = 0;
    pub const ARR_ITEM_EMB: usize = 1;
    pub const ARR_ITEM_BIAS: usize = 2;

    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        check_ids(&self.dims, user, item)?;
        Ok(dot(
            self.user_embeddings.row(user as usize),
            self.items.embedding(item),
        ) + self.items.bias(item))
    }

    pub fn score_all_items(&self, user: u32) -> Result<Vec<f64>> {
        check_ids(&self.dims, user, 1)?;
        let z = self.user_embeddings.row(user as usize);
        Ok((1..=self.dims.n_items as u32)
            .map(|j| dot(z, self.items.embedding(j)) + self.items.bias(j))
            .collect())
    }
}

impl ParamArrays for MfParams {
    fn arrays(&self) -> Vec<&Mat> {
        vec![
            &self.user_embeddings,
            &self.items.embeddings,
            &self.items.biases,
        ]
    }
    fn arrays_mut(&mut self) -> Vec<&mut Mat> {
        vec![
            &mut self.user_embeddings,
            &mut self.items.embeddings,
            &mut self.items.biases,
        ]
    }
}

impl EmfParams {
    pub const ARR_TASTES: usize = 0;
    pub const ARR_ATTNS: usize = 1;
    pub const ARR_ITEM_EMB: usize = 2;
    pub const ARR_ITEM_BIAS: usize = 3;

    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        check_ids(&self.dims, user, item)?;
        let u = user as usize;
        Ok(mixture_value(
            self.user_tastes.row(u),
            self.user_attentions.row(u),
            self.items.embedding(item),
        ) + self.items.bias(item))
    }

    pub fn score_all_items(&self, user: u32) -> Result<Vec<f64>> {
        check_ids(&self.dims, user, 1)?;
        let u = user as usize;
        let (tastes, attentions) = (self.user_tastes.row(u), self.user_attentions.row(u));
        let mut weights = vec![0.0; self.dims.m];
        let mut scores = vec![0.0; self.dims.m];
        Ok((1..=self.dims.n_items as u32)
            .map(|j| {
                mixture_parts_into(
                    tastes,
                    attentions,
                    self.items.embedding(j),
                    &mut weights,
                    &mut scores,
                );
                dot(&weights, &scores) + self.items.bias(j)
            })
            .collect())
    }
}

impl ParamArrays for EmfParams {
    fn arrays(&self) -> Vec<&Mat> {
        vec![
            &self.user_tastes,
            &self.user_attentions,
            &self.items.embeddings,
            &self.items.biases,
        ]
    }
    fn arrays_mut(&mut self) -> Vec<&mut Mat> {
        vec![
            &mut self.user_tastes,
            &mut self.user_attentions,
            &mut self.items.embeddings,
            &mut self.items.biases,
        ]
    }
}

impl PmfParams {
    pub const ARR_USER: usize = 0;
    pub const ARR_TASTE_W: usize = 1;
    pub const ARR_TASTE_B: usize = 2;
    pub const ARR_ATTN_W: usize = 3;
    pub const ARR_ATTN_B: usize = 4;
    pub const ARR_ITEM_EMB: usize = 5;
    pub const ARR_ITEM_BIAS: usize = 6;

    /// Project user `user`'s vector into its m taste and attention vectors.
    pub fn user_mixture(&self, user: u32) -> (Vec<f64>, Vec<f64>) {
        let (m, k) = (self.dims.m, self.dims.k);
        let mut tastes = vec![0.0; m * k];
        let mut attentions = vec![0.0; m * k];
        apply_projections(
            self.user_embeddings.row(user as usize),
            &self.heads,
            &mut tastes,
            &mut attentions,
        );
        (tastes, attentions)
    }

    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        check_ids(&self.dims, user, item)?;
        let (tastes, attentions) = self.user_mixture(user);
        Ok(mixture_value(&tastes, &attentions, self.items.embedding(item)) + self.items.bias(item))
    }

    pub fn score_all_items(&self, user: u32) -> Result<Vec<f64>> {
        check_ids(&self.dims, user, 1)?;
        let (tastes, attentions) = self.user_mixture(user);
        let mut weights = vec![0.0; self.dims.m];
        let mut scores = vec![0.0; self.dims.m];
        Ok((1..=self.dims.n_items as u32)
            .map(|j| {
                mixture_parts_into(
                    &tastes,
                    &attentions,
                    self.items.embedding(j),
                    &mut weights,
                    &mut scores,
                );
                dot(&weights, &scores) + self.items.bias(j)
            })
            .collect())
    }
}

impl ParamArrays for PmfParams {
    fn arrays(&self) -> Vec<&Mat> {
        vec![
            &self.user_embeddings,
            &self.heads.taste_weights,
            &self.heads.taste_biases,
            &self.heads.attention_weights,
            &self.heads.attention_biases,
            &self.items.embeddings,
            &self.items.biases,
        ]
    }
    fn arrays_mut(&mut self) -> Vec<&mut Mat> {
        vec![
            &mut self.user_embeddings,
            &mut self.heads.taste_weights,
            &mut self.heads.taste_biases,
            &mut self.heads.attention_weights,
            &mut self.heads.attention_biases,
            &mut self.items.embeddings,
            &mut self.items.biases,
        ]
    }
}

/// Allocation-free core of the mixture rule: writes the softmax weights
/// `sigma(A_i e_j)` and the per-component taste scores `U_i e_j` into the
/// provided buffers (length m); the score is `dot(weights, scores)` plus the
/// item bias.
#[inline]
pub(crate) fn mixture_parts_into(
    tastes: &[f64],
    attentions: &[f64],
    item_embedding: &[f64],
    weights: &mut [f64],
    scores: &mut [f64],
) {
    let k = item_embedding.len();
    debug_assert!(k > 0 && tastes.len() % k == 0);
    debug_assert_eq!(tastes.len(), attentions.len());
    let m = tastes.len() / k;
    debug_assert_eq!(weights.len(), m);
    debug_assert_eq!(scores.len(), m);
    for h in 0..m {
        scores[h] = dot(&tastes[h * k..(h + 1) * k], item_embedding);
        weights[h] = dot(&attentions[h * k..(h + 1) * k], item_embedding);
    }
    crate::linalg::softmax_inplace(weights);
}

/// Bias-free mixture score with scratch buffers allocated internally.
pub(crate) fn mixture_value(tastes: &[f64], attentions: &[f64], item_embedding: &[f64]) -> f64 {
    let m = tastes.len() / item_embedding.len();
    let mut weights = vec![0.0; m];
    let mut scores = vec![0.0; m];
    mixture_parts_into(
        tastes,
        attentions,
        item_embedding,
        &mut weights,
        &mut scores,
    );
    dot(&weights, &scores)
}

/// Mixture scoring rule: softmax of the attention scores weighs the per-taste
/// scores, plus the item bias. `tastes` and `attentions` are m stacked
/// k-vectors; the softmax is computed with max-subtraction.
pub fn score_mixture(
    tastes: &[f64],
    attentions: &[f64],
    item_embedding: &[f64],
    item_bias: f64,
) -> Result<f64> {
    let k = item_embedding.len();
    if k == 0 || tastes.len() != attentions.len() || tastes.len() % k != 0 || tastes.is_empty() {
        return Err(Error::Shape(format!(
            "mixture shapes: tastes {}, attentions {}, item {}",
            tastes.len(),
            attentions.len(),
            k
        )));
    }
    Ok(mixture_value(tastes, attentions, item_embedding) + item_bias)
}

/// The softmax mixture probabilities `sigma(A_i e_j)` an item induces over
/// the m taste components; sums to 1. Useful for inspecting which taste a
/// trained model routes an item to.
pub fn mixture_weights(attentions: &[f64], item_embedding: &[f64]) -> Result<Vec<f64>> {
    let k = item_embedding.len();
    if k == 0 || attentions.is_empty() || attentions.len() % k != 0 {
        return Err(Error::Shape(format!(
            "mixture shapes: attentions {}, item {}",
            attentions.len(),
            k
        )));
    }
    let m = attentions.len() / k;
    let mut weights = vec![0.0; m];
    for h in 0..m {
        weights[h] = dot(&attentions[h * k..(h + 1) * k], item_embedding);
    }
    crate::linalg::softmax_inplace(&mut weights);
    Ok(weights)
}

/// The PM-F projection: row h of the result pair is `z W[h] + B[h]` for the
/// taste and attention heads respectively.
pub fn project_tastes(
    user_embedding: &[f64],
    heads: &ProjectionHeads,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if user_embedding.len() != heads.dim() {
        return Err(Error::Shape(format!(
            "projection input has length {}, heads expect {}",
            user_embedding.len(),
            heads.dim()
        )));
    }
    let (m, k) = (heads.n_components(), heads.dim());
    let mut tastes = vec![0.0; m * k];
    let mut attentions = vec![0.0; m * k];
    apply_projections(user_embedding, heads, &mut tastes, &mut attentions);
    Ok((tastes, attentions))
}
