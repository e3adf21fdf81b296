//! Mean reciprocal rank under the two evaluation protocols: held-out
//! interactions for factorization models, the held-out final sequence
//! element for sequence models.

use serde::{Deserialize, Serialize};

use crate::data::{InteractionSet, SequenceSet};
use crate::error::{Error, Result};
use crate::models::sequence::{lstm_forward, score_all_from_state};
use crate::models::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Factorization,
    Sequence,
}

/// Evaluation conventions. The defaults mirror the experimental setup:
/// known positives are excluded from the candidate ranking, and the mean is
/// taken per test edge rather than per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Exclude the user's training items (factorization) or the earlier
    /// sequence items (sequence) from the ranking.
    pub exclude_known: bool,
    /// Average reciprocal ranks per user first, then across users.
    pub per_user: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exclude_known: true,
            per_user: false,
        }
    }
}

/// MRR plus the retained per-unit reciprocal ranks (one per test edge, per
/// user, or per sequence row depending on the protocol and options).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mrr: f64,
    pub n_evaluated: usize,
    pub reciprocal_ranks: Vec<f64>,
    pub protocol: Protocol,
}

impl EvalResult {
    fn from_ranks(reciprocal_ranks: Vec<f64>, protocol: Protocol) -> Self {
        let n = reciprocal_ranks.len();
        let mrr = reciprocal_ranks.iter().sum::<f64>() / n as f64;
        EvalResult {
            mrr,
            n_evaluated: n,
            reciprocal_ranks,
            protocol,
        }
    }

    /// Single-line JSON: `{"mrr": ..., "n": ..., "protocol": ...}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "mrr": self.mrr,
            "n": self.n_evaluated,
            "protocol": self.protocol,
        })
        .to_string()
    }
}

/// Build an exclusion mask over the item id space (index = item id).
pub fn exclusion_mask(n_items: usize, items: impl IntoIterator<Item = u32>) -> Vec<bool> {
    let mut mask = vec![false; n_items + 1];
    for item in items {
        mask[item as usize] = true;
    }
    mask
}

/// Reciprocal rank of `target` within `scores` (element j - 1 scores item j),
/// ignoring excluded items. Ties are resolved by expected rank under random
/// tie-breaking: rank = 1 + #strictly-better + 0.5 * #equal-others.
pub fn reciprocal_rank(scores: &[f64], target: u32, excluded: &[bool]) -> Result<f64> {
    if excluded.len() != scores.len() + 1 {
        return Err(Error::Shape(format!(
            "exclusion mask over {} ids for {} items",
            excluded.len(),
            scores.len()
        )));
    }
    if target == 0 || target as usize > scores.len() {
        return Err(Error::Index(format!("target {target} outside catalog")));
    }
    if excluded[target as usize] {
        return Err(Error::Contract(format!("target {target} is excluded")));
    }
    let target_score = scores[target as usize - 1];
    let mut better = 0usize;
    let mut tied = 0usize;
    for (idx, &s) in scores.iter().enumerate() {
        let item = idx + 1;
        if item == target as usize || excluded[item] {
            continue;
        }
        if s > target_score {
            better += 1;
        } else if s == target_score {
            tied += 1;
        }
    }
    let rank = 1.0 + better as f64 + 0.5 * tied as f64;
    Ok(1.0 / rank)
}

/// Rank every test edge's item against the full catalog using the trained
/// user representation, excluding that user's training items. Users missing
/// from train are scored with their initialized representation (partial
/// cold-start).
pub fn evaluate_factorization(
    params: &Params,
    test: &InteractionSet,
    train: &InteractionSet,
    options: &EvalOptions,
) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("empty test set".into()));
    }
    let n_items = params.dims().n_items;
    let train_items = train.items_by_user();

    // group test edges per user so the catalog is scored once per user
    let mut per_user_targets: Vec<Vec<u32>> = vec![Vec::new(); test.n_users];
    for it in &test.interactions {
        per_user_targets[it.user as usize].push(it.item);
    }

    let mut edge_ranks = Vec::with_capacity(test.len());
    let mut user_means = Vec::new();
    for (user, targets) in per_user_targets.iter().enumerate() {
        if targets.is_empty() {
            continue;
        }
        let scores = params.score_all_items(user as u32)?;
        let mask = if options.exclude_known {
            exclusion_mask(
                n_items,
                train_items.get(user).into_iter().flatten().copied(),
            )
        } else {
            vec![false; n_items + 1]
        };
        let mut sum = 0.0;
        for &target in targets {
            let rr = reciprocal_rank(&scores, target, &mask)?;
            edge_ranks.push(rr);
            sum += rr;
        }
        user_means.push(sum / targets.len() as f64);
    }

    Ok(if options.per_user {
        EvalResult::from_ranks(user_means, Protocol::Factorization)
    } else {
        EvalResult::from_ranks(edge_ranks, Protocol::Factorization)
    })
}

/// For each row, the items before the last real one form the input; the
/// model ranks the catalog from the final input state and the held-out last
/// item is the target, with the earlier items excluded.
pub fn evaluate_sequence(
    params: &Params,
    test: &SequenceSet,
    options: &EvalOptions,
) -> Result<EvalResult> {
    if test.n_rows() == 0 {
        return Err(Error::EmptyDataset("empty test set".into()));
    }
    let lstm = params.as_lstm()?;
    let n_items = lstm.dims.n_items;

    let mut ranks = Vec::with_capacity(test.n_rows());
    for row in 0..test.n_rows() {
        let seq = test.row(row);
        let first = test.first_real(row);
        let real = &seq[first..];
        if real.len() < 2 {
            return Err(Error::Contract(format!(
                "sequence row {row} has fewer than 2 real items"
            )));
        }
        let inputs = &real[..real.len() - 1];
        let target = real[real.len() - 1];
        let states = lstm_forward(lstm, inputs)?;
        let scores = score_all_from_state(lstm, states.h.row(inputs.len() - 1));
        // a repeat-consumption target stays rankable even when it appears
        // among the excluded earlier items
        let mask = if options.exclude_known {
            exclusion_mask(n_items, inputs.iter().copied().filter(|&i| i != target))
        } else {
            vec![false; n_items + 1]
        };
        ranks.push(reciprocal_rank(&scores, target, &mask)?);
    }
    Ok(EvalResult::from_ranks(ranks, Protocol::Sequence))
}
