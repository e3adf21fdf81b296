//! Interaction data: CSV ingestion with iterative pruning, dense id remapping,
//! dataset statistics, the two split protocols, padded sequence construction,
//! and synthetic generators used as oracles for the mixture models.
//!
//! Item id 0 is reserved for sequence padding everywhere; real items are
//! numbered from 1. User ids are dense from 0.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

const STREAM_SPLIT: u64 = 0x73706c69;
const STREAM_MIXTURE: u64 = 0x6d697874;
const STREAM_MARKOV: u64 = 0x6d61726b;

/// One user/item event. `timestamp` is integer seconds, 0 when the source
/// had no timestamp column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// A set of interactions over dense id spaces: users in `[0, n_users)`,
/// items in `[1, n_items]` (0 is the padding id and never appears).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    pub interactions: Vec<Interaction>,
    pub n_users: usize,
    pub n_items: usize,
}

impl InteractionSet {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Interaction count per item id; index 0 (padding) is always 0.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_items + 1];
        for it in &self.interactions {
            counts[it.item as usize] += 1;
        }
        counts
    }

    /// Items per user, in input order (may contain repeats).
    pub fn items_by_user(&self) -> Vec<Vec<u32>> {
        let mut per_user = vec![Vec::new(); self.n_users];
        for it in &self.interactions {
            per_user[it.user as usize].push(it.item);
        }
        per_user
    }

    /// Collapse duplicate (user, item) pairs to the earliest timestamp.
    /// Output keeps the input order of each pair's first minimal-timestamp row.
    pub fn dedup(&self) -> InteractionSet {
        let mut best: HashMap<(u32, u32), (i64, usize)> = HashMap::new();
        for (idx, it) in self.interactions.iter().enumerate() {
            let entry = best
                .entry((it.user, it.item))
                .or_insert((it.timestamp, idx));
            if it.timestamp < entry.0 {
                *entry = (it.timestamp, idx);
            }
        }
        let mut keep: Vec<usize> = best.values().map(|&(_, idx)| idx).collect();
        keep.sort_unstable();
        InteractionSet {
            interactions: keep.iter().map(|&i| self.interactions[i]).collect(),
            n_users: self.n_users,
            n_items: self.n_items,
        }
    }

    /// Check the id-space invariants; used by tests and debug callers.
    pub fn validate(&self) -> Result<()> {
        for it in &self.interactions {
            if it.item == 0 || it.item as usize > self.n_items {
                return Err(Error::Index(format!(
                    "item id {} outside [1, {}]",
                    it.item, self.n_items
                )));
            }
            if it.user as usize >= self.n_users {
                return Err(Error::Index(format!(
                    "user id {} outside [0, {})",
                    it.user, self.n_users
                )));
            }
        }
        Ok(())
    }
}

/// Summary statistics in the shape of the dataset table: interaction density
/// and the ratio of item popularity at the 95th vs the 50th percentile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub density: f64,
    pub pop_ratio_95_50: f64,
}

impl DatasetStats {
    /// Single-line JSON with keys `n_users,n_items,density,pop_ratio_95_50`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

/// Fixed-width, left-zero-padded per-user item sequences in chronological
/// order. Every row has at least 2 real items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSet {
    pub max_len: usize,
    /// Size of the item id space the rows draw from.
    pub n_items: usize,
    /// User id of each row.
    pub users: Vec<u32>,
    /// Row-major item ids, `users.len() * max_len` entries.
    pub items: Vec<u32>,
}

impl SequenceSet {
    pub fn n_rows(&self) -> usize {
        self.users.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.items[r * self.max_len..(r + 1) * self.max_len]
    }

    /// Index of the first non-padding entry of a row.
    pub fn first_real(&self, r: usize) -> usize {
        self.row(r)
            .iter()
            .position(|&i| i != 0)
            .unwrap_or(self.max_len)
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct RawLog {
    // (user key, item key, timestamp), one per input row, in input order
    rows: Vec<(u32, u32, i64)>,
    user_keys: Vec<String>,
    item_keys: Vec<String>,
}

fn parse_csv(path: &Path) -> Result<RawLog> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::EmptyDataset("file has no header row".into())),
    };
    let cols: Vec<&str> = header
        .trim_end_matches(['\r', '\n'])
        .split(',')
        .map(str::trim)
        .collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let user_col = find("user_id").ok_or_else(|| Error::Parse {
        line: 1,
        message: format!("header must contain user_id, got `{header}`"),
    })?;
    let item_col = find("item_id").ok_or_else(|| Error::Parse {
        line: 1,
        message: format!("header must contain item_id, got `{header}`"),
    })?;
    let ts_col = find("timestamp");

    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut rows = Vec::new();

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let timestamp = match ts_col {
            Some(c) => fields[c].trim().parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid timestamp `{}`", fields[c]),
            })?,
            None => 0,
        };
        let user_key = fields[user_col].trim();
        let item_key = fields[item_col].trim();
        if user_key.is_empty() || item_key.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty user_id or item_id".into(),
            });
        }
        let u = *user_ids.entry(user_key.to_string()).or_insert_with(|| {
            user_keys.push(user_key.to_string());
            (user_keys.len() - 1) as u32
        });
        let i = *item_ids.entry(item_key.to_string()).or_insert_with(|| {
            item_keys.push(item_key.to_string());
            (item_keys.len() - 1) as u32
        });
        rows.push((u, i, timestamp));
    }

    Ok(RawLog {
        rows,
        user_keys,
        item_keys,
    })
}

/// Prune users/items below the thresholds (counting distinct (user, item)
/// edges) to a fixpoint, then densely remap surviving ids in sorted order of
/// their original string keys. Duplicate pairs are collapsed to their
/// earliest timestamp.
pub fn load_interactions(
    path: impl AsRef<Path>,
    min_user: usize,
    min_item: usize,
) -> Result<InteractionSet> {
    load_impl(path.as_ref(), min_user, min_item, false)
}

/// As [`load_interactions`], but duplicate (user, item) rows are retained:
/// repeat consumption is signal for the sequence models.
pub fn load_interactions_keep_repeats(
    path: impl AsRef<Path>,
    min_user: usize,
    min_item: usize,
) -> Result<InteractionSet> {
    load_impl(path.as_ref(), min_user, min_item, true)
}

fn load_impl(
    path: &Path,
    min_user: usize,
    min_item: usize,
    keep_repeats: bool,
) -> Result<InteractionSet> {
    let raw = parse_csv(path)?;
    let n_raw_users = raw.user_keys.len();
    let n_raw_items = raw.item_keys.len();

    // Distinct edges for threshold counting.
    let mut edges: Vec<(u32, u32)> = {
        let mut seen = std::collections::HashSet::new();
        raw.rows
            .iter()
            .filter(|(u, i, _)| seen.insert((*u, *i)))
            .map(|&(u, i, _)| (u, i))
            .collect()
    };

    // Iterative pruning: removing items can push users back under the
    // threshold and vice versa, so run to a fixpoint.
    let mut user_alive = vec![true; n_raw_users];
    let mut item_alive = vec![true; n_raw_items];
    loop {
        let mut user_deg = vec![0usize; n_raw_users];
        let mut item_deg = vec![0usize; n_raw_items];
        for &(u, i) in &edges {
            user_deg[u as usize] += 1;
            item_deg[i as usize] += 1;
        }
        let mut changed = false;
        for u in 0..n_raw_users {
            if user_alive[u] && user_deg[u] < min_user {
                user_alive[u] = false;
                changed = true;
            }
        }
        for i in 0..n_raw_items {
            if item_alive[i] && item_deg[i] < min_item {
                item_alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        edges.retain(|&(u, i)| user_alive[u as usize] && item_alive[i as usize]);
    }

    // Deterministic remapping: survivors sorted by original id.
    let mut surviving_users: Vec<u32> = (0..n_raw_users as u32)
        .filter(|&u| user_alive[u as usize])
        .collect();
    surviving_users.sort_by(|&a, &b| raw.user_keys[a as usize].cmp(&raw.user_keys[b as usize]));
    let mut surviving_items: Vec<u32> = (0..n_raw_items as u32)
        .filter(|&i| item_alive[i as usize])
        .collect();
    surviving_items.sort_by(|&a, &b| raw.item_keys[a as usize].cmp(&raw.item_keys[b as usize]));

    let mut user_map = vec![u32::MAX; n_raw_users];
    for (dense, &u) in surviving_users.iter().enumerate() {
        user_map[u as usize] = dense as u32;
    }
    let mut item_map = vec![u32::MAX; n_raw_items];
    for (dense, &i) in surviving_items.iter().enumerate() {
        item_map[i as usize] = dense as u32 + 1; // 0 reserved for padding
    }

    let interactions: Vec<Interaction> = raw
        .rows
        .iter()
        .filter(|(u, i, _)| user_alive[*u as usize] && item_alive[*i as usize])
        .map(|&(u, i, ts)| Interaction {
            user: user_map[u as usize],
            item: item_map[i as usize],
            timestamp: ts,
        })
        .collect();

    let set = InteractionSet {
        interactions,
        n_users: surviving_users.len(),
        n_items: surviving_items.len(),
    };
    if set.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no interactions survive pruning with min_user={min_user}, min_item={min_item}"
        )));
    }
    Ok(if keep_repeats { set } else { set.dedup() })
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Percentile by linear interpolation between order statistics.
fn percentile_linear(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn compute_stats(data: &InteractionSet) -> Result<DatasetStats> {
    if data.is_empty() || data.n_users == 0 || data.n_items == 0 {
        return Err(Error::EmptyDataset(
            "compute_stats needs interactions".into(),
        ));
    }
    let density = data.len() as f64 / (data.n_users as f64 * data.n_items as f64);
    let mut counts: Vec<f64> = data.item_counts()[1..].iter().map(|&c| c as f64).collect();
    counts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = percentile_linear(&counts, 95.0);
    let p50 = percentile_linear(&counts, 50.0);
    Ok(DatasetStats {
        n_users: data.n_users,
        n_items: data.n_items,
        density,
        pop_ratio_95_50: p95 / p50,
    })
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

fn check_fractions(fractions: (f64, f64, f64)) -> Result<(f64, f64, f64)> {
    let (a, b, c) = fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::Config(format!(
            "split fractions must be non-negative, got {fractions:?}"
        )));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    Ok(fractions)
}

fn part_sizes(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    let n_train = ((fractions.0 * n as f64).round() as usize).min(n);
    let n_val = ((fractions.1 * n as f64).round() as usize).min(n - n_train);
    (n_train, n_val, n - n_train - n_val)
}

/// Permute interactions with a seeded RNG and partition them into
/// train/validation/test. Validation and test users or items may be absent
/// from train (partial cold-start).
pub fn random_split(
    data: &InteractionSet,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<[InteractionSet; 3]> {
    check_fractions(fractions)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seeding::rng(seed, STREAM_SPLIT));
    let (n_train, n_val, _) = part_sizes(data.len(), fractions);

    let gather = |idxs: &[usize]| InteractionSet {
        interactions: idxs.iter().map(|&i| data.interactions[i]).collect(),
        n_users: data.n_users,
        n_items: data.n_items,
    };
    Ok([
        gather(&order[..n_train]),
        gather(&order[n_train..n_train + n_val]),
        gather(&order[n_train + n_val..]),
    ])
}

/// As [`random_split`], but the permuted-and-partitioned unit is the user:
/// all of a user's interactions land in the same part, so the parts are
/// disjoint along the user dimension. Input order is preserved within parts.
pub fn user_disjoint_split(
    data: &InteractionSet,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<[InteractionSet; 3]> {
    check_fractions(fractions)?;
    let mut users: Vec<u32> = (0..data.n_users as u32).collect();
    users.shuffle(&mut seeding::rng(seed, STREAM_SPLIT));
    let (n_train, n_val, _) = part_sizes(data.n_users, fractions);

    // part index per user: 0 train, 1 val, 2 test
    let mut part_of = vec![0u8; data.n_users];
    for &u in &users[n_train..n_train + n_val] {
        part_of[u as usize] = 1;
    }
    for &u in &users[n_train + n_val..] {
        part_of[u as usize] = 2;
    }

    let gather = |part: u8| InteractionSet {
        interactions: data
            .interactions
            .iter()
            .filter(|it| part_of[it.user as usize] == part)
            .copied()
            .collect(),
        n_users: data.n_users,
        n_items: data.n_items,
    };
    Ok([gather(0), gather(1), gather(2)])
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

/// Order each user's items chronologically (ties broken by input order),
/// keep the most recent `max_len`, and left-pad with the reserved 0 id.
/// Users with fewer than 2 interactions are dropped.
pub fn build_sequences(data: &InteractionSet, max_len: usize) -> Result<SequenceSet> {
    if max_len < 2 {
        return Err(Error::Config(format!(
            "max_len must be at least 2, got {max_len}"
        )));
    }
    let mut per_user: Vec<Vec<(i64, u32)>> = vec![Vec::new(); data.n_users];
    for it in &data.interactions {
        per_user[it.user as usize].push((it.timestamp, it.item));
    }

    let mut users = Vec::new();
    let mut items = Vec::new();
    for (u, mut events) in per_user.into_iter().enumerate() {
        if events.len() < 2 {
            continue;
        }
        events.sort_by_key(|&(ts, _)| ts); // stable: input order breaks ties
        let start = events.len().saturating_sub(max_len);
        let recent = &events[start..];
        users.push(u as u32);
        items.extend(std::iter::repeat_n(0u32, max_len - recent.len()));
        items.extend(recent.iter().map(|&(_, item)| item));
    }
    Ok(SequenceSet {
        max_len,
        n_items: data.n_items,
        users,
        items,
    })
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// A synthetic dataset plus the ground-truth taste blocks per user.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub data: InteractionSet,
    /// The two item blocks assigned to each user (equal when n_tastes = 1).
    pub user_blocks: Vec<[usize; 2]>,
    pub n_tastes: usize,
}

fn pick_two_blocks(rng: &mut impl Rng, n_tastes: usize) -> [usize; 2] {
    if n_tastes == 1 {
        return [0, 0];
    }
    let a = rng.gen_range(0..n_tastes);
    let mut b = rng.gen_range(0..n_tastes - 1);
    if b >= a {
        b += 1;
    }
    [a, b]
}

/// Multimodal-taste generator: items are partitioned into `n_tastes` equal
/// blocks, each user is assigned 2 distinct blocks, and interactions are
/// drawn i.i.d. uniformly from the union of the user's blocks. Timestamps
/// are the draw index, so sequences are chronological per user.
pub fn generate_synthetic_mixture(
    n_users: usize,
    n_items: usize,
    n_tastes: usize,
    interactions_per_user: usize,
    seed: u64,
) -> Result<SyntheticData> {
    if n_tastes == 0 || n_items % n_tastes != 0 {
        return Err(Error::Config(format!(
            "n_items ({n_items}) must be divisible by n_tastes ({n_tastes})"
        )));
    }
    let block_size = n_items / n_tastes;
    let mut rng = seeding::rng(seed, STREAM_MIXTURE);
    let mut interactions = Vec::with_capacity(n_users * interactions_per_user);
    let mut user_blocks = Vec::with_capacity(n_users);

    for u in 0..n_users {
        let blocks = pick_two_blocks(&mut rng, n_tastes);
        user_blocks.push(blocks);
        for t in 0..interactions_per_user {
            let pos = rng.gen_range(0..2 * block_size);
            let (block, offset) = if pos < block_size {
                (blocks[0], pos)
            } else {
                (blocks[1], pos - block_size)
            };
            interactions.push(Interaction {
                user: u as u32,
                item: (block * block_size + offset) as u32 + 1,
                timestamp: t as i64,
            });
        }
    }

    Ok(SyntheticData {
        data: InteractionSet {
            interactions,
            n_users,
            n_items,
        },
        user_blocks,
        n_tastes,
    })
}

/// Parameters of the two-mode Markov sequence generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_tastes: usize,
    pub seq_len: usize,
    /// Probability of toggling between the user's two modes at each step.
    pub switch_prob: f64,
    /// Probability that the active mode advances to the next item of its
    /// block (cyclically); otherwise it jumps uniformly within the block.
    pub advance_prob: f64,
}

/// Per-user two-mode Markov sequences: each user runs two independent
/// first-order chains (one per assigned block) and an interleaving process
/// switches between them. A mode resumes where it left off, so predicting
/// the next item requires remembering both chains' positions.
pub fn generate_synthetic_markov(spec: MarkovSpec, seed: u64) -> Result<SyntheticData> {
    let MarkovSpec {
        n_users,
        n_items,
        n_tastes,
        seq_len,
        switch_prob,
        advance_prob,
    } = spec;
    if n_tastes == 0 || n_items % n_tastes != 0 {
        return Err(Error::Config(format!(
            "n_items ({n_items}) must be divisible by n_tastes ({n_tastes})"
        )));
    }
    if seq_len < 2 {
        return Err(Error::Config("seq_len must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&switch_prob) || !(0.0..=1.0).contains(&advance_prob) {
        return Err(Error::Config("probabilities must lie in [0, 1]".into()));
    }
    let block_size = n_items / n_tastes;
    let mut rng = seeding::rng(seed, STREAM_MARKOV);
    let mut interactions = Vec::with_capacity(n_users * seq_len);
    let mut user_blocks = Vec::with_capacity(n_users);

    for u in 0..n_users {
        let blocks = pick_two_blocks(&mut rng, n_tastes);
        user_blocks.push(blocks);
        let mut pos = [rng.gen_range(0..block_size), rng.gen_range(0..block_size)];
        let mut mode = rng.gen_range(0..2usize);
        for step in 0..seq_len {
            if rng.gen_bool(switch_prob) {
                mode = 1 - mode;
            }
            if rng.gen_bool(advance_prob) {
                pos[mode] = (pos[mode] + 1) % block_size;
            } else {
                pos[mode] = rng.gen_range(0..block_size);
            }
            interactions.push(Interaction {
                user: u as u32,
                item: (blocks[mode] * block_size + pos[mode]) as u32 + 1,
                timestamp: step as i64,
            });
        }
    }

    Ok(SyntheticData {
        data: InteractionSet {
            interactions,
            n_users,
            n_items,
        },
        user_blocks,
        n_tastes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_remaps_ids_densely_and_sorted() {
        let f = write_csv("user_id,item_id,rating,timestamp\nb,y,5,10\na,x,3,20\nb,x,1,30\n");
        let set = load_interactions(f.path(), 0, 0).unwrap();
        set.validate().unwrap();
        assert_eq!(set.n_users, 2);
        assert_eq!(set.n_items, 2);
        // users sorted: a -> 0, b -> 1; items sorted: x -> 1, y -> 2
        assert_eq!(
            set.interactions,
            vec![
                Interaction {
                    user: 1,
                    item: 2,
                    timestamp: 10
                },
                Interaction {
                    user: 0,
                    item: 1,
                    timestamp: 20
                },
                Interaction {
                    user: 1,
                    item: 1,
                    timestamp: 30
                },
            ]
        );
    }

    #[test]
    fn load_without_rating_or_timestamp_columns() {
        let f = write_csv("user_id,item_id,timestamp\nu1,i1,7\nu2,i2,8\n");
        let set = load_interactions(f.path(), 0, 0).unwrap();
        assert_eq!(set.interactions[0].timestamp, 7);

        let f = write_csv("user_id,item_id\nu1,i1\nu2,i2\n");
        let set = load_interactions(f.path(), 0, 0).unwrap();
        assert_eq!(set.interactions[0].timestamp, 0);
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let f = write_csv("user_id,item_id,rating,timestamp\nu1,i1,5,10\nu2,i2,5\n");
        match load_interactions(f.path(), 0, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_csv("user_id,item_id,timestamp\nu1,i1,notatime\n");
        match load_interactions(f.path(), 0, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn no_pruning_yields_distinct_pair_count() {
        // 5 rows, 4 distinct (user, item) pairs
        let f = write_csv(
            "user_id,item_id,rating,timestamp\nu1,i1,1,5\nu1,i1,1,2\nu1,i2,1,3\nu2,i1,1,4\nu2,i2,1,1\n",
        );
        let set = load_interactions(f.path(), 0, 0).unwrap();
        assert_eq!(set.len(), 4);
        // duplicate (u1, i1) collapsed to its earliest timestamp
        let it = set
            .interactions
            .iter()
            .find(|it| it.user == 0 && it.item == 1)
            .unwrap();
        assert_eq!(it.timestamp, 2);
    }

    #[test]
    fn keep_repeats_retains_duplicate_rows() {
        let f = write_csv("user_id,item_id,rating,timestamp\nu1,i1,1,5\nu1,i1,1,2\nu1,i2,1,3\n");
        let set = load_interactions_keep_repeats(f.path(), 0, 0).unwrap();
        assert_eq!(set.len(), 3);
    }

    /// Brute-force pruning fixpoint over (user, item) string edges.
    fn prune_oracle(
        edges: &[(&str, &str)],
        min_user: usize,
        min_item: usize,
    ) -> HashSet<(String, String)> {
        let mut alive: HashSet<(String, String)> = edges
            .iter()
            .map(|&(u, i)| (u.to_string(), i.to_string()))
            .collect();
        loop {
            let mut user_deg: HashMap<&String, usize> = HashMap::new();
            let mut item_deg: HashMap<&String, usize> = HashMap::new();
            for (u, i) in &alive {
                *user_deg.entry(u).or_default() += 1;
                *item_deg.entry(i).or_default() += 1;
            }
            let next: HashSet<(String, String)> = alive
                .iter()
                .filter(|(u, i)| user_deg[u] >= min_user && item_deg[i] >= min_item)
                .cloned()
                .collect();
            if next.len() == alive.len() {
                return alive;
            }
            alive = next;
        }
    }

    #[test]
    fn pruning_matches_fixpoint_oracle() {
        // u3 has a single interaction; dropping it orphans i9, whose removal
        // then drops u2 under a min_item=2 threshold chain.
        let edges = [
            ("u1", "i1"),
            ("u1", "i2"),
            ("u2", "i1"),
            ("u2", "i9"),
            ("u3", "i9"),
        ];
        let csv = std::iter::once("user_id,item_id,rating,timestamp".to_string())
            .chain(
                edges
                    .iter()
                    .enumerate()
                    .map(|(n, (u, i))| format!("{u},{i},1,{n}")),
            )
            .collect::<Vec<_>>()
            .join("\n");
        let f = write_csv(&csv);

        for (min_user, min_item) in [(2, 1), (2, 2), (1, 2), (3, 1)] {
            let expected = prune_oracle(&edges, min_user, min_item);
            let got = load_interactions(f.path(), min_user, min_item);
            match got {
                Ok(set) => {
                    assert_eq!(
                        set.len(),
                        expected.len(),
                        "thresholds {min_user}/{min_item}"
                    );
                    set.validate().unwrap();
                }
                Err(Error::EmptyDataset(_)) => {
                    assert!(expected.is_empty(), "thresholds {min_user}/{min_item}");
                }
                Err(e) => panic!("unexpected error {e:?}"),
            }
        }
    }

    #[test]
    fn empty_after_pruning_errors() {
        let f = write_csv("user_id,item_id,rating,timestamp\nu1,i1,1,1\n");
        assert!(matches!(
            load_interactions(f.path(), 10, 10),
            Err(Error::EmptyDataset(_))
        ));
    }

    fn toy_set(edges: &[(u32, u32)], n_users: usize, n_items: usize) -> InteractionSet {
        InteractionSet {
            interactions: edges
                .iter()
                .enumerate()
                .map(|(idx, &(user, item))| Interaction {
                    user,
                    item,
                    timestamp: idx as i64,
                })
                .collect(),
            n_users,
            n_items,
        }
    }

    #[test]
    fn stats_uniform_popularity_has_unit_ratio() {
        let set = toy_set(&[(0, 1), (0, 2), (1, 1), (1, 2)], 2, 2);
        let stats = compute_stats(&set).unwrap();
        assert_eq!(stats.pop_ratio_95_50, 1.0);
        assert_eq!(stats.density, 1.0);
    }

    #[test]
    fn stats_percentiles_match_hand_computation() {
        // items 1..10 with counts 1..10; linear interpolation between order
        // statistics gives p95 = 9.55 and p50 = 5.5
        let mut edges = Vec::new();
        for item in 1..=10u32 {
            for user in 0..item {
                edges.push((user, item));
            }
        }
        let set = toy_set(&edges, 10, 10);
        let stats = compute_stats(&set).unwrap();
        let expected = 9.55 / 5.5;
        assert!((stats.pop_ratio_95_50 - expected).abs() < 1e-12);
        let expected_density = 55.0 / 100.0;
        assert!((stats.density - expected_density).abs() < 1e-12);
    }

    #[test]
    fn stats_empty_errors() {
        let set = InteractionSet {
            interactions: vec![],
            n_users: 3,
            n_items: 3,
        };
        assert!(matches!(compute_stats(&set), Err(Error::EmptyDataset(_))));
    }

    fn multiset(set: &InteractionSet) -> HashMap<(u32, u32, i64), usize> {
        let mut m = HashMap::new();
        for it in &set.interactions {
            *m.entry((it.user, it.item, it.timestamp)).or_default() += 1;
        }
        m
    }

    #[test]
    fn random_split_sizes_and_partition() {
        let edges: Vec<(u32, u32)> = (0..1000).map(|n| (n % 50, n % 40 + 1)).collect();
        let set = toy_set(&edges, 50, 40);
        let [train, val, test] = random_split(&set, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!(train.len(), 800);
        assert_eq!(val.len(), 100);
        assert_eq!(test.len(), 100);

        // exact partition as multisets
        let mut union = multiset(&train);
        for (k, v) in multiset(&val) {
            *union.entry(k).or_default() += v;
        }
        for (k, v) in multiset(&test) {
            *union.entry(k).or_default() += v;
        }
        assert_eq!(union, multiset(&set));
    }

    #[test]
    fn degenerate_split_puts_everything_in_train() {
        let set = toy_set(&[(0, 1), (1, 2), (2, 3)], 3, 3);
        let [train, val, test] = random_split(&set, (1.0, 0.0, 0.0), 0).unwrap();
        assert_eq!(multiset(&train), multiset(&set));
        assert!(val.is_empty());
        assert!(test.is_empty());
    }

    #[test]
    fn splits_are_deterministic_per_seed() {
        let edges: Vec<(u32, u32)> = (0..200).map(|n| (n % 20, n % 30 + 1)).collect();
        let set = toy_set(&edges, 20, 30);
        let a = random_split(&set, (0.8, 0.1, 0.1), 7).unwrap();
        let b = random_split(&set, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a, b);
        let c = random_split(&set, (0.8, 0.1, 0.1), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_fractions_rejected() {
        let set = toy_set(&[(0, 1)], 1, 1);
        assert!(matches!(
            random_split(&set, (0.8, 0.1, 0.2), 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            random_split(&set, (1.2, -0.1, -0.1), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn user_disjoint_split_separates_users() {
        let edges: Vec<(u32, u32)> = (0..400).map(|n| (n % 100, n % 13 + 1)).collect();
        let set = toy_set(&edges, 100, 13);
        let [train, val, test] = user_disjoint_split(&set, (0.8, 0.1, 0.1), 11).unwrap();

        let users = |s: &InteractionSet| -> HashSet<u32> {
            s.interactions.iter().map(|i| i.user).collect()
        };
        let (u_train, u_val, u_test) = (users(&train), users(&val), users(&test));
        assert!(u_train.is_disjoint(&u_val));
        assert!(u_train.is_disjoint(&u_test));
        assert!(u_val.is_disjoint(&u_test));
        assert_eq!(u_train.len(), 80);
        assert_eq!(u_val.len(), 10);
        assert_eq!(u_test.len(), 10);

        // per-user interaction multisets preserved
        let count_by_user = |s: &InteractionSet| -> HashMap<u32, usize> {
            let mut m = HashMap::new();
            for it in &s.interactions {
                *m.entry(it.user).or_default() += 1;
            }
            m
        };
        let mut merged = count_by_user(&train);
        merged.extend(count_by_user(&val));
        merged.extend(count_by_user(&test));
        assert_eq!(merged, count_by_user(&set));
    }

    #[test]
    fn sequences_left_pad_and_keep_chronology() {
        let set = InteractionSet {
            interactions: vec![
                Interaction {
                    user: 0,
                    item: 3,
                    timestamp: 30,
                },
                Interaction {
                    user: 0,
                    item: 1,
                    timestamp: 10,
                },
                Interaction {
                    user: 0,
                    item: 2,
                    timestamp: 20,
                },
                Interaction {
                    user: 1,
                    item: 5,
                    timestamp: 1,
                }, // dropped: single event
            ],
            n_users: 2,
            n_items: 5,
        };
        let seqs = build_sequences(&set, 5).unwrap();
        assert_eq!(seqs.n_rows(), 1);
        assert_eq!(seqs.users, vec![0]);
        assert_eq!(seqs.row(0), &[0, 0, 1, 2, 3]);
        assert_eq!(seqs.first_real(0), 2);
    }

    #[test]
    fn sequences_keep_most_recent_when_truncating() {
        let interactions: Vec<Interaction> = (0..7)
            .map(|t| Interaction {
                user: 0,
                item: t + 1,
                timestamp: t as i64,
            })
            .collect();
        let set = InteractionSet {
            interactions,
            n_users: 1,
            n_items: 7,
        };
        let seqs = build_sequences(&set, 5).unwrap();
        assert_eq!(seqs.row(0), &[3, 4, 5, 6, 7]);
    }

    #[test]
    fn sequences_invariant_under_row_permutation() {
        let mut interactions: Vec<Interaction> = (0..30)
            .map(|n| Interaction {
                user: n % 5,
                item: (n % 7) + 1,
                timestamp: 1000 - n as i64, // distinct timestamps
            })
            .collect();
        let set = InteractionSet {
            interactions: interactions.clone(),
            n_users: 5,
            n_items: 7,
        };
        let reference = build_sequences(&set, 6).unwrap();

        interactions.reverse();
        interactions.swap(0, 17);
        let permuted = InteractionSet {
            interactions,
            n_users: 5,
            n_items: 7,
        };
        assert_eq!(build_sequences(&permuted, 6).unwrap(), reference);
    }

    #[test]
    fn sequences_reject_tiny_max_len() {
        let set = toy_set(&[(0, 1), (0, 2)], 1, 2);
        assert!(matches!(build_sequences(&set, 1), Err(Error::Config(_))));
    }

    #[test]
    fn mixture_generator_respects_blocks() {
        let synth = generate_synthetic_mixture(20, 40, 4, 30, 5).unwrap();
        synth.data.validate().unwrap();
        let block_size = 40 / 4;
        let per_user = synth.data.items_by_user();
        for (u, items) in per_user.iter().enumerate() {
            let [a, b] = synth.user_blocks[u];
            assert_ne!(a, b);
            for &item in items {
                let block = (item as usize - 1) / block_size;
                assert!(
                    block == a || block == b,
                    "item {item} outside user {u}'s blocks"
                );
            }
        }
    }

    #[test]
    fn mixture_generator_single_taste_covers_catalog() {
        let synth = generate_synthetic_mixture(4, 12, 1, 400, 9).unwrap();
        assert!(synth.user_blocks.iter().all(|&b| b == [0, 0]));
        let seen: HashSet<u32> = synth.data.interactions.iter().map(|i| i.item).collect();
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn mixture_generator_block_frequencies_are_even() {
        // binomial: n = 10_000 draws, p = 0.5 -> sigma = 50; allow 3 sigma
        let n = 10_000;
        let synth = generate_synthetic_mixture(1, 100, 2, n, 13).unwrap();
        let block_size = 50;
        let [a, _] = synth.user_blocks[0];
        let in_first = synth
            .data
            .interactions
            .iter()
            .filter(|it| (it.item as usize - 1) / block_size == a)
            .count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((in_first - n as f64 / 2.0).abs() <= 3.0 * sigma);
    }

    #[test]
    fn mixture_generator_is_deterministic_and_validates() {
        let a = generate_synthetic_mixture(10, 20, 2, 15, 3).unwrap();
        let b = generate_synthetic_mixture(10, 20, 2, 15, 3).unwrap();
        assert_eq!(a.data, b.data);
        assert!(matches!(
            generate_synthetic_mixture(10, 20, 3, 15, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn markov_generator_stays_in_blocks_and_is_deterministic() {
        let spec = MarkovSpec {
            n_users: 10,
            n_items: 60,
            n_tastes: 6,
            seq_len: 25,
            switch_prob: 0.2,
            advance_prob: 0.8,
        };
        let a = generate_synthetic_markov(spec, 21).unwrap();
        let b = generate_synthetic_markov(spec, 21).unwrap();
        assert_eq!(a.data, b.data);
        a.data.validate().unwrap();
        let block_size = 10;
        for (u, items) in a.data.items_by_user().iter().enumerate() {
            assert_eq!(items.len(), 25);
            let [x, y] = a.user_blocks[u];
            for &item in items {
                let block = (item as usize - 1) / block_size;
                assert!(block == x || block == y);
            }
        }
    }
}
