//! Random hyperparameter search with persisted, crash-resumable trials and
//! the best-MRR-so-far curve export.
//!
//! Every trial's config and seed derive only from (search seed, iteration
//! index), so a budget-b run is a prefix of a budget-b' > b run and a killed
//! search resumes by replaying its records file.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionSet, SequenceSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate_factorization, evaluate_sequence, EvalOptions};
use crate::models::{init_params, ModelDims, Params, Variant};
use crate::seeding;
use crate::train::{train_factorization, train_sequence, HyperConfig, LossKind};

const STREAM_TRIAL: u64 = 0x7472_6c00;

/// Sampling laws for the searched hyperparameters. Scale-type parameters are
/// log-uniform; the rest are uniform choices. `k` is fixed per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub variant: Variant,
    pub k: usize,
    /// log-uniform bounds (low, high)
    pub learning_rate: (f64, f64),
    /// log-uniform bounds (low, high)
    pub l2: (f64, f64),
    pub batch_sizes: Vec<usize>,
    pub epoch_choices: Vec<usize>,
    pub losses: Vec<LossKind>,
    /// mixture variants draw their component count from this grid
    pub components: Vec<usize>,
    pub max_neg_attempts: usize,
}

impl SearchSpace {
    pub fn new(variant: Variant, k: usize) -> Self {
        SearchSpace {
            variant,
            k,
            learning_rate: (1e-4, 1e-1),
            l2: (1e-9, 1e-3),
            batch_sizes: vec![128, 256, 512, 1024],
            epoch_choices: (1..=10).map(|i| i * 5).collect(),
            losses: vec![LossKind::Bpr, LossKind::AdaptiveHinge],
            components: vec![2, 4, 6, 8],
            max_neg_attempts: 5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0
            || self.batch_sizes.is_empty()
            || self.epoch_choices.is_empty()
            || self.losses.is_empty()
            || (self.variant.is_mixture() && self.components.is_empty())
        {
            return Err(Error::Config("search space has an empty support".into()));
        }
        if self.learning_rate.0 <= 0.0 || self.learning_rate.0 > self.learning_rate.1 {
            return Err(Error::Config("bad learning_rate bounds".into()));
        }
        if self.l2.0 <= 0.0 || self.l2.0 > self.l2.1 {
            return Err(Error::Config("bad l2 bounds".into()));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn choose<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    options[rng.gen_range(0..options.len())]
}

/// Draw one configuration; every field is sampled independently.
pub fn sample_config(space: &SearchSpace, rng: &mut ChaCha8Rng) -> HyperConfig {
    let learning_rate = log_uniform(rng, space.learning_rate);
    let l2 = log_uniform(rng, space.l2);
    let batch_size = choose(rng, &space.batch_sizes);
    let n_epochs = choose(rng, &space.epoch_choices);
    let loss = choose(rng, &space.losses);
    let m = if space.variant.is_mixture() {
        choose(rng, &space.components)
    } else {
        1
    };
    let seed = rng.gen();
    HyperConfig {
        variant: space.variant,
        k: space.k,
        m,
        loss,
        learning_rate,
        l2,
        batch_size,
        n_epochs,
        max_neg_attempts: space.max_neg_attempts,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One completed search iteration, persisted as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub iteration: usize,
    pub config: HyperConfig,
    pub validation_mrr: Option<f64>,
    pub test_mrr: Option<f64>,
    pub train_seconds: f64,
    pub status: TrialStatus,
}

/// Train/validation/test splits under one of the two protocols.
#[derive(Debug, Clone)]
pub enum SearchData {
    Factorization {
        train: InteractionSet,
        validation: InteractionSet,
        test: InteractionSet,
    },
    Sequence {
        train: SequenceSet,
        validation: SequenceSet,
        test: SequenceSet,
    },
}

impl SearchData {
    fn dims(&self, cfg: &HyperConfig) -> ModelDims {
        match self {
            SearchData::Factorization { train, .. } => ModelDims {
                k: cfg.k,
                m: cfg.m,
                n_users: train.n_users,
                n_items: train.n_items,
            },
            SearchData::Sequence { train, .. } => ModelDims {
                k: cfg.k,
                m: cfg.m,
                n_users: train.users.len(),
                n_items: train.n_items,
            },
        }
    }

    fn check_variant(&self, variant: Variant) -> Result<()> {
        match (self, variant.is_sequence()) {
            (SearchData::Factorization { .. }, false) | (SearchData::Sequence { .. }, true) => {
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "variant {variant} does not match the split protocol"
            ))),
        }
    }
}

/// Train and evaluate one sampled config; returns the fitted model next to
/// its validation/test MRR.
pub fn run_trial(
    data: &SearchData,
    cfg: &HyperConfig,
    options: &EvalOptions,
) -> Result<(Params, f64, f64)> {
    let mut params = init_params(&data.dims(cfg), cfg.variant, cfg.seed);
    match data {
        SearchData::Factorization {
            train,
            validation,
            test,
        } => {
            train_factorization(&mut params, train, cfg, None)?;
            if !params.is_finite() {
                return Err(Error::Contract(
                    "training diverged to non-finite parameters".into(),
                ));
            }
            let val = evaluate_factorization(&params, validation, train, options)?;
            let tst = evaluate_factorization(&params, test, train, options)?;
            Ok((params, val.mrr, tst.mrr))
        }
        SearchData::Sequence {
            train,
            validation,
            test,
        } => {
            train_sequence(&mut params, train, cfg, None)?;
            if !params.is_finite() {
                return Err(Error::Contract(
                    "training diverged to non-finite parameters".into(),
                ));
            }
            let val = evaluate_sequence(&params, validation, options)?;
            let tst = evaluate_sequence(&params, test, options)?;
            Ok((params, val.mrr, tst.mrr))
        }
    }
}

fn read_existing_records(path: &Path, budget: usize) -> Result<Vec<Option<TrialRecord>>> {
    let mut slots: Vec<Option<TrialRecord>> = vec![None; budget];
    if !path.exists() {
        return Ok(slots);
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(&line)?;
        let iteration = record.iteration;
        if iteration < budget && slots[iteration].is_none() {
            slots[iteration] = Some(record);
        }
    }
    Ok(slots)
}

/// Execute `budget` trials (skipping any already present in the records
/// file), appending each record to `records_path` as it completes. Trial
/// failures are recorded, not fatal. With `jobs > 1`, pending trials run
/// concurrently; results are still per-trial deterministic, but the order
/// of lines in the records file is not.
pub fn run_search(
    data: &SearchData,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    records_path: &Path,
    options: &EvalOptions,
    jobs: usize,
) -> Result<Vec<TrialRecord>> {
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    space.validate()?;
    data.check_variant(space.variant)?;

    let slots = read_existing_records(records_path, budget)?;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(records_path)?;

    let run_one = |iteration: usize| -> TrialRecord {
        let mut rng = seeding::rng(seed, STREAM_TRIAL ^ iteration as u64);
        let config = sample_config(space, &mut rng);
        let start = Instant::now();
        match run_trial(data, &config, options) {
            Ok((_, val, tst)) if val.is_finite() && tst.is_finite() => TrialRecord {
                iteration,
                config,
                validation_mrr: Some(val),
                test_mrr: Some(tst),
                train_seconds: start.elapsed().as_secs_f64(),
                status: TrialStatus::Ok,
            },
            _ => TrialRecord {
                iteration,
                config,
                validation_mrr: None,
                test_mrr: None,
                train_seconds: start.elapsed().as_secs_f64(),
                status: TrialStatus::Failed,
            },
        }
    };

    let pending: Vec<usize> = (0..budget).filter(|&i| slots[i].is_none()).collect();
    let sink = Mutex::new((file, slots));

    if jobs <= 1 {
        for iteration in pending {
            let record = run_one(iteration);
            let mut guard = sink.lock().unwrap();
            writeln!(guard.0, "{}", serde_json::to_string(&record)?)?;
            guard.0.flush()?;
            guard.1[iteration] = Some(record);
        }
    } else {
        let cursor = AtomicUsize::new(0);
        let write_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(pending.len().max(1)) {
                scope.spawn(|| loop {
                    let next = cursor.fetch_add(1, Ordering::SeqCst);
                    if next >= pending.len() {
                        break;
                    }
                    let iteration = pending[next];
                    let record = run_one(iteration);
                    let mut guard = sink.lock().unwrap();
                    let line = serde_json::to_string(&record).expect("record serializes");
                    let written = writeln!(guard.0, "{line}").and_then(|()| guard.0.flush());
                    guard.1[iteration] = Some(record);
                    drop(guard);
                    if let Err(e) = written {
                        *write_error.lock().unwrap() = Some(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = write_error.into_inner().unwrap() {
            return Err(e.into());
        }
    }

    let (_, slots) = sink.into_inner().unwrap();
    Ok(slots.into_iter().flatten().collect())
}

/// The trial whose validation MRR is maximal (ties: lowest iteration).
pub fn best_trial(records: &[TrialRecord]) -> Option<&TrialRecord> {
    records.iter().filter(|r| r.status == TrialStatus::Ok).fold(
        None,
        |best: Option<&TrialRecord>, r| match best {
            Some(b) if b.validation_mrr >= r.validation_mrr => Some(b),
            _ => Some(r),
        },
    )
}

/// Best-so-far curve: one point per ok trial, carrying the running maximum
/// of test MRR over the trials that improved the running validation maximum
/// (mirroring model selection on validation). With `gated = false` the
/// column is the plain running maximum of test MRR.
pub fn export_curve(records: &[TrialRecord], gated: bool) -> Result<Vec<(usize, f64)>> {
    let mut sorted: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| r.status == TrialStatus::Ok)
        .collect();
    sorted.sort_by_key(|r| r.iteration);
    if sorted.is_empty() {
        return Err(Error::EmptyDataset("no successful trials to export".into()));
    }
    let mut best_val = f64::NEG_INFINITY;
    let mut curve_value = f64::NEG_INFINITY;
    let mut curve = Vec::with_capacity(sorted.len());
    for r in sorted {
        let (val, tst) = (
            r.validation_mrr.unwrap_or(f64::NAN),
            r.test_mrr.unwrap_or(f64::NAN),
        );
        if gated {
            if val > best_val {
                best_val = val;
                curve_value = curve_value.max(tst);
            }
        } else {
            curve_value = curve_value.max(tst);
        }
        curve.push((r.iteration, curve_value));
    }
    Ok(curve)
}

/// Write a curve as CSV with header `iteration,best_test_mrr`.
pub fn write_curve_csv(curve: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("iteration,best_test_mrr\n");
    for (iteration, mrr) in curve {
        out.push_str(&format!("{iteration},{mrr}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}
