//! Subcommand implementations: fit, search, stats, synth, export-curve.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use mixtastes::data::{
    build_sequences, compute_stats, generate_synthetic_markov, generate_synthetic_mixture,
    load_interactions, load_interactions_keep_repeats, random_split, user_disjoint_split,
    InteractionSet,
};
use mixtastes::eval::{evaluate_factorization, evaluate_sequence, EvalOptions};
use mixtastes::models::{init_params, save_checkpoint, ModelDims, Params};
use mixtastes::search::{
    best_trial, export_curve, run_search, write_curve_csv, SearchData, TrialRecord,
};
use mixtastes::train::{train_factorization, train_sequence};

use crate::config::{parse_dataset, DatasetSource, ExperimentConfig, ProtocolKind};
use crate::CliError;

/// Load or generate the interaction set. The factorization protocol collapses
/// duplicate (user, item) pairs; the sequence protocol keeps repeats.
fn materialize(config: &ExperimentConfig, seed: u64) -> Result<InteractionSet, CliError> {
    let dedup = config.protocol == ProtocolKind::Factorization;
    let set = match parse_dataset(&config.dataset)? {
        DatasetSource::Csv(path) => {
            if dedup {
                load_interactions(&path, config.min_user, config.min_item)?
            } else {
                load_interactions_keep_repeats(&path, config.min_user, config.min_item)?
            }
        }
        DatasetSource::Mixture {
            n_users,
            n_items,
            n_tastes,
            per_user,
        } => {
            let data = generate_synthetic_mixture(n_users, n_items, n_tastes, per_user, seed)?.data;
            if dedup {
                data.dedup()
            } else {
                data
            }
        }
        DatasetSource::Markov(spec) => {
            let data = generate_synthetic_markov(spec, seed)?.data;
            if dedup {
                data.dedup()
            } else {
                data
            }
        }
    };
    Ok(set)
}

/// Split the dataset under the configured protocol.
fn prepare_splits(config: &ExperimentConfig, seed: u64) -> Result<SearchData, CliError> {
    let fractions = (config.split[0], config.split[1], config.split[2]);
    let set = materialize(config, seed)?;
    match config.protocol {
        ProtocolKind::Factorization => {
            let [train, validation, test] = random_split(&set, fractions, seed)?;
            Ok(SearchData::Factorization {
                train,
                validation,
                test,
            })
        }
        ProtocolKind::Sequence => {
            let max_len = config.max_len.expect("validated");
            let [train, validation, test] = user_disjoint_split(&set, fractions, seed)?;
            Ok(SearchData::Sequence {
                train: build_sequences(&train, max_len)?,
                validation: build_sequences(&validation, max_len)?,
                test: build_sequences(&test, max_len)?,
            })
        }
    }
}

fn eval_options(config: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        exclude_known: config.exclude_known,
        per_user: config.per_user_mrr,
    }
}

/// Refuse to reuse an existing output directory unless `--force` is given.
fn claim_out_dir(out: &Path, force: bool) -> Result<(), CliError> {
    if out.exists() && !force {
        return Err(CliError::Config(format!(
            "output directory {} exists; pass --force to overwrite (search resumes from its records)",
            out.display()
        )));
    }
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    Ok(())
}

pub fn cmd_fit(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    force: bool,
) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let seed = seed.unwrap_or(config.seed);
    let hyper = config.hyper_config(seed)?;
    claim_out_dir(out, force)?;

    let data = prepare_splits(&config, seed)?;
    let options = eval_options(&config);

    let mut epoch_log = File::create(out.join("epochs.jsonl"))?;
    let (params, eval): (Params, _) = match &data {
        SearchData::Factorization {
            train,
            validation: _,
            test,
        } => {
            let dims = ModelDims {
                k: hyper.k,
                m: hyper.m,
                n_users: train.n_users,
                n_items: train.n_items,
            };
            let mut params = init_params(&dims, hyper.variant, seed);
            train_factorization(&mut params, train, &hyper, Some(&mut epoch_log))?;
            let eval = evaluate_factorization(&params, test, train, &options)?;
            (params, eval)
        }
        SearchData::Sequence {
            train,
            validation: _,
            test,
        } => {
            let dims = ModelDims {
                k: hyper.k,
                m: hyper.m,
                n_users: train.users.len(),
                n_items: train.n_items,
            };
            let mut params = init_params(&dims, hyper.variant, seed);
            train_sequence(&mut params, train, &hyper, Some(&mut epoch_log))?;
            let eval = evaluate_sequence(&params, test, &options)?;
            (params, eval)
        }
    };

    save_checkpoint(&params, out.join("checkpoint.json"))?;
    let eval_json = eval.to_json();
    std::fs::write(out.join("eval.json"), format!("{eval_json}\n"))?;
    println!("{eval_json}");
    Ok(())
}

pub fn cmd_search(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    jobs: usize,
    ungated: bool,
    force: bool,
) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let seed = seed.unwrap_or(config.seed);
    let (space, budget) = config.search_space()?;
    claim_out_dir(out, force)?;

    let data = prepare_splits(&config, seed)?;
    let options = eval_options(&config);
    let records = run_search(
        &data,
        &space,
        budget,
        seed,
        &out.join("trials.jsonl"),
        &options,
        jobs,
    )?;

    let curve = export_curve(&records, !ungated)?;
    write_curve_csv(&curve, &out.join("curve.csv"))?;

    let best = best_trial(&records)
        .ok_or_else(|| CliError::Runtime("every trial failed; nothing to select".into()))?;
    let best_json = serde_json::to_string(best).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(out.join("best.json"), format!("{best_json}\n"))?;
    println!("{best_json}");
    Ok(())
}

pub fn cmd_stats(data_path: &Path, min_user: usize, min_item: usize) -> Result<(), CliError> {
    let set = load_interactions(data_path, min_user, min_item)?;
    let stats = compute_stats(&set)?;
    println!("{}", stats.to_json());
    Ok(())
}

pub fn cmd_synth(descriptor: &str, out: &Path, seed: u64, force: bool) -> Result<(), CliError> {
    let descriptor = if descriptor.starts_with("synthetic:") {
        descriptor.to_string()
    } else {
        format!("synthetic:{descriptor}")
    };
    let data = match parse_dataset(&descriptor)? {
        DatasetSource::Csv(_) => {
            return Err(CliError::Config(
                "synth needs a synthetic descriptor".into(),
            ))
        }
        DatasetSource::Mixture {
            n_users,
            n_items,
            n_tastes,
            per_user,
        } => generate_synthetic_mixture(n_users, n_items, n_tastes, per_user, seed)?.data,
        DatasetSource::Markov(spec) => generate_synthetic_markov(spec, seed)?.data,
    };
    if out.exists() && !force {
        return Err(CliError::Config(format!(
            "{} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let mut file = File::create(out)?;
    writeln!(file, "user_id,item_id,rating,timestamp")?;
    for it in &data.interactions {
        writeln!(file, "{},{},1,{}", it.user, it.item, it.timestamp)?;
    }
    eprintln!(
        "wrote {} interactions over {} users and {} items to {}",
        data.len(),
        data.n_users,
        data.n_items,
        out.display()
    );
    Ok(())
}

pub fn cmd_export_curve(records_path: &Path, out: &Path, ungated: bool) -> Result<(), CliError> {
    let reader = BufReader::new(File::open(records_path)?);
    let mut records: Vec<TrialRecord> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| {
            CliError::Runtime(format!("bad record in {}: {e}", records_path.display()))
        })?);
    }
    let curve = export_curve(&records, !ungated)?;
    write_curve_csv(&curve, out)?;
    Ok(())
}
