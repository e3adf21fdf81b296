//! Experiment configuration file (TOML) and the synthetic dataset
//! descriptors. See `docs/experiment-config.md` for the schema.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use mixtastes::data::MarkovSpec;
use mixtastes::models::Variant;
use mixtastes::search::SearchSpace;
use mixtastes::train::{HyperConfig, LossKind};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Factorization,
    Sequence,
}

/// One experiment: a dataset, a protocol, and either a fixed hyperparameter
/// point (`[hyper]`, used by `fit`) or a search space with a budget
/// (`[search]`, used by `search`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// CSV path or `synthetic:mixture:...` / `synthetic:markov:...`
    pub dataset: String,
    pub protocol: ProtocolKind,
    pub split: [f64; 3],
    pub seed: u64,
    #[serde(default)]
    pub min_user: usize,
    #[serde(default)]
    pub min_item: usize,
    /// Sequence protocol only: padded sequence width.
    pub max_len: Option<usize>,
    #[serde(default = "default_true")]
    pub exclude_known: bool,
    #[serde(default)]
    pub per_user_mrr: bool,
    pub hyper: Option<HyperSection>,
    pub search: Option<SearchSection>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSection {
    pub variant: String,
    pub k: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    pub loss: String,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    #[serde(default = "default_attempts")]
    pub max_neg_attempts: usize,
}

fn default_m() -> usize {
    1
}

fn default_attempts() -> usize {
    5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub variant: String,
    pub k: usize,
    pub budget: usize,
    pub learning_rate: Option<[f64; 2]>,
    pub l2: Option<[f64; 2]>,
    pub batch_sizes: Option<Vec<usize>>,
    pub epoch_choices: Option<Vec<usize>>,
    pub losses: Option<Vec<String>>,
    pub components: Option<Vec<usize>>,
    pub max_neg_attempts: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.protocol == ProtocolKind::Sequence {
            match self.max_len {
                Some(l) if l >= 2 => {}
                _ => {
                    return Err(CliError::Config(
                        "sequence protocol needs max_len >= 2".into(),
                    ))
                }
            }
        }
        if let Some(h) = &self.hyper {
            let variant = parse_variant(&h.variant)?;
            self.check_protocol_variant(variant)?;
        }
        if let Some(s) = &self.search {
            let variant = parse_variant(&s.variant)?;
            self.check_protocol_variant(variant)?;
            if s.budget == 0 {
                return Err(CliError::Config("search budget must be at least 1".into()));
            }
        }
        Ok(())
    }

    fn check_protocol_variant(&self, variant: Variant) -> Result<(), CliError> {
        let wants_sequence = self.protocol == ProtocolKind::Sequence;
        if variant.is_sequence() != wants_sequence {
            return Err(CliError::Config(format!(
                "variant `{variant}` is incompatible with the {} protocol",
                if wants_sequence {
                    "sequence"
                } else {
                    "factorization"
                }
            )));
        }
        Ok(())
    }

    /// The fixed hyperparameter point for `fit`.
    pub fn hyper_config(&self, seed: u64) -> Result<HyperConfig, CliError> {
        let h = self
            .hyper
            .as_ref()
            .ok_or_else(|| CliError::Config("fit needs a [hyper] section".into()))?;
        let cfg = HyperConfig {
            variant: parse_variant(&h.variant)?,
            k: h.k,
            m: h.m,
            loss: parse_loss(&h.loss)?,
            learning_rate: h.learning_rate,
            l2: h.l2,
            batch_size: h.batch_size,
            n_epochs: h.n_epochs,
            max_neg_attempts: h.max_neg_attempts,
            seed,
        }
        .normalized();
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// The search space and budget for `search`.
    pub fn search_space(&self) -> Result<(SearchSpace, usize), CliError> {
        let s = self
            .search
            .as_ref()
            .ok_or_else(|| CliError::Config("search needs a [search] section".into()))?;
        let mut space = SearchSpace::new(parse_variant(&s.variant)?, s.k);
        if let Some([lo, hi]) = s.learning_rate {
            space.learning_rate = (lo, hi);
        }
        if let Some([lo, hi]) = s.l2 {
            space.l2 = (lo, hi);
        }
        if let Some(b) = &s.batch_sizes {
            space.batch_sizes = b.clone();
        }
        if let Some(e) = &s.epoch_choices {
            space.epoch_choices = e.clone();
        }
        if let Some(l) = &s.losses {
            space.losses = l.iter().map(|x| parse_loss(x)).collect::<Result<_, _>>()?;
        }
        if let Some(c) = &s.components {
            space.components = c.clone();
        }
        if let Some(a) = s.max_neg_attempts {
            space.max_neg_attempts = a;
        }
        Ok((space, s.budget))
    }
}

pub fn parse_variant(s: &str) -> Result<Variant, CliError> {
    s.parse()
        .map_err(|e: mixtastes::Error| CliError::Config(e.to_string()))
}

pub fn parse_loss(s: &str) -> Result<LossKind, CliError> {
    s.parse()
        .map_err(|e: mixtastes::Error| CliError::Config(e.to_string()))
}

/// Where the interactions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Csv(PathBuf),
    Mixture {
        n_users: usize,
        n_items: usize,
        n_tastes: usize,
        per_user: usize,
    },
    Markov(MarkovSpec),
}

/// Parse a dataset field: a CSV path, or a descriptor of the form
/// `synthetic:mixture:n_users=2000,n_items=400,n_tastes=8,per_user=40` /
/// `synthetic:markov:n_users=800,n_items=240,n_tastes=8,seq_len=30`.
pub fn parse_dataset(field: &str) -> Result<DatasetSource, CliError> {
    let Some(rest) = field.strip_prefix("synthetic:") else {
        return Ok(DatasetSource::Csv(PathBuf::from(field)));
    };
    let (kind, args) = rest.split_once(':').ok_or_else(|| {
        CliError::Config(format!("synthetic descriptor needs parameters: `{field}`"))
    })?;
    let mut kv = HashMap::new();
    for pair in args.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("bad descriptor parameter `{pair}`")))?;
        kv.insert(key.trim().to_string(), value.trim().to_string());
    }
    let take_usize = |kv: &mut HashMap<String, String>, key: &str| -> Result<usize, CliError> {
        kv.remove(key)
            .ok_or_else(|| CliError::Config(format!("descriptor missing `{key}`")))?
            .parse()
            .map_err(|_| CliError::Config(format!("descriptor `{key}` must be an integer")))
    };
    let take_f64 =
        |kv: &mut HashMap<String, String>, key: &str, default: f64| -> Result<f64, CliError> {
            match kv.remove(key) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| CliError::Config(format!("descriptor `{key}` must be a number"))),
            }
        };

    let source = match kind {
        "mixture" => DatasetSource::Mixture {
            n_users: take_usize(&mut kv, "n_users")?,
            n_items: take_usize(&mut kv, "n_items")?,
            n_tastes: take_usize(&mut kv, "n_tastes")?,
            per_user: take_usize(&mut kv, "per_user")?,
        },
        "markov" => DatasetSource::Markov(MarkovSpec {
            n_users: take_usize(&mut kv, "n_users")?,
            n_items: take_usize(&mut kv, "n_items")?,
            n_tastes: take_usize(&mut kv, "n_tastes")?,
            seq_len: take_usize(&mut kv, "seq_len")?,
            switch_prob: take_f64(&mut kv, "switch_prob", 0.15)?,
            advance_prob: take_f64(&mut kv, "advance_prob", 0.85)?,
        }),
        other => {
            return Err(CliError::Config(format!(
                "unknown synthetic kind `{other}`"
            )))
        }
    };
    if let Some(extra) = kv.keys().next() {
        return Err(CliError::Config(format!(
            "unknown descriptor parameter `{extra}`"
        )));
    }
    Ok(source)
}
