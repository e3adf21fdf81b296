//! Model parameter containers shared by the factorization and sequence
//! families, plus initialization and the checkpoint container.

pub mod factorization;
pub mod sequence;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::ParamArrays;
use crate::linalg::Mat;
use crate::seeding;

pub use factorization::{
    mixture_weights, project_tastes, score_mixture, EmfParams, MfParams, PmfParams,
};
pub use sequence::LstmParams;

const STREAM_INIT: u64 = 0x696e6974;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Embedding dimensionality `k`, mixture size `m`, and the id spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub k: usize,
    pub m: usize,
    pub n_users: usize,
    pub n_items: usize,
}

/// Model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mf,
    Emf,
    Pmf,
    Lstm,
    Mlstm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Mf,
        Variant::Emf,
        Variant::Pmf,
        Variant::Lstm,
        Variant::Mlstm,
    ];

    pub fn is_sequence(self) -> bool {
        matches!(self, Variant::Lstm | Variant::Mlstm)
    }

    /// Mixture variants carry `m` taste components; the baselines are single-vector.
    pub fn is_mixture(self) -> bool {
        matches!(self, Variant::Emf | Variant::Pmf | Variant::Mlstm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mf => "mf",
            Variant::Emf => "emf",
            Variant::Pmf => "pmf",
            Variant::Lstm => "lstm",
            Variant::Mlstm => "mlstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Variant::Mf),
            "emf" => Ok(Variant::Emf),
            "pmf" => Ok(Variant::Pmf),
            "lstm" => Ok(Variant::Lstm),
            "mlstm" => Ok(Variant::Mlstm),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Item-side parameters shared by every model: tied embeddings plus a bias
/// per item. Row 0 is the padding item and stays exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    /// (n_items + 1) x k; row 0 frozen at zero.
    pub embeddings: Mat,
    /// (n_items + 1) x 1; entry 0 frozen at zero.
    pub biases: Mat,
}

impl ItemParams {
    fn init(n_items: usize, k: usize, rng: &mut impl Rng) -> Self {
        let mut embeddings = Mat::zeros(n_items + 1, k);
        fill_normal(&mut embeddings, 1, rng, 1.0 / (k as f64).sqrt());
        ItemParams {
            embeddings,
            biases: Mat::zeros(n_items + 1, 1),
        }
    }

    #[inline]
    pub fn embedding(&self, item: u32) -> &[f64] {
        self.embeddings.row(item as usize)
    }

    #[inline]
    pub fn bias(&self, item: u32) -> f64 {
        self.biases.get(item as usize, 0)
    }

    pub fn n_items(&self) -> usize {
        self.embeddings.rows - 1
    }

    /// The reserved padding row must never drift away from zero.
    pub fn padding_row_is_zero(&self) -> bool {
        self.embeddings.row(0).iter().all(|&x| x == 0.0) && self.biases.get(0, 0) == 0.0
    }
}

/// Per-component linear projections from a single k-vector into m taste and
/// m attention vectors. Shared across all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHeads {
    /// (m * k) x k; rows `h*k..(h+1)*k` hold component h's taste projection.
    pub taste_weights: Mat,
    /// m x k; row h is component h's taste bias.
    pub taste_biases: Mat,
    /// (m * k) x k, as `taste_weights` for the attention projections.
    pub attention_weights: Mat,
    /// m x k.
    pub attention_biases: Mat,
}

impl ProjectionHeads {
    fn init(m: usize, k: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (k as f64).sqrt();
        let mut taste_weights = Mat::zeros(m * k, k);
        fill_normal(&mut taste_weights, 0, rng, scale);
        let mut attention_weights = Mat::zeros(m * k, k);
        fill_normal(&mut attention_weights, 0, rng, scale);
        ProjectionHeads {
            taste_weights,
            taste_biases: Mat::zeros(m, k),
            attention_weights,
            attention_biases: Mat::zeros(m, k),
        }
    }

    /// Heads that reproduce the identity map: every component's taste and
    /// attention projection is I with zero bias.
    pub fn identity(m: usize, k: usize) -> Self {
        let stacked = || {
            let mut w = Mat::zeros(m * k, k);
            for h in 0..m {
                for d in 0..k {
                    w.set(h * k + d, d, 1.0);
                }
            }
            w
        };
        ProjectionHeads {
            taste_weights: stacked(),
            taste_biases: Mat::zeros(m, k),
            attention_weights: stacked(),
            attention_biases: Mat::zeros(m, k),
        }
    }

    pub fn n_components(&self) -> usize {
        self.taste_biases.rows
    }

    pub fn dim(&self) -> usize {
        self.taste_weights.cols
    }

    /// Apply component `h`'s projection pair: `out = z W[h] + B[h]`.
    #[inline]
    pub(crate) fn project_component(
        &self,
        h: usize,
        z: &[f64],
        taste_out: &mut [f64],
        attn_out: &mut [f64],
    ) {
        let k = self.dim();
        project_rows(z, &self.taste_weights, h * k, taste_out);
        for (o, b) in taste_out.iter_mut().zip(self.taste_biases.row(h)) {
            *o += b;
        }
        project_rows(z, &self.attention_weights, h * k, attn_out);
        for (o, b) in attn_out.iter_mut().zip(self.attention_biases.row(h)) {
            *o += b;
        }
    }
}

/// out = z * W where W is the k x k block starting at `row_offset`.
#[inline]
fn project_rows(z: &[f64], stacked: &Mat, row_offset: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (r, &zr) in z.iter().enumerate() {
        if zr == 0.0 {
            continue;
        }
        let w_row = stacked.row(row_offset + r);
        for (o, &w) in out.iter_mut().zip(w_row) {
            *o += zr * w;
        }
    }
}

fn fill_normal(mat: &mut Mat, from_row: usize, rng: &mut impl Rng, scale: f64) {
    for r in from_row..mat.rows {
        for v in mat.row_mut(r) {
            let n: f64 = rng.sample(StandardNormal);
            *v = n * scale;
        }
    }
}

/// A trained (or initialized) model of any variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Params {
    Mf(MfParams),
    Emf(EmfParams),
    Pmf(PmfParams),
    Lstm(LstmParams),
    Mlstm(LstmParams),
}

impl Params {
    pub fn variant(&self) -> Variant {
        match self {
            Params::Mf(_) => Variant::Mf,
            Params::Emf(_) => Variant::Emf,
            Params::Pmf(_) => Variant::Pmf,
            Params::Lstm(_) => Variant::Lstm,
            Params::Mlstm(_) => Variant::Mlstm,
        }
    }

    pub fn dims(&self) -> &ModelDims {
        match self {
            Params::Mf(p) => &p.dims,
            Params::Emf(p) => &p.dims,
            Params::Pmf(p) => &p.dims,
            Params::Lstm(p) | Params::Mlstm(p) => &p.dims,
        }
    }

    pub fn items(&self) -> &ItemParams {
        match self {
            Params::Mf(p) => &p.items,
            Params::Emf(p) => &p.items,
            Params::Pmf(p) => &p.items,
            Params::Lstm(p) | Params::Mlstm(p) => &p.items,
        }
    }

    /// Pointwise score for the factorization variants.
    pub fn score(&self, user: u32, item: u32) -> Result<f64> {
        match self {
            Params::Mf(p) => p.score(user, item),
            Params::Emf(p) => p.score(user, item),
            Params::Pmf(p) => p.score(user, item),
            _ => Err(Error::Contract(
                "sequence variants score from hidden states, not user ids".into(),
            )),
        }
    }

    /// Scores over the whole catalog for one user; element `j - 1` is the
    /// score of item `j`. Factorization variants only.
    pub fn score_all_items(&self, user: u32) -> Result<Vec<f64>> {
        match self {
            Params::Mf(p) => p.score_all_items(user),
            Params::Emf(p) => p.score_all_items(user),
            Params::Pmf(p) => p.score_all_items(user),
            _ => Err(Error::Contract(
                "sequence variants score from hidden states, not user ids".into(),
            )),
        }
    }

    pub fn as_lstm(&self) -> Result<&LstmParams> {
        match self {
            Params::Lstm(p) | Params::Mlstm(p) => Ok(p),
            _ => Err(Error::Contract("expected a sequence variant".into())),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.is_finite())
    }
}

impl ParamArrays for Params {
    fn arrays(&self) -> Vec<&Mat> {
        match self {
            Params::Mf(p) => p.arrays(),
            Params::Emf(p) => p.arrays(),
            Params::Pmf(p) => p.arrays(),
            Params::Lstm(p) | Params::Mlstm(p) => p.arrays(),
        }
    }

    fn arrays_mut(&mut self) -> Vec<&mut Mat> {
        match self {
            Params::Mf(p) => p.arrays_mut(),
            Params::Emf(p) => p.arrays_mut(),
            Params::Pmf(p) => p.arrays_mut(),
            Params::Lstm(p) | Params::Mlstm(p) => p.arrays_mut(),
        }
    }
}

/// Draw fresh parameters for `variant`. Embeddings and projection weights are
/// i.i.d. normal with standard deviation 1/sqrt(k); biases start at zero
/// (except the LSTM forget gate, biased to 1) and the padding row is zero.
pub fn init_params(dims: &ModelDims, variant: Variant, seed: u64) -> Params {
    let mut rng = seeding::rng(seed, STREAM_INIT);
    let scale = 1.0 / (dims.k as f64).sqrt();
    let dims = ModelDims {
        m: if variant.is_mixture() { dims.m } else { 1 },
        ..*dims
    };

    match variant {
        Variant::Mf => {
            let mut user_embeddings = Mat::zeros(dims.n_users, dims.k);
            fill_normal(&mut user_embeddings, 0, &mut rng, scale);
            Params::Mf(MfParams {
                dims,
                user_embeddings,
                items: ItemParams::init(dims.n_items, dims.k, &mut rng),
            })
        }
        Variant::Emf => {
            let mut user_tastes = Mat::zeros(dims.n_users, dims.m * dims.k);
            fill_normal(&mut user_tastes, 0, &mut rng, scale);
            let mut user_attentions = Mat::zeros(dims.n_users, dims.m * dims.k);
            fill_normal(&mut user_attentions, 0, &mut rng, scale);
            Params::Emf(EmfParams {
                dims,
                user_tastes,
                user_attentions,
                items: ItemParams::init(dims.n_items, dims.k, &mut rng),
            })
        }
        Variant::Pmf => {
            let mut user_embeddings = Mat::zeros(dims.n_users, dims.k);
            fill_normal(&mut user_embeddings, 0, &mut rng, scale);
            Params::Pmf(PmfParams {
                dims,
                user_embeddings,
                heads: ProjectionHeads::init(dims.m, dims.k, &mut rng),
                items: ItemParams::init(dims.n_items, dims.k, &mut rng),
            })
        }
        Variant::Lstm => Params::Lstm(LstmParams::init(&dims, None, &mut rng)),
        Variant::Mlstm => {
            let heads = ProjectionHeads::init(dims.m, dims.k, &mut rng);
            Params::Mlstm(LstmParams::init(&dims, Some(heads), &mut rng))
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    #[serde(flatten)]
    params: Params,
}

/// Write a lossless JSON checkpoint (see `docs/checkpoint.md` for the layout).
pub fn save_checkpoint(params: &Params, path: impl AsRef<Path>) -> Result<()> {
    let file = CheckpointFile {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        params: params.clone(),
    };
    let mut json = serde_json::to_string(&file)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Params> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint schema_version {}",
            file.schema_version
        )));
    }
    if !file.params.items().padding_row_is_zero() {
        return Err(Error::Contract("checkpoint padding row is not zero".into()));
    }
    Ok(file.params)
}

pub(crate) fn check_item(dims: &ModelDims, item: u32) -> Result<()> {
    if item == 0 || item as usize > dims.n_items {
        return Err(Error::Index(format!(
            "item {item} outside [1, {}]",
            dims.n_items
        )));
    }
    Ok(())
}

/// Shared helper for id checks on the factorization scoring paths.
pub(crate) fn check_ids(dims: &ModelDims, user: u32, item: u32) -> Result<()> {
    if user as usize >= dims.n_users {
        return Err(Error::Index(format!(
            "user {user} outside [0, {})",
            dims.n_users
        )));
    }
    check_item(dims, item)
}

/// Project a hidden state through the heads and score `item` with the
/// mixture rule; the step-wise scoring path of the sequence mixture model.
pub(crate) fn mixture_score_from_state(
    state: &[f64],
    heads: &ProjectionHeads,
    items: &ItemParams,
    item: u32,
) -> f64 {
    let (m, k) = (heads.n_components(), heads.dim());
    let mut tastes = vec![0.0; m * k];
    let mut attentions = vec![0.0; m * k];
    apply_projections(state, heads, &mut tastes, &mut attentions);
    factorization::mixture_value(&tastes, &attentions, items.embedding(item)) + items.bias(item)
}

pub(crate) fn apply_projections(
    z: &[f64],
    heads: &ProjectionHeads,
    tastes: &mut [f64],
    attentions: &mut [f64],
) {
    let (m, k) = (heads.n_components(), heads.dim());
    debug_assert_eq!(z.len(), k);
    debug_assert_eq!(tastes.len(), m * k);
    debug_assert_eq!(attentions.len(), m * k);
    for h in 0..m {
        heads.project_component(
            h,
            z,
            &mut tastes[h * k..(h + 1) * k],
            &mut attentions[h * k..(h + 1) * k],
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(k: usize, m: usize) -> ModelDims {
        ModelDims {
            k,
            m,
            n_users: 5,
            n_items: 9,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        for variant in Variant::ALL {
            let a = init_params(&dims(4, 3), variant, 42);
            let b = init_params(&dims(4, 3), variant, 42);
            let c = init_params(&dims(4, 3), variant, 43);
            assert_eq!(a, b, "{variant}");
            assert_ne!(a, c, "{variant}");
        }
    }

    #[test]
    fn init_zeroes_biases_and_padding() {
        for variant in Variant::ALL {
            let p = init_params(&dims(4, 2), variant, 1);
            assert!(p.items().padding_row_is_zero(), "{variant}");
            assert!(p.items().biases.data.iter().all(|&b| b == 0.0), "{variant}");
            assert!(p.is_finite());
        }
    }

    #[test]
    fn init_moments_match_declared_scale() {
        let d = ModelDims {
            k: 32,
            m: 1,
            n_users: 1,
            n_items: 1000,
        };
        let p = init_params(&d, Variant::Mf, 7);
        let e = &p.items().embeddings.data[32..]; // skip padding row
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        let var = e.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let target = 1.0 / 32f64.sqrt();
        // 3 sigma of the sampling error of mean and std for n = 32_000 draws
        assert!(mean.abs() <= 3.0 * target / n.sqrt(), "mean {mean}");
        assert!(
            (std - target).abs() <= 3.0 * target / (2.0 * n).sqrt(),
            "std {std}"
        );
    }

    #[test]
    fn baseline_variants_force_single_component() {
        let p = init_params(&dims(4, 6), Variant::Mf, 0);
        assert_eq!(p.dims().m, 1);
        let p = init_params(&dims(4, 6), Variant::Lstm, 0);
        assert_eq!(p.dims().m, 1);
        let p = init_params(&dims(4, 6), Variant::Emf, 0);
        assert_eq!(p.dims().m, 6);
    }

    #[test]
    fn checkpoint_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        for variant in Variant::ALL {
            let p = init_params(&dims(3, 2), variant, 99);
            let path = dir.path().join(format!("{variant}.json"));
            save_checkpoint(&p, &path).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(p, loaded, "{variant}");
        }
    }

    #[test]
    fn checkpoint_rejects_unknown_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = init_params(&dims(2, 1), Variant::Mf, 0);
        let path = dir.path().join("ck.json");
        save_checkpoint(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\":1", "\"schema_version\":2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Config(_))));
    }

    #[test]
    fn identity_heads_project_to_input() {
        let heads = ProjectionHeads::identity(3, 4);
        let z = [0.5, -1.0, 2.0, 0.25];
        let (tastes, attentions) = project_tastes(&z, &heads).unwrap();
        for h in 0..3 {
            assert_eq!(&tastes[h * 4..(h + 1) * 4], &z);
            assert_eq!(&attentions[h * 4..(h + 1) * 4], &z);
        }
    }
}
