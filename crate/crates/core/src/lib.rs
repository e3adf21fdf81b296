//! Implicit-feedback ranking models that represent a user as a mixture of
//! several distinct tastes, next to their exact single-vector baselines.
//!
//! The crate covers the full experimental loop at desk scale:
//!
//! * [`data`] — interaction-log ingestion, pruning, id remapping, the two
//!   split protocols, padded sequences, and synthetic generators.
//! * [`models`] — parameter containers and forward scoring for the
//!   factorization family (MF / EM-F / PM-F) and the sequence family
//!   (LSTM / M-LSTM), plus JSON checkpoints.
//! * [`train`] — pairwise ranking losses with uniform or adaptive negative
//!   sampling, ADAM with sparse updates, and the epoch loops.
//! * [`eval`] — mean reciprocal rank under both evaluation protocols.
//! * [`search`] — random hyperparameter search with persisted, resumable
//!   trials and best-so-far curve export.

pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod gradcheck;
pub mod linalg;
pub mod models;
pub mod search;
pub mod seeding;
pub mod train;

pub use error::{Error, Result};
