//! Mixture-model batch correction for multi-batch vector data.
//!
//! Each cell `X_bi` in batch `b` is modelled as a draw from
//! `N(mu_k + beta_bk, Sigma_k)` for its cluster `k`, with the batch effects of
//! every cluster summing to zero when weighted by cell counts. [`em::fit`]
//! alternates exact parameter updates with per-cell reassignment and then
//! subtracts the estimated effect from every cell.
//!
//! Supporting modules cover synthetic data generation ([`simgen`]),
//! initialization and cluster-count estimation ([`init`]), separability
//! analysis ([`snr`]) and evaluation ([`metrics`]).

pub mod em;
pub mod error;
pub mod hungarian;
pub mod init;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod simgen;
pub mod snr;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use matrix::RowMatrix;
pub use rng::RandomSource;
pub use types::{Assignment, Batch, GeneratorTag, ModelParams, MultiBatchDataset, RawBatch, SimTruth};
