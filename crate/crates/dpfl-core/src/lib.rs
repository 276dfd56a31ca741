//! A deterministic desk-scale laboratory for differentially private
//! federated learning.
//!
//! The crate provides the full pipeline: synthetic and IDX datasets with
//! non-IID Dirichlet partitioning ([`data`]), small classifiers with exact
//! per-sample gradients and a head/body parameter split ([`models`]), the
//! clip-and-noise DP mechanism ([`privacy`]), the federated round loop with
//! scratch / full fine-tuning / head fine-tuning strategies ([`federation`]),
//! membership and source inference audits ([`attacks`]), and trace
//! diagnostics ([`analysis`]).
//!
//! Everything is a pure function of its inputs and seeds: the same
//! configuration always reproduces the same run bit for bit.

pub mod analysis;
pub mod attacks;
pub mod data;
pub mod error;
pub mod federation;
pub mod models;
pub mod privacy;
pub mod rng;

pub use data::LabeledDataset;
pub use error::{Error, Result};
