//! Desk-scale federated optimization of frecency ranking weights.
//!
//! A server repeatedly samples a subset of synthetic clients, each of which
//! replays simulated URL-bar searches against its own browsing history,
//! scores the suggestion list with the current weights, and reports a
//! finite-difference gradient of a ranking loss on its clicks. The server
//! aggregates the reports (weighted average or sign vote), applies a
//! sign-driven Rprop step with safeguard projection, and iterates. Everything
//! is deterministic under a single run seed, including across thread counts
//! and process restarts.
//!
//! Module map:
//! - [`frecency`]: the parameterized ranking score and its weight vector
//! - [`loss`]: pointwise SVM ranking loss on one search event
//! - [`grad`]: black-box finite-difference gradients
//! - [`rprop`]: the optimizer, sign-vote aggregation, and projection
//! - [`clients`]: synthetic histories, search/click simulation, client updates
//! - [`protocol`]: the server loop, snapshots, and the update log
//! - [`analysis`]: loss curves, Mann-Whitney comparisons, stability study
//! - [`config`]: TOML experiment definitions (fail-closed parsing)
//! - [`rng`]: seed-derived deterministic streams and samplers

// Validation code writes `!(x > 0.0)` instead of `x <= 0.0` on purpose: the
// negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod clients;
pub mod config;
pub mod error;
pub mod frecency;
pub mod grad;
pub mod loss;
pub mod protocol;
pub mod rng;
pub mod rprop;

pub use error::{Error, Result};
