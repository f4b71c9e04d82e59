//! Output-weighted sample selection for Bayesian regression.
//!
//! The crate fits Bayesian linear or basis regression models, scores
//! candidate next inputs under several acquisition criteria (mean model
//! error, mutual information and its Gaussian approximation, the
//! output-weighted Q criterion, and unknown-noise-variance variants), and
//! runs ensemble sequential-design campaigns over a set of benchmark
//! systems.
//!
//! Modules, bottom up:
//!
//! * [`stochastics`] — Gaussian quadratic-form moments, kernel density
//!   estimation, 1-D entropy, seeded sampling.
//! * [`regression`] — conjugate-prior posteriors, predictive
//!   distributions, rank-one hypothetical updates, empirical Bayes for
//!   unknown noise variance.
//! * [`criteria`] — acquisition criterion values and analytic gradients.
//! * [`optimizer`] — constrained optimization over the unit sphere, an
//!   angle grid, or a disk.
//! * [`benchmarks`] — the benchmark systems with exact parameters and
//!   ground-truth oracles.
//! * [`campaign`] — the sequential design loop and ensemble replication.
//!
//! Everything stochastic takes an explicit 64-bit seed (see [`rng`]);
//! ensembles are bit-reproducible regardless of thread count. Parallel
//! execution over ensemble repeats is provided by the `parallel` feature
//! (enabled by default); without it the same code runs sequentially.

pub mod benchmarks;
pub mod campaign;
pub mod criteria;
pub mod error;
pub mod optimizer;
pub mod regression;
pub mod rng;
pub mod stochastics;

pub use error::{OwlError, Result};
