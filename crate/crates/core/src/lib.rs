//! Dynamic feature-switching ("churn") training.
//!
//! A model is trained on a fixed-size active feature set drawn from a much
//! larger pool. After every training period the least useful active features
//! are replaced by fresh candidates while the weights of the retained
//! features are carried over unchanged, so the search over the pool never
//! restarts training from scratch.
//!
//! The crate is organised around that loop:
//!
//! - [`pool`] — feature pools: multinomial terms over base features, and
//!   pixel / pixel-pair / pixel-square features with deviation filtering.
//! - [`models`] — from-scratch trainable models whose weight layout is
//!   positionally aligned with the active set: a full-batch gradient-descent
//!   linear regressor and a one-hidden-layer softmax MLP.
//! - [`usefulness`] — per-feature usefulness scores and elimination ranking.
//! - [`churn`] — the engine: train, score, eliminate, redraw, splice weights,
//!   apply the elimination schedule, terminate.
//! - [`data`] — dataset construction: the synthetic regression task, IDX
//!   image parsing, image reduction and splits.
//! - [`metrics`] — per-step metrics records, CSV export and run summaries.
//!
//! All numeric code is generic over a [`Scalar`] (`f32` or `f64`); [`Real`]
//! is the concrete alias the shipped binaries use.

pub mod churn;
pub mod data;
pub mod metrics;
pub mod models;
pub mod pool;
pub mod scalar;
pub mod usefulness;

pub use scalar::Scalar;

/// Default scalar type for the shipped experiments.
pub type Real = f64;

/// A regression model over `Real`.
pub type RealRegressionModel = models::RegressionModel<Real>;

/// An MLP model over `Real`.
pub type RealMlpModel = models::MlpModel<Real>;
