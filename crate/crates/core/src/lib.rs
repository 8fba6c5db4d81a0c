//! Unbiased learning to rank.
//!
//! The crate simulates biased user clicks over LETOR-style data, trains
//! ranking models with counterfactual (IPW, DLA, REM, PD) and bandit
//! (DBGD, MGD, NSGD, PDGD) learners, and evaluates them with the usual
//! ranking metrics.
//!
//! The moving parts, bottom-up:
//!
//! - [`dataset`]: LETOR/SVMlight parsing, cutoffs, padding, synthetic corpora.
//! - [`clicksim`]: position-based, cascade and user-browsing click models.
//! - [`scorers`]: linear and MLP scoring functions with manual backprop.
//! - [`losses`]: softmax, sigmoid, pairwise and pairwise cross-entropy losses.
//! - [`propensity`]: oracle, basic and randomized examination propensities.
//! - [`optim`]: SGD / AdaGrad with gradient-norm clipping.
//! - [`counterfactual`] and [`bandit`]: the eight learning algorithms.
//! - [`feeds`]: the four input-feed strategies.
//! - [`metrics`]: MRR, ERR, ARP, DCG, nDCG, precision, MAP, OPA.
//! - [`pipeline`]: experiment config, training loop, checkpoints, evaluation.

pub mod bandit;
pub mod clicksim;
pub mod counterfactual;
pub mod dataset;
pub mod error;
pub mod feeds;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod propensity;
pub mod rng;
pub mod scorers;

pub use error::{Error, Result};

/// Inverse propensity weights are capped at this value (propensities are
/// floored at its reciprocal).
pub const MAX_INVERSE_WEIGHT: f64 = 100.0;
