//! Closed forms, numerical oracles and a toy active-learning simulator for
//! pairwise loss-ranking objectives (hinge "Learning Loss" and its KL variant).
//!
//! Module map:
//! - [`specfun`]: Erlang antiderivative and CDF, `E₁`, signed log-space sums.
//! - [`margin_prob`]: `P(|X - Y| <= δ)` for i.i.d. Erlang losses.
//! - [`expected_grad`]: the conditional expected-gradient coefficient `φ(δ)`.
//! - [`rank_loss`]: hinge and KL pair objectives with exact gradients.
//! - [`gamma_fit`]: integer-shape gamma maximum likelihood.
//! - [`active_sim`]: pool-based acquisition on a heteroscedastic toy task.

// `!(x <= bound)` is used on purpose so NaN fails the guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active_sim;
pub mod error;
pub mod expected_grad;
pub mod gamma_fit;
pub mod margin_prob;
pub mod quadrature;
pub mod rank_loss;
pub mod sampling;
pub mod specfun;

pub use error::{Error, Result};
pub use sampling::McEstimate;
pub use specfun::{GammaParams, Sign, SignedLogValue, K_MAX};
