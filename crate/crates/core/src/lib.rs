//! Hedonic price indexes from a multilevel model with AR(1) random time
//! effects and stochastic volatility in the level-1 variance.
//!
//! The likelihood integrates the two latent states numerically on a
//! Gauss-Legendre grid with forward and backward recursions.

// Negated comparisons below deliberately treat NaN as invalid.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod quadrature;
pub mod simulate;
pub mod svcore;

pub use baseline::{are_loglik, fit_are, fit_fe, AreParams, FeParams};
pub use data::{load_csv, split_holdout, CodingPlan, Dataset, Group, HoldoutMode};
pub use error::{Error, Result};
pub use estimate::{fit_svare, FitResult, Model, ModelParams, SvareFitOptions};
pub use quadrature::{build_grid, gl_rule, QuadGrid};
pub use svcore::{estimate_states, StateEstimates, SvareParams};
