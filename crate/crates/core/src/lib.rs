//! Pessimistic off-policy evaluation, selection and learning for offline
//! contextual bandits.
//!
//! The crate is organized bottom-up:
//!
//! - [`bandit`] and [`policies`]: logged data, the [`Policy`] interface and
//!   the known-label [`Environment`] used for exact risks.
//! - [`estimators`]: the regularized IPS family, including logarithmic
//!   smoothing (LS) and its linearized variant.
//! - [`bounds`]: empirical-moment risk bounds, the LS bound, IX, empirical
//!   Bernstein and the sub-Gaussian interval.
//! - [`selection`]: pessimistic selection over a finite candidate set.
//! - [`lgp`] and [`pac`]: Linear Gaussian Policies and PAC-Bayesian bound
//!   minimization.
//! - [`datagen`]: multiclass-to-bandit conversion and policy construction.
//! - [`experiments`]: scenario matrices, coverage studies and metric output.

pub mod bandit;
pub mod bounds;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod lgp;
pub mod numeric;
pub mod optim;
pub mod pac;
pub mod policies;
pub mod rng;
pub mod selection;

pub use bandit::{
    importance_weight, true_risk, ActionId, Context, Environment, LoggedDataset, LoggedRecord, Policy,
};
pub use error::{Error, Result};
pub use rng::SeedStream;
