//! Joint optimization of cyclic delivery schedules and producer purchasing
//! for inventory routing under stochastic supply and demand.
//!
//! The pipeline: [`clustergen::enumerate`] prices every feasible cluster,
//! [`setpart::solve`] picks a partition of the customers under penalty
//! weights on the per-period load profile, [`mdp::solve`] computes the
//! purchasing policy for the resulting producer outflow, and
//! [`search::line_search`] tunes the penalty weights.

pub mod clustergen;
pub mod error;
pub mod instance;
pub mod mdp;
pub mod routing;
pub mod search;
pub mod setpart;
pub mod simulate;
pub mod stochastics;

pub use error::{Error, Result};
