//! Boosted nonparametric hazard regression with time-dependent covariates.
//!
//! The log-hazard is a histogram function over a partition of the
//! time-covariate domain. Gradient boosting with shallow weighted
//! regression trees minimizes the negative log-likelihood; a queueing
//! simulator generates test data with a known hazard.

pub mod boost;
pub mod cli;
pub mod crossval;
pub mod error;
pub mod funcdata;
pub mod hazrisk;
pub mod partition;
pub mod simqueue;
pub mod treelearn;

pub use error::{Error, Result};
