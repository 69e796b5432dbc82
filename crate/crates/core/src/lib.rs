//! Agent-specific mixed logit estimation from market-level choice shares.
//!
//! Each agent (a homogeneous market) receives its own taste vector by
//! projecting a cluster prior onto the set of parameters that reproduce the
//! agent's observed log-share ratios within a tolerance. Priors are refreshed
//! by k-means over the agent vectors and averaged until they settle.

pub mod analysis;
pub mod benchmarks;
pub mod data;
pub mod discount;
pub mod error;
pub mod estimator;
mod float_serde;
pub mod qp;
pub mod regression;
pub mod synthetic;

pub use error::{Error, Result};
