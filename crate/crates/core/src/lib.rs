//! Desk-scale laboratory for off-dynamics offline return-conditioned
//! supervised learning on tabular MDPs: paired source/target environment
//! construction, offline dataset collection, return-augmentation
//! transforms (DARA-style reward correction, mean-variance matching, and
//! an exact CDF-matching oracle), return-conditioned policy training, and
//! evaluation against exact dynamic-programming baselines.

pub mod augment;
pub mod classifiers;
pub mod cli;
pub mod config;
pub mod data;
pub mod envs;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod rcsl;
pub mod rng;
pub mod shift;

pub use error::{Error, Result};

/// Version string embedded in output artifacts.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
