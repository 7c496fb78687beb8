//! Robust joint-block-sparse Bayesian recovery for multi-shot subject
//! identification.
//!
//! The library solves `Y = A X + V + E` where `A` is a gallery dictionary
//! whose columns are grouped into per-subject blocks, `Y` holds `L` probe
//! frames of a single unknown subject, `V` is dense Gaussian noise and `E`
//! is a sparse outlier field. Variational inference produces posterior
//! coefficient and outlier estimates; an iterative rank-and-remove loop
//! turns them into a full subject ranking. Deterministic `l1` baselines and
//! a synthetic evaluation harness round out the crate.

pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod gallery;
pub mod inference;
pub mod io;
pub mod ranking;
pub mod synth;

pub use config::{RunConfig, WoodburyMode};
pub use error::{Error, Result};
pub use gallery::{Gallery, ProbeSet, SubjectId};
pub use inference::{Hyperparams, InferenceConfig, InferenceOutcome, PosteriorState};
pub use ranking::{RankingConfig, RankingResult, ResidualKind};
