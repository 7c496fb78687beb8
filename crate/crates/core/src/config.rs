//! JSON configuration envelope.
//!
//! The document accepts exactly the keys `lambda`, `alpha_gamma`,
//! `beta_gamma`, `alpha_delta`, `beta_delta`, `T`, `tol`, `zeta`, `tau`,
//! `precision_floor`, `use_woodbury`, `seed` plus the nested `baseline`
//! block; anything else is rejected.

use serde::{Deserialize, Serialize};

use crate::baselines::L1Config;
use crate::error::{Error, Result};
use crate::gallery::Gallery;
use crate::inference::{Hyperparams, InferenceConfig};
use nalgebra::DMatrix;

/// Covariance computation path for the coefficient posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WoodburyMode {
    /// Use the low-rank identity when the feature dimension is smaller than
    /// the number of gallery columns.
    #[default]
    Auto,
    Always,
    Never,
}

fn default_lambda() -> f64 {
    1.0
}
fn default_iters() -> usize {
    30
}
fn default_unit() -> f64 {
    1.0
}
fn default_precision_floor() -> f64 {
    1e-12
}

/// Inference and ranking hyperparameters in JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dense-noise variance. Selected externally (e.g. by cross-validation).
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub alpha_gamma: f64,
    #[serde(default)]
    pub beta_gamma: f64,
    #[serde(default)]
    pub alpha_delta: f64,
    #[serde(default)]
    pub beta_delta: f64,
    /// Inference sweeps per ranking round.
    #[serde(rename = "T", default = "default_iters")]
    pub max_iters: usize,
    /// Early-stop threshold on the max relative change of the coefficient
    /// mean; 0 disables early stopping.
    #[serde(default)]
    pub tol: f64,
    /// Fraction of the iteration budget at which ranking snapshots state.
    #[serde(default = "default_unit")]
    pub zeta: f64,
    /// Per-rank geometric decay of the iteration budget.
    #[serde(default = "default_unit")]
    pub tau: f64,
    /// Relative denominator guard for the variance-moment updates.
    #[serde(default = "default_precision_floor")]
    pub precision_floor: f64,
    #[serde(default)]
    pub use_woodbury: WoodburyMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub baseline: BaselineEnvelope,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        for (name, v) in [
            ("alpha_gamma", self.alpha_gamma),
            ("beta_gamma", self.beta_gamma),
            ("alpha_delta", self.alpha_delta),
            ("beta_delta", self.beta_delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tol must be non-negative, got {}", self.tol)));
        }
        for (name, v) in [("zeta", self.zeta), ("tau", self.tau)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if !(self.precision_floor > 0.0 && self.precision_floor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "precision_floor must be positive, got {}",
                self.precision_floor
            )));
        }
        self.baseline.validate()?;
        Ok(())
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lambda: self.lambda,
            alpha_gamma: self.alpha_gamma,
            beta_gamma: self.beta_gamma,
            alpha_delta: self.alpha_delta,
            beta_delta: self.beta_delta,
        }
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            precision_floor: self.precision_floor,
            use_woodbury: self.use_woodbury,
        }
    }
}

fn default_l1_iters() -> usize {
    400
}
fn default_l1_tol() -> f64 {
    1e-8
}
fn default_epsilon() -> f64 {
    1e-2
}
fn default_rounds() -> usize {
    4
}
fn default_lambda_rel() -> f64 {
    1e-2
}

/// `l1`-baseline settings nested under the `baseline` key.
///
/// When `lambda_l1` is absent the per-probe weight defaults to
/// `lambda_rel * max|A^T Y|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineEnvelope {
    #[serde(default)]
    pub lambda_l1: Option<f64>,
    #[serde(default = "default_lambda_rel")]
    pub lambda_rel: f64,
    #[serde(default = "default_l1_iters")]
    pub max_iters: usize,
    #[serde(default = "default_l1_tol")]
    pub tol: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_rounds")]
    pub reweight_rounds: usize,
}

impl Default for BaselineEnvelope {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty baseline config is valid")
    }
}

impl BaselineEnvelope {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda_l1 {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig(format!("baseline.lambda_l1 must be positive, got {l}")));
            }
        }
        if !(self.lambda_rel > 0.0 && self.lambda_rel.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "baseline.lambda_rel must be positive, got {}",
                self.lambda_rel
            )));
        }
        if self.max_iters == 0 || self.reweight_rounds == 0 {
            return Err(Error::InvalidConfig(
                "baseline.max_iters and baseline.reweight_rounds must be at least 1".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "baseline.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("baseline.tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }

    /// Concrete solver settings for one probe, resolving the relative
    /// regularization weight against `max|A^T Y|`.
    pub fn resolve(&self, gallery: &Gallery, observations: &DMatrix<f64>) -> L1Config {
        let lambda_l1 = self.lambda_l1.unwrap_or_else(|| {
            let coherence = (gallery.matrix().transpose() * observations)
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            if coherence > 0.0 {
                self.lambda_rel * coherence
            } else {
                self.lambda_rel
            }
        });
        L1Config {
            lambda_l1,
            max_iters: self.max_iters,
            tol: self.tol,
            epsilon: self.epsilon,
            reweight_rounds: self.reweight_rounds,
        }
    }
}
