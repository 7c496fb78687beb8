//! Experiment configuration document for `generate` and `experiment`.

use serde::{Deserialize, Serialize};

use rsm_core::config::RunConfig;
use rsm_core::error::{Error, Result};
use rsm_core::eval::{ExperimentPlan, Method};
use rsm_core::ranking::{RankingConfig, ResidualKind};
use rsm_core::synth::GeneratorConfig;

fn default_methods() -> Vec<Method> {
    vec![Method::Rsm]
}
fn default_trials() -> usize {
    1
}

/// Top-level JSON document: generator settings plus the inference/baseline
/// envelope and harness options. Unknown keys are rejected at every level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfigDoc {
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub max_ranks: Option<usize>,
    #[serde(default)]
    pub residual_kind: ResidualKind,
    #[serde(default)]
    pub sweep_l: Option<Vec<usize>>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub normalize_columns: bool,
}

impl ExperimentConfigDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ExperimentConfigDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.run.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        if let Some(values) = &self.sweep_l {
            if values.is_empty() || values.contains(&0) {
                return Err(Error::InvalidConfig("sweep_l entries must be positive".into()));
            }
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                return Err(Error::InvalidConfig("lambda_grid entries must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn to_plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            generator: self.generator.clone(),
            hyper: self.run.hyperparams(),
            inference: self.run.inference_config(),
            ranking: RankingConfig {
                zeta: self.run.zeta,
                tau: self.run.tau,
                residual_kind: self.residual_kind,
                max_ranks: self.max_ranks,
            },
            baseline: self.run.baseline.clone(),
            methods: self.methods.clone(),
            trials: self.trials,
            normalize_columns: self.normalize_columns,
        }
    }
}
