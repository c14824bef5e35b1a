//! Declarative run configuration: one JSON document per invocation, with
//! a section per subcommand. Unknown keys are rejected so typos fail fast.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dgp::DgpConfig;
use crate::error::{Error, Result};
use crate::model::SharingMap;
use crate::spec::ModelSpec;

fn default_stride() -> usize {
    1
}

fn default_reps() -> usize {
    1
}

fn default_step() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: DgpConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Panel CSV path.
    pub data: PathBuf,
    pub spec: ModelSpec,
    /// Coefficient sharing across goods and pairs; defaults to fully
    /// unshared (every good and pair gets its own coefficients).
    #[serde(default)]
    pub sharing: Option<SharingMap>,
    /// Continue a previously written chain instead of starting fresh.
    #[serde(default)]
    pub resume_from: Option<PathBuf>,
    /// Extra retained draws when resuming.
    #[serde(default)]
    pub extra_draws: usize,
}

/// Knobs for posterior-predictive shares and elasticities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSettings {
    /// Keep every `stride`-th stored draw.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Fresh-error passes per retained draw.
    #[serde(default = "default_reps")]
    pub reps_per_draw: usize,
    /// Relative price step for the two-sided elasticity difference.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Share the simulated errors across the perturbed scenarios.
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PredictSettings {
    fn default() -> Self {
        PredictSettings {
            stride: 1,
            reps_per_draw: 1,
            step: 0.05,
            common_random_numbers: true,
            seed: 0,
        }
    }
}

/// One named counterfactual: per-good price multipliers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub label: String,
    pub price_multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub data: PathBuf,
    pub chain: PathBuf,
    /// Counterfactual share scenarios (a baseline is always included).
    #[serde(default)]
    pub scenarios: Vec<ScenarioConfig>,
    /// Also compute the good-by-good price elasticity table.
    #[serde(default = "default_true")]
    pub elasticities: bool,
    #[serde(default)]
    pub settings: PredictSettings,
}

/// One fitted model in the study, labeled for the output table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyModel {
    pub label: String,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McStudyConfig {
    /// Generating process; its seed field is re-derived per trial.
    pub dgp: DgpConfig,
    pub n_trials: usize,
    pub models: Vec<StudyModel>,
    /// Panel sizes to sweep, as (individuals, periods) pairs; empty means
    /// the dgp's own size.
    #[serde(default)]
    pub sizes: Vec<(usize, usize)>,
    /// Error passes when scoring the per-trial truth elasticities.
    #[serde(default = "default_reps")]
    pub truth_reps: usize,
    #[serde(default)]
    pub predict: PredictSettings,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; defaults to the current directory.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Worker-thread cap; 0 or absent means all cores.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub estimate: Option<EstimateConfig>,
    #[serde(default)]
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub mc_study: Option<McStudyConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
