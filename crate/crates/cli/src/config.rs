//! Config-file support. Precedence everywhere: CLI flag > EARLYGATE_SEED
//! (for the master seed) > config file > built-in default. The effective
//! configuration is echoed into every JSON report.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use earlygate_core::pfi::ScheduleSpec;

use crate::{CliError, CliResult};

/// One (critical timestep, detector operating point) row of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRow {
    pub ct: u32,
    pub recall: f64,
    pub tn_rate: f64,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub p: Option<f64>,
    pub recall: Option<f64>,
    pub tn_rate: Option<f64>,
    pub k: Option<u32>,
    pub total_steps: Option<u32>,
    pub unit_time: Option<f64>,
    pub overhead: Option<f64>,
    pub sims: Option<u64>,
    pub ct_grid: Option<Vec<u32>>,
    /// Per-timestep operating points; when present they replace the
    /// (ct_grid x fixed profile) sweep.
    pub profiles: Option<Vec<ProfileRow>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestrateSection {
    pub manifest: Option<String>,
    pub ct: Option<u32>,
    pub total_steps: Option<u32>,
    pub max_restarts: Option<u32>,
    pub tolerance: Option<f64>,
    pub detector: Option<crate::orchestrate::DetectorKind>,
    pub recall: Option<f64>,
    pub tn_rate: Option<f64>,
    pub relations: Option<bool>,
    pub fallback: Option<crate::orchestrate::FallbackKind>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub manifest: Option<String>,
    pub n_min: Option<u32>,
    pub n_max: Option<u32>,
    pub tolerance: Option<f64>,
    pub ct: Option<u32>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfiDemoSection {
    pub dim: Option<usize>,
    pub sigma: Option<f64>,
    pub trials: Option<u32>,
    pub ct_grid: Option<Vec<u32>>,
    pub schedule: Option<ScheduleSpec>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub master_seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub orchestrate: OrchestrateSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub pfi_demo: PfiDemoSection,
}

pub fn load(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
}
