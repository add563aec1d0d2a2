//! Per-run records: everything needed to audit and replay one (config, seed).

use std::path::Path;

use dam_core::active::QueryResult;
use dam_core::adl::EpochMetrics;
use dam_core::dfs::DfsEpoch;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Variant};
use crate::error::{io_err, Result};

pub const RECORD_FORMAT: u32 = 1;

pub fn version_stamp() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Seeds handed to each stage, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub data: u64,
    pub source_training: u64,
    pub encoder: u64,
    pub prompts: u64,
    pub query: u64,
    pub dfs: u64,
    pub adl: u64,
}

impl StageSeeds {
    pub fn derive(run_seed: u64) -> Self {
        use dam_core::rng::derive_seed;
        Self {
            data: derive_seed(run_seed, 1),
            source_training: derive_seed(run_seed, 2),
            encoder: derive_seed(run_seed, 3),
            prompts: derive_seed(run_seed, 4),
            query: derive_seed(run_seed, 5),
            dfs: derive_seed(run_seed, 6),
            adl: derive_seed(run_seed, 7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub target_params: usize,
    pub prompt_params: usize,
}

/// Tally of every teacher weight emitted during adaptation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightAudit {
    pub queried_signals: usize,
    pub unlabeled_signals: usize,
    /// Signals whose weight did not match the rule for their sample.
    pub violations: usize,
}

impl WeightAudit {
    pub fn clean(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format: u32,
    pub version: String,
    /// Resolved config; `variant` and `rho` name this run.
    pub config: ExperimentConfig,
    pub seed: u64,
    pub stage_seeds: StageSeeds,
    pub complete: bool,
    pub error: Option<String>,
    pub query: Option<QueryResult>,
    pub source_accuracy_on_source: Option<f64>,
    pub source_accuracy_on_target: Option<f64>,
    pub zero_shot_accuracy: Option<f64>,
    pub dfs_history: Vec<DfsEpoch>,
    pub epochs: Vec<EpochMetrics>,
    /// Target-model accuracy on the target domain; absent for the surrogate-only variant.
    pub final_target_accuracy: Option<f64>,
    pub final_surrogate_accuracy: Option<f64>,
    pub params: ParamCounts,
    pub weight_audit: WeightAudit,
    /// Surrogate evaluations observed while scoring the final model.
    pub surrogate_calls_during_evaluation: u64,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// The accuracy a table reports for this run.
    pub fn headline_accuracy(&self) -> Option<f64> {
        match self.config.variant {
            Variant::ZeroShotSurrogate => self.zero_shot_accuracy,
            _ => self.final_target_accuracy,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}_rho{}_seed{}.json", self.config.variant, self.config.rho, self.seed)
    }

    /// Same record with the wall-clock zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_clock_seconds: 0.0, ..self.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }
}
