//! Experiment configuration: a TOML file plus CLI overrides resolves to one
//! fully materialized [`ExperimentConfig`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dam_core::active::Strategy;
use dam_core::adl::AdlConfig;
use dam_core::datagen::{DomainPairSpec, ShiftSpec};
use dam_core::dfs::DfsConfig;
use dam_core::models::TrainConfig;
use dam_core::vilsurrogate::{CONTEXT_LEN, FEATURE_DIM, TEMPERATURE};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, LabError, Result};

/// How the pipeline is wired for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Prompt tuning, then alternating distillation.
    #[serde(rename = "full")]
    Full,
    /// Alternating distillation from the template prompts.
    #[serde(rename = "no_LC")]
    NoLc,
    /// Prompt tuning, then distillation into the target only.
    #[serde(rename = "no_LV")]
    NoLv,
    /// Distillation into the target only, template prompts.
    #[serde(rename = "baseline_frozen_prompts")]
    BaselineFrozenPrompts,
    /// Queried cross-entropy plus entropy and diversity, no surrogate.
    #[serde(rename = "active_only_no_vil")]
    ActiveOnlyNoVil,
    #[serde(rename = "source_only")]
    SourceOnly,
    #[serde(rename = "zero_shot_surrogate")]
    ZeroShotSurrogate,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoLc,
        Variant::NoLv,
        Variant::BaselineFrozenPrompts,
        Variant::ActiveOnlyNoVil,
        Variant::SourceOnly,
        Variant::ZeroShotSurrogate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLc => "no_LC",
            Variant::NoLv => "no_LV",
            Variant::BaselineFrozenPrompts => "baseline_frozen_prompts",
            Variant::ActiveOnlyNoVil => "active_only_no_vil",
            Variant::SourceOnly => "source_only",
            Variant::ZeroShotSurrogate => "zero_shot_surrogate",
        }
    }

    pub fn uses_surrogate(self) -> bool {
        !matches!(self, Variant::ActiveOnlyNoVil | Variant::SourceOnly)
    }

    pub fn tunes_prompts_first(self) -> bool {
        matches!(self, Variant::Full | Variant::NoLv)
    }

    pub fn adapts(self) -> bool {
        !matches!(self, Variant::SourceOnly | Variant::ZeroShotSurrogate)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub feature_dim: usize,
    pub context_len: usize,
    pub tau: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { feature_dim: FEATURE_DIM, context_len: CONTEXT_LEN, tau: TEMPERATURE }
    }
}

/// The `oh-mini` benchmark domains.
pub fn oh_mini_dataset() -> DomainPairSpec {
    let mut shift = ShiftSpec::rotation(std::f64::consts::PI / 5.0);
    shift.scale = 1.3;
    shift.class_prior_skew = 4.5;
    let mut spec = DomainPairSpec::new(5, 16, 2000, 1000, shift);
    spec.mean_radius = 2.75;
    spec
}

/// Everything a run needs. Seed fields inside the stage configs are
/// overwritten per run from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub variant: Variant,
    pub strategy: Strategy,
    pub rho: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub dataset: DomainPairSpec,
    pub surrogate: SurrogateConfig,
    pub source_training: TrainConfig,
    pub dfs: DfsConfig,
    pub adl: AdlConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "oh-mini".into(),
            variant: Variant::Full,
            strategy: Strategy::Margin,
            rho: 0.05,
            seeds: (0..20).collect(),
            output_dir: PathBuf::from("runs"),
            dataset: oh_mini_dataset(),
            surrogate: SurrogateConfig::default(),
            source_training: TrainConfig::default(),
            dfs: DfsConfig::default(),
            adl: AdlConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document layered over the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        let base = toml::Table::try_from(Self::default()).map_err(|e| LabError::Config(e.to_string()))?;
        let merged = merge(base, overrides);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    /// Optional config file, then `dotted.key = value` overrides in order.
    /// Values are read as TOML literals, falling back to plain strings.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            let value = parse_literal(raw);
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| LabError::Config(format!("empty key in `{key}`")))?;
            let mut node = &mut table;
            for part in parts {
                let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry.as_table_mut().ok_or_else(|| LabError::Config(format!("`{part}` in `{key}` is not a table")))?;
            }
            node.insert(last.to_string(), value);
        }
        Self::from_toml_str(&toml::to_string(&table).map_err(|e| LabError::Config(e.to_string()))?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(LabError::Config("no seeds given".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(LabError::Config(format!("rho = {} outside (0, 1)", self.rho)));
        }
        self.dataset.validate()?;
        self.source_training.validate()?;
        self.dfs.validate()?;
        self.adl.validate()?;
        if self.surrogate.feature_dim == 0 || self.surrogate.context_len == 0 || self.surrogate.tau.is_nan() || self.surrogate.tau <= 0.0 {
            return Err(LabError::Config("surrogate dimensions and temperature must be positive".into()));
        }
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Parses `0..20` (half-open) or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || LabError::Config(format!("cannot parse seeds `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

/// Recursive table merge: values in `over` win.
fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
