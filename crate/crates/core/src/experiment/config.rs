use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::pipeline::{fingerprint, LabConfig, ModelConfig, TrainingConfig, Variant};
use crate::synthlang::WorldConfig;

pub const CONFIG_VERSION: u32 = 1;

fn default_variants() -> Vec<String> {
    Variant::ALL.iter().map(|v| v.name().to_string()).collect()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_workers() -> usize {
    1
}

/// A full experiment: the lab, which variants and seeds to run, and where
/// results go. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output root. Run directories and the default cache live below it.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub models: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            variants: default_variants(),
            seeds: default_seeds(),
            out: default_out(),
            workers: default_workers(),
            world: WorldConfig::default(),
            models: ModelConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

/// The parts of a config that determine results.
#[derive(Serialize)]
struct Content<'a> {
    version: u32,
    variants: &'a [String],
    seeds: &'a [u64],
    lab: &'a LabConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            ExperimentError::Parse(m) => ExperimentError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn lab(&self) -> LabConfig {
        LabConfig { world: self.world.clone(), models: self.models.clone(), training: self.training.clone() }
    }

    pub fn parsed_variants(&self) -> Result<Vec<Variant>, ExperimentError> {
        self.variants
            .iter()
            .map(|v| Variant::parse(v).map_err(|_| ExperimentError::Validation(format!("variants: unknown variant {v:?}"))))
            .collect()
    }

    /// Checks every field before any compute happens.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Validation(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("version: expected {CONFIG_VERSION}, got {}", self.version));
        }
        if self.variants.is_empty() {
            return bad("variants: at least one variant is required".into());
        }
        self.parsed_variants()?;
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if self.workers == 0 {
            return bad("workers: must be at least 1".into());
        }
        self.lab().validate().map_err(|e| ExperimentError::Validation(e.to_string()))
    }

    /// Variants in canonical order and sorted seeds, both deduplicated.
    pub fn normalized(&self) -> Result<Self, ExperimentError> {
        let mut vs = self.parsed_variants()?;
        vs.sort();
        vs.dedup();
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        Ok(Self { variants: vs.iter().map(|v| v.name().to_string()).collect(), seeds, ..self.clone() })
    }

    /// Stable hash of the normalized config. The output root and the worker
    /// count do not change results and are left out.
    pub fn fingerprint(&self) -> Result<String, ExperimentError> {
        let n = self.normalized()?;
        let lab = n.lab();
        Ok(fingerprint(&Content { version: n.version, variants: &n.variants, seeds: &n.seeds, lab: &lab }))
    }
}
