use std::fmt;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::nets::{MappingVariant, TransformerDims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    LmPretrain,
    TaskFinetune,
    EncoderPretrain,
    Mapping,
    Augmentation,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::LmPretrain => "lm-pretrain",
            StageKind::TaskFinetune => "task-finetune",
            StageKind::EncoderPretrain => "encoder-pretrain",
            StageKind::Mapping => "mapping",
            StageKind::Augmentation => "augmentation",
        }
    }

    pub fn is_bridge(self) -> bool {
        matches!(self, StageKind::Mapping | StageKind::Augmentation)
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub kind: StageKind,
    pub lr: f64,
    pub batch_size: usize,
    /// Longest packed training sequence.
    pub max_len: usize,
    pub epochs: usize,
    /// Corpus set the stage reads.
    pub dataset: String,
    /// Mixed with the run seed to derive the stage's data-order stream.
    pub seed: u64,
    /// Whether the encoder (θ) is updated.
    pub theta_trainable: bool,
    /// Whether the LM (φ) is updated.
    pub phi_trainable: bool,
}

impl StageConfig {
    pub fn new(kind: StageKind, lr: f64, epochs: usize, dataset: &str) -> Self {
        Self {
            kind,
            lr,
            batch_size: 32,
            max_len: 128,
            epochs,
            dataset: dataset.to_string(),
            seed: 0,
            theta_trainable: kind == StageKind::EncoderPretrain,
            phi_trainable: matches!(kind, StageKind::LmPretrain | StageKind::TaskFinetune),
        }
    }

    pub fn validate(&self, what: &str) -> Result<(), PipelineError> {
        let err = |m: &str| Err(PipelineError::Config(format!("{what}: {m}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err("lr must be positive");
        }
        if self.batch_size == 0 || self.max_len == 0 || self.epochs == 0 {
            return err("batch_size, max_len and epochs must be positive");
        }
        if self.kind.is_bridge() && (self.theta_trainable || self.phi_trainable) {
            return err("bridge stages must keep the encoder and the LM frozen");
        }
        match self.kind {
            StageKind::LmPretrain | StageKind::TaskFinetune if self.theta_trainable => {
                err("LM stages do not touch the encoder")
            }
            StageKind::EncoderPretrain if self.phi_trainable => err("encoder pretraining does not touch the LM"),
            _ => Ok(()),
        }
    }
}

/// Every configured stage of the lab.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub lm_pretrain: StageConfig,
    pub task_finetune: StageConfig,
    /// Fraction of fine-tune examples in the parallel-prefix format
    /// `q₁ | q₂`, two copies of the query with content words hidden.
    pub finetune_prefix_fraction: f64,
    /// Fraction of the pretraining `a | b` documents replayed during the
    /// fine-tune, so the LM keeps reading what precedes `|`.
    pub finetune_rehearsal: f64,
    pub encoder_pretrain: StageConfig,
    pub mapping: StageConfig,
    pub augmentation: StageConfig,
    pub multireason_sft: StageConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let mut sft = StageConfig::new(StageKind::TaskFinetune, 3e-4, 3, "stage2");
        sft.seed = 5;
        Self {
            lm_pretrain: StageConfig::new(StageKind::LmPretrain, 1e-3, 4, "lm_pretrain"),
            task_finetune: StageConfig::new(StageKind::TaskFinetune, 1e-3, 4, "english_task"),
            finetune_prefix_fraction: 0.5,
            finetune_rehearsal: 1.0,
            encoder_pretrain: StageConfig::new(StageKind::EncoderPretrain, 1e-3, 4, "encoder_pairs"),
            mapping: StageConfig::new(StageKind::Mapping, 1e-3, 3, "mapping_pairs"),
            augmentation: StageConfig::new(StageKind::Augmentation, 1e-3, 3, "stage2"),
            multireason_sft: sft,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let stages = [
            ("lm_pretrain", &self.lm_pretrain, StageKind::LmPretrain),
            ("task_finetune", &self.task_finetune, StageKind::TaskFinetune),
            ("encoder_pretrain", &self.encoder_pretrain, StageKind::EncoderPretrain),
            ("mapping", &self.mapping, StageKind::Mapping),
            ("augmentation", &self.augmentation, StageKind::Augmentation),
            ("multireason_sft", &self.multireason_sft, StageKind::TaskFinetune),
        ];
        for (name, s, kind) in stages {
            if s.kind != kind {
                return Err(PipelineError::Config(format!("{name}: kind must be {kind}, got {}", s.kind)));
            }
            s.validate(name)?;
        }
        if !(0.0..=1.0).contains(&self.finetune_prefix_fraction) {
            return Err(PipelineError::Config("finetune_prefix_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.finetune_rehearsal) {
            return Err(PipelineError::Config("finetune_rehearsal must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: TransformerDims,
    pub lm: TransformerDims,
    /// Throwaway decoder used for encoder pretraining.
    pub translator: TransformerDims,
    pub mapping: MappingVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let dims = |d_model, layers| TransformerDims { d_model, layers, heads: 4, ff_mult: 4, max_positions: 128 };
        Self { encoder: dims(64, 2), lm: dims(96, 4), translator: dims(64, 2), mapping: MappingVariant::Mlp2 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.encoder.validate("encoder").map_err(PipelineError::Config)?;
        self.lm.validate("lm").map_err(PipelineError::Config)?;
        self.translator.validate("translator").map_err(PipelineError::Config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoMappingStage,
    NoAugmentationStage,
    ReplacementOnly,
    Monoreason,
    MultireasonSft,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoMappingStage,
        Variant::NoAugmentationStage,
        Variant::ReplacementOnly,
        Variant::Monoreason,
        Variant::MultireasonSft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMappingStage => "no_mapping_stage",
            Variant::NoAugmentationStage => "no_augmentation_stage",
            Variant::ReplacementOnly => "replacement_only",
            Variant::Monoreason => "monoreason",
            Variant::MultireasonSft => "multireason_sft",
        }
    }

    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| PipelineError::UnknownVariant(s.to_string()))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the LM input is assembled at evaluation (and stage-2 training) time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `[bos; q]`, no bridge.
    Plain,
    /// `[bos; X̃; sep; T]`.
    Augmented,
    /// `[bos; X̃; sep]`.
    Replacement,
}

/// The stages a variant runs and how it is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantSpec {
    pub variant: Variant,
    pub mapping_stage: bool,
    /// Input mode of the augmentation stage, if it runs.
    pub augmentation_stage: Option<InputMode>,
    pub sft: bool,
    pub eval_mode: InputMode,
}

impl VariantSpec {
    pub fn of(variant: Variant) -> Self {
        let spec = |mapping_stage, augmentation_stage, sft, eval_mode| Self {
            variant,
            mapping_stage,
            augmentation_stage,
            sft,
            eval_mode,
        };
        use InputMode::*;
        match variant {
            Variant::Full => spec(true, Some(Augmented), false, Augmented),
            Variant::NoMappingStage => spec(false, Some(Augmented), false, Augmented),
            Variant::NoAugmentationStage => spec(true, None, false, Augmented),
            Variant::ReplacementOnly => spec(true, Some(Replacement), false, Replacement),
            Variant::Monoreason => spec(false, None, false, Plain),
            Variant::MultireasonSft => spec(false, None, true, Plain),
        }
    }

    pub fn uses_bridge(&self) -> bool {
        self.eval_mode != InputMode::Plain
    }

    /// Number of bridge-training stages the variant runs.
    pub fn bridge_stages(&self) -> usize {
        usize::from(self.mapping_stage) + usize::from(self.augmentation_stage.is_some())
    }
}
