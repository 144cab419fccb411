//! Base-model training, the two bridge stages, and the variant matrix.

pub mod config;
pub mod data;
pub mod eval;
pub mod lab;
pub mod train;


use std::path::Path;

pub use config::{InputMode, ModelConfig, StageConfig, StageKind, TrainingConfig, Variant, VariantSpec};
pub use lab::{
    fingerprint, sigma_from_checkpoint, train_augmentation_stage, train_mapping_stage, BaseModels, BaseReport,
    FreezeCheck, Lab, LabConfig, RunOptions, Stage1, VariantOutcome,
};
pub use train::{LogRecord, TrainLog};

use crate::evalkit::EvalError;
use crate::nets::{CheckpointError, NetError};
use crate::synthlang::SynthError;
use crate::tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("freezing violated: {0}")]
    FreezingLeak(String),
    #[error("{stage} diverged at step {step} (loss {loss})")]
    Diverged { stage: String, step: usize, loss: f32 },
    #[error("no training data for {0}")]
    EmptyData(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error("I/O on {0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Io(path.display().to_string(), e)
    }
}
