//! Encoder, decoder-only LM, mapping bridge, and soft-prefix composition.

mod blocks;
pub mod bridge;
pub mod checkpoint;
pub mod compose;
pub mod config;
pub mod encoder;
pub mod gradcase;
pub mod lm;
pub mod translator;

#[cfg(test)]
mod tests;

pub use bridge::BridgeParams;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, Provenance};
pub use compose::{
    argmax, compose_augmented, compose_replacement, composed_loss, greedy_decode, greedy_decode_batch, lm_loss,
    BridgeRows, ComposedSequence, HiddenSeq, Layout, Mode, Prefix, Role, SegmentKind, Space, TrainItem,
};
pub use config::{mapping_hidden, MappingVariant, TransformerDims};
pub use encoder::EncoderParams;
pub use lm::LmParams;
pub use translator::Translator;

use crate::tensorcore::TensorError;

/// Reserved token ids shared by both vocabularies.
pub mod special {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const BOS: usize = 2;
    pub const EOS: usize = 3;
    pub const COUNT: usize = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocab { id: usize, vocab: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("sequence length {len} exceeds max positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("expected {expected}, got {got}")]
    WrongTag { expected: String, got: String },
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

pub(crate) fn check_ids(ids: &[usize], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&id| id >= vocab) {
        Some(&id) => Err(NetError::OutOfVocab { id, vocab }),
        None => Ok(()),
    }
}
