//! Encoder–decoder transformer trained from scratch.
//!
//! One [`ModelConfig`] describes both branches of an experiment; the
//! graphemic and phonemic models differ only in their data and vocabularies.

mod batch;
mod checkpoint;
mod config;
mod decode;
pub mod model;
mod optim;
mod params;
pub mod tensor;
mod train;
mod vocab;

use std::path::PathBuf;

use thiserror::Error;

pub use batch::{forward, loss_and_grad, pad_batch, validation_loss, Batch};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use decode::{beam_decode, beam_search, greedy_decode, greedy_search, Decoded, Hypothesis};
pub use optim::{learning_rate, OptimizerSettings, TrainingState};
pub use params::{Attention, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, ModelParameters};
pub use tensor::{Real, Tensor};
pub use train::{encode_corpus, train, LogEntry, TrainData, TrainOutcome, TrainSettings};
pub use vocab::{build_vocab, vocab_from_texts, VocabMode, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK, UNK_MARKER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Seq2SeqError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("index {index} out of range for vocabulary of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss became non-finite at step {step}")]
    DivergenceDetected { step: u64, last_checkpoint: Option<PathBuf> },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint config differs: {0}")]
    ConfigMismatch(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub(crate) fn io_error(path: &std::path::Path, e: std::io::Error) -> Seq2SeqError {
    Seq2SeqError::Io(format!("{}: {e}", path.display()))
}
