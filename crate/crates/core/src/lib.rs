//! Acronym disambiguation as candidate ranking.
//!
//! Every candidate expansion of an acronym is paired with the sentence it
//! occurs in and scored by a binary classifier; the highest-scoring candidate
//! wins. Training supports dynamic negative selection, masked-LM pretraining
//! on the task corpus, embedding-space adversarial perturbation, and
//! pseudo-labelling of unlabelled data.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pairs;
pub mod pseudo;
pub mod synthetic;
pub mod tapt;
pub mod train;
pub mod types;

pub use checkpoint::{Checkpoint, CheckpointKind, Provenance};
pub use error::{Error, Result};
pub use model::{Classifier, DeskEncoderConfig, ModelConfig};
pub use pairs::{FormattedInput, Tokenizer};
pub use train::{Strategies, TrainOutcome};
pub use types::{
    ExpansionDictionary, MetricsReport, PairInstance, Sample, ScoredPrediction, Span, TrainConfig,
};

/// Model layout for a tokenizer and training configuration.
pub fn model_config(tok: &Tokenizer, cfg: &TrainConfig) -> ModelConfig {
    ModelConfig { encoder: cfg.encoder, vocab_size: tok.len(), dropout_rate: cfg.dropout_rate }
}
