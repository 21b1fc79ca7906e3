//! Self-describing JSON checkpoints.

use std::path::Path;

use acrodis_tensor::{Matrix, ParamGroup};
use serde::{Deserialize, Serialize};

use crate::data::{read_json, write_json};
use crate::error::{Error, Result};
use crate::model::{Classifier, ModelConfig};
use crate::pairs::Tokenizer;
use crate::types::TrainConfig;

pub const FORMAT: &str = "acrodis-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Encoder and masked-LM parameters only.
    Encoder,
    /// Full classifier.
    Classifier,
}

/// Which strategies produced the parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tapt: bool,
    pub tapt_epochs: usize,
    pub dynamic_negatives: bool,
    pub adversarial: bool,
    pub pseudo_rounds: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub group: ParamGroup,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    pub train_config: TrainConfig,
    pub provenance: Provenance,
    pub tokenizer: Tokenizer,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Classifier,
        kind: CheckpointKind,
        tokenizer: &Tokenizer,
        train_config: &TrainConfig,
        provenance: Provenance,
    ) -> Self {
        let tensors = model
            .params
            .iter()
            .filter(|(_, p)| kind == CheckpointKind::Classifier || p.group != ParamGroup::Head)
            .map(|(_, p)| TensorRecord {
                name: p.name.clone(),
                group: p.group,
                shape: [p.value.nrows(), p.value.ncols()],
                data: p.value.iter().copied().collect(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            kind,
            model: model.config,
            train_config: train_config.clone(),
            provenance,
            tokenizer: tokenizer.clone(),
            tensors,
        }
    }

    /// Rebuilds the classifier. For encoder checkpoints the head is freshly
    /// initialised from `seed`.
    pub fn to_model(&self, seed: u64) -> Result<Classifier> {
        if self.format != FORMAT || self.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        if self.model.vocab_size != self.tokenizer.len() {
            return Err(Error::Checkpoint(format!(
                "vocabulary size {} does not match tokenizer size {}",
                self.model.vocab_size,
                self.tokenizer.len()
            )));
        }
        let mut model = Classifier::new(self.model, seed)?;
        let mut source = acrodis_tensor::ParamStore::new();
        for t in &self.tensors {
            let value = Matrix::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name)))?;
            source.add(t.name.clone(), t.group, value);
        }
        let groups: &[ParamGroup] = match self.kind {
            CheckpointKind::Encoder => &[ParamGroup::Encoder, ParamGroup::Pretraining],
            CheckpointKind::Classifier => &[ParamGroup::Encoder, ParamGroup::Pretraining, ParamGroup::Head],
        };
        model.copy_groups_from(&source, groups)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeskEncoderConfig;

    fn model(seed: u64) -> (Classifier, Tokenizer) {
        let tok = Tokenizer::from_words(["a", "b", "c"]);
        let cfg = ModelConfig {
            encoder: DeskEncoderConfig { layers: 1, hidden_dim: 4, attention_heads: 2, feedforward_dim: 8, max_positions: 16 },
            vocab_size: tok.len(),
            dropout_rate: 0.1,
        };
        (Classifier::new(cfg, seed).unwrap(), tok)
    }

    #[test]
    fn classifier_round_trip_is_exact() {
        let (m, tok) = model(3);
        let ck = Checkpoint::from_model(&m, CheckpointKind::Classifier, &tok, &TrainConfig::default(), Provenance::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model(99).unwrap().params, m.params);
    }

    #[test]
    fn encoder_checkpoint_gets_a_fresh_head() {
        let (m, tok) = model(3);
        let ck = Checkpoint::from_model(&m, CheckpointKind::Encoder, &tok, &TrainConfig::default(), Provenance::default());
        assert!(ck.tensors.iter().all(|t| t.group != ParamGroup::Head));
        let restored = ck.to_model(7).unwrap();
        let fresh = Classifier::new(m.config, 7).unwrap();
        for (id, p) in restored.params.iter() {
            let expected = if p.group == ParamGroup::Head { fresh.params.value(id) } else { m.params.value(id) };
            assert_eq!(&p.value, expected, "{}", p.name);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (m, tok) = model(3);
        let mut ck = Checkpoint::from_model(&m, CheckpointKind::Classifier, &tok, &TrainConfig::default(), Provenance::default());
        ck.tensors[0].shape = [1, ck.tensors[0].data.len()];
        assert!(matches!(ck.to_model(0), Err(Error::Checkpoint(_))));
    }
}
