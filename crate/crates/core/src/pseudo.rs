//! Pseudo-labelling rounds: confident predictions on unlabelled samples
//! become labels, and a new classifier is trained on the union.

use std::collections::HashSet;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{read_json, write_json};
use crate::error::{Error, Result};
use crate::eval::predict;
use crate::model::Classifier;
use crate::pairs::Tokenizer;
use crate::train::{train, Strategies, TrainOutcome};
use crate::types::{ExpansionDictionary, Sample, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    /// The original sample; its gold expansion is ignored.
    pub underlying: Sample,
    pub assigned_expansion: String,
    pub confidence: f64,
    pub source_round: usize,
}

impl PseudoSample {
    /// The sample with the assigned expansion as its label.
    pub fn to_labelled(&self) -> Sample {
        Sample { gold_expansion: Some(self.assigned_expansion.clone()), ..self.underlying.clone() }
    }
}

/// On-disk form: the dataset schema plus confidence and round.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PseudoRecord {
    id: String,
    tokens: Vec<String>,
    acronym: usize,
    expansion: String,
    confidence: f64,
    round: usize,
}

pub fn save_pseudo(path: impl AsRef<Path>, pseudo: &[PseudoSample]) -> Result<()> {
    let records: Vec<PseudoRecord> = pseudo
        .iter()
        .map(|p| PseudoRecord {
            id: p.underlying.id.clone(),
            tokens: p.underlying.tokens.clone(),
            acronym: p.underlying.acronym_index,
            expansion: p.assigned_expansion.clone(),
            confidence: p.confidence,
            round: p.source_round,
        })
        .collect();
    write_json(path.as_ref(), &records)
}

pub fn load_pseudo(path: impl AsRef<Path>) -> Result<Vec<PseudoSample>> {
    let records: Vec<PseudoRecord> = read_json(path.as_ref())?;
    Ok(records
        .into_iter()
        .map(|r| PseudoSample {
            underlying: Sample { id: r.id, tokens: r.tokens, acronym_index: r.acronym, gold_expansion: None },
            assigned_expansion: r.expansion,
            confidence: r.confidence,
            source_round: r.round,
        })
        .collect())
}

/// Unlabelled samples whose best candidate scores strictly above `threshold`,
/// labelled with that candidate.
pub fn harvest(
    model: &Classifier,
    unlabeled: &[Sample],
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    threshold: f64,
    max_len: usize,
    round: usize,
) -> Result<Vec<PseudoSample>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("pseudo threshold {threshold} not in (0, 1)")));
    }
    let mut out = Vec::new();
    for s in unlabeled {
        let p = predict(s, model, dict, tok, max_len)?;
        let confidence = p.scores[&p.selected];
        if confidence > threshold {
            out.push(PseudoSample {
                underlying: Sample { gold_expansion: None, ..s.clone() },
                assigned_expansion: p.selected,
                confidence,
                source_round: round,
            });
        }
    }
    Ok(out)
}

/// Training set followed by the pseudo-labelled samples. Ids must not collide.
pub fn merge(train: &[Sample], pseudo: &[PseudoSample]) -> Result<Vec<Sample>> {
    let ids: HashSet<&str> = train.iter().map(|s| s.id.as_str()).collect();
    if let Some(p) = pseudo.iter().find(|p| ids.contains(p.underlying.id.as_str())) {
        return Err(Error::IdCollision(p.underlying.id.clone()));
    }
    Ok(train.iter().cloned().chain(pseudo.iter().map(PseudoSample::to_labelled)).collect())
}

/// Trains a new classifier on `train ∪ pseudo`. The encoder starts from
/// `base` (the pretrained encoder, or a fresh one) and the head is freshly
/// initialised from `cfg.seed`; nothing is carried over from the model that
/// produced the pseudo labels.
#[allow(clippy::too_many_arguments)]
pub fn merge_and_retrain(
    base: &Classifier,
    train_samples: &[Sample],
    dev_samples: &[Sample],
    pseudo: &[PseudoSample],
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    cfg: &TrainConfig,
    strategies: Strategies,
) -> Result<TrainOutcome> {
    let merged = merge(train_samples, pseudo)?;
    let init = Classifier::with_encoder_from(base, cfg.seed)?;
    train(init, &merged, dev_samples, dict, tok, cfg, strategies)
}

#[derive(Debug, Clone)]
pub struct PseudoOutcome {
    pub outcome: TrainOutcome,
    /// Pseudo labels used for the final round.
    pub pseudo: Vec<PseudoSample>,
    pub rounds: usize,
}

/// `rounds` cycles of harvest → merge → retrain, starting from `teacher`.
/// Each round harvests the whole unlabelled pool again with the latest model.
#[allow(clippy::too_many_arguments)]
pub fn run_rounds(
    teacher: Classifier,
    base: &Classifier,
    train_samples: &[Sample],
    dev_samples: &[Sample],
    unlabeled: &[Sample],
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    cfg: &TrainConfig,
    strategies: Strategies,
    rounds: usize,
) -> Result<PseudoOutcome> {
    let mut current = teacher;
    let mut last: Option<(TrainOutcome, Vec<PseudoSample>)> = None;
    for round in 1..=rounds {
        let pseudo = harvest(&current, unlabeled, dict, tok, cfg.pseudo_threshold, cfg.max_seq_len, round)?;
        info!("pseudo round {round}: harvested {} of {} samples", pseudo.len(), unlabeled.len());
        let outcome = merge_and_retrain(base, train_samples, dev_samples, &pseudo, dict, tok, cfg, strategies)?;
        current = outcome.model.clone();
        last = Some((outcome, pseudo));
    }
    let (outcome, pseudo) = match last {
        Some(x) => x,
        None => {
            let init = Classifier::with_encoder_from(base, cfg.seed)?;
            (train(init, train_samples, dev_samples, dict, tok, cfg, strategies)?, Vec::new())
        }
    };
    Ok(PseudoOutcome { outcome, pseudo, rounds })
}
