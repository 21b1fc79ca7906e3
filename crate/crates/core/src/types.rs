//! Shared data model: samples, the expansion dictionary, pair instances,
//! scored predictions, training configuration and metric reports.

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DeskEncoderConfig;

/// Canonical form used whenever two expansion strings are compared:
/// whitespace runs collapsed, lowercase.
pub fn normalize_expansion(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// One dataset record: a tokenized sentence with one marked acronym.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(rename = "acronym")]
    pub acronym_index: usize,
    #[serde(rename = "expansion", default, skip_serializing_if = "Option::is_none")]
    pub gold_expansion: Option<String>,
}

impl Sample {
    /// The acronym token, or `None` if the index is out of range.
    pub fn acronym(&self) -> Option<&str> {
        self.tokens.get(self.acronym_index).map(String::as_str)
    }

    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }

    /// Violations that can be detected without a dictionary.
    pub fn structural_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.tokens.is_empty() {
            out.push("token sequence is empty".to_string());
        }
        if let Some(i) = self.tokens.iter().position(|t| t.is_empty()) {
            out.push(format!("token {i} is empty"));
        }
        if self.acronym_index >= self.tokens.len() {
            out.push(format!(
                "acronym index {} out of range for {} tokens",
                self.acronym_index,
                self.tokens.len()
            ));
        }
        out
    }
}

/// Checks every `Sample` invariant against `dict`; an empty result means valid.
pub fn validate_sample(sample: &Sample, dict: &ExpansionDictionary) -> Vec<String> {
    let mut out = sample.structural_violations();
    if let (Some(gold), Some(acronym)) = (&sample.gold_expansion, sample.acronym()) {
        match dict.candidates(acronym) {
            None => out.push(format!("acronym {acronym:?} not in dictionary")),
            Some(_) if dict.position(acronym, gold).is_none() => {
                out.push(format!("expansion {gold:?} is not a candidate for {acronym:?}"))
            }
            Some(_) => {}
        }
    }
    out
}

/// Acronym → ordered candidate expansions. Order is the tie-break authority.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ExpansionDictionary {
    entries: IndexMap<String, Vec<String>>,
}

impl ExpansionDictionary {
    /// Builds a dictionary, rejecting empty or duplicate-bearing expansion lists.
    pub fn new(entries: IndexMap<String, Vec<String>>) -> Result<Self> {
        for (acronym, expansions) in &entries {
            if expansions.is_empty() {
                return Err(Error::EmptyExpansionList { acronym: acronym.clone() });
            }
            let mut seen = HashSet::new();
            for e in expansions {
                if !seen.insert(normalize_expansion(e)) {
                    return Err(Error::DuplicateExpansion {
                        acronym: acronym.clone(),
                        expansion: e.clone(),
                    });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs<A, E, I>(pairs: I) -> Result<Self>
    where
        A: Into<String>,
        E: Into<String>,
        I: IntoIterator<Item = (A, Vec<E>)>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(a, es)| (a.into(), es.into_iter().map(Into::into).collect()))
                .collect(),
        )
    }

    pub fn candidates(&self, acronym: &str) -> Option<&[String]> {
        self.entries.get(acronym).map(Vec::as_slice)
    }

    /// Index of `expansion` in the candidate list of `acronym` (normalized match).
    pub fn position(&self, acronym: &str, expansion: &str) -> Option<usize> {
        let wanted = normalize_expansion(expansion);
        self.candidates(acronym)?
            .iter()
            .position(|e| normalize_expansion(e) == wanted)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(a, e)| (a.as_str(), e.as_slice()))
    }
}

impl<'de> Deserialize<'de> for ExpansionDictionary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = IndexMap::<String, Vec<String>>::deserialize(d)?;
        ExpansionDictionary::new(entries).map_err(serde::de::Error::custom)
    }
}

/// Inclusive positions of the acronym-start and acronym-end markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

/// One binary row: a candidate expansion paired with the marked sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairInstance {
    pub sample_id: String,
    pub expansion: String,
    /// `[CLS] expansion… [SEP] prefix… <start> acronym <end> suffix… [SEP]`
    pub input_tokens: Vec<String>,
    /// Number of leading tokens in the expansion segment (through the first separator).
    pub segment_a_len: usize,
    pub acronym_span: Span,
    /// `None` for unlabeled samples.
    pub label: Option<bool>,
}

/// Per-sample candidate scores and the chosen expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub selected: String,
    pub scores: IndexMap<String, f64>,
}

impl ScoredPrediction {
    /// Picks the highest score; ties go to the earliest candidate. `scores`
    /// must be in dictionary order and non-empty.
    pub fn from_scores(sample_id: impl Into<String>, scores: Vec<(String, f64)>) -> Self {
        assert!(!scores.is_empty(), "a prediction needs at least one candidate");
        let mut best = 0;
        for (i, (_, s)) in scores.iter().enumerate() {
            if *s > scores[best].1 {
                best = i;
            }
        }
        let selected = scores[best].0.clone();
        Self { sample_id: sample_id.into(), selected, scores: scores.into_iter().collect() }
    }

    pub fn max_score(&self) -> f64 {
        self.scores.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub lr_decay_factor: f64,
    pub lr_min: f64,
    pub negatives_per_batch: usize,
    /// Perturbation norm on the embedding table; 0 disables adversarial training.
    pub adversarial_epsilon: f64,
    pub pseudo_threshold: f64,
    pub pseudo_rounds: usize,
    pub mask_rate: f64,
    pub tapt_epochs: usize,
    pub dropout_rate: f64,
    pub max_seq_len: usize,
    pub vocab_min_count: usize,
    pub encoder: DeskEncoderConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 15,
            lr_encoder: 1.0e-5,
            lr_head: 5.0e-4,
            lr_decay_factor: 0.1,
            lr_min: 5.0e-7,
            negatives_per_batch: 32,
            adversarial_epsilon: 1.0,
            pseudo_threshold: 0.95,
            pseudo_rounds: 1,
            mask_rate: 0.15,
            tapt_epochs: 100,
            dropout_rate: 0.1,
            max_seq_len: 128,
            vocab_min_count: 1,
            encoder: DeskEncoderConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return fail(format!("lr_decay_factor {} not in (0, 1)", self.lr_decay_factor));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_encoder && self.lr_min <= self.lr_head) {
            return fail(format!(
                "lr_min {} must be positive and no larger than lr_encoder {} and lr_head {}",
                self.lr_min, self.lr_encoder, self.lr_head
            ));
        }
        if !(self.adversarial_epsilon >= 0.0 && self.adversarial_epsilon.is_finite()) {
            return fail(format!("adversarial_epsilon {} must be >= 0", self.adversarial_epsilon));
        }
        if !(self.pseudo_threshold > 0.0 && self.pseudo_threshold < 1.0) {
            return fail(format!("pseudo_threshold {} not in (0, 1)", self.pseudo_threshold));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return fail(format!("mask_rate {} not in [0, 1]", self.mask_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if self.max_seq_len > self.encoder.max_positions {
            return fail(format!(
                "max_seq_len {} exceeds encoder max_positions {}",
                self.max_seq_len, self.encoder.max_positions
            ));
        }
        self.encoder.validate()
    }
}

/// Precision, recall, F1 and gold support of one expansion class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Macro-averaged metrics over expansion classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    /// Mean of per-class F1.
    pub f1: f64,
    /// Harmonic mean of macro precision and macro recall, for comparison.
    pub f1_of_macro_pr: f64,
    /// Fraction of samples whose selected expansion equals the gold one.
    pub accuracy: f64,
    pub per_expansion: BTreeMap<String, ClassMetrics>,
}

pub(crate) fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn svm_dict() -> ExpansionDictionary {
        ExpansionDictionary::from_pairs([(
            "SVM",
            vec!["support vector machine", "state vector machine"],
        )])
        .unwrap()
    }

    fn svm_sample() -> Sample {
        Sample {
            id: "fig1".into(),
            tokens: "we train an SVM on the kernel features"
                .split(' ')
                .map(String::from)
                .collect(),
            acronym_index: 3,
            gold_expansion: Some("support vector machine".into()),
        }
    }

    #[test]
    fn svm_sample_is_valid() {
        assert!(validate_sample(&svm_sample(), &svm_dict()).is_empty());
    }

    #[test]
    fn index_at_length_is_out_of_range() {
        let mut s = svm_sample();
        s.acronym_index = s.tokens.len();
        let v = validate_sample(&s, &svm_dict());
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("out of range"));
    }

    #[test]
    fn unknown_gold_expansion_is_reported() {
        let mut s = svm_sample();
        s.gold_expansion = Some("foo".into());
        let v = validate_sample(&s, &svm_dict());
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("not a candidate"));
    }

    #[test]
    fn gold_matches_case_and_whitespace_insensitively() {
        let mut s = svm_sample();
        s.gold_expansion = Some("Support  Vector\tMachine".into());
        assert!(validate_sample(&s, &svm_dict()).is_empty());
    }

    #[test]
    fn empty_tokens_are_rejected() {
        let s = Sample { id: "x".into(), tokens: vec![], acronym_index: 0, gold_expansion: None };
        assert_eq!(s.structural_violations().len(), 2);
        let s = Sample {
            id: "y".into(),
            tokens: vec!["A".into(), String::new()],
            acronym_index: 0,
            gold_expansion: None,
        };
        assert_eq!(s.structural_violations(), vec!["token 1 is empty".to_string()]);
    }

    #[test]
    fn dictionary_rejects_duplicates_and_empty_lists() {
        assert!(matches!(
            ExpansionDictionary::from_pairs([("A", vec!["x", "X "])]),
            Err(Error::DuplicateExpansion { .. })
        ));
        assert!(matches!(
            ExpansionDictionary::from_pairs([("A", Vec::<String>::new())]),
            Err(Error::EmptyExpansionList { .. })
        ));
    }

    #[test]
    fn argmax_ties_go_to_dictionary_order() {
        let p = ScoredPrediction::from_scores(
            "s",
            vec![("a".into(), 0.4), ("b".into(), 0.7), ("c".into(), 0.7)],
        );
        assert_eq!(p.selected, "b");
        let p = ScoredPrediction::from_scores("s", vec![("a".into(), 0.5), ("b".into(), 0.5)]);
        assert_eq!(p.selected, "a");
    }

    #[test]
    fn default_config_carries_published_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.epochs, 15);
        assert_eq!(c.lr_encoder, 1.0e-5);
        assert_eq!(c.lr_head, 5.0e-4);
        assert_eq!(c.lr_decay_factor, 0.1);
        assert_eq!(c.lr_min, 5.0e-7);
        assert_eq!(c.pseudo_threshold, 0.95);
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_schedule() {
        let c = TrainConfig { lr_min: 1e-3, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { lr_decay_factor: 1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
