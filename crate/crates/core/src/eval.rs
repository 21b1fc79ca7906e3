//! Candidate-set inference, macro metrics, the most-frequent-expansion
//! baseline and the misclassification report.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::pairs::{build_pairs_with_len, Tokenizer};
use crate::types::{
    harmonic, normalize_expansion, ClassMetrics, ExpansionDictionary, MetricsReport, Sample,
    ScoredPrediction,
};

/// Scores every candidate of the sample's acronym and picks the best one.
pub fn predict(
    sample: &Sample,
    model: &Classifier,
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    max_len: usize,
) -> Result<ScoredPrediction> {
    let pairs = build_pairs_with_len(sample, dict, max_len)?;
    let inputs: Vec<_> = pairs.iter().map(|p| tok.encode_pair(p)).collect();
    let scores = model.score_batch(&inputs.iter().collect::<Vec<_>>())?;
    Ok(ScoredPrediction::from_scores(
        sample.id.clone(),
        pairs.into_iter().map(|p| p.expansion).zip(scores).collect(),
    ))
}

pub fn predict_all(
    samples: &[Sample],
    model: &Classifier,
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    max_len: usize,
) -> Result<Vec<ScoredPrediction>> {
    samples.iter().map(|s| predict(s, model, dict, tok, max_len)).collect()
}

/// Macro precision/recall/F1 over the union of gold and predicted expansion
/// classes. A class that is never predicted has precision 0; one that is
/// never gold has recall 0.
pub fn evaluate(samples: &[Sample], predictions: &[ScoredPrediction]) -> Result<MetricsReport> {
    let by_id: HashMap<&str, &ScoredPrediction> =
        predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let gold = s.gold_expansion.as_deref().ok_or_else(|| Error::InvalidSample {
            id: s.id.clone(),
            violations: vec!["sample has no gold expansion".into()],
        })?;
        let pred = by_id.get(s.id.as_str()).ok_or_else(|| Error::MissingPrediction(s.id.clone()))?;
        pairs.push((normalize_expansion(gold), normalize_expansion(&pred.selected)));
    }
    Ok(metrics_from_pairs(&pairs))
}

/// Metrics from (gold, predicted) class pairs.
pub fn metrics_from_pairs(pairs: &[(String, String)]) -> MetricsReport {
    #[derive(Default)]
    struct Counts {
        tp: usize,
        fp: usize,
        fn_: usize,
    }
    let mut counts: BTreeMap<&str, Counts> = BTreeMap::new();
    let mut correct = 0;
    for (gold, pred) in pairs {
        if gold == pred {
            correct += 1;
            counts.entry(gold).or_default().tp += 1;
        } else {
            counts.entry(gold).or_default().fn_ += 1;
            counts.entry(pred).or_default().fp += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_expansion: BTreeMap<String, ClassMetrics> = counts
        .iter()
        .map(|(class, c)| {
            let precision = ratio(c.tp, c.tp + c.fp);
            let recall = ratio(c.tp, c.tp + c.fn_);
            let m = ClassMetrics { precision, recall, f1: harmonic(precision, recall), support: c.tp + c.fn_ };
            (class.to_string(), m)
        })
        .collect();
    let n = per_expansion.len();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_expansion.values().map(f).sum::<f64>() / n as f64
        }
    };
    let precision = mean(|m| m.precision);
    let recall = mean(|m| m.recall);
    MetricsReport {
        precision,
        recall,
        f1: mean(|m| m.f1),
        f1_of_macro_pr: harmonic(precision, recall),
        accuracy: ratio(correct, pairs.len()),
        per_expansion,
    }
}

/// Most-frequent-expansion predictions. Scores are each candidate's share of
/// the acronym's training occurrences; unseen acronyms score all zeros and
/// fall back to the first dictionary entry.
pub fn mf_predictions(
    train: &[Sample],
    eval: &[Sample],
    dict: &ExpansionDictionary,
) -> Result<Vec<ScoredPrediction>> {
    let mut freq: HashMap<(&str, String), usize> = HashMap::new();
    let mut totals: HashMap<&str, usize> = HashMap::new();
    for s in train {
        if let (Some(a), Some(g)) = (s.acronym(), s.gold_expansion.as_deref()) {
            *freq.entry((a, normalize_expansion(g))).or_default() += 1;
            *totals.entry(a).or_default() += 1;
        }
    }
    eval.iter()
        .map(|s| {
            let acronym = s.acronym().unwrap_or_default();
            let candidates = dict
                .candidates(acronym)
                .ok_or_else(|| Error::MissingAcronym(acronym.to_string()))?;
            let total = totals.get(acronym).copied().unwrap_or(0).max(1) as f64;
            let scores = candidates
                .iter()
                .map(|c| {
                    let k = freq.get(&(acronym, normalize_expansion(c))).copied().unwrap_or(0);
                    (c.clone(), k as f64 / total)
                })
                .collect();
            Ok(ScoredPrediction::from_scores(s.id.clone(), scores))
        })
        .collect()
}

pub fn mf_baseline(train: &[Sample], eval: &[Sample], dict: &ExpansionDictionary) -> Result<MetricsReport> {
    evaluate(eval, &mf_predictions(train, eval, dict)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCategory {
    SimilarExpansions,
    InsufficientContext,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sample_id: String,
    pub sentence: String,
    pub acronym: String,
    pub gold: String,
    pub predicted: String,
    pub scores: IndexMap<String, f64>,
    pub category: Option<ErrorCategory>,
}

/// Threshold on [`normalized_indel_distance`] below which a wrong prediction
/// is tagged as a near-duplicate of the gold expansion.
pub const SIMILAR_EXPANSION_THRESHOLD: f64 = 0.2;

/// Insertions plus deletions needed to turn `a` into `b`, over the total
/// character count. 0 for equal strings, 1 for strings with nothing in common.
pub fn normalized_indel_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = normalize_expansion(a).chars().collect();
    let b: Vec<char> = normalize_expansion(b).chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 0.0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ca in &a {
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let lcs = prev[b.len()];
    (total - 2 * lcs) as f64 / total as f64
}

/// Uniform sample of up to `sample_size` misclassified samples, in input order.
pub fn error_report(
    samples: &[Sample],
    predictions: &[ScoredPrediction],
    sample_size: usize,
    seed: u64,
) -> Vec<ErrorRecord> {
    let by_id: HashMap<&str, &ScoredPrediction> =
        predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let wrong: Vec<(&Sample, &ScoredPrediction)> = samples
        .iter()
        .filter_map(|s| {
            let gold = s.gold_expansion.as_deref()?;
            let p = by_id.get(s.id.as_str())?;
            (normalize_expansion(gold) != normalize_expansion(&p.selected)).then_some((s, *p))
        })
        .collect();
    let take = sample_size.min(wrong.len());
    let mut chosen: Vec<usize> = sample_indices(&mut ChaCha8Rng::seed_from_u64(seed), wrong.len(), take).into_vec();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|i| {
            let (s, p) = wrong[i];
            let gold = s.gold_expansion.clone().unwrap_or_default();
            let category = (normalized_indel_distance(&gold, &p.selected) < SIMILAR_EXPANSION_THRESHOLD)
                .then_some(ErrorCategory::SimilarExpansions);
            ErrorRecord {
                sample_id: s.id.clone(),
                sentence: s.sentence(),
                acronym: s.acronym().unwrap_or_default().to_string(),
                gold,
                predicted: p.selected.clone(),
                scores: p.scores.clone(),
                category,
            }
        })
        .collect()
}

/// Plain-text rendering of an error report.
pub fn render_error_report(records: &[ErrorRecord]) -> String {
    let mut out = String::new();
    let tagged = records.iter().filter(|r| r.category == Some(ErrorCategory::SimilarExpansions)).count();
    let _ = writeln!(out, "{} misclassified samples ({tagged} similar-expansions)\n", records.len());
    for r in records {
        let _ = writeln!(out, "[{}] {}", r.sample_id, r.sentence);
        let _ = writeln!(out, "  acronym:   {}", r.acronym);
        let _ = writeln!(out, "  gold:      {}", r.gold);
        let _ = writeln!(out, "  predicted: {}", r.predicted);
        let cat = match r.category {
            Some(ErrorCategory::SimilarExpansions) => "similar-expansions",
            Some(ErrorCategory::InsufficientContext) => "insufficient-context",
            Some(ErrorCategory::Other) => "other",
            None => "unassigned",
        };
        let _ = writeln!(out, "  category:  {cat}");
        for (e, s) in &r.scores {
            let _ = writeln!(out, "    {s:.4}  {e}");
        }
        out.push('\n');
    }
    out
}
