//! Pair construction and the two-segment input layout.
//!
//! Each sample expands into one [`PairInstance`] per candidate expansion. The
//! rendered input puts the expansion first and the sentence second, with the
//! acronym wrapped in `<start>`/`<end>` markers:
//!
//! ```text
//! [CLS] support vector machine [SEP] we train an <start> SVM <end> on … [SEP]
//! ```

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{normalize_expansion, ExpansionDictionary, PairInstance, Sample, Span};

pub const DEFAULT_MAX_LEN: usize = 128;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const ACRONYM_START: &str = "<start>";
pub const ACRONYM_END: &str = "<end>";

/// Special tokens in id order; ids 0..7 are reserved for them.
pub const SPECIAL_TOKENS: [&str; 7] = [PAD, UNK, CLS, SEP, MASK, ACRONYM_START, ACRONYM_END];

/// Smallest layout: `[CLS] e [SEP] <start> a <end> [SEP]`.
const MIN_LEN: usize = 7;

/// Whitespace-token vocabulary with a fixed special-token table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    vocab: BTreeMap<String, usize>,
    special_tokens: BTreeMap<String, String>,
}

impl Tokenizer {
    /// Special tokens followed by `words` (duplicates and special strings skipped).
    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for w in words {
            let w = w.into();
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len());
                tokens.push(w);
            }
        }
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad_id(&self) -> usize {
        0
    }
    pub fn unk_id(&self) -> usize {
        1
    }
    pub fn cls_id(&self) -> usize {
        2
    }
    pub fn sep_id(&self) -> usize {
        3
    }
    pub fn mask_id(&self) -> usize {
        4
    }
    pub fn start_id(&self) -> usize {
        5
    }
    pub fn end_id(&self) -> usize {
        6
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    /// Id of an ordinary word. Unknown words and literal special strings map to `[UNK]`.
    pub fn word_id(&self, word: &str) -> usize {
        match self.index.get(word) {
            Some(&id) if !self.is_special(id) => id,
            _ => self.unk_id(),
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }

    /// Encodes a pair's rendered tokens. Structural positions get their
    /// special ids; every other position is looked up as a word.
    pub fn encode_pair(&self, pair: &PairInstance) -> FormattedInput {
        let n = pair.input_tokens.len();
        let token_ids = pair
            .input_tokens
            .iter()
            .enumerate()
            .map(|(i, t)| match i {
                0 => self.cls_id(),
                i if i == pair.segment_a_len - 1 || i == n - 1 => self.sep_id(),
                i if i == pair.acronym_span.start => self.start_id(),
                i if i == pair.acronym_span.end => self.end_id(),
                _ => self.word_id(t),
            })
            .collect();
        let segment_ids = (0..n).map(|i| u8::from(i >= pair.segment_a_len)).collect();
        FormattedInput { token_ids, segment_ids, acronym_span: pair.acronym_span, cls_position: 0 }
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            vocab: self.index.iter().map(|(t, &i)| (t.clone(), i)).collect(),
            special_tokens: [
                ("pad", PAD),
                ("unknown", UNK),
                ("sequence_start", CLS),
                ("separator", SEP),
                ("mask", MASK),
                ("acronym_start", ACRONYM_START),
                ("acronym_end", ACRONYM_END),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: TokenizerFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut tokens = vec![String::new(); file.vocab.len()];
        for (t, &i) in &file.vocab {
            let slot = tokens.get_mut(i).ok_or_else(|| format!("token id {i} out of range"))?;
            if !slot.is_empty() {
                return Err(format!("token id {i} assigned twice"));
            }
            *slot = t.clone();
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(format!("special token {s} must have id {i}"));
            }
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { tokens, index })
    }
}

impl Serialize for Tokenizer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: serde_json::Value = serde_json::from_str(&self.to_json()).expect("valid json");
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Tokenizer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Tokenizer::from_json(&v.to_string()).map_err(serde::de::Error::custom)
    }
}

/// Model-ready encoding of one pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormattedInput {
    pub token_ids: Vec<usize>,
    /// 0 for the expansion segment, 1 for the sentence segment.
    pub segment_ids: Vec<u8>,
    pub acronym_span: Span,
    pub cls_position: usize,
}

impl FormattedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Frequency-ordered vocabulary over sentence tokens and dictionary expansion
/// words. Ties are broken lexicographically, so sample order does not matter.
pub fn build_vocab(samples: &[Sample], dict: &ExpansionDictionary, min_count: usize) -> Tokenizer {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in samples {
        for t in &s.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    for (_, expansions) in dict.iter() {
        for e in expansions {
            for w in e.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_count.max(1) && !SPECIAL_TOKENS.contains(w))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Tokenizer::from_words(words.into_iter().map(|(w, _)| w))
}

/// Renders the two-segment layout for one candidate expansion.
///
/// When the result would exceed `max_len`, sentence tokens farthest from the
/// acronym are dropped first (right side first on equal distance). If even
/// the bare acronym does not fit, trailing expansion words are dropped.
pub fn render_pair(
    expansion: &str,
    sample: &Sample,
    max_len: usize,
) -> Result<(Vec<String>, usize, Span)> {
    let mut exp_words: Vec<&str> = expansion.split_whitespace().collect();
    if exp_words.is_empty() {
        return Err(Error::EmptyExpansion);
    }
    if max_len < MIN_LEN {
        return Err(Error::Config(format!("max sequence length {max_len} is below {MIN_LEN}")));
    }
    let a = sample.acronym_index;
    let Some(acronym) = sample.tokens.get(a) else {
        return Err(Error::InvalidSample {
            id: sample.id.clone(),
            violations: sample.structural_violations(),
        });
    };
    exp_words.truncate(max_len - (MIN_LEN - 1));
    let fixed = exp_words.len() + MIN_LEN - 1;
    let budget = max_len - fixed;

    // Keep the `budget` nearest context tokens; left wins ties.
    let mut others: Vec<usize> = (0..sample.tokens.len()).filter(|&i| i != a).collect();
    others.sort_by_key(|&i| (i.abs_diff(a), i > a));
    others.truncate(budget);
    let lo = others.iter().copied().filter(|&i| i < a).min().unwrap_or(a);
    let hi = others.iter().copied().filter(|&i| i > a).max().unwrap_or(a);

    let mut out: Vec<String> = Vec::with_capacity(fixed + budget);
    out.push(CLS.into());
    out.extend(exp_words.iter().map(|w| w.to_string()));
    out.push(SEP.into());
    let segment_a_len = out.len();
    out.extend(sample.tokens[lo..a].iter().cloned());
    let start = out.len();
    out.push(ACRONYM_START.into());
    out.push(acronym.clone());
    out.push(ACRONYM_END.into());
    out.extend(sample.tokens[a + 1..=hi].iter().cloned());
    out.push(SEP.into());
    Ok((out, segment_a_len, Span { start, end: start + 2 }))
}

/// One pair per candidate of the sample's acronym, in dictionary order.
pub fn build_pairs(sample: &Sample, dict: &ExpansionDictionary) -> Result<Vec<PairInstance>> {
    build_pairs_with_len(sample, dict, DEFAULT_MAX_LEN)
}

pub fn build_pairs_with_len(
    sample: &Sample,
    dict: &ExpansionDictionary,
    max_len: usize,
) -> Result<Vec<PairInstance>> {
    let acronym = sample.acronym().ok_or_else(|| Error::InvalidSample {
        id: sample.id.clone(),
        violations: sample.structural_violations(),
    })?;
    let candidates = dict
        .candidates(acronym)
        .ok_or_else(|| Error::MissingAcronym(acronym.to_string()))?;
    let gold = sample.gold_expansion.as_deref().map(normalize_expansion);
    candidates
        .iter()
        .map(|expansion| {
            let (input_tokens, segment_a_len, acronym_span) = render_pair(expansion, sample, max_len)?;
            Ok(PairInstance {
                sample_id: sample.id.clone(),
                expansion: expansion.clone(),
                input_tokens,
                segment_a_len,
                acronym_span,
                label: gold.as_ref().map(|g| *g == normalize_expansion(expansion)),
            })
        })
        .collect()
}

/// Renders and encodes a single (expansion, sentence) pair.
pub fn format_input(
    expansion: &str,
    sample: &Sample,
    tok: &Tokenizer,
    max_len: usize,
) -> Result<FormattedInput> {
    let (input_tokens, segment_a_len, acronym_span) = render_pair(expansion, sample, max_len)?;
    let pair = PairInstance {
        sample_id: sample.id.clone(),
        expansion: expansion.to_string(),
        input_tokens,
        segment_a_len,
        acronym_span,
        label: None,
    };
    Ok(tok.encode_pair(&pair))
}
