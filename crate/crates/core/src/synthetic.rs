//! Synthetic acronym corpora with known structure, for smoke tests and
//! ablations at desk scale.
//!
//! Every expansion owns a set of cue words (its own words plus a few topical
//! ones). A sentence is filler text around the acronym with some cue words of
//! the gold expansion mixed in; `cue_noise` swaps cues for a sibling
//! expansion's, which makes the task ambiguous in a controlled way.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{ExpansionDictionary, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub acronyms: usize,
    pub min_expansions: usize,
    pub max_expansions: usize,
    pub samples: usize,
    pub topical_cues: usize,
    pub cues_per_sentence: usize,
    pub filler_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a cue word comes from a sibling expansion instead.
    pub cue_noise: f64,
    /// Skew of the gold-expansion distribution: weight of rank r is 1 / r^skew.
    pub skew: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            acronyms: 5,
            min_expansions: 2,
            max_expansions: 3,
            samples: 200,
            topical_cues: 3,
            cues_per_sentence: 2,
            filler_vocab: 60,
            min_len: 8,
            max_len: 14,
            cue_noise: 0.0,
            skew: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dict: ExpansionDictionary,
    pub samples: Vec<Sample>,
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pronounceable word for an index; distinct indices give
/// distinct words.
fn word(index: usize) -> String {
    let base = ONSETS.len() * NUCLEI.len();
    let mut n = index;
    let mut out = String::new();
    for _ in 0..3 {
        let d = n % base;
        out.push_str(ONSETS[d / NUCLEI.len()]);
        out.push_str(NUCLEI[d % NUCLEI.len()]);
        n /= base;
    }
    out
}

fn acronym_name(index: usize) -> String {
    let letters: Vec<char> = ('A'..='Z').collect();
    let mut n = index;
    let mut s = String::new();
    for _ in 0..3 {
        s.push(letters[n % 26]);
        n /= 26;
    }
    s
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut next_word = 0usize;
    let mut fresh = || {
        next_word += 1;
        word(next_word * 7919 % 216_000)
    };
    let filler: Vec<String> = (0..spec.filler_vocab).map(|_| fresh()).collect();

    struct Sense {
        phrase: String,
        cues: Vec<String>,
    }
    let mut senses: Vec<(String, Vec<Sense>)> = Vec::new();
    for a in 0..spec.acronyms {
        let k = rng.gen_range(spec.min_expansions..=spec.max_expansions);
        let list = (0..k)
            .map(|_| {
                let words: Vec<String> = (0..rng.gen_range(2..=3)).map(|_| fresh()).collect();
                let mut cues = words.clone();
                cues.extend((0..spec.topical_cues).map(|_| fresh()));
                Sense { phrase: words.join(" "), cues }
            })
            .collect();
        senses.push((acronym_name(a), list));
    }

    let dict = ExpansionDictionary::new(
        senses
            .iter()
            .map(|(a, l)| (a.clone(), l.iter().map(|s| s.phrase.clone()).collect()))
            .collect::<IndexMap<_, _>>(),
    )
    .expect("generated expansions are distinct");

    let samples = (0..spec.samples)
        .map(|i| {
            let (acronym, list) = &senses[rng.gen_range(0..senses.len())];
            let weights: Vec<f64> = (1..=list.len()).map(|r| 1.0 / (r as f64).powf(spec.skew)).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut gold = list.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                if u < *w {
                    gold = j;
                    break;
                }
                u -= w;
            }
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut tokens: Vec<String> = (0..len).map(|_| filler.choose(&mut rng).expect("filler").clone()).collect();
            let acronym_index = rng.gen_range(0..len);
            tokens[acronym_index] = acronym.clone();
            let mut slots: Vec<usize> = (0..len).filter(|&p| p != acronym_index).collect();
            slots.shuffle(&mut rng);
            for &slot in slots.iter().take(spec.cues_per_sentence) {
                let source = if list.len() > 1 && rng.gen::<f64>() < spec.cue_noise {
                    let others: Vec<usize> = (0..list.len()).filter(|&j| j != gold).collect();
                    *others.choose(&mut rng).expect("sibling")
                } else {
                    gold
                };
                tokens[slot] = list[source].cues.choose(&mut rng).expect("cue").clone();
            }
            Sample {
                id: format!("syn-{}-{i}", spec.seed),
                tokens,
                acronym_index,
                gold_expansion: Some(list[gold].phrase.clone()),
            }
        })
        .collect();
    SyntheticCorpus { dict, samples }
}
