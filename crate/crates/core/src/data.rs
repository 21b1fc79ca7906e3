//! Dataset and dictionary files, corpus statistics and train/dev splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{normalize_expansion, validate_sample, ExpansionDictionary, Sample};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a JSON array of samples. Structural invariants are checked here;
/// membership of gold expansions needs the dictionary, see [`validate_all`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let samples: Vec<Sample> = read_json(path.as_ref())?;
    for s in &samples {
        let violations = s.structural_violations();
        if !violations.is_empty() {
            return Err(Error::InvalidSample { id: s.id.clone(), violations });
        }
    }
    Ok(samples)
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    write_json(path.as_ref(), samples)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<ExpansionDictionary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: indexmap::IndexMap<String, Vec<String>> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    ExpansionDictionary::new(raw)
}

pub fn save_dictionary(path: impl AsRef<Path>, dict: &ExpansionDictionary) -> Result<()> {
    write_json(path.as_ref(), dict)
}

/// Fails on the first sample that violates an invariant against `dict`.
pub fn validate_all(samples: &[Sample], dict: &ExpansionDictionary) -> Result<()> {
    for s in samples {
        let violations = validate_sample(s, dict);
        if !violations.is_empty() {
            return Err(Error::InvalidSample { id: s.id.clone(), violations });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// acronyms in a sentence → number of sentences
    pub acronyms_per_sentence: BTreeMap<usize, usize>,
    /// candidate expansions of an acronym → number of distinct acronyms
    pub expansions_per_acronym: BTreeMap<usize, usize>,
    pub total_samples: usize,
    pub distinct_sentences: usize,
    pub distinct_acronyms: usize,
    pub distinct_expansions: usize,
}

/// Sentences are identified by exact token-sequence equality; acronyms
/// missing from `dict` are left out of the expansion histogram.
pub fn compute_stats(samples: &[Sample], dict: &ExpansionDictionary) -> CorpusStats {
    let mut per_sentence: HashMap<&[String], usize> = HashMap::new();
    for s in samples {
        *per_sentence.entry(s.tokens.as_slice()).or_default() += 1;
    }
    let mut acronyms_per_sentence = BTreeMap::new();
    for &k in per_sentence.values() {
        *acronyms_per_sentence.entry(k).or_default() += 1;
    }

    let acronyms: HashSet<&str> = samples.iter().filter_map(Sample::acronym).collect();
    let mut expansions_per_acronym = BTreeMap::new();
    for a in &acronyms {
        if let Some(c) = dict.candidates(a) {
            *expansions_per_acronym.entry(c.len()).or_default() += 1;
        }
    }
    let expansions: HashSet<String> = samples
        .iter()
        .filter_map(|s| s.gold_expansion.as_deref().map(normalize_expansion))
        .collect();

    CorpusStats {
        acronyms_per_sentence,
        expansions_per_acronym,
        total_samples: samples.len(),
        distinct_sentences: per_sentence.len(),
        distinct_acronyms: acronyms.len(),
        distinct_expansions: expansions.len(),
    }
}

/// Minimal SVG bar chart of a histogram.
pub fn render_histogram_svg(title: &str, x_label: &str, hist: &BTreeMap<usize, usize>) -> String {
    let (w, h, margin) = (640.0, 400.0, 50.0);
    let max = hist.values().copied().max().unwrap_or(0).max(1) as f64;
    let n = hist.len().max(1) as f64;
    let slot = (w - 2.0 * margin) / n;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(
        svg,
        r#"<line x1="{margin}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = h - margin,
        x2 = w - margin
    );
    for (i, (k, v)) in hist.iter().enumerate() {
        let bar_h = (*v as f64 / max) * (h - 2.0 * margin - 20.0);
        let x = margin + i as f64 * slot + slot * 0.1;
        let y = h - margin - bar_h;
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{bw:.1}" height="{bar_h:.1}" fill="#4c72b0"/>"##,
            bw = slot * 0.8
        );
        let cx = x + slot * 0.4;
        let _ = writeln!(svg, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, y - 4.0);
        let _ = writeln!(svg, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{k}</text>"#, h - margin + 16.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 10.0,
        xml_escape(x_label)
    );
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Deterministic train/dev split. An acronym with at least two samples
/// always keeps at least one of them in train. Both halves keep input order.
pub fn split(samples: &[Sample], dev_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Config(format!("dev_fraction {dev_fraction} not in (0, 1)")));
    }
    let target = (samples.len() as f64 * dev_fraction).round() as usize;
    let mut remaining_in_train: HashMap<&str, usize> = HashMap::new();
    for s in samples {
        *remaining_in_train.entry(s.acronym().unwrap_or("")).or_default() += 1;
    }
    let totals = remaining_in_train.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut in_dev = vec![false; samples.len()];
    let mut dev_count = 0;
    for i in order {
        if dev_count == target {
            break;
        }
        let key = samples[i].acronym().unwrap_or("");
        let left = remaining_in_train[key];
        // A singleton may leave; otherwise one sample must stay behind.
        if left == 1 && totals[key] > 1 {
            continue;
        }
        in_dev[i] = true;
        dev_count += 1;
        *remaining_in_train.get_mut(key).expect("counted above") -= 1;
    }
    let (dev, train): (Vec<_>, Vec<_>) = samples
        .iter()
        .cloned()
        .zip(in_dev)
        .partition(|(_, d)| *d);
    Ok((train.into_iter().map(|(s, _)| s).collect(), dev.into_iter().map(|(s, _)| s).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, tokens: &str, idx: usize, gold: Option<&str>) -> Sample {
        Sample {
            id: id.into(),
            tokens: tokens.split(' ').map(String::from).collect(),
            acronym_index: idx,
            gold_expansion: gold.map(String::from),
        }
    }

    #[test]
    fn single_sample_histogram() {
        let dict = ExpansionDictionary::from_pairs([("SVM", vec!["a b", "c d"])]).unwrap();
        let st = compute_stats(&[sample("1", "an SVM here", 1, Some("a b"))], &dict);
        assert_eq!(st.expansions_per_acronym, BTreeMap::from([(2, 1)]));
        assert_eq!(st.acronyms_per_sentence, BTreeMap::from([(1, 1)]));
    }

    #[test]
    fn shared_sentence_counts_two_acronyms() {
        let dict = ExpansionDictionary::from_pairs([("A", vec!["x"]), ("B", vec!["y"])]).unwrap();
        let st = compute_stats(
            &[sample("1", "A and B", 0, None), sample("2", "A and B", 2, None)],
            &dict,
        );
        assert_eq!(st.acronyms_per_sentence, BTreeMap::from([(2, 1)]));
    }

    #[test]
    fn toy_corpus_matches_hand_count() {
        // Six sentences: s1 has 3 acronyms, s2 and s3 have 2, s4..s6 have 1.
        let dict = ExpansionDictionary::from_pairs([
            ("AA", vec!["e1"]),
            ("BB", vec!["e1", "e2"]),
            ("CC", vec!["e1", "e2"]),
            ("DD", vec!["e1", "e2", "e3"]),
            ("EE", vec!["e1", "e2", "e3", "e4"]),
        ])
        .unwrap();
        let rows = [
            ("s1", "AA BB CC", 0),
            ("s1", "AA BB CC", 1),
            ("s1", "AA BB CC", 2),
            ("s2", "DD x EE", 0),
            ("s2", "DD x EE", 2),
            ("s3", "BB y DD", 0),
            ("s3", "BB y DD", 2),
            ("s4", "AA z", 0),
            ("s5", "q EE", 1),
            ("s6", "CC w", 0),
        ];
        let samples: Vec<Sample> = rows
            .iter()
            .enumerate()
            .map(|(i, (_, t, idx))| sample(&i.to_string(), t, *idx, None))
            .collect();
        let st = compute_stats(&samples, &dict);
        // Hand count: {1: s4 s5 s6, 2: s2 s3, 3: s1}.
        assert_eq!(st.acronyms_per_sentence, BTreeMap::from([(1, 3), (2, 2), (3, 1)]));
        // AA→1; BB,CC→2; DD→3; EE→4.
        assert_eq!(st.expansions_per_acronym, BTreeMap::from([(1, 1), (2, 2), (3, 1), (4, 1)]));
        assert_eq!(st.distinct_sentences, 6);
        assert_eq!(st.distinct_acronyms, 5);
        let weighted: usize = st.acronyms_per_sentence.iter().map(|(k, c)| k * c).sum();
        assert_eq!(weighted, st.total_samples);
    }

    #[test]
    fn split_is_deterministic_and_sized() {
        let samples: Vec<Sample> = (0..100)
            .map(|i| sample(&i.to_string(), &format!("A{} w", i % 7), 0, None))
            .collect();
        let (tr, dv) = split(&samples, 0.1, 7).unwrap();
        assert_eq!((tr.len(), dv.len()), (90, 10));
        let (tr2, dv2) = split(&samples, 0.1, 7).unwrap();
        assert_eq!((tr, dv), (tr2, dv2));
    }

    #[test]
    fn split_rejects_degenerate_fraction() {
        assert!(split(&[], 0.0, 1).is_err());
        assert!(split(&[], 1.0, 1).is_err());
    }

    #[test]
    fn two_sample_acronym_keeps_one_in_train() {
        // Toy corpus: one acronym with exactly two samples plus singletons;
        // a large dev fraction puts pressure on the constraint.
        let mut samples = vec![sample("p1", "PAIR a", 0, None), sample("p2", "PAIR b", 0, None)];
        samples.extend((0..4).map(|i| sample(&format!("s{i}"), &format!("S{i} x"), 0, None)));
        for seed in 0..100 {
            let (train, dev) = split(&samples, 0.5, seed).unwrap();
            assert_eq!(train.len() + dev.len(), samples.len());
            assert!(
                train.iter().any(|s| s.tokens[0] == "PAIR"),
                "seed {seed}: both PAIR samples went to dev"
            );
        }
    }

    #[test]
    fn empty_dataset_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.json");
        fs::write(&p, "[]").unwrap();
        assert!(load_dataset(&p).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_record_is_rejected_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        fs::write(&p, r#"[{"id": "ok", "tokens": ["A"], "acronym": 0},
                          {"id": "bad-7", "tokens": ["A", "b"], "acronym": 2}]"#)
            .unwrap();
        match load_dataset(&p) {
            Err(Error::InvalidSample { id, .. }) => assert_eq!(id, "bad-7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.json");
        fs::write(&p, "[\n{\"id\": \"a\",\n  \"tokens\": [\"A\"\n]").unwrap();
        match load_dataset(&p) {
            Err(Error::Parse { line, .. }) => assert!(line >= 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dictionary_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        fs::write(&p, r#"{"SVM": ["support vector machine", "state vector machine"]}"#).unwrap();
        let d = load_dictionary(&p).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.candidates("SVM").unwrap().len(), 2);
        assert_eq!(d.candidates("SVM").unwrap()[1], "state vector machine");

        fs::write(&p, "{}").unwrap();
        assert!(load_dictionary(&p).unwrap().is_empty());

        fs::write(&p, r#"{"A": ["x", "x"]}"#).unwrap();
        assert!(matches!(load_dictionary(&p), Err(Error::DuplicateExpansion { .. })));
    }
}
