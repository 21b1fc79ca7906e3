use std::collections::HashMap;

use acrodis_core::eval::{evaluate, metrics_from_pairs, normalized_indel_distance};
use acrodis_core::model::extract_representation;
use acrodis_core::pairs::{build_pairs_with_len, build_vocab, SPECIAL_TOKENS};
use acrodis_core::tapt::{make_masking_plan, mask_count};
use acrodis_core::train::plan_batches;
use acrodis_core::types::normalize_expansion;
use acrodis_core::{ExpansionDictionary, PairInstance, Sample, ScoredPrediction, Span, TrainConfig};
use acrodis_tensor::Matrix;
use indexmap::IndexMap;
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

fn sample() -> impl Strategy<Value = Sample> {
    (prop::collection::vec(word(), 1..12), any::<prop::sample::Index>(), prop::option::of(word()), "[a-z0-9]{1,8}")
        .prop_map(|(tokens, idx, gold, id)| {
            let acronym_index = idx.index(tokens.len());
            Sample { id, tokens, acronym_index, gold_expansion: gold }
        })
}

fn dictionary() -> impl Strategy<Value = ExpansionDictionary> {
    prop::collection::btree_map("[A-Z]{2,4}", prop::collection::btree_set("[a-z]{1,5}( [a-z]{1,5}){0,2}", 1..5), 1..5)
        .prop_map(|m| {
            let entries: IndexMap<String, Vec<String>> =
                m.into_iter().map(|(a, set)| (a, set.into_iter().collect())).collect();
            ExpansionDictionary::new(entries).unwrap()
        })
}

fn pairs(npos: usize, nneg: usize) -> Vec<PairInstance> {
    (0..npos + nneg)
        .map(|k| PairInstance {
            sample_id: format!("s{k}"),
            expansion: format!("e{k}"),
            input_tokens: Vec::new(),
            segment_a_len: 0,
            acronym_span: Span { start: 0, end: 0 },
            label: Some(k < npos),
        })
        .collect()
}

proptest! {
    #[test]
    fn sample_json_round_trip(s in sample()) {
        let text = serde_json::to_string(&s).unwrap();
        prop_assert_eq!(serde_json::from_str::<Sample>(&text).unwrap(), s);
    }

    #[test]
    fn dictionary_json_round_trip_keeps_order(d in dictionary()) {
        let text = serde_json::to_string(&d).unwrap();
        let back: ExpansionDictionary = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.iter().collect::<Vec<_>>(), d.iter().collect::<Vec<_>>());
    }

    #[test]
    fn prediction_json_round_trip(scores in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let p = ScoredPrediction::from_scores("x", scores.iter().enumerate().map(|(i, &s)| (format!("e{i}"), s)).collect());
        let text = serde_json::to_string(&p).unwrap();
        prop_assert_eq!(serde_json::from_str::<ScoredPrediction>(&text).unwrap(), p);
    }

    #[test]
    fn argmax_survives_monotone_transforms(scores in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let named = |f: &dyn Fn(f64) -> f64| scores.iter().enumerate().map(|(i, &s)| (format!("e{i}"), f(s))).collect::<Vec<_>>();
        let base = ScoredPrediction::from_scores("x", named(&|s| s));
        let logit = ScoredPrediction::from_scores("x", named(&|s| (s / (1.0 - s + 1e-12)).ln()));
        let cubed = ScoredPrediction::from_scores("x", named(&|s| 3.0 * s * s * s + 1.0));
        prop_assert_eq!(&base.selected, &logit.selected);
        prop_assert_eq!(&base.selected, &cubed.selected);
        // Oracle: first index holding the maximum.
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = scores.iter().position(|&s| s == max).unwrap();
        prop_assert_eq!(base.selected, format!("e{first}"));
    }

    #[test]
    fn evaluate_ignores_order(
        labels in prop::collection::vec((0usize..4, 0usize..4), 1..30),
        seed in any::<u64>(),
    ) {
        let samples: Vec<Sample> = labels.iter().enumerate().map(|(i, (g, _))| Sample {
            id: format!("s{i}"), tokens: vec!["A".into()], acronym_index: 0, gold_expansion: Some(format!("e{g}")),
        }).collect();
        let preds: Vec<ScoredPrediction> = labels.iter().enumerate().map(|(i, (_, p))| {
            ScoredPrediction::from_scores(format!("s{i}"), vec![(format!("e{p}"), 1.0)])
        }).collect();
        let m = evaluate(&samples, &preds).unwrap();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut state = seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let s2: Vec<Sample> = order.iter().map(|&i| samples[i].clone()).collect();
        let mut p2 = preds.clone();
        p2.reverse();
        let m2 = evaluate(&s2, &p2).unwrap();
        prop_assert!((m.f1 - m2.f1).abs() < 1e-12);
        prop_assert!((m.precision - m2.precision).abs() < 1e-12);
        prop_assert!((m.recall - m2.recall).abs() < 1e-12);
        for v in [m.precision, m.recall, m.f1, m.accuracy, m.f1_of_macro_pr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn macro_metrics_match_counting_oracle(labels in prop::collection::vec((0usize..3, 0usize..3), 1..40)) {
        let pairs: Vec<(String, String)> = labels.iter().map(|(g, p)| (format!("c{g}"), format!("c{p}"))).collect();
        let m = metrics_from_pairs(&pairs);
        let mut classes: Vec<usize> = labels.iter().flat_map(|&(g, p)| [g, p]).collect();
        classes.sort_unstable();
        classes.dedup();
        let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
        for &c in &classes {
            let tp = labels.iter().filter(|&&(g, p)| g == c && p == c).count() as f64;
            let pred = labels.iter().filter(|&&(_, p)| p == c).count() as f64;
            let gold = labels.iter().filter(|&&(g, _)| g == c).count() as f64;
            let p = if pred > 0.0 { tp / pred } else { 0.0 };
            let r = if gold > 0.0 { tp / gold } else { 0.0 };
            sp += p;
            sr += r;
            sf += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let n = classes.len() as f64;
        prop_assert!((m.precision - sp / n).abs() < 1e-12);
        prop_assert!((m.recall - sr / n).abs() < 1e-12);
        prop_assert!((m.f1 - sf / n).abs() < 1e-12);
    }

    #[test]
    fn extraction_is_linear(
        rows in 3usize..8,
        d in 1usize..5,
        vals in prop::collection::vec(-10.0f64..10.0, 80),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let m = Matrix::from_shape_fn((rows, d), |(r, c)| vals[r * d + c]);
        let n = Matrix::from_shape_fn((rows, d), |(r, c)| vals[40 + r * d + c]);
        let span = Span { start: 1, end: rows - 1 };
        let lhs = extract_representation(&(&m * a + &n * b), 0, span).unwrap();
        let em = extract_representation(&m, 0, span).unwrap();
        let en = extract_representation(&n, 0, span).unwrap();
        for k in 0..lhs.len() {
            prop_assert!((lhs[k] - (a * em[k] + b * en[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn extraction_ignores_other_rows(vals in prop::collection::vec(-10.0f64..10.0, 24), swap in 3usize..6) {
        // Rows 0 (cls), 1 and 2 (span) are read; rows 3.. may be permuted freely.
        let m = Matrix::from_shape_vec((6, 4), vals).unwrap();
        let mut p = m.clone();
        let last = p.row(5).to_owned();
        let other = p.row(swap).to_owned();
        p.row_mut(5).assign(&other);
        p.row_mut(swap).assign(&last);
        let span = Span { start: 1, end: 2 };
        prop_assert_eq!(extract_representation(&m, 0, span).unwrap(), extract_representation(&p, 0, span).unwrap());
    }

    #[test]
    fn masking_never_touches_special_tokens(
        mut s in sample(),
        rate in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        s.gold_expansion = None;
        let dict = ExpansionDictionary::from_pairs([(s.acronym().unwrap(), vec!["some expansion"])]).unwrap();
        let tok = build_vocab(std::slice::from_ref(&s), &dict, 1);
        for pair in build_pairs_with_len(&s, &dict, 32).unwrap() {
            let ids = tok.encode_pair(&pair).token_ids;
            let plan = make_masking_plan(&ids, &tok, rate, seed);
            let maskable = ids.iter().filter(|&&i| !tok.is_special(i)).count();
            prop_assert_eq!(plan.positions.len(), mask_count(maskable, rate));
            for &p in &plan.positions {
                prop_assert!(!SPECIAL_TOKENS.contains(&tok.token(ids[p]).unwrap()));
            }
        }
    }

    #[test]
    fn batch_plans_cover_every_pair(
        npos in 1usize..120,
        nneg in 1usize..200,
        bs in 1usize..40,
        npb in 0usize..40,
        seed in any::<u64>(),
    ) {
        let pairs = pairs(npos, nneg);
        let cfg = TrainConfig { batch_size: bs, negatives_per_batch: npb, ..TrainConfig::default() };
        let plan = plan_batches(&pairs, &cfg, 1, seed).unwrap();
        let mut pos_seen = vec![0usize; npos + nneg];
        let mut neg_seen: HashMap<usize, usize> = HashMap::new();
        let mut quota = 0;
        for b in &plan {
            for &i in &b.positives {
                prop_assert_eq!(pairs[i].label, Some(true));
                pos_seen[i] += 1;
            }
            for &i in &b.negatives {
                prop_assert_eq!(pairs[i].label, Some(false));
                *neg_seen.entry(i).or_default() += 1;
            }
            if b.positives.len() == bs {
                prop_assert_eq!(b.negatives.len(), npb);
            }
            quota += b.negatives.len();
        }
        prop_assert!(pos_seen[..npos].iter().all(|&c| c == 1));
        if quota >= nneg {
            prop_assert_eq!(neg_seen.len(), nneg);
        }
        let bound = quota.div_ceil(nneg);
        prop_assert!(neg_seen.values().all(|&c| c <= bound.max(1)));
    }

    #[test]
    fn indel_distance_is_a_bounded_symmetric_dissimilarity(a in "[a-z ]{0,12}", b in "[a-z ]{0,12}") {
        let d = normalized_indel_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - normalized_indel_distance(&b, &a)).abs() < 1e-15);
        prop_assert_eq!(d == 0.0, normalize_expansion(&a) == normalize_expansion(&b));
    }
}
