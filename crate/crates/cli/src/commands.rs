use std::fs;
use std::path::{Path, PathBuf};

use acrodis_core::checkpoint::{Checkpoint, CheckpointKind, Provenance};
use acrodis_core::data::{compute_stats, load_dataset, load_dictionary, read_json, render_histogram_svg, validate_all, write_json};
use acrodis_core::eval::{error_report, evaluate, mf_predictions, predict_all, render_error_report};
use acrodis_core::pairs::build_vocab;
use acrodis_core::pseudo::{run_rounds, save_pseudo};
use acrodis_core::tapt::tapt_train;
use acrodis_core::train::{train as run_training, TrainOutcome};
use acrodis_core::{model_config, Classifier, Error, ExpansionDictionary, Sample, ScoredPrediction, Strategies, TrainConfig, Tokenizer};
use anyhow::Context;
use log::{info, warn};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{require, Baseline, ConfigArgs, EvalArgs, PredictArgs, PseudoArgs, StatsArgs, StrategyArgs, TaptArgs, TrainArgs};

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                require(path)?;
                read_json::<TrainConfig>(path)?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { c.$field = v; })* };
        }
        set!(
            batch_size, epochs, lr_encoder, lr_head, lr_decay_factor, lr_min, negatives_per_batch,
            adversarial_epsilon, pseudo_threshold, pseudo_rounds, mask_rate, tapt_epochs, dropout_rate,
            max_seq_len, vocab_min_count, seed
        );
        let e = &mut c.encoder;
        if let Some(v) = self.layers {
            e.layers = v;
        }
        if let Some(v) = self.hidden_dim {
            e.hidden_dim = v;
        }
        if let Some(v) = self.attention_heads {
            e.attention_heads = v;
        }
        if let Some(v) = self.feedforward_dim {
            e.feedforward_dim = v;
        }
        if let Some(v) = self.max_positions {
            e.max_positions = v;
        }
        c.validate()?;
        Ok(c)
    }
}

impl StrategyArgs {
    fn strategies(&self) -> Strategies {
        Strategies { dynamic_negatives: !self.no_dynamic_negatives, adversarial: self.adversarial }
    }
}

/// `metrics.json` → `metrics.manifest.json`.
fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn mkdir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ensure_parent(file: &Path) -> anyhow::Result<()> {
    match file.parent() {
        Some(d) if !d.as_os_str().is_empty() => mkdir(d),
        _ => Ok(()),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_labelled(path: &Path, dict: &ExpansionDictionary) -> anyhow::Result<Vec<Sample>> {
    let samples = load_dataset(path)?;
    validate_all(&samples, dict)?;
    Ok(samples)
}

fn load_model(path: &Path) -> anyhow::Result<(Checkpoint, Classifier)> {
    let ck = Checkpoint::load(path)?;
    let model = ck.to_model(ck.train_config.seed)?;
    Ok((ck, model))
}

/// Encoder from a pretraining checkpoint under the current dropout rate,
/// with a fresh head.
fn load_tapt(path: &Path, cfg: &TrainConfig) -> anyhow::Result<(Classifier, Tokenizer, Provenance)> {
    let mut ck = Checkpoint::load(path)?;
    ck.model.dropout_rate = cfg.dropout_rate;
    let model = ck.to_model(cfg.seed)?;
    Ok((Classifier::with_encoder_from(&model, cfg.seed)?, ck.tokenizer, ck.provenance))
}

pub fn stats(a: StatsArgs) -> anyhow::Result<()> {
    let json = a.out.join("stats.json");
    let per_sentence = a.out.join("acronyms_per_sentence.svg");
    let per_acronym = a.out.join("expansions_per_acronym.svg");
    mkdir(&a.out)?;
    RunManifest::new("stats", 0, &serde_json::Value::Null, &[&a.data, &a.dict])?
        .output(&json)
        .output(&per_sentence)
        .output(&per_acronym)
        .write(&a.out.join("manifest.json"))?;
    let dict = load_dictionary(&a.dict)?;
    let samples = load_labelled(&a.data, &dict)?;
    let stats = compute_stats(&samples, &dict);
    write_json(&json, &stats)?;
    let svg = render_histogram_svg("Acronyms per sentence", "acronyms in sentence", &stats.acronyms_per_sentence);
    fs::write(&per_sentence, svg)?;
    let svg = render_histogram_svg("Expansions per acronym", "candidate expansions", &stats.expansions_per_acronym);
    fs::write(&per_acronym, svg)?;
    info!("{} samples, {} distinct sentences, {} acronyms", stats.total_samples, stats.distinct_sentences, stats.distinct_acronyms);
    Ok(())
}

pub fn tapt(a: TaptArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    let encoder = a.out.join("encoder.json");
    let log_path = a.out.join("tapt_log.jsonl");
    mkdir(&a.out)?;
    let mut inputs: Vec<&Path> = a.data.iter().map(PathBuf::as_path).collect();
    inputs.push(&a.dict);
    RunManifest::new("tapt", cfg.seed, &cfg, &inputs)?
        .output(&encoder)
        .output(&log_path)
        .write(&a.out.join("manifest.json"))?;

    let dict = load_dictionary(&a.dict)?;
    let mut samples = Vec::new();
    for path in &a.data {
        samples.extend(load_labelled(path, &dict)?);
    }
    let tok = build_vocab(&samples, &dict, cfg.vocab_min_count);
    info!("pretraining corpus: {} samples, vocabulary {}", samples.len(), tok.len());
    let model = Classifier::new(model_config(&tok, &cfg), cfg.seed)?;
    let out = tapt_train(model, &samples, &dict, &tok, cfg.tapt_epochs, &cfg)?;

    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        mlm_loss: f64,
    }
    let rows: Vec<Row> = out.loss_history.iter().enumerate().map(|(i, &l)| Row { epoch: i + 1, mlm_loss: l }).collect();
    write_jsonl(&log_path, &rows)?;
    let provenance = Provenance { tapt: true, tapt_epochs: cfg.tapt_epochs, seed: cfg.seed, ..Provenance::default() };
    Checkpoint::from_model(&out.model, CheckpointKind::Encoder, &tok, &cfg, provenance).save(&encoder)?;
    Ok(())
}

/// Writes the model, log and dev artifacts shared by `train` and `pseudo`.
fn write_training_outputs(
    out_dir: &Path,
    outcome: &TrainOutcome,
    tok: &Tokenizer,
    cfg: &TrainConfig,
    provenance: Provenance,
    dev: &[Sample],
    dict: &ExpansionDictionary,
) -> anyhow::Result<()> {
    write_jsonl(&out_dir.join("train_log.jsonl"), &outcome.log)?;
    let provenance = Provenance { best_epoch: outcome.best_epoch, ..provenance };
    Checkpoint::from_model(&outcome.model, CheckpointKind::Classifier, tok, cfg, provenance).save(out_dir.join("model.json"))?;
    if !dev.is_empty() {
        let preds = predict_all(dev, &outcome.model, dict, tok, cfg.max_seq_len)?;
        write_json(&out_dir.join("dev_predictions.json"), &preds)?;
        let metrics = evaluate(dev, &preds)?;
        info!("dev macro P {:.4} R {:.4} F1 {:.4}", metrics.precision, metrics.recall, metrics.f1);
        write_json(&out_dir.join("dev_metrics.json"), &metrics)?;
    }
    Ok(())
}

fn training_output_paths(out: &Path, has_dev: bool) -> Vec<PathBuf> {
    let mut v = vec![out.join("model.json"), out.join("train_log.jsonl")];
    if has_dev {
        v.push(out.join("dev_predictions.json"));
        v.push(out.join("dev_metrics.json"));
    }
    v
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.resolve()?;
    let strategies = a.strategies.strategies();
    let mut inputs: Vec<&Path> = vec![&a.train, &a.dict];
    inputs.extend(a.dev.as_deref());
    inputs.extend(a.strategies.from_tapt.as_deref());
    mkdir(&a.out)?;
    let mut manifest = RunManifest::new("train", cfg.seed, &(&cfg, strategies), &inputs)?;
    for p in training_output_paths(&a.out, a.dev.is_some()) {
        manifest = manifest.output(p);
    }
    manifest.write(&a.out.join("manifest.json"))?;

    let dict = load_dictionary(&a.dict)?;
    let train_samples = load_labelled(&a.train, &dict)?;
    let dev = match &a.dev {
        Some(p) => load_labelled(p, &dict)?,
        None => Vec::new(),
    };
    let (init, tok, mut provenance) = match &a.strategies.from_tapt {
        Some(path) => {
            let (init, tok, p) = load_tapt(path, &cfg)?;
            if init.config.encoder != cfg.encoder {
                warn!("encoder layout taken from {}", path.display());
                cfg.encoder = init.config.encoder;
            }
            (init, tok, p)
        }
        None => {
            let tok = build_vocab(&train_samples, &dict, cfg.vocab_min_count);
            (Classifier::new(model_config(&tok, &cfg), cfg.seed)?, tok, Provenance::default())
        }
    };
    provenance.dynamic_negatives = strategies.dynamic_negatives;
    provenance.adversarial = strategies.adversarial;
    provenance.seed = cfg.seed;
    let outcome = run_training(init, &train_samples, &dev, &dict, &tok, &cfg, strategies)?;
    write_training_outputs(&a.out, &outcome, &tok, &cfg, provenance, &dev, &dict)
}

pub fn pseudo(a: PseudoArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.resolve()?;
    let strategies = a.strategies.strategies();
    let mut inputs: Vec<&Path> = vec![&a.model, &a.train, &a.unlabeled, &a.dict];
    inputs.extend(a.dev.as_deref());
    inputs.extend(a.strategies.from_tapt.as_deref());
    mkdir(&a.out)?;
    let pseudo_path = a.out.join("pseudo_labels.json");
    let mut manifest = RunManifest::new("pseudo", cfg.seed, &(&cfg, strategies), &inputs)?.output(&pseudo_path);
    for p in training_output_paths(&a.out, a.dev.is_some()) {
        manifest = manifest.output(p);
    }
    manifest.write(&a.out.join("manifest.json"))?;

    let dict = load_dictionary(&a.dict)?;
    let train_samples = load_labelled(&a.train, &dict)?;
    let dev = match &a.dev {
        Some(p) => load_labelled(p, &dict)?,
        None => Vec::new(),
    };
    let unlabeled = load_dataset(&a.unlabeled)?;
    let (teacher_ck, teacher) = load_model(&a.model)?;
    let tok = teacher_ck.tokenizer.clone();
    cfg.encoder = teacher.config.encoder;
    let (base, mut provenance) = match &a.strategies.from_tapt {
        Some(path) => {
            let (base, tapt_tok, p) = load_tapt(path, &cfg)?;
            if tapt_tok != tok {
                return Err(Error::Config(format!("{} and {} use different vocabularies", path.display(), a.model.display())).into());
            }
            (base, p)
        }
        None => {
            let mc = acrodis_core::ModelConfig { dropout_rate: cfg.dropout_rate, ..teacher.config };
            (Classifier::new(mc, cfg.seed)?, Provenance::default())
        }
    };
    let result = run_rounds(teacher, &base, &train_samples, &dev, &unlabeled, &dict, &tok, &cfg, strategies, cfg.pseudo_rounds)?;
    info!("{} pseudo-labelled samples in the final round", result.pseudo.len());
    save_pseudo(&pseudo_path, &result.pseudo)?;
    provenance.dynamic_negatives = strategies.dynamic_negatives;
    provenance.adversarial = strategies.adversarial;
    provenance.pseudo_rounds = result.rounds;
    provenance.seed = cfg.seed;
    write_training_outputs(&a.out, &result.outcome, &tok, &cfg, provenance, &dev, &dict)
}

pub fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let manifest = RunManifest::new("predict", 0, &serde_json::Value::Null, &[&a.model, &a.data, &a.dict])?.output(&a.out);
    ensure_parent(&a.out)?;
    manifest.write(&sidecar(&a.out))?;
    let dict = load_dictionary(&a.dict)?;
    let samples = load_dataset(&a.data)?;
    validate_all(&samples, &dict)?;
    let (ck, model) = load_model(&a.model)?;
    let preds = predict_all(&samples, &model, &dict, &ck.tokenizer, ck.train_config.max_seq_len)?;
    write_json(&a.out, &preds)?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.predictions.as_deref());
    inputs.extend(a.train.as_deref());
    inputs.extend(a.dict.as_deref());
    let mut manifest = RunManifest::new("eval", a.seed, &serde_json::json!({ "baseline": a.baseline.map(|_| "mf"), "error_sample": a.error_sample }), &inputs)?.output(&a.out);
    if let Some(dir) = &a.errors {
        manifest = manifest.output(dir.join("errors.json")).output(dir.join("errors.txt"));
    }
    ensure_parent(&a.out)?;
    manifest.write(&sidecar(&a.out))?;

    let samples = load_dataset(&a.data)?;
    let preds: Vec<ScoredPrediction> = match (a.baseline, &a.predictions) {
        (Some(Baseline::Mf), _) => {
            let dict_path = a.dict.as_deref().expect("clap requires --dict");
            let train_path = a.train.as_deref().expect("clap requires --train");
            let dict = load_dictionary(dict_path)?;
            let train = load_labelled(train_path, &dict)?;
            validate_all(&samples, &dict)?;
            mf_predictions(&train, &samples, &dict)?
        }
        (None, Some(p)) => read_json(p)?,
        (None, None) => unreachable!("clap requires --predictions or --baseline"),
    };
    let metrics = evaluate(&samples, &preds)?;
    info!("macro P {:.4} R {:.4} F1 {:.4}, accuracy {:.4}", metrics.precision, metrics.recall, metrics.f1, metrics.accuracy);
    write_json(&a.out, &metrics)?;
    if let Some(dir) = &a.errors {
        mkdir(dir)?;
        let records = error_report(&samples, &preds, a.error_sample, a.seed);
        write_json(&dir.join("errors.json"), &records)?;
        fs::write(dir.join("errors.txt"), render_error_report(&records))?;
    }
    Ok(())
}
