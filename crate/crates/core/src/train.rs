//! Classification training loop.
//!
//! Each epoch partitions the positive pairs into batches and tops every batch
//! up with a fixed number of negatives drawn from a per-epoch reshuffle of the
//! negative pool. Optionally, every step adds a second backward pass at an
//! L2-normalised gradient perturbation of the token embedding table. The two
//! learning-rate groups decay together whenever dev macro F1 fails to improve.

use acrodis_tensor::{Adam, Grads, ParamGroup, Tape};
use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, predict_all};
use crate::model::{Classifier, Encoder, Mode};
use crate::pairs::{build_pairs_with_len, FormattedInput, Tokenizer};
use crate::types::{ExpansionDictionary, MetricsReport, PairInstance, Sample, TrainConfig};

const PROB_CLAMP: f64 = 1e-7;

/// Indices into the pair list for one optimisation step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub epoch: usize,
    pub step: usize,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn split_by_label(pairs: &[PairInstance]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        match p.label {
            Some(true) => pos.push(i),
            Some(false) => neg.push(i),
            None => {}
        }
    }
    (pos, neg)
}

/// Dynamic negative selection for one epoch.
///
/// Positives are shuffled and cut into batches of `batch_size`. Each full
/// batch receives `negatives_per_batch` negatives read sequentially from a
/// shuffled pool; an exhausted pool is reshuffled and read again. A final
/// partial batch gets a proportional share, rounded up, so its balance
/// matches the full batches.
pub fn plan_batches(
    pairs: &[PairInstance],
    cfg: &TrainConfig,
    epoch: usize,
    epoch_seed: u64,
) -> Result<Vec<BatchPlan>> {
    let (mut pos, mut pool) = split_by_label(pairs);
    if pos.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    pos.shuffle(&mut rng);
    pool.shuffle(&mut rng);
    let mut cursor = 0;
    let bs = cfg.batch_size;
    let npb = cfg.negatives_per_batch;

    Ok(pos
        .chunks(bs)
        .enumerate()
        .map(|(step, chunk)| {
            let quota = if pool.is_empty() { 0 } else { (npb * chunk.len()).div_ceil(bs) };
            let mut negatives = Vec::with_capacity(quota);
            while negatives.len() < quota {
                if cursor == pool.len() {
                    pool.shuffle(&mut rng);
                    cursor = 0;
                }
                negatives.push(pool[cursor]);
                cursor += 1;
            }
            BatchPlan { positives: chunk.to_vec(), negatives, epoch, step }
        })
        .collect())
}

/// Every labelled pair once, shuffled, in batches of `batch_size` with no
/// rebalancing. This is the baseline the dynamic selection is compared to.
pub fn plan_all_pairs(pairs: &[PairInstance], cfg: &TrainConfig, epoch: usize, epoch_seed: u64) -> Result<Vec<BatchPlan>> {
    let (pos, neg) = split_by_label(pairs);
    if pos.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut all: Vec<usize> = pos.into_iter().chain(neg).collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(all
        .chunks(cfg.batch_size)
        .enumerate()
        .map(|(step, chunk)| {
            let (p, n): (Vec<usize>, Vec<usize>) =
                chunk.iter().partition(|&&i| pairs[i].label == Some(true));
            BatchPlan { positives: p, negatives: n, epoch, step }
        })
        .collect())
}

/// Mean binary cross-entropy; scores are clamped 1e-7 away from 0 and 1.
pub fn binary_loss(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    if scores.is_empty() {
        return 0.0;
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum();
    total / scores.len() as f64
}

/// Result of one perturbed pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialOutcome {
    /// Loss at the perturbed embeddings.
    pub loss: f64,
    /// L2 norm of the perturbation actually applied; `None` when skipped.
    pub delta_norm: Option<f64>,
}

/// Adds `epsilon · g / ‖g‖₂` to the token embedding table, where `g` is the
/// embedding gradient already in `grads`, runs a second forward/backward pass
/// whose gradients are accumulated into `grads`, then restores the table.
///
/// `mode` should replay the dropout masks of the clean pass.
pub fn adversarial_step(
    model: &mut Classifier,
    inputs: &[&FormattedInput],
    labels: &[f64],
    epsilon: f64,
    grads: &mut Grads,
    mode: &mut Mode,
) -> Result<AdversarialOutcome> {
    let table = model.encoder.embedding_table();
    let norm = grads.l2_norm(table);
    if !(norm > 0.0) || !norm.is_finite() {
        warn!("embedding gradient norm is {norm}; skipping adversarial perturbation");
        return Ok(AdversarialOutcome { loss: f64::NAN, delta_norm: None });
    }
    let delta = grads.get(table).expect("norm > 0 implies a gradient") * (epsilon / norm);
    let delta_norm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let saved = model.params.value(table).clone();
    *model.params.value_mut(table) += &delta;

    let result = (|| {
        let tape_grads;
        let loss;
        {
            let mut tape = Tape::new(&model.params);
            let l = model.batch_loss(&mut tape, inputs, labels, mode)?;
            loss = tape.scalar(l);
            tape_grads = tape.backward(l);
        }
        Ok::<_, Error>((loss, tape_grads))
    })();
    *model.params.value_mut(table) = saved;
    let (loss, adv_grads) = result?;
    grads.merge(&adv_grads);
    Ok(AdversarialOutcome { loss, delta_norm: Some(delta_norm) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dev: Option<MetricsReport>,
    pub lr_encoder: f64,
    pub lr_head: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub lr_encoder_current: f64,
    pub lr_head_current: f64,
    /// `None` until the first evaluation.
    pub best_dev_f1: Option<f64>,
    pub epoch_history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr_encoder_current: cfg.lr_encoder,
            lr_head_current: cfg.lr_head,
            best_dev_f1: None,
            epoch_history: Vec::new(),
        }
    }

    pub fn lr_for(&self, group: ParamGroup) -> Option<f64> {
        match group {
            ParamGroup::Encoder => Some(self.lr_encoder_current),
            ParamGroup::Head => Some(self.lr_head_current),
            ParamGroup::Pretraining => None,
        }
    }
}

/// Decay-on-plateau: keep the rates on strict improvement, otherwise multiply
/// both by `lr_decay_factor` and clamp at `lr_min`.
pub fn lr_schedule_update(mut state: TrainState, dev_f1: f64, cfg: &TrainConfig) -> TrainState {
    match state.best_dev_f1 {
        Some(best) if dev_f1 <= best => {
            state.lr_encoder_current = (state.lr_encoder_current * cfg.lr_decay_factor).max(cfg.lr_min);
            state.lr_head_current = (state.lr_head_current * cfg.lr_decay_factor).max(cfg.lr_min);
        }
        _ => state.best_dev_f1 = Some(dev_f1),
    }
    state
}

/// Which optional strategies a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategies {
    pub dynamic_negatives: bool,
    pub adversarial: bool,
}

impl Default for Strategies {
    fn default() -> Self {
        Self { dynamic_negatives: true, adversarial: false }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_precision: Option<f64>,
    pub dev_recall: Option<f64>,
    pub dev_f1: Option<f64>,
    pub lr_encoder: f64,
    pub lr_head: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev macro F1 (last epoch
    /// when there is no dev set).
    pub model: Classifier,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

pub(crate) fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Pairs and their encodings for a labelled sample set.
pub fn encode_samples(
    samples: &[Sample],
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    max_len: usize,
) -> Result<(Vec<PairInstance>, Vec<FormattedInput>)> {
    let mut pairs = Vec::new();
    for s in samples {
        pairs.extend(build_pairs_with_len(s, dict, max_len)?);
    }
    let inputs = pairs.iter().map(|p| tok.encode_pair(p)).collect();
    Ok((pairs, inputs))
}

/// Runs `cfg.epochs` epochs from `init` and keeps the best-dev checkpoint.
pub fn train(
    init: Classifier,
    train_samples: &[Sample],
    dev_samples: &[Sample],
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    cfg: &TrainConfig,
    strategies: Strategies,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = TrainState::new(cfg);
    let mut model = init;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model, state, log: Vec::new(), best_epoch: None });
    }
    let (pairs, inputs) = encode_samples(train_samples, dict, tok, cfg.max_seq_len)?;
    let adversarial = strategies.adversarial && cfg.adversarial_epsilon > 0.0;
    let mut adam = Adam::default();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut best: Option<(Classifier, usize)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let seed = epoch_seed(cfg.seed, epoch);
        let plan = if strategies.dynamic_negatives {
            plan_batches(&pairs, cfg, epoch, seed)?
        } else {
            plan_all_pairs(&pairs, cfg, epoch, seed)?
        };
        let (lr_enc, lr_head) = (state.lr_encoder_current, state.lr_head_current);
        let mut loss_sum = 0.0;
        for batch in &plan {
            let idx: Vec<usize> = batch.positives.iter().chain(&batch.negatives).copied().collect();
            let batch_inputs: Vec<&FormattedInput> = idx.iter().map(|&i| &inputs[i]).collect();
            let labels: Vec<f64> = idx.iter().map(|&i| f64::from(pairs[i].label == Some(true))).collect();

            let replay = dropout_rng.clone();
            let (loss, mut grads) = {
                let mut tape = Tape::new(&model.params);
                let mut mode = Mode::Training { rng: &mut dropout_rng };
                let l = model.batch_loss(&mut tape, &batch_inputs, &labels, &mut mode)?;
                (tape.scalar(l), tape.backward(l))
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch, step: batch.step, loss });
            }
            if adversarial {
                let mut replay = replay;
                let out = adversarial_step(
                    &mut model,
                    &batch_inputs,
                    &labels,
                    cfg.adversarial_epsilon,
                    &mut grads,
                    &mut Mode::Training { rng: &mut replay },
                )?;
                if out.delta_norm.is_some() && (!out.loss.is_finite() || !grads.all_finite()) {
                    return Err(Error::Divergence { epoch, step: batch.step, loss: out.loss });
                }
            }
            adam.step(&mut model.params, &grads, |g| state.lr_for(g));
            loss_sum += loss;
        }
        let train_loss = loss_sum / plan.len().max(1) as f64;

        let dev = if dev_samples.is_empty() {
            None
        } else {
            let preds = predict_all(dev_samples, &model, dict, tok, cfg.max_seq_len)?;
            Some(evaluate(dev_samples, &preds)?)
        };
        let improved = match &dev {
            Some(m) => state.best_dev_f1.is_none_or(|b| m.f1 > b),
            None => true,
        };
        if improved {
            best = Some((model.clone(), epoch));
        }
        if let Some(m) = &dev {
            state = lr_schedule_update(state, m.f1, cfg);
        }
        state.epoch_history.push(EpochRecord { epoch, dev: dev.clone(), lr_encoder: lr_enc, lr_head });
        let entry = EpochLog {
            epoch,
            train_loss,
            dev_precision: dev.as_ref().map(|m| m.precision),
            dev_recall: dev.as_ref().map(|m| m.recall),
            dev_f1: dev.as_ref().map(|m| m.f1),
            lr_encoder: lr_enc,
            lr_head,
        };
        info!(
            "epoch {epoch}: loss {train_loss:.5} dev f1 {}",
            entry.dev_f1.map_or("-".to_string(), |f| format!("{f:.4}"))
        );
        debug!("epoch {epoch}: {} batches", plan.len());
        log.push(entry);
    }
    let (model, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, state, log, best_epoch: Some(best_epoch) })
}
