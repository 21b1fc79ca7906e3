//! Task-adaptive masked-LM pretraining of the encoder.
//!
//! The corpus is every candidate pair of the task samples rendered in the
//! classification layout (labels ignored), so positions and segments match
//! what the encoder later sees. Predictions use the token embedding matrix as
//! the output projection.

use acrodis_tensor::{Adam, ParamGroup, Tape};
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, Mode};
use crate::pairs::{FormattedInput, Tokenizer};
use crate::train::{encode_samples, epoch_seed};
use crate::types::{ExpansionDictionary, Sample, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskAction {
    /// Replace with the mask token.
    Mask,
    /// Replace with this (non-special) token id.
    Random(usize),
    /// Leave the original token in place.
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskingPlan {
    pub positions: Vec<usize>,
    pub actions: Vec<MaskAction>,
}

impl MaskingPlan {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Input ids with the plan's replacements applied.
    pub fn apply(&self, token_ids: &[usize], tok: &Tokenizer) -> Vec<usize> {
        let mut out = token_ids.to_vec();
        for (&p, a) in self.positions.iter().zip(&self.actions) {
            match a {
                MaskAction::Mask => out[p] = tok.mask_id(),
                MaskAction::Random(id) => out[p] = *id,
                MaskAction::Keep => {}
            }
        }
        out
    }
}

/// Number of positions selected from `maskable` candidates.
pub fn mask_count(maskable: usize, mask_rate: f64) -> usize {
    if maskable == 0 {
        return 0;
    }
    ((mask_rate * maskable as f64).round() as usize).clamp(1, maskable)
}

/// Picks `round(rate × maskable)` (at least one) non-special positions
/// uniformly, then assigns 80% mask / 10% random token / 10% keep.
pub fn make_masking_plan_with_rng(
    token_ids: &[usize],
    tok: &Tokenizer,
    mask_rate: f64,
    rng: &mut impl Rng,
) -> MaskingPlan {
    let maskable: Vec<usize> = (0..token_ids.len()).filter(|&i| !tok.is_special(token_ids[i])).collect();
    let k = mask_count(maskable.len(), mask_rate);
    let mut positions: Vec<usize> = maskable.choose_multiple(rng, k).copied().collect();
    positions.sort_unstable();
    let first_word = crate::pairs::SPECIAL_TOKENS.len();
    let actions = positions
        .iter()
        .map(|_| {
            let u: f64 = rng.gen();
            if u < 0.8 {
                MaskAction::Mask
            } else if u < 0.9 && tok.len() > first_word {
                MaskAction::Random(rng.gen_range(first_word..tok.len()))
            } else {
                MaskAction::Keep
            }
        })
        .collect();
    MaskingPlan { positions, actions }
}

pub fn make_masking_plan(token_ids: &[usize], tok: &Tokenizer, mask_rate: f64, seed: u64) -> MaskingPlan {
    make_masking_plan_with_rng(token_ids, tok, mask_rate, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Rendered TAPT corpus: one sequence per candidate pair.
pub fn tapt_corpus(
    samples: &[Sample],
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    max_len: usize,
) -> Result<Vec<FormattedInput>> {
    Ok(encode_samples(samples, dict, tok, max_len)?.1)
}

/// Masked-LM loss of one batch on the tape. Returns `None` if no sequence
/// in the batch has a maskable token.
fn mlm_batch_loss(
    model: &Classifier,
    tape: &mut Tape,
    batch: &[(&FormattedInput, MaskingPlan)],
    tok: &Tokenizer,
    mode: &mut Mode,
) -> Result<Option<acrodis_tensor::Var>> {
    let mut masked = Vec::new();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    let mut offset = 0;
    for (input, plan) in batch {
        if plan.is_empty() {
            continue;
        }
        masked.push(FormattedInput { token_ids: plan.apply(&input.token_ids, tok), ..(*input).clone() });
        positions.extend(plan.positions.iter().map(|&p| offset + p));
        targets.extend(plan.positions.iter().map(|&p| input.token_ids[p]));
        offset += input.len();
    }
    if masked.is_empty() {
        return Ok(None);
    }
    let ctx = model.contextual_batch(tape, &masked.iter().collect::<Vec<_>>(), mode)?;
    let logits = model.mlm_logits(tape, ctx, &positions);
    Ok(Some(tape.cross_entropy(logits, &targets)))
}

#[derive(Debug, Clone)]
pub struct TaptOutcome {
    pub model: Classifier,
    /// Mean masked-LM loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Masked-LM training over `corpus`. Only encoder and masked-LM parameters
/// move; the classification head is left untouched.
pub fn tapt_train_on(
    mut model: Classifier,
    corpus: &[FormattedInput],
    tok: &Tokenizer,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<TaptOutcome> {
    let mut adam = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut loss_history = Vec::with_capacity(epochs);
    let lr = |g: ParamGroup| match g {
        ParamGroup::Encoder | ParamGroup::Pretraining => Some(cfg.lr_encoder),
        ParamGroup::Head => None,
    };
    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let (mut sum, mut steps) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch: Vec<(&FormattedInput, MaskingPlan)> = chunk
                .iter()
                .map(|&i| (&corpus[i], make_masking_plan_with_rng(&corpus[i].token_ids, tok, cfg.mask_rate, &mut rng)))
                .collect();
            let (loss, grads) = {
                let mut tape = Tape::new(&model.params);
                let mut mode = Mode::Training { rng: &mut rng };
                let Some(l) = mlm_batch_loss(&model, &mut tape, &batch, tok, &mut mode)? else { continue };
                (tape.scalar(l), tape.backward(l))
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            adam.step(&mut model.params, &grads, lr);
            sum += loss;
            steps += 1;
        }
        let mean = sum / steps.max(1) as f64;
        info!("tapt epoch {epoch}: mlm loss {mean:.5}");
        loss_history.push(mean);
    }
    Ok(TaptOutcome { model, loss_history })
}

/// Renders the task corpus and runs masked-LM training on it.
pub fn tapt_train(
    model: Classifier,
    samples: &[Sample],
    dict: &ExpansionDictionary,
    tok: &Tokenizer,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<TaptOutcome> {
    let corpus = tapt_corpus(samples, dict, tok, cfg.max_seq_len)?;
    tapt_train_on(model, &corpus, tok, epochs, cfg)
}

/// Fraction of masked positions whose original token is the top prediction,
/// with dropout off and plans drawn from `seed`.
pub fn masked_accuracy(
    model: &Classifier,
    corpus: &[FormattedInput],
    tok: &Tokenizer,
    mask_rate: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hit, mut total) = (0usize, 0usize);
    for input in corpus {
        let plan = make_masking_plan_with_rng(&input.token_ids, tok, mask_rate, &mut rng);
        if plan.is_empty() {
            continue;
        }
        let masked = FormattedInput { token_ids: plan.apply(&input.token_ids, tok), ..input.clone() };
        let mut tape = Tape::new(&model.params);
        let ctx = model.contextual(&mut tape, &masked, &mut Mode::Inference)?;
        let logits = model.mlm_logits(&mut tape, ctx, &plan.positions);
        for (row, &p) in tape.value(logits).rows().into_iter().zip(&plan.positions) {
            let argmax = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            hit += usize::from(argmax == input.token_ids[p]);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}
