//! Scoring network.
//!
//! A small self-attention encoder produces one contextual row per input
//! token. The pair representation is the `[CLS]` row concatenated with the
//! mean of the two acronym-marker rows; a two-layer head with dropout and a
//! ReLU maps it to a match probability.

use acrodis_tensor::{sigmoid, Matrix, ParamGroup, ParamId, ParamStore, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::FormattedInput;
use crate::types::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskEncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub attention_heads: usize,
    pub feedforward_dim: usize,
    pub max_positions: usize,
}

impl Default for DeskEncoderConfig {
    fn default() -> Self {
        Self { layers: 2, hidden_dim: 128, attention_heads: 4, feedforward_dim: 256, max_positions: 128 }
    }
}

impl DeskEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.attention_heads == 0 || self.hidden_dim % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of attention_heads {}",
                self.hidden_dim, self.attention_heads
            )));
        }
        if self.feedforward_dim == 0 || self.max_positions == 0 {
            return Err(Error::Config("feedforward_dim and max_positions must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: DeskEncoderConfig,
    pub vocab_size: usize,
    pub dropout_rate: f64,
}

/// Whether dropout is active, and the generator that draws its masks.
pub enum Mode<'r> {
    Inference,
    Training { rng: &'r mut ChaCha8Rng },
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Training { .. })
    }
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: &mut Mode) -> Var {
    match mode {
        Mode::Training { rng } if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask = Matrix::from_shape_fn(tape.shape(x), |_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}

/// The contract any text encoder must meet to sit under the binary head.
pub trait Encoder {
    fn hidden_dim(&self) -> usize;

    /// Token embedding table, the target of adversarial perturbation.
    fn embedding_table(&self) -> ParamId;

    /// Token-plus-position-plus-segment embeddings of a batch, one row per
    /// input token, sequences stacked in input order.
    fn embed(&self, tape: &mut Tape, inputs: &[&FormattedInput], mode: &mut Mode) -> Result<Var>;

    /// Contextual rows for stacked embeddings. `lengths` are the sequence
    /// lengths in stacking order; tokens only attend within their sequence.
    fn encode(&self, tape: &mut Tape, embeddings: Var, lengths: &[usize], mode: &mut Mode) -> Var;
}

#[derive(Debug, Clone)]
struct AttentionHead {
    query: (ParamId, ParamId),
    key: (ParamId, ParamId),
    value: (ParamId, ParamId),
    output: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    heads: Vec<AttentionHead>,
    attn_out_bias: ParamId,
    attn_norm: (ParamId, ParamId),
    ff_in: (ParamId, ParamId),
    ff_out: (ParamId, ParamId),
    ff_norm: (ParamId, ParamId),
}

/// Desk-scale post-norm transformer encoder with learned positional and
/// segment embeddings.
#[derive(Debug, Clone)]
pub struct DeskEncoder {
    config: DeskEncoderConfig,
    vocab_size: usize,
    dropout_rate: f64,
    token_embedding: ParamId,
    position_embedding: ParamId,
    segment_embedding: ParamId,
    embedding_norm: (ParamId, ParamId),
    layers: Vec<EncoderLayer>,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn normal(&mut self, name: String, group: ParamGroup, shape: (usize, usize), std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let rng = &mut self.rng;
        let value = Matrix::from_shape_fn(shape, |_| dist.sample(rng));
        self.store.add(name, group, value)
    }

    fn constant(&mut self, name: String, group: ParamGroup, shape: (usize, usize), v: f64) -> ParamId {
        self.store.add(name, group, Matrix::from_elem(shape, v))
    }

    fn linear(&mut self, name: &str, group: ParamGroup, fan_in: usize, fan_out: usize) -> (ParamId, ParamId) {
        let w = self.normal(format!("{name}.weight"), group, (fan_in, fan_out), (1.0 / fan_in as f64).sqrt());
        let b = self.constant(format!("{name}.bias"), group, (1, fan_out), 0.0);
        (w, b)
    }

    fn norm(&mut self, name: &str, dim: usize) -> (ParamId, ParamId) {
        let g = self.constant(format!("{name}.gain"), ParamGroup::Encoder, (1, dim), 1.0);
        let b = self.constant(format!("{name}.bias"), ParamGroup::Encoder, (1, dim), 0.0);
        (g, b)
    }
}

const EMBEDDING_STD: f64 = 0.02;

impl DeskEncoder {
    fn build(init: &mut Init, config: DeskEncoderConfig, vocab_size: usize, dropout_rate: f64) -> Self {
        let d = config.hidden_dim;
        let dh = d / config.attention_heads;
        let enc = ParamGroup::Encoder;
        let token_embedding = init.normal("encoder.token_embedding".into(), enc, (vocab_size, d), EMBEDDING_STD);
        let position_embedding =
            init.normal("encoder.position_embedding".into(), enc, (config.max_positions, d), EMBEDDING_STD);
        let segment_embedding = init.normal("encoder.segment_embedding".into(), enc, (2, d), EMBEDDING_STD);
        let embedding_norm = init.norm("encoder.embedding_norm", d);
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                let heads = (0..config.attention_heads)
                    .map(|h| AttentionHead {
                        query: init.linear(&format!("{p}.head{h}.query"), enc, d, dh),
                        key: init.linear(&format!("{p}.head{h}.key"), enc, d, dh),
                        value: init.linear(&format!("{p}.head{h}.value"), enc, d, dh),
                        output: init.normal(format!("{p}.head{h}.output.weight"), enc, (dh, d), (1.0 / d as f64).sqrt()),
                    })
                    .collect();
                EncoderLayer {
                    heads,
                    attn_out_bias: init.constant(format!("{p}.attention_output.bias"), enc, (1, d), 0.0),
                    attn_norm: init.norm(&format!("{p}.attention_norm"), d),
                    ff_in: init.linear(&format!("{p}.feedforward_in"), enc, d, config.feedforward_dim),
                    ff_out: init.linear(&format!("{p}.feedforward_out"), enc, config.feedforward_dim, d),
                    ff_norm: init.norm(&format!("{p}.feedforward_norm"), d),
                }
            })
            .collect();
        Self {
            config,
            vocab_size,
            dropout_rate,
            token_embedding,
            position_embedding,
            segment_embedding,
            embedding_norm,
            layers,
        }
    }

    fn layer(&self, tape: &mut Tape, x: Var, lengths: &[usize], layer: &EncoderLayer, mode: &mut Mode) -> Var {
        let dh = self.config.hidden_dim / self.config.attention_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn: Option<Var> = None;
        for head in &layer.heads {
            let q = linear(tape, x, head.query);
            let k = linear(tape, x, head.key);
            let v = linear(tape, x, head.value);
            let ctx = tape.block_attention(q, k, v, lengths, scale);
            let wo = tape.param(head.output);
            let out = tape.matmul(ctx, wo);
            attn = Some(match attn {
                Some(acc) => tape.add(acc, out),
                None => out,
            });
        }
        let bias = tape.param(layer.attn_out_bias);
        let attn = tape.add_row(attn.expect("at least one head"), bias);
        let attn = dropout(tape, attn, self.dropout_rate, mode);
        let x = tape.add(x, attn);
        let x = norm(tape, x, layer.attn_norm);

        let h = linear(tape, x, layer.ff_in);
        let h = tape.gelu(h);
        let h = linear(tape, h, layer.ff_out);
        let h = dropout(tape, h, self.dropout_rate, mode);
        let x = tape.add(x, h);
        norm(tape, x, layer.ff_norm)
    }
}

fn linear(tape: &mut Tape, x: Var, (w, b): (ParamId, ParamId)) -> Var {
    let (w, b) = (tape.param(w), tape.param(b));
    tape.linear(x, w, b)
}

fn norm(tape: &mut Tape, x: Var, (g, b): (ParamId, ParamId)) -> Var {
    let (g, b) = (tape.param(g), tape.param(b));
    tape.layer_norm(x, g, b)
}

impl Encoder for DeskEncoder {
    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn embedding_table(&self) -> ParamId {
        self.token_embedding
    }

    fn embed(&self, tape: &mut Tape, inputs: &[&FormattedInput], mode: &mut Mode) -> Result<Var> {
        let (mut tokens, mut positions, mut segments) = (Vec::new(), Vec::new(), Vec::new());
        for input in inputs {
            if let Some(&id) = input.token_ids.iter().find(|&&id| id >= self.vocab_size) {
                return Err(Error::TokenOutOfRange { id, vocab_size: self.vocab_size });
            }
            if input.len() > self.config.max_positions {
                return Err(Error::Config(format!(
                    "input of length {} exceeds max_positions {}",
                    input.len(),
                    self.config.max_positions
                )));
            }
            tokens.extend_from_slice(&input.token_ids);
            positions.extend(0..input.len());
            segments.extend(input.segment_ids.iter().map(|&s| s as usize));
        }
        let tok = tape.gather(self.token_embedding, &tokens);
        let pos = tape.gather(self.position_embedding, &positions);
        let seg = tape.gather(self.segment_embedding, &segments);
        let x = tape.add(tok, pos);
        let x = tape.add(x, seg);
        let x = norm(tape, x, self.embedding_norm);
        Ok(dropout(tape, x, self.dropout_rate, mode))
    }

    fn encode(&self, tape: &mut Tape, embeddings: Var, lengths: &[usize], mode: &mut Mode) -> Var {
        self.layers.iter().fold(embeddings, |x, layer| self.layer(tape, x, lengths, layer, mode))
    }
}

/// `dropout → affine(2d → h) → ReLU → dropout → affine(h → 1)`, then sigmoid.
#[derive(Debug, Clone)]
pub struct BinaryHead {
    pub dropout_rate: f64,
    pub layer1: (ParamId, ParamId),
    pub layer2: (ParamId, ParamId),
}

impl BinaryHead {
    fn build(init: &mut Init, hidden: usize, dropout_rate: f64) -> Self {
        Self {
            dropout_rate,
            layer1: init.linear("head.layer1", ParamGroup::Head, 2 * hidden, hidden),
            layer2: init.linear("head.layer2", ParamGroup::Head, hidden, 1),
        }
    }

    /// Logits (pre-sigmoid), one per row of `reps`.
    pub fn logits(&self, tape: &mut Tape, reps: Var, mode: &mut Mode) -> Var {
        let x = dropout(tape, reps, self.dropout_rate, mode);
        let x = linear(tape, x, self.layer1);
        let x = tape.relu(x);
        let x = dropout(tape, x, self.dropout_rate, mode);
        linear(tape, x, self.layer2)
    }
}

/// `concat(row[cls], (row[start] + row[end]) / 2)` on the tape.
pub fn extract_on_tape(tape: &mut Tape, contextual: Var, cls_position: usize, span: Span) -> Result<Var> {
    let rows = tape.shape(contextual).0;
    if span.start >= rows || span.end >= rows || cls_position >= rows {
        return Err(Error::SpanOutOfRange { start: span.start, end: span.end, rows });
    }
    let cls = tape.select_rows(contextual, &[cls_position]);
    let a = tape.select_rows(contextual, &[span.start]);
    let b = tape.select_rows(contextual, &[span.end]);
    let sum = tape.add(a, b);
    let mean = tape.scale(sum, 0.5);
    Ok(tape.concat_cols(&[cls, mean]))
}

/// Plain-matrix version of [`extract_on_tape`].
pub fn extract_representation(contextual: &Matrix, cls_position: usize, span: Span) -> Result<Vec<f64>> {
    let rows = contextual.nrows();
    if span.start >= rows || span.end >= rows || cls_position >= rows {
        return Err(Error::SpanOutOfRange { start: span.start, end: span.end, rows });
    }
    let cls = contextual.row(cls_position);
    let mean = (&contextual.row(span.start) + &contextual.row(span.end)) / 2.0;
    Ok(cls.iter().chain(mean.iter()).copied().collect())
}

/// Encoder + binary head over one parameter store.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: DeskEncoder,
    pub head: BinaryHead,
    /// Output bias of the tied masked-LM projection.
    pub mlm_bias: ParamId,
}

impl Classifier {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
        let encoder = DeskEncoder::build(&mut init, config.encoder, config.vocab_size, config.dropout_rate);
        let mlm_bias = init.constant("mlm.output.bias".into(), ParamGroup::Pretraining, (1, config.vocab_size), 0.0);
        let head = BinaryHead::build(&mut init, config.encoder.hidden_dim, config.dropout_rate);
        Ok(Self { config, params, encoder, head, mlm_bias })
    }

    /// Fresh head from `seed`, encoder and masked-LM parameters copied from `source`.
    pub fn with_encoder_from(source: &Classifier, seed: u64) -> Result<Self> {
        let mut fresh = Self::new(source.config, seed)?;
        fresh.copy_groups_from(&source.params, &[ParamGroup::Encoder, ParamGroup::Pretraining])?;
        Ok(fresh)
    }

    /// Overwrites every parameter of the given groups with the same-named
    /// tensor from `source`. Shapes must agree.
    pub fn copy_groups_from(&mut self, source: &ParamStore, groups: &[ParamGroup]) -> Result<()> {
        let targets: Vec<(ParamId, String, (usize, usize))> = self
            .params
            .iter()
            .filter(|(_, p)| groups.contains(&p.group))
            .map(|(id, p)| (id, p.name.clone(), p.value.dim()))
            .collect();
        for (id, name, shape) in targets {
            let src = source
                .id(&name)
                .map(|sid| source.value(sid))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.dim() != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} does not match expected {shape:?}",
                    src.dim()
                )));
            }
            self.params.value_mut(id).assign(src);
        }
        Ok(())
    }

    /// Contextual rows for a batch, sequences stacked in input order.
    pub fn contextual_batch(&self, tape: &mut Tape, inputs: &[&FormattedInput], mode: &mut Mode) -> Result<Var> {
        let emb = self.encoder.embed(tape, inputs, mode)?;
        let lengths: Vec<usize> = inputs.iter().map(|i| i.len()).collect();
        Ok(self.encoder.encode(tape, emb, &lengths, mode))
    }

    /// Contextual rows for one input.
    pub fn contextual(&self, tape: &mut Tape, input: &FormattedInput, mode: &mut Mode) -> Result<Var> {
        self.contextual_batch(tape, &[input], mode)
    }

    /// Bx1 logits for a batch of inputs.
    pub fn logits(&self, tape: &mut Tape, inputs: &[&FormattedInput], mode: &mut Mode) -> Result<Var> {
        let (mut cls, mut starts, mut ends) = (Vec::new(), Vec::new(), Vec::new());
        let mut offset = 0;
        for input in inputs {
            let (span, rows) = (input.acronym_span, input.len());
            if span.start >= rows || span.end >= rows || input.cls_position >= rows {
                return Err(Error::SpanOutOfRange { start: span.start, end: span.end, rows });
            }
            cls.push(offset + input.cls_position);
            starts.push(offset + span.start);
            ends.push(offset + span.end);
            offset += rows;
        }
        let ctx = self.contextual_batch(tape, inputs, mode)?;
        let cls = tape.select_rows(ctx, &cls);
        let a = tape.select_rows(ctx, &starts);
        let b = tape.select_rows(ctx, &ends);
        let sum = tape.add(a, b);
        let mean = tape.scale(sum, 0.5);
        let reps = tape.concat_cols(&[cls, mean]);
        Ok(self.head.logits(tape, reps, mode))
    }

    /// Mean binary cross-entropy of a labelled batch.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        inputs: &[&FormattedInput],
        labels: &[f64],
        mode: &mut Mode,
    ) -> Result<Var> {
        let z = self.logits(tape, inputs, mode)?;
        Ok(tape.bce_with_logits(z, labels))
    }

    /// Match probabilities with dropout off.
    pub fn score_batch(&self, inputs: &[&FormattedInput]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(&self.params);
        let z = self.logits(&mut tape, inputs, &mut Mode::Inference)?;
        Ok(tape.value(z).iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn score(&self, input: &FormattedInput) -> Result<f64> {
        Ok(self.score_batch(&[input])?[0])
    }

    /// Head applied to a precomputed `2d` representation.
    pub fn head_score(&self, rep: &[f64], mode: &mut Mode) -> Result<f64> {
        if rep.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("head input"));
        }
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(Matrix::from_shape_vec((1, rep.len()), rep.to_vec()).expect("row vector"));
        let z = self.head.logits(&mut tape, x, mode);
        Ok(sigmoid(tape.scalar(z)))
    }

    /// Contextual matrix for one input, dropout off.
    pub fn contextual_matrix(&self, input: &FormattedInput) -> Result<Matrix> {
        let mut tape = Tape::new(&self.params);
        let ctx = self.contextual(&mut tape, input, &mut Mode::Inference)?;
        Ok(tape.value(ctx).clone())
    }

    /// Masked-LM logits (tied to the token embedding) at `positions`.
    pub fn mlm_logits(&self, tape: &mut Tape, contextual: Var, positions: &[usize]) -> Var {
        let rows = tape.select_rows(contextual, positions);
        let table = tape.param(self.encoder.embedding_table());
        let logits = tape.matmul_t(rows, table);
        let bias = tape.param(self.mlm_bias);
        tape.add_row(logits, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> ModelConfig {
        ModelConfig {
            encoder: DeskEncoderConfig { layers: 1, hidden_dim: 8, attention_heads: 2, feedforward_dim: 16, max_positions: 32 },
            vocab_size: 20,
            dropout_rate: 0.1,
        }
    }

    fn input() -> FormattedInput {
        FormattedInput {
            token_ids: vec![2, 9, 10, 3, 11, 5, 12, 6, 13, 3],
            segment_ids: vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
            acronym_span: Span { start: 5, end: 7 },
            cls_position: 0,
        }
    }

    #[test]
    fn extraction_definition() {
        let m = array![[1.0, 0.0], [9.0, 9.0], [2.0, 2.0], [7.0, 7.0], [4.0, 6.0]];
        let rep = extract_representation(&m, 0, Span { start: 2, end: 4 }).unwrap();
        assert_eq!(rep, vec![1.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn extraction_of_equal_rows_is_exact() {
        let m = array![[0.1, 0.2], [0.3, 0.7], [0.3, 0.7]];
        let rep = extract_representation(&m, 0, Span { start: 1, end: 2 }).unwrap();
        assert_eq!(&rep[2..], &[0.3, 0.7]);
    }

    #[test]
    fn extraction_rejects_out_of_range_span() {
        let m = Matrix::zeros((3, 2));
        assert!(matches!(
            extract_representation(&m, 0, Span { start: 1, end: 3 }),
            Err(Error::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn tape_and_matrix_extraction_agree() {
        let model = Classifier::new(tiny(), 1).unwrap();
        let m = model.contextual_matrix(&input()).unwrap();
        let direct = extract_representation(&m, 0, input().acronym_span).unwrap();
        let mut tape = Tape::new(&model.params);
        let c = tape.constant(m.clone());
        let v = extract_on_tape(&mut tape, c, 0, input().acronym_span).unwrap();
        assert_eq!(tape.value(v).iter().copied().collect::<Vec<_>>(), direct);
    }

    #[test]
    fn zero_head_scores_one_half() {
        let mut model = Classifier::new(tiny(), 1).unwrap();
        for id in [model.head.layer1.0, model.head.layer1.1, model.head.layer2.0, model.head.layer2.1] {
            model.params.value_mut(id).fill(0.0);
        }
        let s = model.head_score(&[0.3; 16], &mut Mode::Inference).unwrap();
        assert_eq!(s, 0.5);
        assert_eq!(model.score(&input()).unwrap(), 0.5);
    }

    #[test]
    fn inference_is_deterministic() {
        let model = Classifier::new(tiny(), 4).unwrap();
        let a = model.score(&input()).unwrap();
        let b = model.score(&input()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn head_rejects_non_finite() {
        let model = Classifier::new(tiny(), 1).unwrap();
        let mut rep = vec![0.0; 16];
        rep[3] = f64::NAN;
        assert!(matches!(model.head_score(&rep, &mut Mode::Inference), Err(Error::NonFinite(_))));
    }

    #[test]
    fn token_out_of_vocab_is_an_error() {
        let model = Classifier::new(tiny(), 1).unwrap();
        let mut bad = input();
        bad.token_ids[1] = 20;
        assert!(matches!(model.score(&bad), Err(Error::TokenOutOfRange { id: 20, .. })));
    }

    #[test]
    fn training_mode_dropout_changes_scores() {
        let model = Classifier::new(tiny(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&model.params);
        let x = input();
        let z = model.logits(&mut tape, &[&x, &x], &mut Mode::Training { rng: &mut rng }).unwrap();
        let v = tape.value(z);
        assert_ne!(v[[0, 0]], v[[1, 0]]);
    }

    #[test]
    fn head_dim_mismatch_in_config_is_rejected() {
        let mut cfg = tiny();
        cfg.encoder.attention_heads = 3;
        assert!(Classifier::new(cfg, 0).is_err());
    }

    #[test]
    fn finite_difference_gradient_of_second_head_layer() {
        // Central differences of the score w.r.t. layer2 weights at 5 random
        // parameter points.
        for seed in 0..5 {
            let mut model = Classifier::new(tiny(), seed).unwrap();
            let rep: Vec<f64> = {
                let m = model.contextual_matrix(&input()).unwrap();
                extract_representation(&m, 0, input().acronym_span).unwrap()
            };
            let w2 = model.head.layer2.0;
            let analytic = {
                let mut tape = Tape::new(&model.params);
                let x = tape.constant(Matrix::from_shape_vec((1, rep.len()), rep.clone()).unwrap());
                let z = model.head.logits(&mut tape, x, &mut Mode::Inference);
                // d sigmoid(z) / dw = s(1-s) dz/dw; recover dz/dw via a unit-label BCE trick:
                // dBCE/dz with y = 0 is s, so scale by (1 - s).
                let loss = tape.bce_with_logits(z, &[0.0]);
                let s = sigmoid(tape.scalar(z));
                let g = tape.backward(loss);
                g.get(w2).unwrap() * (1.0 - s)
            };
            let h = 1e-6;
            for r in 0..analytic.nrows() {
                let orig = model.params.value(w2)[[r, 0]];
                model.params.value_mut(w2)[[r, 0]] = orig + h;
                let plus = model.head_score(&rep, &mut Mode::Inference).unwrap();
                model.params.value_mut(w2)[[r, 0]] = orig - h;
                let minus = model.head_score(&rep, &mut Mode::Inference).unwrap();
                model.params.value_mut(w2)[[r, 0]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[[r, 0]];
                let denom = a.abs().max(numeric.abs());
                if denom > 1e-9 {
                    assert!((a - numeric).abs() / denom < 1e-4, "seed {seed} row {r}: {a} vs {numeric}");
                }
            }
        }
    }
}
