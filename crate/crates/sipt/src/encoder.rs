//! A small pre-norm transformer encoder built on the scalar tape, with CLS
//! pooling, a tied output head for masked imputation, and JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("bad encoder config: {0}")]
    BadConfig(String),
    #[error("sequence of length {len} exceeds max_seq_len {max} (one slot is reserved for CLS)")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {token} out of vocabulary (size {vocab})")]
    UnknownToken { token: u32, vocab: usize },
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("checkpoint version {found}, this build reads {expected}")]
    BadVersion { found: u32, expected: u32 },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Cls,
    Mean,
}

/// The last two vocabulary slots are reserved: MASK = vocab_size - 2,
/// CLS = vocab_size - 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub pooling: Pooling,
}

impl EncoderConfig {
    /// The desk-scale default: 2 layers, 10-dimensional, single head.
    pub fn reference(vocab_size: usize, max_seq_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: 10,
            num_layers: 2,
            num_heads: 1,
            max_seq_len,
            pooling: Pooling::Cls,
        }
    }

    /// The larger preset used for manifold-sized runs.
    pub fn manifold_preset(vocab_size: usize, max_seq_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim: 256,
            num_layers: 3,
            num_heads: 4,
            max_seq_len,
            pooling: Pooling::Cls,
        }
    }

    pub fn mask_token(&self) -> u32 {
        (self.vocab_size - 2) as u32
    }

    pub fn cls_token(&self) -> u32 {
        (self.vocab_size - 1) as u32
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.vocab_size < 3 {
            return Err(EncoderError::BadConfig(
                "vocab_size must cover at least one real token plus MASK and CLS".into(),
            ));
        }
        if self.embed_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err(EncoderError::BadConfig(
                "embed_dim, num_layers, num_heads must be positive".into(),
            ));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(EncoderError::BadConfig(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(EncoderError::BadConfig(
                "max_seq_len must fit CLS plus at least one token".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerParameters {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderParameters {
    pub config: EncoderConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerParameters>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

macro_rules! layer_fields {
    ($macro:ident) => {
        $macro!(
            ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1,
            w2, b2
        )
    };
}

impl EncoderParameters {
    /// Every tensor in a fixed order (embeddings, layers in depth order,
    /// final norm, output head). Optimizers and checkpoint diffs rely on
    /// this order being stable.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for layer in &self.layers {
            macro_rules! push {
                ($($f:ident),*) => { $(out.push(&layer.$f);)* };
            }
            layer_fields!(push);
        }
        out.push(&self.final_gain);
        out.push(&self.final_bias);
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> =
            vec![&mut self.token_embedding, &mut self.position_embedding];
        for layer in &mut self.layers {
            macro_rules! push {
                ($($f:ident),*) => { $(out.push(&mut layer.$f);)* };
            }
            layer_fields!(push);
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.final_bias);
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Names aligned with tensors().
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["token_embedding".to_string(), "position_embedding".to_string()];
        for i in 0..self.layers.len() {
            macro_rules! push {
                ($($f:ident),*) => { $(out.push(format!("layer{i}.{}", stringify!($f)));)* };
            }
            layer_fields!(push);
        }
        out.push("final_gain".into());
        out.push("final_bias".into());
        out.push("head_weight".into());
        out.push("head_bias".into());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Weights ~ N(0, 0.02), biases 0, layer-norm gains 1.
pub fn init_parameters(config: &EncoderConfig, seed: u64) -> Result<EncoderParameters, EncoderError> {
    config.validate()?;
    let mut rng = rng::stream(seed, "encoder-init");
    let d = config.embed_dim;
    let ff = 4 * d;
    const STD: f64 = 0.02;
    let mut w = |rows: usize, cols: usize| Tensor::randn(rows, cols, STD, &mut rng);

    let token_embedding = w(config.vocab_size, d);
    let position_embedding = w(config.max_seq_len, d);
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        layers.push(LayerParameters {
            ln1_gain: Tensor::filled(1, d, 1.0),
            ln1_bias: Tensor::zeros(1, d),
            wq: w(d, d),
            bq: Tensor::zeros(1, d),
            wk: w(d, d),
            bk: Tensor::zeros(1, d),
            wv: w(d, d),
            bv: Tensor::zeros(1, d),
            wo: w(d, d),
            bo: Tensor::zeros(1, d),
            ln2_gain: Tensor::filled(1, d, 1.0),
            ln2_bias: Tensor::zeros(1, d),
            w1: w(d, ff),
            b1: Tensor::zeros(1, ff),
            w2: w(ff, d),
            b2: Tensor::zeros(1, d),
        });
    }
    let head_weight = w(d, config.vocab_size);
    Ok(EncoderParameters {
        config: config.clone(),
        token_embedding,
        position_embedding,
        layers,
        final_gain: Tensor::filled(1, d, 1.0),
        final_bias: Tensor::zeros(1, d),
        head_weight,
        head_bias: Tensor::zeros(1, config.vocab_size),
    })
}

struct BoundLayer {
    ln1_gain: NodeId,
    ln1_bias: NodeId,
    wq: NodeId,
    bq: NodeId,
    wk: NodeId,
    bk: NodeId,
    wv: NodeId,
    bv: NodeId,
    wo: NodeId,
    bo: NodeId,
    ln2_gain: NodeId,
    ln2_bias: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
}

/// Encoder parameters registered as tape leaves, ready for forward passes
/// that track gradients.
pub struct BoundEncoder {
    pub config: EncoderConfig,
    token_embedding: NodeId,
    position_embedding: NodeId,
    layers: Vec<BoundLayer>,
    final_gain: NodeId,
    final_bias: NodeId,
    pub head_weight: NodeId,
    pub head_bias: NodeId,
}

impl BoundEncoder {
    pub fn bind(tape: &mut Tape, params: &EncoderParameters) -> BoundEncoder {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone());
        let token_embedding = leaf(&params.token_embedding);
        let position_embedding = leaf(&params.position_embedding);
        let layers = params
            .layers
            .iter()
            .map(|l| BoundLayer {
                ln1_gain: leaf(&l.ln1_gain),
                ln1_bias: leaf(&l.ln1_bias),
                wq: leaf(&l.wq),
                bq: leaf(&l.bq),
                wk: leaf(&l.wk),
                bk: leaf(&l.bk),
                wv: leaf(&l.wv),
                bv: leaf(&l.bv),
                wo: leaf(&l.wo),
                bo: leaf(&l.bo),
                ln2_gain: leaf(&l.ln2_gain),
                ln2_bias: leaf(&l.ln2_bias),
                w1: leaf(&l.w1),
                b1: leaf(&l.b1),
                w2: leaf(&l.w2),
                b2: leaf(&l.b2),
            })
            .collect();
        let final_gain = leaf(&params.final_gain);
        let final_bias = leaf(&params.final_bias);
        let head_weight = leaf(&params.head_weight);
        let head_bias = leaf(&params.head_bias);
        BoundEncoder {
            config: params.config.clone(),
            token_embedding,
            position_embedding,
            layers,
            final_gain,
            final_bias,
            head_weight,
            head_bias,
        }
    }

    /// Leaf ids aligned with EncoderParameters::tensors().
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut out = vec![self.token_embedding, self.position_embedding];
        for layer in &self.layers {
            macro_rules! push {
                ($($f:ident),*) => { $(out.push(layer.$f);)* };
            }
            layer_fields!(push);
        }
        out.push(self.final_gain);
        out.push(self.final_bias);
        out.push(self.head_weight);
        out.push(self.head_bias);
        out
    }
}

/// One forward pass over a ragged batch. Rows of `hidden` stack every
/// sequence's CLS-prefixed positions in order.
pub struct BatchEncoding {
    /// Row index of each sequence's CLS position.
    pub cls_rows: Vec<usize>,
    /// Half-open row range of each sequence's content tokens.
    pub content_rows: Vec<(usize, usize)>,
    /// Final layer-normed states, (total rows) x d.
    pub hidden: NodeId,
    /// Pooled per-sample embeddings, (num sequences) x d.
    pub pooled: NodeId,
}

fn layer_norm(tape: &mut Tape, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
    let normed = tape.normalize_rows(x);
    let scaled = tape.mul_row(normed, gain);
    tape.add_row(scaled, bias)
}

/// Pre-norm transformer forward: CLS is prepended to every sequence and
/// positions are embedded from a learned table.
pub fn encode_batch(
    tape: &mut Tape,
    enc: &BoundEncoder,
    sequences: &[&[u32]],
) -> Result<BatchEncoding, EncoderError> {
    let config = &enc.config;
    let d = config.embed_dim;
    let heads = config.num_heads;
    let dh = d / heads;

    let mut flat_tokens: Vec<usize> = Vec::new();
    let mut flat_positions: Vec<usize> = Vec::new();
    let mut cls_rows = Vec::with_capacity(sequences.len());
    let mut content_rows = Vec::with_capacity(sequences.len());
    let mut seq_rows: Vec<(usize, usize)> = Vec::with_capacity(sequences.len());
    for seq in sequences {
        if seq.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        if seq.len() + 1 > config.max_seq_len {
            return Err(EncoderError::SequenceTooLong {
                len: seq.len(),
                max: config.max_seq_len,
            });
        }
        let start = flat_tokens.len();
        cls_rows.push(start);
        flat_tokens.push(config.cls_token() as usize);
        flat_positions.push(0);
        for (j, &t) in seq.iter().enumerate() {
            if t as usize >= config.vocab_size {
                return Err(EncoderError::UnknownToken {
                    token: t,
                    vocab: config.vocab_size,
                });
            }
            flat_tokens.push(t as usize);
            flat_positions.push(j + 1);
        }
        content_rows.push((start + 1, flat_tokens.len()));
        seq_rows.push((start, flat_tokens.len()));
    }

    let tok = tape.gather_rows(enc.token_embedding, flat_tokens);
    let pos = tape.gather_rows(enc.position_embedding, flat_positions);
    let mut x = tape.add(tok, pos);

    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();
    for layer in &enc.layers {
        let normed = layer_norm(tape, x, layer.ln1_gain, layer.ln1_bias);
        let q0 = tape.matmul(normed, layer.wq);
        let q = tape.add_row(q0, layer.bq);
        let k0 = tape.matmul(normed, layer.wk);
        let k = tape.add_row(k0, layer.bk);
        let v0 = tape.matmul(normed, layer.wv);
        let v = tape.add_row(v0, layer.bv);

        let mut ctx_per_seq = Vec::with_capacity(seq_rows.len());
        for &(r0, r1) in &seq_rows {
            let rows: Vec<usize> = (r0..r1).collect();
            let qs = tape.gather_rows(q, rows.clone());
            let ks = tape.gather_rows(k, rows.clone());
            let vs = tape.gather_rows(v, rows);
            let mut head_ctx = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(qs, h * dh, dh);
                let kh = tape.slice_cols(ks, h * dh, dh);
                let vh = tape.slice_cols(vs, h * dh, dh);
                let kt = tape.transpose(kh);
                let raw = tape.matmul(qh, kt);
                let scores = tape.scale(raw, inv_sqrt_dh);
                let attn = tape.softmax_rows(scores);
                head_ctx.push(tape.matmul(attn, vh));
            }
            let ctx = if heads == 1 { head_ctx[0] } else { tape.concat_cols(head_ctx) };
            ctx_per_seq.push(ctx);
        }
        let ctx = if ctx_per_seq.len() == 1 {
            ctx_per_seq[0]
        } else {
            tape.concat_rows(ctx_per_seq)
        };
        let proj0 = tape.matmul(ctx, layer.wo);
        let proj = tape.add_row(proj0, layer.bo);
        x = tape.add(x, proj);

        let normed2 = layer_norm(tape, x, layer.ln2_gain, layer.ln2_bias);
        let pre0 = tape.matmul(normed2, layer.w1);
        let pre = tape.add_row(pre0, layer.b1);
        let act = tape.gelu(pre);
        let post0 = tape.matmul(act, layer.w2);
        let post = tape.add_row(post0, layer.b2);
        x = tape.add(x, post);
    }

    let hidden = layer_norm(tape, x, enc.final_gain, enc.final_bias);

    let pooled = match config.pooling {
        Pooling::Cls => tape.gather_rows(hidden, cls_rows.clone()),
        Pooling::Mean => {
            // Averaging matrix over content rows, excluding CLS.
            let total = flat_len(&content_rows);
            let mut m = Tensor::zeros(sequences.len(), total);
            for (s, &(c0, c1)) in content_rows.iter().enumerate() {
                let inv = 1.0 / (c1 - c0) as f64;
                for r in c0..c1 {
                    *m.at_mut(s, r) = inv;
                }
            }
            let m = tape.leaf(m);
            tape.matmul(m, hidden)
        }
    };

    Ok(BatchEncoding { cls_rows, content_rows, hidden, pooled })
}

fn flat_len(content_rows: &[(usize, usize)]) -> usize {
    content_rows.last().map_or(0, |&(_, end)| end)
}

/// Per-token and pooled embeddings of a single sequence.
pub struct EmbeddingOutput {
    /// seq_len x d, CLS excluded.
    pub per_token: Tensor,
    pub per_sample: Vec<f64>,
}

/// Value-only forward for one sequence.
pub fn encode(params: &EncoderParameters, tokens: &[u32]) -> Result<EmbeddingOutput, EncoderError> {
    let mut tape = Tape::new();
    let enc = BoundEncoder::bind(&mut tape, params);
    let batch = encode_batch(&mut tape, &enc, &[tokens])?;
    let hidden = tape.value(batch.hidden);
    let (c0, c1) = batch.content_rows[0];
    let mut per_token = Tensor::zeros(c1 - c0, params.config.embed_dim);
    for r in c0..c1 {
        per_token.data[(r - c0) * hidden.cols..(r - c0 + 1) * hidden.cols]
            .copy_from_slice(hidden.row_slice(r));
    }
    let per_sample = tape.value(batch.pooled).row_slice(0).to_vec();
    Ok(EmbeddingOutput { per_token, per_sample })
}

/// Pooled embeddings for a whole corpus, evaluated in fixed-size chunks so
/// tape memory stays bounded.
pub fn encode_all(
    params: &EncoderParameters,
    sequences: &[Vec<u32>],
) -> Result<Vec<Vec<f64>>, EncoderError> {
    const CHUNK: usize = 128;
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(CHUNK) {
        let refs: Vec<&[u32]> = chunk.iter().map(|s| s.as_slice()).collect();
        let mut tape = Tape::new();
        let enc = BoundEncoder::bind(&mut tape, params);
        let batch = encode_batch(&mut tape, &enc, &refs)?;
        let pooled = tape.value(batch.pooled);
        for r in 0..pooled.rows {
            out.push(pooled.row_slice(r).to_vec());
        }
    }
    Ok(out)
}

/// Reverse-mode gradients for a scalar loss node, one tensor per parameter
/// in tensors() order. Rejects non-finite losses.
pub fn parameter_gradients(
    tape: &Tape,
    loss: NodeId,
    enc: &BoundEncoder,
    params: &EncoderParameters,
) -> Result<Vec<Tensor>, EncoderError> {
    if !tape.scalar_value(loss).is_finite() {
        return Err(EncoderError::NonFiniteLoss);
    }
    let grads = tape.backward(loss);
    Ok(enc
        .leaf_ids()
        .iter()
        .zip(params.tensors())
        .map(|(&id, t)| grads.get(id, t.rows, t.cols))
        .collect())
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    params: EncoderParameters,
}

pub fn write_checkpoint(path: &Path, params: &EncoderParameters) -> Result<(), EncoderError> {
    let cp = Checkpoint { version: CHECKPOINT_VERSION, params: params.clone() };
    let bytes = serde_json::to_vec(&cp)?;
    crate::fsutil::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderParameters, EncoderError> {
    let bytes = std::fs::read(path)?;
    let cp: Checkpoint = serde_json::from_slice(&bytes)?;
    if cp.version != CHECKPOINT_VERSION {
        return Err(EncoderError::BadVersion {
            found: cp.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(cp.params)
}
