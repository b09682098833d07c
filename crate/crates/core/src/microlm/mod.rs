//! Micro decoder-only transformer.
//!
//! Pre-norm GPT layout: token and learned position embeddings, `n_layers`
//! blocks of causal multi-head attention and a GELU feed-forward network,
//! a final layer norm and an untied LM head. Gradients are computed by a
//! hand-written reverse pass over cached activations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed;

mod model;
pub mod real;
pub mod tensor;
pub mod tokenizer;

pub use real::{DType, Real};
pub use tensor::{Tensor, TensorMap};
pub use tokenizer::{Tokenizer, BOS, PAD};

/// Standard deviation of weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
}

fn default_dtype() -> DType {
    DType::F64
}

impl ModelConfig {
    /// Desk-scale defaults for a given vocabulary.
    pub fn desk(vocab_size: usize, seed: u64) -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 2,
            d_ff: 256,
            context_len: 128,
            vocab_size,
            seed,
            dtype: DType::F64,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(String::from(m)));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("layer, width, head and ffn sizes must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.context_len == 0 || self.vocab_size < 2 {
            return bad("context_len must be positive and vocab_size at least 2");
        }
        Ok(())
    }

    /// Parameter tensor names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (self.d_model, self.d_ff, self.vocab_size);
        let mut out = Vec::with_capacity(5 + 12 * self.n_layers);
        out.push((String::from("tok_emb"), alloc::vec![v, d]));
        out.push((String::from("pos_emb"), alloc::vec![self.context_len, d]));
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.push((p("ln1.gain"), alloc::vec![d]));
            out.push((p("ln1.bias"), alloc::vec![d]));
            out.push((p("attn.w_qkv"), alloc::vec![d, 3 * d]));
            out.push((p("attn.b_qkv"), alloc::vec![3 * d]));
            out.push((p("attn.w_out"), alloc::vec![d, d]));
            out.push((p("attn.b_out"), alloc::vec![d]));
            out.push((p("ln2.gain"), alloc::vec![d]));
            out.push((p("ln2.bias"), alloc::vec![d]));
            out.push((p("ffn.w_in"), alloc::vec![d, f]));
            out.push((p("ffn.b_in"), alloc::vec![f]));
            out.push((p("ffn.w_out"), alloc::vec![f, d]));
            out.push((p("ffn.b_out"), alloc::vec![d]));
        }
        out.push((String::from("ln_f.gain"), alloc::vec![d]));
        out.push((String::from("ln_f.bias"), alloc::vec![d]));
        out.push((String::from("lm_head"), alloc::vec![d, v]));
        out
    }

    pub fn n_params(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("sequence of length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("empty target span")]
    EmptySpan,
    #[error("span query needs a nonempty prefix")]
    EmptyPrefix,
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch of {len} tokens is not {rows} rows")]
    RaggedBatch { len: usize, rows: usize },
    #[error("batch has no next-token targets")]
    NoTargets,
    #[error("parameter layout does not match config")]
    LayoutMismatch,
}

/// Prefix and span whose joint log-probability is measured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanQuery {
    pub prefix_tokens: Vec<u32>,
    pub span_tokens: Vec<u32>,
}

/// Log-probability of a span: one entry per span token, and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanScore {
    pub token_logprobs: Vec<f64>,
    pub sum: f64,
}

/// Parameters plus the config that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroLm<T> {
    pub config: ModelConfig,
    pub params: TensorMap<T>,
}

impl<T: Real> MicroLm<T> {
    /// Scaled-normal weights, zero biases and offsets, unit norm gains.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(config.seed, "init"));
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let mut t = Tensor::zeros(name, &shape);
                if shape.len() == 2 {
                    t.data.iter_mut().for_each(|x| *x = T::of(normal.sample(&mut rng)));
                } else if t.name.ends_with(".gain") {
                    t.data.iter_mut().for_each(|x| *x = T::one());
                }
                t
            })
            .collect();
        Ok(Self { config, params: TensorMap { tensors } })
    }

    pub fn from_params(config: ModelConfig, params: TensorMap<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = config.layout();
        let ok = layout.len() == params.tensors.len()
            && layout.iter().zip(&params.tensors).all(|((n, s), t)| *n == t.name && *s == t.shape);
        if !ok {
            return Err(ModelError::LayoutMismatch);
        }
        Ok(Self { config, params })
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        let vocab = self.config.vocab_size;
        match tokens.iter().find(|&&t| t as usize >= vocab) {
            Some(&id) => Err(ModelError::TokenOutOfRange { id, vocab }),
            None => Ok(()),
        }
    }

    /// Per-position next-token log-distributions for one sequence.
    pub fn forward_next_token_logprobs(&self, tokens: &[u32]) -> Result<Vec<Vec<f64>>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if tokens.len() > self.config.context_len {
            return Err(ModelError::SequenceTooLong { len: tokens.len(), max: self.config.context_len });
        }
        self.check_tokens(tokens)?;
        let acts = self.forward(tokens, 1, tokens.len());
        let positions: Vec<usize> = (0..tokens.len()).collect();
        Ok(self.head_logprobs(&acts.xf, &positions))
    }

    /// Summed log-probability of `q.span_tokens` given `q.prefix_tokens`.
    pub fn span_logprob(&self, q: &SpanQuery) -> Result<f64, ModelError> {
        Ok(self.span_logprobs(core::slice::from_ref(q))?.remove(0).sum)
    }

    /// Scores many queries in one right-padded batch. Causal attention makes
    /// each row's result independent of its padding and of the other rows.
    pub fn span_logprobs(&self, queries: &[SpanQuery]) -> Result<Vec<SpanScore>, ModelError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let mut width = 0;
        for q in queries {
            if q.span_tokens.is_empty() {
                return Err(ModelError::EmptySpan);
            }
            if q.prefix_tokens.is_empty() {
                return Err(ModelError::EmptyPrefix);
            }
            let total = q.prefix_tokens.len() + q.span_tokens.len();
            if total > self.config.context_len {
                return Err(ModelError::SequenceTooLong { len: total, max: self.config.context_len });
            }
            self.check_tokens(&q.prefix_tokens)?;
            self.check_tokens(&q.span_tokens)?;
            width = width.max(total - 1);
        }
        let rows = queries.len();
        let mut tokens = alloc::vec![PAD; rows * width];
        let mut positions = Vec::new();
        for (r, q) in queries.iter().enumerate() {
            let row = &mut tokens[r * width..(r + 1) * width];
            let p = q.prefix_tokens.len();
            row[..p].copy_from_slice(&q.prefix_tokens);
            let s = q.span_tokens.len();
            row[p..p + s - 1].copy_from_slice(&q.span_tokens[..s - 1]);
            positions.extend((0..s).map(|j| r * width + p - 1 + j));
        }
        let acts = self.forward(&tokens, rows, width);
        let logprobs = self.head_logprobs(&acts.xf, &positions);
        let mut out = Vec::with_capacity(rows);
        let mut it = logprobs.into_iter();
        for q in queries {
            let token_logprobs: Vec<f64> =
                q.span_tokens.iter().map(|&t| it.next().expect("position per span token")[t as usize]).collect();
            let sum = token_logprobs.iter().sum();
            out.push(SpanScore { token_logprobs, sum });
        }
        Ok(out)
    }

    /// Mean next-token cross-entropy over `rows` equal-length rows, and its
    /// gradient. Targets equal to [`PAD`] are ignored.
    pub fn loss_and_grads(&self, batch: &[u32], rows: usize) -> Result<(f64, TensorMap<T>), ModelError> {
        let mut grads = TensorMap::zeros_like(&self.params);
        let loss = self.loss_and_grads_into(batch, rows, &mut grads)?;
        Ok((loss, grads))
    }

    /// As [`MicroLm::loss_and_grads`], overwriting a preallocated gradient
    /// map with this model's layout.
    pub fn loss_and_grads_into(&self, batch: &[u32], rows: usize, grads: &mut TensorMap<T>) -> Result<f64, ModelError> {
        if batch.is_empty() || rows == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if batch.len() % rows != 0 {
            return Err(ModelError::RaggedBatch { len: batch.len(), rows });
        }
        let seq = batch.len() / rows;
        if seq > self.config.context_len {
            return Err(ModelError::SequenceTooLong { len: seq, max: self.config.context_len });
        }
        if !grads.same_layout(&self.params) {
            return Err(ModelError::LayoutMismatch);
        }
        self.check_tokens(batch)?;
        let acts = self.forward(batch, rows, seq);
        self.backward(acts, grads)
    }

    /// Mean next-token cross-entropy without gradients.
    pub fn loss(&self, batch: &[u32], rows: usize) -> Result<f64, ModelError> {
        if batch.is_empty() || rows == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if batch.len() % rows != 0 {
            return Err(ModelError::RaggedBatch { len: batch.len(), rows });
        }
        let seq = batch.len() / rows;
        if seq > self.config.context_len {
            return Err(ModelError::SequenceTooLong { len: seq, max: self.config.context_len });
        }
        self.check_tokens(batch)?;
        let acts = self.forward(batch, rows, seq);
        let mut positions = Vec::new();
        let mut targets = Vec::new();
        for r in 0..rows {
            for s in 0..seq.saturating_sub(1) {
                let t = batch[r * seq + s + 1];
                if t != PAD {
                    positions.push(r * seq + s);
                    targets.push(t);
                }
            }
        }
        if positions.is_empty() {
            return Err(ModelError::NoTargets);
        }
        let lp = self.head_logprobs(&acts.xf, &positions);
        let total: f64 = lp.iter().zip(&targets).map(|(row, &t)| -row[t as usize]).sum();
        Ok(total / positions.len() as f64)
    }
}
