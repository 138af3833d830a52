//! Decoder-only transformer over subtoken ids with tied input/output
//! embeddings.
//!
//! Architecture, per position `t` of a sequence `C`:
//!
//! ```text
//! h_0      = W_e[C_t] + W_p[t] (+ W_l[lang])
//! h_l      = block_l(h_{l-1})                      l = 1..n
//! w_pred   = h_n · A                               A: d_model × d_x
//! logits   = w_pred · W_eᵀ + b                     b: |V|
//! ```
//!
//! Blocks are pre-layer-norm: `x += Attn(LN1(x))`, `x += MLP(LN2(x))` with
//! causal multi-head attention and a 4·d_model tanh-GELU MLP. There is no
//! separate output vocabulary matrix; logits reuse `W_e`. The residual stream
//! lives in the embedding space, so `d_x` must equal `d_model`.
//!
//! Parameter count (see [`count_params`]):
//!
//! ```text
//! d_x·(|V| + N_ctx) + n·(12·d_model² + 13·d_model) + d_model·d_x + |V|
//! ```
//!
//! plus `N_lang·d_x` for the language-embedding variant and `d_model·N_lang`
//! for the classification head. Per block: `W_qkv` 3d² + 3d, `W_o` d² + d,
//! `W_fc` 4d² + 4d, `W_proj` 4d² + d and two layer norms 4d, so the
//! near-linear scaling term `A·n·d_model²` has `A = 12` with a `13·d_model`
//! per-block correction.

mod backward;
mod checkpoint;
mod forward;
mod multilingual;
mod params;
pub mod tensor;
mod train;

use serde::{Deserialize, Serialize};

pub use backward::{loss_and_grad, LossOptions, Sample};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{eval_loss, forward, forward_batch_step, KvCache};
pub use multilingual::{classify_language, prepend_control_code};
pub use params::{count_params, distill_init, init, Block, ModelParams};
pub use tensor::{Matrix, Scalar};
pub use train::{train, AdamW, DecayKind, Teacher, TrainOutcome, TrainSchedule};

/// How the model is told which language it is reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LangMode {
    /// Monolingual, or multilingual with no language signal.
    #[default]
    None,
    /// Learned language embedding added to `h_0`.
    Embedding,
    /// `<LANG:x> <SEP>` prefixed to every sample after `<BOF>`.
    ControlCodes,
    /// Extra classification head predicting the language from the final
    /// position's hidden state, trained jointly.
    DoubleHeads,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_x: usize,
    pub n_heads: usize,
    pub n_ctx: usize,
    pub vocab_size: usize,
    /// Dropout keep probability during training.
    pub keep_prob: f64,
    pub lang_mode: LangMode,
    pub n_lang: usize,
    /// Weight of the classification loss under [`LangMode::DoubleHeads`].
    pub cls_weight: f64,
}

impl ModelConfig {
    /// Desk-scale default: 4 blocks, d_model 128, 4 heads, 128 positions.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 128,
            d_x: 128,
            n_heads: 4,
            n_ctx: 128,
            vocab_size,
            keep_prob: 0.9,
            lang_mode: LangMode::None,
            n_lang: 1,
            cls_weight: 0.5,
        }
    }

    /// The well-performing full-scale architecture; documented, not trained
    /// here.
    pub fn paper_scale(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 24,
            d_model: 1024,
            d_x: 1024,
            n_heads: 16,
            n_ctx: 1024,
            ..ModelConfig::desk(vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.d_x != self.d_model {
            return bad("d_x must equal d_model (the residual stream is the embedding space)");
        }
        if self.n_ctx < 2 {
            return bad("N_ctx must be at least 2");
        }
        if self.vocab_size == 0 {
            return bad("vocabulary must be non-empty");
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad("keep probability must lie in (0, 1]");
        }
        if matches!(self.lang_mode, LangMode::Embedding | LangMode::DoubleHeads) && self.n_lang < 2 {
            return bad("language embedding and double heads need N_lang >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("context of {needed} positions exceeds N_ctx = {n_ctx}")]
    ContextOverflow { needed: usize, n_ctx: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("language index required by this model")]
    MissingLanguage,
    #[error("language index {0} out of range")]
    LanguageOutOfRange(usize),
    #[error("operation needs lang_mode {needed:?}, model has {actual:?}")]
    Capability { needed: LangMode, actual: LangMode },
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample already carries a control code")]
    AlreadyPrefixed,
    #[error("vocabulary has no control code for {0}")]
    UnregisteredLanguage(String),
    #[error("models disagree: {0}")]
    Mismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
