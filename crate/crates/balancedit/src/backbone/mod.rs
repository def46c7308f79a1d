//! A small multimodal decoder: image feature + token prompt in, answer
//! tokens out. The model exposes every layer's hidden states and accepts an
//! override for one block's MLP down-projection, which is the seam the
//! codebook routes edited transformations through.

mod backward;
mod checkpoint;
mod forward;
mod model;
mod train;

pub use backward::Gradients;
pub use forward::{assemble_tokens, Forward, ForwardTrace, MlpOverride};
pub use model::BackboneModel;
pub use train::{exact_match_accuracy, pretrain, PretrainSample, TrainLog, DECODE_BUDGET};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, Tensor};

/// Token id in the shared vocabulary. Sequences are short and batch size is
/// always one, so plain vectors of ids are the working representation.
pub type TokenId = u32;
pub type TokenSequence = Vec<TokenId>;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;

/// Architecture and initialization settings. Serialized into checkpoints so
/// a loaded model is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    pub d_img: usize,
    pub n_img_prefix_tokens: usize,
    pub max_seq_len: usize,
    /// Block whose MLP down-projection the codebook may override.
    pub editable_layer: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 128,
            d_model: 32,
            n_layers: 4,
            n_heads: 4,
            mlp_hidden: 128,
            d_img: 16,
            n_img_prefix_tokens: 4,
            max_seq_len: 48,
            editable_layer: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(BackboneError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.editable_layer >= self.n_layers {
            return Err(BackboneError::Config(format!(
                "editable_layer {} out of range for {} layers",
                self.editable_layer, self.n_layers
            )));
        }
        if self.vocab_size <= EOS as usize {
            return Err(BackboneError::Config(format!(
                "vocab_size {} leaves no room for reserved tokens",
                self.vocab_size
            )));
        }
        if self.n_img_prefix_tokens == 0 || self.max_seq_len <= self.n_img_prefix_tokens {
            return Err(BackboneError::Config(format!(
                "max_seq_len {} must exceed n_img_prefix_tokens {}",
                self.max_seq_len, self.n_img_prefix_tokens
            )));
        }
        Ok(())
    }
}

/// A dense image feature vector, the stand-in for a real image. The black
/// image is all zeros and the white image all ones, by definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageFeature(pub Vec<f64>);

impl ImageFeature {
    pub fn black(d_img: usize) -> Self {
        ImageFeature(vec![0.0; d_img])
    }

    pub fn white(d_img: usize) -> Self {
        ImageFeature(vec![1.0; d_img])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Per-layer activations from one forward pass. `layer(0)` is the embedded
/// input; `layer(i + 1)` is block `i`'s output; every tensor is
/// `[seq_len, d_model]`.
#[derive(Debug, Clone)]
pub struct HiddenStates {
    layers: Vec<Tensor>,
}

impl HiddenStates {
    pub(crate) fn new(layers: Vec<Tensor>) -> Self {
        HiddenStates { layers }
    }

    pub fn layer(&self, i: usize) -> &Tensor {
        &self.layers[i]
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn seq_len(&self) -> usize {
        self.layers[0].shape()[0]
    }
}

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds the {max}-token budget (after {prefix} image prefix slots)")]
    SequenceTooLong { len: usize, max: usize, prefix: usize },
    #[error("image feature has {got} dims, model expects {expected}")]
    ImageDim { expected: usize, got: usize },
    #[error("override weight `{which}` has shape {got:?}, editable layer expects {expected:?}")]
    HookShape { which: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("answer loss requires a non-empty answer sequence")]
    EmptyAnswer,
    #[error("pretraining diverged: non-finite loss at epoch {epoch}, sample {sample}")]
    Diverged { epoch: usize, sample: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BackboneError>;
