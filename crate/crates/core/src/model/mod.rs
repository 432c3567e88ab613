//! Toy decoder-only transformer used as the embedding backbone.
//!
//! Pre-norm blocks (RMS norm, multi-head attention, two-layer MLP with
//! `x * sigmoid(1.702 x)`), fixed sinusoidal positions added at the input,
//! and a final RMS norm. Attention masking and pooling are configuration, not
//! weights, so one set of weights serves every combination.

pub mod config;
pub mod forward;
pub mod mask;
pub mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{AttentionMode, ModelConfig, PoolingMode};
pub use forward::{BoundWeights, Binding, MergePlan, Trainable};
pub use mask::{build_mask, AttentionMask};
pub use weights::{lora_apply, parameter_shapes, LoraAdapter, LoraSpec, ModelWeights};

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tape, Tensor};
use crate::prompting::{encoder_input, LengthBudget, RenderedPrompt, TokenSeq};

pub type Embedding = Vec<f32>;

/// Per-layer residual states of one sequence (`len x d_model` each) and the
/// final-normed output that pooling reads.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStates<T: Scalar = f32> {
    pub layers: Vec<Tensor<T>>,
    pub final_states: Tensor<T>,
}

pub fn forward_hidden<T: Scalar>(
    tokens: &TokenSeq,
    cfg: &ModelConfig,
    weights: &ModelWeights<T>,
    adapters: &[LoraAdapter<T>],
) -> Result<HiddenStates<T>> {
    let mut tape = Tape::new();
    let b = BoundWeights::bind(&mut tape, cfg, weights, adapters, Trainable::Nothing)?;
    let seqs = std::slice::from_ref(tokens);
    let trace = forward::forward_packed(&mut tape, cfg, &b.weights, seqs, cfg.n_layers, None)?;
    let last = *trace.states.last().expect("depth >= 1");
    let fin = forward::final_norm(&mut tape, &b.weights, last)?;
    Ok(HiddenStates {
        layers: trace.states.iter().map(|&v| tape.value(v).clone()).collect(),
        final_states: tape.value(fin).clone(),
    })
}

/// Pools final-layer states; no normalisation.
pub fn pool<T: Scalar>(hidden: &HiddenStates<T>, tokens: &TokenSeq, mode: PoolingMode) -> Result<Vec<T>> {
    let states = &hidden.final_states;
    let (len, d) = states.dims2();
    if len != tokens.len() {
        return Err(Error::shape(format!(
            "{len} hidden rows for {} tokens",
            tokens.len()
        )));
    }
    match mode {
        PoolingMode::LastToken => Ok(states.row(forward::last_token_index(tokens)?).to_vec()),
        PoolingMode::Mean => {
            let kept: Vec<usize> = (0..len).filter(|&i| !tokens.pad_mask[i]).collect();
            if kept.is_empty() {
                return Err(Error::EmptyInput("sequence is all padding".into()));
            }
            let mut out = vec![T::zero(); d];
            for &i in &kept {
                for (o, &v) in out.iter_mut().zip(states.row(i)) {
                    *o += v;
                }
            }
            let n = T::of(kept.len() as f64);
            Ok(out.into_iter().map(|v| v / n).collect())
        }
    }
}

/// Tokenizes, appends `[EOS]`, runs the model and pools. Uses the default
/// length budget clamped to `cfg.max_len`.
pub fn encode(text: &RenderedPrompt, cfg: &ModelConfig, weights: &ModelWeights) -> Result<Embedding> {
    let budget = LengthBudget::default().clamped(cfg.max_len);
    let seq = encoder_input(text, &budget)?;
    let mut out = encode_tokens(&[seq], cfg, weights, &[])?;
    Ok(out.remove(0))
}

/// Embeds already-tokenized encoder inputs as one packed forward pass.
pub fn encode_tokens<T: Scalar>(
    seqs: &[TokenSeq],
    cfg: &ModelConfig,
    weights: &ModelWeights<T>,
    adapters: &[LoraAdapter<T>],
) -> Result<Vec<Vec<f32>>> {
    let mut tape = Tape::new();
    let b = BoundWeights::bind(&mut tape, cfg, weights, adapters, Trainable::Nothing)?;
    let emb = forward::embed_packed(&mut tape, cfg, &b.weights, seqs)?;
    let t = tape.value(emb);
    Ok((0..seqs.len())
        .map(|i| t.row(i).iter().map(|v| v.as_f64() as f32).collect())
        .collect())
}

/// Configuration, weights, optional adapters and the prompt budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: ModelWeights,
    pub adapters: Vec<LoraAdapter>,
    pub budget: LengthBudget,
}

/// Sequences per packed forward pass when encoding many prompts.
const ENCODE_CHUNK: usize = 16;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = ModelWeights::init(&config, &mut rng)?;
        Self::from_parts(config, weights)
    }

    pub fn from_parts(config: ModelConfig, weights: ModelWeights) -> Result<Self> {
        config.validate()?;
        weights.check(&config)?;
        Ok(Self {
            budget: LengthBudget::default().clamped(config.max_len),
            config,
            weights,
            adapters: Vec::new(),
        })
    }

    /// Same weights under a different attention/pooling configuration.
    pub fn with_modes(&self, attention: AttentionMode, pooling: PoolingMode) -> Self {
        Self {
            config: self.config.with_modes(attention, pooling),
            ..self.clone()
        }
    }

    pub fn tokens(&self, prompt: &RenderedPrompt) -> Result<TokenSeq> {
        encoder_input(prompt, &self.budget)
    }

    pub fn forward_hidden(&self, tokens: &TokenSeq) -> Result<HiddenStates> {
        forward_hidden(tokens, &self.config, &self.weights, &self.adapters)
    }

    pub fn encode(&self, prompt: &RenderedPrompt) -> Result<Embedding> {
        let seq = self.tokens(prompt)?;
        Ok(encode_tokens(&[seq], &self.config, &self.weights, &self.adapters)?.remove(0))
    }

    pub fn encode_batch(&self, prompts: &[RenderedPrompt]) -> Result<Vec<Embedding>> {
        let seqs = prompts.iter().map(|p| self.tokens(p)).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(ENCODE_CHUNK) {
            out.extend(encode_tokens(chunk, &self.config, &self.weights, &self.adapters)?);
        }
        Ok(out)
    }

    /// Folds every adapter into the base weights.
    pub fn merged_weights(&self) -> Result<ModelWeights> {
        let mut w = self.weights.clone();
        let names: Vec<String> = parameter_shapes(&self.config).into_iter().map(|(n, _)| n).collect();
        for ad in &self.adapters {
            let idx = names
                .iter()
                .position(|n| *n == ad.target)
                .ok_or_else(|| Error::config(format!("unknown adapter target `{}`", ad.target)))?;
            let mut ts = w.tensors_mut();
            *ts[idx] = lora_apply(ts[idx], ad)?;
        }
        Ok(w)
    }
}
