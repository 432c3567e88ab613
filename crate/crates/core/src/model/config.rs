use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::tokenizer::VOCAB_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Causal,
    #[serde(alias = "bidir")]
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    #[serde(alias = "last")]
    LastToken,
    Mean,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Self::Causal),
            "bidir" | "bidirectional" => Ok(Self::Bidirectional),
            _ => Err(Error::config(format!("unknown attention mode `{s}`"))),
        }
    }
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" | "last_token" => Ok(Self::LastToken),
            "mean" => Ok(Self::Mean),
            _ => Err(Error::config(format!("unknown pooling mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub attention_mode: AttentionMode,
    pub pooling_mode: PoolingMode,
    pub normalize_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            max_len: 512,
            attention_mode: AttentionMode::Causal,
            pooling_mode: PoolingMode::LastToken,
            normalize_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < VOCAB_SIZE {
            return Err(Error::config(format!(
                "vocab_size {} is below the {VOCAB_SIZE} ids the tokenizer emits",
                self.vocab_size
            )));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::config("d_model, n_heads and n_layers must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be at least 1"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn with_modes(&self, attention: AttentionMode, pooling: PoolingMode) -> Self {
        Self {
            attention_mode: attention,
            pooling_mode: pooling,
            ..self.clone()
        }
    }
}
