use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::reranker::{RerankTrainConfig, RerankerConfig};
use crate::training::{AdamConfig, ExampleMode, LossConfig, TrainConfig, DEFAULT_HARD_NEGATIVES, DEFAULT_N_MAX};

/// Environment variable supplying the seed when neither the flag nor the
/// config sets one.
pub const SEED_ENV: &str = "ICLE_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    None,
    Fixed,
    #[default]
    #[serde(alias = "inbatch")]
    #[value(alias = "in_batch")]
    Inbatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub hard_negatives: usize,
    pub mode: ModeName,
    pub n_max: usize,
    pub tau: f64,
    pub lr: f64,
    pub use_passage_prompt: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_in_batch_negatives: Option<bool>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            hard_negatives: DEFAULT_HARD_NEGATIVES,
            mode: ModeName::Inbatch,
            n_max: DEFAULT_N_MAX,
            tau: t.loss.tau,
            lr: t.adam.lr,
            use_passage_prompt: false,
            use_in_batch_negatives: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub shots: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ks: vec![1, 10], shots: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub exit_layer: usize,
    pub merge_ratio: usize,
    pub merge_layers: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub hard_negatives: usize,
    pub exits: Vec<usize>,
    pub ratios: Vec<usize>,
    pub train_merge_layers: Vec<usize>,
    pub self_distill: bool,
    pub lr: f64,
}

impl Default for RerankSection {
    fn default() -> Self {
        let t = RerankTrainConfig::default();
        Self {
            exit_layer: 4,
            merge_ratio: 1,
            merge_layers: Vec::new(),
            steps: 200,
            batch_size: t.batch_size,
            hard_negatives: t.hard_negatives,
            exits: t.exits,
            ratios: t.ratios,
            train_merge_layers: t.merge_layers,
            self_distill: t.self_distill,
            lr: t.adam.lr,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_curve: Option<PathBuf>,
}

/// Everything a run needs, as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub reranker: RerankSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            model: ModelConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            reranker: RerankSection::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: loading it again yields the same config and the
    /// same bytes.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config(0)?.validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::config("eval.ks must be non-empty with every k >= 1"));
        }
        self.reranker_config().validate(self.model.n_layers)
    }

    /// Flag, then config, then `ICLE_SEED`, then zero.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            hard_negatives: t.hard_negatives,
            mode: match t.mode {
                ModeName::None => ExampleMode::None,
                ModeName::Fixed => ExampleMode::Fixed,
                ModeName::Inbatch => ExampleMode::InBatch { n_max: t.n_max },
            },
            loss: LossConfig {
                tau: t.tau,
                use_in_batch_negatives: t.use_in_batch_negatives,
                ..LossConfig::default()
            },
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            seed,
            use_passage_prompt: t.use_passage_prompt,
            lora: None,
        })
    }

    pub fn reranker_config(&self) -> RerankerConfig {
        RerankerConfig {
            exit_layer: self.reranker.exit_layer.min(self.model.n_layers),
            merge_ratio: self.reranker.merge_ratio,
            merge_layers: self.reranker.merge_layers.clone(),
        }
    }

    pub fn rerank_train_config(&self, seed: u64) -> RerankTrainConfig {
        let r = &self.reranker;
        RerankTrainConfig {
            batch_size: r.batch_size,
            hard_negatives: r.hard_negatives,
            exits: r.exits.clone(),
            ratios: r.ratios.clone(),
            merge_layers: r.train_merge_layers.clone(),
            self_distill: r.self_distill,
            adam: AdamConfig {
                lr: r.lr,
                ..AdamConfig::default()
            },
            seed,
            ..RerankTrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_fixed_point() {
        let text = "seed = 7\n[train]\nsteps = 10\nmode = \"fixed\"\ntau = 0.02\n[model]\nd_model = 32\nn_layers = 2\nattention_mode = \"bidir\"\n";
        let a = RunConfig::from_toml(text).unwrap();
        let canon = a.to_toml().unwrap();
        let b = RunConfig::from_toml(&canon).unwrap();
        assert_eq!(a, b);
        assert_eq!(canon, b.to_toml().unwrap());
        assert_eq!(a.model.n_layers, 2);
    }

    #[test]
    fn defaults_carry_tau() {
        let c = RunConfig::default();
        assert_eq!(c.train.tau, 0.02);
        assert_eq!(c.train_config(0).unwrap().loss.tau, 0.02);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[train]\ntau = -1.0").is_err());
        assert!(RunConfig::from_toml("[reranker]\nmerge_ratio = 3").is_err());
    }

    #[test]
    fn seed_precedence() {
        let c = RunConfig {
            seed: Some(3),
            ..Default::default()
        };
        assert_eq!(c.resolve_seed(Some(9)).unwrap(), 9);
        assert_eq!(c.resolve_seed(None).unwrap(), 3);
    }
}
