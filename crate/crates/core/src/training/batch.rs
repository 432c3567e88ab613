//! Training pairs, batches, negative assembly and in-context example sampling.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::CandidateSets;
use crate::error::{Error, Result};
use crate::prompting::{ExampleRecord, TaskSpec};

/// Hard negatives per pair unless configured otherwise.
pub const DEFAULT_HARD_NEGATIVES: usize = 7;
/// Upper bound on sampled in-batch examples.
pub const DEFAULT_N_MAX: usize = 5;
/// Examples per task in the fixed-example mode.
pub const FIXED_EXAMPLE_COUNT: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query: String,
    pub positive: String,
    pub hard_negatives: Vec<String>,
}

impl TrainingPair {
    pub fn validate(&self, hard_negatives: usize) -> Result<()> {
        if self.hard_negatives.len() != hard_negatives {
            return Err(Error::Data(format!(
                "pair has {} hard negatives, expected {hard_negatives}",
                self.hard_negatives.len()
            )));
        }
        if self.hard_negatives.contains(&self.positive) {
            return Err(Error::Data(format!(
                "positive `{}` listed among its own hard negatives",
                self.positive
            )));
        }
        Ok(())
    }
}

/// Pairs from one task; every step trains on a single task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainBatch {
    pub task: TaskSpec,
    pub pairs: Vec<TrainingPair>,
}

impl TrainBatch {
    pub fn validate(&self, hard_negatives: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        self.pairs.iter().try_for_each(|p| p.validate(hard_negatives))
    }

    /// Passage texts in score-matrix column order: every positive, then each
    /// pair's hard negatives in pair order.
    pub fn passages(&self) -> Vec<&str> {
        self.pairs
            .iter()
            .map(|p| p.positive.as_str())
            .chain(self.pairs.iter().flat_map(|p| p.hard_negatives.iter().map(String::as_str)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    /// `None` follows the task kind (retrieval only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_in_batch_negatives: Option<bool>,
    pub distill_weight: f64,
    pub distill_temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: super::loss::DEFAULT_TAU,
            use_in_batch_negatives: None,
            distill_weight: 0.0,
            distill_temperature: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if !(0.0..=1.0).contains(&self.distill_weight) {
            return Err(Error::config("distill_weight must lie in [0, 1]"));
        }
        if !(self.distill_temperature > 0.0) {
            return Err(Error::config("distillation temperature must be positive"));
        }
        Ok(())
    }

    pub fn in_batch_for(&self, task: &TaskSpec) -> bool {
        self.use_in_batch_negatives
            .unwrap_or_else(|| task.task_kind.uses_in_batch_negatives())
    }
}

/// Per-query candidates plus a count of duplicate passage texts that ended
/// up among a query's negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeSets {
    pub candidates: CandidateSets,
    pub duplicate_negatives: usize,
}

pub fn assemble_negatives(batch: &TrainBatch, cfg: &LossConfig) -> NegativeSets {
    let b = batch.pairs.len();
    let in_batch = cfg.in_batch_for(&batch.task);
    let mut offsets = Vec::with_capacity(b);
    let mut at = b;
    for p in &batch.pairs {
        offsets.push(at);
        at += p.hard_negatives.len();
    }
    let passages = batch.passages();
    let mut negatives = Vec::with_capacity(b);
    let mut duplicates = 0;
    for (i, p) in batch.pairs.iter().enumerate() {
        let mut negs: Vec<usize> = (offsets[i]..offsets[i] + p.hard_negatives.len()).collect();
        if in_batch {
            negs.extend((0..b).filter(|&j| j != i));
        }
        duplicates += negs.iter().filter(|&&c| passages[c] == p.positive).count();
        negatives.push(negs);
    }
    NegativeSets {
        candidates: CandidateSets {
            positives: (0..b).collect(),
            negatives,
        },
        duplicate_negatives: duplicates,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum ExampleMode {
    /// Plain instruction prompts.
    None,
    /// The task's three predetermined examples on every query.
    Fixed,
    /// `k ~ U{0..n_max}` examples drawn from the other pairs of the batch.
    InBatch { n_max: usize },
}

impl Default for ExampleMode {
    fn default() -> Self {
        ExampleMode::InBatch {
            n_max: DEFAULT_N_MAX,
        }
    }
}

/// Donor indices for pair `target` of a batch of `len`: `k ~ U{0..n_max}`,
/// capped by the `len - 1` eligible pairs, drawn without replacement and in
/// random order.
pub fn sample_donors<R: Rng + ?Sized>(len: usize, target: usize, n_max: usize, rng: &mut R) -> Vec<usize> {
    let k = rng.random_range(0..=n_max);
    let pool: Vec<usize> = (0..len).filter(|&j| j != target).collect();
    let mut chosen: Vec<usize> = pool.choose_multiple(rng, k.min(pool.len())).copied().collect();
    chosen.shuffle(rng);
    chosen
}

pub fn sample_icl_examples<R: Rng + ?Sized>(
    batch: &TrainBatch,
    mode: ExampleMode,
    rng: &mut R,
) -> Result<Vec<Vec<ExampleRecord>>> {
    let b = batch.pairs.len();
    match mode {
        ExampleMode::None => Ok(vec![Vec::new(); b]),
        ExampleMode::Fixed => {
            let fixed = batch
                .task
                .fixed_examples
                .as_ref()
                .filter(|f| f.len() == FIXED_EXAMPLE_COUNT)
                .ok_or_else(|| {
                    Error::config(format!(
                        "task `{}` needs exactly {FIXED_EXAMPLE_COUNT} fixed examples",
                        batch.task.name
                    ))
                })?;
            Ok(vec![fixed.clone(); b])
        }
        ExampleMode::InBatch { n_max } => Ok((0..b)
            .map(|i| {
                sample_donors(b, i, n_max, rng)
                    .into_iter()
                    .map(|j| ExampleRecord::new(&batch.pairs[j].query, &batch.pairs[j].positive))
                    .collect()
            })
            .collect()),
    }
}
