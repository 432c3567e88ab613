use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::{
    assemble_negatives, sample_icl_examples, ExampleMode, LossConfig, NegativeSets, TrainBatch,
    TrainingPair, DEFAULT_HARD_NEGATIVES,
};
use super::loss::{candidate_rows, info_nce_tape, kl_rows, score_matrix};
use super::optim::{Adam, AdamConfig};
use super::rng::SeededRng;
use crate::error::{Error, Result};
use crate::model::forward::{embed_packed, BoundWeights, Trainable};
use crate::model::weights::adapter_targets;
use crate::model::{parameter_shapes, LoraAdapter, LoraSpec, Model, ModelConfig};
use crate::numcore::{Scalar, Tape, Tensor, Var};
use crate::prompting::{
    encoder_input, render_passage, render_query, ExampleRecord, LengthBudget, TaskSpec, TokenSeq,
};

/// One line of a training file: a query with its positives and negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub task: String,
    pub query: String,
    pub pos: Vec<String>,
    #[serde(default)]
    pub neg: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Entry {
    query: String,
    positive: String,
    negatives: Vec<String>,
}

/// Training records grouped by task. A record with several positives
/// contributes one entry per positive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    tasks: Vec<TaskSpec>,
    entries: Vec<Vec<Entry>>,
}

impl Dataset {
    pub fn new(tasks: Vec<TaskSpec>, records: Vec<DatasetRecord>) -> Result<Self> {
        let index: HashMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect();
        let mut entries = vec![Vec::new(); tasks.len()];
        for r in records {
            let &t = index
                .get(r.task.as_str())
                .ok_or_else(|| Error::Data(format!("record names unknown task `{}`", r.task)))?;
            if r.pos.is_empty() {
                return Err(Error::Data(format!("query `{}` has no positive", r.query)));
            }
            for p in &r.pos {
                if r.neg.contains(p) {
                    return Err(Error::Data(format!("positive `{p}` also listed as a negative")));
                }
                entries[t].push(Entry {
                    query: r.query.clone(),
                    positive: p.clone(),
                    negatives: r.neg.clone(),
                });
            }
        }
        if entries.iter().all(Vec::is_empty) {
            return Err(Error::EmptyInput("dataset has no training pairs".into()));
        }
        Ok(Self { tasks, entries })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every entry must carry at least `hard_negatives` negatives.
    pub fn check(&self, hard_negatives: usize) -> Result<()> {
        for (t, es) in self.tasks.iter().zip(&self.entries) {
            if let Some(e) = es.iter().find(|e| e.negatives.len() < hard_negatives) {
                return Err(Error::Data(format!(
                    "task `{}` query `{}` has {} negatives, need {hard_negatives}",
                    t.name,
                    e.query,
                    e.negatives.len()
                )));
            }
        }
        Ok(())
    }

    /// Picks a task with probability proportional to its pair count, then up
    /// to `batch_size` distinct pairs from it. Extra negatives are subsampled.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        hard_negatives: usize,
        rng: &mut R,
    ) -> Result<TrainBatch> {
        if batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        let weights: Vec<usize> = self.entries.iter().map(Vec::len).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Data(format!("task weights: {e}")))?;
        let t = dist.sample(rng);
        let es = &self.entries[t];
        let picks = index::sample(rng, es.len(), batch_size.min(es.len()));
        let mut pairs = Vec::with_capacity(picks.len());
        for i in picks {
            let e = &es[i];
            if e.negatives.len() < hard_negatives {
                return Err(Error::Data(format!(
                    "query `{}` has {} negatives, need {hard_negatives}",
                    e.query,
                    e.negatives.len()
                )));
            }
            let hard = if e.negatives.len() == hard_negatives {
                e.negatives.clone()
            } else {
                e.negatives.choose_multiple(rng, hard_negatives).cloned().collect()
            };
            pairs.push(TrainingPair {
                query: e.query.clone(),
                positive: e.positive.clone(),
                hard_negatives: hard,
            });
        }
        Ok(TrainBatch {
            task: self.tasks[t].clone(),
            pairs,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub hard_negatives: usize,
    pub mode: ExampleMode,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    pub use_passage_prompt: bool,
    /// Train low-rank adapters on every projection instead of all weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            hard_negatives: DEFAULT_HARD_NEGATIVES,
            mode: ExampleMode::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            use_passage_prompt: false,
            lora: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        self.loss.validate()?;
        self.adam.validate()
    }
}

/// Tokenized prompts and candidate sets for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBatch {
    pub queries: Vec<TokenSeq>,
    pub passages: Vec<TokenSeq>,
    pub negatives: NegativeSets,
    pub shots: Vec<usize>,
}

/// Renders query prompts with their examples and passage prompts, then
/// tokenizes both sides under `budget`.
pub fn prepare_batch(
    batch: &TrainBatch,
    examples: &[Vec<ExampleRecord>],
    budget: &LengthBudget,
    use_passage_prompt: bool,
    loss: &LossConfig,
) -> Result<PreparedBatch> {
    if examples.len() != batch.pairs.len() {
        return Err(Error::shape("one example list per pair required"));
    }
    let mut queries = Vec::with_capacity(batch.pairs.len());
    let mut shots = Vec::with_capacity(batch.pairs.len());
    for (p, ex) in batch.pairs.iter().zip(examples) {
        let r = render_query(&batch.task, &p.query, ex, budget)?;
        shots.push(r.shot_count);
        queries.push(encoder_input(&r, budget)?);
    }
    let passages = batch
        .passages()
        .into_iter()
        .map(|p| encoder_input(&render_passage(p, use_passage_prompt), budget))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedBatch {
        queries,
        passages,
        negatives: assemble_negatives(batch, loss),
        shots,
    })
}

pub struct LossVars {
    pub total: Var,
    pub info_nce: Var,
    pub distill: Option<Var>,
}

/// Encodes both sides with the same weights and builds the step loss.
/// `teacher` rows follow candidate order (positive first).
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &BoundWeights,
    prep: &PreparedBatch,
    loss: &LossConfig,
    teacher: Option<&[Vec<f64>]>,
) -> Result<LossVars> {
    let q = embed_packed(tape, cfg, w, &prep.queries)?;
    let p = embed_packed(tape, cfg, w, &prep.passages)?;
    let s = score_matrix(tape, q, p, loss.tau)?;
    let nce = info_nce_tape(tape, s, &prep.negatives.candidates)?;
    let Some(teacher) = teacher.filter(|_| loss.distill_weight > 0.0) else {
        return Ok(LossVars {
            total: nce,
            info_nce: nce,
            distill: None,
        });
    };
    let student = candidate_rows(tape, s, &prep.negatives.candidates)?;
    let rows: Vec<Vec<T>> = teacher.iter().map(|r| r.iter().map(|&x| T::of(x)).collect()).collect();
    let (r, c) = tape.value(student).dims2();
    if rows.len() != r || rows.iter().any(|x| x.len() != c) {
        return Err(Error::shape("teacher scores do not match the candidate sets"));
    }
    let t = tape.constant(Tensor::new(vec![r, c], rows.concat())?);
    let kl = kl_rows(tape, t, student, loss.distill_temperature)?;
    let a = tape.scale(nce, T::of(1.0 - loss.distill_weight))?;
    let b = tape.scale(kl, T::of(loss.distill_weight))?;
    Ok(LossVars {
        total: tape.add(a, b)?,
        info_nce: nce,
        distill: Some(kl),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub info_nce: f64,
    pub distill: Option<f64>,
    pub shots: Vec<usize>,
    pub duplicate_negatives: usize,
}

/// Owns a model, its optimizer state and the sampling stream.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: Adam,
    pub rng: SeededRng,
    pub step: u64,
}

impl Trainer {
    pub fn new(mut model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = SeededRng::new(config.seed);
        if let Some(spec) = config.lora {
            let mut init = rng.fork(1);
            let shapes = parameter_shapes(&model.config);
            model.adapters = adapter_targets(&model.config)
                .into_iter()
                .map(|t| {
                    let s = &shapes.iter().find(|(n, _)| *n == t).expect("target exists").1;
                    LoraAdapter::new(t, spec, s[1], s[0], &mut init)
                })
                .collect::<Result<_>>()?;
        }
        Ok(Self {
            adam: Adam::new(config.adam),
            model,
            config,
            rng,
            step: 0,
        })
    }

    pub fn train_step(&mut self, batch: &TrainBatch) -> Result<StepReport> {
        self.train_step_with_teacher(batch, None)
    }

    /// Samples examples, encodes, backpropagates and applies one update. On
    /// error the weights and optimizer state are left as they were.
    pub fn train_step_with_teacher(&mut self, batch: &TrainBatch, teacher: Option<&[Vec<f64>]>) -> Result<StepReport> {
        batch.validate(self.config.hard_negatives)?;
        let examples = sample_icl_examples(batch, self.config.mode, &mut self.rng)?;
        let prep = prepare_batch(
            batch,
            &examples,
            &self.model.budget,
            self.config.use_passage_prompt,
            &self.config.loss,
        )?;
        let lora = self.config.lora.is_some();
        let mut tape = Tape::new();
        let trainable = if lora { Trainable::Adapters } else { Trainable::Weights };
        let bound = BoundWeights::bind(&mut tape, &self.model.config, &self.model.weights, &self.model.adapters, trainable)?;
        let lv = batch_loss(&mut tape, &self.model.config, &bound.weights, &prep, &self.config.loss, teacher)?;
        let loss = tape.value(lv.total).item()? as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step + 1)));
        }
        tape.backward(lv.total)?;
        let grads: Vec<Tensor> = bound
            .params
            .iter()
            // Parameters the loss never reaches (the output head) get zeros.
            .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
            .collect();
        if lora {
            let mut params: Vec<&mut Tensor> = self.model.adapters.iter_mut().flat_map(|a| [&mut a.a, &mut a.b]).collect();
            self.adam.step(&mut params, &grads)?;
        } else {
            self.adam.step(&mut self.model.weights.tensors_mut(), &grads)?;
        }
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss,
            info_nce: tape.value(lv.info_nce).item()? as f64,
            distill: lv.distill.map(|d| tape.value(d).item()).transpose()?.map(|x| x as f64),
            shots: prep.shots,
            duplicate_negatives: prep.negatives.duplicate_negatives,
        })
    }

    /// Runs the configured number of steps on batches drawn from `data`,
    /// returning the loss curve.
    pub fn fit(&mut self, data: &Dataset, mut on_step: impl FnMut(&StepReport)) -> Result<Vec<f64>> {
        data.check(self.config.hard_negatives)?;
        let mut curve = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let batch = data.sample_batch(self.config.batch_size, self.config.hard_negatives, &mut self.rng)?;
            let report = self.train_step(&batch)?;
            on_step(&report);
            curve.push(report.loss);
        }
        Ok(curve)
    }
}
