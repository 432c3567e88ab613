//! Lightweight pair reranker with early exits and token merging.
//!
//! A (query, passage, prompt) triple is rendered as one causal input and
//! scored by the output-head row of the `Y` byte (the "Yes" logit) applied to
//! the final-normed state at the last position. The same row is read after
//! any block, which gives an exit at every layer. Width compression replaces
//! contiguous groups of states by their mean after chosen blocks.
//!
//! Training samples one width strategy per step, applies InfoNCE over each
//! query's candidates at every configured exit, and pulls earlier exits
//! toward the (detached) final exit with a KL term.

pub mod flops;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use flops::{config_macs, flops_estimate, layer_macs};

use crate::error::{Error, Result};
use crate::model::forward::{final_norm, forward_packed, BoundWeights, MergePlan, Trainable};
use crate::model::{AttentionMode, Model, ModelConfig, ModelWeights};
use crate::numcore::{Scalar, Tape, Tensor, Var};
use crate::prompting::tokenizer::{char_safe_cut, tokenize, TokenSeq, BOS};
use crate::prompting::{default_rerank_prompt, render_rerank_pair};
use crate::training::loss::{distill_loss, info_nce_tape, kl_rows, CandidateSets};
use crate::training::{Adam, AdamConfig, SeededRng, TrainBatch};

/// Byte whose output-head row scores relevance.
pub const YES_TOKEN: u32 = b'Y' as u32;
/// Supported merge ratios.
pub const MERGE_RATIOS: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankerConfig {
    /// 1-based block after which the score is read.
    pub exit_layer: usize,
    pub merge_ratio: usize,
    /// Blocks after which states are merged; entries at or past the exit
    /// have no effect.
    pub merge_layers: Vec<usize>,
}

impl RerankerConfig {
    /// Full depth, no merging.
    pub fn identity(n_layers: usize) -> Self {
        Self {
            exit_layer: n_layers,
            merge_ratio: 1,
            merge_layers: Vec::new(),
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.exit_layer == 0 || self.exit_layer > n_layers {
            return Err(Error::config(format!(
                "exit layer {} outside 1..={n_layers}",
                self.exit_layer
            )));
        }
        if !MERGE_RATIOS.contains(&self.merge_ratio) {
            return Err(Error::config(format!(
                "merge ratio {} not in {MERGE_RATIOS:?}",
                self.merge_ratio
            )));
        }
        if let Some(&l) = self.merge_layers.iter().find(|&&l| l == 0 || l > n_layers) {
            return Err(Error::config(format!("merge layer {l} outside 1..={n_layers}")));
        }
        Ok(())
    }

    pub fn merge_plan(&self) -> MergePlan {
        MergePlan {
            ratio: self.merge_ratio,
            after: self.merge_layers.clone(),
        }
    }
}

/// The extracted "Yes" row, shared by every exit.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoringHead {
    pub yes_row: Vec<f32>,
}

impl ScoringHead {
    pub fn extract(weights: &ModelWeights) -> Self {
        Self {
            yes_row: weights.head.row(YES_TOKEN as usize).to_vec(),
        }
    }

    /// `yes_row . h`, accumulated in `f64` in index order.
    pub fn score(&self, h: &[f32]) -> f64 {
        self.yes_row.iter().zip(h).map(|(&a, &b)| a as f64 * b as f64).sum()
    }
}

/// Means of contiguous groups of `ratio` rows; a short final group is kept.
pub fn merge_tokens<T: Scalar>(hidden: &Tensor<T>, ratio: usize) -> Result<Tensor<T>> {
    if ratio == 0 {
        return Err(Error::config("merge ratio must be positive"));
    }
    let (len, d) = hidden.dims2();
    if ratio == 1 {
        return Ok(hidden.clone());
    }
    let groups = crate::model::forward::merge_groups(len, ratio);
    let mut out = Vec::with_capacity(groups.len() * d);
    for g in &groups {
        let n = T::of(g.len() as f64);
        for j in 0..d {
            let s: T = g.clone().map(|i| hidden.row(i)[j]).sum();
            out.push(s / n);
        }
    }
    Tensor::new(vec![groups.len(), d], out)
}

/// One pair to score.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankInput {
    pub query: String,
    pub passage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

/// `[BOS]` plus the rendered pair, with the passage shortened when the
/// whole input would exceed `cap` tokens. No `[EOS]` is appended: the
/// score is read where the next token would be predicted.
pub fn rerank_tokens(q: &str, p: &str, prompt: &str, cap: usize) -> Result<TokenSeq> {
    let text = render_rerank_pair(q, p, prompt).text;
    let mut ids = vec![BOS];
    ids.extend(tokenize(&text).ids);
    if ids.len() <= cap {
        return Ok(TokenSeq::new(ids));
    }
    let passage = tokenize(p).ids;
    let over = ids.len() - cap;
    if over > passage.len() {
        return Err(Error::Budget {
            cap,
            skeleton: ids.len() - passage.len(),
        });
    }
    let keep = char_safe_cut(&passage, passage.len() - over);
    let bytes: Vec<u8> = passage[..keep].iter().map(|&t| t as u8).collect();
    let cut = String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))?;
    let mut ids = vec![BOS];
    ids.extend(tokenize(&render_rerank_pair(q, &cut, prompt).text).ids);
    Ok(TokenSeq::new(ids))
}

fn check_model(cfg: &ModelConfig) -> Result<()> {
    if cfg.attention_mode != AttentionMode::Causal {
        return Err(Error::config("reranking needs causal attention"));
    }
    Ok(())
}

fn input_cap(model: &Model) -> usize {
    model.budget.passage_side.min(model.config.max_len)
}

/// Score columns `[n x 1]`, one per requested exit.
fn exit_scores<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &BoundWeights,
    seqs: &[TokenSeq],
    exits: &[usize],
    merge: Option<&MergePlan>,
) -> Result<Vec<Var>> {
    let depth = *exits.iter().max().ok_or_else(|| Error::config("no exit layers"))?;
    let trace = forward_packed(tape, cfg, w, seqs, depth, merge)?;
    let yes = tape.rows(w.head, YES_TOKEN as usize..YES_TOKEN as usize + 1)?;
    let mut out = Vec::with_capacity(exits.len());
    for &e in exits {
        let state = trace.states[e - 1];
        let lasts = trace.layouts[e - 1]
            .spans
            .iter()
            .map(|s| tape.rows(state, s.end - 1..s.end))
            .collect::<Result<Vec<_>>>()?;
        let h = if lasts.len() == 1 { lasts[0] } else { tape.concat_rows(&lasts)? };
        let h = final_norm(tape, w, h)?;
        out.push(tape.matmul_t(h, yes)?);
    }
    Ok(out)
}

fn check_exits(exits: &[usize], n_layers: usize) -> Result<()> {
    if exits.is_empty() {
        return Err(Error::config("exit layer list is empty"));
    }
    if exits.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("exit layers must be strictly ascending"));
    }
    if exits[0] == 0 || *exits.last().expect("non-empty") > n_layers {
        return Err(Error::config(format!("exit layers must lie in 1..={n_layers}")));
    }
    Ok(())
}

/// Scores token sequences at each exit: result `[exit][sequence]`.
pub fn score_tokens(model: &Model, seqs: &[TokenSeq], exits: &[usize], merge: Option<&MergePlan>) -> Result<Vec<Vec<f64>>> {
    check_model(&model.config)?;
    check_exits(exits, model.config.n_layers)?;
    let head = ScoringHead::extract(&model.weights);
    let mut out = vec![Vec::with_capacity(seqs.len()); exits.len()];
    for chunk in seqs.chunks(32) {
        let mut tape = Tape::<f32>::new();
        let b = BoundWeights::bind(&mut tape, &model.config, &model.weights, &model.adapters, Trainable::Nothing)?;
        let depth = *exits.last().expect("checked");
        let trace = forward_packed(&mut tape, &model.config, &b.weights, chunk, depth, merge)?;
        for (k, &e) in exits.iter().enumerate() {
            let state = trace.states[e - 1];
            for span in &trace.layouts[e - 1].spans {
                let last = tape.rows(state, span.end - 1..span.end)?;
                let h = final_norm(&mut tape, &b.weights, last)?;
                out[k].push(head.score(tape.value(h).data()));
            }
        }
    }
    Ok(out)
}

/// Relevance score of `p` for `q` under `cfg`.
pub fn rerank_score(q: &str, p: &str, prompt: &str, cfg: &RerankerConfig, model: &Model) -> Result<f64> {
    cfg.validate(model.config.n_layers)?;
    let seq = rerank_tokens(q, p, prompt, input_cap(model))?;
    let s = score_tokens(model, &[seq], &[cfg.exit_layer], Some(&cfg.merge_plan()))?;
    Ok(s[0][0])
}

/// Scores many pairs under one configuration.
pub fn rerank_scores(inputs: &[RerankInput], default_prompt: &str, cfg: &RerankerConfig, model: &Model) -> Result<Vec<f64>> {
    cfg.validate(model.config.n_layers)?;
    let cap = input_cap(model);
    let seqs = inputs
        .iter()
        .map(|r| rerank_tokens(&r.query, &r.passage, r.prompt.as_deref().unwrap_or(default_prompt), cap))
        .collect::<Result<Vec<_>>>()?;
    Ok(score_tokens(model, &seqs, &[cfg.exit_layer], Some(&cfg.merge_plan()))?.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: usize,
    pub score: f64,
}

/// Scores at every listed exit from one forward pass without merging.
pub fn layerwise_scores(q: &str, p: &str, prompt: &str, model: &Model, exit_layers: &[usize]) -> Result<Vec<LayerScore>> {
    let seq = rerank_tokens(q, p, prompt, input_cap(model))?;
    let s = score_tokens(model, &[seq], exit_layers, None)?;
    Ok(exit_layers
        .iter()
        .zip(s)
        .map(|(&layer, v)| LayerScore { layer, score: v[0] })
        .collect())
}

/// Mean over early layers of `KL(softmax(final / T) || softmax(layer / T))`,
/// each over per-query candidate sets.
pub fn self_distill_loss(per_layer: &[Vec<Vec<f64>>], final_scores: &[Vec<f64>], temperature: f64) -> Result<f64> {
    if per_layer.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for layer in per_layer {
        total += distill_loss(final_scores, layer, temperature)?;
    }
    Ok(total / per_layer.len() as f64)
}

/// Width strategy: merge by `ratio` after block `layer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WidthStrategy {
    pub ratio: usize,
    pub layer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankTrainConfig {
    pub batch_size: usize,
    pub hard_negatives: usize,
    /// Exits trained each step, ascending; the last one is the teacher.
    pub exits: Vec<usize>,
    pub ratios: Vec<usize>,
    pub merge_layers: Vec<usize>,
    pub self_distill: bool,
    pub distill_temperature: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Overrides the task-kind default prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl Default for RerankTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            hard_negatives: 3,
            exits: vec![2, 4, 6],
            ratios: MERGE_RATIOS.to_vec(),
            merge_layers: vec![2, 4],
            self_distill: true,
            distill_temperature: 1.0,
            adam: AdamConfig::default(),
            seed: 0,
            prompt: None,
        }
    }
}

impl RerankTrainConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        check_exits(&self.exits, n_layers)?;
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !MERGE_RATIOS.contains(r)) {
            return Err(Error::config(format!("ratios must be drawn from {MERGE_RATIOS:?}")));
        }
        if self.merge_layers.iter().any(|&l| l == 0 || l > n_layers) {
            return Err(Error::config("merge layer out of range"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.distill_temperature > 0.0) {
            return Err(Error::config("distillation temperature must be positive"));
        }
        self.adam.validate()
    }

    /// Every (ratio, merge layer) combination; ratio 1 alone when no merge
    /// layers are configured.
    pub fn width_grid(&self) -> Vec<WidthStrategy> {
        if self.merge_layers.is_empty() {
            return vec![WidthStrategy { ratio: 1, layer: 0 }];
        }
        self.ratios
            .iter()
            .flat_map(|&ratio| self.merge_layers.iter().map(move |&layer| WidthStrategy { ratio, layer }))
            .collect()
    }
}

pub fn sample_width_strategy<R: Rng + ?Sized>(grid: &[WidthStrategy], rng: &mut R) -> Result<WidthStrategy> {
    grid.choose(rng).copied().ok_or_else(|| Error::config("empty width grid"))
}

/// Candidate inputs for a batch: each query against its positive then its
/// hard negatives.
pub fn batch_inputs(batch: &TrainBatch, prompt: &str, cap: usize) -> Result<Vec<TokenSeq>> {
    let mut seqs = Vec::new();
    for p in &batch.pairs {
        seqs.push(rerank_tokens(&p.query, &p.positive, prompt, cap)?);
        for n in &p.hard_negatives {
            seqs.push(rerank_tokens(&p.query, n, prompt, cap)?);
        }
    }
    Ok(seqs)
}

/// Per-exit candidate scores `[exit][query][candidate]` for a batch.
pub fn batch_scores(model: &Model, batch: &TrainBatch, prompt: &str, exits: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
    let seqs = batch_inputs(batch, prompt, input_cap(model))?;
    let flat = score_tokens(model, &seqs, exits, None)?;
    let c = 1 + batch.pairs[0].hard_negatives.len();
    Ok(flat.into_iter().map(|s| s.chunks(c).map(<[f64]>::to_vec).collect()).collect())
}

/// Share of (positive, hard negative) comparisons the scores get right.
pub fn pairwise_accuracy(scores: &[Vec<f64>]) -> f64 {
    let mut right = 0usize;
    let mut total = 0usize;
    for row in scores {
        for &n in &row[1..] {
            total += 1;
            right += (row[0] > n) as usize;
        }
    }
    if total == 0 {
        0.0
    } else {
        right as f64 / total as f64
    }
}

/// Loss terms of one reranker step.
pub struct RerankLoss {
    pub total: Var,
    /// InfoNCE per configured exit.
    pub exits: Vec<Var>,
    pub distill: Option<Var>,
}

/// Builds the training loss for `b` queries whose candidates (positive
/// first) are laid out contiguously in `seqs`.
pub fn rerank_loss<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &BoundWeights,
    seqs: &[TokenSeq],
    b: usize,
    train: &RerankTrainConfig,
    plan: &MergePlan,
) -> Result<RerankLoss> {
    if b == 0 || seqs.len() % b != 0 {
        return Err(Error::shape("candidate inputs do not split evenly across queries"));
    }
    let c = seqs.len() / b;
    let cands = CandidateSets {
        positives: vec![0; b],
        negatives: vec![(1..c).collect(); b],
    };
    let columns = exit_scores(tape, cfg, w, seqs, &train.exits, Some(plan))?;
    let mut mats = Vec::with_capacity(columns.len());
    for col in columns {
        let rows = (0..b)
            .map(|i| tape.gather(col, &(i * c..(i + 1) * c).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        mats.push(tape.concat_rows(&rows)?);
    }
    let mut exits = Vec::with_capacity(mats.len());
    let mut total: Option<Var> = None;
    for &m in &mats {
        let l = info_nce_tape(tape, m, &cands)?;
        exits.push(l);
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let mut total = total.expect("at least one exit");
    let mut distill = None;
    if train.self_distill && mats.len() > 1 {
        let teacher = tape.detach(*mats.last().expect("non-empty"));
        let mut sum: Option<Var> = None;
        for &m in &mats[..mats.len() - 1] {
            let kl = kl_rows(tape, teacher, m, train.distill_temperature)?;
            sum = Some(match sum {
                Some(s) => tape.add(s, kl)?,
                None => kl,
            });
        }
        let d = tape.scale(sum.expect("early exits"), T::of(1.0 / (mats.len() - 1) as f64))?;
        total = tape.add(total, d)?;
        distill = Some(d);
    }
    Ok(RerankLoss { total, exits, distill })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankStepReport {
    pub step: u64,
    pub loss: f64,
    pub exit_losses: Vec<(usize, f64)>,
    pub distill: Option<f64>,
    pub strategy: WidthStrategy,
}

pub struct RerankTrainer {
    pub model: Model,
    pub config: RerankTrainConfig,
    pub adam: Adam,
    pub rng: SeededRng,
    pub step: u64,
}

impl RerankTrainer {
    pub fn new(model: Model, config: RerankTrainConfig) -> Result<Self> {
        check_model(&model.config)?;
        config.validate(model.config.n_layers)?;
        Ok(Self {
            adam: Adam::new(config.adam),
            rng: SeededRng::new(config.seed),
            model,
            config,
            step: 0,
        })
    }

    pub fn prompt_for(&self, batch: &TrainBatch) -> String {
        self.config
            .prompt
            .clone()
            .unwrap_or_else(|| default_rerank_prompt(batch.task.task_kind).to_string())
    }

    /// One update with a freshly sampled width strategy.
    pub fn train_step(&mut self, batch: &TrainBatch) -> Result<RerankStepReport> {
        let strategy = sample_width_strategy(&self.config.width_grid(), &mut self.rng)?;
        self.train_step_with(batch, strategy)
    }

    pub fn train_step_with(&mut self, batch: &TrainBatch, strategy: WidthStrategy) -> Result<RerankStepReport> {
        batch.validate(self.config.hard_negatives)?;
        let prompt = self.prompt_for(batch);
        let seqs = batch_inputs(batch, &prompt, input_cap(&self.model))?;
        let b = batch.pairs.len();
        let plan = MergePlan {
            ratio: strategy.ratio,
            after: vec![strategy.layer],
        };

        let mut tape = Tape::<f32>::new();
        let cfg = &self.model.config;
        let bound = BoundWeights::bind(&mut tape, cfg, &self.model.weights, &[], Trainable::Weights)?;
        let RerankLoss {
            total,
            exits: exit_losses,
            distill,
        } = rerank_loss(&mut tape, cfg, &bound.weights, &seqs, b, &self.config, &plan)?;
        let loss = tape.value(total).item()? as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("rerank loss at step {}", self.step + 1)));
        }
        tape.backward(total)?;
        let grads: Vec<Tensor> = bound
            .params
            .iter()
            .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
            .collect();
        self.adam.step(&mut self.model.weights.tensors_mut(), &grads)?;
        self.step += 1;
        Ok(RerankStepReport {
            step: self.step,
            loss,
            exit_losses: self
                .config
                .exits
                .iter()
                .zip(exit_losses)
                .map(|(&e, v)| Ok((e, tape.value(v).item()? as f64)))
                .collect::<Result<_>>()?,
            distill: distill.map(|d| tape.value(d).item()).transpose()?.map(f64::from),
            strategy,
        })
    }
}
