//! Subcommands behind the `icle` binary. Each returns the text it would
//! print so the same code paths are testable in-process.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::{ModeName, RunConfig};
use super::files::{
    encode_embeddings, read_jsonl, read_qrels, read_records, read_registry, write_bytes, write_jsonl,
    write_loss_curve, RerankRecord,
};
use crate::error::{Error, Result};
use crate::eval::{encode_corpus, evaluate_task, search_top_k, task_examples, Corpus, QuerySet};
use crate::model::{AttentionMode, Model, PoolingMode};
use crate::prompting::{default_rerank_prompt, render_query, TaskKind, TaskSpec};
use crate::reranker::{flops_estimate, rerank_scores, RerankInput, RerankerConfig, MERGE_RATIOS};
use crate::training::{Dataset, DatasetRecord, Trainer};

#[derive(Debug, Parser)]
#[command(name = "icle", version, about = "In-context-learning embeddings: train, encode, search, evaluate, rerank")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an embedding model from a run config.
    Train(TrainArgs),
    /// Encode queries or passages to an embedding file.
    Encode(EncodeArgs),
    /// Rank a corpus for each query.
    Search(SearchArgs),
    /// nDCG@k and Recall@k against qrels.
    Eval(EvalArgs),
    /// Score (query, passage) pairs with the layerwise reranker.
    Rerank(RerankArgs),
    /// Relative cost of reranker compression settings.
    Flops(FlopsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Query,
    Passage,
}

/// Flags shared by commands that load a checkpoint.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Override the checkpoint's attention mode: causal or bidir.
    #[arg(long)]
    pub attention: Option<AttentionMode>,
    /// Override the checkpoint's pooling: last or mean.
    #[arg(long)]
    pub pooling: Option<PoolingMode>,
}

impl ModelArgs {
    pub fn load(&self) -> Result<Model> {
        let m = Checkpoint::load(&self.checkpoint)?.into_model()?;
        if self.attention.is_none() && self.pooling.is_none() {
            return Ok(m);
        }
        Ok(m.with_modes(
            self.attention.unwrap_or(m.config.attention_mode),
            self.pooling.unwrap_or(m.config.pooling_mode),
        ))
    }
}

/// Flags naming the task whose instruction and examples build queries.
#[derive(Debug, Args)]
pub struct TaskArgs {
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    /// In-context examples per query.
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
}

impl TaskArgs {
    fn resolve(&self) -> Result<TaskSpec> {
        let (Some(reg), Some(name)) = (&self.registry, &self.task) else {
            return Err(Error::config("queries need --registry and --task"));
        };
        read_registry(reg)?
            .into_iter()
            .find(|t| t.name == *name)
            .ok_or_else(|| Error::config(format!("task `{name}` not in registry {}", reg.display())))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub mode: Option<ModeName>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub nmax: Option<usize>,
    #[arg(long)]
    pub attention: Option<AttentionMode>,
    #[arg(long)]
    pub pooling: Option<PoolingMode>,
    #[arg(long)]
    pub passage_prompt: bool,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Checkpoint path (default: paths.checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    /// Also write the effective config in canonical form.
    #[arg(long)]
    pub save_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Records `{id, text}`, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub side: Side,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub passage_prompt: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub passage_prompt: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10])]
    pub k: Vec<usize>,
    #[arg(long)]
    pub passage_prompt: bool,
    /// Machine-readable report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Records `{query, passage, prompt?}`, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Exit layers to score at (default: the last layer).
    #[arg(long = "exit-layer", value_delimiter = ',')]
    pub exit_layers: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub merge_ratio: usize,
    #[arg(long, value_delimiter = ',')]
    pub merge_layers: Vec<usize>,
    /// Task kind whose default prompt fills records without one.
    #[arg(long, default_value = "retrieval")]
    pub task_kind: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Take model shape and reranker settings from a run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long, default_value_t = 512)]
    pub seq_len: usize,
    #[arg(long)]
    pub exit_layer: Option<usize>,
    #[arg(long)]
    pub merge_ratio: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub merge_layers: Option<Vec<usize>>,
    /// Report every exit layer and ratio for the given merge layers.
    #[arg(long)]
    pub grid: bool,
}

pub fn run(cmd: &Command) -> Result<String> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::Rerank(a) => rerank(a),
        Command::Flops(a) => flops(a),
    }
}

fn need<'a>(p: &'a Option<PathBuf>, fallback: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .or(fallback.as_deref())
        .ok_or_else(|| Error::config(format!("no {what} path given")))
}

pub fn train(a: &TrainArgs) -> Result<String> {
    let mut cfg = RunConfig::load(&a.config)?;
    let t = &mut cfg.train;
    t.steps = a.steps.unwrap_or(t.steps);
    t.mode = a.mode.unwrap_or(t.mode);
    t.tau = a.tau.unwrap_or(t.tau);
    t.n_max = a.nmax.unwrap_or(t.n_max);
    t.use_passage_prompt |= a.passage_prompt;
    cfg.model.attention_mode = a.attention.unwrap_or(cfg.model.attention_mode);
    cfg.model.pooling_mode = a.pooling.unwrap_or(cfg.model.pooling_mode);
    let seed = cfg.resolve_seed(a.seed)?;
    cfg.seed = Some(seed);
    cfg.validate()?;
    if let Some(p) = &a.save_config {
        cfg.save(p)?;
    }

    let tasks = read_registry(need(&a.registry, &cfg.paths.registry, "registry")?)?;
    let records: Vec<DatasetRecord> = read_jsonl(need(&a.dataset, &cfg.paths.dataset, "dataset")?)?;
    if let Some(r) = records.iter().find(|r| !tasks.iter().any(|t| t.name == r.task)) {
        return Err(Error::config(format!("dataset task `{}` has no registry entry", r.task)));
    }
    let data = Dataset::new(tasks, records)?;
    let model = Model::new(cfg.model.clone(), seed)?;
    let mut trainer = Trainer::new(model, cfg.train_config(seed)?)?;
    let curve = trainer.fit(&data, |_| {})?;

    let out = need(&a.out, &cfg.paths.checkpoint, "checkpoint")?;
    Checkpoint::from_model(&trainer.model, trainer.step, trainer.rng.state()).save(out)?;
    if let Some(p) = a.loss_curve.as_deref().or(cfg.paths.loss_curve.as_deref()) {
        write_loss_curve(p, &curve)?;
    }
    Ok(format!(
        "trained {} steps (seed {seed}); final loss {:.6}; checkpoint {}\n",
        curve.len(),
        curve.last().copied().unwrap_or(f64::NAN),
        out.display()
    ))
}

/// Embeds records in input order.
fn embed(model: &Model, records: &[crate::eval::TextRecord], side: Side, task: &TaskArgs, passage_prompt: bool) -> Result<Vec<Vec<f32>>> {
    match side {
        Side::Passage => Ok(encode_corpus(&Corpus::new(records.to_vec())?, model, passage_prompt)?.rows),
        Side::Query => {
            let spec = task.resolve()?;
            let ex = task_examples(&spec, task.shots)?;
            let prompts = records
                .iter()
                .map(|r| render_query(&spec, &r.text, ex, &model.budget).map_err(|e| e.context(format!("record `{}`", r.id))))
                .collect::<Result<Vec<_>>>()?;
            model.encode_batch(&prompts)
        }
    }
}

pub fn encode(a: &EncodeArgs) -> Result<String> {
    let model = a.model.load()?;
    let records = read_records(&a.input)?;
    let rows = embed(&model, &records, a.side, &a.task, a.passage_prompt)?;
    write_bytes(&a.out, &encode_embeddings(model.config.d_model, &rows)?)?;
    Ok(format!("encoded {} records to {}\n", rows.len(), a.out.display()))
}

#[derive(Serialize)]
struct SearchRecord<'a> {
    query_id: &'a str,
    rank: usize,
    doc_id: &'a str,
    score: f64,
}

pub fn search(a: &SearchArgs) -> Result<String> {
    let model = a.model.load()?;
    let corpus = Corpus::new(read_records(&a.corpus)?)?;
    let queries = QuerySet::new(read_records(&a.queries)?)?;
    let enc = encode_corpus(&corpus, &model, a.passage_prompt)?;
    let qv = embed(&model, &queries.queries, Side::Query, &a.task, false)?;
    let mut hits = Vec::new();
    for (q, v) in queries.queries.iter().zip(&qv) {
        hits.push((q, search_top_k(v, &enc, a.k)?));
    }
    let records: Vec<SearchRecord> = hits
        .iter()
        .flat_map(|(q, hs)| {
            hs.iter().enumerate().map(|(i, h)| SearchRecord {
                query_id: &q.id,
                rank: i + 1,
                doc_id: &h.doc_id,
                score: h.score,
            })
        })
        .collect();
    match &a.out {
        Some(p) => {
            write_jsonl(p, &records)?;
            Ok(format!("wrote {} hits to {}\n", records.len(), p.display()))
        }
        None => super::files::to_jsonl(&records),
    }
}

pub fn eval(a: &EvalArgs) -> Result<String> {
    let model = a.model.load()?;
    let spec = a.task.resolve()?;
    let corpus = Corpus::new(read_records(&a.corpus)?)?;
    let queries = QuerySet::new(read_records(&a.queries)?)?;
    let qrels = read_qrels(&a.qrels)?;
    let enc = encode_corpus(&corpus, &model, a.passage_prompt)?;
    let report = evaluate_task(&model, &spec, &enc, &queries, &qrels, a.task.shots, &a.k)?;
    if let Some(p) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
        write_bytes(p, json.as_bytes())?;
    }
    Ok(report.to_string())
}

pub fn rerank(a: &RerankArgs) -> Result<String> {
    let model = Checkpoint::load(&a.checkpoint)?.into_model()?;
    let kind: TaskKind = serde_json::from_value(serde_json::Value::String(a.task_kind.clone()))
        .map_err(|_| Error::config(format!("unknown task kind `{}`", a.task_kind)))?;
    let prompt = default_rerank_prompt(kind);
    let inputs: Vec<RerankInput> = read_jsonl(&a.input)?;
    let exits = if a.exit_layers.is_empty() {
        vec![model.config.n_layers]
    } else {
        a.exit_layers.clone()
    };
    let mut records = Vec::with_capacity(inputs.len() * exits.len());
    let mut per_exit = Vec::with_capacity(exits.len());
    for &e in &exits {
        let cfg = RerankerConfig {
            exit_layer: e,
            merge_ratio: a.merge_ratio,
            merge_layers: a.merge_layers.clone(),
        };
        per_exit.push(rerank_scores(&inputs, prompt, &cfg, &model)?);
    }
    for (i, r) in inputs.iter().enumerate() {
        for (k, &e) in exits.iter().enumerate() {
            records.push(RerankRecord {
                query: r.query.clone(),
                passage: r.passage.clone(),
                layer: e,
                score: per_exit[k][i],
            });
        }
    }
    match &a.out {
        Some(p) => {
            write_jsonl(p, &records)?;
            Ok(format!("wrote {} scores to {}\n", records.len(), p.display()))
        }
        None => super::files::to_jsonl(&records),
    }
}

pub fn flops(a: &FlopsArgs) -> Result<String> {
    let base = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let n_layers = a.n_layers.unwrap_or(base.model.n_layers);
    let d_model = a.d_model.unwrap_or(base.model.d_model);
    if a.seq_len == 0 || n_layers == 0 || d_model == 0 {
        return Err(Error::config("seq_len, n_layers and d_model must be positive"));
    }
    let from_cfg = base.reranker_config();
    let cfg = RerankerConfig {
        exit_layer: a.exit_layer.unwrap_or(if a.n_layers.is_some() { n_layers } else { from_cfg.exit_layer }),
        merge_ratio: a.merge_ratio.unwrap_or(from_cfg.merge_ratio),
        merge_layers: a.merge_layers.clone().unwrap_or(from_cfg.merge_layers),
    };
    cfg.validate(n_layers)?;
    let mut out = String::new();
    writeln!(out, "layers {n_layers}  d_model {d_model}  seq_len {}", a.seq_len).expect("string write");
    let mut line = |c: &RerankerConfig| {
        let cost = flops_estimate(c, n_layers, d_model, a.seq_len);
        writeln!(
            out,
            "exit {:>3}  ratio {}  merge {:?}  cost {cost:.3}  savings {:.3}",
            c.exit_layer,
            c.merge_ratio,
            c.merge_layers,
            1.0 - cost
        )
        .expect("string write");
    };
    if a.grid {
        for exit in 1..=n_layers {
            for r in MERGE_RATIOS {
                line(&RerankerConfig {
                    exit_layer: exit,
                    merge_ratio: r,
                    merge_layers: cfg.merge_layers.clone(),
                });
            }
        }
    } else {
        line(&cfg);
    }
    Ok(out)
}
