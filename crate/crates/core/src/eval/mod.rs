//! Exact dense-retrieval evaluation.
//!
//! Documents are encoded once as passages, every query is rendered with the
//! same example block for its task, and rankings come from brute-force
//! cosine search. nDCG uses gain `2^rel - 1`; ties rank by ascending doc id.

pub mod metrics;
pub mod search;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use metrics::{ndcg_at_k, recall_at_k, QRels};
pub use search::{cosine, search_top_k, EncodedCorpus, Hit};

use crate::error::{Error, Result};
use crate::model::{AttentionMode, Model, PoolingMode};
use crate::prompting::{render_passage, render_query, ExampleRecord, TaskSpec};

/// A corpus document or a query: id plus text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

impl TextRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

fn check_unique(records: &[TextRecord], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    match records.iter().find(|r| !seen.insert(r.id.as_str())) {
        Some(r) => Err(Error::Data(format!("duplicate {what} id `{}`", r.id))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<TextRecord>,
}

impl Corpus {
    pub fn new(documents: Vec<TextRecord>) -> Result<Self> {
        check_unique(&documents, "document")?;
        Ok(Self { documents })
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.documents.iter().map(|d| d.id.as_str()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QuerySet {
    pub queries: Vec<TextRecord>,
}

impl QuerySet {
    pub fn new(queries: Vec<TextRecord>) -> Result<Self> {
        check_unique(&queries, "query")?;
        Ok(Self { queries })
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.queries.iter().map(|q| q.id.as_str()).collect()
    }
}

/// Encodes every document as a passage, in corpus order.
pub fn encode_corpus(corpus: &Corpus, model: &Model, use_passage_prompt: bool) -> Result<EncodedCorpus> {
    let mut rows = Vec::with_capacity(corpus.documents.len());
    for chunk in corpus.documents.chunks(64) {
        let prompts: Vec<_> = chunk.iter().map(|d| render_passage(&d.text, use_passage_prompt)).collect();
        match model.encode_batch(&prompts) {
            Ok(r) => rows.extend(r),
            Err(_) => {
                // Re-run one by one to name the failing document.
                for (d, p) in chunk.iter().zip(&prompts) {
                    rows.push(model.encode(p).map_err(|e| e.context(format!("document `{}`", d.id)))?);
                }
            }
        }
    }
    EncodedCorpus::new(corpus.documents.iter().map(|d| d.id.clone()).collect(), rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub ndcg: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub shot_count: usize,
    pub ks: Vec<usize>,
    pub attention_mode: AttentionMode,
    pub pooling_mode: PoolingMode,
    pub per_query: Vec<QueryMetrics>,
    pub mean_ndcg: Vec<f64>,
    pub mean_recall: Vec<f64>,
}

impl EvalReport {
    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mean_ndcg[i])
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mean_recall[i])
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "task {}  shots {}  queries {}",
            self.task,
            self.shot_count,
            self.per_query.len()
        )?;
        writeln!(f, "{:>6} {:>10} {:>10}", "k", "nDCG", "Recall")?;
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(f, "{k:>6} {:>10.4} {:>10.4}", self.mean_ndcg[i], self.mean_recall[i])?;
        }
        Ok(())
    }
}

/// The first `shots` evaluation examples of `task`, falling back to its
/// fixed examples.
pub fn task_examples(task: &TaskSpec, shots: usize) -> Result<&[ExampleRecord]> {
    let available = task
        .eval_examples
        .as_ref()
        .or(task.fixed_examples.as_ref())
        .map_or(&[][..], Vec::as_slice);
    if shots > available.len() {
        return Err(Error::config(format!(
            "{shots} shots requested but task `{}` has {} examples",
            task.name,
            available.len()
        )));
    }
    Ok(&available[..shots])
}

/// Evaluates one task. Queries are rendered with the task's evaluation
/// examples (falling back to its fixed examples) cut to `shots`.
pub fn evaluate_task(
    model: &Model,
    task: &TaskSpec,
    corpus: &EncodedCorpus,
    queries: &QuerySet,
    qrels: &QRels,
    shots: usize,
    ks: &[usize],
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::config("k list must be non-empty with every k >= 1"));
    }
    let examples = task_examples(task, shots)?;
    let doc_ids: HashSet<&str> = corpus.ids.iter().map(String::as_str).collect();
    qrels.validate(&queries.ids(), &doc_ids)?;

    let mut prompts = Vec::with_capacity(queries.queries.len());
    let mut shot_count = shots;
    for q in &queries.queries {
        let r = render_query(task, &q.text, examples, &model.budget)
            .map_err(|e| e.context(format!("query `{}`", q.id)))?;
        shot_count = shot_count.min(r.shot_count);
        prompts.push(r);
    }
    let embeddings = model.encode_batch(&prompts)?;
    let k_max = *ks.iter().max().expect("non-empty");
    let mut per_query = Vec::with_capacity(queries.queries.len());
    for (q, e) in queries.queries.iter().zip(&embeddings) {
        let ranking = search_top_k(e, corpus, k_max)?;
        let ctx = |e: Error| e.context(format!("query `{}`", q.id));
        per_query.push(QueryMetrics {
            query_id: q.id.clone(),
            ndcg: ks
                .iter()
                .map(|&k| ndcg_at_k(&ranking, qrels, &q.id, k))
                .collect::<Result<_>>()
                .map_err(ctx)?,
            recall: ks
                .iter()
                .map(|&k| recall_at_k(&ranking, qrels, &q.id, k))
                .collect::<Result<_>>()
                .map_err(ctx)?,
        });
    }
    per_query.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let n = per_query.len().max(1) as f64;
    let mean = |pick: fn(&QueryMetrics) -> &Vec<f64>| -> Vec<f64> {
        (0..ks.len())
            .map(|i| per_query.iter().map(|m| pick(m)[i]).sum::<f64>() / n)
            .collect()
    };
    Ok(EvalReport {
        task: task.name.clone(),
        shot_count,
        ks: ks.to_vec(),
        attention_mode: model.config.attention_mode,
        pooling_mode: model.config.pooling_mode,
        mean_ndcg: mean(|m| &m.ndcg),
        mean_recall: mean(|m| &m.recall),
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::prompting::TaskKind;

    fn model() -> Model {
        Model::new(
            ModelConfig {
                d_model: 16,
                n_layers: 1,
                n_heads: 2,
                max_len: 256,
                ..Default::default()
            },
            0,
        )
        .unwrap()
    }

    fn fixture() -> (Corpus, QuerySet, QRels) {
        let docs: Vec<_> = (0..6).map(|i| TextRecord::new(format!("d{i}"), format!("document {i}"))).collect();
        let queries: Vec<_> = (0..3).map(|i| TextRecord::new(format!("q{i}"), format!("document {i}"))).collect();
        let mut qrels = QRels::new();
        for i in 0..3 {
            qrels.insert(format!("q{i}"), format!("d{i}"), 1);
        }
        (Corpus::new(docs).unwrap(), QuerySet::new(queries).unwrap(), qrels)
    }

    #[test]
    fn encode_corpus_is_deterministic() {
        let m = model();
        let (c, _, _) = fixture();
        let a = encode_corpus(&c, &m, false).unwrap();
        assert_eq!(a, encode_corpus(&c, &m, false).unwrap());
        assert_eq!(a.len(), 6);
        assert_ne!(a.rows, encode_corpus(&c, &m, true).unwrap().rows);
        assert!(encode_corpus(&Corpus::default(), &m, false).unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let d = vec![TextRecord::new("x", "a"), TextRecord::new("x", "b")];
        assert!(Corpus::new(d.clone()).is_err());
        assert!(QuerySet::new(d).is_err());
    }

    #[test]
    fn shots_protocol() {
        let m = model();
        let (c, q, r) = fixture();
        let enc = encode_corpus(&c, &m, false).unwrap();
        let mut task = TaskSpec::new("t", "find the document", TaskKind::Retrieval);
        task.eval_examples = Some((0..3).map(|i| ExampleRecord::new(format!("e{i}"), format!("r{i}"))).collect());
        let zero = evaluate_task(&m, &task, &enc, &q, &r, 0, &[1, 10]).unwrap();
        let three = evaluate_task(&m, &task, &enc, &q, &r, 3, &[1, 10]).unwrap();
        assert_eq!(zero.shot_count, 0);
        assert_eq!(three.shot_count, 3);
        assert_eq!(zero.ks, three.ks);
        assert!(matches!(
            evaluate_task(&m, &task, &enc, &q, &r, 4, &[10]),
            Err(Error::Config(_))
        ));
        // Every query is judged against one relevant document among six.
        assert!(zero.recall_at(10).unwrap() == 1.0);
    }

    #[test]
    fn perfect_fixture_scores_one() {
        // Corpus embeddings planted so each query's own document is nearest.
        let m = model();
        let (_, q, r) = fixture();
        let prompts: Vec<_> = q
            .queries
            .iter()
            .map(|x| render_query(&TaskSpec::new("t", "d", TaskKind::Retrieval), &x.text, &[], &m.budget).unwrap())
            .collect();
        let mut rows = m.encode_batch(&prompts).unwrap();
        let mut ids: Vec<String> = (0..3).map(|i| format!("d{i}")).collect();
        for i in 3..6 {
            ids.push(format!("d{i}"));
            rows.push(rows[i - 3].iter().map(|v| -v).collect());
        }
        let enc = EncodedCorpus::new(ids, rows).unwrap();
        let task = TaskSpec::new("t", "d", TaskKind::Retrieval);
        let rep = evaluate_task(&m, &task, &enc, &q, &r, 0, &[10]).unwrap();
        assert_eq!(rep.ndcg_at(10), Some(1.0));
        assert_eq!(rep.recall_at(10), Some(1.0));
        assert!(rep.to_string().contains("nDCG"));
    }

    #[test]
    fn unknown_qrels_ids_rejected() {
        let m = model();
        let (c, q, mut r) = fixture();
        r.insert("q0", "missing", 1);
        let enc = encode_corpus(&c, &m, false).unwrap();
        let task = TaskSpec::new("t", "d", TaskKind::Retrieval);
        assert!(matches!(evaluate_task(&m, &task, &enc, &q, &r, 0, &[10]), Err(Error::Data(_))));
    }
}
