use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

/// Graded relevance judgments: query id -> doc id -> grade.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QRels {
    map: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QRels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, rel: u32) {
        self.map.entry(query_id.into()).or_default().insert(doc_id.into(), rel);
    }

    pub fn judgments(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.map.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Every referenced id must exist in its collection.
    pub fn validate(&self, query_ids: &HashSet<&str>, doc_ids: &HashSet<&str>) -> Result<()> {
        for (q, docs) in &self.map {
            if !query_ids.contains(q.as_str()) {
                return Err(Error::Data(format!("qrels reference unknown query `{q}`")));
            }
            if let Some(d) = docs.keys().find(|d| !doc_ids.contains(d.as_str())) {
                return Err(Error::Data(format!("qrels reference unknown document `{d}`")));
            }
        }
        Ok(())
    }

    fn for_query(&self, query_id: &str) -> Result<&BTreeMap<String, u32>> {
        self.map
            .get(query_id)
            .ok_or_else(|| Error::MissingQrels(query_id.to_string()))
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    Ok(())
}

fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    // 1-based rank
    (rank as f64 + 1.0).log2()
}

/// `DCG@k / IDCG@k` with gain `2^rel - 1`; zero when the ideal DCG is zero.
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], qrels: &QRels, query_id: &str, k: usize) -> Result<f64> {
    check_k(k)?;
    let judged = qrels.for_query(query_id)?;
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judged.get(d.as_ref()).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&r| r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain(r) / discount(i + 1))
        .sum();
    Ok(if idcg == 0.0 { 0.0 } else { dcg / idcg })
}

/// Share of relevant documents (grade > 0) found in the top `k`.
pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], qrels: &QRels, query_id: &str, k: usize) -> Result<f64> {
    check_k(k)?;
    let judged = qrels.for_query(query_id)?;
    let relevant = judged.values().filter(|&&r| r > 0).count();
    if relevant == 0 {
        return Err(Error::UndefinedMetric(format!(
            "recall for query `{query_id}` with no relevant documents"
        )));
    }
    let mut seen = HashSet::new();
    let mut hit = 0;
    for d in ranking.iter().take(k) {
        let d = d.as_ref();
        if seen.insert(d) && judged.get(d).is_some_and(|&r| r > 0) {
            hit += 1;
        }
    }
    Ok(hit as f64 / relevant as f64)
}
