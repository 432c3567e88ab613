use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoded corpus: ids aligned with embedding rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedCorpus {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f32>>,
}

impl EncodedCorpus {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f32>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::shape(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                rows.len()
            )));
        }
        if let Some(w) = rows.first().map(Vec::len) {
            if rows.iter().any(|r| r.len() != w) {
                return Err(Error::shape("embedding rows differ in width"));
            }
        }
        Ok(Self { ids, rows })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

impl AsRef<str> for Hit {
    fn as_ref(&self) -> &str {
        &self.doc_id
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Exact cosine between two vectors, computed in `f64`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding("zero vector in cosine".into()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() / (na * nb))
}

/// Best first; equal scores fall back to ascending doc id.
fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Exact top-`k` documents by cosine similarity.
pub fn search_top_k(query: &[f32], corpus: &EncodedCorpus, k: usize) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if corpus.is_empty() {
        return Ok(Vec::new());
    }
    if corpus.dim() != Some(query.len()) {
        return Err(Error::shape("query width differs from corpus embeddings"));
    }
    let mut hits = corpus
        .ids
        .iter()
        .zip(&corpus.rows)
        .map(|(id, row)| {
            Ok(Hit {
                doc_id: id.clone(),
                score: cosine(query, row)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = k.min(hits.len());
    if k < hits.len() {
        hits.select_nth_unstable_by(k - 1, rank_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(rank_order);
    Ok(hits)
}
