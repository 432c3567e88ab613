//! Temperature-scaled cosine scores, InfoNCE and score distillation.
//!
//! Every function exists twice: a plain `f64` evaluation for reporting and
//! oracles, and a tape form that training differentiates.

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tape, Tensor, Var};

/// Temperature used throughout contrastive training.
pub const DEFAULT_TAU: f64 = 0.02;

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// `cos(h_q, h_p) / tau`.
pub fn score(h_q: &[f32], h_p: &[f32], tau: f64) -> Result<f64> {
    if h_q.len() != h_p.len() {
        return Err(Error::shape(format!(
            "embedding widths {} and {} differ",
            h_q.len(),
            h_p.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::config("tau must be positive"));
    }
    let (nq, np) = (norm(h_q), norm(h_p));
    if nq == 0.0 || np == 0.0 {
        return Err(Error::DegenerateEmbedding("zero vector in score".into()));
    }
    let dot: f64 = h_q.iter().zip(h_p).map(|(&a, &b)| a as f64 * b as f64).sum();
    Ok(dot / (nq * np) / tau)
}

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean over queries of `logsumexp(s+, s-...) - s+`.
pub fn info_nce(scores_pos: &[f64], scores_neg: &[Vec<f64>]) -> Result<f64> {
    if scores_pos.len() != scores_neg.len() {
        return Err(Error::shape("positive and negative score lists differ in length"));
    }
    if scores_pos.is_empty() {
        return Err(Error::EmptyInput("no queries".into()));
    }
    let finite = scores_pos
        .iter()
        .chain(scores_neg.iter().flatten())
        .all(|s| s.is_finite());
    if !finite {
        return Err(Error::NonFinite("info_nce scores".into()));
    }
    let total: f64 = scores_pos
        .iter()
        .zip(scores_neg)
        .map(|(&p, negs)| lse(std::iter::once(p).chain(negs.iter().copied())) - p)
        .sum();
    Ok(total / scores_pos.len() as f64)
}

fn softmax_t(xs: &[f64], t: f64) -> Vec<f64> {
    let scaled: Vec<f64> = xs.iter().map(|x| x / t).collect();
    let z = lse(scaled.iter().copied());
    scaled.iter().map(|x| (x - z).exp()).collect()
}

/// Mean over queries of `KL(softmax(teacher / T) || softmax(student / T))`.
pub fn distill_loss(teacher: &[Vec<f64>], student: &[Vec<f64>], temperature: f64) -> Result<f64> {
    if teacher.len() != student.len() || teacher.iter().zip(student).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("teacher and student score shapes differ"));
    }
    if teacher.is_empty() {
        return Err(Error::EmptyInput("no queries".into()));
    }
    if teacher.iter().any(|r| r.len() < 2) {
        return Err(Error::contract("distillation needs at least two candidates per query"));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("distillation temperature must be positive"));
    }
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        let pt = softmax_t(t, temperature);
        let ps = softmax_t(s, temperature);
        total += pt
            .iter()
            .zip(&ps)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &q)| p * (p.ln() - q.ln()))
            .sum::<f64>();
    }
    Ok(total / teacher.len() as f64)
}

/// Cosine score matrix `[q x p]` divided by `tau`. Rows are normalised here,
/// so inputs need not be unit length.
pub fn score_matrix<T: Scalar>(tape: &mut Tape<T>, q: Var, p: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::config("tau must be positive"));
    }
    let qn = tape.normalize_rows(q)?;
    let pn = tape.normalize_rows(p)?;
    let cos = tape.matmul_t(qn, pn)?;
    tape.scale(cos, T::of(1.0 / tau))
}

/// Candidate lists for one batch: row `i` of the score matrix is scored
/// against `positives[i]` and every column in `negatives[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSets {
    pub positives: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl CandidateSets {
    /// Column indices with the positive first.
    pub fn row(&self, i: usize) -> Vec<usize> {
        std::iter::once(self.positives[i])
            .chain(self.negatives[i].iter().copied())
            .collect()
    }

    /// Plain score lists pulled out of a score matrix.
    pub fn split_scores(&self, s: &Tensor<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let pos = self.positives.iter().enumerate().map(|(i, &c)| s.row(i)[c]).collect();
        let neg = self
            .negatives
            .iter()
            .enumerate()
            .map(|(i, cols)| cols.iter().map(|&c| s.row(i)[c]).collect())
            .collect();
        (pos, neg)
    }
}

/// InfoNCE over a score matrix on the tape.
pub fn info_nce_tape<T: Scalar>(tape: &mut Tape<T>, scores: Var, cands: &CandidateSets) -> Result<Var> {
    let (rows, cols) = tape.value(scores).dims2();
    let n = cands.positives.len();
    if n == 0 || n > rows || cands.negatives.len() != n {
        return Err(Error::shape("candidate sets do not match the score matrix"));
    }
    let mut lses = Vec::with_capacity(n);
    let mut pos_idx = Vec::with_capacity(n);
    for i in 0..n {
        let idx: Vec<usize> = cands.row(i).into_iter().map(|c| i * cols + c).collect();
        pos_idx.push(idx[0]);
        let g = tape.gather(scores, &idx)?;
        lses.push(tape.logsumexp_rows(g)?);
    }
    let lse_all = tape.concat_rows(&lses)?;
    let lse_sum = tape.sum(lse_all)?;
    let pos = tape.gather(scores, &pos_idx)?;
    let pos_sum = tape.sum(pos)?;
    let diff = tape.sub(lse_sum, pos_sum)?;
    tape.scale(diff, T::of(1.0 / n as f64))
}

/// Candidate score rows `[n x c]` (positive first) gathered from a score matrix.
pub fn candidate_rows<T: Scalar>(tape: &mut Tape<T>, scores: Var, cands: &CandidateSets) -> Result<Var> {
    let (_, cols) = tape.value(scores).dims2();
    let mut rows = Vec::with_capacity(cands.positives.len());
    for i in 0..cands.positives.len() {
        let idx: Vec<usize> = cands.row(i).into_iter().map(|c| i * cols + c).collect();
        rows.push(tape.gather(scores, &idx)?);
    }
    tape.concat_rows(&rows)
}

/// Mean row KL between softmax distributions of `teacher` and `student`
/// logits at temperature `t`. Gradients reach whichever input requires them.
pub fn kl_rows<T: Scalar>(tape: &mut Tape<T>, teacher: Var, student: Var, t: f64) -> Result<Var> {
    if tape.value(teacher).shape() != tape.value(student).shape() {
        return Err(Error::shape("teacher and student score shapes differ"));
    }
    let (rows, cols) = tape.value(teacher).dims2();
    if cols < 2 {
        return Err(Error::contract("distillation needs at least two candidates per query"));
    }
    if !(t > 0.0) {
        return Err(Error::config("distillation temperature must be positive"));
    }
    let inv = T::of(1.0 / t);
    let ts = tape.scale(teacher, inv)?;
    let ss = tape.scale(student, inv)?;
    let pt = tape.softmax_rows(ts)?;
    let lpt = tape.log_softmax_rows(ts)?;
    let lps = tape.log_softmax_rows(ss)?;
    let d = tape.sub(lpt, lps)?;
    let w = tape.mul(pt, d)?;
    let s = tape.sum(w)?;
    tape.scale(s, T::of(1.0 / rows as f64))
}
