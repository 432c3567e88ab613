//! Tape-level transformer forward over a packed batch of sequences.
//!
//! Sequences are stacked along the row axis so every projection runs as one
//! matrix product; attention is computed per sequence and per head from
//! row/column slices, so sequences never see each other.

use std::ops::Range;

use super::config::{ModelConfig, PoolingMode};
use super::mask::build_mask;
use super::weights::{parameter_shapes, LoraAdapter, ModelWeights};
use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tape, Tensor, Var, NORM_EPS};
use crate::prompting::tokenizer::{TokenSeq, EOS};

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub attn_norm: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub mlp_norm: Var,
    pub w_up: Var,
    pub w_down: Var,
}

/// Model weights placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundWeights {
    pub tok_emb: Var,
    pub layers: Vec<BoundLayer>,
    pub final_norm: Var,
    pub head: Var,
}

/// Which leaves of a binding receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    Weights,
    Adapters,
}

pub struct Binding {
    pub weights: BoundWeights,
    /// Trainable leaves: weight tensors in canonical order, or each
    /// adapter's `A` then `B` in adapter order.
    pub params: Vec<Var>,
}

impl BoundWeights {
    /// Builds from vars in canonical parameter order.
    pub fn from_vars(cfg: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let expected = parameter_shapes(cfg).len();
        if vars.len() != expected {
            return Err(Error::shape(format!(
                "{} vars for {expected} parameters",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("count checked");
        let tok_emb = next();
        let layers = (0..cfg.n_layers)
            .map(|_| BoundLayer {
                attn_norm: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                mlp_norm: next(),
                w_up: next(),
                w_down: next(),
            })
            .collect();
        Ok(Self {
            tok_emb,
            layers,
            final_norm: next(),
            head: next(),
        })
    }

    pub fn bind<T: Scalar>(
        tape: &mut Tape<T>,
        cfg: &ModelConfig,
        weights: &ModelWeights<T>,
        adapters: &[LoraAdapter<T>],
        trainable: Trainable,
    ) -> Result<Binding> {
        weights.check(cfg)?;
        let train_w = trainable == Trainable::Weights;
        let vars: Vec<Var> = weights
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), train_w))
            .collect();
        let mut binding =
            Self::bind_vars(tape, cfg, vars.clone(), adapters, trainable == Trainable::Adapters)?;
        if train_w {
            binding.params = vars;
        }
        Ok(binding)
    }

    /// Applies `adapters` on top of already-bound weight vars.
    pub fn bind_vars<T: Scalar>(
        tape: &mut Tape<T>,
        cfg: &ModelConfig,
        mut vars: Vec<Var>,
        adapters: &[LoraAdapter<T>],
        train_adapters: bool,
    ) -> Result<Binding> {
        let names: Vec<String> = parameter_shapes(cfg).into_iter().map(|(n, _)| n).collect();
        let mut params = Vec::new();
        for ad in adapters {
            let idx = names
                .iter()
                .position(|n| *n == ad.target && n.starts_with("layers.") && !n.ends_with("norm"))
                .ok_or_else(|| Error::config(format!("unknown adapter target `{}`", ad.target)))?;
            let (out, inp) = tape.value(vars[idx]).dims2();
            if ad.a.shape() != [ad.rank, inp] || ad.b.shape() != [out, ad.rank] {
                return Err(Error::shape(format!(
                    "adapter `{}` does not fit a {out}x{inp} weight at rank {}",
                    ad.target, ad.rank
                )));
            }
            let a = tape.leaf(ad.a.clone(), train_adapters);
            let b = tape.leaf(ad.b.clone(), train_adapters);
            let ba = tape.matmul(b, a)?;
            let delta = tape.scale(ba, T::of(ad.scaling()))?;
            vars[idx] = tape.add(vars[idx], delta)?;
            if train_adapters {
                params.extend([a, b]);
            }
        }
        Ok(Binding {
            weights: Self::from_vars(cfg, &vars)?,
            params,
        })
    }
}

/// Row spans of each packed sequence with their padding flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub spans: Vec<Range<usize>>,
    pub pads: Vec<Vec<bool>>,
}

impl Layout {
    fn of(seqs: &[TokenSeq]) -> Self {
        let mut spans = Vec::with_capacity(seqs.len());
        let mut at = 0;
        for s in seqs {
            spans.push(at..at + s.len());
            at += s.len();
        }
        Self {
            spans,
            pads: seqs.iter().map(|s| s.pad_mask.clone()).collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }
}

/// Token merging schedule: after each block listed in `after` (1-based),
/// contiguous groups of `ratio` states are replaced by their mean.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergePlan {
    pub ratio: usize,
    pub after: Vec<usize>,
}

/// Residual stream after every block that ran (before any merge applied
/// after that block), with the layout it has.
pub struct Trace {
    pub states: Vec<Var>,
    pub layouts: Vec<Layout>,
}

pub fn check_tokens(cfg: &ModelConfig, seq: &TokenSeq) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("empty token sequence".into()));
    }
    if seq.len() > cfg.max_len {
        return Err(Error::Length {
            len: seq.len(),
            max_len: cfg.max_len,
        });
    }
    if seq.pad_mask.len() != seq.len() {
        return Err(Error::shape("pad mask length differs from ids"));
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::Vocab {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Amplitude of the position signal, on the scale of initial token embeddings.
pub const POSITION_SCALE: f64 = 0.02;

/// Fixed sinusoidal encoding for position `pos`, written into `out`.
fn sinusoid<T: Scalar>(pos: usize, out: &mut [T]) {
    let d = out.len();
    for (i, v) in out.iter_mut().enumerate() {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        *v = T::of(POSITION_SCALE * if i % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}

/// Runs the first `depth` blocks over `seqs` packed into one matrix.
pub fn forward_packed<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &BoundWeights,
    seqs: &[TokenSeq],
    depth: usize,
    merge: Option<&MergePlan>,
) -> Result<Trace> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput("no sequences to encode".into()));
    }
    if depth == 0 || depth > cfg.n_layers {
        return Err(Error::config(format!(
            "depth {depth} outside 1..={}",
            cfg.n_layers
        )));
    }
    for s in seqs {
        check_tokens(cfg, s)?;
    }
    let d = cfg.d_model;
    let mut layout = Layout::of(seqs);
    let ids: Vec<usize> = seqs.iter().flat_map(|s| s.ids.iter().map(|&i| i as usize)).collect();
    let emb = tape.gather_rows(w.tok_emb, &ids)?;
    let mut pe = vec![T::zero(); ids.len() * d];
    for span in &layout.spans {
        for (p, row) in span.clone().enumerate() {
            sinusoid(p, &mut pe[row * d..(row + 1) * d]);
        }
    }
    let pe = tape.constant(Tensor::new(vec![ids.len(), d], pe)?);
    let mut x = tape.add(emb, pe)?;

    let mut trace = Trace {
        states: Vec::with_capacity(depth),
        layouts: Vec::with_capacity(depth),
    };
    for (li, layer) in w.layers.iter().take(depth).enumerate() {
        x = block(tape, cfg, layer, x, &layout)?;
        // Exits read the block output; merging only shapes later blocks.
        trace.states.push(x);
        trace.layouts.push(layout.clone());
        if let Some(plan) = merge {
            if plan.ratio > 1 && plan.after.contains(&(li + 1)) && li + 1 < depth {
                let (merged, next) = merge_packed(tape, x, &layout, plan.ratio)?;
                x = merged;
                layout = next;
            }
        }
    }
    Ok(trace)
}

fn block<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    l: &BoundLayer,
    x: Var,
    layout: &Layout,
) -> Result<Var> {
    let eps = T::of(NORM_EPS);
    let dh = cfg.head_dim();
    let inv = T::of(1.0 / (dh as f64).sqrt());

    let h = tape.rmsnorm(x, l.attn_norm, eps)?;
    let q = tape.matmul_t(h, l.wq)?;
    let k = tape.matmul_t(h, l.wk)?;
    let v = tape.matmul_t(h, l.wv)?;
    let mut per_seq = Vec::with_capacity(layout.spans.len());
    for (span, pad) in layout.spans.iter().zip(&layout.pads) {
        let mask = build_mask(span.len(), pad, cfg.attention_mode);
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for hd in 0..cfg.n_heads {
            let cols = hd * dh..(hd + 1) * dh;
            let qh = tape.block(q, span.clone(), cols.clone())?;
            let kh = tape.block(k, span.clone(), cols.clone())?;
            let vh = tape.block(v, span.clone(), cols)?;
            let s = tape.matmul_t(qh, kh)?;
            let s = tape.scale(s, inv)?;
            let p = tape.masked_softmax_rows(s, &mask.allow)?;
            heads.push(tape.matmul(p, vh)?);
        }
        per_seq.push(tape.concat_cols(&heads)?);
    }
    let attn = tape.concat_rows(&per_seq)?;
    let attn = tape.matmul_t(attn, l.wo)?;
    let x = tape.add(x, attn)?;

    let h = tape.rmsnorm(x, l.mlp_norm, eps)?;
    let u = tape.matmul_t(h, l.w_up)?;
    let u = tape.quick_gelu(u)?;
    let m = tape.matmul_t(u, l.w_down)?;
    tape.add(x, m)
}

/// Group boundaries for merging `len` states by `ratio`; a short final
/// group keeps whatever remains.
pub fn merge_groups(len: usize, ratio: usize) -> Vec<Range<usize>> {
    let r = ratio.max(1);
    (0..len.div_ceil(r)).map(|g| g * r..((g + 1) * r).min(len)).collect()
}

fn merge_packed<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    layout: &Layout,
    ratio: usize,
) -> Result<(Var, Layout)> {
    let mut parts = Vec::new();
    let mut spans = Vec::with_capacity(layout.spans.len());
    let mut pads = Vec::with_capacity(layout.spans.len());
    let mut at = 0;
    for (span, pad) in layout.spans.iter().zip(&layout.pads) {
        let groups = merge_groups(span.len(), ratio);
        let mut merged_pad = Vec::with_capacity(groups.len());
        for g in &groups {
            let rows = tape.rows(x, span.start + g.start..span.start + g.end)?;
            parts.push(tape.mean_rows(rows)?);
            merged_pad.push(pad[g.clone()].iter().all(|&p| p));
        }
        spans.push(at..at + groups.len());
        at += groups.len();
        pads.push(merged_pad);
    }
    Ok((tape.concat_rows(&parts)?, Layout { spans, pads }))
}

pub fn final_norm<T: Scalar>(tape: &mut Tape<T>, w: &BoundWeights, x: Var) -> Result<Var> {
    tape.rmsnorm(x, w.final_norm, T::of(NORM_EPS))
}

/// Index of the pooled row for last-token pooling.
pub fn last_token_index(seq: &TokenSeq) -> Result<usize> {
    let last = seq
        .last_non_pad()
        .ok_or_else(|| Error::EmptyInput("sequence is all padding".into()))?;
    if seq.ids[last] != EOS {
        return Err(Error::contract(
            "last-token pooling needs [EOS] at the final non-pad position",
        ));
    }
    Ok(last)
}

/// Pools each packed sequence of `states` into one row, giving `[n x d]`.
pub fn pool_packed<T: Scalar>(
    tape: &mut Tape<T>,
    mode: PoolingMode,
    states: Var,
    layout: &Layout,
    seqs: &[TokenSeq],
) -> Result<Var> {
    let mut rows = Vec::with_capacity(seqs.len());
    for ((span, pad), seq) in layout.spans.iter().zip(&layout.pads).zip(seqs) {
        let pooled = match mode {
            PoolingMode::LastToken => {
                let i = span.start + last_token_index(seq)?;
                tape.rows(states, i..i + 1)?
            }
            PoolingMode::Mean => {
                let mut runs = Vec::new();
                let mut j = 0;
                while j < pad.len() {
                    if pad[j] {
                        j += 1;
                        continue;
                    }
                    let s = j;
                    while j < pad.len() && !pad[j] {
                        j += 1;
                    }
                    runs.push(tape.rows(states, span.start + s..span.start + j)?);
                }
                if runs.is_empty() {
                    return Err(Error::EmptyInput("sequence is all padding".into()));
                }
                let kept = if runs.len() == 1 {
                    runs[0]
                } else {
                    tape.concat_rows(&runs)?
                };
                tape.mean_rows(kept)?
            }
        };
        rows.push(pooled);
    }
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        tape.concat_rows(&rows)
    }
}

/// Full-depth forward, final norm, pooling and optional normalisation.
pub fn embed_packed<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    w: &BoundWeights,
    seqs: &[TokenSeq],
) -> Result<Var> {
    let trace = forward_packed(tape, cfg, w, seqs, cfg.n_layers, None)?;
    let last = *trace.states.last().expect("depth >= 1");
    let fin = final_norm(tape, w, last)?;
    let pooled = pool_packed(tape, cfg.pooling_mode, fin, &trace.layouts[0], seqs)?;
    if cfg.normalize_embeddings {
        tape.normalize_rows(pooled)
    } else {
        Ok(pooled)
    }
}
