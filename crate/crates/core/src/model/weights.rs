use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T: Scalar = f32> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    /// `[4d x d]`
    pub w_up: Tensor<T>,
    /// `[d x 4d]`
    pub w_down: Tensor<T>,
}

/// Parameters of the toy decoder. Projection matrices are stored `[out x in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T: Scalar = f32> {
    pub tok_emb: Tensor<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Tensor<T>,
    /// Output head `[vocab x d]`; only the reranker reads it.
    pub head: Tensor<T>,
}

/// Expected shape of every named parameter for `cfg`, in canonical order.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![("tok_emb".to_string(), vec![cfg.vocab_size, d])];
    for i in 0..cfg.n_layers {
        for (name, shape) in [
            ("attn_norm", vec![d]),
            ("wq", vec![d, d]),
            ("wk", vec![d, d]),
            ("wv", vec![d, d]),
            ("wo", vec![d, d]),
            ("mlp_norm", vec![d]),
            ("w_up", vec![4 * d, d]),
            ("w_down", vec![d, 4 * d]),
        ] {
            out.push((format!("layers.{i}.{name}"), shape));
        }
    }
    out.push(("final_norm".into(), vec![d]));
    out.push(("head".into(), vec![cfg.vocab_size, d]));
    out
}

impl<T: Scalar> ModelWeights<T> {
    /// Normal(0, 0.02) projections and embeddings, unit norm gains.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let tok_emb = Tensor::randn(&[cfg.vocab_size, d], INIT_STD, rng);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                attn_norm: Tensor::ones(&[d]),
                wq: Tensor::randn(&[d, d], INIT_STD, rng),
                wk: Tensor::randn(&[d, d], INIT_STD, rng),
                wv: Tensor::randn(&[d, d], INIT_STD, rng),
                wo: Tensor::randn(&[d, d], INIT_STD, rng),
                mlp_norm: Tensor::ones(&[d]),
                w_up: Tensor::randn(&[4 * d, d], INIT_STD, rng),
                w_down: Tensor::randn(&[d, 4 * d], INIT_STD, rng),
            })
            .collect();
        let head = Tensor::randn(&[cfg.vocab_size, d], INIT_STD, rng);
        Ok(Self {
            tok_emb,
            layers,
            final_norm: Tensor::ones(&[d]),
            head,
        })
    }

    /// Parameters in canonical order, matching [`parameter_shapes`].
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.tok_emb];
        for l in &self.layers {
            out.extend([
                &l.attn_norm,
                &l.wq,
                &l.wk,
                &l.wv,
                &l.wo,
                &l.mlp_norm,
                &l.w_up,
                &l.w_down,
            ]);
        }
        out.push(&self.final_norm);
        out.push(&self.head);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.tok_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.attn_norm,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.mlp_norm,
                &mut l.w_up,
                &mut l.w_down,
            ]);
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.head);
        out
    }

    pub fn named_tensors(&self, cfg: &ModelConfig) -> Vec<(String, &Tensor<T>)> {
        parameter_shapes(cfg)
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.tensors())
            .collect()
    }

    /// Rebuilds weights from named tensors, checking every shape against `cfg`.
    pub fn from_named(cfg: &ModelConfig, mut named: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let mut ordered = Vec::new();
        for (name, shape) in parameter_shapes(cfg) {
            let t = named
                .remove(&name)
                .ok_or_else(|| Error::Data(format!("missing tensor `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            ordered.push(t);
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Data(format!("unexpected tensor `{extra}`")));
        }
        let mut it = ordered.into_iter();
        let mut next = || it.next().expect("count checked");
        let tok_emb = next();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
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

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.n_layers {
            return Err(Error::shape(format!(
                "weights have {} layers, config {}",
                self.layers.len(),
                cfg.n_layers
            )));
        }
        for ((name, shape), t) in parameter_shapes(cfg).into_iter().zip(self.tensors()) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            tok_emb: self.tok_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: l.attn_norm.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    mlp_norm: l.mlp_norm.cast(),
                    w_up: l.w_up.cast(),
                    w_down: l.w_down.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            head: self.head.cast(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

/// Low-rank update `W + (alpha / rank) * B * A` on one projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<T: Scalar = f32> {
    /// Parameter name, e.g. `layers.0.wq`.
    pub target: String,
    pub rank: usize,
    pub alpha: f64,
    /// `[rank x in]`
    pub a: Tensor<T>,
    /// `[out x rank]`
    pub b: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
}

impl<T: Scalar> LoraAdapter<T> {
    /// Random `A`, zero `B`: a no-op until trained.
    pub fn new<R: Rng + ?Sized>(
        target: impl Into<String>,
        spec: LoraSpec,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.rank == 0 {
            return Err(Error::config("LoRA rank must be positive"));
        }
        Ok(Self {
            target: target.into(),
            rank: spec.rank,
            alpha: spec.alpha,
            a: Tensor::randn(&[spec.rank, in_dim], 1.0 / (in_dim as f64).sqrt(), rng),
            b: Tensor::zeros(&[out_dim, spec.rank]),
        })
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    fn check_against(&self, w: &Tensor<T>) -> Result<()> {
        let (out, inp) = w.dims2();
        if self.a.shape() != [self.rank, inp] || self.b.shape() != [out, self.rank] {
            return Err(Error::shape(format!(
                "adapter `{}`: A {:?}, B {:?} do not fit weight {:?} at rank {}",
                self.target,
                self.a.shape(),
                self.b.shape(),
                w.shape(),
                self.rank
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> LoraAdapter<U> {
        LoraAdapter {
            target: self.target.clone(),
            rank: self.rank,
            alpha: self.alpha,
            a: self.a.cast(),
            b: self.b.cast(),
        }
    }
}

/// Effective weight `W + (alpha / r) * B * A`; `w` is left untouched.
pub fn lora_apply<T: Scalar>(w: &Tensor<T>, adapter: &LoraAdapter<T>) -> Result<Tensor<T>> {
    if w.shape().len() != 2 {
        return Err(Error::shape("LoRA target must be a matrix"));
    }
    adapter.check_against(w)?;
    let delta = adapter.b.matmul(&adapter.a)?;
    let s = T::of(adapter.scaling());
    let data = w
        .data()
        .iter()
        .zip(delta.data())
        .map(|(&x, &d)| x + s * d)
        .collect();
    Tensor::new(w.shape().to_vec(), data)
}

/// Projection targets an adapter may attach to.
pub fn adapter_targets(cfg: &ModelConfig) -> Vec<String> {
    parameter_shapes(cfg)
        .into_iter()
        .filter(|(n, s)| s.len() == 2 && n.starts_with("layers."))
        .map(|(n, _)| n)
        .collect()
}

/// Looks up the matrix an adapter targets and validates the fit.
pub fn check_adapter<T: Scalar>(
    cfg: &ModelConfig,
    weights: &ModelWeights<T>,
    adapter: &LoraAdapter<T>,
) -> Result<()> {
    let named = weights.named_tensors(cfg);
    let (_, w) = named
        .iter()
        .find(|(n, t)| *n == adapter.target && t.shape().len() == 2 && n.starts_with("layers."))
        .ok_or_else(|| Error::config(format!("unknown adapter target `{}`", adapter.target)))?;
    adapter.check_against(w)
}
