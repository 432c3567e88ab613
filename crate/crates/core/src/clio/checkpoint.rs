//! Single-file checkpoint.
//!
//! Layout: magic `ICLE`, `u32` version, `u32` header length, a JSON header
//! (model config, step, RNG state, tensor table, adapter table), then every
//! tensor in table order as little-endian `f32`. All integers are
//! little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LoraAdapter, Model, ModelConfig, ModelWeights};
use crate::numcore::Tensor;
use crate::training::RngState;

pub const MAGIC: &[u8; 4] = b"ICLE";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: ModelWeights,
    pub adapters: Vec<LoraAdapter>,
    pub step: u64,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterEntry {
    target: String,
    rank: usize,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    step: u64,
    rng: RngState,
    tensors: Vec<TensorEntry>,
    adapters: Vec<AdapterEntry>,
}

fn adapter_names(target: &str) -> [String; 2] {
    [format!("adapters.{target}.a"), format!("adapters.{target}.b")]
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64, rng: RngState) -> Self {
        Self {
            config: model.config.clone(),
            weights: model.weights.clone(),
            adapters: model.adapters.clone(),
            step,
            rng,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        let mut m = Model::from_parts(self.config, self.weights)?;
        m.adapters = self.adapters;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Tensor)> = self.weights.named_tensors(&self.config);
        for a in &self.adapters {
            let [na, nb] = adapter_names(&a.target);
            tensors.push((na, &a.a));
            tensors.push((nb, &a.b));
        }
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            rng: self.rng,
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            adapters: self
                .adapters
                .iter()
                .map(|a| AdapterEntry {
                    target: a.target.clone(),
                    rank: a.rank,
                    alpha: a.alpha,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Data(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let bad = |offset: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line: 0,
            offset,
            msg,
        };
        if bytes.len() < 12 {
            return Err(bad(bytes.len(), "truncated checkpoint header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad(0, "not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(4, format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = 12 + hlen;
        if bytes.len() < body {
            return Err(bad(bytes.len(), "truncated checkpoint header".into()));
        }
        let header: Header =
            serde_json::from_slice(&bytes[12..body]).map_err(|e| bad(12, format!("bad header: {e}")))?;
        let mut pos = body;
        let mut named = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = pos + 4 * n;
            if end > bytes.len() {
                return Err(bad(bytes.len(), format!("truncated data for tensor `{}`", entry.name)));
            }
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            pos = end;
            if named.insert(entry.name.clone(), Tensor::new(entry.shape, data)?).is_some() {
                return Err(Error::Data(format!("{path}: duplicate tensor `{}`", entry.name)));
            }
        }
        if pos != bytes.len() {
            return Err(bad(pos, "trailing bytes after checkpoint data".into()));
        }
        let mut adapters = Vec::with_capacity(header.adapters.len());
        for a in header.adapters {
            let [na, nb] = adapter_names(&a.target);
            let take = |named: &mut BTreeMap<String, Tensor>, n: &str| {
                named
                    .remove(n)
                    .ok_or_else(|| Error::Data(format!("{path}: missing tensor `{n}`")))
            };
            adapters.push(LoraAdapter {
                a: take(&mut named, &na)?,
                b: take(&mut named, &nb)?,
                target: a.target,
                rank: a.rank,
                alpha: a.alpha,
            });
        }
        let weights = ModelWeights::from_named(&header.config, named).map_err(|e| e.context(path.to_string()))?;
        for a in &adapters {
            crate::model::weights::check_adapter(&header.config, &weights, a)?;
        }
        Ok(Self {
            config: header.config,
            weights,
            adapters,
            step: header.step,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::files::write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
