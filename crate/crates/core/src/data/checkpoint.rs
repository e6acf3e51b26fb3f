//! Self-describing checkpoint files shared by both training stages.
//!
//! ```text
//! "MOPD" | version: u16 LE | header_len: u32 LE | header (JSON) | blobs
//! ```
//!
//! The JSON header holds the kind (`deterministic` or `variational`), the
//! model graph, the name and shape of every tensor in blob order, and free
//! metadata. Blobs are the tensors' elements as little-endian `f32`,
//! concatenated. Tensor names are `{layer}.weight` / `{layer}.bias` for
//! deterministic checkpoints and `{layer}.{weight|bias}.{mu|rho|prior_mu|prior_sigma}`
//! for variational ones.
//!
//! Weights are computed in `f64` and stored in `f32`; loading widens them
//! back, so a checkpoint saved from a loaded checkpoint is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::nn::{DeterministicCheckpoint, DeterministicModel, LayerParams, ModelGraph, TrainingMeta};
use crate::tensor::Tensor;
use crate::variational::{
    GaussianParam, LayerPrior, PriorSet, PriorSpec, VariationalCheckpoint, VariationalLayer, VariationalMeta,
    VariationalModel,
};

pub const MAGIC: &[u8; 4] = b"MOPD";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Deterministic,
    Variational,
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckpointKind::Deterministic => "deterministic",
            CheckpointKind::Variational => "variational",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedBlob {
    fn from_tensor(name: String, t: &Tensor) -> Result<Self> {
        let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor `{name}` (as f32)")));
        }
        Ok(NamedBlob {
            name,
            shape: t.shape().to_vec(),
            data,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f64::from(v)).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    graph: ModelGraph,
    tensors: Vec<TensorEntry>,
    metadata: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointContainer {
    pub kind: CheckpointKind,
    pub graph: ModelGraph,
    pub blobs: Vec<NamedBlob>,
    pub metadata: Value,
}

fn expected_names(graph: &ModelGraph, kind: CheckpointKind) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for p in graph.param_layers() {
        for (part, shape) in [("weight", &p.weight_shape), ("bias", &p.bias_shape)] {
            match kind {
                CheckpointKind::Deterministic => out.push((format!("{}.{part}", p.name), shape.clone())),
                CheckpointKind::Variational => {
                    for field in ["mu", "rho", "prior_mu", "prior_sigma"] {
                        out.push((format!("{}.{part}.{field}", p.name), shape.clone()));
                    }
                }
            }
        }
    }
    out
}

impl CheckpointContainer {
    /// Every tensor the graph calls for is present with its shape.
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        for (name, shape) in expected_names(&self.graph, self.kind) {
            let blob = self.blob(&name)?;
            if blob.shape != shape {
                return Err(Error::CheckpointCorrupt(format!(
                    "tensor `{name}` has shape {:?}, graph requires {shape:?}",
                    blob.shape
                )));
            }
        }
        Ok(())
    }

    pub fn blob(&self, name: &str) -> Result<&NamedBlob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::CheckpointCorrupt(format!("missing tensor `{name}`")))
    }

    fn tensor(&self, name: &str) -> Result<Tensor> {
        Ok(self.blob(name)?.to_tensor())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            graph: self.graph.clone(),
            tensors: self
                .blobs
                .iter()
                .map(|b| TensorEntry {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let payload: usize = self.blobs.iter().map(|b| 4 * b.data.len()).sum();
        let mut out = Vec::with_capacity(10 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for b in &self.blobs {
            if b.shape.iter().product::<usize>() != b.data.len() {
                return Err(Error::CheckpointCorrupt(format!("tensor `{}` length disagrees with its shape", b.name)));
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(Error::CheckpointCorrupt("missing MOPD magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let body = &bytes[10..];
        if body.len() < header_len {
            return Err(Error::CheckpointCorrupt(format!(
                "header needs {header_len} bytes, {} available",
                body.len()
            )));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::CheckpointCorrupt(format!("header: {e}")))?;
        let mut payload = &body[header_len..];
        let expected: usize = header.tensors.iter().map(|t| 4 * t.shape.iter().product::<usize>()).sum();
        if payload.len() != expected {
            return Err(Error::CheckpointCorrupt(format!(
                "blob section is {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        let mut blobs = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let (chunk, rest) = payload.split_at(4 * n);
            payload = rest;
            let data = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.push(NamedBlob {
                name: t.name,
                shape: t.shape,
                data,
            });
        }
        let container = CheckpointContainer {
            kind: header.kind,
            graph: header.graph,
            blobs,
            metadata: header.metadata,
        };
        container.validate()?;
        Ok(container)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::CheckpointKind {
                found: self.kind.to_string(),
                expected: kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn from_deterministic(ckpt: &DeterministicCheckpoint) -> Result<Self> {
        let mut blobs = Vec::new();
        for (p, lp) in ckpt.model.graph.param_layers().iter().zip(&ckpt.model.params) {
            blobs.push(NamedBlob::from_tensor(format!("{}.weight", p.name), &lp.weight)?);
            blobs.push(NamedBlob::from_tensor(format!("{}.bias", p.name), &lp.bias)?);
        }
        Ok(CheckpointContainer {
            kind: CheckpointKind::Deterministic,
            graph: ckpt.model.graph.clone(),
            blobs,
            metadata: json!({ "training": ckpt.meta }),
        })
    }

    pub fn to_deterministic(&self) -> Result<DeterministicCheckpoint> {
        self.expect_kind(CheckpointKind::Deterministic)?;
        let mut params = Vec::new();
        for p in self.graph.param_layers() {
            params.push(LayerParams {
                weight: self.tensor(&format!("{}.weight", p.name))?,
                bias: self.tensor(&format!("{}.bias", p.name))?,
            });
        }
        let meta: TrainingMeta = match self.metadata.get("training") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => TrainingMeta::default(),
        };
        Ok(DeterministicCheckpoint {
            model: DeterministicModel::from_params(self.graph.clone(), params)?,
            meta,
        })
    }

    pub fn from_variational(ckpt: &VariationalCheckpoint) -> Result<Self> {
        ckpt.model.check_priors(&ckpt.priors)?;
        let mut blobs = Vec::new();
        for (name, layer) in ckpt.model.layer_names().iter().zip(&ckpt.model.layers) {
            let prior = &ckpt.priors[name];
            for (part, q, p) in [("weight", &layer.weight, &prior.weight), ("bias", &layer.bias, &prior.bias)] {
                for (field, t) in [("mu", &q.mu), ("rho", &q.rho), ("prior_mu", &p.mu), ("prior_sigma", &p.sigma)] {
                    blobs.push(NamedBlob::from_tensor(format!("{name}.{part}.{field}"), t)?);
                }
            }
        }
        Ok(CheckpointContainer {
            kind: CheckpointKind::Variational,
            graph: ckpt.model.graph.clone(),
            blobs,
            metadata: json!({ "training": ckpt.meta }),
        })
    }

    pub fn to_variational(&self) -> Result<VariationalCheckpoint> {
        self.expect_kind(CheckpointKind::Variational)?;
        let mut layers = Vec::new();
        let mut priors = PriorSet::new();
        for p in self.graph.param_layers() {
            let get = |part: &str, field: &str| self.tensor(&format!("{}.{part}.{field}", p.name));
            let param = |part: &str| -> Result<GaussianParam> { GaussianParam::new(get(part, "mu")?, get(part, "rho")?) };
            let prior = |part: &str| -> Result<PriorSpec> { PriorSpec::new(get(part, "prior_mu")?, get(part, "prior_sigma")?) };
            layers.push(VariationalLayer {
                weight: param("weight")?,
                bias: param("bias")?,
            });
            priors.insert(
                p.name.clone(),
                LayerPrior {
                    weight: prior("weight")?,
                    bias: prior("bias")?,
                },
            );
        }
        let meta: VariationalMeta = match self.metadata.get("training") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => VariationalMeta::default(),
        };
        Ok(VariationalCheckpoint {
            model: VariationalModel::new(self.graph.clone(), layers)?,
            priors,
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_ckpt() -> DeterministicCheckpoint {
        let graph = ModelGraph::scnn([12, 12, 1], 3).unwrap();
        DeterministicCheckpoint {
            model: DeterministicModel::init(graph, 1).unwrap(),
            meta: TrainingMeta {
                epochs: 2,
                final_loss: 0.5,
                seed: 1,
            },
        }
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        let c = CheckpointContainer::from_deterministic(&sample_ckpt()).unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = CheckpointContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let d = back.to_deterministic().unwrap();
        assert_eq!(d.meta, sample_ckpt().meta);
        // Re-encoding the widened model reproduces the file.
        let again = CheckpointContainer::from_deterministic(&d).unwrap();
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn distinct_errors() {
        let c = CheckpointContainer::from_deterministic(&sample_ckpt()).unwrap();
        let mut bytes = c.to_bytes().unwrap();

        let mut flipped = bytes.clone();
        flipped[4] ^= 0xff;
        assert!(matches!(
            CheckpointContainer::from_bytes(&flipped),
            Err(Error::CheckpointVersion { .. })
        ));

        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(
            CheckpointContainer::from_bytes(short),
            Err(Error::CheckpointCorrupt(_))
        ));

        bytes[0] = b'X';
        assert!(matches!(CheckpointContainer::from_bytes(&bytes), Err(Error::CheckpointCorrupt(_))));

        assert!(matches!(c.to_variational(), Err(Error::CheckpointKind { .. })));
    }
}
