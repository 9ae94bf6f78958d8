//! Binary checkpoint: magic, version, a JSON header, then raw little-endian
//! f64 blocks for parameters and optimizer moments.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use cathnet_core::model::{Param, ParamGroup, ParamStore};
use cathnet_core::optim::{AdamW, AdamWConfig, Moments};
use cathnet_core::prioritizer::Prioritizer;
use cathnet_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

const MAGIC: &[u8; 8] = b"CATHCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}: not a checkpoint file")]
    Magic(PathBuf),
    #[error("{path}: format version {found}, expected {FORMAT_VERSION}")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

/// Loop bookkeeping that must survive a resume.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub best_score: Option<f64>,
    pub nonfinite_streak: u32,
    pub skipped_total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub config_hash: String,
    /// Completed iterations.
    pub iteration: u64,
    pub params: ParamStore,
    pub optimizer: AdamW,
    pub prioritizer: Prioritizer,
    pub loop_state: LoopState,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    config_hash: String,
    iteration: u64,
    params: Vec<ParamEntry>,
    adamw: AdamWConfig,
    moment_steps: Vec<u64>,
    prioritizer: Prioritizer,
    loop_state: LoopState,
}

fn push_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            iteration: self.iteration,
            params: self
                .params
                .iter()
                .map(|p| ParamEntry { name: p.name.clone(), group: p.group, shape: p.tensor.shape().to_vec() })
                .collect(),
            adamw: self.optimizer.config,
            moment_steps: self.optimizer.moments.iter().map(|m| m.step).collect(),
            prioritizer: self.prioritizer.clone(),
            loop_state: self.loop_state.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::with_capacity(json.len() + 24 + 24 * self.params.numel());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for p in self.params.iter() {
            push_f64s(&mut buf, p.tensor.data());
        }
        for m in &self.optimizer.moments {
            push_f64s(&mut buf, &m.m);
            push_f64s(&mut buf, &m.v);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::Corrupt { path: path.into(), message: m.into() };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::Magic(path.into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { path: path.into(), found: version });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))?;
        let mut data = bytes[20 + hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Result<Vec<f64>, CheckpointError> {
            let v: Vec<f64> = data.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(corrupt("truncated tensor data"))
            }
        };
        let mut tensors = Vec::with_capacity(header.params.len());
        for e in &header.params {
            let n = e.shape.iter().product();
            tensors.push(Tensor::from_vec(&e.shape, take(n)?));
        }
        if header.moment_steps.len() != tensors.len() {
            return Err(corrupt("optimizer state does not match parameters"));
        }
        let mut moments = Vec::with_capacity(tensors.len());
        for (t, &step) in tensors.iter().zip(&header.moment_steps) {
            moments.push(Moments { step, m: take(t.len())?, v: take(t.len())? });
        }
        let numel: usize = tensors.iter().map(Tensor::len).sum();
        if bytes.len() != 20 + hlen + 24 * numel {
            return Err(corrupt("trailing bytes"));
        }
        let params = ParamStore::from_params(
            header
                .params
                .into_iter()
                .zip(tensors)
                .map(|(e, tensor)| Param { name: e.name, group: e.group, tensor })
                .collect(),
        );
        Ok(Self {
            config: header.config,
            config_hash: header.config_hash,
            iteration: header.iteration,
            params,
            optimizer: AdamW { config: header.adamw, moments },
            prioritizer: header.prioritizer,
            loop_state: header.loop_state,
        })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.into(), source };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.into(), source };
        let mut bytes = Vec::new();
        fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        Self::from_bytes(&bytes, path)
    }
}
