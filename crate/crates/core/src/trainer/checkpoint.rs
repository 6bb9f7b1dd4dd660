//! Binary checkpoints.
//!
//! Layout (little endian): magic `GRFY`, `u32` version (1), `u32` tensor
//! count, then per tensor `u16` name length, UTF-8 name, `u8` rank, `u32`
//! dims, `f32` payload in row-major order. Besides parameters a checkpoint
//! holds momentum buffers (`optim.momentum/<param>`), the step counter
//! (`meta/step`, one value) and the resolved config text (`meta/config`, one
//! value per UTF-8 byte).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::numcore::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"GRFY";
pub const VERSION: u32 = 1;
const MOMENTUM_PREFIX: &str = "optim.momentum/";
const STEP: &str = "meta/step";
const CONFIG: &str = "meta/config";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Parameter tensors in store order.
    pub params: Vec<(String, Tensor<f32>)>,
    pub momentum: Vec<(String, Tensor<f32>)>,
    pub step: u64,
    pub config_text: String,
}

/// Outcome of loading a checkpoint into a parameter store.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Model parameters absent from the checkpoint; they keep their fresh
    /// initialization.
    pub fresh: Vec<String>,
    /// Checkpoint tensors the model has no parameter for.
    pub unknown: Vec<String>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore<f32>, step: u64, config_text: &str) -> Self {
        Checkpoint {
            params: store.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            momentum: store
                .iter()
                .map(|p| (p.name.clone(), p.momentum.clone()))
                .collect(),
            step,
            config_text: config_text.to_string(),
        }
    }

    /// Copy matching tensors into `store`. With `with_optimizer`, momentum
    /// buffers are restored too; otherwise they are reset to zero.
    pub fn apply(&self, store: &mut ParamStore<f32>, with_optimizer: bool) -> Result<LoadReport> {
        let mut report = LoadReport::default();
        let momentum: BTreeMap<&str, &Tensor<f32>> =
            self.momentum.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, t) in &self.params {
            let Some(p) = store.by_name(name) else {
                report.unknown.push(name.clone());
                continue;
            };
            if p.value.shape() != t.shape() {
                return Err(CheckpointError::ShapeConflict {
                    name: name.clone(),
                    stored: t.shape().to_vec(),
                    expected: p.value.shape().to_vec(),
                }
                .into());
            }
        }
        let stored: BTreeSet<&str> = self.params.iter().map(|(n, _)| n.as_str()).collect();
        for (name, t) in &self.params {
            let Some(p) = store.by_name_mut(name) else { continue };
            p.value = t.clone();
            p.momentum = match momentum.get(name.as_str()) {
                Some(m) if with_optimizer && m.shape() == t.shape() => (*m).clone(),
                _ => Tensor::zeros(t.shape()),
            };
            report.loaded.push(name.clone());
        }
        report.fresh = store
            .names()
            .filter(|n| !stored.contains(n))
            .map(String::from)
            .collect();
        Ok(report)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Tensor<f32>)> =
            self.params.iter().map(|(n, t)| (n.clone(), t)).collect();
        let momentum: Vec<(String, &Tensor<f32>)> = self
            .momentum
            .iter()
            .map(|(n, t)| (format!("{MOMENTUM_PREFIX}{n}"), t))
            .collect();
        tensors.extend(momentum);
        let step = Tensor::new(&[1], vec![self.step as f32])?;
        if step.data()[0] as u64 != self.step {
            return Err(Error::Config(format!("step {} not representable", self.step)));
        }
        let cfg_bytes: Vec<f32> = self.config_text.bytes().map(f32::from).collect();
        let cfg = (!cfg_bytes.is_empty())
            .then(|| Tensor::new(&[cfg_bytes.len()], cfg_bytes))
            .transpose()?;
        tensors.push((STEP.to_string(), &step));
        if let Some(c) = &cfg {
            tensors.push((CONFIG.to_string(), c));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len())
                .map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version).into());
        }
        let count = r.u32()?;
        let mut ckpt = Checkpoint {
            params: Vec::new(),
            momentum: Vec::new(),
            step: 0,
            config_text: String::new(),
        };
        let mut seen = BTreeSet::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Malformed {
                    offset: at,
                    msg: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::Malformed {
                    offset: at,
                    msg: format!("duplicate tensor {name}"),
                }
                .into());
            }
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.filter(|&n| n > 0).ok_or_else(|| CheckpointError::Malformed {
                offset: at,
                msg: format!("bad shape {shape:?} for {name}"),
            })?;
            let payload = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(r.pos))?)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&shape, data)?;
            if name == STEP {
                ckpt.step = t.data()[0] as u64;
            } else if name == CONFIG {
                let bytes: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
                ckpt.config_text = String::from_utf8(bytes).map_err(|_| CheckpointError::Malformed {
                    offset: at,
                    msg: "config echo is not UTF-8".into(),
                })?;
            } else if let Some(p) = name.strip_prefix(MOMENTUM_PREFIX) {
                ckpt.momentum.push((p.to_string(), t));
            } else {
                ckpt.params.push((name, t));
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed {
                offset: r.pos,
                msg: "trailing bytes".into(),
            }
            .into());
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(
    store: &ParamStore<f32>,
    step: u64,
    config_text: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    Checkpoint::from_store(store, step, config_text).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
