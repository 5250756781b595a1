//! Model checkpoints: `NXCK`, format version, a JSON header describing the
//! architecture and bookkeeping, then every float array as little-endian f64
//! (parameters, running statistics, Adam first and second moments).

use std::fs;
use std::path::Path;

use noisex_core::classifier::{AdamConfig, Arch, BnStats, Model, ModelParams, OptimizerState, Tensor};
use noisex_core::features::RunningStats;
use noisex_core::{FeatureConfig, TechniqueConfig};
use serde::{Deserialize, Serialize};

use crate::binfmt::{put_f64s, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NXCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: OptimizerState,
    /// Technique settings; `threshold` holds the calibrated value.
    pub technique: TechniqueConfig,
    pub epoch: usize,
    pub features: FeatureConfig,
    pub sample_rate: u32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    technique: TechniqueConfig,
    epoch: usize,
    features: FeatureConfig,
    sample_rate: u32,
    tensors: Vec<(String, Vec<usize>)>,
    adam: AdamConfig,
    step: u64,
}

fn stats_list(s: &BnStats) -> Vec<&RunningStats> {
    std::iter::once(&s.input).chain(&s.blocks).chain(&s.spectral).collect()
}

impl Checkpoint {
    pub fn threshold(&self) -> Option<f64> {
        self.technique.threshold
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.model.params;
        let header = Header {
            arch: p.arch.clone(),
            technique: self.technique.clone(),
            epoch: self.epoch,
            features: self.features.clone(),
            sample_rate: self.sample_rate,
            tensors: p.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect(),
            adam: self.optimizer.config.clone(),
            step: self.optimizer.step,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &p.tensors {
            put_f64s(&mut out, &t.data);
        }
        for s in stats_list(&self.model.stats) {
            put_f64s(&mut out, &s.mean);
            put_f64s(&mut out, &s.var);
        }
        for m in self.optimizer.m.iter().chain(&self.optimizer.v) {
            put_f64s(&mut out, m);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, format!("checkpoint: {msg}"));
        let mut r = Reader::new(bytes);
        if r.take(4) != Some(MAGIC.as_slice()) {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let json = r.take(len).ok_or_else(|| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
        let mut floats = |n: usize| r.f64s(n).ok_or_else(|| bad("truncated data"));
        let mut tensors = Vec::with_capacity(h.tensors.len());
        for (name, shape) in &h.tensors {
            let data = floats(shape.iter().product())?;
            tensors.push(Tensor { name: name.clone(), shape: shape.clone(), data });
        }
        let params = ModelParams { arch: h.arch.clone(), tensors };
        let mut stats = BnStats::new(&h.arch);
        for s in std::iter::once(&mut stats.input).chain(&mut stats.blocks).chain(&mut stats.spectral) {
            let n = s.mean.len();
            s.mean = floats(n)?;
            s.var = floats(n)?;
        }
        let mut optimizer = OptimizerState::new(&params, h.adam);
        optimizer.step = h.step;
        for m in optimizer.m.iter_mut().chain(optimizer.v.iter_mut()) {
            *m = floats(m.len())?;
        }
        if !r.is_done() {
            return Err(bad("trailing bytes"));
        }
        let model = Model { params, stats };
        model.check().map_err(|e| bad(&e.to_string()))?;
        Ok(Checkpoint {
            model,
            optimizer,
            technique: h.technique,
            epoch: h.epoch,
            features: h.features,
            sample_rate: h.sample_rate,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
