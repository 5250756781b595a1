//! Feature cache: `NXFT`, format version, dtype tag, then the example count,
//! mel bins and frames as u64, one u64 label per example, and the values as
//! little-endian f64 in `[example][mel][frame]` order.

use std::fs;
use std::path::Path;

use noisex_core::trainer::FeatureSet;

use crate::binfmt::{put_f64s, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NXFT";
const VERSION: u32 = 1;
const DTYPE_F64: u32 = 1;

pub fn encode(set: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + set.len() * 8 + set.values.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    for d in [set.len(), set.n_mels, set.n_frames] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &l in &set.labels {
        out.extend_from_slice(&(l as u64).to_le_bytes());
    }
    put_f64s(&mut out, &set.values);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<FeatureSet> {
    let bad = |msg: &str| Error::format(path, format!("feature cache: {msg}"));
    let mut r = Reader::new(bytes);
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    if r.u32() != Some(VERSION) {
        return Err(bad("unsupported version"));
    }
    if r.u32() != Some(DTYPE_F64) {
        return Err(bad("unsupported dtype"));
    }
    let mut dim = || r.u64().map(|v| v as usize).ok_or_else(|| bad("truncated"));
    let (n, n_mels, n_frames) = (dim()?, dim()?, dim()?);
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        labels.push(r.u64().ok_or_else(|| bad("truncated labels"))? as usize);
    }
    let count = n.checked_mul(n_mels).and_then(|v| v.checked_mul(n_frames)).ok_or_else(|| bad("bad dims"))?;
    let values = r.f64s(count).ok_or_else(|| bad("truncated values"))?;
    if !r.is_done() {
        return Err(bad("trailing bytes"));
    }
    Ok(FeatureSet { n_mels, n_frames, values, labels })
}

pub fn save(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(set)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
