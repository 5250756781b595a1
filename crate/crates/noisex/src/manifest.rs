//! CSV manifests.
//!
//! A split manifest lists the clips written by `dataset` with columns
//! `path,label,env,snr_db,split`. A source manifest lists recordings to use
//! in place of the generator with columns `path,machine,label,env`: machine
//! rows leave `env` empty, noise rows leave `machine` empty and use the
//! label `noise`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use noisex_core::dataset::{ClipId, ClipSource, DatasetError, SourceClip, Split};
use noisex_core::{Label, Machine, MachineCondition, NoiseEnvironment};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub path: String,
    pub label: String,
    pub env: String,
    pub snr_db: Option<f64>,
    pub split: Split,
}

pub fn write_split_manifest(path: impl AsRef<Path>, rows: &[SplitRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_split_manifest(path: impl AsRef<Path>) -> Result<Vec<SplitRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let rows = r.deserialize().collect::<Result<Vec<SplitRecord>, _>>();
    rows.map_err(|e| Error::format(path, e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

#[derive(Debug, Deserialize)]
struct SourceRecord {
    path: String,
    #[serde(default)]
    machine: String,
    label: String,
    #[serde(default)]
    env: String,
}

/// Recordings from a source manifest, read from disk on demand. Index `i`
/// of a (machine, condition) or environment is the `i`-th matching row.
#[derive(Debug, Clone, Default)]
pub struct ManifestSource {
    machine: BTreeMap<(Machine, usize), Vec<PathBuf>>,
    noise: BTreeMap<NoiseEnvironment, Vec<PathBuf>>,
}

impl ManifestSource {
    /// Relative clip paths are resolved against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut out = ManifestSource::default();
        for (i, row) in r.deserialize::<SourceRecord>().enumerate() {
            let row = row.map_err(|e| Error::format(path, e.to_string()))?;
            let line = |m: String| Error::format(path, format!("row {}: {m}", i + 1));
            let clip = base.join(&row.path);
            let label: Label = row.label.parse().map_err(|e| line(format!("{e}")))?;
            match label {
                Label::Noise => {
                    let env: NoiseEnvironment = row.env.parse().map_err(|e| line(format!("{e}")))?;
                    out.noise.entry(env).or_default().push(clip);
                }
                Label::Condition(c) => {
                    let machine: Machine = row.machine.parse().map_err(|e| line(format!("{e}")))?;
                    out.machine.entry((machine, c.index())).or_default().push(clip);
                }
            }
        }
        Ok(out)
    }

    pub fn machine_count(&self, machine: Machine, condition: MachineCondition) -> usize {
        self.machine.get(&(machine, condition.index())).map_or(0, Vec::len)
    }

    pub fn noise_count(&self, env: NoiseEnvironment) -> usize {
        self.noise.get(&env).map_or(0, Vec::len)
    }

    fn read(path: &Path) -> Result<SourceClip, DatasetError> {
        let clip = wavio::read_wav(path).map_err(|e| DatasetError::Source(e.to_string()))?;
        Ok(SourceClip { id: ClipId(path.display().to_string()), clip })
    }
}

impl ClipSource for ManifestSource {
    fn machine_clip(
        &self,
        machine: Machine,
        condition: MachineCondition,
        index: usize,
    ) -> Result<SourceClip, DatasetError> {
        let p = self.machine.get(&(machine, condition.index())).and_then(|v| v.get(index)).ok_or_else(|| {
            DatasetError::InsufficientClips(format!(
                "{} {condition} needs at least {} recordings, manifest has {}",
                machine.name(),
                index + 1,
                self.machine_count(machine, condition)
            ))
        })?;
        Self::read(p)
    }

    fn noise_clip(&self, env: NoiseEnvironment, index: usize) -> Result<SourceClip, DatasetError> {
        let p = self.noise.get(&env).and_then(|v| v.get(index)).ok_or_else(|| {
            DatasetError::InsufficientClips(format!(
                "{env} needs at least {} noise recordings, manifest has {}",
                index + 1,
                self.noise_count(env)
            ))
        })?;
        Self::read(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use noisex_core::AudioClip;

    #[test]
    fn split_manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            SplitRecord {
                path: "a.wav".into(),
                label: "b-high".into(),
                env: "N2".into(),
                snr_db: Some(-3.25),
                split: Split::Train,
            },
            SplitRecord {
                path: "b.wav".into(),
                label: "noise".into(),
                env: "N2".into(),
                snr_db: None,
                split: Split::Test,
            },
        ];
        write_split_manifest(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path,label,env,snr_db,split\n"), "{text}");
        assert!(text.contains("b.wav,noise,N2,,test"), "{text}");
        assert_eq!(read_split_manifest(&p).unwrap(), rows);
    }

    #[test]
    fn source_manifest_serves_clips_in_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let clip = |v: f64| AudioClip::new(vec![v; 64], 8000).unwrap();
        wavio::write_wav(&clip(0.25), dir.path().join("n0.wav")).unwrap();
        wavio::write_wav(&clip(-0.5), dir.path().join("n1.wav")).unwrap();
        wavio::write_wav(&clip(0.125), dir.path().join("m0.wav")).unwrap();
        std::fs::write(
            dir.path().join("src.csv"),
            "path,machine,label,env\nn0.wav,,noise,N3\nm0.wav,car,c-low,\nn1.wav,,noise,N3\n",
        )
        .unwrap();
        let src = ManifestSource::load(dir.path().join("src.csv")).unwrap();
        assert_eq!(src.noise_count(NoiseEnvironment::N3), 2);
        let n1 = src.noise_clip(NoiseEnvironment::N3, 1).unwrap();
        assert_eq!(n1.clip.samples()[0], -0.5);
        let c: MachineCondition = "c-low".parse().unwrap();
        assert_eq!(src.machine_clip(Machine::Car, c, 0).unwrap().clip.samples()[0], 0.125);
        assert!(matches!(src.machine_clip(Machine::Train, c, 0), Err(DatasetError::InsufficientClips(_))));
        assert!(matches!(src.noise_clip(NoiseEnvironment::N3, 2), Err(DatasetError::InsufficientClips(_))));
    }

    #[test]
    fn bad_rows_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("src.csv");
        std::fs::write(&p, "path,machine,label,env\nx.wav,bus,normal,\n").unwrap();
        assert!(matches!(ManifestSource::load(&p), Err(Error::Format { .. })));
        assert!(matches!(ManifestSource::load(dir.path().join("none.csv")), Err(Error::Missing { .. })));
    }
}
