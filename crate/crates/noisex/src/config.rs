//! Experiment and generator configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use noisex_core::classifier::{AdamConfig, Arch, BlockSpec, LrSchedule};
use noisex_core::synth::SynthConfig;
use noisex_core::trainer::TrainConfig;
use noisex_core::{FeatureConfig, Machine, NoiseEnvironment, TechniqueConfig, TechniqueKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Train, validation and test noise from one environment.
    SameEnv,
    /// Test noise from an environment not seen in training.
    UnseenEnv,
    /// Every exposure environment against every test environment.
    ExposureGrid,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::SameEnv => "same-env",
            Protocol::UnseenEnv => "unseen-env",
            Protocol::ExposureGrid => "exposure-grid",
        }
    }

    pub fn default_assignments(self) -> Vec<Assignment> {
        let all = NoiseEnvironment::ALL;
        let pairs = all.iter().flat_map(|&train| all.iter().map(move |&test| Assignment { train, test }));
        match self {
            Protocol::SameEnv => pairs.filter(|a| a.train == a.test).collect(),
            Protocol::UnseenEnv => pairs.filter(|a| a.train != a.test).collect(),
            Protocol::ExposureGrid => pairs.collect(),
        }
    }
}

/// Noise environment for training and validation, and for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub train: NoiseEnvironment,
    pub test: NoiseEnvironment,
}

impl std::fmt::Display for Assignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.train, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TechniqueParams {
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub margin_machine: f64,
    pub margin_noise: f64,
}

impl Default for TechniqueParams {
    fn default() -> Self {
        let d = TechniqueConfig::new(TechniqueKind::NoiseExposure);
        TechniqueParams {
            alpha: d.alpha,
            beta: d.beta,
            temperature: d.temperature,
            margin_machine: d.margin_machine,
            margin_noise: d.margin_noise,
        }
    }
}

impl TechniqueParams {
    pub fn config(&self, kind: TechniqueKind) -> TechniqueConfig {
        TechniqueConfig {
            kind,
            alpha: self.alpha,
            beta: self.beta,
            temperature: self.temperature,
            margin_machine: self.margin_machine,
            margin_noise: self.margin_noise,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub epochs: usize,
    /// Learning rate held for the first 30% of epochs.
    pub lr: f64,
    /// Learning rate reached at 90% of epochs and held to the end.
    pub lr_floor: f64,
    pub batch_machine: usize,
    pub batch_noise: usize,
    pub blocks: Vec<BlockSpec>,
    pub spectral: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let arch = Arch::desk(1, 1, 1);
        TrainingSettings {
            epochs: 30,
            lr: 3e-3,
            lr_floor: 3e-4,
            batch_machine: 8,
            batch_noise: 8,
            blocks: arch.blocks,
            spectral: arch.spectral,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingSettings {
    pub fn train_config(&self, technique: TechniqueConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_machine: self.batch_machine,
            batch_noise: self.batch_noise,
            schedule: LrSchedule::scaled(self.lr, self.lr_floor, self.epochs),
            adam: self.adam.clone(),
            blocks: self.blocks.clone(),
            spectral: self.spectral,
            ..TrainConfig::new(technique, seed)
        }
    }
}

fn default_techniques() -> Vec<TechniqueKind> {
    TechniqueKind::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_scale() -> f64 {
    0.1
}

fn default_snr() -> [f64; 2] {
    [-10.0, 0.0]
}

fn default_duration() -> f64 {
    2.0
}

fn default_rate() -> u32 {
    8000
}

fn default_features() -> FeatureConfig {
    FeatureConfig::desk()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub machine: Machine,
    /// Empty means every assignment the protocol allows.
    #[serde(default)]
    pub assignments: Vec<Assignment>,
    #[serde(default = "default_techniques")]
    pub techniques: Vec<TechniqueKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Factor applied to the reference split counts.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_snr")]
    pub snr_db: [f64; 2],
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_features")]
    pub features: FeatureConfig,
    #[serde(default)]
    pub technique: TechniqueParams,
    #[serde(default)]
    pub training: TrainingSettings,
    /// Generator constants; the built-in set when absent.
    #[serde(default)]
    pub synth: Option<PathBuf>,
    /// Recordings listed in a CSV manifest, used instead of the generator.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(protocol: Protocol, machine: Machine) -> Self {
        ExperimentSpec {
            protocol,
            machine,
            assignments: Vec::new(),
            techniques: default_techniques(),
            seeds: default_seeds(),
            scale: default_scale(),
            snr_db: default_snr(),
            duration_s: default_duration(),
            sample_rate: default_rate(),
            features: default_features(),
            technique: TechniqueParams::default(),
            training: TrainingSettings::default(),
            synth: None,
            manifest: None,
        }
    }

    /// Parses a spec. Relative `synth` and `manifest` paths are taken
    /// relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut spec.synth, &mut spec.manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Assignments in run order, after protocol defaults.
    pub fn resolved_assignments(&self) -> Vec<Assignment> {
        if self.assignments.is_empty() {
            self.protocol.default_assignments()
        } else {
            self.assignments.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        let assignments = self.resolved_assignments();
        for (i, a) in assignments.iter().enumerate() {
            if assignments[..i].contains(a) {
                return bad(format!("assignment {a} listed twice"));
            }
            match self.protocol {
                Protocol::SameEnv if a.train != a.test => {
                    return bad(format!("same-env protocol needs equal train and test environments, got {a}"))
                }
                Protocol::UnseenEnv if a.train == a.test => {
                    return bad(format!("unseen-env protocol needs a test environment unseen in training, got {a}"))
                }
                _ => {}
            }
        }
        if self.techniques.is_empty() || self.seeds.is_empty() {
            return bad("at least one technique and one seed required".into());
        }
        for (i, t) in self.techniques.iter().enumerate() {
            if self.techniques[..i].contains(t) {
                return bad(format!("technique {t} listed twice"));
            }
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad(format!("seed {s} listed twice"));
            }
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        let [lo, hi] = self.snr_db;
        if !(lo <= hi && lo.is_finite()) {
            return bad(format!("invalid SNR range [{lo}, {hi}]"));
        }
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return bad("duration and sample rate must be positive".into());
        }
        if self.training.epochs == 0 || self.training.batch_machine == 0 {
            return bad("epochs and machine batch size must be positive".into());
        }
        let uses_exposure = self.techniques.iter().any(|t| t.uses_exposure());
        if uses_exposure && self.training.batch_noise == 0 {
            return bad("exposure techniques need a positive noise batch size".into());
        }
        self.features.validate(self.sample_rate)?;
        Ok(())
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        match &self.synth {
            Some(p) => load_synth(p),
            None => Ok(SynthConfig::default()),
        }
    }
}

pub fn load_synth(path: impl AsRef<Path>) -> Result<SynthConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn configs_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
    }

    #[test]
    fn shipped_generator_config_is_the_default() {
        assert_eq!(load_synth(configs_dir().join("synth_v1.toml")).unwrap(), SynthConfig::default());
    }

    #[test]
    fn shipped_experiments_parse() {
        for name in ["same_env.toml", "unseen_env.toml", "exposure_grid.toml", "full_scale.toml"] {
            let spec = ExperimentSpec::load(configs_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
            spec.synth_config().unwrap();
        }
    }

    #[test]
    fn defaults_fill_in() {
        let spec = ExperimentSpec::from_toml("protocol = \"same-env\"\nmachine = \"car\"\n", Path::new(".")).unwrap();
        assert_eq!(spec, ExperimentSpec::new(Protocol::SameEnv, Machine::Car));
        assert_eq!(spec.resolved_assignments().len(), 4);
        let back = ExperimentSpec::from_toml(&spec.to_toml(), Path::new(".")).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn protocol_assignment_counts() {
        assert_eq!(Protocol::UnseenEnv.default_assignments().len(), 12);
        assert_eq!(Protocol::ExposureGrid.default_assignments().len(), 16);
    }

    #[test]
    fn rejects_assignments_against_protocol() {
        let text =
            "protocol = \"unseen-env\"\nmachine = \"train\"\nassignments = [{ train = \"N2\", test = \"N2\" }]\n";
        let err = ExperimentSpec::from_toml(text, Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Spec(_)), "{err}");
        let text = "protocol = \"same-env\"\nmachine = \"car\"\nassignments = [{ train = \"N1\", test = \"N3\" }]\n";
        assert!(matches!(ExperimentSpec::from_toml(text, Path::new(".")), Err(Error::Spec(_))));
        let text = "protocol = \"same-env\"\nmachine = \"car\"\nseeds = [1, 1]\n";
        assert!(matches!(ExperimentSpec::from_toml(text, Path::new(".")), Err(Error::Spec(_))));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = "protocol = \"same-env\"\nmachine = \"car\"\nepochs = 3\n";
        assert!(matches!(ExperimentSpec::from_toml(text, Path::new(".")), Err(Error::Config(_))));
    }
}
