//! Train/validation/test assembly: SNR mixing, noise augmentation and batch
//! sampling.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError};
use crate::rng;
use crate::synth::{self, Machine, MachineCondition, NoiseEnvironment, SynthConfig, SynthError};
use crate::{NOISE_LABEL, NUM_CONDITIONS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("signal and noise differ in length or sample rate ({0} vs {1} samples)")]
    LengthMismatch(usize, usize),
    #[error("silent {0} input")]
    Silent(&'static str),
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("scaled split has fewer than one clip per fault class (scale {0})")]
    EmptyClass(f64),
    #[error("batch of {requested} exceeds {family} population of {available}")]
    BatchTooLarge { family: &'static str, requested: usize, available: usize },
    #[error("not enough distinct clips: {0}")]
    InsufficientClips(String),
    #[error("clip {0} appears in more than one split")]
    Overlap(String),
    #[error("invalid SNR range [{0}, {1}]")]
    BadSnrRange(f64, f64),
    #[error("clip source: {0}")]
    Source(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// 14-way evaluation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Condition(MachineCondition),
    Noise,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Condition(c) => c.index(),
            Label::Noise => NOISE_LABEL,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        if i == NOISE_LABEL {
            Some(Label::Noise)
        } else {
            MachineCondition::from_index(i).map(Label::Condition)
        }
    }

    pub fn is_noise(self) -> bool {
        self == Label::Noise
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Condition(c) => c.fmt(f),
            Label::Noise => f.write_str("noise"),
        }
    }
}

impl core::str::FromStr for Label {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "noise" {
            Ok(Label::Noise)
        } else {
            s.parse().map(Label::Condition)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Identity of an underlying source recording.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClipId(pub String);

impl fmt::Display for ClipId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct SourceClip {
    pub id: ClipId,
    pub clip: AudioClip,
}

/// The two addends of a mixture after gain and peak rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct MixComponents {
    pub signal: AudioClip,
    pub noise: AudioClip,
}

#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub clip: AudioClip,
    pub label: Label,
    pub env: NoiseEnvironment,
    /// Mixing SNR; `None` for noise-only examples.
    pub snr_db: Option<f64>,
    /// Source recordings this example was built from.
    pub sources: Vec<ClipId>,
    pub components: Option<Box<MixComponents>>,
}

impl LabeledExample {
    /// Stable name, used for manifests.
    pub fn name(&self) -> String {
        self.sources.iter().map(|s| s.0.as_str()).collect::<Vec<_>>().join("+")
    }
}

/// Clip counts of one split. Normal is four times the per-fault-class count
/// and noise equals the machine total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub normal: usize,
    pub per_fault: usize,
    pub noise: usize,
}

impl FamilyCounts {
    pub fn from_per_fault(per_fault: usize) -> Self {
        let normal = 4 * per_fault;
        FamilyCounts { normal, per_fault, noise: normal + (NUM_CONDITIONS - 1) * per_fault }
    }

    pub fn fault_total(&self) -> usize {
        (NUM_CONDITIONS - 1) * self.per_fault
    }

    pub fn machine_total(&self) -> usize {
        self.normal + self.fault_total()
    }

    pub fn of(&self, condition: MachineCondition) -> usize {
        if condition.is_normal() {
            self.normal
        } else {
            self.per_fault
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: FamilyCounts,
    pub validation: FamilyCounts,
    pub test: FamilyCounts,
}

impl SplitSpec {
    /// Toy car counts.
    pub fn table1() -> Self {
        SplitSpec {
            train: FamilyCounts::from_per_fault(50),
            validation: FamilyCounts::from_per_fault(25),
            test: FamilyCounts::from_per_fault(25),
        }
    }

    /// Toy train counts.
    pub fn table2() -> Self {
        SplitSpec {
            train: FamilyCounts::from_per_fault(120),
            validation: FamilyCounts::from_per_fault(40),
            test: FamilyCounts::from_per_fault(40),
        }
    }

    pub fn for_machine(machine: Machine) -> Self {
        match machine {
            Machine::Car => Self::table1(),
            Machine::Train => Self::table2(),
        }
    }

    /// Scales the per-fault-class counts (rounded half away from zero) and
    /// rederives normal and noise counts, so the 4:1 and noise = machine
    /// ratios survive scaling.
    pub fn scaled(&self, factor: f64) -> Result<Self, DatasetError> {
        let scale = |c: FamilyCounts| {
            let n = (c.per_fault as f64 * factor).round();
            if !(n >= 1.0) {
                return Err(DatasetError::EmptyClass(factor));
            }
            Ok(FamilyCounts::from_per_fault(n as usize))
        };
        Ok(SplitSpec { train: scale(self.train)?, validation: scale(self.validation)?, test: scale(self.test)? })
    }

    pub fn get(&self, split: Split) -> FamilyCounts {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[LabeledExample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone)]
pub struct Mixture {
    pub clip: AudioClip,
    /// Gain applied to the noise before summing.
    pub noise_gain: f64,
    /// Whole-clip rescale applied when the sum exceeded full scale.
    pub peak_scale: f64,
}

impl Mixture {
    pub fn components(&self, signal: &AudioClip, noise: &AudioClip) -> MixComponents {
        MixComponents { signal: signal.scaled(self.peak_scale), noise: noise.scaled(self.noise_gain * self.peak_scale) }
    }
}

/// `signal + g * noise` with `g` chosen so that the full-clip rms ratio of
/// the addends is `snr_db` (amplitude convention). `+inf` means no noise.
/// A mixture peaking above 1 is rescaled as a whole, which keeps the SNR.
pub fn mix_at_snr(signal: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<Mixture, DatasetError> {
    if signal.len() != noise.len() || signal.sample_rate() != noise.sample_rate() {
        return Err(DatasetError::LengthMismatch(signal.len(), noise.len()));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(DatasetError::OutOfRange { name: "snr_db", value: snr_db, lo: f64::MIN, hi: f64::INFINITY });
    }
    if snr_db == f64::INFINITY {
        return Ok(Mixture { clip: signal.clone(), noise_gain: 0.0, peak_scale: 1.0 });
    }
    let rs = signal.rms()?;
    let rn = noise.rms()?;
    if rs == 0.0 {
        return Err(DatasetError::Silent("signal"));
    }
    if rn == 0.0 {
        return Err(DatasetError::Silent("noise"));
    }
    let g = rs / (rn * 10.0.powf(snr_db / 20.0));
    let mut mixed: Vec<f64> = signal.samples().iter().zip(noise.samples()).map(|(s, n)| s + g * n).collect();
    let peak = mixed.iter().fold(0.0, |m: f64, s| m.max(s.abs()));
    let peak_scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if peak_scale != 1.0 {
        mixed.iter_mut().for_each(|s| *s *= peak_scale);
    }
    Ok(Mixture { clip: AudioClip::new(mixed, signal.sample_rate())?, noise_gain: g, peak_scale })
}

/// SNR of two addends in dB.
pub fn measured_snr_db(signal: &AudioClip, noise: &AudioClip) -> Result<f64, AudioError> {
    Ok(20.0 * (signal.rms()? / noise.rms()?).log10())
}

pub const MAX_AUGMENT_SHIFT_S: f64 = 2.0;
pub const AUGMENT_GAIN_RANGE: (f64, f64) = (0.5, 2.0);

/// Circular time shift followed by a volume change.
pub fn augment_noise(clip: &AudioClip, shift_s: f64, gain: f64) -> Result<AudioClip, DatasetError> {
    if !(0.0..=MAX_AUGMENT_SHIFT_S).contains(&shift_s) {
        return Err(DatasetError::OutOfRange { name: "shift_s", value: shift_s, lo: 0.0, hi: MAX_AUGMENT_SHIFT_S });
    }
    let (lo, hi) = AUGMENT_GAIN_RANGE;
    if !(lo..=hi).contains(&gain) {
        return Err(DatasetError::OutOfRange { name: "gain", value: gain, lo, hi });
    }
    Ok(clip.time_shift(shift_s)?.scaled(gain))
}

const TAG_AUGMENT: u64 = 0x6175_676d;
const TAG_SNR: u64 = 0x736e_7264;
const TAG_CLIP: u64 = 0x636c_6970;

/// Seeded augmentation parameters for one noise clip in one epoch.
pub fn augment_draw(seed: u64, epoch: usize, clip_index: usize, duration_s: f64) -> (f64, f64) {
    let mut r = rng::keyed(seed, &[TAG_AUGMENT, epoch as u64, clip_index as u64]);
    let max_shift = MAX_AUGMENT_SHIFT_S.min(duration_s);
    let shift = r.random_range(0.0..=max_shift);
    let gain = r.random_range(AUGMENT_GAIN_RANGE.0..=AUGMENT_GAIN_RANGE.1);
    (shift, gain)
}

/// Where clean machine sounds and environment noises come from.
/// Indices within one (machine, condition) or environment must map to
/// distinct recordings.
pub trait ClipSource {
    fn machine_clip(
        &self,
        machine: Machine,
        condition: MachineCondition,
        index: usize,
    ) -> Result<SourceClip, DatasetError>;

    fn noise_clip(&self, env: NoiseEnvironment, index: usize) -> Result<SourceClip, DatasetError>;
}

/// Clips produced on demand by the synthetic generator.
#[derive(Debug, Clone)]
pub struct SynthSource<'a> {
    pub config: &'a SynthConfig,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl ClipSource for SynthSource<'_> {
    fn machine_clip(
        &self,
        machine: Machine,
        condition: MachineCondition,
        index: usize,
    ) -> Result<SourceClip, DatasetError> {
        let seed = rng::derive(self.seed, &[TAG_CLIP, 0, machine as u64, condition.index() as u64, index as u64]);
        let clip = synth::gen_machine_sound(self.config, machine, condition, self.duration_s, self.sample_rate, seed)?;
        Ok(SourceClip { id: ClipId(format!("{}/{}/{}", machine.name(), condition, index)), clip })
    }

    fn noise_clip(&self, env: NoiseEnvironment, index: usize) -> Result<SourceClip, DatasetError> {
        let seed = rng::derive(self.seed, &[TAG_CLIP, 1, env as u64, index as u64]);
        let clip = synth::gen_noise(self.config, env, self.duration_s, self.sample_rate, seed)?;
        Ok(SourceClip { id: ClipId(format!("noise/{}/{}", env, index)), clip })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildParams {
    pub machine: Machine,
    pub env_train: NoiseEnvironment,
    pub env_test: NoiseEnvironment,
    pub snr_range_db: (f64, f64),
    pub seed: u64,
    /// Keep mixture addends on each example (for SNR audits).
    pub keep_components: bool,
}

/// First machine-clip index (per condition) and noise-clip index (per
/// environment) used by `split`. Each split owns a fixed range, so a split's
/// contents depend only on its own environment.
fn split_offsets(spec: &SplitSpec, split: Split) -> (usize, usize, usize) {
    let mut normal = 0;
    let mut fault = 0;
    let mut noise = 0;
    for s in Split::ALL.into_iter().take_while(|&s| s != split) {
        let c = spec.get(s);
        normal += c.normal;
        fault += c.per_fault;
        noise += c.machine_total() + c.noise;
    }
    (normal, fault, noise)
}

/// Builds one split. Validation draws noise from `env_train`, test from
/// `env_test`.
pub fn build_split(
    spec: &SplitSpec,
    params: &BuildParams,
    split: Split,
    source: &dyn ClipSource,
) -> Result<Vec<LabeledExample>, DatasetError> {
    let (lo, hi) = params.snr_range_db;
    if !(lo <= hi) || lo.is_nan() || hi.is_nan() || lo == f64::NEG_INFINITY {
        return Err(DatasetError::BadSnrRange(lo, hi));
    }
    let env = if split == Split::Test { params.env_test } else { params.env_train };
    let si = split as usize;
    let counts = spec.get(split);
    let (normal_base, fault_base, mut next_noise) = split_offsets(spec, split);
    let mut examples = Vec::with_capacity(counts.machine_total() + counts.noise);
    for condition in MachineCondition::all() {
        let base = if condition.is_normal() { normal_base } else { fault_base };
        for j in 0..counts.of(condition) {
            let signal = source.machine_clip(params.machine, condition, base + j)?;
            let noise = source.noise_clip(env, next_noise)?;
            next_noise += 1;
            let snr = if lo == hi {
                lo
            } else {
                rng::keyed(params.seed, &[TAG_SNR, si as u64, condition.index() as u64, j as u64]).random_range(lo..=hi)
            };
            let mix = mix_at_snr(&signal.clip, &noise.clip, snr)?;
            let components = params.keep_components.then(|| Box::new(mix.components(&signal.clip, &noise.clip)));
            examples.push(LabeledExample {
                clip: mix.clip,
                label: Label::Condition(condition),
                env,
                snr_db: Some(snr),
                sources: alloc::vec![signal.id, noise.id],
                components,
            });
        }
    }
    for _ in 0..counts.noise {
        let noise = source.noise_clip(env, next_noise)?;
        next_noise += 1;
        examples.push(LabeledExample {
            clip: noise.clip,
            label: Label::Noise,
            env,
            snr_db: None,
            sources: alloc::vec![noise.id],
            components: None,
        });
    }
    Ok(examples)
}

/// Builds all three splits and checks that no source recording is used
/// twice. The train and validation splits do not depend on `env_test`.
pub fn build_splits(spec: &SplitSpec, params: &BuildParams, source: &dyn ClipSource) -> Result<Splits, DatasetError> {
    let mut seen: BTreeSet<ClipId> = BTreeSet::new();
    let mut out: [Vec<LabeledExample>; 3] = Default::default();
    for (si, split) in Split::ALL.into_iter().enumerate() {
        out[si] = build_split(spec, params, split, source)?;
        for ex in &out[si] {
            for id in &ex.sources {
                if !seen.insert(id.clone()) {
                    return Err(DatasetError::Overlap(id.0.clone()));
                }
            }
        }
    }
    let [train, validation, test] = out;
    Ok(Splits { train, validation, test })
}

/// Machine and noise sampling order for one epoch. Machine examples are
/// drawn without replacement; noise batches wrap around their permutation.
#[derive(Debug, Clone)]
pub struct EpochPlan {
    machine_order: Vec<usize>,
    noise_order: Vec<usize>,
    batch_machine: usize,
    batch_noise: usize,
}

const TAG_EPOCH: u64 = 0x6570_6f63;

impl EpochPlan {
    pub fn new(
        n_machine: usize,
        n_noise: usize,
        batch_machine: usize,
        batch_noise: usize,
        seed: u64,
        epoch: usize,
    ) -> Result<Self, DatasetError> {
        if batch_machine == 0 || batch_machine > n_machine {
            return Err(DatasetError::BatchTooLarge {
                family: "machine",
                requested: batch_machine,
                available: n_machine,
            });
        }
        if batch_noise > n_noise {
            return Err(DatasetError::BatchTooLarge { family: "noise", requested: batch_noise, available: n_noise });
        }
        let mut r = rng::keyed(seed, &[TAG_EPOCH, epoch as u64]);
        let machine_order = rng::permutation(n_machine, &mut r);
        let noise_order = rng::permutation(n_noise, &mut r);
        Ok(EpochPlan { machine_order, noise_order, batch_machine, batch_noise })
    }

    /// Number of full machine batches in the epoch.
    pub fn steps(&self) -> usize {
        self.machine_order.len() / self.batch_machine
    }

    pub fn batch(&self, step: usize) -> (Vec<usize>, Vec<usize>) {
        let m = self.machine_order[step * self.batch_machine..(step + 1) * self.batch_machine].to_vec();
        let n = (0..self.batch_noise)
            .map(|j| self.noise_order[(step * self.batch_noise + j) % self.noise_order.len()])
            .collect();
        (m, n)
    }
}

/// Draws the machine and noise batch for `(epoch, step)` from a split.
pub fn sample_batch(
    split: &[LabeledExample],
    batch_machine: usize,
    batch_noise: usize,
    seed: u64,
    epoch: usize,
    step: usize,
) -> Result<(Vec<&LabeledExample>, Vec<&LabeledExample>), DatasetError> {
    let (noise, machine): (Vec<&LabeledExample>, Vec<&LabeledExample>) = split.iter().partition(|e| e.label.is_noise());
    let plan = EpochPlan::new(machine.len(), noise.len(), batch_machine, batch_noise, seed, epoch)?;
    let (mi, ni) = plan.batch(step % plan.steps().max(1));
    Ok((mi.into_iter().map(|i| machine[i]).collect(), ni.into_iter().map(|i| noise[i]).collect()))
}
