//! Deterministic stand-ins for toy-machine recordings and factory noise.
//!
//! A machine sound is a harmonic stack on a machine-specific fundamental with
//! slow amplitude modulation. Each fault type adds its own signature in a
//! distinct spectral region and the damage level sets the signature depth.
//! Noise environments are white noise passed through fixed band-pass
//! envelopes. All constants live in [`SynthConfig`].

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("unknown name {0:?}")]
    UnknownName(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Machine {
    Car,
    Train,
}

impl Machine {
    pub const ALL: [Machine; 2] = [Machine::Car, Machine::Train];

    pub fn name(self) -> &'static str {
        match self {
            Machine::Car => "car",
            Machine::Train => "train",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultType {
    A,
    B,
    C,
    D,
}

impl FaultType {
    pub const ALL: [FaultType; 4] = [FaultType::A, FaultType::B, FaultType::C, FaultType::D];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DamageLevel {
    Low,
    Middle,
    High,
}

impl DamageLevel {
    pub const ALL: [DamageLevel; 3] = [DamageLevel::Low, DamageLevel::Middle, DamageLevel::High];
}

/// One of the 13 machine conditions. Index 0 is normal; faults follow in
/// (type, level) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MachineCondition {
    Normal,
    Fault { fault: FaultType, level: DamageLevel },
}

impl MachineCondition {
    pub fn all() -> [MachineCondition; 13] {
        core::array::from_fn(|i| Self::from_index(i).expect("index < 13"))
    }

    pub fn index(self) -> usize {
        match self {
            MachineCondition::Normal => 0,
            MachineCondition::Fault { fault, level } => 1 + fault as usize * 3 + level as usize,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(MachineCondition::Normal),
            1..=12 => Some(MachineCondition::Fault {
                fault: FaultType::ALL[(i - 1) / 3],
                level: DamageLevel::ALL[(i - 1) % 3],
            }),
            _ => None,
        }
    }

    pub fn is_normal(self) -> bool {
        self == MachineCondition::Normal
    }
}

impl fmt::Display for MachineCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MachineCondition::Normal => f.write_str("normal"),
            MachineCondition::Fault { fault, level } => {
                let t = ["a", "b", "c", "d"][*fault as usize];
                let l = ["low", "middle", "high"][*level as usize];
                write!(f, "{t}-{l}")
            }
        }
    }
}

impl FromStr for MachineCondition {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::all()
            .into_iter()
            .find(|c| {
                let mut buf = ArrayString::default();
                fmt::write(&mut buf, format_args!("{c}")).is_ok() && buf.as_str() == s
            })
            .ok_or_else(|| SynthError::UnknownName(s.into()))
    }
}

// Small fixed buffer so name parsing needs no allocation.
#[derive(Default)]
struct ArrayString {
    buf: [u8; 16],
    len: usize,
}

impl ArrayString {
    fn as_str(&self) -> &str {
        core::str::from_utf8(&self.buf[..self.len]).unwrap_or("")
    }
}

impl fmt::Write for ArrayString {
    fn write_str(&mut self, s: &str) -> fmt::Result {
        let end = self.len + s.len();
        if end > self.buf.len() {
            return Err(fmt::Error);
        }
        self.buf[self.len..end].copy_from_slice(s.as_bytes());
        self.len = end;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseEnvironment {
    N1,
    N2,
    N3,
    N4,
}

impl NoiseEnvironment {
    pub const ALL: [NoiseEnvironment; 4] =
        [NoiseEnvironment::N1, NoiseEnvironment::N2, NoiseEnvironment::N3, NoiseEnvironment::N4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["N1", "N2", "N3", "N4"][self as usize]
    }
}

impl fmt::Display for NoiseEnvironment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseEnvironment {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SynthError::UnknownName(s.into()))
    }
}

impl FromStr for Machine {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SynthError::UnknownName(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineProfile {
    pub fundamental_hz: f64,
    pub harmonics: u32,
    /// Harmonic k has amplitude `k^-tilt`.
    pub tilt: f64,
    pub am_rate_hz: f64,
    pub am_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBand {
    pub center_hz: f64,
    pub q: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEnvelope {
    /// Gain of the unfiltered white component.
    pub floor: f64,
    pub bands: Vec<NoiseBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSignatures {
    /// Type a: inharmonic partials at these multiples of the fundamental.
    pub a_partial_ratios: Vec<f64>,
    /// Type b: narrow-band resonance.
    pub b_center_hz: f64,
    pub b_q: f64,
    /// Type c: subharmonics at these odd multiples of half the fundamental.
    pub c_half_orders: Vec<u32>,
    /// Type d: periodic knocks, each a damped sinusoid.
    pub d_rate_hz: f64,
    pub d_ring_hz: f64,
    pub d_decay_s: f64,
}

/// Generator constants. Versioned so corpora can be regenerated bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub version: u32,
    pub car: MachineProfile,
    pub train: MachineProfile,
    pub faults: FaultSignatures,
    /// Signature amplitude relative to the fundamental for low/middle/high.
    pub damage_depth: [f64; 3],
    pub f0_jitter: f64,
    pub amp_jitter: f64,
    /// White floor inside machine sounds, relative to the fundamental.
    pub machine_floor: f64,
    pub machine_rms: f64,
    pub noise_rms: f64,
    pub environments: [NoiseEnvelope; 4],
}

impl Default for SynthConfig {
    fn default() -> Self {
        let band = |center_hz, q, gain| NoiseBand { center_hz, q, gain };
        SynthConfig {
            version: 1,
            car: MachineProfile { fundamental_hz: 140.0, harmonics: 10, tilt: 1.0, am_rate_hz: 3.0, am_depth: 0.1 },
            train: MachineProfile { fundamental_hz: 90.0, harmonics: 14, tilt: 0.8, am_rate_hz: 1.5, am_depth: 0.3 },
            faults: FaultSignatures {
                a_partial_ratios: vec![3.37, 5.61],
                b_center_hz: 2600.0,
                b_q: 8.0,
                c_half_orders: vec![1, 3, 5],
                d_rate_hz: 7.0,
                d_ring_hz: 1800.0,
                d_decay_s: 0.012,
            },
            damage_depth: [0.4, 0.7, 1.2],
            f0_jitter: 0.005,
            amp_jitter: 0.05,
            machine_floor: 0.003,
            machine_rms: 0.1,
            noise_rms: 0.1,
            environments: [
                NoiseEnvelope { floor: 0.05, bands: vec![band(150.0, 0.7, 1.0), band(500.0, 1.0, 0.5)] },
                NoiseEnvelope { floor: 0.05, bands: vec![band(1000.0, 1.2, 1.0), band(2000.0, 2.0, 0.4)] },
                NoiseEnvelope { floor: 0.1, bands: vec![band(3000.0, 0.8, 1.0), band(6000.0, 1.0, 0.6)] },
                NoiseEnvelope { floor: 0.05, bands: vec![band(300.0, 2.0, 0.8), band(2400.0, 2.0, 0.8)] },
            ],
        }
    }
}

impl SynthConfig {
    pub fn profile(&self, machine: Machine) -> &MachineProfile {
        match machine {
            Machine::Car => &self.car,
            Machine::Train => &self.train,
        }
    }
}

const TAG_MACHINE: u64 = 0x6d61_6368;
const TAG_NOISE: u64 = 0x6e6f_6973;

fn sample_count(duration_s: f64, sample_rate: u32) -> Result<usize, SynthError> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(SynthError::NonPositiveDuration(duration_s));
    }
    if sample_rate == 0 {
        return Err(SynthError::ZeroSampleRate);
    }
    Ok((duration_s * f64::from(sample_rate)).round() as usize)
}

/// RBJ band-pass biquad with 0 dB peak gain.
struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn bandpass(center_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Biquad { b0: alpha / a0, b2: -alpha / a0, a1: -2.0 * w0.cos() / a0, a2: (1.0 - alpha) / a0 }
    }

    fn run(&self, input: &[f64], out: &mut [f64], gain: f64) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for (o, &x) in out.iter_mut().zip(input) {
            let y = self.b0 * x + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            *o += gain * y;
        }
    }
}

fn white(n: usize, rng: &mut rng::Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize_rms(mut samples: Vec<f64>, target: f64, sample_rate: u32) -> AudioClip {
    let r = crate::audio::rms(&samples).unwrap_or(0.0);
    if r > 0.0 {
        let g = target / r;
        samples.iter_mut().for_each(|s| *s *= g);
    }
    AudioClip::new(samples, sample_rate).expect("synthesized samples are finite")
}

fn add_sine(out: &mut [f64], freq: f64, amp: f64, phase: f64, sample_rate: f64) {
    if freq >= 0.5 * sample_rate {
        return;
    }
    let w = 2.0 * PI * freq / sample_rate;
    for (i, o) in out.iter_mut().enumerate() {
        *o += amp * (w * i as f64 + phase).sin();
    }
}

/// Synthesizes a machine sound. Output is a pure function of the arguments.
pub fn gen_machine_sound(
    cfg: &SynthConfig,
    machine: Machine,
    condition: MachineCondition,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioClip, SynthError> {
    let n = sample_count(duration_s, sample_rate)?;
    let sr = f64::from(sample_rate);
    let mut rng = rng::keyed(seed, &[TAG_MACHINE, machine as u64, condition.index() as u64]);
    let profile = cfg.profile(machine);
    let f0 = profile.fundamental_hz * (1.0 + cfg.f0_jitter * rng.random_range(-1.0..=1.0));
    let jitter = |rng: &mut rng::Rng| 1.0 + cfg.amp_jitter * rng.random_range(-1.0..=1.0);
    let phase = |rng: &mut rng::Rng| rng.random_range(0.0..2.0 * PI);

    let mut stack = vec![0.0; n];
    for k in 1..=profile.harmonics {
        let amp = f64::from(k).powf(-profile.tilt) * jitter(&mut rng);
        add_sine(&mut stack, f64::from(k) * f0, amp, phase(&mut rng), sr);
    }
    let am_phase = phase(&mut rng);
    let am_w = 2.0 * PI * profile.am_rate_hz / sr;
    for (i, s) in stack.iter_mut().enumerate() {
        *s *= 1.0 + profile.am_depth * (am_w * i as f64 + am_phase).sin();
    }

    if let MachineCondition::Fault { fault, level } = condition {
        let depth = cfg.damage_depth[level as usize] * jitter(&mut rng);
        let sig = &cfg.faults;
        match fault {
            FaultType::A => {
                for &r in &sig.a_partial_ratios {
                    add_sine(&mut stack, r * f0, depth, phase(&mut rng), sr);
                }
            }
            FaultType::B => {
                let mut band = vec![0.0; n];
                if sig.b_center_hz < 0.5 * sr {
                    Biquad::bandpass(sig.b_center_hz, sig.b_q, sr).run(&white(n, &mut rng), &mut band, 1.0);
                }
                // same rms as a sine of amplitude `depth`
                let r = crate::audio::rms(&band).unwrap_or(0.0);
                if r > 0.0 {
                    let g = depth * core::f64::consts::FRAC_1_SQRT_2 / r;
                    stack.iter_mut().zip(&band).for_each(|(s, b)| *s += g * b);
                }
            }
            FaultType::C => {
                for &o in &sig.c_half_orders {
                    add_sine(&mut stack, f64::from(o) * 0.5 * f0, depth, phase(&mut rng), sr);
                }
            }
            FaultType::D => {
                // knock amplitude chosen so the train's mean power matches a
                // sine of amplitude `depth`
                let amp = depth * (2.0 / (sig.d_rate_hz * sig.d_decay_s)).sqrt() * 0.5;
                let period = sr / sig.d_rate_hz;
                let ring_w = 2.0 * PI * sig.d_ring_hz / sr;
                let tail = (sig.d_decay_s * sr * 8.0) as usize;
                let mut start = period * rng.random_range(0.0..1.0);
                while (start as usize) < n {
                    let s0 = start as usize;
                    let ph = phase(&mut rng);
                    for j in 0..tail.min(n - s0) {
                        let t = j as f64 / sr;
                        stack[s0 + j] += amp * (-t / sig.d_decay_s).exp() * (ring_w * j as f64 + ph).sin();
                    }
                    start += period * (1.0 + 0.05 * rng.random_range(-1.0..=1.0));
                }
            }
        }
    }

    for (s, w) in stack.iter_mut().zip(white(n, &mut rng)) {
        *s += cfg.machine_floor * w;
    }
    Ok(normalize_rms(stack, cfg.machine_rms, sample_rate))
}

/// Synthesizes environment noise: white noise shaped by the environment's
/// band envelope, normalized to the configured rms.
pub fn gen_noise(
    cfg: &SynthConfig,
    env: NoiseEnvironment,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioClip, SynthError> {
    let n = sample_count(duration_s, sample_rate)?;
    let sr = f64::from(sample_rate);
    let mut rng = rng::keyed(seed, &[TAG_NOISE, env as u64]);
    let envelope = &cfg.environments[env.index()];
    let mut out: Vec<f64> = white(n, &mut rng).into_iter().map(|w| envelope.floor * w).collect();
    for band in &envelope.bands {
        let w = white(n, &mut rng);
        if band.center_hz < 0.475 * sr {
            Biquad::bandpass(band.center_hz, band.q, sr).run(&w, &mut out, band.gain);
        }
    }
    Ok(normalize_rms(out, cfg.noise_rms, sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    /// Power spectrum of one segment by direct DFT; independent of the
    /// crate's FFT.
    fn dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * i % n) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    fn averaged_spectrum(clip: &AudioClip, seg: usize, max_segs: usize) -> Vec<f64> {
        let mut acc = vec![0.0; seg / 2 + 1];
        let mut count = 0;
        for chunk in clip.samples().chunks_exact(seg).take(max_segs) {
            for (a, p) in acc.iter_mut().zip(dft_power(chunk)) {
                *a += p;
            }
            count += 1;
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        acc
    }

    fn centroid(power: &[f64], bin_hz: f64) -> f64 {
        let total: f64 = power.iter().sum();
        power.iter().enumerate().map(|(k, p)| k as f64 * bin_hz * p).sum::<f64>() / total
    }

    #[test]
    fn conditions_enumerate_thirteen() {
        let all = MachineCondition::all();
        assert_eq!(all.len(), 13);
        for (i, c) in all.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.to_string().parse::<MachineCondition>().unwrap(), *c);
        }
        assert!(MachineCondition::from_index(13).is_none());
        assert_eq!(all[12].to_string(), "d-high");
        assert_eq!("N3".parse::<NoiseEnvironment>().unwrap(), NoiseEnvironment::N3);
        assert!("N5".parse::<NoiseEnvironment>().is_err());
    }

    #[test]
    fn machine_sound_is_deterministic_and_sized() {
        let cfg = SynthConfig::default();
        let c = MachineCondition::from_index(5).unwrap();
        let a = gen_machine_sound(&cfg, Machine::Car, c, 1.5, 8000, 9).unwrap();
        let b = gen_machine_sound(&cfg, Machine::Car, c, 1.5, 8000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12000);
        let other = gen_machine_sound(&cfg, Machine::Car, c, 1.5, 8000, 10).unwrap();
        assert_ne!(a, other);
        assert!(matches!(
            gen_machine_sound(&cfg, Machine::Car, c, 0.0, 8000, 9),
            Err(SynthError::NonPositiveDuration(_))
        ));
        assert!(gen_noise(&cfg, NoiseEnvironment::N1, -1.0, 8000, 9).is_err());
    }

    #[test]
    fn fault_shifts_spectral_centroid() {
        let cfg = SynthConfig::default();
        let fault = MachineCondition::Fault { fault: FaultType::A, level: DamageLevel::High };
        for machine in Machine::ALL {
            let normal = gen_machine_sound(&cfg, machine, MachineCondition::Normal, 1.0, 8000, 3).unwrap();
            let faulty = gen_machine_sound(&cfg, machine, fault, 1.0, 8000, 3).unwrap();
            let bin_hz = 8000.0 / 512.0;
            let cn = centroid(&averaged_spectrum(&normal, 512, 8), bin_hz);
            let cf = centroid(&averaged_spectrum(&faulty, 512, 8), bin_hz);
            assert!(cf - cn > 0.0, "{machine:?}: normal {cn} fault {cf}");
        }
    }

    #[test]
    fn noise_is_deterministic_with_bounded_rms() {
        let cfg = SynthConfig::default();
        let a = gen_noise(&cfg, NoiseEnvironment::N2, 1.0, 8000, 4).unwrap();
        assert_eq!(a, gen_noise(&cfg, NoiseEnvironment::N2, 1.0, 8000, 4).unwrap());
        for seed in 0..100 {
            let env = NoiseEnvironment::ALL[seed % 4];
            let r = gen_noise(&cfg, env, 0.5, 8000, seed as u64).unwrap().rms().unwrap();
            assert!((0.05..=0.5).contains(&r), "rms {r}");
        }
    }

    #[test]
    fn environments_have_distinct_band_ratios() {
        let cfg = SynthConfig::default();
        // fraction of power below 1 kHz over 10 s clips
        let low_ratio = |env| {
            let clip = gen_noise(&cfg, env, 10.0, 8000, 21).unwrap();
            let p = averaged_spectrum(&clip, 256, 312);
            let cut = (1000.0 / (8000.0 / 256.0)) as usize;
            p[..cut].iter().sum::<f64>() / p.iter().sum::<f64>()
        };
        let ratios: Vec<f64> = NoiseEnvironment::ALL.iter().map(|&e| low_ratio(e)).collect();
        assert!((ratios[0] - ratios[3]).abs() > 0.15, "{ratios:?}");
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(cfg.environments[i], cfg.environments[j]);
            }
        }
    }
}
