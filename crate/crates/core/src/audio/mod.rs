//! Mono audio clips and the signal measures used by mixing and augmentation.

pub mod wav;

pub use wav::WavError;

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("empty clip")]
    Empty,
    #[error("shift of {shift_s} s exceeds clip duration {duration_s} s")]
    ShiftTooLong { shift_s: f64, duration_s: f64 },
    #[error("negative or non-finite shift {0}")]
    BadShift(f64),
    #[error(transparent)]
    Wav(#[from] WavError),
}

/// A mono waveform with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(alloc::vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }

    /// Root-mean-square amplitude.
    pub fn rms(&self) -> Result<f64, AudioError> {
        rms(&self.samples)
    }

    /// Circular shift to the right by `round(shift_s * sample_rate)` samples.
    /// A shift of the full duration is the identity.
    pub fn time_shift(&self, shift_s: f64) -> Result<AudioClip, AudioError> {
        if !shift_s.is_finite() || shift_s < 0.0 {
            return Err(AudioError::BadShift(shift_s));
        }
        let duration_s = self.duration_s();
        if shift_s > duration_s {
            return Err(AudioError::ShiftTooLong { shift_s, duration_s });
        }
        let n = self.samples.len();
        if n == 0 {
            return Ok(self.clone());
        }
        let k = (shift_s * f64::from(self.sample_rate)).round() as usize % n;
        let mut samples = Vec::with_capacity(n);
        samples.extend_from_slice(&self.samples[n - k..]);
        samples.extend_from_slice(&self.samples[..n - k]);
        Ok(AudioClip { samples, sample_rate: self.sample_rate })
    }
}

pub fn rms(samples: &[f64]) -> Result<f64, AudioError> {
    if samples.is_empty() {
        return Err(AudioError::Empty);
    }
    let ms = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    Ok(ms.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn rms_of_constants() {
        assert_eq!(AudioClip::silence(10, 8000).unwrap().rms().unwrap(), 0.0);
        assert_eq!(AudioClip::new(vec![1.0; 10], 8000).unwrap().rms().unwrap(), 1.0);
        assert_eq!(rms(&[]), Err(AudioError::Empty));
    }

    #[test]
    fn rms_of_whole_period_sine() {
        // 100 Hz at 8 kHz: 80 samples per period, 50 periods
        let sr = 8000.0;
        let s: Vec<f64> = (0..4000).map(|i| (2.0 * core::f64::consts::PI * 100.0 * i as f64 / sr).sin()).collect();
        let oracle = (s.iter().map(|x| x * x).sum::<f64>() / 4000.0).sqrt();
        let got = rms(&s).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_construction() {
        assert_eq!(AudioClip::new(vec![0.0], 0), Err(AudioError::ZeroSampleRate));
        assert_eq!(AudioClip::new(vec![0.0, f64::NAN], 1), Err(AudioError::NonFinite(1)));
    }

    #[test]
    fn time_shift_moves_impulse() {
        let mut s = vec![0.0; 32000];
        s[0] = 1.0;
        let clip = AudioClip::new(s, 16000).unwrap();
        let shifted = clip.time_shift(1.0).unwrap();
        // index arithmetic: 1 s * 16000 Hz = sample 16000
        assert_eq!(shifted.samples().iter().position(|&v| v == 1.0), Some(16000));
        assert_eq!(shifted.len(), clip.len());
        assert_eq!(clip.time_shift(0.0).unwrap(), clip);
        assert_eq!(clip.time_shift(2.0).unwrap(), clip);
        assert!(matches!(clip.time_shift(2.1), Err(AudioError::ShiftTooLong { .. })));
        assert!(matches!(clip.time_shift(-0.1), Err(AudioError::BadShift(_))));
    }

    proptest! {
        #[test]
        fn rms_is_homogeneous(xs in prop::collection::vec(-1.0f64..1.0, 1..200), gain in -4.0f64..4.0) {
            let clip = AudioClip::new(xs, 8000).unwrap();
            let lhs = clip.scaled(gain).rms().unwrap();
            let rhs = gain.abs() * clip.rms().unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn time_shift_preserves_rms(xs in prop::collection::vec(-1.0f64..1.0, 1..400), frac in 0.0f64..=1.0) {
            let clip = AudioClip::new(xs, 100).unwrap();
            let shifted = clip.time_shift(frac * clip.duration_s()).unwrap();
            let mut a = clip.samples().to_vec();
            let mut b = shifted.samples().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
            prop_assert!((shifted.rms().unwrap() - clip.rms().unwrap()).abs() <= 1e-12);
        }
    }
}
