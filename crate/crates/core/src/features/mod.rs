//! Log-Mel front end: Hann-windowed non-centered STFT, HTK mel filterbank,
//! log compression, and input batch normalization per mel bin.

pub mod fft;
pub mod norm;

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::tensor::Matrix;
use fft::Fft;
pub use norm::{Mode, RunningStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("clip of {len} samples is shorter than one {n_fft}-sample frame")]
    TooShort { len: usize, n_fft: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(&'static str),
    #[error("mel filter {0} covers no FFT bin; too many mel bands for this resolution")]
    EmptyFilter(usize),
    #[error("feature shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl FeatureConfig {
    /// 16 kHz, 128 mel bands; 192000 samples map to 374 frames.
    pub fn full_scale() -> Self {
        FeatureConfig { n_fft: 1024, hop: 512, n_mels: 128, fmin: 0.0, fmax: 8000.0, log_floor: 1e-10 }
    }

    /// 8 kHz, 32 mel bands; 2 s clips map to 61 frames.
    pub fn desk() -> Self {
        FeatureConfig { n_fft: 512, hop: 256, n_mels: 32, fmin: 0.0, fmax: 4000.0, log_floor: 1e-10 }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        if self.n_fft < 2 || self.hop == 0 || self.n_mels == 0 {
            return Err(FeatureError::InvalidConfig("n_fft >= 2, hop >= 1, n_mels >= 1 required"));
        }
        if self.hop > self.n_fft {
            return Err(FeatureError::InvalidConfig("hop must not exceed n_fft"));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= f64::from(sample_rate) / 2.0) {
            return Err(FeatureError::InvalidConfig("need 0 <= fmin < fmax <= sample_rate / 2"));
        }
        if !(self.log_floor > 0.0) {
            return Err(FeatureError::InvalidConfig("log_floor must be positive"));
        }
        Ok(())
    }

    /// `floor((n_samples - n_fft) / hop) + 1`, or `None` below one frame.
    pub fn n_frames(&self, n_samples: usize) -> Option<usize> {
        (n_samples >= self.n_fft).then(|| (n_samples - self.n_fft) / self.hop + 1)
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Log-Mel spectrogram, `[n_mels][n_frames]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
}

impl LogMel {
    pub fn new(n_mels: usize, n_frames: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_mels * n_frames);
        LogMel { n_mels, n_frames, values }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_frames)
    }

    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }

    /// Mean over frames of each mel bin.
    pub fn time_average(&self) -> Vec<f64> {
        self.values.chunks_exact(self.n_frames).map(|r| r.iter().sum::<f64>() / self.n_frames as f64).collect()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0.powf(m / 2595.0) - 1.0)
}

/// Filter edge frequencies: `n_mels + 2` points equally spaced in mel.
pub fn mel_edges(cfg: &FeatureConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let steps = (cfg.n_mels + 1) as f64;
    (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / steps)).collect()
}

/// Center frequency of each mel filter in Hz.
pub fn mel_centers(cfg: &FeatureConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

/// Triangular filters with unit peak, `[n_mels][n_fft / 2 + 1]`.
pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate: u32) -> Result<Matrix, FeatureError> {
    cfg.validate(sample_rate)?;
    let n_bins = cfg.n_bins();
    let bin_hz = f64::from(sample_rate) / cfg.n_fft as f64;
    let edges = mel_edges(cfg);
    let mut fb = Matrix::zeros(cfg.n_mels, n_bins);
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = fb.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
        }
        if row.iter().all(|&w| w <= 0.0) {
            return Err(FeatureError::EmptyFilter(m));
        }
    }
    Ok(fb)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Reusable extractor: window, FFT tables and a sparse filterbank.
#[derive(Debug, Clone)]
pub struct LogMelExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Fft,
    /// Per mel band: first nonzero bin and the weights from there.
    filters: Vec<(usize, Vec<f64>)>,
}

impl LogMelExtractor {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        let fb = mel_filterbank(cfg, sample_rate)?;
        let filters = fb
            .iter_rows()
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row[first..=last].to_vec())
            })
            .collect();
        Ok(LogMelExtractor {
            cfg: cfg.clone(),
            sample_rate,
            window: hann(cfg.n_fft),
            fft: Fft::new(cfg.n_fft),
            filters,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Power spectrogram, `[n_fft / 2 + 1][n_frames]`.
    pub fn power(&self, clip: &AudioClip) -> Result<Matrix, FeatureError> {
        let n_fft = self.cfg.n_fft;
        let frames = self.cfg.n_frames(clip.len()).ok_or(FeatureError::TooShort { len: clip.len(), n_fft })?;
        let n_bins = self.cfg.n_bins();
        let mut out = Matrix::zeros(n_bins, frames);
        let mut re = vec![0.0; n_fft];
        let mut im = vec![0.0; n_fft];
        let x = clip.samples();
        for t in 0..frames {
            let start = t * self.cfg.hop;
            for ((r, &s), &w) in re.iter_mut().zip(&x[start..start + n_fft]).zip(&self.window) {
                *r = s * w;
            }
            im.iter_mut().for_each(|v| *v = 0.0);
            self.fft.forward(&mut re, &mut im);
            for k in 0..n_bins {
                out.data[k * frames + t] = re[k] * re[k] + im[k] * im[k];
            }
        }
        Ok(out)
    }

    pub fn log_mel(&self, clip: &AudioClip) -> Result<LogMel, FeatureError> {
        if clip.sample_rate() != self.sample_rate {
            return Err(FeatureError::InvalidConfig("clip sample rate differs from extractor"));
        }
        let power = self.power(clip)?;
        let frames = power.cols;
        let mut values = vec![0.0; self.cfg.n_mels * frames];
        for (m, (first, weights)) in self.filters.iter().enumerate() {
            let row = &mut values[m * frames..(m + 1) * frames];
            for (j, &w) in weights.iter().enumerate() {
                for (o, &p) in row.iter_mut().zip(power.row(first + j)) {
                    *o += w * p;
                }
            }
            row.iter_mut().for_each(|v| *v = (*v + self.cfg.log_floor).ln());
        }
        Ok(LogMel::new(self.cfg.n_mels, frames, values))
    }
}

/// Hann-windowed, non-centered power spectrogram `[n_fft / 2 + 1][n_frames]`.
pub fn stft_power(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Matrix, FeatureError> {
    LogMelExtractor::new(cfg, clip.sample_rate())?.power(clip)
}

/// `ln(filterbank . power + log_floor)`.
pub fn log_mel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<LogMel, FeatureError> {
    LogMelExtractor::new(cfg, clip.sample_rate())?.log_mel(clip)
}

/// Per-mel-bin affine parameters and normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm<'a> {
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
    pub eps: f64,
    pub momentum: f64,
}

/// Stacks a batch into `[batch][mel][frame]`, checking shapes.
pub fn stack(batch: &[&LogMel]) -> Result<(Vec<f64>, norm::Layout), FeatureError> {
    let shape = batch.first().map_or((0, 0), |f| f.shape());
    let mut data = Vec::with_capacity(batch.len() * shape.0 * shape.1);
    for f in batch {
        if f.shape() != shape {
            return Err(FeatureError::ShapeMismatch { expected: shape, got: f.shape() });
        }
        data.extend_from_slice(&f.values);
    }
    Ok((data, norm::Layout { batch: batch.len(), groups: shape.0, inner: shape.1 }))
}

/// Batch normalization per mel bin. Train mode uses batch statistics and
/// folds them into `running`; eval mode uses `running` unchanged.
pub fn batch_normalize(
    batch: &[&LogMel],
    running: &mut RunningStats,
    affine: &InputNorm<'_>,
    mode: Mode,
) -> Result<Vec<LogMel>, FeatureError> {
    let (data, layout) = stack(batch)?;
    if affine.gamma.len() != layout.groups || running.mean.len() != layout.groups {
        return Err(FeatureError::ShapeMismatch {
            expected: (running.mean.len(), layout.inner),
            got: (layout.groups, layout.inner),
        });
    }
    let y = match mode {
        Mode::Train => {
            let (y, cache) = norm::forward_train(&data, layout, affine.gamma, affine.beta, affine.eps);
            running.update(&cache.mean, &cache.var, affine.momentum);
            y
        }
        Mode::Eval => norm::forward_eval(&data, layout, affine.gamma, affine.beta, running, affine.eps),
    };
    let per = layout.groups * layout.inner;
    Ok(y.chunks_exact(per.max(1))
        .take(layout.batch)
        .map(|c| LogMel::new(layout.groups, layout.inner, c.to_vec()))
        .collect())
}
