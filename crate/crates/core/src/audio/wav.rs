//! RIFF/WAVE codec for 16-bit PCM mono, operating on byte buffers.

use super::AudioClip;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WavError {
    #[error("not a RIFF/WAVE stream")]
    NotWave,
    #[error("truncated or malformed {0} chunk")]
    Malformed(&'static str),
    #[error("non-mono: {0} channels")]
    NonMono(u16),
    #[error("unsupported encoding: format tag {format}, {bits} bits per sample")]
    UnsupportedEncoding { format: u16, bits: u16 },
    #[error("missing data chunk")]
    NoData,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
}

const PCM: u16 = 1;
const FULL_SCALE: f64 = 32768.0;

/// Clamps to [-1, 1] and quantizes to a signed 16-bit code.
pub fn quantize(sample: f64) -> i16 {
    let q = (sample.clamp(-1.0, 1.0) * FULL_SCALE).round();
    q.clamp(-32768.0, 32767.0) as i16
}

pub fn encode(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.len() * 2) as u32;
    let rate = clip.sample_rate();
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

fn u16_at(b: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_le_bytes(b.get(at..at + 2)?.try_into().ok()?))
}

fn u32_at(b: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(b.get(at..at + 4)?.try_into().ok()?))
}

pub fn decode(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4).ok_or(WavError::Malformed("chunk header"))? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                let tag = u16_at(bytes, body).ok_or(WavError::Malformed("fmt"))?;
                let channels = u16_at(bytes, body + 2).ok_or(WavError::Malformed("fmt"))?;
                let rate = u32_at(bytes, body + 4).ok_or(WavError::Malformed("fmt"))?;
                let bits = u16_at(bytes, body + 14).ok_or(WavError::Malformed("fmt"))?;
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format.ok_or(WavError::Malformed("fmt"))?;
                if channels != 1 {
                    return Err(WavError::NonMono(channels));
                }
                if tag != PCM || bits != 16 {
                    return Err(WavError::UnsupportedEncoding { format: tag, bits });
                }
                if rate == 0 {
                    return Err(WavError::ZeroSampleRate);
                }
                let data = bytes.get(body..body + size).ok_or(WavError::Malformed("data"))?;
                let samples =
                    data.chunks_exact(2).map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / FULL_SCALE).collect();
                return AudioClip::new(samples, rate).map_err(|_| WavError::ZeroSampleRate);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(WavError::NoData)
}
