//! WAV files on disk.

use std::fs;
use std::path::Path;

use noisex_core::audio::wav;
use noisex_core::AudioClip;

use crate::error::{Error, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    wav::decode(&bytes).map_err(|source| Error::Wav { path: path.into(), source })
}

/// Writes 16-bit mono PCM, creating parent directories.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, wav::encode(clip)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use noisex_core::audio::WavError;

    #[test]
    fn roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.wav");
        let clip = AudioClip::new((0..1000).map(|i| (i as f64 * 0.01).sin() * 0.9).collect(), 16000).unwrap();
        write_wav(&clip, &p).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 44 + 2000);
        for (a, b) in clip.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn zeros_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_wav(&AudioClip::silence(16000, 16000).unwrap(), &p).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.len(), 16000);
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_wav(dir.path().join("nope.wav")), Err(Error::Missing { .. })));
        // stereo header: channels = 2
        let mut bytes = wav::encode(&AudioClip::silence(4, 8000).unwrap());
        bytes[22] = 2;
        let p = dir.path().join("stereo.wav");
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Wav { source: WavError::NonMono(2), .. })));
        let blocked = dir.path().join("file");
        std::fs::write(&blocked, b"x").unwrap();
        let err = write_wav(&AudioClip::silence(4, 8000).unwrap(), blocked.join("x.wav")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
