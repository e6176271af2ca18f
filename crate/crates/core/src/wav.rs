//! 16-bit PCM mono WAV input/output.

use std::path::Path;

use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Reads a 16-bit PCM mono 16 kHz WAV file into samples in `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let audio_err = |reason: String| Error::Audio {
        path: path.to_path_buf(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => audio_err(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(audio_err(format!(
            "expected 16-bit integer PCM, found {:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(audio_err(format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(audio_err(format!(
            "expected {SAMPLE_RATE} Hz, found {} Hz",
            spec.sample_rate
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| audio_err(e.to_string()))
}

/// Writes samples as 16-bit PCM mono 16 kHz. Values are clipped to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantizes_to_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x = vec![0.0, 0.5, -0.5, 0.999, -1.0, 2.0];
        write_wav(&path, &x).unwrap();
        let y = read_wav(&path).unwrap();
        assert_eq!(y.len(), x.len());
        assert_eq!(y[1], 0.5);
        assert_eq!(y[4], -1.0);
        assert_eq!(y[5], 32767.0 / 32768.0);
    }

    #[test]
    fn rejects_stereo_and_wrong_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Audio { .. })));

        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            ..spec
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err().to_string();
        assert!(err.contains("8000"), "{err}");
    }
}
