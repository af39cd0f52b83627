use std::path::Path;

use super::{DataError, Result};
use crate::frontend::{AudioClip, SAMPLE_RATE_HZ};

fn unsupported(path: &Path, details: impl Into<String>) -> DataError {
    DataError::UnsupportedFormat {
        path: path.display().to_string(),
        details: details.into(),
    }
}

/// Reads a 16 kHz mono PCM16 RIFF/WAVE file, scaling samples by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => DataError::Io {
            path: path.display().to_string(),
            source,
        },
        other => unsupported(path, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(
            path,
            format!("{:?} {}-bit, expected PCM16", spec.sample_format, spec.bits_per_sample),
        ));
    }
    if spec.channels != 1 {
        return Err(unsupported(path, format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(unsupported(path, format!("{} Hz, expected 16000", spec.sample_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<f32>, _>>()
        .map_err(|e| unsupported(path, e.to_string()))?;
    AudioClip::new(samples, spec.sample_rate).map_err(|e| unsupported(path, e.to_string()))
}

/// Writes samples in `[-1, 1]` as 16 kHz mono PCM16 (clipped, rounded).
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(source) => DataError::Io {
            path: path.display().to_string(),
            source,
        },
        other => unsupported(path, other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}
