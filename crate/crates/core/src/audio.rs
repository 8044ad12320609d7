//! Mono waveform container and RIFF WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Single-channel audio with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Empty("waveform has no samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decodes a PCM (integer) or 32-bit float WAV file. Multi-channel input is
/// down-mixed by averaging channels. No resampling is done: a file whose rate
/// differs from `expected_rate` is rejected.
pub fn load_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.sample_rate != expected_rate {
        return Err(Error::SampleRateMismatch {
            found: spec.sample_rate,
            expected: expected_rate,
        });
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedEncoding("zero channels".into()));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ 8..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{fmt:?} with {bits} bits per sample"
            )))
        }
    };

    let samples: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM file. Samples are clipped to [-1, 1].
pub fn write_wav_pcm16(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    for &s in &wave.samples {
        writer.write_sample(pcm16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

pub(crate) fn pcm16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, spec: WavSpec, frames: &[Vec<i16>]) {
        let mut w = WavWriter::create(path, spec).unwrap();
        for frame in frames {
            for &s in frame {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn mono_pcm16_decodes_at_native_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mono.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let frames: Vec<Vec<i16>> = (0..1600).map(|i| vec![(i % 100) as i16 * 100]).collect();
        write_raw(&path, spec, &frames);
        let w = load_wav(&path, 16000).unwrap();
        assert_eq!(w.len(), 1600);
        assert_eq!(w.sample_rate, 16000);
        assert!((w.samples[1] - 100.0 / 32768.0).abs() < 1e-7);
    }

    #[test]
    fn stereo_is_downmixed_by_mean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let frames: Vec<Vec<i16>> = (0..500).map(|_| vec![16384, 0]).collect();
        write_raw(&path, spec, &frames);
        let w = load_wav(&path, 16000).unwrap();
        assert_eq!(w.len(), 500);
        assert!(w.samples.iter().all(|&s| (s - 0.25).abs() < 1e-6));
    }

    #[test]
    fn float_wav_is_supported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("float.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for i in 0..10 {
            w.write_sample(i as f32 * 0.1).unwrap();
        }
        w.finalize().unwrap();
        let wave = load_wav(&path, 16000).unwrap();
        assert_eq!(wave.samples[3], 0.3f32);
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cd.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 44100,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        write_raw(&path, spec, &[vec![0], vec![1]]);
        let err = load_wav(&path, 16000).unwrap_err();
        assert!(err.to_string().contains("sample-rate mismatch"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_wav("/nonexistent/clip.wav", 16000).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn pcm16_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.wav");
        let wave = Waveform::new((0..800).map(|i| (i as f32 * 0.01).sin() * 0.5).collect(), 16000).unwrap();
        write_wav_pcm16(&path, &wave).unwrap();
        let back = load_wav(&path, 16000).unwrap();
        for (a, b) in wave.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }
}
