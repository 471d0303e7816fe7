use std::path::Path;

use crate::error::{Error, Result};

/// Shortest waveform accepted anywhere in the pipeline, in seconds.
pub const MIN_DURATION_S: f64 = 0.2;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Wraps `samples`, clipping them to `[-1, 1]`.
    pub fn new(mut samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid("non-finite audio sample".into()));
        }
        let duration = samples.len() as f64 / sample_rate as f64;
        if duration < MIN_DURATION_S - 1e-12 {
            return Err(Error::TooShort(format!(
                "{duration:.3} s is below the {MIN_DURATION_S} s minimum"
            )));
        }
        samples.iter_mut().for_each(|s| *s = s.clamp(-1.0, 1.0));
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
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

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, start + len)` as a new waveform.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = (start + len).min(self.samples.len());
        Self::new(self.samples[start.min(end)..end].to_vec(), self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Reads a RIFF/WAVE file holding PCM16 or 32-bit float samples.
///
/// Multi-channel audio is averaged down to mono. PCM16 is scaled by 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(e, path))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(e, path))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(e, path))?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{format:?} with {bits} bits per sample"
            )))
        }
    };
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

fn map_hound(err: hound::Error, path: &Path) -> Error {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => Error::BadHeader(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported WAVE format".into()),
        other => Error::BadHeader(other.to_string()),
    }
}

/// Writes mono PCM16.
pub fn write_wav_pcm16(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(hound_io)?;
    for &s in &wav.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(hound_io)?;
    }
    writer.finalize().map_err(hound_io)
}

/// Writes mono 32-bit float.
pub fn write_wav_f32(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(hound_io)?;
    for &s in &wav.samples {
        writer.write_sample(s as f32).map_err(hound_io)?;
    }
    writer.finalize().map_err(hound_io)
}

fn hound_io(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn riff(format_tag: u16, channels: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let rate = 16_000u32;
        let block = channels * bits / 8;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format_tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * block as u32).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    fn write_tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    #[test]
    fn pcm16_silence_and_full_scale() {
        let f = write_tmp(&riff(1, 1, 16, &vec![0u8; 32_000]));
        let wav = load_wav(f.path()).unwrap();
        assert_eq!(wav.len(), 16_000);
        assert!(wav.samples().iter().all(|&s| s == 0.0));

        let data: Vec<u8> = std::iter::repeat_n(32767i16.to_le_bytes(), 4000).flatten().collect();
        let wav = load_wav(write_tmp(&riff(1, 1, 16, &data)).path()).unwrap();
        assert_eq!(wav.samples()[0], 32767.0 / 32768.0);
    }

    #[test]
    fn stereo_is_averaged() {
        let mut data = Vec::new();
        for _ in 0..4000 {
            data.extend_from_slice(&16384i16.to_le_bytes());
            data.extend_from_slice(&0i16.to_le_bytes());
        }
        let wav = load_wav(write_tmp(&riff(1, 2, 16, &data)).path()).unwrap();
        assert_eq!(wav.len(), 4000);
        assert_eq!(wav.samples()[10], 0.25);
    }

    #[test]
    fn float32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let samples: Vec<f64> = (0..8000).map(|i| ((i as f64) * 0.01).sin() * 0.5).collect();
        let wav = Waveform::new(samples, 16_000).unwrap();
        write_wav_f32(&path, &wav).unwrap();
        let back = load_wav(&path).unwrap();
        for (a, b) in wav.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn mu_law_is_rejected() {
        let f = write_tmp(&riff(7, 1, 8, &vec![0xffu8; 16_000]));
        assert!(matches!(load_wav(f.path()), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn header_and_path_errors() {
        assert!(matches!(
            load_wav("/definitely/not/here.wav"),
            Err(Error::FileNotFound(_))
        ));
        let f = write_tmp(b"RIFX-not-a-wave-file-at-all-------------");
        assert!(matches!(load_wav(f.path()), Err(Error::BadHeader(_))));
    }

    #[test]
    fn short_audio_is_rejected() {
        assert!(matches!(Waveform::new(vec![0.0; 100], 16_000), Err(Error::TooShort(_))));
    }
}
