//! Multichannel audio buffers and WAV I/O.
//!
//! Reads RIFF PCM 16-bit integer and IEEE 32-bit float files with 1 to 8
//! channels. Only 16 kHz material is accepted.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{invalid, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const MAX_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return invalid("audio buffer needs at least one channel");
        }
        if sample_rate == 0 {
            return invalid("sample rate must be positive");
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return invalid("all channels must have equal length");
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn zeros(num_channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; num_channels], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Copy of channel `i` as a mono buffer.
    pub fn select(&self, i: usize) -> Result<AudioBuffer> {
        if i >= self.num_channels() {
            return invalid(format!("channel {i} out of range (have {})", self.num_channels()));
        }
        Self::mono(self.channels[i].clone(), self.sample_rate)
    }

    /// First `n` channels.
    pub fn take_channels(&self, n: usize) -> Result<AudioBuffer> {
        if n == 0 || n > self.num_channels() {
            return invalid(format!("cannot take {n} of {} channels", self.num_channels()));
        }
        Self::new(self.channels[..n].to_vec(), self.sample_rate)
    }

    pub fn segment(&self, start: usize, len: usize) -> Result<AudioBuffer> {
        if start + len > self.len() {
            return invalid(format!(
                "segment [{start}, {}) exceeds length {}",
                start + len,
                self.len()
            ));
        }
        let ch = self.channels.iter().map(|c| c[start..start + len].to_vec()).collect();
        Self::new(ch, self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        let ch = self
            .channels
            .iter()
            .map(|c| c.iter().map(|v| v * gain).collect())
            .collect();
        Self { channels: ch, sample_rate: self.sample_rate }
    }

    /// Mean squared amplitude of channel `i`.
    pub fn power(&self, i: usize) -> f64 {
        let c = &self.channels[i];
        if c.is_empty() {
            return 0.0;
        }
        c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let n = spec.channels as usize;
    if n == 0 || n > MAX_CHANNELS {
        return invalid(format!("{}: unsupported channel count {n}", path.display()));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return invalid(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz (resampling is not supported)",
            path.display(),
            spec.sample_rate
        ));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return invalid(format!(
                "{}: unsupported sample format {fmt:?} {bits}-bit",
                path.display()
            ))
        }
    };
    let frames = interleaved.len() / n;
    let mut channels = vec![Vec::with_capacity(frames); n];
    for frame in interleaved.chunks_exact(n) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    AudioBuffer::new(channels, spec.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, encoding: WavEncoding) -> Result<()> {
    let n = audio.num_channels();
    if n > MAX_CHANNELS {
        return invalid(format!("cannot write {n} channels (max {MAX_CHANNELS})"));
    }
    let spec = WavSpec {
        channels: n as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for t in 0..audio.len() {
        for c in 0..n {
            let v = audio.channel(c)[t];
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                WavEncoding::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_channels() {
        assert!(AudioBuffer::new(vec![vec![0.0; 3], vec![0.0; 4]], 16000).is_err());
        assert!(AudioBuffer::new(vec![], 16000).is_err());
        assert!(AudioBuffer::new(vec![vec![0.0]], 0).is_err());
    }

    #[test]
    fn float_wav_roundtrip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let ch: Vec<Vec<f64>> = (0..3)
            .map(|c| (0..100).map(|t| ((t * (c + 1)) as f32 * 0.01).sin() as f64).collect())
            .collect();
        let audio = AudioBuffer::new(ch, SAMPLE_RATE).unwrap();
        write_wav(&path, &audio, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&path).unwrap(), audio);
    }

    #[test]
    fn pcm16_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio =
            AudioBuffer::new(vec![(0..50).map(|t| (t as f64 * 0.1).sin() * 0.9).collect()], 16000)
                .unwrap();
        write_wav(&path, &audio, WavEncoding::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in audio.channel(0).iter().zip(back.channel(0)) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn wrong_sample_rate_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio = AudioBuffer::new(vec![vec![0.0; 10]], 8000).unwrap();
        write_wav(&path, &audio, WavEncoding::Float32).unwrap();
        let err = read_wav(&path).unwrap_err().to_string();
        assert!(err.contains("8000"), "{err}");
    }
}
