//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Framing: periodic Hann window, hop = frame_len / 2, first frame at
//! sample 0, no edge padding. A signal of length `L` yields
//! `floor((L - frame_len) / hop) + 1` frames; the trailing samples that do not
//! fill a frame are dropped in analysis and come back as zeros in synthesis.

use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};

pub const DEFAULT_FRAME_LEN: usize = 512;
pub const DEFAULT_HOP: usize = 256;
/// Synthesis normalizer floor, relative to its peak. Only the first and last
/// half-frame fall below it (the overlapped interior stays at or above half
/// the peak).
pub const NORM_FLOOR: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Window(Vec<f64>);

impl Window {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Periodic Hann window, `w[n] = 0.5 - 0.5 cos(2 pi n / size)`.
pub fn make_window(size: usize) -> Result<Window> {
    if size < 2 || size % 2 != 0 {
        return invalid(format!("window size must be even and >= 2, got {size}"));
    }
    let n = size as f64;
    Ok(Window(
        (0..size)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect(),
    ))
}

/// Multichannel one-sided STFT coefficients, stored channel-major, then bin,
/// then frame, so one bin's time sequence is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    num_channels: usize,
    num_bins: usize,
    num_frames: usize,
    frame_len: usize,
    hop: usize,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(
        num_channels: usize,
        num_frames: usize,
        frame_len: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        check_framing(frame_len, hop)?;
        if num_channels == 0 {
            return invalid("spectrogram needs at least one channel");
        }
        let num_bins = frame_len / 2 + 1;
        Ok(Self {
            data: vec![Complex64::new(0.0, 0.0); num_channels * num_bins * num_frames],
            num_channels,
            num_bins,
            num_frames,
            frame_len,
            hop,
            sample_rate,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    fn offset(&self, channel: usize, bin: usize) -> usize {
        (channel * self.num_bins + bin) * self.num_frames
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> Complex64 {
        self.data[self.offset(channel, bin) + frame]
    }

    pub fn set(&mut self, channel: usize, bin: usize, frame: usize, v: Complex64) {
        let o = self.offset(channel, bin);
        self.data[o + frame] = v;
    }

    /// Time sequence of one (channel, bin).
    pub fn bin_track(&self, channel: usize, bin: usize) -> &[Complex64] {
        let o = self.offset(channel, bin);
        &self.data[o..o + self.num_frames]
    }

    pub fn bin_track_mut(&mut self, channel: usize, bin: usize) -> &mut [Complex64] {
        let o = self.offset(channel, bin);
        let n = self.num_frames;
        &mut self.data[o..o + n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// Number of samples spanned by the frames.
    pub fn covered_len(&self) -> usize {
        if self.num_frames == 0 {
            0
        } else {
            (self.num_frames - 1) * self.hop + self.frame_len
        }
    }
}

fn check_framing(frame_len: usize, hop: usize) -> Result<()> {
    if frame_len < 2 || frame_len % 2 != 0 || hop * 2 != frame_len {
        return invalid(format!(
            "unsupported framing frame_len={frame_len} hop={hop} (need even frame_len = 2*hop)"
        ));
    }
    Ok(())
}

pub fn num_frames(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        (len - frame_len) / hop + 1
    }
}

/// Reusable forward/inverse transform plans for one frame length.
pub struct Stft {
    window: Window,
    hop: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl Stft {
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        check_framing(frame_len, hop)?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            window: make_window(frame_len)?,
            hop,
            forward: planner.plan_fft_forward(frame_len),
            inverse: planner.plan_fft_inverse(frame_len),
        })
    }

    pub fn frame_len(&self) -> usize {
        self.window.len()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn analyze(&self, audio: &AudioBuffer) -> Result<ComplexSpectrogram> {
        let frame_len = self.frame_len();
        if audio.len() < frame_len {
            return invalid(format!(
                "signal of {} samples is shorter than one frame ({frame_len})",
                audio.len()
            ));
        }
        let frames = num_frames(audio.len(), frame_len, self.hop);
        let mut spec = ComplexSpectrogram::zeros(
            audio.num_channels(),
            frames,
            frame_len,
            self.hop,
            audio.sample_rate(),
        )?;
        let w = self.window.as_slice();
        let mut buf = self.forward.make_input_vec();
        let mut out = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for c in 0..audio.num_channels() {
            let x = audio.channel(c);
            for t in 0..frames {
                let start = t * self.hop;
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = x[start + n] * w[n];
                }
                self.forward
                    .process_with_scratch(&mut buf, &mut out, &mut scratch)
                    .expect("buffer sizes come from the plan");
                for (k, v) in out.iter().enumerate() {
                    spec.set(c, k, t, *v);
                }
            }
        }
        Ok(spec)
    }

    /// Weighted overlap-add with the analysis window, normalized by the summed
    /// squared window. Samples past the covered span are zero.
    pub fn synthesize(&self, spec: &ComplexSpectrogram, out_len: usize) -> Result<AudioBuffer> {
        if spec.frame_len() != self.frame_len() || spec.hop() != self.hop {
            return invalid(format!(
                "spectrogram framing {}/{} does not match transform {}/{}",
                spec.frame_len(),
                spec.hop(),
                self.frame_len(),
                self.hop
            ));
        }
        let frame_len = self.frame_len();
        let span = spec.covered_len();
        let w = self.window.as_slice();
        let mut norm = vec![0.0; span];
        for t in 0..spec.num_frames() {
            for n in 0..frame_len {
                norm[t * self.hop + n] += w[n] * w[n];
            }
        }
        // Near the signal ends the summed window falls to zero; dividing by
        // it would amplify any inconsistency of a modified spectrum.
        let floor = NORM_FLOOR * norm.iter().cloned().fold(0.0, f64::max);
        let scale = 1.0 / frame_len as f64;
        let mut freq = self.inverse.make_input_vec();
        let mut buf = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let mut channels = Vec::with_capacity(spec.num_channels());
        for c in 0..spec.num_channels() {
            let mut y = vec![0.0; span.max(out_len)];
            for t in 0..spec.num_frames() {
                for (k, f) in freq.iter_mut().enumerate() {
                    *f = spec.get(c, k, t);
                }
                // A real signal has real DC and Nyquist bins.
                freq[0].im = 0.0;
                let last = freq.len() - 1;
                freq[last].im = 0.0;
                self.inverse
                    .process_with_scratch(&mut freq, &mut buf, &mut scratch)
                    .expect("buffer sizes come from the plan");
                let start = t * self.hop;
                for n in 0..frame_len {
                    y[start + n] += buf[n] * scale * w[n];
                }
            }
            for (v, d) in y.iter_mut().zip(&norm) {
                *v /= d.max(floor);
            }
            y.truncate(out_len);
            channels.push(y);
        }
        AudioBuffer::new(channels, spec.sample_rate())
    }
}

pub fn stft(audio: &AudioBuffer, frame_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    Stft::new(frame_len, hop)?.analyze(audio)
}

pub fn istft(spec: &ComplexSpectrogram, out_len: usize) -> Result<AudioBuffer> {
    check_framing(spec.frame_len(), spec.hop())?;
    Stft::new(spec.frame_len(), spec.hop())?.synthesize(spec, out_len)
}
