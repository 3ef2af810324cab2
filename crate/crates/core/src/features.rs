//! Per-frequency-bin input sequences: extraction, level normalization and
//! slicing into fixed-length training windows.

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::stft::ComplexSpectrogram;

/// Floor on the normalization scalar for silent bins.
pub const MU_FLOOR: f64 = 1e-8;
pub const DEFAULT_SEQ_LEN: usize = 192;

/// One bin's multichannel time sequence, flattened frame-major. Each frame is
/// `(Re x_1, Im x_1, ..., Re x_I, Im x_I)`.
///
/// Frames at and beyond `valid_len` are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrowbandSequence {
    values: Vec<f64>,
    num_channels: usize,
    valid_len: usize,
    mu: Option<f64>,
    bin: usize,
    ref_channel: usize,
}

impl NarrowbandSequence {
    pub fn from_frames(
        values: Vec<f64>,
        num_channels: usize,
        bin: usize,
        ref_channel: usize,
    ) -> Result<Self> {
        if num_channels == 0 || ref_channel >= num_channels {
            return invalid(format!("reference channel {ref_channel} of {num_channels}"));
        }
        if values.len() % (2 * num_channels) != 0 {
            return invalid("sequence length is not a multiple of the frame dimension");
        }
        let valid_len = values.len() / (2 * num_channels);
        Ok(Self { values, num_channels, valid_len, mu: None, bin, ref_channel })
    }

    pub fn dim(&self) -> usize {
        2 * self.num_channels
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    /// Total frames including padding.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    pub fn bin(&self) -> usize {
        self.bin
    }

    pub fn ref_channel(&self) -> usize {
        self.ref_channel
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let d = self.dim();
        &self.values[t * d..(t + 1) * d]
    }

    pub fn channel_value(&self, t: usize, channel: usize) -> Complex64 {
        let f = self.frame(t);
        Complex64::new(f[2 * channel], f[2 * channel + 1])
    }

    pub fn ref_value(&self, t: usize) -> Complex64 {
        self.channel_value(t, self.ref_channel)
    }

    /// Multiply back by `mu`; identity for an unnormalized sequence.
    pub fn denormalized(&self) -> NarrowbandSequence {
        let mu = self.mu.unwrap_or(1.0);
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= mu);
        out.mu = None;
        out
    }

    /// Frames `[start, start + len)`, zero-padded past the end of the data.
    pub fn window(&self, start: usize, len: usize) -> NarrowbandSequence {
        let d = self.dim();
        let mut values = vec![0.0; len * d];
        let end = self.valid_len.min(start + len);
        let valid = end.saturating_sub(start);
        values[..valid * d].copy_from_slice(&self.values[start * d..(start + valid) * d]);
        NarrowbandSequence {
            values,
            num_channels: self.num_channels,
            valid_len: valid,
            mu: None,
            bin: self.bin,
            ref_channel: self.ref_channel,
        }
    }
}

pub fn extract_bin_sequence(
    spec: &ComplexSpectrogram,
    bin: usize,
    ref_channel: usize,
) -> Result<NarrowbandSequence> {
    if bin >= spec.num_bins() {
        return invalid(format!("bin {bin} out of range (K = {})", spec.num_bins()));
    }
    if ref_channel >= spec.num_channels() {
        return invalid(format!(
            "reference channel {ref_channel} out of range (I = {})",
            spec.num_channels()
        ));
    }
    let n = spec.num_channels();
    let frames = spec.num_frames();
    let mut values = vec![0.0; frames * 2 * n];
    for c in 0..n {
        for (t, x) in spec.bin_track(c, bin).iter().enumerate() {
            values[t * 2 * n + 2 * c] = x.re;
            values[t * 2 * n + 2 * c + 1] = x.im;
        }
    }
    NarrowbandSequence::from_frames(values, n, bin, ref_channel)
}

/// Mean reference-channel magnitude over the valid frames, floored at
/// [`MU_FLOOR`].
pub fn reference_level(seq: &NarrowbandSequence) -> f64 {
    if seq.valid_len == 0 {
        return MU_FLOOR;
    }
    let sum: f64 = (0..seq.valid_len).map(|t| seq.ref_value(t).norm()).sum();
    (sum / seq.valid_len as f64).max(MU_FLOOR)
}

pub fn normalize_sequence(seq: &NarrowbandSequence) -> Result<NarrowbandSequence> {
    if seq.valid_len == 0 {
        return invalid("cannot normalize an empty sequence");
    }
    if seq.mu.is_some() {
        return invalid("sequence is already normalized");
    }
    let mu = reference_level(seq);
    let mut out = seq.clone();
    out.values.iter_mut().for_each(|v| *v /= mu);
    out.mu = Some(mu);
    Ok(out)
}

/// Window start frames for a sequence of `len` frames: stride `seq_len / 2`,
/// plus one zero-padded tail window when the regular windows leave frames
/// uncovered. Inputs shorter than `seq_len` give one padded window.
pub fn slice_starts(len: usize, seq_len: usize) -> Vec<usize> {
    if len == 0 || seq_len == 0 {
        return Vec::new();
    }
    if len <= seq_len {
        return vec![0];
    }
    let stride = (seq_len / 2).max(1);
    let count = (len - seq_len) / stride + 1;
    let mut starts: Vec<usize> = (0..count).map(|i| i * stride).collect();
    let last = starts[count - 1];
    if last + seq_len < len {
        starts.push(last + stride);
    }
    starts
}

/// Fixed-length training windows, each normalized over its own valid frames.
pub fn slice_training_sequences(
    seq: &NarrowbandSequence,
    seq_len: usize,
) -> Result<Vec<NarrowbandSequence>> {
    let raw = seq.denormalized();
    slice_starts(raw.valid_len, seq_len)
        .into_iter()
        .map(|s| normalize_sequence(&raw.window(s, seq_len)))
        .collect()
}
