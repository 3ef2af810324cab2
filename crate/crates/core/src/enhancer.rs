//! Inference: run the shared network over every bin of a noisy recording and
//! resynthesize the reference-channel speech estimate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};
use crate::features::{extract_bin_sequence, normalize_sequence, NarrowbandSequence, MU_FLOOR};
use crate::nn::{lstm_cell_step, model_forward, Checkpoint, ModelParameters};
use crate::parallel::{map_indexed, ExecMode};
use crate::scalar::dot;
use crate::stft::{istft, stft, ComplexSpectrogram, DEFAULT_FRAME_LEN, DEFAULT_HOP};
use crate::targets::{apply_spatial_filter, reconstruct_from_mask, TargetKind};

/// Anything that maps a normalized bin sequence to per-frame network outputs.
pub trait BinModel: Sync {
    fn target(&self) -> TargetKind;
    fn num_channels(&self) -> usize;
    fn ref_channel(&self) -> usize;
    /// `frames x output_dim` outputs for a normalized sequence.
    fn predict(&self, seq: &NarrowbandSequence) -> Result<Vec<f64>>;
}

impl BinModel for Checkpoint {
    fn target(&self) -> TargetKind {
        self.arch().target
    }

    fn num_channels(&self) -> usize {
        self.arch().num_channels
    }

    fn ref_channel(&self) -> usize {
        self.meta.ref_channel
    }

    fn predict(&self, seq: &NarrowbandSequence) -> Result<Vec<f64>> {
        let input: Vec<f32> = seq.values().iter().map(|&v| v as f32).collect();
        let out = model_forward(&self.params, &input, seq.len())?;
        Ok(out.output().iter().map(|&v| v as f64).collect())
    }
}

/// Reference-channel estimate of one bin from the network outputs.
pub fn reconstruct_bin(
    kind: TargetKind,
    prediction: &[f64],
    seq: &NarrowbandSequence,
) -> Result<Vec<Complex64>> {
    let mu = match seq.mu() {
        Some(m) => m,
        None => return invalid("reconstruction needs a normalized sequence"),
    };
    let od = kind.output_dim(seq.num_channels());
    if prediction.len() != seq.len() * od {
        return invalid(format!(
            "prediction holds {} values, expected {} frames x {od}",
            prediction.len(),
            seq.len()
        ));
    }
    (0..seq.len())
        .map(|t| {
            let p = &prediction[t * od..(t + 1) * od];
            Ok(match kind {
                TargetKind::Mrm => reconstruct_from_mask(p[0], seq.ref_value(t) * mu),
                TargetKind::Cc => Complex64::new(p[0], p[1]) * mu,
                TargetKind::Sf | TargetKind::Ssf => {
                    let (re, im) = apply_spatial_filter(p, seq.frame(t))?;
                    Complex64::new(re, im) * mu
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnhanceDiagnostics {
    /// Normalization level of each bin.
    pub mu: Vec<f64>,
    /// Mean mask value (MRM), mean coefficient magnitude (CC) or mean filter
    /// norm (SF/SSF) of each bin.
    pub mean_output: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Enhanced {
    pub audio: AudioBuffer,
    pub spectrum: ComplexSpectrogram,
    pub diagnostics: EnhanceDiagnostics,
}

fn check_input(noisy: &AudioBuffer, model: &impl BinModel) -> Result<()> {
    if noisy.num_channels() != model.num_channels() {
        return invalid(format!(
            "model expects {} channels but the input has {}",
            model.num_channels(),
            noisy.num_channels()
        ));
    }
    if noisy.len() < DEFAULT_FRAME_LEN {
        return invalid(format!(
            "input of {} samples is shorter than one {DEFAULT_FRAME_LEN}-sample frame",
            noisy.len()
        ));
    }
    Ok(())
}

fn output_summary(kind: TargetKind, prediction: &[f64], od: usize) -> f64 {
    let frames = prediction.len() / od;
    if frames == 0 {
        return 0.0;
    }
    let total: f64 = prediction
        .chunks_exact(od)
        .map(|p| match kind {
            TargetKind::Mrm => p[0],
            _ => p.iter().map(|v| v * v).sum::<f64>().sqrt(),
        })
        .sum();
    total / frames as f64
}

/// Enhance a multichannel spectrogram bin by bin.
pub fn enhance_spectrogram(
    noisy: &ComplexSpectrogram,
    model: &impl BinModel,
    exec: ExecMode,
) -> Result<(ComplexSpectrogram, EnhanceDiagnostics)> {
    let kind = model.target();
    let od = kind.output_dim(noisy.num_channels());
    let per_bin = map_indexed(exec, noisy.num_bins(), |k| -> Result<(Vec<Complex64>, f64, f64)> {
        let seq = normalize_sequence(&extract_bin_sequence(noisy, k, model.ref_channel())?)?;
        let pred = model.predict(&seq)?;
        let est = reconstruct_bin(kind, &pred, &seq)?;
        Ok((est, seq.mu().unwrap_or(MU_FLOOR), output_summary(kind, &pred, od)))
    });
    let mut out = ComplexSpectrogram::zeros(
        1,
        noisy.num_frames(),
        noisy.frame_len(),
        noisy.hop(),
        noisy.sample_rate(),
    )?;
    let mut diag = EnhanceDiagnostics::default();
    for (k, r) in per_bin.into_iter().enumerate() {
        let (est, mu, mean) = r?;
        out.bin_track_mut(0, k).copy_from_slice(&est);
        diag.mu.push(mu);
        diag.mean_output.push(mean);
    }
    Ok((out, diag))
}

/// Enhanced reference-channel signal, same length as the input.
pub fn enhance(noisy: &AudioBuffer, model: &impl BinModel, exec: ExecMode) -> Result<Enhanced> {
    check_input(noisy, model)?;
    let spec = stft(noisy, DEFAULT_FRAME_LEN, DEFAULT_HOP)?;
    let (spectrum, diagnostics) = enhance_spectrogram(&spec, model, exec)?;
    let audio = istft(&spectrum, noisy.len())?;
    Ok(Enhanced { audio, spectrum, diagnostics })
}

/// How the streaming enhancer obtains each bin's normalization level.
#[derive(Debug, Clone, PartialEq)]
pub enum MuSource {
    /// Known levels, one per bin.
    Fixed(Vec<f64>),
    /// Mean reference magnitude of the frames seen so far.
    Running,
}

#[derive(Debug, Clone)]
struct BinState {
    h: [Vec<f32>; 2],
    c: [Vec<f32>; 2],
    mag_sum: f64,
}

/// Frame-by-frame enhancement with a unidirectional model.
#[derive(Debug, Clone)]
pub struct StreamingEnhancer {
    params: ModelParameters<f32>,
    ref_channel: usize,
    mu: MuSource,
    bins: Vec<BinState>,
    frames: usize,
}

impl StreamingEnhancer {
    pub fn new(model: &Checkpoint, num_bins: usize, mu: MuSource) -> Result<Self> {
        let arch = *model.arch();
        if arch.bidirectional {
            return invalid("streaming needs a unidirectional model");
        }
        if let MuSource::Fixed(levels) = &mu {
            if levels.len() != num_bins {
                return invalid(format!("{} levels for {num_bins} bins", levels.len()));
            }
        }
        let state = BinState {
            h: [vec![0.0; arch.hidden[0]], vec![0.0; arch.hidden[1]]],
            c: [vec![0.0; arch.hidden[0]], vec![0.0; arch.hidden[1]]],
            mag_sum: 0.0,
        };
        Ok(Self {
            params: model.params.clone(),
            ref_channel: model.meta.ref_channel,
            mu,
            bins: vec![state; num_bins],
            frames: 0,
        })
    }

    pub fn frames_processed(&self) -> usize {
        self.frames
    }

    /// Process one STFT frame given as `frame[channel][bin]`; returns the
    /// reference-channel estimate of every bin.
    pub fn push_frame(&mut self, frame: &[Vec<Complex64>]) -> Result<Vec<Complex64>> {
        let arch = *self.params.arch();
        if frame.len() != arch.num_channels || frame.iter().any(|c| c.len() != self.bins.len()) {
            return invalid(format!(
                "frame must hold {} channels of {} bins",
                arch.num_channels,
                self.bins.len()
            ));
        }
        self.frames += 1;
        let (w, b) = self.params.dense();
        let (din, od) = (arch.dense_input_dim(), arch.output_dim());
        let act = arch.target.activation();
        let mut out = Vec::with_capacity(self.bins.len());
        for (k, st) in self.bins.iter_mut().enumerate() {
            let xr = frame[self.ref_channel][k];
            st.mag_sum += xr.norm();
            let mu = match &self.mu {
                MuSource::Fixed(levels) => levels[k].max(MU_FLOOR),
                MuSource::Running => (st.mag_sum / self.frames as f64).max(MU_FLOOR),
            };
            let x: Vec<f64> = frame.iter().flat_map(|c| [c[k].re / mu, c[k].im / mu]).collect();
            let mut layer_in: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            for layer in 0..2 {
                let (h, c) = lstm_cell_step(&layer_in, &st.h[layer], &st.c[layer], &self.params.lstm(layer, 0))?;
                st.h[layer] = h;
                st.c[layer] = c;
                layer_in = st.h[layer].clone();
            }
            let p: Vec<f64> = (0..od)
                .map(|j| act.apply(b[j] + dot(&w[j * din..(j + 1) * din], &layer_in)) as f64)
                .collect();
            out.push(match arch.target {
                TargetKind::Mrm => reconstruct_from_mask(p[0], xr),
                TargetKind::Cc => Complex64::new(p[0], p[1]) * mu,
                TargetKind::Sf | TargetKind::Ssf => {
                    let (re, im) = apply_spatial_filter(&p, &x)?;
                    Complex64::new(re, im) * mu
                }
            });
        }
        Ok(out)
    }
}
