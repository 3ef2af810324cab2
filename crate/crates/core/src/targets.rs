//! Training targets for the four output variants, the reconstruction rules
//! that turn predictions back into clean-speech coefficients, and the
//! per-sequence losses with their gradients.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::NarrowbandSequence;
use crate::scalar::Scalar;

/// Floor on the mask denominator.
pub const MASK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Magnitude ratio mask.
    Mrm,
    /// Complex coefficient of the clean reference channel.
    Cc,
    /// Spatial filter.
    Sf,
    /// Spatial filter with a temporal smoothing penalty.
    Ssf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Sigmoid => z.sigmoid(),
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Identity => T::one(),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

impl TargetKind {
    pub const ALL: [TargetKind; 4] = [TargetKind::Mrm, TargetKind::Cc, TargetKind::Sf, TargetKind::Ssf];

    pub fn output_dim(self, num_channels: usize) -> usize {
        match self {
            TargetKind::Mrm => 1,
            TargetKind::Cc => 2,
            TargetKind::Sf | TargetKind::Ssf => 2 * num_channels,
        }
    }

    /// Width of the supervision vector per frame.
    pub fn target_dim(self) -> usize {
        match self {
            TargetKind::Mrm => 1,
            _ => 2,
        }
    }

    pub fn activation(self) -> Activation {
        match self {
            TargetKind::Mrm => Activation::Sigmoid,
            TargetKind::Cc => Activation::Identity,
            TargetKind::Sf | TargetKind::Ssf => Activation::Tanh,
        }
    }

    pub fn is_filter(self) -> bool {
        matches!(self, TargetKind::Sf | TargetKind::Ssf)
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Mrm => "mrm",
            TargetKind::Cc => "cc",
            TargetKind::Sf => "sf",
            TargetKind::Ssf => "ssf",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mrm" => Ok(TargetKind::Mrm),
            "cc" => Ok(TargetKind::Cc),
            "sf" => Ok(TargetKind::Sf),
            "ssf" => Ok(TargetKind::Ssf),
            other => invalid(format!("unknown target kind `{other}`")),
        }
    }
}

/// `min(|s_r| / max(|x_r|, floor), 1)`.
pub fn compute_mrm(clean_ref_mag: f64, noisy_ref_mag: f64) -> Result<f64> {
    if !(clean_ref_mag >= 0.0) || !(noisy_ref_mag >= 0.0) {
        return invalid(format!(
            "magnitudes must be non-negative, got {clean_ref_mag} and {noisy_ref_mag}"
        ));
    }
    Ok((clean_ref_mag / noisy_ref_mag.max(MASK_FLOOR)).min(1.0))
}

/// Scale the noisy reference coefficient by the mask; the phase is kept.
pub fn reconstruct_from_mask(mask: f64, noisy_ref: Complex64) -> Complex64 {
    noisy_ref * mask
}

/// Complex multiply-accumulate `sum_i w_i x_i` over interleaved (Re, Im)
/// vectors, without conjugation.
pub fn apply_spatial_filter(w: &[f64], x: &[f64]) -> Result<(f64, f64)> {
    if w.len() != x.len() || w.len() % 2 != 0 || w.is_empty() {
        return invalid(format!(
            "spatial filter needs equal even dimensions, got {} and {}",
            w.len(),
            x.len()
        ));
    }
    Ok(filter_mac(w, x))
}

#[inline]
pub(crate) fn filter_mac<T: Scalar>(w: &[T], x: &[T]) -> (T, T) {
    let mut re = T::zero();
    let mut im = T::zero();
    for (wc, xc) in w.chunks_exact(2).zip(x.chunks_exact(2)) {
        re += wc[0] * xc[0] - wc[1] * xc[1];
        im += wc[0] * xc[1] + wc[1] * xc[0];
    }
    (re, im)
}

/// Supervision for one normalized input window.
///
/// `clean_ref` holds the raw clean reference coefficients aligned with the
/// window's frames. MRM targets are scale-free; coefficient targets are
/// divided by the window's `mu`.
pub fn build_target(
    kind: TargetKind,
    noisy: &NarrowbandSequence,
    clean_ref: &[Complex64],
) -> Result<Vec<f64>> {
    let mu = noisy
        .mu()
        .ok_or_else(|| Error::InvalidArgument("input window must be normalized".into()))?;
    let valid = noisy.valid_len();
    if clean_ref.len() < valid {
        return invalid(format!(
            "clean reference has {} frames, input window has {valid}",
            clean_ref.len()
        ));
    }
    let frames = noisy.len();
    let mut out = vec![0.0; frames * kind.target_dim()];
    for t in 0..valid {
        let s = clean_ref[t];
        match kind {
            TargetKind::Mrm => {
                // Both magnitudes in raw scale.
                let x = noisy.ref_value(t).norm() * mu;
                out[t] = compute_mrm(s.norm(), x)?;
            }
            _ => {
                out[2 * t] = s.re / mu;
                out[2 * t + 1] = s.im / mu;
            }
        }
    }
    Ok(out)
}

/// One sequence's prediction, supervision and input, all frame-major.
/// Only the first `valid_len` frames take part in the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<'a, T> {
    pub kind: TargetKind,
    pub prediction: &'a [T],
    pub target: &'a [T],
    pub input: &'a [T],
    pub num_channels: usize,
    pub valid_len: usize,
    pub lambda: T,
}

impl<'a, T: Scalar> LossTerms<'a, T> {
    fn check(&self) -> Result<()> {
        let od = self.kind.output_dim(self.num_channels);
        let td = self.kind.target_dim();
        let id = 2 * self.num_channels;
        let v = self.valid_len;
        if self.prediction.len() < v * od || self.target.len() < v * td || self.input.len() < v * id
        {
            return invalid(format!(
                "loss inputs shorter than {v} frames (prediction {}, target {}, input {})",
                self.prediction.len(),
                self.target.len(),
                self.input.len()
            ));
        }
        if self.lambda < T::zero() {
            return invalid("smoothing weight must be non-negative");
        }
        Ok(())
    }

    /// Reconstruction error of frame `t`, without the smoothing term.
    fn frame_error(&self, t: usize) -> T {
        let od = self.kind.output_dim(self.num_channels);
        let p = &self.prediction[t * od..(t + 1) * od];
        match self.kind {
            TargetKind::Mrm => {
                let d = self.target[t] - p[0];
                d * d
            }
            TargetKind::Cc => {
                let dr = self.target[2 * t] - p[0];
                let di = self.target[2 * t + 1] - p[1];
                dr * dr + di * di
            }
            TargetKind::Sf | TargetKind::Ssf => {
                let id = 2 * self.num_channels;
                let (re, im) = filter_mac(p, &self.input[t * id..(t + 1) * id]);
                let dr = self.target[2 * t] - re;
                let di = self.target[2 * t + 1] - im;
                dr * dr + di * di
            }
        }
    }

    fn smoothing(&self, t: usize) -> T {
        let od = self.kind.output_dim(self.num_channels);
        let cur = &self.prediction[t * od..(t + 1) * od];
        let prev = &self.prediction[(t - 1) * od..t * od];
        cur.iter().zip(prev).map(|(a, b)| (*a - *b) * (*a - *b)).sum()
    }

    fn uses_smoothing(&self) -> bool {
        self.kind == TargetKind::Ssf && self.lambda > T::zero()
    }

    /// Reconstruction error per valid frame.
    pub fn frame_errors(&self) -> Result<Vec<T>> {
        self.check()?;
        Ok((0..self.valid_len).map(|t| self.frame_error(t)).collect())
    }

    /// Mean over valid frames of the per-frame loss; SSF adds
    /// `lambda * |w(t) - w(t-1)|^2` for every frame after the first.
    pub fn loss(&self) -> Result<T> {
        self.check()?;
        if self.valid_len == 0 {
            return Ok(T::zero());
        }
        let mut total: T = (0..self.valid_len).map(|t| self.frame_error(t)).sum();
        if self.uses_smoothing() {
            let smooth: T = (1..self.valid_len).map(|t| self.smoothing(t)).sum();
            total += self.lambda * smooth;
        }
        Ok(total / T::of(self.valid_len as f64))
    }

    /// Loss and its gradient with respect to every prediction element.
    /// Padded frames get zero gradient.
    pub fn loss_and_grad(&self) -> Result<(T, Vec<T>)> {
        let loss = self.loss()?;
        let od = self.kind.output_dim(self.num_channels);
        let mut grad = vec![T::zero(); self.prediction.len()];
        if self.valid_len == 0 {
            return Ok((loss, grad));
        }
        let scale = T::of(2.0) / T::of(self.valid_len as f64);
        let id = 2 * self.num_channels;
        for t in 0..self.valid_len {
            let p = &self.prediction[t * od..(t + 1) * od];
            let g = &mut grad[t * od..(t + 1) * od];
            match self.kind {
                TargetKind::Mrm => g[0] = scale * (p[0] - self.target[t]),
                TargetKind::Cc => {
                    g[0] = scale * (p[0] - self.target[2 * t]);
                    g[1] = scale * (p[1] - self.target[2 * t + 1]);
                }
                TargetKind::Sf | TargetKind::Ssf => {
                    let x = &self.input[t * id..(t + 1) * id];
                    let (re, im) = filter_mac(p, x);
                    let er = scale * (re - self.target[2 * t]);
                    let ei = scale * (im - self.target[2 * t + 1]);
                    for c in 0..self.num_channels {
                        let (xr, xi) = (x[2 * c], x[2 * c + 1]);
                        g[2 * c] = er * xr + ei * xi;
                        g[2 * c + 1] = ei * xr - er * xi;
                    }
                }
            }
        }
        if self.uses_smoothing() {
            let s = scale * self.lambda;
            for t in 1..self.valid_len {
                for j in 0..od {
                    let d = s * (self.prediction[t * od + j] - self.prediction[(t - 1) * od + j]);
                    grad[t * od + j] += d;
                    grad[(t - 1) * od + j] -= d;
                }
            }
        }
        Ok((loss, grad))
    }
}

/// Scalar training loss for one sequence.
pub fn training_loss<T: Scalar>(terms: &LossTerms<'_, T>) -> Result<T> {
    terms.loss()
}
