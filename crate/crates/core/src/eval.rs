//! Metrics and diagnostics: plain energy-ratio SDR, per-timestep loss curves,
//! filter smoothness, and a delay-and-sum baseline.

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::enhancer::{enhance, BinModel};
use crate::error::{invalid, Result};
use crate::mixer::{fractional_delay, Mixture};
use crate::nn::{model_forward, Checkpoint};
use crate::parallel::{chunk_ranges, map_indexed, ExecMode};
use crate::targets::LossTerms;
use crate::trainer::{TrainItem, TrainingPool, GRAD_CHUNKS};

/// Value reported when the estimate equals the reference exactly.
pub const SDR_CEILING_DB: f64 = 300.0;

/// `10 log10(sum ref^2 / sum (ref - est)^2)`.
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return invalid(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        ));
    }
    let energy: f64 = reference.iter().map(|r| r * r).sum();
    if energy <= 0.0 {
        return invalid("reference signal has zero energy");
    }
    let err: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e) * (r - e)).sum();
    if err == 0.0 {
        return Ok(SDR_CEILING_DB);
    }
    Ok((10.0 * (energy / err).log10()).min(SDR_CEILING_DB))
}

/// Mono-buffer form of [`sdr`].
pub fn sdr_audio(reference: &AudioBuffer, estimate: &AudioBuffer) -> Result<f64> {
    if reference.num_channels() != 1 || estimate.num_channels() != 1 {
        return invalid("SDR takes mono signals");
    }
    sdr(reference.channel(0), estimate.channel(0))
}

/// Average of the channels after removing each channel's delay.
pub fn delay_and_sum(noisy: &AudioBuffer, delays: &[f64]) -> Result<AudioBuffer> {
    if delays.len() != noisy.num_channels() {
        return invalid(format!(
            "{} delays for {} channels",
            delays.len(),
            noisy.num_channels()
        ));
    }
    let n = noisy.len();
    let mut out = vec![0.0; n];
    for (c, d) in delays.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(fractional_delay(noisy.channel(c), -d)) {
            *o += v;
        }
    }
    let scale = 1.0 / delays.len() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    AudioBuffer::mono(out, noisy.sample_rate())
}

fn forward(model: &Checkpoint, item: &TrainItem) -> Result<Vec<f32>> {
    Ok(model_forward(&model.params, &item.input, item.valid_len)?.into_output())
}

fn check_pool(model: &Checkpoint, pool: &TrainingPool) -> Result<()> {
    let arch = model.arch();
    if pool.target != arch.target || pool.num_channels != arch.num_channels {
        return invalid(format!(
            "pool ({}, {} channels) does not match the model ({}, {} channels)",
            pool.target, pool.num_channels, arch.target, arch.num_channels
        ));
    }
    Ok(())
}

/// Mean reconstruction error at every time step across equal-length
/// sequences.
pub fn mse_vs_timestep(model: &Checkpoint, pool: &TrainingPool, exec: ExecMode) -> Result<Vec<f64>> {
    check_pool(model, pool)?;
    let steps = match pool.items.first() {
        Some(it) => it.valid_len,
        None => return invalid("evaluation pool is empty"),
    };
    if let Some(bad) = pool.items.iter().find(|it| it.valid_len != steps) {
        return invalid(format!(
            "sequences must share one length: found {} and {steps}",
            bad.valid_len
        ));
    }
    let arch = *model.arch();
    let chunks = chunk_ranges(pool.len(), GRAD_CHUNKS);
    let partial = map_indexed(exec, chunks.len(), |c| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; steps];
        for item in &pool.items[chunks[c].clone()] {
            let out = forward(model, item)?;
            let terms = LossTerms {
                kind: arch.target,
                prediction: &out,
                target: &item.target,
                input: &item.input,
                num_channels: arch.num_channels,
                valid_len: steps,
                lambda: 0.0,
            };
            for (a, e) in acc.iter_mut().zip(terms.frame_errors()?) {
                *a += e as f64;
            }
        }
        Ok(acc)
    });
    let mut curve = vec![0.0; steps];
    for p in partial {
        for (a, v) in curve.iter_mut().zip(p?) {
            *a += v;
        }
    }
    let n = pool.len() as f64;
    curve.iter_mut().for_each(|v| *v /= n);
    Ok(curve)
}

/// Mean of `|w(t) - w(t-1)|^2` over all consecutive frame pairs in the pool.
pub fn filter_smoothness(model: &Checkpoint, pool: &TrainingPool, exec: ExecMode) -> Result<f64> {
    let arch = *model.arch();
    if !arch.target.is_filter() {
        return invalid(format!("smoothness needs a spatial-filter model, not {}", arch.target));
    }
    if pool.num_channels != arch.num_channels {
        return invalid("pool channel count does not match the model");
    }
    let od = arch.output_dim();
    let chunks = chunk_ranges(pool.len(), GRAD_CHUNKS);
    let partial = map_indexed(exec, chunks.len(), |c| -> Result<(f64, usize)> {
        let (mut sum, mut count) = (0.0, 0usize);
        for item in &pool.items[chunks[c].clone()] {
            let w = forward(model, item)?;
            for t in 1..item.valid_len {
                let (cur, prev) = (&w[t * od..(t + 1) * od], &w[(t - 1) * od..t * od]);
                sum += cur.iter().zip(prev).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
                count += 1;
            }
        }
        Ok((sum, count))
    });
    let (mut sum, mut count) = (0.0, 0);
    for p in partial {
        let (s, n) = p?;
        sum += s;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScores {
    pub utterance: String,
    pub sdr_unprocessed: f64,
    pub sdr_enhanced: f64,
    pub sdr_delay_and_sum: f64,
}

impl UtteranceScores {
    pub fn improvement(&self) -> f64 {
        self.sdr_enhanced - self.sdr_unprocessed
    }
}

/// SDR of the unprocessed reference channel, the enhanced output and the
/// delay-and-sum baseline against the clean reference.
pub fn score_utterance(
    name: impl Into<String>,
    model: &impl BinModel,
    noisy: &AudioBuffer,
    clean_ref: &[f64],
    delays: &[f64],
    exec: ExecMode,
) -> Result<UtteranceScores> {
    let r = model.ref_channel();
    let enhanced = enhance(noisy, model, exec)?;
    // Align every channel to the reference channel's timing.
    let rel: Vec<f64> = delays.iter().map(|d| d - delays[r]).collect();
    let das = delay_and_sum(noisy, &rel)?;
    Ok(UtteranceScores {
        utterance: name.into(),
        sdr_unprocessed: sdr(clean_ref, noisy.channel(r))?,
        sdr_enhanced: sdr(clean_ref, enhanced.audio.channel(0))?,
        sdr_delay_and_sum: sdr(clean_ref, das.channel(0))?,
    })
}

/// Scores for in-memory mixtures. Utterances run one after another; the
/// per-bin work inside each uses `exec`.
pub fn evaluate_mixtures(
    model: &impl BinModel,
    mixtures: &[Mixture],
    exec: ExecMode,
) -> Result<Vec<UtteranceScores>> {
    mixtures
        .iter()
        .map(|m| {
            score_utterance(
                format!("mix_{:04}", m.spec.id),
                model,
                &m.noisy,
                m.clean_ref(),
                &m.spec.delays,
                exec,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub mean_sdr_unprocessed: f64,
    pub mean_sdr_enhanced: f64,
    pub mean_sdr_delay_and_sum: f64,
    pub mean_improvement: f64,
}

pub fn summarize(scores: &[UtteranceScores]) -> EvalSummary {
    let n = scores.len().max(1) as f64;
    let mean = |f: fn(&UtteranceScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    EvalSummary {
        count: scores.len(),
        mean_sdr_unprocessed: mean(|s| s.sdr_unprocessed),
        mean_sdr_enhanced: mean(|s| s.sdr_enhanced),
        mean_sdr_delay_and_sum: mean(|s| s.sdr_delay_and_sum),
        mean_improvement: mean(UtteranceScores::improvement),
    }
}

/// Long-format CSV: `utterance,metric,value`.
pub fn scores_csv(scores: &[UtteranceScores]) -> String {
    let mut out = String::from("utterance,metric,value\n");
    for s in scores {
        for (metric, v) in [
            ("sdr_unprocessed", s.sdr_unprocessed),
            ("sdr_enhanced", s.sdr_enhanced),
            ("sdr_delay_and_sum", s.sdr_delay_and_sum),
        ] {
            out.push_str(&format!("{},{metric},{v}\n", s.utterance));
        }
    }
    out
}

/// `timestep,loss` rows.
pub fn curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("timestep,loss\n");
    for (t, v) in curve.iter().enumerate() {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

/// Mean of `curve` over `range`, clamped to the curve length.
pub fn region_mean(curve: &[f64], range: std::ops::Range<usize>) -> f64 {
    let r = range.start.min(curve.len())..range.end.min(curve.len());
    if r.is_empty() {
        return f64::NAN;
    }
    curve[r.clone()].iter().sum::<f64>() / r.len() as f64
}
