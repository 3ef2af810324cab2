//! Training and evaluation mixtures at controlled SNR.
//!
//! Also provides the synthetic desk-scale sources: harmonic, amplitude
//! modulated "speech" with random onsets (non-stationary, spatially coherent
//! once spatialized) and stationary colored noise that is only weakly
//! correlated across channels.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::{invalid, Result};
use crate::parallel::{map_indexed, ExecMode};

/// Fraction of every noise file reserved for training; the rest is test.
pub const TRAIN_NOISE_FRACTION: f64 = 0.6;
/// Ceiling used for "infinite" SNR.
pub const MAX_SNR_DB: f64 = 300.0;

/// Noise gain so that the reference-channel SNR of `clean + g * noise` is
/// `snr_db`.
pub fn snr_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (clean_power / (noise_power * 10f64.powf(snr_db.min(MAX_SNR_DB) / 10.0))).sqrt()
}

/// Returns `(noisy, scaled_noise)`.
pub fn mix_at_snr(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    ref_channel: usize,
) -> Result<(AudioBuffer, AudioBuffer)> {
    if clean.num_channels() != noise.num_channels() || clean.len() != noise.len() {
        return invalid(format!(
            "clean ({} ch, {} samples) and noise ({} ch, {} samples) differ in shape",
            clean.num_channels(),
            clean.len(),
            noise.num_channels(),
            noise.len()
        ));
    }
    if ref_channel >= clean.num_channels() {
        return invalid(format!("reference channel {ref_channel} out of range"));
    }
    if !snr_db.is_finite() {
        return invalid("SNR must be finite");
    }
    let ps = clean.power(ref_channel);
    let pu = noise.power(ref_channel);
    if ps <= 0.0 || pu <= 0.0 {
        return invalid("clean and noise reference channels need non-zero energy");
    }
    let scaled = noise.scaled(snr_gain(ps, pu, snr_db));
    let channels = clean
        .channels()
        .iter()
        .zip(scaled.channels())
        .map(|(c, n)| c.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    Ok((AudioBuffer::new(channels, clean.sample_rate())?, scaled))
}

/// SNR in dB measured on one channel.
pub fn measured_snr_db(clean: &AudioBuffer, noise: &AudioBuffer, channel: usize) -> f64 {
    10.0 * (clean.power(channel) / noise.power(channel)).log10()
}

/// Delay a signal by a possibly fractional number of samples with a linear
/// phase on its full-length transform (circular).
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 || delay == 0.0 {
        return x.to_vec();
    }
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf = x.to_vec();
    let mut spec = fwd.make_output_vec();
    fwd.process(&mut buf, &mut spec).expect("plan sizes");
    let bins = spec.len();
    for (k, v) in spec.iter_mut().enumerate() {
        let phase = -2.0 * PI * k as f64 * delay / n as f64;
        if n % 2 == 0 && k == bins - 1 {
            // Nyquist stays real.
            *v *= phase.cos();
        } else {
            *v *= num_complex::Complex64::from_polar(1.0, phase);
        }
    }
    spec[0].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut spec, &mut out).expect("plan sizes");
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// Channel `i` is `gains[i]` times `source` delayed by `delays[i]` samples.
pub fn synth_multichannel(source: &AudioBuffer, delays: &[f64], gains: &[f64]) -> Result<AudioBuffer> {
    if source.num_channels() != 1 {
        return invalid("source must be mono");
    }
    if delays.len() != gains.len() || delays.is_empty() {
        return invalid("need one delay and one gain per channel");
    }
    if delays.iter().any(|d| d.abs() >= source.len() as f64) {
        return invalid("delay exceeds source length");
    }
    let x = source.channel(0);
    let channels = delays
        .iter()
        .zip(gains)
        .map(|(d, g)| fractional_delay(x, *d).into_iter().map(|v| v * g).collect())
        .collect();
    AudioBuffer::new(channels, source.sample_rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub id: usize,
    pub split: Split,
    pub seed: u64,
    pub snr_db: f64,
    pub ref_channel: usize,
    pub clean_index: usize,
    pub noise_index: usize,
    pub noise_offset: usize,
    pub len: usize,
    /// Per-channel propagation delay of the speech source, in samples.
    pub delays: Vec<f64>,
    pub gains: Vec<f64>,
}

impl MixSpec {
    pub fn noise_interval(&self) -> std::ops::Range<usize> {
        self.noise_offset..self.noise_offset + self.len
    }
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub spec: MixSpec,
    pub noisy: AudioBuffer,
    /// Spatialized clean speech on every channel.
    pub clean: AudioBuffer,
    pub noise: AudioBuffer,
}

impl Mixture {
    pub fn clean_ref(&self) -> &[f64] {
        self.clean.channel(self.spec.ref_channel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub snr_min: f64,
    pub snr_max: f64,
    pub seed: u64,
    pub num_channels: usize,
    pub ref_channel: usize,
    pub split: Split,
    /// Largest inter-microphone delay of the speech source, in samples.
    pub max_delay: f64,
}

impl DatasetConfig {
    pub fn train(count: usize, num_channels: usize, seed: u64) -> Self {
        Self {
            count,
            snr_min: -5.0,
            snr_max: 10.0,
            seed,
            num_channels,
            ref_channel: num_channels - 1,
            split: Split::Train,
            max_delay: 2.0,
        }
    }

    pub fn test(count: usize, num_channels: usize, seed: u64, snr_db: f64) -> Self {
        Self { snr_min: snr_db, snr_max: snr_db, split: Split::Test, ..Self::train(count, num_channels, seed) }
    }
}

/// Noise sample range usable by `split` in a noise file of `len` samples.
pub fn noise_region(len: usize, split: Split) -> std::ops::Range<usize> {
    let cut = (len as f64 * TRAIN_NOISE_FRACTION).floor() as usize;
    match split {
        Split::Train => 0..cut,
        Split::Test => cut..len,
    }
}

/// Draw mixture specifications. Clean utterances are used round-robin, each
/// paired with independent noise draws.
pub fn plan_dataset(clean_lens: &[usize], noise_lens: &[usize], cfg: &DatasetConfig) -> Result<Vec<MixSpec>> {
    if cfg.count == 0 {
        return Ok(Vec::new());
    }
    if clean_lens.is_empty() || noise_lens.is_empty() {
        return invalid("clean and noise corpora must be non-empty");
    }
    if cfg.num_channels == 0 || cfg.ref_channel >= cfg.num_channels {
        return invalid("invalid channel configuration");
    }
    if !(cfg.snr_min <= cfg.snr_max) {
        return invalid("snr_min must not exceed snr_max");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    for id in 0..cfg.count {
        let clean_index = id % clean_lens.len();
        let len = clean_lens[clean_index];
        let noise_index = rng.gen_range(0..noise_lens.len());
        let region = noise_region(noise_lens[noise_index], cfg.split);
        if region.len() < len {
            return invalid(format!(
                "noise file {noise_index} has {} samples in its {:?} region, need {len}",
                region.len(),
                cfg.split
            ));
        }
        let noise_offset = rng.gen_range(region.start..=region.end - len);
        let snr_db = if cfg.snr_max > cfg.snr_min {
            rng.gen_range(cfg.snr_min..cfg.snr_max)
        } else {
            cfg.snr_min
        };
        let step = if cfg.max_delay > 0.0 { rng.gen_range(-cfg.max_delay..cfg.max_delay) } else { 0.0 };
        let step = step / (cfg.num_channels.max(2) - 1) as f64;
        let delays = (0..cfg.num_channels)
            .map(|i| (i as f64 - cfg.ref_channel as f64) * step)
            .collect();
        let gains = (0..cfg.num_channels).map(|_| rng.gen_range(0.8..1.2)).collect();
        out.push(MixSpec {
            id,
            split: cfg.split,
            seed: cfg.seed,
            snr_db,
            ref_channel: cfg.ref_channel,
            clean_index,
            noise_index,
            noise_offset,
            len,
            delays,
            gains,
        });
    }
    Ok(out)
}

/// Build the mixture for one specification.
pub fn materialize(spec: &MixSpec, clean: &[AudioBuffer], noise: &[AudioBuffer]) -> Result<Mixture> {
    let src = clean
        .get(spec.clean_index)
        .ok_or_else(|| crate::Error::InvalidArgument("clean index out of range".into()))?;
    let src = if src.num_channels() > 1 { src.select(0)? } else { src.clone() };
    let nfile = noise
        .get(spec.noise_index)
        .ok_or_else(|| crate::Error::InvalidArgument("noise index out of range".into()))?;
    let n = spec.delays.len();
    if nfile.num_channels() < n {
        return invalid(format!(
            "noise file {} has {} channels, need {n}",
            spec.noise_index,
            nfile.num_channels()
        ));
    }
    let image = synth_multichannel(&src.segment(0, spec.len)?, &spec.delays, &spec.gains)?;
    let seg = nfile.take_channels(n)?.segment(spec.noise_offset, spec.len)?;
    let (noisy, noise) = mix_at_snr(&image, &seg, spec.snr_db, spec.ref_channel)?;
    Ok(Mixture { spec: spec.clone(), noisy, clean: image, noise })
}

/// Reproducible dataset: a pure function of the corpora and the seed.
pub fn build_dataset(
    clean: &[AudioBuffer],
    noise: &[AudioBuffer],
    cfg: &DatasetConfig,
    exec: ExecMode,
) -> Result<Vec<Mixture>> {
    let clean_lens: Vec<usize> = clean.iter().map(AudioBuffer::len).collect();
    let noise_lens: Vec<usize> = noise.iter().map(AudioBuffer::len).collect();
    let specs = plan_dataset(&clean_lens, &noise_lens, cfg)?;
    map_indexed(exec, specs.len(), |i| materialize(&specs[i], clean, noise))
        .into_iter()
        .collect()
}

/// Synthetic speech-like signal: voiced "syllables" of harmonic tones with
/// gliding pitch and smooth envelopes, separated by silences.
pub fn synth_speech(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    let mut pos = (rng.gen_range(0.02..0.25) * fs) as usize;
    while pos < len {
        let dur = (rng.gen_range(0.08..0.35) * fs) as usize;
        let f0_start: f64 = rng.gen_range(90.0..260.0);
        let f0_end = f0_start * rng.gen_range(0.8..1.25);
        // Two formant-like spectral peaks.
        let formants = [rng.gen_range(300.0..900.0), rng.gen_range(1000.0..2800.0)];
        let amp = rng.gen_range(0.3..1.0);
        let mut phase = 0.0f64;
        let nharm = (4000.0 / f0_start.max(f0_end)).floor() as usize;
        let weights: Vec<f64> = (1..=nharm)
            .map(|h| {
                let f = h as f64 * (f0_start + f0_end) / 2.0;
                let peak: f64 =
                    formants.iter().map(|fm| (-((f - fm) / 250.0).powi(2)).exp()).sum();
                (0.15 + peak) / (h as f64).sqrt()
            })
            .collect();
        for n in 0..dur.min(len - pos) {
            let u = n as f64 / dur as f64;
            let f0 = f0_start + (f0_end - f0_start) * u;
            phase += 2.0 * PI * f0 / fs;
            let env = (PI * u).sin().powi(2);
            let v: f64 = weights
                .iter()
                .enumerate()
                .map(|(h, w)| w * ((h + 1) as f64 * phase).sin())
                .sum();
            out[pos + n] += amp * env * v;
        }
        pos += dur + (rng.gen_range(0.03..0.3) * fs) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// Stationary noise families with different spectral shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    /// Low-pass colored noise.
    A,
    /// High-pass tilted noise with a resonance.
    B,
}

impl std::str::FromStr for NoiseFamily {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(NoiseFamily::A),
            "b" => Ok(NoiseFamily::B),
            other => invalid(format!("unknown noise family `{other}`")),
        }
    }
}

fn colored(family: NoiseFamily, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..len + 2).map(|_| StandardNormal.sample(rng)).collect();
    match family {
        NoiseFamily::A => {
            let mut y = 0.0;
            white[2..]
                .iter()
                .map(|w| {
                    y = 0.9 * y + 0.3 * w;
                    y
                })
                .collect()
        }
        NoiseFamily::B => {
            // Differentiated white noise through a resonator near 3 kHz.
            let (r, theta) = (0.9, 2.0 * PI * 3000.0 / SAMPLE_RATE as f64);
            let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
            let (mut y1, mut y2) = (0.0, 0.0);
            (0..len)
                .map(|n| {
                    let x = 0.4 * (white[n + 2] - white[n + 1]) + 0.3 * white[n + 2];
                    let y = x + 0.3 * (a1 * y1 + a2 * y2);
                    y2 = y1;
                    y1 = y;
                    y
                })
                .collect()
        }
    }
}

/// Multichannel stationary noise; each channel mixes a shared component
/// (weight `coherence`) with an independent one.
pub fn synth_noise(
    family: NoiseFamily,
    len: usize,
    num_channels: usize,
    coherence: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let common = colored(family, len, rng);
    let (a, b) = (coherence.sqrt(), (1.0 - coherence).sqrt());
    (0..num_channels)
        .map(|_| {
            let own = colored(family, len, rng);
            common.iter().zip(&own).map(|(c, o)| 0.1 * (a * c + b * o)).collect()
        })
        .collect()
}

pub fn synth_clean_corpus(count: usize, len: usize, seed: u64) -> Result<Vec<AudioBuffer>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| AudioBuffer::mono(synth_speech(len, &mut rng), SAMPLE_RATE))
        .collect()
}

pub fn synth_noise_corpus(
    family: NoiseFamily,
    count: usize,
    len: usize,
    num_channels: usize,
    seed: u64,
) -> Result<Vec<AudioBuffer>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| AudioBuffer::new(synth_noise(family, len, num_channels, 0.2, &mut rng), SAMPLE_RATE))
        .collect()
}
