//! Mini-batch training of the shared narrow-band network.
//!
//! Training items are (utterance, bin, window) triples pooled across all
//! frequencies, so one parameter set sees every bin. Batch gradients are
//! summed over fixed chunks and folded in index order, which keeps results
//! identical whether the chunks run in parallel or not.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Error, Result};
use crate::features::{extract_bin_sequence, normalize_sequence, slice_starts, DEFAULT_SEQ_LEN};
use crate::mixer::Mixture;
use crate::nn::{
    adam_step, model_backward_into, model_forward, AdamConfig, AdamState, Arch, Checkpoint,
    ModelParameters, DESK_HIDDEN, FULL_HIDDEN,
};
use crate::parallel::{chunk_ranges, map_indexed, ExecMode};
use crate::stft::{num_frames, stft, DEFAULT_FRAME_LEN, DEFAULT_HOP};
use crate::targets::{build_target, LossTerms, TargetKind};

/// Number of gradient partial sums per batch. Fixed so that the reduction
/// order does not depend on the worker count.
pub const GRAD_CHUNKS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub target: TargetKind,
    pub bidirectional: bool,
    pub num_channels: usize,
    pub ref_channel: usize,
    pub hidden: [usize; 2],
    pub seq_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    /// Weight of the filter smoothing term (SSF only).
    pub lambda: f64,
    pub seed: u64,
    /// Share of the pool held out for the validation loss.
    pub val_fraction: f64,
    /// Random subset of the pool to keep, for small machines.
    pub max_pool_items: Option<usize>,
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            target: TargetKind::Sf,
            bidirectional: true,
            num_channels: 2,
            ref_channel: 1,
            hidden: FULL_HIDDEN,
            seq_len: DEFAULT_SEQ_LEN,
            batch_size: 512,
            epochs: 10,
            lr: 1e-3,
            clip_norm: Some(5.0),
            lambda: 1.0,
            seed: 0,
            val_fraction: 0.1,
            max_pool_items: None,
            exec: ExecMode::Parallel,
        }
    }
}

impl TrainConfig {
    /// Reduced sizes that train in minutes on one core.
    pub fn desk(num_channels: usize, target: TargetKind, bidirectional: bool) -> Self {
        Self {
            target,
            bidirectional,
            num_channels,
            ref_channel: num_channels - 1,
            hidden: DESK_HIDDEN,
            seq_len: 64,
            batch_size: 64,
            max_pool_items: Some(8000),
            ..Self::default()
        }
    }

    pub fn arch(&self) -> Arch {
        Arch::new(self.num_channels, self.target, self.bidirectional, self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        if self.ref_channel >= self.num_channels {
            return invalid(format!(
                "reference channel {} out of range for {} channels",
                self.ref_channel, self.num_channels
            ));
        }
        if self.seq_len == 0 || self.batch_size == 0 {
            return invalid("seq_len and batch_size must be positive");
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if !(self.lr >= 0.0) || !(self.lambda >= 0.0) {
            return invalid("lr and lambda must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return invalid("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One training sequence. `input` and `target` hold only the valid frames;
/// padding is never fed to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub utterance: usize,
    pub bin: usize,
    pub start: usize,
    pub valid_len: usize,
    pub input: Vec<f32>,
    pub target: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainingPool {
    pub target: TargetKind,
    pub num_channels: usize,
    pub seq_len: usize,
    pub items: Vec<TrainItem>,
}

impl TrainingPool {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Noisy multichannel recording paired with its clean reference-channel
/// signal.
#[derive(Debug, Clone, Copy)]
pub struct Utterance<'a> {
    pub noisy: &'a AudioBuffer,
    pub clean_ref: &'a [f64],
}

pub fn utterances(mixtures: &[Mixture]) -> Vec<Utterance<'_>> {
    mixtures.iter().map(|m| Utterance { noisy: &m.noisy, clean_ref: m.clean_ref() }).collect()
}

/// Slice every utterance into per-bin windows, shuffle the pool with
/// `seed`, and optionally keep a random subset.
pub fn build_training_pool(
    utts: &[Utterance<'_>],
    target: TargetKind,
    ref_channel: usize,
    seq_len: usize,
    max_items: Option<usize>,
    seed: u64,
    exec: ExecMode,
) -> Result<TrainingPool> {
    let num_channels = match utts.first() {
        Some(u) => u.noisy.num_channels(),
        None => {
            return Ok(TrainingPool { target, num_channels: 0, seq_len, items: Vec::new() });
        }
    };
    let num_bins = DEFAULT_FRAME_LEN / 2 + 1;
    let mut keys = Vec::new();
    for (u, utt) in utts.iter().enumerate() {
        if utt.noisy.num_channels() != num_channels {
            return invalid(format!(
                "utterance {u} has {} channels, expected {num_channels}",
                utt.noisy.num_channels()
            ));
        }
        if utt.clean_ref.len() != utt.noisy.len() {
            return invalid(format!("utterance {u}: clean and noisy lengths differ"));
        }
        let frames = num_frames(utt.noisy.len(), DEFAULT_FRAME_LEN, DEFAULT_HOP);
        let starts = slice_starts(frames, seq_len);
        for bin in 0..num_bins {
            keys.extend(starts.iter().map(|&s| (u, bin, s)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    if let Some(m) = max_items {
        keys.truncate(m);
    }
    // Materialize per utterance so only one spectrogram pair lives at a time
    // per worker, then restore the shuffled order.
    let mut by_utt: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); utts.len()];
    for (pos, &(u, bin, s)) in keys.iter().enumerate() {
        by_utt[u].push((pos, bin, s));
    }
    let built = map_indexed(exec, utts.len(), |u| -> Result<Vec<(usize, TrainItem)>> {
        if by_utt[u].is_empty() {
            return Ok(Vec::new());
        }
        let noisy = stft(utts[u].noisy, DEFAULT_FRAME_LEN, DEFAULT_HOP)?;
        let clean = stft(
            &AudioBuffer::mono(utts[u].clean_ref.to_vec(), utts[u].noisy.sample_rate())?,
            DEFAULT_FRAME_LEN,
            DEFAULT_HOP,
        )?;
        by_utt[u]
            .iter()
            .map(|&(pos, bin, start)| {
                let seq = extract_bin_sequence(&noisy, bin, ref_channel)?;
                let win = normalize_sequence(&seq.window(start, seq_len))?;
                let v = win.valid_len();
                let clean_track = &clean.bin_track(0, bin)[start..start + v];
                let tgt = build_target(target, &win, clean_track)?;
                let item = TrainItem {
                    utterance: u,
                    bin,
                    start,
                    valid_len: v,
                    input: win.values()[..v * win.dim()].iter().map(|&x| x as f32).collect(),
                    target: tgt[..v * target.target_dim()].iter().map(|&x| x as f32).collect(),
                };
                Ok((pos, item))
            })
            .collect()
    });
    let mut slots: Vec<Option<TrainItem>> = vec![None; keys.len()];
    for group in built {
        for (pos, item) in group? {
            slots[pos] = Some(item);
        }
    }
    Ok(TrainingPool {
        target,
        num_channels,
        seq_len,
        items: slots.into_iter().map(|s| s.expect("every key materialized")).collect(),
    })
}

fn terms<'a>(
    item: &'a TrainItem,
    prediction: &'a [f32],
    kind: TargetKind,
    num_channels: usize,
    lambda: f32,
) -> LossTerms<'a, f32> {
    LossTerms {
        kind,
        prediction,
        target: &item.target,
        input: &item.input,
        num_channels,
        valid_len: item.valid_len,
        lambda,
    }
}

/// Loss of one item; its parameter gradient is added to `grads`.
pub fn item_loss_and_grad(
    params: &ModelParameters<f32>,
    item: &TrainItem,
    lambda: f32,
    grads: &mut [f32],
) -> Result<f32> {
    let arch = params.arch();
    let cache = model_forward(params, &item.input, item.valid_len)?;
    let (loss, d_out) =
        terms(item, cache.output(), arch.target, arch.num_channels, lambda).loss_and_grad()?;
    model_backward_into(params, &cache, &d_out, grads)?;
    Ok(loss)
}

pub fn item_loss(params: &ModelParameters<f32>, item: &TrainItem, lambda: f32) -> Result<f32> {
    let arch = params.arch();
    let cache = model_forward(params, &item.input, item.valid_len)?;
    terms(item, cache.output(), arch.target, arch.num_channels, lambda).loss()
}

/// Summed loss and summed gradient over `batch` (indices into `items`).
pub fn batch_gradient(
    params: &ModelParameters<f32>,
    items: &[TrainItem],
    batch: &[usize],
    lambda: f32,
    exec: ExecMode,
) -> Result<(f64, Vec<f32>)> {
    let chunks = chunk_ranges(batch.len(), GRAD_CHUNKS);
    let partial = map_indexed(exec, chunks.len(), |c| -> Result<(f64, Vec<f32>)> {
        let mut g = vec![0.0f32; params.len()];
        let mut loss = 0.0f64;
        for &i in &batch[chunks[c].clone()] {
            loss += item_loss_and_grad(params, &items[i], lambda, &mut g)? as f64;
        }
        Ok((loss, g))
    });
    let mut total = vec![0.0f32; params.len()];
    let mut loss = 0.0;
    for p in partial {
        let (l, g) = p?;
        loss += l;
        total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
    }
    Ok((loss, total))
}

/// Mean loss over `items`, no gradients.
pub fn mean_loss(
    params: &ModelParameters<f32>,
    items: &[TrainItem],
    lambda: f32,
    exec: ExecMode,
) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let chunks = chunk_ranges(items.len(), GRAD_CHUNKS);
    let partial = map_indexed(exec, chunks.len(), |c| -> Result<f64> {
        items[chunks[c].clone()].iter().map(|it| Ok(item_loss(params, it, lambda)? as f64)).sum()
    });
    let mut sum = 0.0;
    for p in partial {
        sum += p?;
    }
    Ok(sum / items.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub mean_val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

pub fn train(pool: &TrainingPool, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(pool, cfg, |_| {})
}

/// Train from a fresh initialization; `on_epoch` sees each epoch's losses
/// as soon as they are known.
pub fn train_with(
    pool: &TrainingPool,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pool.is_empty() {
        return invalid("training pool is empty");
    }
    if pool.target != cfg.target || pool.num_channels != cfg.num_channels {
        return invalid(format!(
            "pool ({} target, {} channels) does not match the configuration ({}, {})",
            pool.target, pool.num_channels, cfg.target, cfg.num_channels
        ));
    }
    let n_val = ((pool.len() as f64) * cfg.val_fraction).floor() as usize;
    let n_val = n_val.min(pool.len() - 1);
    let (train_items, val_items) = pool.items.split_at(pool.len() - n_val);

    let mut params = ModelParameters::<f32>::init(cfg.arch(), cfg.seed)?;
    let adam = AdamConfig { lr: cfg.lr, clip_norm: cfg.clip_norm, ..AdamConfig::default() };
    let mut state = AdamState::new(params.len(), adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let lambda = cfg.lambda as f32;
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grad) = batch_gradient(&params, train_items, batch, lambda, cfg.exec)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += loss;
            let inv = 1.0 / batch.len() as f32;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam_step(&mut params, &grad, &mut state)?;
        }
        let entry = EpochLog {
            epoch,
            mean_train_loss: epoch_loss / train_items.len() as f64,
            mean_val_loss: mean_loss(&params, val_items, lambda, cfg.exec)?,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    let checkpoint =
        Checkpoint::new(params, cfg.ref_channel, cfg.seed, serde_json::to_value(cfg)?)?;
    Ok(TrainOutcome { checkpoint, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixer::{build_dataset, synth_clean_corpus, synth_noise_corpus, DatasetConfig, NoiseFamily};
    use crate::nn::count_parameters;

    fn tiny_mixtures(n: usize) -> Vec<Mixture> {
        let clean = synth_clean_corpus(2, 6000, 3).unwrap();
        let noise = synth_noise_corpus(NoiseFamily::A, 1, 40_000, 2, 4).unwrap();
        build_dataset(&clean, &noise, &DatasetConfig::train(n, 2, 5), ExecMode::Sequential).unwrap()
    }

    fn tiny_cfg(target: TargetKind) -> TrainConfig {
        TrainConfig {
            hidden: [4, 3],
            seq_len: 8,
            batch_size: 16,
            epochs: 2,
            max_pool_items: Some(96),
            ..TrainConfig::desk(2, target, true)
        }
    }

    fn pool_for(m: &[Mixture], cfg: &TrainConfig) -> TrainingPool {
        build_training_pool(
            &utterances(m),
            cfg.target,
            cfg.ref_channel,
            cfg.seq_len,
            cfg.max_pool_items,
            cfg.seed,
            ExecMode::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn pool_layout_and_padding() {
        let m = tiny_mixtures(2);
        let cfg = TrainConfig { max_pool_items: None, ..tiny_cfg(TargetKind::Sf) };
        let pool = pool_for(&m, &cfg);
        // 6000 samples -> 22 frames -> windows at 0, 4, ..., 12 plus a tail at 16.
        let frames = num_frames(6000, 512, 256);
        assert_eq!(frames, 22);
        let starts = slice_starts(frames, 8);
        assert_eq!(starts, vec![0, 4, 8, 12, 16]);
        assert_eq!(pool.len(), 2 * 257 * starts.len());
        for it in &pool.items {
            assert_eq!(it.input.len(), it.valid_len * 4);
            assert_eq!(it.target.len(), it.valid_len * 2);
            let expect = if it.start == 16 { 6 } else { 8 };
            assert_eq!(it.valid_len, expect);
        }
    }

    #[test]
    fn subsampled_pool_is_a_prefix_of_the_same_shuffle() {
        let m = tiny_mixtures(2);
        let cfg = tiny_cfg(TargetKind::Mrm);
        let full = pool_for(&m, &TrainConfig { max_pool_items: None, ..cfg.clone() });
        let sub = pool_for(&m, &cfg);
        assert_eq!(sub.len(), 96);
        assert_eq!(&full.items[..96], &sub.items[..]);
        let par = build_training_pool(&utterances(&m), cfg.target, 1, 8, Some(96), cfg.seed, ExecMode::Parallel)
            .unwrap();
        assert_eq!(par.items, sub.items);
    }

    #[test]
    fn batch_gradient_is_the_sum_of_item_gradients() {
        let m = tiny_mixtures(1);
        let cfg = tiny_cfg(TargetKind::Ssf);
        let pool = pool_for(&m, &cfg);
        let p = ModelParameters::<f32>::init(cfg.arch(), 1).unwrap();
        let batch: Vec<usize> = (0..20).collect();
        let (loss, g) = batch_gradient(&p, &pool.items, &batch, 1.0, ExecMode::Parallel).unwrap();
        let mut want = vec![0.0f32; p.len()];
        let mut want_loss = 0.0;
        for &i in &batch {
            let mut gi = vec![0.0f32; p.len()];
            want_loss += item_loss_and_grad(&p, &pool.items[i], 1.0, &mut gi).unwrap() as f64;
            want.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
        }
        assert!((loss - want_loss).abs() < 1e-4 * want_loss.abs().max(1.0));
        for (a, b) in g.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-2));
        }
        // Items from different bins all land in the same parameter vector.
        let bins: std::collections::HashSet<usize> = batch.iter().map(|&i| pool.items[i].bin).collect();
        assert!(bins.len() > 1);
        assert_eq!(g.len(), count_parameters(&cfg.arch()));
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let m = tiny_mixtures(2);
        let cfg = tiny_cfg(TargetKind::Sf);
        let pool = pool_for(&m, &cfg);
        let a = train(&pool, &TrainConfig { exec: ExecMode::Sequential, ..cfg.clone() }).unwrap();
        let b = train(&pool, &TrainConfig { exec: ExecMode::Parallel, ..cfg }).unwrap();
        let bits = |o: &TrainOutcome| o.checkpoint.params.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 2);
    }

    #[test]
    fn training_lowers_the_loss() {
        let m = tiny_mixtures(2);
        let cfg = TrainConfig { epochs: 6, lr: 5e-3, max_pool_items: Some(256), ..tiny_cfg(TargetKind::Mrm) };
        let pool = pool_for(&m, &cfg);
        let out = train(&pool, &cfg).unwrap();
        let first = out.log.first().unwrap().mean_train_loss;
        let last = out.log.last().unwrap().mean_train_loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn pool_sizes_for_whole_windows() {
        // 192 frames -> one window per bin; 288 frames -> two.
        for (frames, per_bin) in [(192usize, 1usize), (288, 2)] {
            let len = (frames - 1) * 256 + 512;
            let noisy = AudioBuffer::new(vec![vec![0.1; len]; 2], 16_000).unwrap();
            let clean = vec![0.05; len];
            let u = [Utterance { noisy: &noisy, clean_ref: &clean }];
            let pool =
                build_training_pool(&u, TargetKind::Cc, 1, 192, None, 0, ExecMode::Sequential).unwrap();
            assert_eq!(pool.len(), 257 * per_bin);
            assert!(pool.items.iter().all(|it| it.valid_len == 192));
        }
        let empty = build_training_pool(&[], TargetKind::Cc, 0, 192, None, 0, ExecMode::Sequential).unwrap();
        assert!(empty.is_empty());
        let noisy = AudioBuffer::zeros(1, 1000, 16_000).unwrap();
        let short = vec![0.0; 999];
        assert!(build_training_pool(
            &[Utterance { noisy: &noisy, clean_ref: &short }],
            TargetKind::Cc,
            0,
            192,
            None,
            0,
            ExecMode::Sequential
        )
        .is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_the_initialization() {
        let m = tiny_mixtures(1);
        let cfg = TrainConfig { lr: 0.0, ..tiny_cfg(TargetKind::Cc) };
        let pool = pool_for(&m, &cfg);
        let out = train(&pool, &cfg).unwrap();
        let init = ModelParameters::<f32>::init(cfg.arch(), cfg.seed).unwrap();
        let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(out.checkpoint.params.data()), bits(init.data()));
    }

    #[test]
    fn padding_never_reaches_the_loss() {
        let m = tiny_mixtures(1);
        let cfg = TrainConfig { max_pool_items: None, ..tiny_cfg(TargetKind::Ssf) };
        let pool = pool_for(&m, &cfg);
        let item = pool.items.iter().find(|it| it.valid_len < cfg.seq_len).unwrap();
        let p = ModelParameters::<f32>::init(cfg.arch(), 2).unwrap();
        let mut padded = item.clone();
        padded.input.resize(cfg.seq_len * 4, 0.0);
        padded.target.resize(cfg.seq_len * 2, 0.0);
        let (mut ga, mut gb) = (vec![0.0; p.len()], vec![0.0; p.len()]);
        let la = item_loss_and_grad(&p, item, 1.0, &mut ga).unwrap();
        let lb = item_loss_and_grad(&p, &padded, 1.0, &mut gb).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn desk_run_loss_decreases_every_epoch() {
        let m = tiny_mixtures(4);
        let cfg = TrainConfig {
            hidden: crate::nn::DESK_HIDDEN,
            seq_len: 16,
            epochs: 5,
            batch_size: 16,
            val_fraction: 0.0,
            max_pool_items: Some(200),
            ..TrainConfig::desk(2, TargetKind::Mrm, true)
        };
        let pool = pool_for(&m, &cfg);
        assert_eq!(pool.len(), 200);
        let out = train(&pool, &cfg).unwrap();
        for w in out.log.windows(2) {
            assert!(w[1].mean_train_loss < w[0].mean_train_loss, "{:?}", out.log);
        }
    }

    #[test]
    fn mismatched_pool_is_rejected() {
        let m = tiny_mixtures(1);
        let cfg = tiny_cfg(TargetKind::Sf);
        let pool = pool_for(&m, &cfg);
        assert!(train(&pool, &TrainConfig { target: TargetKind::Cc, ..cfg.clone() }).is_err());
        assert!(train(&pool, &TrainConfig { batch_size: 0, ..cfg }).is_err());
    }
}
