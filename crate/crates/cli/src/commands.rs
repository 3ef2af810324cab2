use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use nbdf_core::audio::{read_wav, write_wav, AudioBuffer, WavEncoding, SAMPLE_RATE};
use nbdf_core::enhancer::{enhance as enhance_audio, MuSource, StreamingEnhancer};
use nbdf_core::eval::{curve_csv, filter_smoothness, mse_vs_timestep, score_utterance, scores_csv, summarize};
use nbdf_core::manifest::{load_dataset, read_wav_dir, write_dataset, StoredMixture};
use nbdf_core::mixer::{build_dataset, synth_clean_corpus, synth_noise_corpus, DatasetConfig, NoiseFamily, Split};
use nbdf_core::nn::checkpoint::Checkpoint;
use nbdf_core::nn::gradcheck::check_all;
use nbdf_core::nn::{count_parameters, Arch};
use nbdf_core::parallel::ExecMode;
use nbdf_core::stft::{istft, stft, ComplexSpectrogram, DEFAULT_FRAME_LEN, DEFAULT_HOP};
use nbdf_core::trainer::{build_training_pool, train_with, TrainConfig, TrainingPool};
use serde_json::Value;

use crate::cli::*;

/// Gradient checks pass below this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn synth(a: SynthArgs) -> Result<()> {
    let len = (a.seconds * SAMPLE_RATE as f64).round() as usize;
    if len == 0 || a.count == 0 {
        bail!("--count and --seconds must be positive");
    }
    let (prefix, corpus) = match a.kind {
        SynthKind::Speech => ("speech", synth_clean_corpus(a.count, len, a.seed)?),
        SynthKind::NoiseA => ("noise_a", synth_noise_corpus(NoiseFamily::A, a.count, len, a.channels, a.seed)?),
        SynthKind::NoiseB => ("noise_b", synth_noise_corpus(NoiseFamily::B, a.count, len, a.channels, a.seed)?),
    };
    fs::create_dir_all(&a.out)?;
    for (i, buf) in corpus.iter().enumerate() {
        write_wav(a.out.join(format!("{prefix}_{i:04}.wav")), buf, WavEncoding::Float32)?;
    }
    println!("wrote {} files to {}", corpus.len(), a.out.display());
    Ok(())
}

pub fn mix(a: MixArgs, exec: ExecMode) -> Result<()> {
    let clean = read_wav_dir(&a.clean).with_context(|| format!("reading {}", a.clean.display()))?;
    let noise = read_wav_dir(&a.noise).with_context(|| format!("reading {}", a.noise.display()))?;
    let cfg = DatasetConfig {
        count: a.count,
        snr_min: a.snr_min,
        snr_max: a.snr_max,
        seed: a.seed,
        num_channels: a.channels,
        ref_channel: a.ref_channel.unwrap_or(a.channels.saturating_sub(1)),
        split: match a.split {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        },
        max_delay: a.max_delay,
    };
    let clean_audio = clean.iter().map(|(_, b)| b.select(0)).collect::<Result<Vec<_>, _>>()?;
    let noise_audio: Vec<AudioBuffer> = noise.iter().map(|(_, b)| b.clone()).collect();
    let mixtures = build_dataset(&clean_audio, &noise_audio, &cfg, exec)?;
    let names = |v: &[(String, AudioBuffer)]| v.iter().map(|(n, _)| n.clone()).collect();
    write_dataset(&a.out, &mixtures, &cfg, names(&clean), names(&noise))?;
    println!("wrote {} mixtures to {}", mixtures.len(), a.out.display());
    Ok(())
}

/// Defaults, then the config file, then explicit flags.
fn resolve_train_config(a: &TrainArgs, num_channels: usize, dataset_ref: usize) -> Result<TrainConfig> {
    let base = if a.desk {
        TrainConfig::desk(num_channels, TrainConfig::default().target, true)
    } else {
        TrainConfig { num_channels, ..TrainConfig::default() }
    };
    let base = TrainConfig { ref_channel: dataset_ref, ..base };
    let mut merged = serde_json::to_value(&base)?;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overlay: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(map) = overlay else {
            bail!("{}: expected a JSON object", path.display());
        };
        let target = merged.as_object_mut().expect("config serializes to an object");
        target.extend(map);
    }
    let mut cfg: TrainConfig = serde_json::from_value(merged).context("invalid training configuration")?;
    if cfg.num_channels != num_channels {
        if a.config.is_some() {
            eprintln!("note: dataset has {num_channels} channels; overriding the configured {}", cfg.num_channels);
        }
        cfg.num_channels = num_channels;
    }
    if let Some(t) = a.target {
        cfg.target = t.into();
    }
    if a.bidirectional {
        cfg.bidirectional = true;
    }
    if a.unidirectional {
        cfg.bidirectional = false;
    }
    if let Some(h) = a.hidden1 {
        cfg.hidden[0] = h;
    }
    if let Some(h) = a.hidden2 {
        cfg.hidden[1] = h;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag {
                cfg.$field = v;
            }
        )*};
    }
    set!(epochs => epochs, batch => batch_size, lr => lr, lambda => lambda, seq_len => seq_len,
         val_fraction => val_fraction, seed => seed);
    if let Some(n) = a.max_items {
        cfg.max_pool_items = Some(n);
    }
    if let Some(c) = a.clip {
        cfg.clip_norm = (c > 0.0).then_some(c);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs, exec: ExecMode) -> Result<()> {
    let (manifest, data) = load_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    if data.is_empty() {
        bail!("dataset {} has no mixtures", a.data.display());
    }
    let mut cfg = resolve_train_config(&a, manifest.config.num_channels, manifest.config.ref_channel)?;
    cfg.exec = exec;
    let utts: Vec<_> = data.iter().map(StoredMixture::utterance).collect();
    let pool = build_training_pool(
        &utts,
        cfg.target,
        cfg.ref_channel,
        cfg.seq_len,
        cfg.max_pool_items,
        cfg.seed,
        exec,
    )?;
    eprintln!(
        "training {} {} on {} sequences ({} parameters)",
        if cfg.bidirectional { "bidirectional" } else { "unidirectional" },
        cfg.target,
        pool.len(),
        count_parameters(&cfg.arch())
    );
    fs::create_dir_all(&a.out)?;
    let mut log = BufWriter::new(File::create(a.out.join("loss.jsonl"))?);
    let mut write_err = None;
    let outcome = train_with(&pool, &cfg, |e| {
        eprintln!("epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.mean_train_loss, e.mean_val_loss);
        let line = serde_json::to_string(e).map_err(std::io::Error::from);
        if let Err(err) = line.and_then(|l| writeln!(log, "{l}").and_then(|_| log.flush())) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(err).context("writing loss.jsonl");
    }
    let mut ckpt = outcome.checkpoint;
    ckpt.meta.train_config = serde_json::to_value(&cfg)?;
    ckpt.save(&a.out)?;
    println!("saved checkpoint to {}", a.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn enhance_streaming(noisy: &AudioBuffer, model: &Checkpoint) -> Result<AudioBuffer> {
    let arch = model.arch();
    if noisy.num_channels() != arch.num_channels {
        bail!("model expects {} channels but the input has {}", arch.num_channels, noisy.num_channels());
    }
    let spec = stft(noisy, DEFAULT_FRAME_LEN, DEFAULT_HOP)?;
    let (bins, frames) = (spec.num_bins(), spec.num_frames());
    let mut engine = StreamingEnhancer::new(model, bins, MuSource::Running)?;
    let mut out = ComplexSpectrogram::zeros(1, frames, spec.frame_len(), spec.hop(), spec.sample_rate())?;
    for t in 0..frames {
        let frame: Vec<Vec<_>> =
            (0..spec.num_channels()).map(|c| (0..bins).map(|k| spec.get(c, k, t)).collect()).collect();
        for (k, v) in engine.push_frame(&frame)?.into_iter().enumerate() {
            out.set(0, k, t, v);
        }
    }
    Ok(istft(&out, noisy.len())?)
}

pub fn enhance(a: EnhanceArgs, exec: ExecMode) -> Result<()> {
    let model = load_model(&a.model)?;
    let noisy = read_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let audio = if a.streaming {
        enhance_streaming(&noisy, &model)?
    } else {
        let out = enhance_audio(&noisy, &model, exec)?;
        if let Some(p) = &a.diagnostics {
            fs::write(p, serde_json::to_string_pretty(&out.diagnostics)?)?;
        }
        out.audio
    };
    write_wav(&a.out, &audio, WavEncoding::Float32)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs, exec: ExecMode) -> Result<()> {
    let model = load_model(&a.model)?;
    let (_, data) = load_dataset(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let scores = data
        .iter()
        .map(|m| score_utterance(m.name.clone(), &model, &m.noisy, &m.clean_ref, &m.spec.delays, exec))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&scores);
    fs::write(&a.out, scores_csv(&scores))?;
    let summary_path = a.out.with_extension("json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    println!("utterances          {}", summary.count);
    println!("sdr unprocessed     {:.2} dB", summary.mean_sdr_unprocessed);
    println!("sdr enhanced        {:.2} dB", summary.mean_sdr_enhanced);
    println!("sdr delay-and-sum   {:.2} dB", summary.mean_sdr_delay_and_sum);
    println!("improvement         {:.2} dB", summary.mean_improvement);
    Ok(())
}

/// Full-length windows only, drawn from the model's own target and channels.
fn fixed_length_pool(
    model: &Checkpoint,
    manifest: &Path,
    frames: usize,
    max_items: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<TrainingPool> {
    let (_, data) = load_dataset(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let utts: Vec<_> = data.iter().map(StoredMixture::utterance).collect();
    let arch = model.arch();
    let mut pool =
        build_training_pool(&utts, arch.target, model.meta.ref_channel, frames, None, seed, exec)?;
    pool.items.retain(|it| it.valid_len == frames);
    pool.items.truncate(max_items);
    if pool.is_empty() {
        bail!("no utterance in {} spans {frames} frames", manifest.display());
    }
    if pool.num_channels != arch.num_channels {
        bail!("model expects {} channels but the data has {}", arch.num_channels, pool.num_channels);
    }
    Ok(pool)
}

pub fn msecurve(a: CurveArgs, exec: ExecMode) -> Result<()> {
    let model = load_model(&a.model)?;
    let pool = fixed_length_pool(&model, &a.manifest, a.frames, a.max_items, a.seed, exec)?;
    let curve = mse_vs_timestep(&model, &pool, exec)?;
    fs::write(&a.out, curve_csv(&curve))?;
    println!("{} sequences of {} frames; curve written to {}", pool.len(), a.frames, a.out.display());
    Ok(())
}

pub fn smoothness(a: SmoothnessArgs, exec: ExecMode) -> Result<()> {
    let model = load_model(&a.model)?;
    let pool = fixed_length_pool(&model, &a.manifest, a.frames, a.max_items, a.seed, exec)?;
    println!("{:.6e}", filter_smoothness(&model, &pool, exec)?);
    Ok(())
}

pub fn params(a: ParamsArgs) -> Result<()> {
    let arch = match &a.model {
        Some(p) => *load_model(p)?.arch(),
        None => {
            let arch = Arch::new(a.channels, a.target.into(), a.bidirectional, [a.hidden1, a.hidden2]);
            arch.validate()?;
            arch
        }
    };
    println!("{}", count_parameters(&arch));
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let reports = check_all(a.seed)?;
    let mut worst = 0.0f64;
    for r in &reports {
        let e = r.max_rel_error();
        worst = worst.max(e);
        let dir = if r.bidirectional { "bi " } else { "uni" };
        println!("{:<4} {dir}  max rel error {e:.3e}", r.target.name());
    }
    let ok = worst < GRADCHECK_TOLERANCE;
    println!("{} max rel error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

