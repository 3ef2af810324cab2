//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr and
//! then asserts. The trained desk-scale models are shared through one
//! lazily built fixture.

use std::io::Write;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nbdf_core::audio::AudioBuffer;
use nbdf_core::enhancer::enhance;
use nbdf_core::eval::{evaluate_mixtures, filter_smoothness, mse_vs_timestep, region_mean, summarize, EvalSummary};
use nbdf_core::mixer::{
    build_dataset, mix_at_snr, synth_clean_corpus, synth_noise_corpus, DatasetConfig, Mixture, NoiseFamily,
};
use nbdf_core::nn::gradcheck::check_all;
use nbdf_core::nn::{count_parameters, Arch, Checkpoint, ModelParameters};
use nbdf_core::parallel::ExecMode;
use nbdf_core::stft::{istft, stft};
use nbdf_core::targets::{apply_spatial_filter, compute_mrm, LossTerms, TargetKind};
use nbdf_core::trainer::{build_training_pool, train, utterances, TrainConfig, TrainingPool, Utterance};

const SR: u32 = 16_000;

fn report(id: &str, name: &str, ok: bool, detail: String) {
    let mut e = std::io::stderr();
    let _ = writeln!(e, "[{}] {id} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

// Desk-scale fixture: synthetic corpora, five trained models, test sets.

const TRAIN_MIXTURES: usize = 200;
const TRAIN_SECONDS: usize = 2;
const TEST_MIXTURES: usize = 12;
const TEST_SECONDS: usize = 3;
const EPOCHS: usize = 5;
const POOL_ITEMS: usize = 8000;
const CURVE_FRAMES: usize = 375;
const CURVE_SEGMENTS: usize = 64;
const CURVE_ITEMS: usize = 2000;

struct Desk {
    sf2: Checkpoint,
    mrm2: Checkpoint,
    sf2_uni: Checkpoint,
    ssf2: Checkpoint,
    sf4: Checkpoint,
    test_a2: Vec<Mixture>,
    test_b2: Vec<Mixture>,
    test_a4: Vec<Mixture>,
    /// Fixed-length (375-frame) spatial-filter sequences from test mixtures.
    curve_pool: TrainingPool,
}

fn desk_config(channels: usize, target: TargetKind, bidirectional: bool) -> TrainConfig {
    TrainConfig {
        epochs: EPOCHS,
        max_pool_items: Some(POOL_ITEMS),
        seed: 7,
        ..TrainConfig::desk(channels, target, bidirectional)
    }
}

fn train_model(mixtures: &[Mixture], cfg: &TrainConfig) -> Checkpoint {
    let pool = build_training_pool(
        &utterances(mixtures),
        cfg.target,
        cfg.ref_channel,
        cfg.seq_len,
        cfg.max_pool_items,
        cfg.seed,
        ExecMode::Parallel,
    )
    .unwrap();
    train(&pool, cfg).unwrap().checkpoint
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let train_clean = synth_clean_corpus(50, TRAIN_SECONDS * SR as usize, 1).unwrap();
        let test_clean = synth_clean_corpus(TEST_MIXTURES, TEST_SECONDS * SR as usize, 99).unwrap();
        let long_clean = synth_clean_corpus(CURVE_SEGMENTS, 8 * SR as usize, 123).unwrap();
        // Four-channel noise files; two-channel mixtures use the first two.
        let noise_a = synth_noise_corpus(NoiseFamily::A, 4, 30 * SR as usize, 4, 2).unwrap();
        let noise_b = synth_noise_corpus(NoiseFamily::B, 4, 30 * SR as usize, 4, 3).unwrap();
        let mix = |clean: &[AudioBuffer], noise: &[AudioBuffer], cfg: DatasetConfig| {
            build_dataset(clean, noise, &cfg, ExecMode::Parallel).unwrap()
        };
        let train2 = mix(&train_clean, &noise_a, DatasetConfig::train(TRAIN_MIXTURES, 2, 4));
        let train4 = mix(&train_clean, &noise_a, DatasetConfig::train(TRAIN_MIXTURES, 4, 4));
        let test_a2 = mix(&test_clean, &noise_a, DatasetConfig::test(TEST_MIXTURES, 2, 5, 0.0));
        let test_b2 = mix(&test_clean, &noise_b, DatasetConfig::test(TEST_MIXTURES, 2, 5, 0.0));
        let test_a4 = mix(&test_clean, &noise_a, DatasetConfig::test(TEST_MIXTURES, 4, 5, 0.0));
        let long = mix(&long_clean, &noise_a, DatasetConfig::test(CURVE_SEGMENTS, 2, 6, 0.0));
        // Cut each curve sequence from running speech at a random offset so
        // speech activity does not depend on the time step.
        let seg_len = (CURVE_FRAMES - 1) * 256 + 512;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let segments: Vec<(AudioBuffer, Vec<f64>)> = long
            .iter()
            .map(|m| {
                let start = rng.gen_range(SR as usize / 2..m.noisy.len() - seg_len);
                (m.noisy.segment(start, seg_len).unwrap(), m.clean_ref()[start..start + seg_len].to_vec())
            })
            .collect();
        let curve_utts: Vec<Utterance<'_>> =
            segments.iter().map(|(n, c)| Utterance { noisy: n, clean_ref: c }).collect();
        let curve_pool = build_training_pool(
            &curve_utts,
            TargetKind::Sf,
            1,
            CURVE_FRAMES,
            Some(CURVE_ITEMS),
            8,
            ExecMode::Parallel,
        )
        .unwrap();
        Desk {
            sf2: train_model(&train2, &desk_config(2, TargetKind::Sf, true)),
            mrm2: train_model(&train2, &desk_config(2, TargetKind::Mrm, true)),
            sf2_uni: train_model(&train2, &desk_config(2, TargetKind::Sf, false)),
            ssf2: train_model(&train2, &desk_config(2, TargetKind::Ssf, true)),
            sf4: train_model(&train4, &desk_config(4, TargetKind::Sf, true)),
            test_a2,
            test_b2,
            test_a4,
            curve_pool,
        }
    })
}

fn scores(model: &Checkpoint, test: &[Mixture]) -> EvalSummary {
    summarize(&evaluate_mixtures(model, test, ExecMode::Parallel).unwrap())
}

#[test]
fn c1_parameter_counts() {
    let uni = count_parameters(&Arch::new(4, TargetKind::Sf, false, [256, 128]));
    let bi = count_parameters(&Arch::new(4, TargetKind::Sf, true, [256, 128]));
    let near = |n: usize, r: f64| (n as f64 - r).abs() / r <= 0.005;
    let ok = uni == 469_512 && bi == 1_201_160 && near(uni, 470_000.0) && near(bi, 1_200_000.0);
    report("C1", "parameter counts", ok, format!("unidirectional {uni}, bidirectional {bi}"));
    assert!(ok);
}

#[test]
fn c2_gradient_check() {
    let reports = check_all(2024).unwrap();
    let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
    let kinds: Vec<String> = reports
        .iter()
        .map(|r| format!("{}{}={:.1e}", r.target, if r.bidirectional { "/bi" } else { "" }, r.max_rel_error()))
        .collect();
    let ok = reports.len() == 8 && worst < 1e-4;
    report("C2", "gradient check", ok, format!("max rel error {worst:.2e} [{}]", kinds.join(", ")));
    assert!(ok);
}

#[test]
fn c3_stft_reconstruction_and_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x: Vec<f64> = (0..SR as usize).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = AudioBuffer::mono(x.clone(), SR).unwrap();
    let spec = stft(&a, 512, 256).unwrap();
    let y = istft(&spec, x.len()).unwrap();
    let interior = 256..spec.covered_len() - 256;
    let err: f64 = interior.clone().map(|n| (x[n] - y.channel(0)[n]).powi(2)).sum();
    let sig: f64 = interior.map(|n| x[n].powi(2)).sum();
    let rel_rms = (err / sig).sqrt();

    let clean = AudioBuffer::new(
        (0..2).map(|_| (0..SR as usize).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect(),
        SR,
    )
    .unwrap();
    let noise = AudioBuffer::new(
        (0..2).map(|_| (0..SR as usize).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect(),
        SR,
    )
    .unwrap();
    let (noisy, scaled) = mix_at_snr(&clean, &noise, 3.0, 1).unwrap();
    let (sx, ss, su) = (
        stft(&noisy, 512, 256).unwrap(),
        stft(&clean, 512, 256).unwrap(),
        stft(&scaled, 512, 256).unwrap(),
    );
    let peak = sx.as_slice().iter().map(|c| c.norm()).fold(0.0, f64::max);
    let lin = sx
        .as_slice()
        .iter()
        .zip(ss.as_slice())
        .zip(su.as_slice())
        .map(|((x, s), u)| (x - (s + u)).norm())
        .fold(0.0, f64::max)
        / peak;
    let ok = rel_rms < 1e-6 && lin < 1e-12;
    report(
        "C3",
        "STFT reconstruction and mixture linearity",
        ok,
        format!("interior relative RMS {rel_rms:.2e}, max bin-wise deviation {lin:.2e} of peak"),
    );
    assert!(ok);
}

#[test]
fn c4_target_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut mask_ok = true;
    for _ in 0..10_000 {
        let m = compute_mrm(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)).unwrap();
        mask_ok &= (0.0..=1.0).contains(&m);
    }
    mask_ok &= compute_mrm(1.0, 0.0).unwrap() == 1.0;

    // End to end: a network whose head emits the reference selector.
    let arch = Arch::new(2, TargetKind::Sf, true, [4, 3]);
    let mut p = ModelParameters::<f32>::zeros(arch).unwrap();
    let off = p.block("dense.bias").unwrap().offset;
    p.data_mut()[off + 2] = 20.0;
    let selector = Checkpoint::new(p, 1, 0, serde_json::Value::Null).unwrap();
    let noisy = AudioBuffer::new(
        (0..2).map(|_| (0..SR as usize).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        SR,
    )
    .unwrap();
    let out = enhance(&noisy, &selector, ExecMode::Parallel).unwrap();
    let covered = nbdf_core::stft::num_frames(noisy.len(), 512, 256) * 256 + 256;
    let identity_err = (256..covered - 256)
        .map(|n| (out.audio.channel(0)[n] - noisy.channel(1)[n]).abs())
        .fold(0.0, f64::max);

    let mut mac_err: f64 = 0.0;
    for _ in 0..1000 {
        let ch = rng.gen_range(1..=8);
        let w: Vec<Complex64> = (0..ch).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let x: Vec<Complex64> = (0..ch).map(|_| Complex64::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
        let oracle: Complex64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let flat = |v: &[Complex64]| v.iter().flat_map(|c| [c.re, c.im]).collect::<Vec<f64>>();
        let (re, im) = apply_spatial_filter(&flat(&w), &flat(&x)).unwrap();
        mac_err = mac_err.max((Complex64::new(re, im) - oracle).norm());
    }

    let mut ssf_ok = true;
    for trial in 0..200 {
        let steps = rng.gen_range(2..12);
        let constant = trial % 2 == 0;
        let w0: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pred: Vec<f64> = (0..steps)
            .flat_map(|_| if constant { w0.clone() } else { (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect() })
            .collect();
        let input: Vec<f64> = (0..steps * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..steps * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let terms = |kind| LossTerms {
            kind,
            prediction: &pred,
            target: &target,
            input: &input,
            num_channels: 2,
            valid_len: steps,
            lambda: 1.0,
        };
        let sf = terms(TargetKind::Sf).loss().unwrap();
        let ssf = terms(TargetKind::Ssf).loss().unwrap();
        ssf_ok &= if constant { ssf == sf } else { ssf > sf };
    }
    let ok = mask_ok && identity_err < 1e-5 && mac_err < 1e-12 && ssf_ok;
    report(
        "C4",
        "target algebra",
        ok,
        format!(
            "masks in [0,1]: {mask_ok}; identity filter max abs error {identity_err:.2e}; \
             filter vs complex oracle {mac_err:.2e}; SSF >= SF (equal iff constant): {ssf_ok}"
        ),
    );
    assert!(ok);
}

#[test]
fn c5_desk_scale_enhancement() {
    let d = desk();
    let sf = scores(&d.sf2, &d.test_a2);
    let mrm = scores(&d.mrm2, &d.test_a2);
    let ok = sf.mean_improvement >= 3.0 && mrm.mean_improvement >= 3.0;
    report(
        "C5",
        "desk-scale enhancement at 0 dB",
        ok,
        format!(
            "SF {:+.2} dB, MRM {:+.2} dB over unprocessed {:.2} dB ({} utterances; delay-and-sum {:+.2} dB)",
            sf.mean_improvement,
            mrm.mean_improvement,
            sf.mean_sdr_unprocessed,
            sf.count,
            sf.mean_sdr_delay_and_sum - sf.mean_sdr_unprocessed
        ),
    );
    assert!(ok);
}

#[test]
fn c6a_bidirectional_curve_shape() {
    let d = desk();
    let uni = mse_vs_timestep(&d.sf2_uni, &d.curve_pool, ExecMode::Parallel).unwrap();
    let bi = mse_vs_timestep(&d.sf2, &d.curve_pool, ExecMode::Parallel).unwrap();
    let plateau = 150..325;
    let (uni_p, bi_p) = (region_mean(&uni, plateau.clone()), region_mean(&bi, plateau));
    let head = region_mean(&bi, 0..5);
    let tail = region_mean(&bi, CURVE_FRAMES - 5..CURVE_FRAMES);
    let ok = bi_p < uni_p && head > bi_p && tail > bi_p;
    report(
        "C6a",
        "MSE-vs-timestep ordering",
        ok,
        format!(
            "plateau uni {uni_p:.4} vs bi {bi_p:.4}; bi edges first {head:.4}, last {tail:.4}; uni start {:.4}",
            region_mean(&uni, 0..5)
        ),
    );
    assert!(ok);
}

#[test]
fn c6b_smoothing_reduces_filter_variation() {
    let d = desk();
    let sf = filter_smoothness(&d.sf2, &d.curve_pool, ExecMode::Parallel).unwrap();
    let ssf = filter_smoothness(&d.ssf2, &d.curve_pool, ExecMode::Parallel).unwrap();
    let ok = ssf < sf;
    report("C6b", "filter smoothness SSF < SF", ok, format!("SSF {ssf:.5}, SF {sf:.5}"));
    assert!(ok);
}

#[test]
fn c6c_more_channels_help() {
    let d = desk();
    let two = scores(&d.sf2, &d.test_a2);
    let four = scores(&d.sf4, &d.test_a4);
    let ok = four.mean_sdr_enhanced >= two.mean_sdr_enhanced;
    report(
        "C6c",
        "4-channel SF >= 2-channel SF",
        ok,
        format!("mean SDR 4ch {:.2} dB, 2ch {:.2} dB", four.mean_sdr_enhanced, two.mean_sdr_enhanced),
    );
    assert!(ok);
}

#[test]
fn c7_noise_type_generalization() {
    let d = desk();
    let a = scores(&d.sf2, &d.test_a2);
    let b = scores(&d.sf2, &d.test_b2);
    let ratio = b.mean_improvement / a.mean_improvement;
    let ok = a.mean_improvement > 0.0 && ratio >= 0.5;
    report(
        "C7",
        "noise-type generalization",
        ok,
        format!(
            "in-domain {:+.2} dB, unseen family {:+.2} dB, retained {:.0}%",
            a.mean_improvement,
            b.mean_improvement,
            100.0 * ratio
        ),
    );
    assert!(ok);
}

#[test]
fn c8_determinism_and_checkpoint_roundtrip() {
    let clean = synth_clean_corpus(6, 16_000, 81).unwrap();
    let noise = synth_noise_corpus(NoiseFamily::A, 2, 200_000, 2, 82).unwrap();
    let mixtures = build_dataset(&clean, &noise, &DatasetConfig::train(12, 2, 83), ExecMode::Sequential).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        max_pool_items: Some(600),
        exec: ExecMode::Sequential,
        ..TrainConfig::desk(2, TargetKind::Ssf, true)
    };
    let run = || {
        let pool = build_training_pool(
            &utterances(&mixtures),
            cfg.target,
            cfg.ref_channel,
            cfg.seq_len,
            cfg.max_pool_items,
            cfg.seed,
            ExecMode::Sequential,
        )
        .unwrap();
        train(&pool, &cfg).unwrap().checkpoint
    };
    let bits = |c: &Checkpoint| c.params.data().iter().map(|v| v.to_bits()).collect::<Vec<u32>>();
    let (first, second) = (run(), run());
    let same_runs = bits(&first) == bits(&second) && first.meta == second.meta;

    let dir = tempfile::tempdir().unwrap();
    first.save(dir.path()).unwrap();
    let loaded = Checkpoint::load(dir.path()).unwrap();
    let roundtrip = bits(&loaded) == bits(&first) && loaded.meta == first.meta;
    let ok = same_runs && roundtrip;
    report(
        "C8",
        "determinism and checkpoint round-trip",
        ok,
        format!("identical retrain: {same_runs}; bit-exact save/load: {roundtrip}"),
    );
    assert!(ok);
}
