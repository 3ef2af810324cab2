use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nbdf_core::targets::TargetKind;

#[derive(Debug, Parser)]
#[command(name = "nbdf", version, about = "Narrow-band multichannel speech enhancement")]
pub struct Cli {
    /// Worker threads for the data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded, fully reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic source corpus (speech-like or noise WAVs).
    Synth(SynthArgs),
    /// Mix clean and noise corpora into a dataset with a JSON manifest.
    Mix(MixArgs),
    /// Train a model on a mixed dataset.
    Train(TrainArgs),
    /// Enhance one multichannel WAV file.
    Enhance(EnhanceArgs),
    /// Score a model on a dataset: SDR of unprocessed, enhanced and delay-and-sum.
    Eval(EvalArgs),
    /// Model diagnostics.
    #[command(subcommand)]
    Diagnose(DiagnoseCommand),
    /// Finite-difference check of the analytic gradients for every target.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Speech,
    NoiseA,
    NoiseB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Mrm,
    Cc,
    Sf,
    Ssf,
}

impl From<TargetArg> for TargetKind {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Mrm => TargetKind::Mrm,
            TargetArg::Cc => TargetKind::Cc,
            TargetArg::Sf => TargetKind::Sf,
            TargetArg::Ssf => TargetKind::Ssf,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 2.0)]
    pub seconds: f64,
    /// Channels of generated noise (speech is always mono).
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Directory of clean WAVs (mono; only the first channel is used).
    #[arg(long)]
    pub clean: PathBuf,
    /// Directory of multichannel noise WAVs.
    #[arg(long)]
    pub noise: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    pub snr_min: f64,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub snr_max: f64,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    /// Reference channel (default: last channel).
    #[arg(long)]
    pub ref_channel: Option<usize>,
    /// Noise region to draw from: first 60% (train) or last 40% (test) of each file.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Largest inter-microphone speech delay in samples.
    #[arg(long, default_value_t = 2.0)]
    pub max_delay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (or its manifest.json) written by `mix`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training target [default: sf].
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    /// Bidirectional recurrent layers (the default).
    #[arg(long, conflicts_with = "unidirectional")]
    pub bidirectional: bool,
    /// Forward-only recurrent layers.
    #[arg(long)]
    pub unidirectional: bool,
    /// First layer width [default: 256; desk scale: 32].
    #[arg(long)]
    pub hidden1: Option<usize>,
    /// Second layer width [default: 128; desk scale: 16].
    #[arg(long)]
    pub hidden2: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sequences per batch [default: 512; desk scale: 64].
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Smoothing weight for ssf [default: 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Training window in frames [default: 192; desk scale: 64].
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Keep a random subset of this many sequences [default: all].
    #[arg(long)]
    pub max_items: Option<usize>,
    /// Global-norm gradient clipping; 0 disables [default: 5].
    #[arg(long)]
    pub clip: Option<f64>,
    /// Held-out share of the pool for the validation loss [default: 0.1].
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from desk-scale sizes (hidden 32/16, batch 64, windows of 64, 8000 sequences).
    #[arg(long)]
    pub desk: bool,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write per-bin diagnostics (mu, mean output) as JSON.
    #[arg(long, conflicts_with = "streaming")]
    pub diagnostics: Option<PathBuf>,
    /// Frame-by-frame processing with a running level estimate
    /// (unidirectional models only).
    #[arg(long)]
    pub streaming: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory or manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Per-utterance CSV; a JSON summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DiagnoseCommand {
    /// Per-timestep loss over fixed-length sequences, as CSV.
    Msecurve(CurveArgs),
    /// Mean squared frame-to-frame filter change (sf/ssf models).
    Smoothness(SmoothnessArgs),
    /// Parameter count of an architecture or checkpoint.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence length; only full-length windows are used.
    #[arg(long, default_value_t = 375)]
    pub frames: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_items: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SmoothnessArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 192)]
    pub frames: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_items: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Read the architecture from a checkpoint instead of flags.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TargetArg::Sf)]
    pub target: TargetArg,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long)]
    pub bidirectional: bool,
    /// First layer width (desk scale: 32).
    #[arg(long, default_value_t = 256)]
    pub hidden1: usize,
    /// Second layer width (desk scale: 16).
    #[arg(long, default_value_t = 128)]
    pub hidden2: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
