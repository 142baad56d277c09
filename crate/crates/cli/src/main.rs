//! Command-line front end: scene synthesis, training, enhancement, and
//! evaluation. Config precedence is defaults < JSON config file <
//! command-line flags, and every run writes its fully resolved config
//! next to its outputs.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "mfaes", version, about = "Multi-frame MVDR acoustic echo suppression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset (near/far/echo/noise/mic WAVs + manifest).
    Synth(SynthArgs),
    /// Train the multi-frame estimator or the baseline mask model.
    Train(TrainArgs),
    /// Enhance a noisy recording given its far-end reference.
    Enhance(EnhanceArgs),
    /// Evaluate methods over a dataset manifest (SI-SDR, ERLE).
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for WAVs and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// JSON config file (overridden by flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of scenes (per condition when --ser-list is given).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ser_min: Option<f64>,
    #[arg(long)]
    ser_max: Option<f64>,
    #[arg(long)]
    snr_min: Option<f64>,
    #[arg(long)]
    snr_max: Option<f64>,
    /// Fixed SER conditions in dB, e.g. "-10,-5,0" (switches to grid mode).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ser_list: Option<Vec<f64>>,
    /// Fixed SNR conditions in dB for grid mode (default 30).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_list: Option<Vec<f64>>,
    #[arg(long)]
    far_len_s: Option<f64>,
    #[arg(long)]
    near_len_s: Option<f64>,
    /// Synthetic room impulse response decay time in ms.
    #[arg(long)]
    t60_ms: Option<f64>,
    /// Synthetic room impulse response length in samples.
    #[arg(long)]
    rir_len: Option<usize>,
    /// Use a fixed impulse response from a WAV file instead.
    #[arg(long)]
    rir_file: Option<PathBuf>,
    /// Disable the loudspeaker nonlinearity in the echo path.
    #[arg(long)]
    no_nonlinearity: bool,
    /// Draw near/far clips from WAV files in this directory instead of
    /// the synthetic speech generator.
    #[arg(long)]
    clips_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (JSON lines) produced by `synth`.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model kind: mfmvdr | baseline.
    #[arg(long)]
    model: Option<String>,
    /// Filter length L (mfmvdr only).
    #[arg(long)]
    l: Option<usize>,
    /// Model sizing: desk | full.
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of scenes held out for a per-epoch validation loss.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Resume from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Noisy microphone WAV (16 kHz mono).
    #[arg(long)]
    mic: PathBuf,
    /// Far-end reference WAV (16 kHz mono).
    #[arg(long)]
    far_end: PathBuf,
    /// Output WAV path.
    #[arg(long)]
    out: PathBuf,
    /// Model checkpoint (mfmvdr or baseline).
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use oracle statistics from the component signals instead of a model.
    #[arg(long, requires = "near", requires = "echo", requires = "noise")]
    oracle: bool,
    /// Clean near-end WAV (oracle mode).
    #[arg(long)]
    near: Option<PathBuf>,
    /// Echo component WAV (oracle mode).
    #[arg(long)]
    echo: Option<PathBuf>,
    /// Noise component WAV (oracle mode).
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Filter length L (oracle mode).
    #[arg(long)]
    l: Option<usize>,
    /// Correlation smoothing factor (oracle mode).
    #[arg(long)]
    smoothing: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset manifest to evaluate on.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for report.csv / report.txt.
    #[arg(long)]
    out: PathBuf,
    /// Methods: passthrough | oracle | mfmvdr=CKPT | baseline=CKPT
    /// (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    /// Restrict to these SER conditions (dB).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    conditions: Option<Vec<f64>>,
    /// SNR of the conditions (dB).
    #[arg(long)]
    snr: Option<f64>,
    /// Oracle filter length L.
    #[arg(long)]
    l: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::run_synth(args),
        Command::Train(args) => commands::run_train(args),
        Command::Enhance(args) => commands::run_enhance(args),
        Command::Eval(args) => commands::run_eval(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
