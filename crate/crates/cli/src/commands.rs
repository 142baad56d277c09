//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mfaes_core::estimator::{Baseline, Estimator};
use mfaes_core::metrics::{evaluate, EvalMethod};
use mfaes_core::mvdr::{oracle_enhance, OracleEnhanceConfig, SolveOptions};
use mfaes_core::nn::checkpoint;
use mfaes_core::scalar::fr;
use mfaes_core::scene::{
    make_dataset, make_dataset_grid, read_manifest, ClipSource, DatasetRanges, NonlinearityParams,
    RirSource, SceneConfig, SyntheticSpeech, WavDirSource,
};
use mfaes_core::stft::{StftConfig, WindowKind};
use mfaes_core::train::{self, ModelKind, ModelScale, TrainConfig};
use mfaes_core::wav::{read_wav, write_wav, WavEncoding, Waveform, DEFAULT_SAMPLE_RATE};

use crate::{EnhanceArgs, EvalArgs, SynthArgs, TrainArgs};

fn load_config_file<C: for<'de> Deserialize<'de>>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn write_resolved_config<C: Serialize>(cfg: &C, out_dir: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

macro_rules! overlay {
    ($cfg:expr, $($field:ident <- $value:expr),+ $(,)?) => {
        $(if let Some(v) = $value { $cfg.$field = v; })+
    };
}

// ---------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub n: usize,
    pub seed: u64,
    pub ser_min_db: f64,
    pub ser_max_db: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub ser_list: Option<Vec<f64>>,
    pub snr_list: Option<Vec<f64>>,
    pub far_len_s: f64,
    pub near_len_s: f64,
    pub sample_rate: u32,
    pub t60_ms: f64,
    pub rir_len: usize,
    pub rir_file: Option<PathBuf>,
    pub nonlinearity: bool,
    pub clips_dir: Option<PathBuf>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            n: 10,
            seed: 0,
            ser_min_db: -20.0,
            ser_max_db: 10.0,
            snr_min_db: 10.0,
            snr_max_db: 40.0,
            ser_list: None,
            snr_list: None,
            far_len_s: 4.0,
            near_len_s: 2.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            t60_ms: 200.0,
            rir_len: 4_000,
            rir_file: None,
            nonlinearity: true,
            clips_dir: None,
        }
    }
}

pub fn run_synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthSettings = match &args.config {
        Some(path) => load_config_file(path)?,
        None => SynthSettings::default(),
    };
    overlay!(cfg,
        n <- args.n,
        seed <- args.seed,
        ser_min_db <- args.ser_min,
        ser_max_db <- args.ser_max,
        snr_min_db <- args.snr_min,
        snr_max_db <- args.snr_max,
        far_len_s <- args.far_len_s,
        near_len_s <- args.near_len_s,
        t60_ms <- args.t60_ms,
        rir_len <- args.rir_len,
    );
    if args.ser_list.is_some() {
        cfg.ser_list = args.ser_list;
    }
    if args.snr_list.is_some() {
        cfg.snr_list = args.snr_list;
    }
    if args.rir_file.is_some() {
        cfg.rir_file = args.rir_file;
    }
    if args.no_nonlinearity {
        cfg.nonlinearity = false;
    }
    if args.clips_dir.is_some() {
        cfg.clips_dir = args.clips_dir;
    }

    if cfg.n == 0 {
        bail!("--n must be at least 1");
    }

    let base = SceneConfig {
        far_len_s: cfg.far_len_s,
        near_len_s: cfg.near_len_s,
        sample_rate: cfg.sample_rate,
        nonlinearity: cfg.nonlinearity.then(NonlinearityParams::default),
        rir: match &cfg.rir_file {
            Some(path) => RirSource::File(path.clone()),
            None => RirSource::Synthetic { t60_ms: cfg.t60_ms, len: cfg.rir_len },
        },
        ..SceneConfig::default()
    };
    let source: Box<dyn ClipSource<f64>> = match &cfg.clips_dir {
        Some(dir) => Box::new(WavDirSource::new(dir)?),
        None => Box::new(SyntheticSpeech),
    };

    write_resolved_config(&cfg, &args.out, "synth_config.json")?;
    let records = match &cfg.ser_list {
        Some(ser_list) => {
            let snr_list = cfg.snr_list.clone().unwrap_or_else(|| vec![30.0]);
            let conditions: Vec<(f64, f64)> = ser_list
                .iter()
                .flat_map(|&ser| snr_list.iter().map(move |&snr| (ser, snr)))
                .collect();
            make_dataset_grid(cfg.n, &conditions, &base, source.as_ref(), cfg.seed, &args.out)?
        }
        None => {
            let ranges = DatasetRanges {
                ser_min_db: cfg.ser_min_db,
                ser_max_db: cfg.ser_max_db,
                snr_min_db: cfg.snr_min_db,
                snr_max_db: cfg.snr_max_db,
            };
            make_dataset(cfg.n, &ranges, &base, source.as_ref(), cfg.seed, &args.out)?
        }
    };
    println!(
        "wrote {} scenes to {} (manifest.jsonl)",
        records.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

pub fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => load_config_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(model) = &args.model {
        cfg.model = match model.as_str() {
            "mfmvdr" => ModelKind::Mfmvdr,
            "baseline" => ModelKind::Baseline,
            other => bail!("unknown model kind {other:?} (expected mfmvdr or baseline)"),
        };
    }
    if let Some(scale) = &args.scale {
        cfg.scale = match scale.as_str() {
            "desk" => ModelScale::Desk,
            "full" => ModelScale::Full,
            other => bail!("unknown scale {other:?} (expected desk or full)"),
        };
    }
    overlay!(cfg,
        filter_len <- args.l,
        epochs <- args.epochs,
        lr0 <- args.lr0,
        lr_decay <- args.lr_decay,
        clip_norm <- args.clip_norm,
        batch_size <- args.batch_size,
        seed <- args.seed,
        val_fraction <- args.val_fraction,
    );
    cfg.validate()?;

    let records = read_manifest(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    let data_dir = args
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    write_resolved_config(&cfg, &args.out, "train_config.json")?;
    let resume = match &args.resume {
        Some(path) => Some(checkpoint::load(path)?),
        None => None,
    };

    let result = train::train::<f32>(&records, &data_dir, &cfg, &args.out, resume.as_ref())?;
    for e in &result.epochs {
        match e.val_loss_db {
            Some(v) => println!(
                "epoch {}: train loss {:.3} dB, val loss {v:.3} dB (lr {:.3e})",
                e.epoch, e.mean_loss_db, e.lr
            ),
            None => {
                println!("epoch {}: train loss {:.3} dB (lr {:.3e})", e.epoch, e.mean_loss_db, e.lr)
            }
        }
    }
    println!("checkpoint: {}", result.checkpoint.display());
    println!("loss log:   {}", result.loss_log.display());
    if let Some(reason) = result.aborted {
        bail!("training aborted ({reason}); last good checkpoint retained");
    }
    Ok(())
}

// ---------------------------------------------------------------------
// enhance
// ---------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EnhanceResolved {
    mic: PathBuf,
    far_end: PathBuf,
    out: PathBuf,
    mode: String,
    filter_len: usize,
    smoothing: f64,
    output_gain: f64,
}

fn read_pipeline_wav(path: &Path) -> Result<Waveform<f32>> {
    let wav: Waveform<f32> =
        read_wav(path).with_context(|| format!("reading {}", path.display()))?;
    if wav.sample_rate != DEFAULT_SAMPLE_RATE {
        bail!(
            "{}: sample rate {} Hz, expected {} Hz",
            path.display(),
            wav.sample_rate,
            DEFAULT_SAMPLE_RATE
        );
    }
    Ok(wav)
}

/// Derives the analysis config a model was trained with from its bin count.
fn stft_for_bins(num_bins: usize) -> StftConfig {
    let fft_size = (num_bins - 1) * 2;
    StftConfig { frame_len: fft_size, hop: fft_size / 2, fft_size, window: WindowKind::Hann }
}

pub fn run_enhance(args: EnhanceArgs) -> Result<()> {
    let mic = read_pipeline_wav(&args.mic)?;
    let far = read_pipeline_wav(&args.far_end)?;
    let filter_len = args.l.unwrap_or(5);
    let smoothing = args.smoothing.unwrap_or(mfaes_core::frames::DEFAULT_SMOOTHING);

    let (mut enhanced, mode) = if args.oracle {
        let near = read_pipeline_wav(args.near.as_ref().unwrap())?;
        let echo = read_pipeline_wav(args.echo.as_ref().unwrap())?;
        let noise = read_pipeline_wav(args.noise.as_ref().unwrap())?;
        let cfg = OracleEnhanceConfig {
            filter_len,
            smoothing: smoothing as f32,
            solve: SolveOptions::default(),
        };
        let out = oracle_enhance(&mic, &near, &echo, &noise, &StftConfig::default(), &cfg)?;
        (out, "oracle".to_string())
    } else {
        let ckpt_path = args
            .checkpoint
            .as_ref()
            .context("either --checkpoint or --oracle (with component WAVs) is required")?;
        let ck = checkpoint::load(ckpt_path)?;
        match ck.header.model["kind"].as_str() {
            Some("mfmvdr") => {
                let model = Estimator::<f32>::from_checkpoint(&ck)?;
                let stft = stft_for_bins(model.cfg.num_bins);
                (model.enhance(&mic, &far, &stft)?, format!("mfmvdr-L{}", model.cfg.filter_len))
            }
            Some("baseline") => {
                let model = Baseline::<f32>::from_checkpoint(&ck)?;
                let stft = stft_for_bins(model.cfg.num_bins);
                (model.enhance(&mic, &far, &stft)?, "baseline".to_string())
            }
            other => bail!("checkpoint has unknown model kind {other:?}"),
        }
    };

    // Keep samples in range for storage; one common gain preserves the
    // waveform shape.
    let peak = enhanced.peak();
    let mut output_gain = 1.0f64;
    if peak > 0.99 {
        output_gain = 0.99 / peak as f64;
        for s in enhanced.samples.iter_mut() {
            *s *= fr::<f32>(output_gain);
        }
        eprintln!("note: output scaled by {output_gain:.4} to fit WAV range");
    }
    write_wav(&args.out, &enhanced, WavEncoding::Float32)?;

    let out_dir = args.out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let resolved = EnhanceResolved {
        mic: args.mic,
        far_end: args.far_end,
        out: args.out.clone(),
        mode,
        filter_len,
        smoothing,
        output_gain,
    };
    write_resolved_config(&resolved, &out_dir, "enhance_config.json")?;
    println!("wrote {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EvalResolved {
    manifest: PathBuf,
    methods: Vec<String>,
    conditions: Option<Vec<(f64, f64)>>,
    filter_len: usize,
}

pub fn run_eval(args: EvalArgs) -> Result<()> {
    if args.methods.is_empty() {
        bail!("--methods must name at least one method");
    }
    let records = read_manifest(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    if records.is_empty() {
        bail!("manifest is empty");
    }
    let data_dir = args
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let filter_len = args.l.unwrap_or(5);

    let mut methods: Vec<EvalMethod<f32>> = Vec::new();
    for spec in &args.methods {
        let method = match spec.split_once('=') {
            None => match spec.as_str() {
                "passthrough" => EvalMethod::Passthrough,
                "oracle" => EvalMethod::Oracle {
                    stft: StftConfig::default(),
                    cfg: OracleEnhanceConfig { filter_len, ..OracleEnhanceConfig::default() },
                },
                other => bail!("unknown method {other:?}"),
            },
            Some(("mfmvdr", path)) => {
                let ck = checkpoint::load(path)?;
                let model = Estimator::<f32>::from_checkpoint(&ck)?;
                let stft = stft_for_bins(model.cfg.num_bins);
                EvalMethod::Mfmvdr { estimator: Box::new(model), stft }
            }
            Some(("baseline", path)) => {
                let ck = checkpoint::load(path)?;
                let model = Baseline::<f32>::from_checkpoint(&ck)?;
                let stft = stft_for_bins(model.cfg.num_bins);
                EvalMethod::MaskBaseline { model: Box::new(model), stft }
            }
            Some((kind, _)) => bail!("unknown method kind {kind:?}"),
        };
        methods.push(method);
    }

    let conditions: Option<Vec<(f64, f64)>> = args
        .conditions
        .map(|sers| sers.into_iter().map(|ser| (ser, args.snr.unwrap_or(30.0))).collect());

    let report = evaluate(&methods, &records, &data_dir, conditions.as_deref())?;

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("report.csv"), report.to_csv())?;
    let table = report.to_table();
    std::fs::write(args.out.join("report.txt"), &table)?;
    let resolved = EvalResolved {
        manifest: args.manifest,
        methods: args.methods,
        conditions,
        filter_len,
    };
    write_resolved_config(&resolved, &args.out, "eval_config.json")?;
    print!("{table}");
    Ok(())
}
