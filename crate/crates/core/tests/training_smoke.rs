//! Desk-scale end-to-end training smoke test: the mean training loss
//! must drop by at least 1 dB SI-SDR between the first and fifth epoch
//! with no non-finite steps.
//!
//! The smoke dataset models one device in one room: ten scenes share a
//! single impulse response while near/far content varies per scene.

use mfaes_core::rng;
use mfaes_core::scene::{
    make_dataset, synth_rir, DatasetRanges, RirSource, SceneConfig, SceneRecord, SyntheticSpeech,
};
use mfaes_core::train::{train, ModelKind, ModelScale, TrainConfig};
use mfaes_core::wav::{write_wav, WavEncoding, Waveform};

/// Builds the ten-scene shared-room smoke dataset.
pub fn smoke_dataset(
    dir: &std::path::Path,
    ser_db: f64,
    snr_db: f64,
    n_scenes: usize,
    seed: u64,
) -> Vec<SceneRecord> {
    std::fs::create_dir_all(dir).unwrap();
    let mut rir_rng = rng::rng_from_seed(555);
    let rir: Vec<f32> = synth_rir(200.0, 4_000, 16_000, &mut rir_rng).unwrap();
    let rir_path = dir.join("rir.wav");
    write_wav(&rir_path, &Waveform::new(rir, 16_000).unwrap(), WavEncoding::Float32).unwrap();
    let ranges = DatasetRanges {
        ser_min_db: ser_db,
        ser_max_db: ser_db,
        snr_min_db: snr_db,
        snr_max_db: snr_db,
    };
    let base = SceneConfig { rir: RirSource::File(rir_path), ..SceneConfig::default() };
    make_dataset::<f32>(n_scenes, &ranges, &base, &SyntheticSpeech, seed, dir).unwrap()
}

#[test]
fn training_reduces_loss_within_five_epochs() {
    let dir = std::env::temp_dir().join(format!("mfaes-smoke-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let data_dir = dir.join("data");
    let records = smoke_dataset(&data_dir, 0.0, 30.0, 10, 2024);

    let cfg = TrainConfig {
        model: ModelKind::Mfmvdr,
        scale: ModelScale::Desk,
        filter_len: 3,
        epochs: 5,
        seed: 7,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let result = train::<f32>(&records, &data_dir, &cfg, dir.join("run"), None).unwrap();
    let elapsed = started.elapsed();
    println!("training took {elapsed:?}");
    for e in &result.epochs {
        println!("epoch {}: mean loss {:.3} dB (lr {:.3e})", e.epoch, e.mean_loss_db, e.lr);
    }
    assert!(result.aborted.is_none(), "training aborted: {:?}", result.aborted);
    assert_eq!(result.epochs.len(), 5);
    let first = result.epochs[0].mean_loss_db;
    let last = result.epochs[4].mean_loss_db;
    assert!(
        first - last >= 1.0,
        "loss only improved {:.3} dB (from {first:.3} to {last:.3})",
        first - last
    );
    assert!(result.checkpoint.exists());
    assert!(result.loss_log.exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn resume_continues_bit_exactly() {
    // Two epochs in one run must equal one epoch, checkpoint, resume,
    // one more epoch; f32 state round-trips exactly through the
    // checkpoint.
    let dir = std::env::temp_dir().join(format!("mfaes-resume-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let data_dir = dir.join("data");
    let records = smoke_dataset(&data_dir, 0.0, 30.0, 3, 11);

    let mk_cfg = |epochs: usize| TrainConfig {
        model: ModelKind::Mfmvdr,
        scale: ModelScale::Desk,
        filter_len: 3,
        epochs,
        seed: 5,
        ..TrainConfig::default()
    };
    let full = train::<f32>(&records, &data_dir, &mk_cfg(2), dir.join("full"), None).unwrap();
    assert!(full.aborted.is_none());

    let half = train::<f32>(&records, &data_dir, &mk_cfg(1), dir.join("half"), None).unwrap();
    let ck = mfaes_core::nn::checkpoint::load(&half.checkpoint).unwrap();
    let resumed =
        train::<f32>(&records, &data_dir, &mk_cfg(2), dir.join("resumed"), Some(&ck)).unwrap();
    assert_eq!(resumed.epochs.len(), 1, "resume should run exactly the second epoch");
    assert!(
        (resumed.epochs[0].mean_loss_db - full.epochs[1].mean_loss_db).abs() < 1e-12,
        "resumed epoch loss {} vs uninterrupted {}",
        resumed.epochs[0].mean_loss_db,
        full.epochs[1].mean_loss_db
    );

    let a = std::fs::read(&full.checkpoint).unwrap();
    let b = std::fs::read(&resumed.checkpoint).unwrap();
    assert_eq!(a, b, "resumed checkpoint differs from uninterrupted run");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn baseline_training_also_descends() {
    let dir = std::env::temp_dir().join(format!("mfaes-smoke-b-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let data_dir = dir.join("data");
    let records = smoke_dataset(&data_dir, 0.0, 30.0, 4, 31);

    let cfg = TrainConfig {
        model: ModelKind::Baseline,
        scale: ModelScale::Desk,
        epochs: 5,
        seed: 9,
        lr0: 1e-4,
        ..TrainConfig::default()
    };
    let result = train::<f32>(&records, &data_dir, &cfg, dir.join("run"), None).unwrap();
    assert!(result.aborted.is_none(), "aborted: {:?}", result.aborted);
    for e in &result.epochs {
        println!("baseline epoch {}: {:.3} dB", e.epoch, e.mean_loss_db);
    }
    let first = result.epochs.first().unwrap().mean_loss_db;
    let last = result.epochs.last().unwrap().mean_loss_db;
    assert!(last < first, "baseline loss did not decrease: {first:.3} -> {last:.3}");
    std::fs::remove_dir_all(&dir).unwrap();
}
