//! Acoustic echo suppression built around a multi-frame MVDR filter.
//!
//! The pipeline covers synthetic scene generation, STFT analysis and
//! synthesis, closed-form multi-frame filtering with oracle or learned
//! parameters, end-to-end training with a negative SI-SDR loss, and
//! metric evaluation (SI-SDR, ERLE).
//!
//! Everything numeric is generic over the scalar type (`f32`/`f64`);
//! concrete aliases live at the crate root. Training runs at `f32` so
//! checkpoints round-trip exactly; verification runs at `f64`.

pub mod estimator;
pub mod frames;
pub mod linalg;
pub mod metrics;
pub mod mvdr;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod stft;
pub mod train;
pub mod wav;

pub use scalar::Scalar;

pub type Waveform32 = wav::Waveform<f32>;
pub type Waveform64 = wav::Waveform<f64>;
pub type Spectrogram32 = stft::Spectrogram<f32>;
pub type Spectrogram64 = stft::Spectrogram<f64>;
pub type Scene32 = scene::Scene<f32>;
pub type Scene64 = scene::Scene<f64>;
pub type Graph32 = nn::Graph<f32>;
pub type Graph64 = nn::Graph<f64>;
pub type Estimator32 = estimator::Estimator<f32>;
pub type Estimator64 = estimator::Estimator<f64>;
pub type Baseline32 = estimator::Baseline<f32>;
pub type Baseline64 = estimator::Baseline<f64>;
