//! End-to-end training through the multi-frame filter.
//!
//! Per scene: STFT -> estimator forward -> batched filter -> inverse
//! STFT (all inside one autodiff graph) -> negative SI-SDR loss against
//! the padded near-end reference -> backward, gradient clipping, Adam.
//! The learning rate decays by a fixed fraction per epoch and a NaN
//! loss aborts training with the last good checkpoint retained.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    filter_constants, Baseline, BaselineConfig, Estimator, EstimatorConfig, EstimatorError,
};
use crate::mvdr::graph::apply_mfmvdr;
use crate::nn::checkpoint::{Checkpoint, CheckpointError};
use crate::nn::layers::ParamStore;
use crate::nn::{AutodiffError, Graph, TensorId};
use crate::scalar::{fr, to_f64, Scalar};
use crate::scene::{load_scene, SceneError, SceneRecord};
use crate::stft::{analyze, ola_envelope, DftPlan, Spectrogram, StftConfig, StftError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Floor inside the SI-SDR loss ratio.
pub const SI_SDR_LOSS_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    BadConfig(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no training scenes left after the validation split")]
    EmptyTrainSplit,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Stft(#[from] StftError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

// ---------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------

/// Adam state: first/second moments per parameter tensor plus the
/// bias-correction step count.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            m: store.entries.iter().map(|e| vec![T::zero(); e.data.len()]).collect(),
            v: store.entries.iter().map(|e| vec![T::zero(); e.data.len()]).collect(),
            step: 0,
        }
    }
}

/// One Adam update over all parameters. Rejects non-finite gradients
/// before touching any state, so an aborted step leaves parameters
/// unchanged.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<(), TrainError> {
    assert_eq!(grads.len(), store.entries.len());
    for (entry, grad) in store.entries.iter().zip(grads.iter()) {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient(entry.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = fr::<T>(ADAM_BETA1);
    let b2 = fr::<T>(ADAM_BETA2);
    let eps = fr::<T>(ADAM_EPS);
    let bc1 = T::one() - fr::<T>(ADAM_BETA1.powi(t));
    let bc2 = T::one() - fr::<T>(ADAM_BETA2.powi(t));
    for ((entry, grad), (m, v)) in store
        .entries
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..entry.data.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            entry.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm across all gradient tensors.
pub fn global_norm<T: Scalar>(grads: &[Vec<T>]) -> T {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .fold(T::zero(), |acc, &g| acc + g * g)
        .sqrt()
}

/// Scales all gradients by max_norm/norm when the global norm exceeds
/// max_norm; otherwise leaves them unchanged. Returns the pre-clip norm.
pub fn clip_gradients<T: Scalar>(grads: &mut [Vec<T>], max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

// ---------------------------------------------------------------------
// Differentiable loss pipeline
// ---------------------------------------------------------------------

/// Negative SI-SDR of `est` against a fixed reference:
/// alpha = <est, ref> / ||ref||^2, target = alpha ref,
/// loss = -10 log10(||target||^2 / (||target - est||^2 + eps)).
pub fn si_sdr_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    est: TensorId,
    reference: &[T],
) -> TensorId {
    let n = g.values(est).len();
    assert_eq!(n, reference.len(), "loss length mismatch");
    let ref_energy: T = reference.iter().map(|&r| r * r).fold(T::zero(), |a, b| a + b);
    assert!(ref_energy > T::zero(), "all-zero loss reference");
    let r = g.constant(reference.to_vec(), vec![n]);

    let prod = g.mul(est, r);
    let dot = g.sum(prod);
    let alpha = g.mul_const(dot, T::one() / ref_energy);
    let target = g.mul_scalar(r, alpha);
    // ||target||^2 = alpha^2 ||ref||^2.
    let alpha_sq = g.mul(alpha, alpha);
    let num = g.mul_const(alpha_sq, ref_energy);
    let err = g.sub(target, est);
    let err_sq = g.mul(err, err);
    let err_energy = g.sum(err_sq);
    let den = g.add_const(err_energy, fr(SI_SDR_LOSS_EPS));
    let ratio = g.div(num, den);
    let log_ratio = g.ln(ratio);
    let si_sdr = g.mul_const(log_ratio, fr(10.0 / std::f64::consts::LN_10));
    g.neg(si_sdr)
}

/// Differentiable inverse STFT: per-frame inverse transform via constant
/// DFT bases, synthesis windowing, overlap-add, envelope normalization.
/// Matches [`crate::stft::synthesize`] numerically.
pub fn synthesize_graph<T: Scalar>(
    g: &mut Graph<T>,
    spec_re: TensorId,
    spec_im: TensorId,
    cfg: &StftConfig,
) -> TensorId {
    let shape = g.shape(spec_re).to_vec();
    let (m, k) = (shape[0], shape[1]);
    assert_eq!(k, cfg.num_bins(), "spectrogram width != bins");
    let n = cfg.fft_size;

    // One-sided inverse bases with the 1/N factor and two-sided bin
    // weights folded in; the engine's DFT tables provide the twiddles.
    let plan = DftPlan::<T>::new(n);
    let mut basis_re = vec![T::zero(); k * n];
    let mut basis_im = vec![T::zero(); k * n];
    {
        // Reuse the plan's inverse on unit impulses to stay consistent
        // with the numeric path to the last bit.
        let mut spectrum = vec![num_complex::Complex::new(T::zero(), T::zero()); k];
        let mut frame = vec![T::zero(); n];
        for kk in 0..k {
            spectrum[kk] = num_complex::Complex::new(T::one(), T::zero());
            plan.inverse(&spectrum, &mut frame);
            basis_re[kk * n..(kk + 1) * n].copy_from_slice(&frame);
            spectrum[kk] = num_complex::Complex::new(T::zero(), T::one());
            plan.inverse(&spectrum, &mut frame);
            basis_im[kk * n..(kk + 1) * n].copy_from_slice(&frame);
            spectrum[kk] = num_complex::Complex::new(T::zero(), T::zero());
        }
    }
    let basis_re = g.constant(basis_re, vec![k, n]);
    let basis_im = g.constant(basis_im, vec![k, n]);

    let frames_re = g.matmul(spec_re, basis_re);
    let frames_im = g.matmul(spec_im, basis_im);
    let frames = g.add(frames_re, frames_im);
    let frames = if cfg.frame_len < n { g.slice_cols(frames, 0, cfg.frame_len) } else { frames };

    let window: Vec<T> = cfg.window_samples();
    let window = g.constant(window, vec![cfg.frame_len]);
    let windowed = g.mul_row(frames, window);
    let ola = g.overlap_add(windowed, cfg.hop);

    let env = ola_envelope::<T>(cfg, m);
    let env_max = env.iter().fold(T::zero(), |a, &b| if b > a { b } else { a });
    let floor = env_max * fr(1e-12);
    let inv_env: Vec<T> =
        env.iter().map(|&e| if e > floor { e.recip() } else { T::zero() }).collect();
    let inv_env = g.constant(inv_env, vec![ola_len(cfg, m)]);
    g.mul(ola, inv_env)
}

fn ola_len(cfg: &StftConfig, m: usize) -> usize {
    (m - 1) * cfg.hop + cfg.frame_len
}

/// Builds the full multi-frame training graph for one scene; returns
/// the scalar loss and the parameter graph ids.
pub fn mfmvdr_scene_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &Estimator<T>,
    noisy_spec: &Spectrogram<T>,
    far_spec: &Spectrogram<T>,
    near: &[T],
    trainable: bool,
) -> Result<(TensorId, Vec<TensorId>), TrainError> {
    let out = model.forward(g, noisy_spec, far_spec, trainable)?;
    let (stacks, passthrough) = filter_constants(g, noisy_spec, model.cfg.filter_len)?;
    let shat = apply_mfmvdr(g, out.phi_inv, out.gamma, stacks, passthrough);

    let (m, k) = (out.num_frames, model.cfg.num_bins);
    let spec_re = g.reshape(shat.re, vec![m, k]);
    let spec_im = g.reshape(shat.im, vec![m, k]);
    let wav = synthesize_graph(g, spec_re, spec_im, &noisy_spec.config);
    let out_len = g.values(wav).len();
    if near.len() < out_len {
        return Err(TrainError::BadConfig("reference shorter than reconstruction"));
    }
    if near[..out_len].iter().all(|&v| v == T::zero()) {
        return Err(TrainError::BadConfig("all-zero loss reference"));
    }
    let loss = si_sdr_loss_graph(g, wav, &near[..out_len]);
    Ok((loss, out.param_ids))
}

/// Training graph for the baseline: mask times the noisy spectrum
/// (noisy phase kept), inverse STFT, negative SI-SDR.
pub fn baseline_scene_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &Baseline<T>,
    noisy_spec: &Spectrogram<T>,
    far_spec: &Spectrogram<T>,
    near: &[T],
    trainable: bool,
) -> Result<(TensorId, Vec<TensorId>), TrainError> {
    let (mask, param_ids) = model.forward(g, noisy_spec, far_spec, trainable)?;
    let (m, k) = (noisy_spec.num_frames, noisy_spec.num_bins());
    let y_re = g.constant(noisy_spec.bins.iter().map(|c| c.re).collect(), vec![m, k]);
    let y_im = g.constant(noisy_spec.bins.iter().map(|c| c.im).collect(), vec![m, k]);
    let e_re = g.mul(mask, y_re);
    let e_im = g.mul(mask, y_im);
    let wav = synthesize_graph(g, e_re, e_im, &noisy_spec.config);
    let out_len = g.values(wav).len();
    if near.len() < out_len {
        return Err(TrainError::BadConfig("reference shorter than reconstruction"));
    }
    if near[..out_len].iter().all(|&v| v == T::zero()) {
        return Err(TrainError::BadConfig("all-zero loss reference"));
    }
    let loss = si_sdr_loss_graph(g, wav, &near[..out_len]);
    Ok((loss, param_ids))
}

// ---------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mfmvdr,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelScale {
    Desk,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub scale: ModelScale,
    /// Filter length L (multi-frame model only).
    pub filter_len: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// Fractional learning-rate decay per epoch (0.015 = 1.5%).
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of scenes held out for a per-epoch validation loss.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Mfmvdr,
            scale: ModelScale::Desk,
            filter_len: 3,
            epochs: 50,
            lr0: 3e-4,
            lr_decay: 0.015,
            clip_norm: 5.0,
            batch_size: 1,
            seed: 0,
            val_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr0 <= 0.0 {
            return Err(TrainError::BadConfig("lr0 must be positive"));
        }
        if !(0.0..1.0).contains(&self.lr_decay) {
            return Err(TrainError::BadConfig("lr_decay must lie in [0, 1)"));
        }
        if self.clip_norm <= 0.0 {
            return Err(TrainError::BadConfig("clip_norm must be positive"));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(TrainError::BadConfig("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn stft(&self) -> StftConfig {
        match self.model {
            ModelKind::Mfmvdr => StftConfig::default(),
            ModelKind::Baseline => StftConfig::mask_model(),
        }
    }

    /// lr(epoch) = lr0 (1 - decay)^epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * (1.0 - self.lr_decay).powi(epoch as i32)
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss_db: f64,
    pub val_loss_db: Option<f64>,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub epochs: Vec<EpochLog>,
    /// Set when training stopped early (NaN loss/gradient); the
    /// checkpoint on disk is the last good one.
    pub aborted: Option<String>,
}

enum ModelUnion<T: Scalar> {
    Mfmvdr(Box<Estimator<T>>),
    Baseline(Box<Baseline<T>>),
}

impl<T: Scalar> ModelUnion<T> {
    fn store(&self) -> &ParamStore<T> {
        match self {
            ModelUnion::Mfmvdr(m) => &m.store,
            ModelUnion::Baseline(m) => &m.store,
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            ModelUnion::Mfmvdr(m) => &mut m.store,
            ModelUnion::Baseline(m) => &mut m.store,
        }
    }

    fn scene_loss(
        &self,
        g: &mut Graph<T>,
        noisy: &Spectrogram<T>,
        far: &Spectrogram<T>,
        near: &[T],
        trainable: bool,
    ) -> Result<(TensorId, Vec<TensorId>), TrainError> {
        match self {
            ModelUnion::Mfmvdr(m) => mfmvdr_scene_loss(g, m, noisy, far, near, trainable),
            ModelUnion::Baseline(m) => baseline_scene_loss(g, m, noisy, far, near, trainable),
        }
    }

    fn save(
        &self,
        path: &Path,
        epoch: u64,
        step: u64,
        adam: &AdamState<T>,
    ) -> Result<(), CheckpointError> {
        let store = self.store();
        let m_names: Vec<String> =
            store.entries.iter().map(|e| format!("opt.m.{}", e.name)).collect();
        let v_names: Vec<String> =
            store.entries.iter().map(|e| format!("opt.v.{}", e.name)).collect();
        let mut extra: Vec<(&str, &[usize], &[T])> = Vec::new();
        for (i, e) in store.entries.iter().enumerate() {
            extra.push((m_names[i].as_str(), e.shape.as_slice(), adam.m[i].as_slice()));
            extra.push((v_names[i].as_str(), e.shape.as_slice(), adam.v[i].as_slice()));
        }
        match self {
            ModelUnion::Mfmvdr(m) => m.save(path, epoch, step, &extra),
            ModelUnion::Baseline(m) => m.save(path, epoch, step, &extra),
        }
    }
}

/// Trains a model over the scenes in a manifest.
///
/// Scenes are visited in manifest order; the validation split, when
/// requested, takes the trailing fraction. Single-threaded and fully
/// deterministic for a fixed seed; resuming from a checkpoint continues
/// with exactly the update an uninterrupted run would have made.
pub fn train<T: Scalar>(
    records: &[SceneRecord],
    data_dir: impl AsRef<Path>,
    cfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
    resume: Option<&Checkpoint>,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let data_dir = data_dir.as_ref();

    let stft_cfg = cfg.stft();
    let num_bins = stft_cfg.num_bins();

    // Model construction (or resume).
    let mut model: ModelUnion<T> = match (cfg.model, resume) {
        (ModelKind::Mfmvdr, None) => {
            let ec = match cfg.scale {
                ModelScale::Desk => EstimatorConfig::desk(cfg.filter_len, num_bins),
                ModelScale::Full => EstimatorConfig::full(cfg.filter_len, num_bins),
            };
            ModelUnion::Mfmvdr(Box::new(Estimator::new(ec, cfg.seed)?))
        }
        (ModelKind::Baseline, None) => {
            let bc = match cfg.scale {
                ModelScale::Desk => BaselineConfig::desk(),
                ModelScale::Full => BaselineConfig::full(),
            };
            ModelUnion::Baseline(Box::new(Baseline::new(bc, cfg.seed)?))
        }
        (ModelKind::Mfmvdr, Some(ck)) => ModelUnion::Mfmvdr(Box::new(Estimator::from_checkpoint(ck)?)),
        (ModelKind::Baseline, Some(ck)) => ModelUnion::Baseline(Box::new(Baseline::from_checkpoint(ck)?)),
    };

    let mut adam = AdamState::new(model.store());
    let mut start_epoch = 0usize;
    if let Some(ck) = resume {
        adam.step = ck.header.step;
        start_epoch = ck.header.epoch as usize;
        for (i, e) in model.store().entries.iter().enumerate() {
            adam.m[i] = ck.tensor_cast(&format!("opt.m.{}", e.name), &e.shape)?;
            adam.v[i] = ck.tensor_cast(&format!("opt.v.{}", e.name), &e.shape)?;
        }
    }

    // Preload scenes and their spectrograms.
    struct Sample<T> {
        noisy: Spectrogram<T>,
        far: Spectrogram<T>,
        near: Vec<T>,
    }
    let mut samples: Vec<Sample<T>> = Vec::with_capacity(records.len());
    for r in records {
        let scene = load_scene::<T>(data_dir, r)?;
        samples.push(Sample {
            noisy: analyze(&scene.mic, &stft_cfg)?,
            far: analyze(&scene.far, &stft_cfg)?,
            near: scene.near.samples,
        });
    }
    let val_count = ((records.len() as f64) * cfg.val_fraction).round() as usize;
    let train_count = records.len() - val_count;
    if train_count == 0 {
        return Err(TrainError::EmptyTrainSplit);
    }

    let ckpt_path = out_dir.join("checkpoint.bin");
    let log_path = out_dir.join("loss_log.csv");
    let mut log = if start_epoch == 0 {
        let mut f = std::fs::File::create(&log_path)?;
        writeln!(f, "epoch,mean_loss_db,val_loss_db,lr")?;
        f
    } else {
        std::fs::OpenOptions::new().create(true).append(true).open(&log_path)?
    };

    let mut epochs = Vec::new();
    let mut aborted = None;

    // A resumed run mirrors its current state into the output directory
    // immediately, so the checkpoint there is valid even when no further
    // epochs remain.
    if resume.is_some() {
        model.save(&ckpt_path, start_epoch as u64, adam.step, &adam)?;
    }

    'epochs: for epoch in start_epoch..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0f64;
        let mut batch_grads: Vec<Vec<T>> =
            model.store().entries.iter().map(|e| vec![T::zero(); e.data.len()]).collect();
        let mut in_batch = 0usize;

        for (si, sample) in samples.iter().take(train_count).enumerate() {
            let mut g = Graph::new();
            let (loss, param_ids) =
                model.scene_loss(&mut g, &sample.noisy, &sample.far, &sample.near, true)?;
            let loss_value = to_f64(g.scalar_value(loss));
            if !loss_value.is_finite() {
                aborted = Some(format!("non-finite loss at epoch {epoch}, scene {si}"));
                break 'epochs;
            }
            loss_sum += loss_value;

            let grads = match g.backward(loss) {
                Ok(gr) => gr,
                Err(e) => {
                    aborted = Some(format!("backward failed at epoch {epoch}, scene {si}: {e}"));
                    break 'epochs;
                }
            };
            for (pi, id) in param_ids.iter().enumerate() {
                if let Some(gslice) = grads.get(*id) {
                    for (acc, &gv) in batch_grads[pi].iter_mut().zip(gslice) {
                        *acc += gv;
                    }
                }
            }
            in_batch += 1;

            let last_scene = si + 1 == train_count;
            if in_batch == cfg.batch_size || last_scene {
                let inv = fr::<T>(1.0 / in_batch as f64);
                for gvec in batch_grads.iter_mut() {
                    for v in gvec.iter_mut() {
                        *v *= inv;
                    }
                }
                clip_gradients(&mut batch_grads, fr(cfg.clip_norm));
                match adam_step(model.store_mut(), &batch_grads, &mut adam, fr(lr)) {
                    Ok(()) => {}
                    Err(TrainError::NonFiniteGradient(name)) => {
                        aborted =
                            Some(format!("non-finite gradient in {name} at epoch {epoch}"));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
                for gvec in batch_grads.iter_mut() {
                    for v in gvec.iter_mut() {
                        *v = T::zero();
                    }
                }
                in_batch = 0;
            }
        }

        let mean_loss_db = loss_sum / train_count as f64;
        let val_loss_db = if val_count > 0 {
            let mut sum = 0.0;
            for sample in samples.iter().skip(train_count) {
                let mut g = Graph::new();
                let (loss, _) =
                    model.scene_loss(&mut g, &sample.noisy, &sample.far, &sample.near, false)?;
                sum += to_f64(g.scalar_value(loss));
            }
            Some(sum / val_count as f64)
        } else {
            None
        };

        writeln!(
            log,
            "{},{:.6},{},{:.8e}",
            epoch,
            mean_loss_db,
            val_loss_db.map(|v| format!("{v:.6}")).unwrap_or_default(),
            lr
        )?;
        log.flush()?;
        model.save(&ckpt_path, (epoch + 1) as u64, adam.step, &adam)?;
        epochs.push(EpochLog { epoch, mean_loss_db, val_loss_db, lr });
    }

    Ok(TrainResult { checkpoint: ckpt_path, loss_log: log_path, epochs, aborted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::si_sdr_db;
    use crate::rng;
    use crate::stft::WindowKind;
    use crate::wav::Waveform;

    #[test]
    fn adam_first_step_magnitude_equals_lr() {
        // Scalar with nonzero gradient: bias-corrected m/sqrt(v) is
        // sign(g), so the first update has magnitude lr (up to eps).
        for g0 in [0.3f64, -2.0, 100.0] {
            let mut store = ParamStore::<f64>::new();
            store.add("x", vec![1], vec![1.0]);
            let mut adam = AdamState::new(&store);
            adam_step(&mut store, &[vec![g0]], &mut adam, 0.1).unwrap();
            let delta = store.entries[0].data[0] - 1.0;
            assert!((delta.abs() - 0.1).abs() < 1e-6, "delta {delta}");
            assert_eq!(delta.signum(), -g0.signum());
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", vec![3], vec![1.0, -2.0, 3.0]);
        let mut adam = AdamState::new(&store);
        adam_step(&mut store, &[vec![0.0; 3]], &mut adam, 0.1).unwrap();
        assert_eq!(store.entries[0].data, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_converges_on_a_convex_scalar() {
        // 200 steps on f(x) = (x - 3)^2 from x = 0 with lr = 0.1.
        let mut store = ParamStore::<f64>::new();
        store.add("x", vec![1], vec![0.0]);
        let mut adam = AdamState::new(&store);
        for _ in 0..200 {
            let x = store.entries[0].data[0];
            let grad = 2.0 * (x - 3.0);
            adam_step(&mut store, &[vec![grad]], &mut adam, 0.1).unwrap();
        }
        let x = store.entries[0].data[0];
        assert!((x - 3.0).abs() < 0.1, "x = {x}");
    }

    #[test]
    fn adam_rejects_nan_gradients_without_touching_state() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", vec![1], vec![1.0]);
        let mut adam = AdamState::new(&store);
        let err = adam_step(&mut store, &[vec![f64::NAN]], &mut adam, 0.1).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient(_)));
        assert_eq!(store.entries[0].data[0], 1.0);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn clip_scales_to_exactly_max_norm() {
        let mut grads = vec![vec![6.0f64, 8.0]];
        let pre = clip_gradients(&mut grads, 5.0);
        assert_eq!(pre, 10.0);
        assert_eq!(grads[0], vec![3.0, 4.0]);
    }

    #[test]
    fn clip_leaves_small_gradients_unchanged() {
        let mut grads = vec![vec![1.0f64, 2.0], vec![2.0]];
        clip_gradients(&mut grads, 5.0);
        assert_eq!(grads, vec![vec![1.0, 2.0], vec![2.0]]);
    }

    #[test]
    fn clip_preserves_direction_and_never_grows() {
        let mut rng = rng::rng_from_seed(3);
        for _ in 0..20 {
            let mut grads =
                vec![(0..5).map(|_| 3.0 * rng::normal::<f64>(&mut rng)).collect::<Vec<_>>()];
            let before = grads[0].clone();
            let pre = clip_gradients(&mut grads, 2.0);
            let post = global_norm(&grads);
            assert!(post <= 2.0 + 1e-12);
            if pre > 2.0 {
                // Direction preserved: scaled copies are proportional.
                let k = grads[0][0] / before[0];
                for (a, b) in grads[0].iter().zip(before.iter()) {
                    assert!((a - k * b).abs() < 1e-12);
                }
            } else {
                assert_eq!(grads[0], before);
            }
        }
    }

    #[test]
    fn lr_schedule_matches_stated_decay() {
        let cfg = TrainConfig::default();
        assert!((cfg.lr_at(0) - 0.0003).abs() < 1e-18);
        assert!((cfg.lr_at(1) - 0.0002955).abs() < 1e-10);
        assert!((cfg.lr_at(2) - 0.0003 * 0.985 * 0.985).abs() < 1e-12);
    }

    #[test]
    fn loss_graph_matches_numeric_metric() {
        let mut rng = rng::rng_from_seed(5);
        let reference: Vec<f64> = (0..400).map(|_| rng::normal(&mut rng)).collect();
        let est: Vec<f64> =
            reference.iter().map(|r| 0.8 * r + 0.2 * rng::normal::<f64>(&mut rng)).collect();
        let mut g = Graph::new();
        let e = g.constant(est.clone(), vec![400]);
        let loss = si_sdr_loss_graph(&mut g, e, &reference);
        let metric = si_sdr_db(&est, &reference).unwrap();
        assert!((g.scalar_value(loss) + metric).abs() < 1e-9);
    }

    #[test]
    fn loss_is_scale_invariant_in_the_estimate() {
        let mut rng = rng::rng_from_seed(6);
        let reference: Vec<f64> = (0..300).map(|_| rng::normal(&mut rng)).collect();
        let est: Vec<f64> =
            reference.iter().map(|r| r + 0.3 * rng::normal::<f64>(&mut rng)).collect();
        let eval = |scale: f64| {
            let mut g = Graph::new();
            let scaled: Vec<f64> = est.iter().map(|e| scale * e).collect();
            let e = g.constant(scaled, vec![300]);
            let loss = si_sdr_loss_graph(&mut g, e, &reference);
            g.scalar_value(loss)
        };
        let base = eval(1.0);
        for c in [0.1, 0.7, 5.0, 1000.0] {
            assert!((eval(c) - base).abs() < 1e-6, "c = {c}");
        }
    }

    #[test]
    fn synthesize_graph_matches_numeric_synthesis() {
        for cfg in [
            StftConfig::default(),
            StftConfig { frame_len: 8, hop: 4, fft_size: 16, window: WindowKind::Hann },
        ] {
            let mut rng = rng::rng_from_seed(7);
            let len = cfg.frame_len + 10 * cfg.hop;
            let samples: Vec<f64> =
                (0..len).map(|_| 0.5 * rng::normal::<f64>(&mut rng)).collect();
            let wav = Waveform::new(samples, 16_000).unwrap();
            let spec = analyze(&wav, &cfg).unwrap();
            let numeric = crate::stft::synthesize(&spec, 16_000).unwrap();

            let mut g = Graph::new();
            let (m, k) = (spec.num_frames, spec.num_bins());
            let re = g.constant(spec.bins.iter().map(|c| c.re).collect(), vec![m, k]);
            let im = g.constant(spec.bins.iter().map(|c| c.im).collect(), vec![m, k]);
            let out = synthesize_graph(&mut g, re, im, &cfg);
            let got = g.values(out);
            assert_eq!(got.len(), numeric.len());
            for (a, b) in got.iter().zip(numeric.samples.iter()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        // Gradient of the SI-SDR loss w.r.t. the estimate itself.
        let mut rng = rng::rng_from_seed(8);
        let reference: Vec<f64> = (0..50).map(|_| rng::normal(&mut rng)).collect();
        let mut params: Vec<Vec<f64>> =
            vec![reference.iter().map(|r| r + 0.3 * rng::normal::<f64>(&mut rng)).collect()];
        let eval = |vals: &[Vec<f64>], want: bool| {
            let mut g = Graph::new();
            let e = g.leaf(vals[0].clone(), vec![50], true);
            let loss = si_sdr_loss_graph(&mut g, e, &reference);
            let v = g.scalar_value(loss);
            if !want {
                return (v, None);
            }
            let grads = g.backward(loss).unwrap();
            (v, Some(vec![grads.get(e).unwrap().to_vec()]))
        };
        let (_, analytic) = eval(&params, true);
        let report = crate::nn::gradcheck::check_gradients(
            &mut params,
            &analytic.unwrap(),
            |vals| eval(vals, false).0,
            1e-5,
            1e-8,
        );
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }
}
