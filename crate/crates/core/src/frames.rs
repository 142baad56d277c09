//! Multi-frame signal representation.
//!
//! Stacks the L most recent STFT frames per bin into vectors, tracks
//! recursively smoothed correlation matrices, and derives the oracle
//! filter parameters (undesired correlation and speech interframe
//! correlation) from known scene components.

use num_complex::Complex;
use thiserror::Error;

use crate::linalg::{outer_accumulate, CMat};
use crate::scalar::{fr, Scalar};
use crate::stft::Spectrogram;

/// Default smoothing factor for the recursive correlation estimate.
pub const DEFAULT_SMOOTHING: f64 = 0.8;

/// Relative power threshold below which the interframe-correlation
/// estimate falls back to the one-hot steering vector.
pub const IFC_POWER_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FramesError {
    #[error("filter length must be >= 1")]
    BadFilterLength,
    #[error("smoothing factor must lie in (0, 1), got {0}")]
    BadSmoothing(f64),
    #[error("spectrogram shape mismatch")]
    ShapeMismatch,
}

/// Stacked noisy vectors y(k, m) = [Y(k,m), ..., Y(k,m-L+1)]^T for all
/// (k, m), frame-major. Entries before the first frame are zero.
#[derive(Debug, Clone)]
pub struct FrameStacks<T> {
    pub filter_len: usize,
    pub num_bins: usize,
    pub num_frames: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> FrameStacks<T> {
    /// The stack for bin `k` at frame `m`: lag l holds Y(k, m - l).
    #[inline]
    pub fn stack(&self, k: usize, m: usize) -> &[Complex<T>] {
        let idx = (m * self.num_bins + k) * self.filter_len;
        &self.data[idx..idx + self.filter_len]
    }

    /// All stacks as flat real/imaginary arrays of shape
    /// [num_frames * num_bins, filter_len], frame-major.
    pub fn split_re_im(&self) -> (Vec<T>, Vec<T>) {
        let re = self.data.iter().map(|c| c.re).collect();
        let im = self.data.iter().map(|c| c.im).collect();
        (re, im)
    }
}

/// Builds the stacked representation of a spectrogram.
pub fn stack_frames<T: Scalar>(
    spec: &Spectrogram<T>,
    filter_len: usize,
) -> Result<FrameStacks<T>, FramesError> {
    if filter_len < 1 {
        return Err(FramesError::BadFilterLength);
    }
    let num_bins = spec.num_bins();
    let num_frames = spec.num_frames;
    let zero = Complex::new(T::zero(), T::zero());
    let mut data = vec![zero; num_bins * num_frames * filter_len];
    for m in 0..num_frames {
        for k in 0..num_bins {
            let base = (m * num_bins + k) * filter_len;
            for l in 0..filter_len {
                if m >= l {
                    data[base + l] = spec.bin(k, m - l);
                }
            }
        }
    }
    Ok(FrameStacks { filter_len, num_bins, num_frames, data })
}

/// Recursive correlation-matrix tracker for one frequency bin:
/// Phi(m) = lambda Phi(m-1) + (1 - lambda) y(m) y(m)^H, Phi(-1) = 0.
/// Every update re-hermitizes, so the estimate stays exactly Hermitian.
#[derive(Debug, Clone)]
pub struct CorrTracker<T> {
    pub phi: CMat<T>,
    lambda: T,
}

impl<T: Scalar> CorrTracker<T> {
    pub fn new(filter_len: usize, lambda: T) -> Result<Self, FramesError> {
        let l = lambda.to_f64().unwrap_or(f64::NAN);
        if !(0.0 < l && l < 1.0) {
            return Err(FramesError::BadSmoothing(l));
        }
        Ok(Self { phi: CMat::zeros(filter_len), lambda })
    }

    pub fn update(&mut self, stack: &[Complex<T>]) -> &CMat<T> {
        self.phi.scale(self.lambda);
        outer_accumulate(&mut self.phi, stack, T::one() - self.lambda);
        self.phi.hermitize();
        &self.phi
    }
}

/// Smoothed correlation matrices for one bin across all frames.
pub fn estimate_corr<T: Scalar>(
    stacks: &FrameStacks<T>,
    k: usize,
    lambda: T,
) -> Result<Vec<CMat<T>>, FramesError> {
    let mut tracker = CorrTracker::new(stacks.filter_len, lambda)?;
    Ok((0..stacks.num_frames).map(|m| tracker.update(stacks.stack(k, m)).clone()).collect())
}

/// Interframe-correlation vectors over all (k, m), frame-major.
#[derive(Debug, Clone)]
pub struct IfcField<T> {
    pub filter_len: usize,
    pub num_bins: usize,
    pub num_frames: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> IfcField<T> {
    #[inline]
    pub fn gamma(&self, k: usize, m: usize) -> &[Complex<T>] {
        let idx = (m * self.num_bins + k) * self.filter_len;
        &self.data[idx..idx + self.filter_len]
    }

    /// Builds a field from frame-major per-(k, m) vectors.
    pub fn from_raw(
        filter_len: usize,
        num_bins: usize,
        num_frames: usize,
        data: Vec<Complex<T>>,
    ) -> Result<Self, FramesError> {
        if data.len() != filter_len * num_bins * num_frames {
            return Err(FramesError::ShapeMismatch);
        }
        Ok(Self { filter_len, num_bins, num_frames, data })
    }
}

/// Mean |S(k,m)|^2 over a spectrogram; anchors the degenerate-power
/// fallback threshold of the oracle IFC.
pub fn mean_bin_power<T: Scalar>(spec: &Spectrogram<T>) -> T {
    if spec.bins.is_empty() {
        return T::zero();
    }
    let sum = spec.bins.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a + b);
    sum / fr(spec.bins.len() as f64)
}

/// Extracts the interframe-correlation vector from a speech correlation
/// matrix: gamma = Phi_s e / (e^T Phi_s e). Falls back to gamma = e when
/// the current-frame power is below `power_eps`.
pub fn ifc_from_corr<T: Scalar>(phi_s: &CMat<T>, power_eps: T) -> Vec<Complex<T>> {
    let l = phi_s.dim;
    let mut gamma = vec![Complex::new(T::zero(), T::zero()); l];
    gamma[0] = Complex::new(T::one(), T::zero());
    let p0 = phi_s.at(0, 0).re;
    if p0 > power_eps {
        for (i, g) in gamma.iter_mut().enumerate().skip(1) {
            *g = phi_s.at(i, 0) / p0;
        }
    }
    gamma
}

/// Oracle interframe correlation from the clean-speech spectrogram.
pub fn oracle_ifc<T: Scalar>(
    clean: &Spectrogram<T>,
    filter_len: usize,
    lambda: T,
) -> Result<IfcField<T>, FramesError> {
    let stacks = stack_frames(clean, filter_len)?;
    let power_eps = fr::<T>(IFC_POWER_EPS) * mean_bin_power(clean);
    let (num_bins, num_frames) = (stacks.num_bins, stacks.num_frames);
    let zero = Complex::new(T::zero(), T::zero());
    let mut data = vec![zero; num_bins * num_frames * filter_len];
    for k in 0..num_bins {
        let mut tracker = CorrTracker::new(filter_len, lambda)?;
        for m in 0..num_frames {
            let phi = tracker.update(stacks.stack(k, m));
            let gamma = ifc_from_corr(phi, power_eps);
            let base = (m * num_bins + k) * filter_len;
            data[base..base + filter_len].copy_from_slice(&gamma);
        }
    }
    Ok(IfcField { filter_len, num_bins, num_frames, data })
}

/// Correlation matrices over all (k, m), frame-major.
#[derive(Debug, Clone)]
pub struct CorrField<T> {
    pub filter_len: usize,
    pub num_bins: usize,
    pub num_frames: usize,
    mats: Vec<CMat<T>>,
}

impl<T: Scalar> CorrField<T> {
    #[inline]
    pub fn mat(&self, k: usize, m: usize) -> &CMat<T> {
        &self.mats[m * self.num_bins + k]
    }
}

/// Oracle undesired correlation Phi_u = Phi_d + Phi_v from the echo and
/// noise spectrograms.
pub fn oracle_undesired_corr<T: Scalar>(
    echo: &Spectrogram<T>,
    noise: &Spectrogram<T>,
    filter_len: usize,
    lambda: T,
) -> Result<CorrField<T>, FramesError> {
    if echo.num_frames != noise.num_frames || echo.num_bins() != noise.num_bins() {
        return Err(FramesError::ShapeMismatch);
    }
    let d_stacks = stack_frames(echo, filter_len)?;
    let v_stacks = stack_frames(noise, filter_len)?;
    let (num_bins, num_frames) = (d_stacks.num_bins, d_stacks.num_frames);
    let mut mats = vec![CMat::zeros(filter_len); num_bins * num_frames];
    for k in 0..num_bins {
        let mut d_tracker = CorrTracker::new(filter_len, lambda)?;
        let mut v_tracker = CorrTracker::new(filter_len, lambda)?;
        for m in 0..num_frames {
            let mut phi = d_tracker.update(d_stacks.stack(k, m)).clone();
            phi.add_assign(v_tracker.update(v_stacks.stack(k, m)));
            mats[m * num_bins + k] = phi;
        }
    }
    Ok(CorrField { filter_len, num_bins, num_frames, mats })
}
