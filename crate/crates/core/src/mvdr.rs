//! Multi-frame MVDR filtering.
//!
//! Solves min_w w^H Phi_u w subject to w^H gamma = 1 in closed form,
//! w = Phi_u^{-1} gamma / (gamma^H Phi_u^{-1} gamma), with diagonal
//! loading on the covariance path and a passthrough fallback whenever
//! the denominator degenerates. A second entry point consumes an
//! externally supplied correlation-matrix inverse (the quantity the
//! estimator network predicts) and involves no matrix inversion at all.

use num_complex::Complex;
use thiserror::Error;

use crate::frames::{self, stack_frames, CorrField, CorrTracker, IfcField};
use crate::linalg::{cdot, CMat};
use crate::scalar::{fr, Scalar};
use crate::stft::{synthesize, Spectrogram, StftError};
use crate::wav::Waveform;

/// Numerical safeguards for the covariance solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<T> {
    /// Diagonal loading relative to trace(Phi)/L.
    pub loading: T,
    /// Absolute loading floor.
    pub eps_abs: T,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        Self { loading: fr(1e-3), eps_abs: fr(1e-12) }
    }
}

impl<T: Scalar> SolveOptions<T> {
    /// No loading; for oracle comparisons on well-conditioned matrices.
    pub fn exact() -> Self {
        Self { loading: T::zero(), eps_abs: T::zero() }
    }
}

/// Relative threshold below which the filter denominator is treated as
/// degenerate and the solve falls back to passthrough.
pub const DENOM_EPS: f64 = 1e-12;

/// Phase-preserving magnitude floor on the filter denominator of the
/// supplied-inverse path, relative to the denominator's natural scale
/// ||gamma||^2 |tr A| / L. Healthy cells sit near that scale and are
/// untouched; cells whose denominator collapses toward zero would
/// otherwise amplify the output arbitrarily, which destabilizes
/// training through the filter. The covariance path does not need
/// this: diagonal loading already bounds its conditioning.
pub const DENOM_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    FallbackPassthrough,
}

/// Filter weights for one (k, m) cell.
#[derive(Debug, Clone)]
pub struct FilterSolution<T> {
    pub weights: Vec<Complex<T>>,
    pub status: SolveStatus,
}

impl<T: Scalar> FilterSolution<T> {
    fn passthrough(len: usize) -> Self {
        let mut weights = vec![Complex::new(T::zero(), T::zero()); len];
        weights[0] = Complex::new(T::one(), T::zero());
        Self { weights, status: SolveStatus::FallbackPassthrough }
    }
}

#[derive(Debug, Error)]
pub enum MvdrError {
    #[error("correlation matrix is not Hermitian (defect {0})")]
    NotHermitian(f64),
    #[error("non-finite input")]
    NonFinite,
    #[error("dimension mismatch between matrix and steering vector")]
    DimensionMismatch,
    #[error(transparent)]
    Stft(#[from] StftError),
    #[error(transparent)]
    Frames(#[from] frames::FramesError),
}

/// Applies the loading policy: Phi + loading (trace/L + eps_abs) I.
pub fn loaded_matrix<T: Scalar>(phi: &CMat<T>, opts: &SolveOptions<T>) -> CMat<T> {
    let mut m = phi.clone();
    let l = fr::<T>(phi.dim as f64);
    let scale = phi.trace().re / l + opts.eps_abs;
    m.add_diagonal(opts.loading * scale);
    m
}

fn check_inputs<T: Scalar>(phi: &CMat<T>, gamma: &[Complex<T>]) -> Result<(), MvdrError> {
    if gamma.len() != phi.dim {
        return Err(MvdrError::DimensionMismatch);
    }
    if phi.has_nan() || gamma.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(MvdrError::NonFinite);
    }
    Ok(())
}

/// Closed-form solve from the undesired-signal correlation matrix.
pub fn solve_mvdr<T: Scalar>(
    phi_u: &CMat<T>,
    gamma: &[Complex<T>],
    opts: &SolveOptions<T>,
) -> Result<FilterSolution<T>, MvdrError> {
    check_inputs(phi_u, gamma)?;
    let trace_scale = phi_u.trace().re / fr::<T>(phi_u.dim as f64);
    let defect = phi_u.hermitian_defect();
    if defect > fr::<T>(1e-8) * (T::one() + trace_scale.abs()) {
        return Err(MvdrError::NotHermitian(defect.to_f64().unwrap_or(f64::NAN)));
    }

    let loaded = loaded_matrix(phi_u, opts);
    let z = match loaded.solve_hermitian(gamma) {
        Ok(z) => z,
        // A loaded PSD estimate can only fail factorization in
        // pathological conditioning; degrade to passthrough, never NaN.
        Err(_) => return Ok(FilterSolution::passthrough(phi_u.dim)),
    };
    let denom = cdot(gamma, &z);
    let gamma_norm2 = gamma.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a + b);
    let denom_scale = gamma_norm2 / (loaded.trace().re / fr::<T>(phi_u.dim as f64));
    if denom.norm() < fr::<T>(DENOM_EPS) * denom_scale || denom.norm() == T::zero() {
        return Ok(FilterSolution::passthrough(phi_u.dim));
    }
    let weights: Vec<Complex<T>> = z.iter().map(|&zi| zi / denom).collect();
    if weights.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Ok(FilterSolution::passthrough(phi_u.dim));
    }
    Ok(FilterSolution { weights, status: SolveStatus::Solved })
}

/// Closed-form solve from a supplied correlation-matrix inverse. The
/// matrix is Hermitian-symmetrized before use; no inversion happens
/// here, which is what makes the estimator-driven path differentiable.
pub fn solve_mvdr_from_inverse<T: Scalar>(
    phi_u_inv: &CMat<T>,
    gamma: &[Complex<T>],
) -> Result<FilterSolution<T>, MvdrError> {
    check_inputs(phi_u_inv, gamma)?;
    let mut a = phi_u_inv.clone();
    a.hermitize();
    let n = a.matvec(gamma);
    let denom = cdot(gamma, &n);
    let gamma_norm2 = gamma.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a + b);
    let trace_scale = a.trace().re.abs() / fr::<T>(a.dim as f64) + fr::<T>(1e-12);
    let scale = gamma_norm2 * trace_scale;
    if denom.norm() < fr::<T>(DENOM_EPS) * scale {
        return Ok(FilterSolution::passthrough(a.dim));
    }
    // Floor the denominator magnitude, keeping its phase.
    let floor = fr::<T>(DENOM_FLOOR) * scale;
    let denom = if denom.norm() < floor {
        denom * (floor / denom.norm())
    } else {
        denom
    };
    let weights: Vec<Complex<T>> = n.iter().map(|&ni| ni / denom).collect();
    if weights.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Ok(FilterSolution::passthrough(a.dim));
    }
    Ok(FilterSolution { weights, status: SolveStatus::Solved })
}

/// Filter output for one cell: S_hat = w^H y.
pub fn apply_filter<T: Scalar>(
    solution: &FilterSolution<T>,
    stack: &[Complex<T>],
) -> Result<Complex<T>, MvdrError> {
    if solution.weights.len() != stack.len() {
        return Err(MvdrError::DimensionMismatch);
    }
    Ok(cdot(&solution.weights, stack))
}

/// Per-cell filter parameters, either a covariance (solved with loading)
/// or an externally supplied covariance inverse.
pub enum FilterParams<'a, T> {
    Covariance { phi_u: &'a CorrField<T>, gamma: &'a IfcField<T> },
    Inverse { phi_u_inv: &'a [CMat<T>], gamma: &'a IfcField<T> },
}

/// Runs the filter over a whole noisy spectrogram.
pub fn enhance_spectrogram<T: Scalar>(
    noisy: &Spectrogram<T>,
    params: &FilterParams<'_, T>,
    filter_len: usize,
    opts: &SolveOptions<T>,
) -> Result<Spectrogram<T>, MvdrError> {
    let stacks = stack_frames(noisy, filter_len)?;
    let num_bins = noisy.num_bins();
    let mut out = Spectrogram::zeros(noisy.config, noisy.num_frames);
    for m in 0..noisy.num_frames {
        for k in 0..num_bins {
            let solution = match params {
                FilterParams::Covariance { phi_u, gamma } => {
                    solve_mvdr(phi_u.mat(k, m), gamma.gamma(k, m), opts)?
                }
                FilterParams::Inverse { phi_u_inv, gamma } => {
                    solve_mvdr_from_inverse(&phi_u_inv[m * num_bins + k], gamma.gamma(k, m))?
                }
            };
            out.bins[m * num_bins + k] = apply_filter(&solution, stacks.stack(k, m))?;
        }
    }
    Ok(out)
}

/// Oracle enhancement: filter parameters derived from the known scene
/// components (clean speech, echo, noise), then overlap-add synthesis.
pub struct OracleEnhanceConfig<T> {
    pub filter_len: usize,
    pub smoothing: T,
    pub solve: SolveOptions<T>,
}

impl<T: Scalar> Default for OracleEnhanceConfig<T> {
    fn default() -> Self {
        Self {
            filter_len: 5,
            smoothing: fr(frames::DEFAULT_SMOOTHING),
            solve: SolveOptions::default(),
        }
    }
}

/// Enhances a noisy spectrogram with oracle statistics, streaming the
/// per-bin correlation recursions.
pub fn enhance_spectrogram_oracle<T: Scalar>(
    noisy: &Spectrogram<T>,
    clean: &Spectrogram<T>,
    echo: &Spectrogram<T>,
    noise: &Spectrogram<T>,
    cfg: &OracleEnhanceConfig<T>,
) -> Result<Spectrogram<T>, MvdrError> {
    let num_bins = noisy.num_bins();
    let num_frames = noisy.num_frames;
    if [clean, echo, noise].iter().any(|s| s.num_frames != num_frames || s.num_bins() != num_bins)
    {
        return Err(MvdrError::DimensionMismatch);
    }
    let l = cfg.filter_len;
    let y_stacks = stack_frames(noisy, l)?;
    let s_stacks = stack_frames(clean, l)?;
    let d_stacks = stack_frames(echo, l)?;
    let v_stacks = stack_frames(noise, l)?;
    let power_eps = fr::<T>(frames::IFC_POWER_EPS) * frames::mean_bin_power(clean);

    let mut out = Spectrogram::zeros(noisy.config, num_frames);
    for k in 0..num_bins {
        let mut s_tracker = CorrTracker::new(l, cfg.smoothing)?;
        let mut d_tracker = CorrTracker::new(l, cfg.smoothing)?;
        let mut v_tracker = CorrTracker::new(l, cfg.smoothing)?;
        for m in 0..num_frames {
            let phi_s = s_tracker.update(s_stacks.stack(k, m)).clone();
            let mut phi_u = d_tracker.update(d_stacks.stack(k, m)).clone();
            phi_u.add_assign(v_tracker.update(v_stacks.stack(k, m)));
            let gamma = frames::ifc_from_corr(&phi_s, power_eps);
            let solution = solve_mvdr(&phi_u, &gamma, &cfg.solve)?;
            out.bins[m * num_bins + k] = apply_filter(&solution, y_stacks.stack(k, m))?;
        }
    }
    Ok(out)
}

/// Waveform-level oracle enhancement: STFT, filter, inverse STFT.
pub fn oracle_enhance<T: Scalar>(
    mic: &Waveform<T>,
    near: &Waveform<T>,
    echo: &Waveform<T>,
    noise: &Waveform<T>,
    stft_cfg: &crate::stft::StftConfig,
    cfg: &OracleEnhanceConfig<T>,
) -> Result<Waveform<T>, MvdrError> {
    let noisy = crate::stft::analyze(mic, stft_cfg)?;
    let clean = crate::stft::analyze(near, stft_cfg)?;
    let echo_spec = crate::stft::analyze(echo, stft_cfg)?;
    let noise_spec = crate::stft::analyze(noise, stft_cfg)?;
    let enhanced = enhance_spectrogram_oracle(&noisy, &clean, &echo_spec, &noise_spec, cfg)?;
    Ok(synthesize(&enhanced, mic.sample_rate)?)
}

/// Differentiable twin of [`solve_mvdr_from_inverse`] + [`apply_filter`],
/// batched over all (k, m) cells of an utterance.
pub mod graph {
    use crate::nn::{Graph, TensorId};
    use crate::scalar::{fr, to_f64, Scalar};

    /// A complex tensor carried as paired real tensors.
    #[derive(Debug, Clone, Copy)]
    pub struct CPair {
        pub re: TensorId,
        pub im: TensorId,
    }

    /// Applies the multi-frame filter in one batched expression:
    /// w = A gamma / (gamma^H A gamma) with A the Hermitian-symmetrized
    /// correlation-matrix inverse, and S_hat = w^H y. Cells whose
    /// denominator falls below the same relative threshold as the
    /// numeric path fall back to the noisy passthrough value; the
    /// fallback branch carries no gradient because `passthrough` is
    /// constant.
    ///
    /// Shapes: `a` is [b, l, l], `gamma` is [b, l], `stacks` is the
    /// constant [b, l] noisy stack, `passthrough` the constant [b]
    /// current-frame bins. Output is [b].
    pub fn apply_mfmvdr<T: Scalar>(
        g: &mut Graph<T>,
        a: CPair,
        gamma: CPair,
        stacks: CPair,
        passthrough: CPair,
    ) -> CPair {
        let ashape = g.shape(a.re).to_vec();
        let (bsz, l) = (ashape[0], ashape[1]);

        // Hermitian symmetrization: re <- (re + re^T)/2, im <- (im - im^T)/2.
        let re_t = g.btranspose(a.re);
        let im_t = g.btranspose(a.im);
        let re_sum = g.add(a.re, re_t);
        let a_re = g.mul_const(re_sum, fr(0.5));
        let im_diff = g.sub(a.im, im_t);
        let a_im = g.mul_const(im_diff, fr(0.5));

        // n = A gamma (complex batched matrix-vector product).
        let rr = g.bmv(a_re, gamma.re);
        let ii = g.bmv(a_im, gamma.im);
        let ri = g.bmv(a_re, gamma.im);
        let ir = g.bmv(a_im, gamma.re);
        let n_re = g.sub(rr, ii);
        let n_im = g.add(ri, ir);

        // d = gamma^H n.
        let d_rr = g.bdot(gamma.re, n_re);
        let d_ii = g.bdot(gamma.im, n_im);
        let d_ri = g.bdot(gamma.re, n_im);
        let d_ir = g.bdot(gamma.im, n_re);
        let d_re = g.add(d_rr, d_ii);
        let d_im = g.sub(d_ri, d_ir);

        // num = n^H y.
        let u_rr = g.bdot(n_re, stacks.re);
        let u_ii = g.bdot(n_im, stacks.im);
        let u_ri = g.bdot(n_re, stacks.im);
        let u_ir = g.bdot(n_im, stacks.re);
        let num_re = g.add(u_rr, u_ii);
        let num_im = g.sub(u_ri, u_ir);

        // |d|^2 plus the host-side per-cell scales; the degenerate mask
        // and the floor mask follow the numeric solver's policy.
        let d_re2 = g.mul(d_re, d_re);
        let d_im2 = g.mul(d_im, d_im);
        let mag = g.add(d_re2, d_im2);

        let (mask_ok, mask_above_floor, floors) = {
            let are = g.values(a_re);
            let gre = g.values(gamma.re);
            let gim = g.values(gamma.im);
            let magv = g.values(mag);
            let mut mask_ok = Vec::with_capacity(bsz);
            let mut mask_above = Vec::with_capacity(bsz);
            let mut floors = Vec::with_capacity(bsz);
            for bi in 0..bsz {
                let mut trace = 0.0f64;
                for i in 0..l {
                    trace += to_f64(are[bi * l * l + i * l + i]);
                }
                let mut g2 = 0.0f64;
                for i in 0..l {
                    let (x, y) = (to_f64(gre[bi * l + i]), to_f64(gim[bi * l + i]));
                    g2 += x * x + y * y;
                }
                let scale = g2 * (trace.abs() / l as f64 + 1e-12);
                let threshold = super::DENOM_EPS * scale;
                let floor = super::DENOM_FLOOR * scale;
                let m = to_f64(magv[bi]);
                mask_ok.push(m > threshold * threshold);
                mask_above.push(m >= floor * floor);
                floors.push(fr::<T>(floor));
            }
            (mask_ok, mask_above, floors)
        };

        // Effective squared magnitude: |d|^2 above the floor, |d| floor
        // below it (phase-preserving floor of |d|). Degenerate cells are
        // lifted to one first so sqrt/recip stay NaN-free; the final
        // select discards those lanes anyway.
        let ones = g.constant(vec![T::one(); bsz], vec![bsz]);
        let mag_safe = g.select(mask_ok.clone(), mag, ones);
        let d_abs = g.sqrt(mag_safe);
        let floor_vec = g.constant(floors, vec![bsz]);
        let floored = g.mul(d_abs, floor_vec);
        let mag_eff = g.select(mask_above_floor, mag_safe, floored);
        let inv = g.recip(mag_eff);

        // S_hat = num * d / mag_eff (equals num / conj(d) when unfloored).
        let p_rr = g.mul(num_re, d_re);
        let p_ii = g.mul(num_im, d_im);
        let p_ri = g.mul(num_re, d_im);
        let p_ir = g.mul(num_im, d_re);
        let s_re_num = g.sub(p_rr, p_ii);
        let s_im_num = g.add(p_ri, p_ir);
        let s_re_raw = g.mul(s_re_num, inv);
        let s_im_raw = g.mul(s_im_num, inv);

        let re = g.select(mask_ok.clone(), s_re_raw, passthrough.re);
        let im = g.select(mask_ok, s_im_raw, passthrough.im);
        CPair { re, im }
    }
}
