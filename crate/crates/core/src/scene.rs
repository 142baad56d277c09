//! Synthetic scene generation.
//!
//! Builds near-end / far-end / echo / noise mixtures with controlled
//! signal-to-echo and signal-to-noise ratios: the far-end signal is
//! optionally passed through a loudspeaker nonlinearity, convolved with
//! a room impulse response, and scaled to the target SER; white
//! Gaussian noise is scaled to the target SNR; the microphone signal is
//! the sample-wise sum. The near-end clip sits centered inside the
//! longer far-end clip, so every scene contains both single-talk
//! (echo-only) and double-talk regions.
//!
//! Energy ratios are computed over the support of the near-end clip so
//! zero padding does not dilute the definitions.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, derive_seed};
use crate::scalar::{fr, to_f64, Scalar};
use crate::wav::{read_wav, write_wav, Waveform, WavEncoding, WavError};

/// Peak level scenes are normalized to after mixing, leaving headroom
/// for WAV storage.
pub const PEAK_TARGET: f64 = 0.9;

/// Loudspeaker distortion: a hard clip at a fraction of the peak level
/// followed by a memoryless sigmoidal stage.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NonlinearityParams {
    /// Clip point as a fraction of max |x|.
    pub clip_ratio: f64,
    /// Output scale of the sigmoidal stage.
    pub gain: f64,
}

impl Default for NonlinearityParams {
    fn default() -> Self {
        Self { clip_ratio: 0.8, gain: 1.0 }
    }
}

/// Room impulse response source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RirSource {
    /// Exponentially decaying white-noise tail with a unit leading tap.
    Synthetic { t60_ms: f64, len: usize },
    /// Mono WAV file containing the impulse response.
    File(PathBuf),
}

impl Default for RirSource {
    fn default() -> Self {
        RirSource::Synthetic { t60_ms: 200.0, len: 4_000 }
    }
}

/// Full recipe for one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub ser_db: f64,
    pub snr_db: f64,
    pub far_len_s: f64,
    pub near_len_s: f64,
    pub sample_rate: u32,
    pub nonlinearity: Option<NonlinearityParams>,
    pub rir: RirSource,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            ser_db: 0.0,
            snr_db: 30.0,
            far_len_s: 4.0,
            near_len_s: 2.0,
            sample_rate: 16_000,
            nonlinearity: Some(NonlinearityParams::default()),
            rir: RirSource::default(),
            seed: 0,
        }
    }
}

/// One synthetic mixture: mic = near + echo + noise sample-wise.
#[derive(Debug, Clone)]
pub struct Scene<T> {
    pub near: Waveform<T>,
    pub far: Waveform<T>,
    pub echo: Waveform<T>,
    pub noise: Waveform<T>,
    pub mic: Waveform<T>,
    /// Sample range actually occupied by the near-end clip.
    pub near_span: (usize, usize),
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
    #[error("near-end clip has zero energy; SER is undefined")]
    SilentNearEnd,
    #[error("echo has zero energy; SER is undefined")]
    SilentEcho,
    #[error("clip source is empty")]
    EmptyClipSource,
    #[error("clip has wrong sample rate: {got}, expected {expected}")]
    SampleRateMismatch { got: u32, expected: u32 },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse error at line {line}: {source}")]
    Manifest { line: usize, source: serde_json::Error },
}

/// Synthesizes a room impulse response: h[0] = 1, then a standard
/// normal tail shaped by exp(-n ln(1000) / (t60_ms * fs / 1000)),
/// normalized to unit energy.
pub fn synth_rir<T: Scalar>(
    t60_ms: f64,
    len: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<T>, SceneError> {
    if t60_ms <= 0.0 {
        return Err(SceneError::BadParameter("t60_ms must be positive"));
    }
    if len < 1 {
        return Err(SceneError::BadParameter("rir length must be >= 1"));
    }
    let t60_samples = t60_ms * sample_rate as f64 / 1000.0;
    let decay = (1000.0f64).ln() / t60_samples;
    let mut h: Vec<T> = Vec::with_capacity(len);
    h.push(T::one());
    for n in 1..len {
        let g: f64 = to_f64(rng::normal::<T>(rng));
        h.push(fr(g * (-decay * n as f64).exp()));
    }
    let energy: T = h.iter().map(|&x| x * x).fold(T::zero(), |a, b| a + b);
    let scale = energy.sqrt().recip();
    for x in h.iter_mut() {
        *x *= scale;
    }
    Ok(h)
}

/// Memoryless loudspeaker nonlinearity: hard clip at
/// c = clip_ratio * max|x|, then
/// out = gain * (2 / (1 + exp(-a b)) - 1) with b = 1.5 x_c - 0.3 x_c^2
/// and a = 4 where b > 0, else 0.5.
pub fn apply_nonlinearity<T: Scalar>(x: &Waveform<T>, params: &NonlinearityParams) -> Waveform<T> {
    let clip = x.peak() * fr(params.clip_ratio);
    let gain = fr::<T>(params.gain);
    let samples = x
        .samples
        .iter()
        .map(|&s| {
            let xc = if s > clip {
                clip
            } else if s < -clip {
                -clip
            } else {
                s
            };
            let b = fr::<T>(1.5) * xc - fr::<T>(0.3) * xc * xc;
            let a = if b > T::zero() { fr::<T>(4.0) } else { fr::<T>(0.5) };
            gain * (fr::<T>(2.0) / (T::one() + (-a * b).exp()) - T::one())
        })
        .collect();
    Waveform { samples, sample_rate: x.sample_rate }
}

/// Direct-form convolution truncated to the input length.
pub fn convolve_truncated<T: Scalar>(x: &[T], h: &[T]) -> Vec<T> {
    let n = x.len();
    let mut out = vec![T::zero(); n];
    for (i, &hi) in h.iter().enumerate() {
        if hi == T::zero() || i >= n {
            continue;
        }
        for j in 0..n - i {
            out[i + j] += x[j] * hi;
        }
    }
    out
}

fn energy_in<T: Scalar>(samples: &[T], span: (usize, usize)) -> T {
    samples[span.0..span.1].iter().map(|&s| s * s).fold(T::zero(), |a, b| a + b)
}

/// Builds a scene from near/far source clips according to the config.
///
/// The seed determines the RIR (when synthetic) and the noise draw; two
/// calls with identical inputs produce bit-identical scenes.
pub fn make_scene<T: Scalar>(
    near_clip: &Waveform<T>,
    far_clip: &Waveform<T>,
    cfg: &SceneConfig,
) -> Result<Scene<T>, SceneError> {
    let fs = cfg.sample_rate;
    for w in [near_clip, far_clip] {
        if w.sample_rate != fs {
            return Err(SceneError::SampleRateMismatch { got: w.sample_rate, expected: fs });
        }
    }
    let far_len = (cfg.far_len_s * fs as f64).round() as usize;
    let near_len = (cfg.near_len_s * fs as f64).round() as usize;
    if near_len > far_len {
        return Err(SceneError::BadParameter("near_len_s must not exceed far_len_s"));
    }
    if far_clip.len() < far_len || near_clip.len() < near_len {
        return Err(SceneError::BadParameter("source clips shorter than configured lengths"));
    }

    let mut stream = rng::rng_from_seed(cfg.seed);

    // Far-end reference, trimmed to length.
    let far = Waveform { samples: far_clip.samples[..far_len].to_vec(), sample_rate: fs };

    // Echo path: optional loudspeaker distortion, then the RIR.
    let driven = match &cfg.nonlinearity {
        Some(p) => apply_nonlinearity(&far, p),
        None => far.clone(),
    };
    let rir: Vec<T> = match &cfg.rir {
        RirSource::Synthetic { t60_ms, len } => synth_rir(*t60_ms, *len, fs, &mut stream)?,
        RirSource::File(path) => {
            let w: Waveform<T> = read_wav(path)?;
            if w.sample_rate != fs {
                return Err(SceneError::SampleRateMismatch { got: w.sample_rate, expected: fs });
            }
            w.samples
        }
    };
    let mut echo = convolve_truncated(&driven.samples, &rir);

    // Near-end clip centered in the far-end length.
    let lead = (far_len - near_len) / 2;
    let near_span = (lead, lead + near_len);
    let mut near = vec![T::zero(); far_len];
    near[lead..lead + near_len].copy_from_slice(&near_clip.samples[..near_len]);

    // Scale echo for the target SER over the near-end support.
    let e_near = energy_in(&near, near_span);
    if e_near <= T::zero() {
        return Err(SceneError::SilentNearEnd);
    }
    let e_echo = energy_in(&echo, near_span);
    if e_echo <= T::zero() {
        return Err(SceneError::SilentEcho);
    }
    let echo_gain = (e_near / (e_echo * fr(10f64.powf(cfg.ser_db / 10.0)))).sqrt();
    for s in echo.iter_mut() {
        *s *= echo_gain;
    }

    // White Gaussian noise scaled for the target SNR over the support.
    let mut noise: Vec<T> = (0..far_len).map(|_| rng::normal(&mut stream)).collect();
    let e_noise = energy_in(&noise, near_span);
    let noise_gain = (e_near / (e_noise * fr(10f64.powf(cfg.snr_db / 10.0)))).sqrt();
    for s in noise.iter_mut() {
        *s *= noise_gain;
    }

    let mut mic: Vec<T> = (0..far_len).map(|i| near[i] + echo[i] + noise[i]).collect();

    // Common gain so every stored component stays within [-1, 1].
    // A shared factor preserves additivity and both energy ratios.
    let peak = mic
        .iter()
        .chain(near.iter())
        .chain(echo.iter())
        .chain(noise.iter())
        .fold(T::zero(), |a, &b| if b.abs() > a { b.abs() } else { a });
    if peak > T::zero() {
        let g = fr::<T>(PEAK_TARGET) / peak;
        if g < T::one() {
            for v in mic.iter_mut() {
                *v *= g;
            }
            for v in near.iter_mut() {
                *v *= g;
            }
            for v in echo.iter_mut() {
                *v *= g;
            }
            for v in noise.iter_mut() {
                *v *= g;
            }
        }
    }

    Ok(Scene {
        near: Waveform { samples: near, sample_rate: fs },
        far,
        echo: Waveform { samples: echo, sample_rate: fs },
        noise: Waveform { samples: noise, sample_rate: fs },
        mic: Waveform { samples: mic, sample_rate: fs },
        near_span,
    })
}

/// Achieved energy ratio 10 log10(E_a / E_b) over a span.
pub fn measured_ratio_db<T: Scalar>(a: &Waveform<T>, b: &Waveform<T>, span: (usize, usize)) -> f64 {
    let ea = to_f64(energy_in(&a.samples, span));
    let eb = to_f64(energy_in(&b.samples, span));
    10.0 * (ea / eb).log10()
}

/// Source of near/far clips for dataset generation.
pub trait ClipSource<T: Scalar> {
    fn clip(
        &self,
        rng: &mut ChaCha8Rng,
        len: usize,
        sample_rate: u32,
    ) -> Result<Waveform<T>, SceneError>;
}

/// Speech-surrogate generator: voiced harmonic segments with pitch
/// drift and formant-like shaping, unvoiced noise bursts, and silence
/// gaps at a syllabic rhythm. No corpus needed, but enough
/// spectro-temporal structure for interframe correlation to matter.
pub struct SyntheticSpeech;

impl<T: Scalar> ClipSource<T> for SyntheticSpeech {
    fn clip(
        &self,
        rng: &mut ChaCha8Rng,
        len: usize,
        sample_rate: u32,
    ) -> Result<Waveform<T>, SceneError> {
        let fs = sample_rate as f64;
        let mut out = vec![0.0f64; len];
        let mut pos = 0usize;
        // Two formant-ish resonances fixed per clip.
        let formant1 = rng::uniform(rng, 300.0, 900.0);
        let formant2 = rng::uniform(rng, 1200.0, 2600.0);
        while pos < len {
            let seg_len = (rng::uniform(rng, 0.12, 0.30) * fs) as usize;
            let seg_end = (pos + seg_len).min(len);
            let kind: f64 = rng::uniform01(rng);
            if kind < 0.6 {
                // Voiced: harmonic stack with drifting pitch.
                let mut f0 = rng::uniform(rng, 90.0, 280.0);
                let drift = rng::uniform(rng, -30.0, 30.0) / fs;
                let amp = rng::uniform(rng, 0.4, 1.0);
                let mut phases = [0.0f64; 12];
                for (i, s) in out[pos..seg_end].iter_mut().enumerate() {
                    f0 += drift;
                    let t = i as f64 / (seg_end - pos).max(1) as f64;
                    // Raised-cosine syllable envelope.
                    let env = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t).cos());
                    let mut v = 0.0;
                    for (h, phase) in phases.iter_mut().enumerate() {
                        let freq = f0 * (h + 1) as f64;
                        if freq > 0.45 * fs {
                            break;
                        }
                        *phase += 2.0 * std::f64::consts::PI * freq / fs;
                        // 1/h rolloff plus resonance emphasis.
                        let d1 = (freq - formant1) / 200.0;
                        let d2 = (freq - formant2) / 300.0;
                        let shape = 1.0 / (h + 1) as f64
                            * (1.0 + 2.0 * (-d1 * d1).exp() + 1.2 * (-d2 * d2).exp());
                        v += shape * phase.sin();
                    }
                    *s = amp * env * v * 0.25;
                }
            } else if kind < 0.85 {
                // Unvoiced: first-difference of white noise (high-passed).
                let amp = rng::uniform(rng, 0.05, 0.25);
                let mut prev = 0.0f64;
                for s in out[pos..seg_end].iter_mut() {
                    let n: f64 = to_f64(rng::normal::<T>(rng));
                    *s = amp * (n - prev) * 0.5;
                    prev = n;
                }
            }
            // Remaining probability: silence, leave zeros.
            pos = seg_end;
        }
        let peak = out.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let target = rng::uniform(rng, 0.5, 0.9);
        if peak > 0.0 {
            let g = target / peak;
            for s in out.iter_mut() {
                *s *= g;
            }
        }
        Ok(Waveform { samples: out.into_iter().map(fr).collect(), sample_rate })
    }
}

/// Draws random crops from the WAV files in a directory.
pub struct WavDirSource {
    files: Vec<PathBuf>,
}

impl WavDirSource {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self, SceneError> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "wav").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(SceneError::EmptyClipSource);
        }
        Ok(Self { files })
    }
}

impl<T: Scalar> ClipSource<T> for WavDirSource {
    fn clip(
        &self,
        rng: &mut ChaCha8Rng,
        len: usize,
        sample_rate: u32,
    ) -> Result<Waveform<T>, SceneError> {
        let idx = (rng::uniform01::<f64>(rng) * self.files.len() as f64) as usize;
        let wav: Waveform<T> = read_wav(&self.files[idx.min(self.files.len() - 1)])?;
        if wav.sample_rate != sample_rate {
            return Err(SceneError::SampleRateMismatch {
                got: wav.sample_rate,
                expected: sample_rate,
            });
        }
        if wav.len() < len {
            return Err(SceneError::BadParameter("clip file shorter than requested length"));
        }
        let max_off = wav.len() - len;
        let off = (rng::uniform01::<f64>(rng) * (max_off + 1) as f64) as usize;
        let off = off.min(max_off);
        Ok(Waveform { samples: wav.samples[off..off + len].to_vec(), sample_rate })
    }
}

/// One manifest line: everything needed to reload or regenerate a scene.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneRecord {
    pub index: usize,
    pub seed: u64,
    pub ser_db: f64,
    pub snr_db: f64,
    pub near_span: (usize, usize),
    pub sample_rate: u32,
    pub mic: String,
    pub near: String,
    pub far: String,
    pub echo: String,
    pub noise: String,
}

/// Uniform sampling intervals for dataset generation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DatasetRanges {
    pub ser_min_db: f64,
    pub ser_max_db: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
}

impl Default for DatasetRanges {
    fn default() -> Self {
        Self { ser_min_db: -20.0, ser_max_db: 10.0, snr_min_db: 10.0, snr_max_db: 40.0 }
    }
}

fn generate_scene_files<T: Scalar>(
    index: usize,
    scene_seed: u64,
    ser_db: f64,
    snr_db: f64,
    base_cfg: &SceneConfig,
    source: &dyn ClipSource<T>,
    out_dir: &Path,
) -> Result<SceneRecord, SceneError> {
    let fs = base_cfg.sample_rate;
    let far_len = (base_cfg.far_len_s * fs as f64).round() as usize;
    let near_len = (base_cfg.near_len_s * fs as f64).round() as usize;

    let mut clip_rng = rng::rng_from_seed(derive_seed(scene_seed, 0xC11F));
    let near_clip = source.clip(&mut clip_rng, near_len, fs)?;
    let far_clip = source.clip(&mut clip_rng, far_len, fs)?;

    let cfg = SceneConfig { ser_db, snr_db, seed: scene_seed, ..base_cfg.clone() };
    let scene = make_scene(&near_clip, &far_clip, &cfg)?;

    let name = |part: &str| format!("scene{index:05}_{part}.wav");
    for (part, wav) in [
        ("mic", &scene.mic),
        ("near", &scene.near),
        ("far", &scene.far),
        ("echo", &scene.echo),
        ("noise", &scene.noise),
    ] {
        write_wav(out_dir.join(name(part)), wav, WavEncoding::Float32)?;
    }
    Ok(SceneRecord {
        index,
        seed: scene_seed,
        ser_db,
        snr_db,
        near_span: scene.near_span,
        sample_rate: fs,
        mic: name("mic"),
        near: name("near"),
        far: name("far"),
        echo: name("echo"),
        noise: name("noise"),
    })
}

fn write_manifest(records: &[SceneRecord], out_dir: &Path) -> Result<(), SceneError> {
    let manifest_path = out_dir.join("manifest.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&manifest_path)?);
    for r in records {
        serde_json::to_writer(&mut f, r).map_err(|e| SceneError::Manifest { line: 0, source: e })?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Generates `n_scenes` scenes into `out_dir`, writing component WAVs
/// (float-32) and a JSON-lines manifest. Fully determined by `seed`;
/// SER/SNR are drawn uniformly from the ranges per scene.
pub fn make_dataset<T: Scalar>(
    n_scenes: usize,
    ranges: &DatasetRanges,
    base_cfg: &SceneConfig,
    source: &dyn ClipSource<T>,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<SceneRecord>, SceneError> {
    if n_scenes == 0 {
        return Err(SceneError::BadParameter("n_scenes must be >= 1"));
    }
    if ranges.ser_min_db > ranges.ser_max_db || ranges.snr_min_db > ranges.snr_max_db {
        return Err(SceneError::BadParameter("empty SER/SNR range"));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let mut records = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let scene_seed = derive_seed(seed, i as u64);
        let mut draw = rng::rng_from_seed(derive_seed(scene_seed, 0xD4A9));
        let ser_db: f64 = rng::uniform(&mut draw, ranges.ser_min_db, ranges.ser_max_db);
        let snr_db: f64 = rng::uniform(&mut draw, ranges.snr_min_db, ranges.snr_max_db);
        records.push(generate_scene_files(i, scene_seed, ser_db, snr_db, base_cfg, source, out_dir)?);
    }
    write_manifest(&records, out_dir)?;
    Ok(records)
}

/// Generates a fixed evaluation grid: `scenes_per_condition` scenes at
/// each exact (SER, SNR) pair; one manifest covers them all.
pub fn make_dataset_grid<T: Scalar>(
    scenes_per_condition: usize,
    conditions: &[(f64, f64)],
    base_cfg: &SceneConfig,
    source: &dyn ClipSource<T>,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<SceneRecord>, SceneError> {
    if scenes_per_condition == 0 {
        return Err(SceneError::BadParameter("scenes_per_condition must be >= 1"));
    }
    if conditions.is_empty() {
        return Err(SceneError::BadParameter("empty condition list"));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let mut records = Vec::with_capacity(scenes_per_condition * conditions.len());
    let mut index = 0;
    for &(ser_db, snr_db) in conditions {
        for _ in 0..scenes_per_condition {
            let scene_seed = derive_seed(seed, index as u64);
            records.push(generate_scene_files(
                index, scene_seed, ser_db, snr_db, base_cfg, source, out_dir,
            )?);
            index += 1;
        }
    }
    write_manifest(&records, out_dir)?;
    Ok(records)
}

/// Reads a JSON-lines manifest back.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>, SceneError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SceneRecord = serde_json::from_str(&line)
            .map_err(|e| SceneError::Manifest { line: i + 1, source: e })?;
        records.push(r);
    }
    Ok(records)
}

/// Loads the component waveforms referenced by a manifest record.
pub fn load_scene<T: Scalar>(
    dir: impl AsRef<Path>,
    record: &SceneRecord,
) -> Result<Scene<T>, SceneError> {
    let dir = dir.as_ref();
    Ok(Scene {
        mic: read_wav(dir.join(&record.mic))?,
        near: read_wav(dir.join(&record.near))?,
        far: read_wav(dir.join(&record.far))?,
        echo: read_wav(dir.join(&record.echo))?,
        noise: read_wav(dir.join(&record.noise))?,
        near_span: record.near_span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg(seed: u64) -> SceneConfig {
        SceneConfig { seed, ..SceneConfig::default() }
    }

    fn test_clips(seed: u64) -> (Waveform<f64>, Waveform<f64>) {
        let src = SyntheticSpeech;
        let mut rng = rng::rng_from_seed(seed);
        let near = ClipSource::<f64>::clip(&src, &mut rng, 32_000, 16_000).unwrap();
        let far = ClipSource::<f64>::clip(&src, &mut rng, 64_000, 16_000).unwrap();
        (near, far)
    }

    #[test]
    fn rir_of_length_one_is_unit_tap() {
        let mut rng = rng::rng_from_seed(1);
        let h: Vec<f64> = synth_rir(200.0, 1, 16_000, &mut rng).unwrap();
        assert_eq!(h, vec![1.0]);
    }

    #[test]
    fn rir_has_unit_energy() {
        let mut rng = rng::rng_from_seed(2);
        let h: Vec<f64> = synth_rir(150.0, 3_000, 16_000, &mut rng).unwrap();
        let e: f64 = h.iter().map(|x| x * x).sum();
        assert!((e - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rir_envelope_decays_to_minus_sixty_db_at_t60() {
        // The decay envelope evaluated at n = t60 * fs / 1000 is 1e-3 of
        // the peak before normalization, straight from the formula.
        let t60_ms = 120.0;
        let fs = 16_000u32;
        let t60_samples = t60_ms * fs as f64 / 1000.0;
        let decay = 1000.0f64.ln() / t60_samples;
        let envelope_at_t60 = (-decay * t60_samples).exp();
        assert!((envelope_at_t60 - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn rir_rejects_bad_parameters() {
        let mut rng = rng::rng_from_seed(3);
        assert!(synth_rir::<f64>(0.0, 100, 16_000, &mut rng).is_err());
        assert!(synth_rir::<f64>(100.0, 0, 16_000, &mut rng).is_err());
    }

    #[test]
    fn nonlinearity_maps_zero_to_zero() {
        let x = Waveform::new(vec![0.0f64; 100], 16_000).unwrap();
        let y = apply_nonlinearity(&x, &NonlinearityParams::default());
        assert!(y.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn nonlinearity_output_is_bounded_by_gain() {
        let src = SyntheticSpeech;
        let mut rng = rng::rng_from_seed(4);
        let x = ClipSource::<f64>::clip(&src, &mut rng, 16_000, 16_000).unwrap();
        let y = apply_nonlinearity(&x, &NonlinearityParams::default());
        assert!(y.samples.iter().all(|&s| s.abs() < 1.0));
    }

    #[test]
    fn nonlinearity_regression_value() {
        // Frozen from the first evaluation of the stated formula:
        // x = 0.5 with max |x| = 0.5 -> c = 0.4, x_c = 0.4,
        // b = 1.5*0.4 - 0.3*0.16 = 0.552, out = 2/(1+exp(-4*0.552)) - 1.
        let x = Waveform::new(vec![0.5f64], 16_000).unwrap();
        let y = apply_nonlinearity(&x, &NonlinearityParams::default());
        assert!((y.samples[0] - 0.80193123345058948).abs() < 1e-15);
    }

    #[test]
    fn nonlinearity_is_monotone_below_clip() {
        // The sigmoidal stage is strictly increasing where b(x) increases
        // (b' = 1.5 - 0.6 x > 0 for |x| <= 1).
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let wav = Waveform::new(xs, 16_000).unwrap();
        let y = apply_nonlinearity(&wav, &NonlinearityParams::default());
        // Up to the clip point (index 80), outputs strictly increase.
        for i in 1..=80 {
            assert!(y.samples[i] > y.samples[i - 1]);
        }
        // Beyond the clip point the output saturates.
        for i in 81..=100 {
            assert!((y.samples[i] - y.samples[80]).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_impulse_echo_reproduces_rir() {
        // Nonlinearity disabled, far = unit impulse: echo equals the RIR
        // up to the SER gain, so normalizing by the first tap recovers it.
        let fs = 16_000;
        let mut far = vec![0.0f64; 64_000];
        far[0] = 1.0;
        // Place more impulses so echo energy in the near span is nonzero.
        far[20_000] = 1.0;
        far[40_000] = 1.0;
        let far = Waveform::new(far, fs).unwrap();
        let near = {
            let src = SyntheticSpeech;
            let mut rng = rng::rng_from_seed(5);
            ClipSource::<f64>::clip(&src, &mut rng, 32_000, fs).unwrap()
        };
        let cfg = SceneConfig { nonlinearity: None, ..test_cfg(11) };
        let scene = make_scene(&near, &far, &cfg).unwrap();

        // Regenerate the same RIR from the same seed.
        let mut stream = rng::rng_from_seed(11);
        let rir: Vec<f64> = match cfg.rir {
            RirSource::Synthetic { t60_ms, len } => {
                synth_rir(t60_ms, len, fs, &mut stream).unwrap()
            }
            _ => unreachable!(),
        };
        let expected = convolve_truncated(&far.samples, &rir);
        let k = scene.echo.samples[0] / expected[0];
        for (e, x) in scene.echo.samples.iter().zip(expected.iter()) {
            assert!((e - k * x).abs() < 1e-12);
        }
    }

    #[test]
    fn scene_is_additive_and_hits_requested_ratios() {
        let (near, far) = test_clips(21);
        let cfg = SceneConfig { ser_db: 3.0, snr_db: 25.0, ..test_cfg(33) };
        let scene = make_scene(&near, &far, &cfg).unwrap();

        for i in 0..scene.mic.len() {
            let sum = scene.near.samples[i] + scene.echo.samples[i] + scene.noise.samples[i];
            assert!((scene.mic.samples[i] - sum).abs() < 1e-12);
        }
        let ser = measured_ratio_db(&scene.near, &scene.echo, scene.near_span);
        let snr = measured_ratio_db(&scene.near, &scene.noise, scene.near_span);
        assert!((ser - 3.0).abs() < 0.01, "ser {ser}");
        assert!((snr - 25.0).abs() < 0.01, "snr {snr}");
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let (near, far) = test_clips(8);
        let cfg = test_cfg(99);
        let a = make_scene(&near, &far, &cfg).unwrap();
        let b = make_scene(&near, &far, &cfg).unwrap();
        assert_eq!(a.mic.samples, b.mic.samples);
        assert_eq!(a.echo.samples, b.echo.samples);
        assert_eq!(a.noise.samples, b.noise.samples);
    }

    #[test]
    fn silent_near_end_is_an_error() {
        let (_, far) = test_clips(13);
        let near = Waveform::new(vec![0.0f64; 32_000], 16_000).unwrap();
        assert!(matches!(
            make_scene(&near, &far, &test_cfg(1)).unwrap_err(),
            SceneError::SilentNearEnd
        ));
    }

    #[test]
    fn near_clip_sits_centered() {
        let (near, far) = test_clips(55);
        let scene = make_scene(&near, &far, &test_cfg(55)).unwrap();
        assert_eq!(scene.near_span, (16_000, 48_000));
        assert!(scene.near.samples[..16_000].iter().all(|&s| s == 0.0));
        assert!(scene.near.samples[48_000..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn dataset_draws_stay_in_ranges_and_manifest_round_trips() {
        let dir = std::env::temp_dir().join(format!("mfaes-ds-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let ranges = DatasetRanges::default();
        let records = make_dataset::<f64>(
            5,
            &ranges,
            &SceneConfig::default(),
            &SyntheticSpeech,
            7,
            &dir,
        )
        .unwrap();
        assert_eq!(records.len(), 5);
        for r in &records {
            assert!(r.ser_db >= -20.0 && r.ser_db <= 10.0);
            assert!(r.snr_db >= 10.0 && r.snr_db <= 40.0);
        }
        let back = read_manifest(dir.join("manifest.jsonl")).unwrap();
        assert_eq!(back, records);

        // Scenes reload with the recorded ratios.
        let scene: Scene<f64> = load_scene(&dir, &records[0]).unwrap();
        let ser = measured_ratio_db(&scene.near, &scene.echo, scene.near_span);
        // Float-32 storage rounds the samples; ratios survive well within 0.01 dB.
        assert!((ser - records[0].ser_db).abs() < 0.01);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn dataset_of_zero_scenes_is_an_error() {
        let dir = std::env::temp_dir().join("mfaes-ds-empty");
        let r = make_dataset::<f64>(
            0,
            &DatasetRanges::default(),
            &SceneConfig::default(),
            &SyntheticSpeech,
            7,
            &dir,
        );
        assert!(matches!(r.unwrap_err(), SceneError::BadParameter(_)));
    }

    #[test]
    fn dataset_regeneration_is_bit_identical() {
        let dir_a = std::env::temp_dir().join(format!("mfaes-det-a-{}", std::process::id()));
        let dir_b = std::env::temp_dir().join(format!("mfaes-det-b-{}", std::process::id()));
        for d in [&dir_a, &dir_b] {
            let _ = std::fs::remove_dir_all(d);
        }
        let cfg = SceneConfig::default();
        let ranges = DatasetRanges::default();
        make_dataset::<f64>(3, &ranges, &cfg, &SyntheticSpeech, 42, &dir_a).unwrap();
        make_dataset::<f64>(3, &ranges, &cfg, &SyntheticSpeech, 42, &dir_b).unwrap();
        let ma = std::fs::read(dir_a.join("manifest.jsonl")).unwrap();
        let mb = std::fs::read(dir_b.join("manifest.jsonl")).unwrap();
        assert_eq!(ma, mb);
        let wa = std::fs::read(dir_a.join("scene00000_mic.wav")).unwrap();
        let wb = std::fs::read(dir_b.join("scene00000_mic.wav")).unwrap();
        assert_eq!(wa, wb);
        for d in [&dir_a, &dir_b] {
            std::fs::remove_dir_all(d).unwrap();
        }
    }
}
