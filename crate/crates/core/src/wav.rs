//! Time-domain audio I/O.
//!
//! Reads and writes mono RIFF/WAV files (PCM16 little-endian and IEEE
//! float-32) and enforces the pipeline's sampling contract: full-scale
//! normalized samples in [-1, 1]. Stereo files are rejected rather than
//! downmixed, and out-of-range samples on write are an error rather than
//! a silent clip, so the loudspeaker nonlinearity stays the only
//! clipping site in the pipeline.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::{fr, to_f64, Scalar};

/// Default sample rate of the whole pipeline.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// A finite sequence of real samples at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a RIFF/WAVE file")]
    NotRiff,
    #[error("malformed wav: {0}")]
    Malformed(&'static str),
    #[error("unsupported encoding: format tag {format}, {bits} bits")]
    UnsupportedEncoding { format: u16, bits: u16 },
    #[error("multichannel file ({0} channels); only mono is supported")]
    Multichannel(u16),
    #[error("sample {index} out of range: {value} (must be within [-1, 1])")]
    OutOfRange { index: usize, value: f64 },
    #[error("sample {0} is not finite")]
    NotFinite(usize),
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
}

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

impl<T: Scalar> Waveform<T> {
    /// Builds a waveform, validating the type invariants.
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self, WavError> {
        if sample_rate == 0 {
            return Err(WavError::InvalidSampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(WavError::NotFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> T {
        self.samples.iter().map(|&s| s * s).fold(T::zero(), |a, b| a + b)
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> T {
        self.samples
            .iter()
            .fold(T::zero(), |a, &b| if b.abs() > a { b.abs() } else { a })
    }

    /// Casts samples into another scalar type.
    pub fn cast<U: Scalar>(&self) -> Waveform<U> {
        Waveform {
            samples: self.samples.iter().map(|&s| fr(to_f64(s))).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a mono PCM16 or float-32 WAV file, scaling samples to [-1, 1].
pub fn read_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<Waveform<T>, WavError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    reader.read_exact(&mut header)?;
    if &header[0..4] != b"RIFF" || &header[8..12] != b"WAVE" {
        return Err(WavError::NotRiff);
    }

    let mut format_tag = 0u16;
    let mut channels = 0u16;
    let mut sample_rate = 0u32;
    let mut bits = 0u16;
    let mut have_fmt = false;
    let mut data: Option<Vec<u8>> = None;

    loop {
        let mut chunk = [0u8; 8];
        match reader.read_exact(&mut chunk) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = &chunk[0..4];
        let size = u32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Malformed("fmt chunk too small"));
                }
                let mut fmt = vec![0u8; size];
                reader.read_exact(&mut fmt)?;
                format_tag = u16::from_le_bytes([fmt[0], fmt[1]]);
                channels = u16::from_le_bytes([fmt[2], fmt[3]]);
                sample_rate = u32::from_le_bytes([fmt[4], fmt[5], fmt[6], fmt[7]]);
                bits = u16::from_le_bytes([fmt[14], fmt[15]]);
                have_fmt = true;
            }
            b"data" => {
                let mut payload = vec![0u8; size];
                reader.read_exact(&mut payload)?;
                data = Some(payload);
            }
            _ => {
                // Skip unknown chunks (fact, LIST, ...). Chunks are word aligned.
                let skip = size + (size & 1);
                std::io::copy(&mut reader.by_ref().take(skip as u64), &mut std::io::sink())?;
            }
        }
        if have_fmt && data.is_some() {
            break;
        }
    }

    if !have_fmt {
        return Err(WavError::Malformed("missing fmt chunk"));
    }
    let data = data.ok_or(WavError::Malformed("missing data chunk"))?;
    if channels != 1 {
        return Err(WavError::Multichannel(channels));
    }
    if sample_rate == 0 {
        return Err(WavError::InvalidSampleRate(sample_rate));
    }

    let samples: Vec<T> = match (format_tag, bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| {
                let v = i16::from_le_bytes([b[0], b[1]]);
                fr(v as f64 / 32768.0)
            })
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| fr(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect(),
        (format, bits) => return Err(WavError::UnsupportedEncoding { format, bits }),
    };

    for (i, s) in samples.iter().enumerate() {
        if !s.is_finite() {
            return Err(WavError::NotFinite(i));
        }
        if s.abs() > T::one() {
            return Err(WavError::OutOfRange { index: i, value: to_f64(*s) });
        }
    }

    Waveform::new(samples, sample_rate)
}

/// Writes a mono WAV file. Samples must be finite and within [-1, 1].
pub fn write_wav<T: Scalar>(
    path: impl AsRef<Path>,
    wav: &Waveform<T>,
    encoding: WavEncoding,
) -> Result<(), WavError> {
    for (i, s) in wav.samples.iter().enumerate() {
        if !s.is_finite() {
            return Err(WavError::NotFinite(i));
        }
        if s.abs() > T::one() {
            return Err(WavError::OutOfRange { index: i, value: to_f64(*s) });
        }
    }

    let (format_tag, bytes_per_sample) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 2usize),
        WavEncoding::Float32 => (FORMAT_IEEE_FLOAT, 4usize),
    };
    let data_len = wav.samples.len() * bytes_per_sample;
    let riff_len = 4 + (8 + 16) + (8 + data_len);

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_all(&(riff_len as u32).to_le_bytes())?;
    w.write_all(b"WAVE")?;

    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&format_tag.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&wav.sample_rate.to_le_bytes())?;
    let byte_rate = wav.sample_rate as u64 * bytes_per_sample as u64;
    w.write_all(&(byte_rate as u32).to_le_bytes())?;
    w.write_all(&(bytes_per_sample as u16).to_le_bytes())?;
    w.write_all(&((bytes_per_sample * 8) as u16).to_le_bytes())?;

    w.write_all(b"data")?;
    w.write_all(&(data_len as u32).to_le_bytes())?;
    match encoding {
        WavEncoding::Pcm16 => {
            for &s in &wav.samples {
                let scaled = (to_f64(s) * 32768.0).round();
                let v = scaled.clamp(-32768.0, 32767.0) as i16;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        WavEncoding::Float32 => {
            for &s in &wav.samples {
                w.write_all(&(to_f64(s) as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("mfaes-wav-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(format!("{name}-{}", std::process::id()))
    }

    #[test]
    fn zero_signal_round_trips() {
        let path = tmp_path("zeros.wav");
        let wav = Waveform::new(vec![0.0f64; 16_000], 16_000).unwrap();
        write_wav(&path, &wav, WavEncoding::Pcm16).unwrap();
        let back: Waveform<f64> = read_wav(&path).unwrap();
        assert_eq!(back.len(), 16_000);
        assert_eq!(back.sample_rate, 16_000);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pcm16_full_scale_convention() {
        // Max positive PCM16 code maps to 32767/32768.
        let path = tmp_path("fullscale.wav");
        let v = 32_767.0 / 32_768.0;
        let wav = Waveform::new(vec![v], 16_000).unwrap();
        write_wav(&path, &wav, WavEncoding::Pcm16).unwrap();
        let back: Waveform<f64> = read_wav(&path).unwrap();
        assert!((back.samples[0] - v).abs() < 1e-12);
    }

    #[test]
    fn header_sample_rate_passthrough() {
        let path = tmp_path("44k.wav");
        let wav = Waveform::new(vec![0.25f64; 100], 44_100).unwrap();
        write_wav(&path, &wav, WavEncoding::Pcm16).unwrap();
        let back: Waveform<f64> = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 44_100);
    }

    #[test]
    fn pcm16_sine_round_trip_error_bound() {
        let path = tmp_path("sine.wav");
        let samples: Vec<f64> = (0..1600)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16_000.0).sin())
            .collect();
        let wav = Waveform::new(samples.clone(), 16_000).unwrap();
        write_wav(&path, &wav, WavEncoding::Pcm16).unwrap();
        let back: Waveform<f64> = read_wav(&path).unwrap();
        for (a, b) in samples.iter().zip(back.samples.iter()) {
            assert!((a - b).abs() <= 1.0 / 32_768.0);
        }
    }

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let path = tmp_path("float.wav");
        let samples: Vec<f32> = (0..1000).map(|n| ((n * 37 % 101) as f32 - 50.0) / 64.0).collect();
        let wav = Waveform::new(samples.clone(), 16_000).unwrap();
        write_wav(&path, &wav, WavEncoding::Float32).unwrap();
        let back: Waveform<f32> = read_wav(&path).unwrap();
        assert_eq!(back.samples, samples);
    }

    #[test]
    fn out_of_range_sample_is_an_error() {
        let path = tmp_path("oor.wav");
        let wav = Waveform { samples: vec![1.5f64], sample_rate: 16_000 };
        let err = write_wav(&path, &wav, WavEncoding::Pcm16).unwrap_err();
        assert!(matches!(err, WavError::OutOfRange { .. }));
    }

    #[test]
    fn stereo_is_rejected() {
        let path = tmp_path("stereo.wav");
        // Hand-build a 2-channel header.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&16_000u32.to_le_bytes());
        bytes.extend_from_slice(&64_000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = read_wav::<f64>(&path).unwrap_err();
        assert!(matches!(err, WavError::Multichannel(2)));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let path = tmp_path("listchunk.wav");
        let wav = Waveform::new(vec![0.1f32, -0.2, 0.3], 16_000).unwrap();
        write_wav(&path, &wav, WavEncoding::Float32).unwrap();
        // Splice a LIST chunk between the header and fmt.
        let bytes = std::fs::read(&path).unwrap();
        let mut spliced = bytes[..12].to_vec();
        spliced.extend_from_slice(b"LIST");
        spliced.extend_from_slice(&4u32.to_le_bytes());
        spliced.extend_from_slice(b"INFO");
        spliced.extend_from_slice(&bytes[12..]);
        let riff_len = (spliced.len() - 8) as u32;
        spliced[4..8].copy_from_slice(&riff_len.to_le_bytes());
        std::fs::write(&path, spliced).unwrap();
        let back: Waveform<f32> = read_wav(&path).unwrap();
        assert_eq!(back.samples, wav.samples);
    }

    proptest! {
        #[test]
        fn pcm16_round_trip_within_one_step(samples in proptest::collection::vec(-1.0f64..=(1.0 - 1.0 / 32_768.0), 1..64)) {
            let path = tmp_path("prop.wav");
            let wav = Waveform::new(samples.clone(), 16_000).unwrap();
            write_wav(&path, &wav, WavEncoding::Pcm16).unwrap();
            let back: Waveform<f64> = read_wav(&path).unwrap();
            for (a, b) in samples.iter().zip(back.samples.iter()) {
                prop_assert!((a - b).abs() <= 1.0 / 32_768.0);
            }
        }
    }
}
