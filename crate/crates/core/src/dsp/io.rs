//! Mel and WAV file formats.
//!
//! Mel files are little-endian: the 6-byte magic `ADMEL1`, `u32` frame count,
//! `u32` mel count, then `T * n_mels` `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{DspError, MelSpectrogram, SignalConfig, Waveform};

pub const MEL_MAGIC: &[u8; 6] = b"ADMEL1";

pub fn encode_mel(frames: &Array2<f64>) -> Vec<u8> {
    let (t, m) = frames.dim();
    let mut out = Vec::with_capacity(14 + 4 * t * m);
    out.extend_from_slice(MEL_MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    for v in frames.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_mel(bytes: &[u8]) -> Result<Array2<f64>, DspError> {
    let (t, m) = decode_mel_header(bytes)?;
    let body = &bytes[14..];
    if body.len() != 4 * t * m {
        return Err(DspError::BadMelFile(format!(
            "expected {} payload bytes for {t}x{m}, found {}",
            4 * t * m,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((t, m), values).expect("length checked"))
}

fn decode_mel_header(bytes: &[u8]) -> Result<(usize, usize), DspError> {
    if bytes.len() < 14 || &bytes[..6] != MEL_MAGIC {
        return Err(DspError::BadMelFile("missing ADMEL1 header".into()));
    }
    let t = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    Ok((t, m))
}

pub fn write_mel(path: &Path, mel: &MelSpectrogram) -> Result<(), DspError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_mel(&mel.frames))?;
    w.flush()?;
    Ok(())
}

pub fn read_mel(path: &Path, cfg: &SignalConfig) -> Result<MelSpectrogram, DspError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let frames = decode_mel(&bytes)?;
    if frames.ncols() != cfg.n_mels {
        return Err(DspError::MelShape { got: frames.ncols(), expected: cfg.n_mels });
    }
    Ok(MelSpectrogram::new(frames, *cfg))
}

/// Reads only the header; returns `(frames, n_mels)`.
pub fn read_mel_dims(path: &Path) -> Result<(usize, usize), DspError> {
    let mut head = [0u8; 14];
    let mut f = File::open(path)?;
    f.read_exact(&mut head)
        .map_err(|_| DspError::BadMelFile(format!("{} is truncated", path.display())))?;
    decode_mel_header(&head)
}

/// Rounds to the 16-bit grid that `write_wav` stores, so analysis of the
/// quantized samples matches analysis of the file.
pub fn quantize_pcm16(samples: &[f64]) -> Vec<f64> {
    samples.iter().map(|&s| to_i16(s) as f64 / i16::MAX as f64).collect()
}

fn to_i16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(BufWriter::new(File::create(path)?), spec)?;
    for &s in &wave.samples {
        w.write_sample(to_i16(s))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Waveform, DspError> {
    let mut r = hound::WavReader::new(BufReader::new(File::open(path)?))?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 {
        return Err(DspError::Wav(hound::Error::Unsupported));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / i16::MAX as f64))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Waveform::new(samples, spec.sample_rate))
}
