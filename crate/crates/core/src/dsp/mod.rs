//! Deterministic signal path: STFT magnitude, mel analysis, mel inversion and
//! Griffin-Lim phase reconstruction.
//!
//! Everything here is a pure function of its inputs. Spectra are computed in
//! `f64`; mel files store `f32`.

mod config;
mod griffin_lim;
pub mod io;
mod mel;
mod stft;

pub use config::SignalConfig;
pub use griffin_lim::{griffin_lim, griffin_lim_traced, GriffinLimTrace};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, mel_to_linear, wave_to_mel, MelInverter};
pub use stft::{frame_count, hann_window, stft_magnitude};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("sample rate mismatch: waveform is {wave} Hz but config expects {config} Hz")]
    SampleRateMismatch { wave: u32, config: u32 },
    #[error("invalid signal config: {0}")]
    InvalidConfig(String),
    #[error("mel has {got} bins but config expects {expected}")]
    MelShape { got: usize, expected: usize },
    #[error("bad mel file: {0}")]
    BadMelFile(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio. Samples are expected in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

/// Log-mel frames (`T x n_mels`, natural log) together with the analysis
/// settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    #[serde(skip)]
    pub frames: Array2<f64>,
    pub config: SignalConfig,
}

impl MelSpectrogram {
    pub fn new(frames: Array2<f64>, config: SignalConfig) -> Self {
        Self { frames, config }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }

    /// Mel of pure silence: every entry at the log floor.
    pub fn silence(num_frames: usize, config: SignalConfig) -> Self {
        let floor = config.log_floor.ln();
        Self::new(Array2::from_elem((num_frames, config.n_mels), floor), config)
    }
}

/// Mel to audio: pseudo-inverse magnitudes, then Griffin-Lim. The waveform
/// has `num_frames · hop_length` samples.
pub fn vocode(mel: &MelSpectrogram, n_iters: usize, seed: u64) -> Result<Waveform, DspError> {
    let magnitude = mel_to_linear(mel)?;
    Ok(griffin_lim(&magnitude, &mel.config, n_iters, seed))
}
