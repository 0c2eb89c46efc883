use serde::{Deserialize, Serialize};

use super::DspError;

/// Analysis parameters shared by feature extraction and reconstruction.
///
/// Defaults: 24 kHz mono, 45 ms Hann window, 10 ms hop, 80 mel bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            win_length: 1080,
            hop_length: 240,
            fft_size: 2048,
            n_mels: 80,
            fmin: 0.0,
            fmax: 12_000.0,
            log_floor: 1e-5,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |msg: &str| Err(DspError::InvalidConfig(msg.to_string()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.hop_length == 0 || self.win_length == 0 {
            return bad("window and hop must be positive");
        }
        if self.win_length > self.fft_size {
            return bad("win_length exceeds fft_size");
        }
        if self.hop_length > self.win_length {
            return bad("hop_length exceeds win_length");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1");
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn log_floor_value(&self) -> f64 {
        self.log_floor.ln()
    }

    pub fn frame_seconds(&self) -> f64 {
        self.hop_length as f64 / self.sample_rate as f64
    }
}
