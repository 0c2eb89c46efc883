use nalgebra::DMatrix;
use ndarray::{Array2, Axis};

use super::{stft_magnitude, DspError, MelSpectrogram, SignalConfig, Waveform};

// Slaney mel scale: linear below 1 kHz (200/3 Hz per mel), logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

/// Unit-peak triangular filters evenly spaced on the mel scale between
/// `fmin` and `fmax`; shape `n_mels x (fft_size/2 + 1)`.
pub fn mel_filterbank(cfg: &SignalConfig) -> Result<Array2<f64>, DspError> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            fb[[m, b]] = up.min(down).max(0.0);
        }
    }
    Ok(fb)
}

/// `log(max(filterbank . |STFT|, log_floor))`, one row per STFT frame.
pub fn wave_to_mel(wave: &Waveform, cfg: &SignalConfig) -> Result<MelSpectrogram, DspError> {
    let mag = stft_magnitude(wave, cfg)?;
    let fb = mel_filterbank(cfg)?;
    let energies = mag.dot(&fb.t());
    let frames = energies.mapv(|e| e.max(cfg.log_floor).ln());
    Ok(MelSpectrogram::new(frames, *cfg))
}

/// Filterbank pseudo-inverse, computed once and reused across calls.
pub struct MelInverter {
    cfg: SignalConfig,
    filterbank: Array2<f64>,
    // n_bins x n_mels
    pinv: Array2<f64>,
}

impl MelInverter {
    pub fn new(cfg: &SignalConfig) -> Result<Self, DspError> {
        let filterbank = mel_filterbank(cfg)?;
        let (n_mels, n_bins) = filterbank.dim();
        let m = DMatrix::from_fn(n_mels, n_bins, |i, j| filterbank[[i, j]]);
        let gram = &m * m.transpose();
        let chol = gram.cholesky().ok_or_else(|| {
            DspError::InvalidConfig("mel filterbank is rank deficient".to_string())
        })?;
        // pinv = M^T (M M^T)^-1
        let inv_gram = chol.inverse();
        let p = m.transpose() * inv_gram;
        let pinv = Array2::from_shape_fn((n_bins, n_mels), |(i, j)| p[(i, j)]);
        Ok(Self { cfg: *cfg, filterbank, pinv })
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    pub fn invert(&self, mel: &MelSpectrogram) -> Result<Array2<f64>, DspError> {
        if mel.n_mels() != self.cfg.n_mels {
            return Err(DspError::MelShape { got: mel.n_mels(), expected: self.cfg.n_mels });
        }
        let energies = mel.frames.mapv(f64::exp);
        let mut lin = energies.dot(&self.pinv.t());
        lin.mapv_inplace(|v| v.max(0.0));
        Ok(lin)
    }
}

/// Approximate linear magnitudes from a log-mel: clipped pseudo-inverse of the
/// filterbank applied to `exp(mel)`.
pub fn mel_to_linear(mel: &MelSpectrogram) -> Result<Array2<f64>, DspError> {
    MelInverter::new(&mel.config)?.invert(mel)
}

/// Center frequency of every filter, in Hz.
#[allow(dead_code)]
pub(crate) fn filter_centers(cfg: &SignalConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

#[allow(dead_code)]
pub(crate) fn row_sums(fb: &Array2<f64>) -> Vec<f64> {
    fb.sum_axis(Axis(1)).to_vec()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn tone(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (24_000.0 * secs) as usize;
        Waveform::new(
            (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / 24_000.0).sin()).collect(),
            24_000,
        )
    }

    fn argmax(v: ndarray::ArrayView1<f64>) -> usize {
        v.iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
            .0
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 999.0, 1000.0, 4321.0, 12_000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_shape_and_rows() {
        let cfg = SignalConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        assert_eq!(fb.dim(), (80, 1025));
        assert!(fb.iter().all(|&v| v >= 0.0));
        assert!(row_sums(&fb).iter().all(|&s| s > 0.0));
        let centers = filter_centers(&cfg);
        assert!(centers.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let cfg = SignalConfig::default();
        let mel = wave_to_mel(&Waveform::silence(4800, 24_000), &cfg).unwrap();
        assert_eq!(mel.num_frames(), 21);
        assert!(mel.frames.iter().all(|&v| v == 1e-5f64.ln()));
    }

    #[test]
    fn doubling_amplitude_shifts_log_mel() {
        let cfg = SignalConfig::default();
        let a = wave_to_mel(&tone(700.0, 0.3, 0.2), &cfg).unwrap();
        let b = wave_to_mel(&tone(700.0, 0.3, 0.4), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        let mut checked = 0;
        for (x, y) in a.frames.iter().zip(b.frames.iter()) {
            if *x > floor + 1.0 {
                assert!((y - x - 2f64.ln()).abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn inverted_tone_keeps_its_bin() {
        let cfg = SignalConfig::default();
        let mel = wave_to_mel(&tone(1000.0, 0.5, 0.5), &cfg).unwrap();
        let lin = mel_to_linear(&mel).unwrap();
        let target = 1000.0 * cfg.fft_size as f64 / cfg.sample_rate as f64;
        for t in 5..lin.nrows() - 5 {
            let k = argmax(lin.row(t)) as f64;
            assert!((k - target).abs() <= 2.0, "frame {t}: bin {k} vs {target}");
        }
    }

    #[test]
    fn silence_inverts_to_near_zero() {
        let cfg = SignalConfig::default();
        let lin = mel_to_linear(&MelSpectrogram::silence(4, cfg)).unwrap();
        assert!(lin.iter().all(|&v| (0.0..=1e-4).contains(&v)));
    }
}
