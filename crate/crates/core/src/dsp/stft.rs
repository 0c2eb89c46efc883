use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{DspError, SignalConfig, Waveform};

/// Periodic Hann window of `win_length` samples, zero-padded symmetrically to
/// `fft_size`.
pub fn hann_window(cfg: &SignalConfig) -> Vec<f64> {
    let mut w = vec![0.0; cfg.fft_size];
    let offset = (cfg.fft_size - cfg.win_length) / 2;
    let n = cfg.win_length as f64;
    for i in 0..cfg.win_length {
        w[offset + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos();
    }
    w
}

/// Frames produced for `num_samples` under centered analysis.
pub fn frame_count(num_samples: usize, cfg: &SignalConfig) -> usize {
    if num_samples == 0 {
        0
    } else {
        num_samples / cfg.hop_length + 1
    }
}

// Reflect without repeating the edge sample, bouncing as often as needed so
// signals shorter than the pad still have a defined extension.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

pub(crate) fn reflect_pad(samples: &[f64], pad: usize) -> Vec<f64> {
    let n = samples.len();
    (0..n + 2 * pad)
        .map(|j| samples[reflect_index(j as isize - pad as isize, n)])
        .collect()
}

/// Magnitudes of the frames of an already padded signal, starting at sample
/// `t * hop` with no further padding. Returns complex spectra.
pub(crate) fn stft_frames(
    padded: &[f64],
    num_frames: usize,
    window: &[f64],
    cfg: &SignalConfig,
    planner: &mut FftPlanner<f64>,
) -> Array2<Complex64> {
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.n_bins();
    let mut out = Array2::zeros((num_frames, n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for t in 0..num_frames {
        let start = t * cfg.hop_length;
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(padded[start + k] * window[k], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..n_bins {
            out[[t, b]] = buf[b];
        }
    }
    out
}

/// Hann-windowed, reflect-centered STFT magnitude, `T x (fft_size/2 + 1)` with
/// `T = floor(len / hop) + 1` (zero frames for an empty waveform).
pub fn stft_magnitude(wave: &Waveform, cfg: &SignalConfig) -> Result<Array2<f64>, DspError> {
    if wave.sample_rate != cfg.sample_rate {
        return Err(DspError::SampleRateMismatch {
            wave: wave.sample_rate,
            config: cfg.sample_rate,
        });
    }
    cfg.validate()?;
    let t = frame_count(wave.len(), cfg);
    if t == 0 {
        return Ok(Array2::zeros((0, cfg.n_bins())));
    }
    let padded = reflect_pad(&wave.samples, cfg.fft_size / 2);
    let window = hann_window(cfg);
    let mut planner = FftPlanner::new();
    let spec = stft_frames(&padded, t, &window, cfg, &mut planner);
    Ok(spec.mapv(|c| c.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_wave_gives_zero_matrix() {
        let cfg = SignalConfig::default();
        let m = stft_magnitude(&Waveform::silence(2400, 24_000), &cfg).unwrap();
        assert_eq!(m.dim(), (11, 1025));
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let cfg = SignalConfig::default();
        let samples = (0..24_000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 24_000.0).sin() * 0.5)
            .collect();
        let m = stft_magnitude(&Waveform::new(samples, 24_000), &cfg).unwrap();
        let expected = (1000.0 * cfg.fft_size as f64 / 24_000.0).round() as usize;
        assert_eq!(expected, 85);
        // Interior frames: no reflection within half an FFT of either edge.
        for t in 5..m.nrows() - 5 {
            let row = m.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            assert_eq!(argmax, expected, "frame {t}");
        }
    }

    #[test]
    fn rejects_wrong_sample_rate() {
        let cfg = SignalConfig::default();
        let err = stft_magnitude(&Waveform::silence(100, 16_000), &cfg).unwrap_err();
        assert!(matches!(err, DspError::SampleRateMismatch { wave: 16_000, .. }));
    }

    #[test]
    fn empty_wave_has_no_frames() {
        let cfg = SignalConfig::default();
        let m = stft_magnitude(&Waveform::silence(0, 24_000), &cfg).unwrap();
        assert_eq!(m.dim(), (0, 1025));
    }

    #[test]
    fn frame_count_law() {
        let cfg = SignalConfig::default();
        for n in [1usize, 239, 240, 241, 1000, 2400, 2401] {
            let m = stft_magnitude(&Waveform::silence(n, 24_000), &cfg).unwrap();
            assert_eq!(m.nrows(), n / 240 + 1);
        }
    }

    #[test]
    fn reflect_handles_short_signals() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0], 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
        assert_eq!(reflect_pad(&[5.0], 3), vec![5.0; 7]);
        // Bounces more than once when pad > len.
        assert_eq!(reflect_pad(&[1.0, 2.0], 3), vec![2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0]);
    }
}
