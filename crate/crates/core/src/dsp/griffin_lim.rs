use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::stft::{hann_window, stft_frames};
use super::{SignalConfig, Waveform};

const PEAK: f64 = 0.95;

/// Per-iteration consistency error `|| |STFT(x_k)| - target ||` (full-spectrum
/// Frobenius norm over the uncentered frame grid).
#[derive(Debug, Clone, Default)]
pub struct GriffinLimTrace {
    pub consistency: Vec<f64>,
}

struct Frames<'a> {
    cfg: &'a SignalConfig,
    window: Vec<f64>,
    // Sum of squared windows over the padded signal.
    norm: Vec<f64>,
    len: usize,
    n_frames: usize,
}

impl<'a> Frames<'a> {
    fn new(cfg: &'a SignalConfig, n_frames: usize) -> Self {
        let window = hann_window(cfg);
        let len = (n_frames.saturating_sub(1)) * cfg.hop_length + cfg.fft_size;
        let mut norm = vec![0.0; len];
        for t in 0..n_frames {
            for (k, w) in window.iter().enumerate() {
                norm[t * cfg.hop_length + k] += w * w;
            }
        }
        Self { cfg, window, norm, len, n_frames }
    }

    // Least-squares signal for a (half) spectrum per frame.
    fn synthesize(&self, spec: &Array2<Complex64>, planner: &mut FftPlanner<f64>) -> Vec<f64> {
        let n = self.cfg.fft_size;
        let half = n / 2;
        let ifft = planner.plan_fft_inverse(n);
        let mut out = vec![0.0; self.len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..self.n_frames {
            for k in 0..=half {
                buf[k] = spec[[t, k]];
            }
            for k in 1..half {
                buf[n - k] = spec[[t, k]].conj();
            }
            ifft.process(&mut buf);
            let start = t * self.cfg.hop_length;
            for k in 0..n {
                out[start + k] += self.window[k] * buf[k].re / n as f64;
            }
        }
        for (y, &d) in out.iter_mut().zip(self.norm.iter()) {
            *y = if d > 1e-10 { *y / d } else { 0.0 };
        }
        out
    }
}

fn consistency(target: &Array2<f64>, spec: &Array2<Complex64>) -> f64 {
    let last = target.ncols() - 1;
    let mut acc = 0.0;
    for ((t, k), &a) in target.indexed_iter() {
        let d = spec[[t, k]].norm() - a;
        let w = if k == 0 || k == last { 1.0 } else { 2.0 };
        acc += w * d * d;
    }
    acc.sqrt()
}

/// Griffin-Lim reconstruction from a `T x (fft_size/2 + 1)` magnitude target,
/// starting from seeded uniform random phase. Output has `T * hop_length`
/// samples, peak-normalized to 0.95.
pub fn griffin_lim(magnitude: &Array2<f64>, cfg: &SignalConfig, n_iters: usize, seed: u64) -> Waveform {
    griffin_lim_traced(magnitude, cfg, n_iters, seed).0
}

pub fn griffin_lim_traced(
    magnitude: &Array2<f64>,
    cfg: &SignalConfig,
    n_iters: usize,
    seed: u64,
) -> (Waveform, GriffinLimTrace) {
    let n_frames = magnitude.nrows();
    let out_len = n_frames * cfg.hop_length;
    let mut trace = GriffinLimTrace::default();
    if n_frames == 0 {
        return (Waveform::silence(0, cfg.sample_rate), trace);
    }
    assert_eq!(magnitude.ncols(), cfg.n_bins(), "magnitude width must be fft_size/2 + 1");

    let frames = Frames::new(cfg, n_frames);
    let mut planner = FftPlanner::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = magnitude.mapv(|a| Complex64::from_polar(a, rng.random::<f64>() * 2.0 * PI));

    let mut signal = frames.synthesize(&spec, &mut planner);
    for _ in 0..n_iters {
        let rebuilt = stft_frames(&signal, n_frames, &frames.window, cfg, &mut planner);
        trace.consistency.push(consistency(magnitude, &rebuilt));
        for ((s, r), &a) in spec.iter_mut().zip(rebuilt.iter()).zip(magnitude.iter()) {
            let norm = r.norm();
            *s = if norm > 0.0 { r * (a / norm) } else { Complex64::new(a, 0.0) };
        }
        signal = frames.synthesize(&spec, &mut planner);
    }

    let pad = cfg.fft_size / 2;
    let mut samples: Vec<f64> = signal[pad..pad + out_len].to_vec();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let gain = PEAK / peak;
        samples.iter_mut().for_each(|s| *s *= gain);
    }
    (Waveform::new(samples, cfg.sample_rate), trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft_magnitude;

    #[test]
    fn zero_magnitude_is_a_fixed_point() {
        let cfg = SignalConfig::default();
        let mag = Array2::zeros((7, cfg.n_bins()));
        let w = griffin_lim(&mag, &cfg, 5, 1);
        assert_eq!(w.len(), 7 * 240);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SignalConfig::default();
        let mag = Array2::from_shape_fn((6, cfg.n_bins()), |(t, k)| ((t * 7 + k) % 13) as f64 * 0.01);
        let a = griffin_lim(&mag, &cfg, 4, 9);
        let b = griffin_lim(&mag, &cfg, 4, 9);
        let c = griffin_lim(&mag, &cfg, 4, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.peak() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn tone_reconstruction_consistency_decreases() {
        let cfg = SignalConfig::default();
        let samples = (0..12_000)
            .map(|n| 0.5 * (2.0 * PI * 440.0 * n as f64 / 24_000.0).sin())
            .collect();
        let mag = stft_magnitude(&Waveform::new(samples, 24_000), &cfg).unwrap();
        let (_, trace) = griffin_lim_traced(&mag, &cfg, 20, 3);
        assert_eq!(trace.consistency.len(), 20);
        for w in trace.consistency.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }
}
