//! Real-time-factor measurement of the synthesis path.

use std::time::Instant;

use serde::Serialize;

use crate::dsp::{vocode, DspError, MelSpectrogram, SignalConfig};
use crate::model::{AcousticModel, ModelError, StageTimes, SynthRequest, Synthesis};
use crate::nn::ParamStore;

/// Inference speed quoted for the full-size model on two CPU cores; kept
/// in reports for comparison only.
pub const REFERENCE_RTF: f64 = 17.0;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("no requests to benchmark")]
    Empty,
    #[error("threads must be at least 1")]
    Threads,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub threads: usize,
    /// Griffin-Lim iterations for the separately timed vocoder pass; 0 skips it.
    pub griffin_lim_iters: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { threads: 2, griffin_lim_iters: 32, seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub utterances: usize,
    pub threads: usize,
    pub frames: usize,
    pub audio_seconds: f64,
    /// Wall clock of the acoustic model over all requests.
    pub compute_seconds: f64,
    pub rtf: f64,
    /// Per-stage seconds summed over requests.
    pub stages: StageTimes,
    /// Frames between the start of decoding and the first refined frame:
    /// the observed post-net wait plus one decoder step.
    pub first_frame_latency_frames: usize,
    pub postnet_delay: usize,
    pub frames_per_step: usize,
    pub griffin_lim_seconds: Option<f64>,
    pub griffin_lim_rtf: Option<f64>,
    pub reference_rtf: f64,
}

fn synth_chunk(
    model: &AcousticModel,
    params: &ParamStore<f32>,
    chunk: &[SynthRequest<'_>],
) -> Result<Vec<Synthesis<f32>>, ModelError> {
    chunk.iter().map(|r| model.synthesize(params, r)).collect()
}

pub fn bench_rtf(
    model: &AcousticModel,
    params: &ParamStore<f32>,
    requests: &[SynthRequest<'_>],
    signal: &SignalConfig,
    opts: &BenchOptions,
) -> Result<BenchReport, BenchError> {
    if requests.is_empty() {
        return Err(BenchError::Empty);
    }
    if opts.threads == 0 {
        return Err(BenchError::Threads);
    }
    let per = requests.len().div_ceil(opts.threads);
    let clock = Instant::now();
    let results: Vec<Synthesis<f32>> = std::thread::scope(|scope| {
        let handles: Vec<_> = requests
            .chunks(per)
            .map(|chunk| scope.spawn(move || synth_chunk(model, params, chunk)))
            .collect();
        let mut all = Vec::with_capacity(requests.len());
        for h in handles {
            all.extend(h.join().expect("synthesis worker panicked")?);
        }
        Ok::<_, ModelError>(all)
    })?;
    let compute_seconds = clock.elapsed().as_secs_f64();

    let r = model.config.frames_per_step;
    let waits: Vec<usize> = results.iter().map(|s| s.postnet_wait).collect();
    let wait = waits[0];
    if waits.iter().any(|&w| w != wait) {
        return Err(ModelError::Config(format!("post-net wait varies across requests: {waits:?}")).into());
    }
    let mut stages = StageTimes::default();
    results.iter().for_each(|s| stages.add(&s.times));
    let frames: usize = results.iter().map(|s| s.mel.nrows()).sum();
    let audio_seconds = frames as f64 * signal.hop_length as f64 / signal.sample_rate as f64;

    let griffin_lim_seconds = if opts.griffin_lim_iters > 0 {
        let clock = Instant::now();
        for s in &results {
            let mel = MelSpectrogram::new(s.mel.mapv(f64::from), *signal);
            vocode(&mel, opts.griffin_lim_iters, opts.seed)?;
        }
        Some(clock.elapsed().as_secs_f64())
    } else {
        None
    };

    Ok(BenchReport {
        utterances: results.len(),
        threads: opts.threads,
        frames,
        audio_seconds,
        compute_seconds,
        rtf: audio_seconds / compute_seconds.max(1e-12),
        stages,
        first_frame_latency_frames: wait + r,
        postnet_delay: model.config.postnet_delay,
        frames_per_step: r,
        griffin_lim_seconds,
        griffin_lim_rtf: griffin_lim_seconds.map(|g| audio_seconds / g.max(1e-12)),
        reference_rtf: REFERENCE_RTF,
    })
}
