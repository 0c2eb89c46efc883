use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;

use super::network::{phoneme_indices, round_durations, skip_states};
use super::{AcousticModel, ModelError};
use crate::corpus::LinguisticToken;
use crate::nn::{ParamStore, Real, Tape};

#[derive(Debug, Clone)]
pub struct SynthRequest<'a> {
    pub tokens: &'a [LinguisticToken],
    pub speaker: usize,
    pub emotion: usize,
    /// Frames per phoneme token; predicted when absent.
    pub durations: Option<&'a [u32]>,
}

/// Wall-clock seconds per stage of one synthesis call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub encode: f64,
    pub duration: f64,
    pub expand: f64,
    pub decode: f64,
    pub postnet: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.encode + self.duration + self.expand + self.decode + self.postnet
    }

    pub fn add(&mut self, o: &StageTimes) {
        self.encode += o.encode;
        self.duration += o.duration;
        self.expand += o.expand;
        self.decode += o.decode;
        self.postnet += o.postnet;
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis<F> {
    /// Refined log-mel, denormalized, `sum(durations) x n_mels`.
    pub mel: Array2<F>,
    pub durations: Vec<u32>,
    pub predicted: Option<Vec<f64>>,
    pub decoder_steps: usize,
    /// Post-net pushes that produced no frame before the first emission.
    pub postnet_wait: usize,
    pub times: StageTimes,
}

impl AcousticModel {
    /// Tokens to refined mel: encode, skip boundary states, durations
    /// (supplied or predicted and rounded), expand, free-running decode,
    /// streaming post-net.
    pub fn synthesize<F: Real>(&self, params: &ParamStore<F>, req: &SynthRequest<'_>) -> Result<Synthesis<F>, ModelError> {
        self.check_tokens(req.tokens)?;
        let phonemes = phoneme_indices(req.tokens);
        if phonemes.is_empty() {
            return Err(ModelError::Empty("phoneme tokens"));
        }
        let mut times = StageTimes::default();

        let clock = Instant::now();
        let states = self.encode(params, req.tokens)?;
        let states = skip_states(&states, req.tokens);
        times.encode = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let (durations, predicted) = match req.durations {
            Some(d) => {
                if d.len() != phonemes.len() {
                    return Err(ModelError::LengthMismatch { what: "durations", expected: phonemes.len(), got: d.len() });
                }
                (d.to_vec(), None)
            }
            None => {
                let p = self.predict_durations(params, req.tokens)?;
                (round_durations(&p), Some(p))
            }
        };
        times.duration = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let languages: Vec<usize> = phonemes.iter().map(|&i| req.tokens[i].language_id).collect();
        let expanded = self.expand_states(params, &states, &durations, req.speaker, req.emotion, &languages)?;
        times.expand = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let mut tape = Tape::new(params);
        let e = tape.constant(expanded);
        let coarse_var = self.decode_var(&mut tape, e, None, None);
        let coarse = tape.value(coarse_var).to_owned();
        drop(tape);
        let decoder_steps = super::network::decoder_steps(coarse.nrows(), self.config.frames_per_step);
        times.decode = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let (refined, state) = self.postnet_stream_all(params, &coarse)?;
        times.postnet = clock.elapsed().as_secs_f64();

        Ok(Synthesis {
            mel: self.config.mel_norm.denormalize(&refined),
            durations,
            predicted,
            decoder_steps,
            postnet_wait: state.initial_wait(),
            times,
        })
    }
}
