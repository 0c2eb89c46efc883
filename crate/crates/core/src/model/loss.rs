use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::phoneme_indices;
use super::{AcousticModel, ModelError};
use crate::corpus::{LinguisticToken, Utterance};
use crate::nn::{Grads, ParamStore, Real, Tape, Var};

/// Weight of the log-duration term in the total loss.
pub const DURATION_WEIGHT: f64 = 0.1;

/// One training example in model space.
#[derive(Debug, Clone)]
pub struct Sample<F> {
    pub tokens: Vec<LinguisticToken>,
    /// Frames per phoneme token.
    pub durations: Vec<u32>,
    pub speaker: usize,
    pub emotion: usize,
    pub languages: Vec<usize>,
    /// Normalized target mel, `sum(durations) x n_mels`.
    pub target: Array2<F>,
}

impl<F: Real> Sample<F> {
    /// `mel` is the raw log-mel of `utt`; `speaker` overrides the record's id.
    pub fn from_utterance(model: &AcousticModel, utt: &Utterance, mel: &Array2<F>, speaker: Option<usize>) -> Self {
        Sample {
            tokens: utt.tokens.clone(),
            durations: utt.phoneme_durations(),
            speaker: speaker.unwrap_or(utt.speaker_id),
            emotion: utt.emotion_id,
            languages: utt.phoneme_languages(),
            target: model.config.mel_norm.normalize(mel),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coarse_l1: f64,
    pub refined_l1: f64,
    pub duration_l2: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, o: &LossBreakdown, w: f64) {
        self.coarse_l1 += w * o.coarse_l1;
        self.refined_l1 += w * o.refined_l1;
        self.duration_l2 += w * o.duration_l2;
        self.total += w * o.total;
    }

    pub fn is_finite(&self) -> bool {
        [self.coarse_l1, self.refined_l1, self.duration_l2, self.total].iter().all(|v| v.is_finite())
    }
}

impl AcousticModel {
    /// Teacher-forced forward pass for one sample. Returns the total loss
    /// node and its breakdown.
    pub fn loss_var<F: Real>(&self, tape: &mut Tape<'_, F>, s: &Sample<F>) -> (Var, LossBreakdown) {
        let enc = self.encode_var(tape, &s.tokens);
        let enc = tape.gather(enc, &phoneme_indices(&s.tokens));
        let expanded = self.expand_var(tape, enc, &s.durations, s.speaker, s.emotion, &s.languages);
        let coarse = self.decode_var(tape, expanded, Some(&s.target), None);
        let refined = self.postnet_var(tape, coarse);
        let target = tape.constant(s.target.clone());
        let l_coarse = tape.mean_abs_diff(coarse, target);
        let l_refined = tape.mean_abs_diff(refined, target);

        let dur = self.duration_var(tape, &s.tokens);
        let dur_target = Array2::from_shape_fn((s.durations.len(), 1), |(i, _)| F::of((s.durations[i] as f64).ln_1p()));
        let dur_target = tape.constant(dur_target);
        let l_dur = tape.mean_sq_diff(dur, dur_target);

        let mel = tape.add(l_coarse, l_refined);
        let weighted = tape.scale(l_dur, DURATION_WEIGHT);
        let total = tape.add(mel, weighted);
        let b = LossBreakdown {
            coarse_l1: tape.scalar(l_coarse).as_f64(),
            refined_l1: tape.scalar(l_refined).as_f64(),
            duration_l2: tape.scalar(l_dur).as_f64(),
            total: tape.scalar(total).as_f64(),
        };
        (total, b)
    }

    fn check_sample<F: Real>(&self, s: &Sample<F>) -> Result<(), ModelError> {
        self.check_tokens(&s.tokens)?;
        let n = phoneme_indices(&s.tokens).len();
        if n == 0 {
            return Err(ModelError::Empty("phoneme tokens"));
        }
        if s.durations.len() != n || s.languages.len() != n {
            return Err(ModelError::LengthMismatch { what: "phoneme durations", expected: n, got: s.durations.len() });
        }
        let frames: usize = s.durations.iter().map(|&d| d as usize).sum();
        if s.target.dim() != (frames, self.config.n_mels) {
            return Err(ModelError::LengthMismatch { what: "target frames", expected: frames, got: s.target.nrows() });
        }
        if s.durations.contains(&0) {
            return Err(ModelError::Config("phoneme with zero duration".into()));
        }
        if s.speaker >= self.config.n_speakers || s.emotion >= self.config.n_emotions {
            return Err(ModelError::IdOutOfRange { what: "speaker/emotion", index: 0, id: s.speaker.max(s.emotion), size: self.config.n_speakers });
        }
        Ok(())
    }

    /// Refined mel of a teacher-forced pass, denormalized to log-mel.
    pub fn teacher_forced<F: Real>(&self, params: &ParamStore<F>, s: &Sample<F>) -> Result<Array2<F>, ModelError> {
        self.check_sample(s)?;
        let mut tape = Tape::new(params);
        let enc = self.encode_var(&mut tape, &s.tokens);
        let enc = tape.gather(enc, &phoneme_indices(&s.tokens));
        let expanded = self.expand_var(&mut tape, enc, &s.durations, s.speaker, s.emotion, &s.languages);
        let coarse = self.decode_var(&mut tape, expanded, Some(&s.target), None);
        let refined = self.postnet_var(&mut tape, coarse);
        Ok(self.config.mel_norm.denormalize(&tape.value(refined).to_owned()))
    }

    /// Mean loss over `batch`, with gradients of that mean when requested.
    pub fn compute_loss<F: Real>(
        &self,
        params: &ParamStore<F>,
        batch: &[Sample<F>],
        with_grads: bool,
    ) -> Result<(LossBreakdown, Option<Grads<F>>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Empty("batch"));
        }
        let w = 1.0 / batch.len() as f64;
        let mut sum = LossBreakdown::default();
        let mut grads = with_grads.then(|| Grads::empty(params.len()));
        for s in batch {
            self.check_sample(s)?;
            let mut tape = Tape::new(params);
            let (total, b) = self.loss_var(&mut tape, s);
            sum.accumulate(&b, w);
            if let Some(g) = grads.as_mut() {
                tape.backward_into(total, g);
            }
        }
        if let Some(g) = grads.as_mut() {
            g.scale(F::of(w));
        }
        Ok((sum, grads))
    }
}
