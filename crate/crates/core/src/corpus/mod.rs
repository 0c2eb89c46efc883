//! Utterance data model, manifest files, the synthetic corpus generator, and
//! seeded train/valid splitting and batching.

mod batch;
mod manifest;
mod synth;

pub use batch::{batch_iterator, split_train_valid, BatchStream, Batches};
pub use manifest::{
    load_manifest, parse_request_line, parse_token, parse_tokens, write_manifest, Manifest, Vocab, Vocabs, MANIFEST_HEADER,
};
pub use synth::{make_synthetic_corpus, render_utterance, EmotionStyle, SynthSpec, Timbre};

use std::path::PathBuf;

use crate::dsp::DspError;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown {vocab} `{name}`")]
    Vocab { line: usize, vocab: &'static str, name: String },
    #[error("utterance {utt_id}: durations sum to {durations} frames but the mel has {frames}")]
    DurationMismatch { utt_id: String, durations: u64, frames: usize },
    #[error("invalid corpus: {0}")]
    Invalid(String),
    #[error("{0}")]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Phoneme,
    ProsodicBoundary,
}

/// One input symbol. Boundary tokens carry the reserved boundary phone, the
/// reserved `none` tone/stress and language 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinguisticToken {
    pub kind: TokenKind,
    pub phone_id: usize,
    pub tone_stress_id: usize,
    pub language_id: usize,
}

impl LinguisticToken {
    pub fn phoneme(phone_id: usize, tone_stress_id: usize, language_id: usize) -> Self {
        Self { kind: TokenKind::Phoneme, phone_id, tone_stress_id, language_id }
    }

    pub fn boundary(vocabs: &Vocabs) -> Self {
        Self {
            kind: TokenKind::ProsodicBoundary,
            phone_id: vocabs.boundary_phone(),
            tone_stress_id: vocabs.none_tone(),
            language_id: 0,
        }
    }

    pub fn is_boundary(&self) -> bool {
        self.kind == TokenKind::ProsodicBoundary
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: usize,
    pub emotion_id: usize,
    pub tokens: Vec<LinguisticToken>,
    /// Frames per token; zero exactly for boundary tokens.
    pub durations: Vec<u32>,
    /// Relative to the manifest directory unless absolute.
    pub mel_path: PathBuf,
    pub wave_path: Option<PathBuf>,
}

impl Utterance {
    pub fn num_frames(&self) -> u64 {
        self.durations.iter().map(|&d| d as u64).sum()
    }

    /// Durations of phoneme tokens only, in order.
    pub fn phoneme_durations(&self) -> Vec<u32> {
        self.tokens
            .iter()
            .zip(&self.durations)
            .filter(|(t, _)| !t.is_boundary())
            .map(|(_, &d)| d)
            .collect()
    }

    /// Language ids of phoneme tokens only.
    pub fn phoneme_languages(&self) -> Vec<usize> {
        self.tokens.iter().filter(|t| !t.is_boundary()).map(|t| t.language_id).collect()
    }

    pub fn num_phonemes(&self) -> usize {
        self.tokens.iter().filter(|t| !t.is_boundary()).count()
    }

    /// Checks the token/duration pairing rules.
    pub fn check_durations(&self) -> Result<(), String> {
        if self.tokens.len() != self.durations.len() {
            return Err(format!("{} tokens but {} durations", self.tokens.len(), self.durations.len()));
        }
        for (i, (t, &d)) in self.tokens.iter().zip(&self.durations).enumerate() {
            match (t.is_boundary(), d) {
                (true, 0) | (false, 1..) => {}
                (true, _) => return Err(format!("boundary token {i} has duration {d}, expected 0")),
                (false, _) => return Err(format!("phoneme token {i} has duration 0")),
            }
        }
        if self.num_phonemes() == 0 {
            return Err("no phoneme tokens".into());
        }
        Ok(())
    }
}
