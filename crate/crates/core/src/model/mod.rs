//! Duration-informed acoustic model.
//!
//! Tokens go through a speaker-independent encoder, boundary states are
//! skipped, each phoneme state is repeated for its duration and joined with
//! speaker, emotion and language embeddings plus a relative position, and an
//! autoregressive decoder emits `r` frames per step under windowed attention.
//! A recurrent post-net with `D` frames of lookahead refines the result and
//! can run as a stream.

mod check;
mod config;
mod infer;
mod loss;
mod network;
mod stream;

#[cfg(test)]
mod tests;

pub use check::{end_to_end_grad_check, tiny_case};
pub use config::{MelNorm, ModelConfig};
pub use infer::{StageTimes, SynthRequest, Synthesis};
pub use loss::{LossBreakdown, Sample, DURATION_WEIGHT};
pub use network::{
    decoder_steps, expansion_plan, phoneme_indices, round_durations, skip_states, AcousticModel, DecodeTrace,
};
pub use stream::StreamState;

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what} id {id} at position {index} is outside a vocabulary of {size}")]
    IdOutOfRange { what: &'static str, index: usize, id: usize, size: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("attention center {center} outside {frames} frames")]
    CenterOutOfRange { center: usize, frames: usize },
    #[error("post-net stream already flushed")]
    StreamClosed,
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
