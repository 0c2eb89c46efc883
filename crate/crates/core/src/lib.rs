//! Duration-informed text-to-speech: a seeded synthetic corpus, the mel
//! signal path with Griffin-Lim, a small reverse-mode autodiff core, the
//! acoustic model with a streaming post-net, and speaker adaptation under
//! frozen parameter groups.

pub mod adaptation;
pub mod bench;
pub mod corpus;
pub mod dsp;
pub mod model;
pub mod nn;
pub mod selftest;
