use serde::{Deserialize, Serialize};

use ndarray::Array2;

use super::ModelError;
use crate::corpus::Vocabs;
use crate::nn::Real;

/// Per-bin affine map between log-mel and the space the network predicts in:
/// `normalized = (mel - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MelNorm {
    pub fn identity(n_mels: usize) -> Self {
        Self { mean: vec![0.0; n_mels], std: vec![1.0; n_mels] }
    }

    /// Per-bin statistics over all frames; `std` is floored at `1e-3`.
    pub fn fit<'a, F: Real>(mels: impl IntoIterator<Item = &'a Array2<F>>, n_mels: usize) -> Self {
        let mut sum = vec![0.0f64; n_mels];
        let mut sq = vec![0.0f64; n_mels];
        let mut n = 0usize;
        for m in mels {
            for row in m.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v.as_f64();
                    sq[j] += v.as_f64() * v.as_f64();
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(n_mels);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-3)).collect();
        Self { mean, std }
    }

    pub fn normalize<F: Real>(&self, mel: &Array2<F>) -> Array2<F> {
        Array2::from_shape_fn(mel.dim(), |(i, j)| F::of((mel[[i, j]].as_f64() - self.mean[j]) / self.std[j]))
    }

    pub fn denormalize<F: Real>(&self, mel: &Array2<F>) -> Array2<F> {
        Array2::from_shape_fn(mel.dim(), |(i, j)| F::of(mel[[i, j]].as_f64() * self.std[j] + self.mean[j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_phones: usize,
    pub n_tones: usize,
    pub n_languages: usize,
    pub n_speakers: usize,
    pub n_emotions: usize,

    pub phone_dim: usize,
    pub tone_dim: usize,
    pub language_dim: usize,
    pub emotion_dim: usize,
    pub speaker_dim: usize,

    pub encoder_prenet: Vec<usize>,
    pub encoder_width: usize,
    pub cbhg_bank_size: usize,
    pub cbhg_bank_channels: usize,
    pub cbhg_highway_layers: usize,

    /// Output width of each bidirectional layer (both directions together).
    pub duration_width: usize,
    pub duration_layers: usize,
    pub duration_phone_dim: usize,
    pub duration_tone_dim: usize,
    pub duration_language_dim: usize,

    pub decoder_prenet: Vec<usize>,
    pub attention_depth: usize,
    pub attention_half_width: usize,
    pub decoder_width: usize,
    pub frames_per_step: usize,

    pub postnet_fc: Vec<usize>,
    pub postnet_width: usize,
    pub postnet_delay: usize,

    pub n_mels: usize,
    pub mel_norm: MelNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_phones: 25,
            n_tones: 9,
            n_languages: 2,
            n_speakers: 2,
            n_emotions: 4,
            phone_dim: 128,
            tone_dim: 16,
            language_dim: 8,
            emotion_dim: 16,
            speaker_dim: 64,
            encoder_prenet: vec![256, 256, 128],
            encoder_width: 128,
            cbhg_bank_size: 8,
            cbhg_bank_channels: 32,
            cbhg_highway_layers: 4,
            duration_width: 128,
            duration_layers: 2,
            duration_phone_dim: 64,
            duration_tone_dim: 16,
            duration_language_dim: 8,
            decoder_prenet: vec![256, 256],
            attention_depth: 128,
            attention_half_width: 10,
            decoder_width: 256,
            frames_per_step: 4,
            postnet_fc: vec![512, 256],
            postnet_width: 256,
            postnet_delay: 5,
            n_mels: 80,
            mel_norm: MelNorm::identity(80),
        }
    }
}

impl ModelConfig {
    /// Layer sizes of the original large-scale system: 512-unit duration
    /// layers, attention depth 512, CBHG width 512.
    pub fn paper_scale() -> Self {
        Self {
            encoder_prenet: vec![512, 512, 512],
            encoder_width: 512,
            cbhg_bank_size: 16,
            cbhg_bank_channels: 128,
            duration_width: 512,
            attention_depth: 512,
            ..Self::default()
        }
    }

    /// Very small widths for gradient checks and fast tests.
    pub fn tiny(frames_per_step: usize, width: usize) -> Self {
        Self {
            n_phones: 4,
            n_tones: 3,
            n_languages: 2,
            n_speakers: 2,
            n_emotions: 2,
            phone_dim: width,
            tone_dim: 2,
            language_dim: 2,
            emotion_dim: 2,
            speaker_dim: 3,
            encoder_prenet: vec![width; 3],
            encoder_width: width,
            cbhg_bank_size: 2,
            cbhg_bank_channels: 2,
            cbhg_highway_layers: 1,
            duration_width: 4,
            duration_layers: 1,
            duration_phone_dim: 3,
            duration_tone_dim: 2,
            duration_language_dim: 2,
            decoder_prenet: vec![width],
            attention_depth: width,
            attention_half_width: 2,
            decoder_width: width,
            frames_per_step,
            postnet_fc: vec![width],
            postnet_width: width,
            postnet_delay: 2,
            n_mels: 5,
            mel_norm: MelNorm::identity(5),
        }
    }

    pub fn with_vocabs(mut self, v: &Vocabs) -> Self {
        self.n_phones = v.phones.len();
        self.n_tones = v.tones.len();
        self.n_languages = v.languages.len();
        self.n_speakers = v.speakers.len();
        self.n_emotions = v.emotions.len();
        self
    }

    /// Width of one expanded frame row.
    pub fn expanded_width(&self) -> usize {
        self.encoder_width + self.speaker_dim + self.emotion_dim + self.language_dim + 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.frames_per_step == 0 {
            return bad("frames_per_step must be at least 1");
        }
        if self.attention_half_width == 0 {
            return bad("attention_half_width must be at least 1");
        }
        let widths = [
            self.n_phones,
            self.n_tones,
            self.n_languages,
            self.n_speakers,
            self.n_emotions,
            self.phone_dim,
            self.tone_dim,
            self.language_dim,
            self.emotion_dim,
            self.speaker_dim,
            self.encoder_width,
            self.cbhg_bank_size,
            self.cbhg_bank_channels,
            self.duration_width,
            self.duration_layers,
            self.duration_phone_dim,
            self.duration_tone_dim,
            self.duration_language_dim,
            self.attention_depth,
            self.decoder_width,
            self.postnet_width,
            self.n_mels,
        ];
        if widths.contains(&0) || self.encoder_prenet.contains(&0) || self.decoder_prenet.contains(&0) || self.postnet_fc.contains(&0) {
            return bad("all widths and vocab sizes must be positive");
        }
        if self.encoder_prenet.is_empty() || self.decoder_prenet.is_empty() || self.postnet_fc.is_empty() {
            return bad("prenet and postnet need at least one layer");
        }
        if !self.encoder_width.is_multiple_of(2) || !self.duration_width.is_multiple_of(2) {
            return bad("encoder_width and duration_width must be even");
        }
        if self.mel_norm.mean.len() != self.n_mels || self.mel_norm.std.len() != self.n_mels {
            return bad("mel_norm length differs from n_mels");
        }
        if self.mel_norm.std.iter().any(|s| !(*s > 0.0)) {
            return bad("mel_norm std must be positive");
        }
        Ok(())
    }
}
