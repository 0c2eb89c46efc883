use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::corpus::{Vocab, Vocabs};
use crate::dsp::SignalConfig;
use crate::model::ModelConfig;
use crate::nn::{FreezeSet, GroupName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerInit {
    /// Mean of the trained speaker rows.
    Mean,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub validation_interval: u64,
    pub max_steps: u64,
    pub seed: u64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub freeze: FreezeSet,
    /// Stop after this many evaluations without a new best.
    pub patience: Option<usize>,
    pub new_speaker_init: SpeakerInit,
    /// Worker threads the run was recorded with.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::average()
    }
}

impl TrainConfig {
    pub fn average() -> Self {
        Self {
            batch_size: 16,
            validation_interval: 100,
            max_steps: 2000,
            seed: 7,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            freeze: FreezeSet::none(),
            patience: None,
            new_speaker_init: SpeakerInit::Mean,
            threads: 1,
        }
    }

    pub fn adaptation(freeze: FreezeSet) -> Self {
        Self {
            batch_size: 2,
            validation_interval: 10,
            max_steps: 500,
            learning_rate: 3e-4,
            freeze,
            patience: Some(20),
            ..Self::average()
        }
    }

    pub fn validate(&self) -> Result<(), AdaptError> {
        if self.batch_size == 0 || self.validation_interval == 0 || self.max_steps == 0 {
            return Err(AdaptError::Config("batch_size, validation_interval and max_steps must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AdaptError::Config("learning_rate must be positive".into()));
        }
        if self.patience == Some(0) {
            return Err(AdaptError::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

/// The four nested freeze configurations compared for adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FreezeRung {
    #[serde(rename = "nothing")]
    Nothing,
    #[serde(rename = "+phone")]
    Phone,
    #[serde(rename = "+tone_lang")]
    ToneLang,
    #[serde(rename = "+encoder")]
    Encoder,
}

impl FreezeRung {
    pub const ALL: [FreezeRung; 4] = [FreezeRung::Nothing, FreezeRung::Phone, FreezeRung::ToneLang, FreezeRung::Encoder];

    pub fn name(self) -> &'static str {
        match self {
            FreezeRung::Nothing => "nothing",
            FreezeRung::Phone => "+phone",
            FreezeRung::ToneLang => "+tone_lang",
            FreezeRung::Encoder => "+encoder",
        }
    }

    pub fn freeze_set(self) -> FreezeSet {
        use GroupName::*;
        let groups: &[GroupName] = match self {
            FreezeRung::Nothing => &[],
            FreezeRung::Phone => &[PhoneEmbedding],
            FreezeRung::ToneLang => &[PhoneEmbedding, ToneStressEmbedding, LanguageEmbedding],
            FreezeRung::Encoder => {
                &[PhoneEmbedding, ToneStressEmbedding, LanguageEmbedding, EmotionEmbedding, Encoder]
            }
        };
        groups.iter().copied().collect()
    }
}

impl fmt::Display for FreezeRung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FreezeRung {
    type Err = AdaptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FreezeRung::ALL
            .into_iter()
            .find(|r| r.name() == s || r.name().trim_start_matches('+') == s)
            .ok_or_else(|| AdaptError::Config(format!("unknown freeze rung `{s}`")))
    }
}

/// Vocabulary names stored with a checkpoint so later data can be checked
/// against what the model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabNames {
    pub phones: Vec<String>,
    pub tones: Vec<String>,
    pub languages: Vec<String>,
    pub speakers: Vec<String>,
    pub emotions: Vec<String>,
}

impl VocabNames {
    pub fn from_vocabs(v: &Vocabs) -> Self {
        Self {
            phones: v.phones.names().to_vec(),
            tones: v.tones.names().to_vec(),
            languages: v.languages.names().to_vec(),
            speakers: v.speakers.names().to_vec(),
            emotions: v.emotions.names().to_vec(),
        }
    }

    pub fn to_vocabs(&self) -> Vocabs {
        Vocabs {
            phones: Vocab::new(self.phones.iter().cloned()),
            tones: Vocab::new(self.tones.iter().cloned()),
            languages: Vocab::new(self.languages.iter().cloned()),
            speakers: Vocab::new(self.speakers.iter().cloned()),
            emotions: Vocab::new(self.emotions.iter().cloned()),
        }
    }

    /// Token and emotion vocabularies must agree; speakers may differ.
    pub fn check_compatible(&self, v: &Vocabs) -> Result<(), AdaptError> {
        for (what, mine, theirs) in [
            ("phone", &self.phones, v.phones.names()),
            ("tone/stress", &self.tones, v.tones.names()),
            ("language", &self.languages, v.languages.names()),
            ("emotion", &self.emotions, v.emotions.names()),
        ] {
            if mine.as_slice() != theirs {
                return Err(AdaptError::Config(format!("{what} vocabulary differs from the checkpoint's")));
            }
        }
        Ok(())
    }
}

/// What a checkpoint's JSON config section holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub vocabs: VocabNames,
    /// Analysis settings of the training mels.
    #[serde(default)]
    pub signal: SignalConfig,
}

impl ModelSpec {
    pub fn from_json(v: &serde_json::Value) -> Result<Self, AdaptError> {
        serde_json::from_value(v.clone()).map_err(|e| AdaptError::Config(format!("checkpoint config: {e}")))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }
}
