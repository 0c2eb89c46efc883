//! Deterministic synthetic multi-speaker corpus.
//!
//! Each phoneme is a segment of exactly `duration · hop` samples: three
//! harmonics of a speaker- and tone-dependent pitch plus a narrow formant
//! band whose centre depends on the phone id, under a per-phoneme amplitude
//! window. Phases run continuously across segments.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, Manifest, Vocab, Vocabs, BOUNDARY, NONE_TONE};
use super::{CorpusError, LinguisticToken, Utterance};
use crate::dsp::{self, SignalConfig, Waveform};

pub const EMOTIONS: [&str; 4] = ["neutral", "anger", "happiness", "sadness"];
const TONES: [&str; 5] = ["t1", "t2", "t3", "t4", "t5"];
const STRESSES: [&str; 3] = ["s0", "s1", "s2"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timbre {
    pub base_pitch_hz: f64,
    pub formant_offset_hz: f64,
    /// Exponent of the `sin` amplitude window; larger is more peaked.
    pub envelope_shape: f64,
}

impl Timbre {
    /// Fixed per-index preset so speakers stay distinguishable without a
    /// table in the config.
    pub fn preset(speaker: usize) -> Self {
        Self {
            base_pitch_hz: 95.0 + 29.0 * ((speaker * 7) % 11) as f64,
            formant_offset_hz: -150.0 + 75.0 * ((speaker * 3) % 5) as f64,
            envelope_shape: 0.5 + 0.75 * (speaker % 4) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionStyle {
    pub pitch_scale: f64,
    /// Multiplies scheduled phoneme durations.
    pub rate_scale: f64,
}

impl EmotionStyle {
    pub fn for_emotion(name: &str) -> Self {
        let (pitch_scale, rate_scale) = match name {
            "anger" => (1.3, 0.85),
            "happiness" => (1.2, 0.9),
            "sadness" => (0.85, 1.2),
            _ => (1.0, 1.0),
        };
        Self { pitch_scale, rate_scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_speakers: usize,
    /// Index of the first generated speaker; picks timbre presets and names,
    /// so held-out speakers can be generated separately.
    pub first_speaker: usize,
    pub n_utterances_per_speaker: usize,
    /// Number of phones excluding the boundary symbol.
    pub phone_inventory_size: usize,
    pub seed: u64,
    /// Inclusive range of frames per phoneme before the emotion rate scale.
    pub duration_range: (u32, u32),
    pub phonemes_per_utterance: (usize, usize),
    pub boundary_probability: f64,
    /// Overrides the presets, indexed from `first_speaker`'s position.
    pub timbres: Option<Vec<Timbre>>,
    /// Emotion names, assigned round-robin over each speaker's utterances.
    pub emotions_used: Vec<String>,
    pub signal: SignalConfig,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 4,
            first_speaker: 0,
            n_utterances_per_speaker: 50,
            phone_inventory_size: 24,
            seed: 7,
            duration_range: (3, 8),
            phonemes_per_utterance: (4, 7),
            boundary_probability: 0.25,
            timbres: None,
            emotions_used: vec!["neutral".into()],
            signal: SignalConfig::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Invalid(m.to_string()));
        if self.n_speakers == 0 || self.n_utterances_per_speaker == 0 {
            return bad("need at least one speaker and one utterance per speaker");
        }
        if self.phone_inventory_size < 2 {
            return bad("phone_inventory_size must be at least 2");
        }
        let (lo, hi) = self.duration_range;
        if lo == 0 || lo > hi {
            return bad("duration_range must satisfy 1 <= lo <= hi");
        }
        let (plo, phi) = self.phonemes_per_utterance;
        if plo == 0 || plo > phi {
            return bad("phonemes_per_utterance must satisfy 1 <= lo <= hi");
        }
        if !(0.0..1.0).contains(&self.boundary_probability) {
            return bad("boundary_probability must be in [0, 1)");
        }
        if let Some(t) = &self.timbres {
            if t.len() < self.n_speakers {
                return bad("fewer timbres than speakers");
            }
        }
        if self.emotions_used.is_empty() {
            return bad("emotions_used is empty");
        }
        if let Some(e) = self.emotions_used.iter().find(|e| !EMOTIONS.contains(&e.as_str())) {
            return Err(CorpusError::Invalid(format!("unknown emotion `{e}`")));
        }
        self.signal.validate()?;
        Ok(())
    }

    pub fn timbre(&self, local: usize) -> Timbre {
        match &self.timbres {
            Some(t) => t[local],
            None => Timbre::preset(self.first_speaker + local),
        }
    }

    pub fn vocabs(&self) -> Vocabs {
        let phones = std::iter::once(BOUNDARY.to_string()).chain((1..=self.phone_inventory_size).map(|p| format!("p{p}")));
        let tones = std::iter::once(NONE_TONE).chain(TONES).chain(STRESSES);
        let speakers = (0..self.n_speakers).map(|s| format!("spk{}", self.first_speaker + s));
        Vocabs {
            phones: Vocab::new(phones),
            tones: Vocab::new(tones),
            languages: Vocab::new(["zh", "en"]),
            speakers: Vocab::new(speakers),
            emotions: Vocab::new(EMOTIONS),
        }
    }
}

/// Renders one utterance. `durations` are frames per token; the result has
/// `sum(durations) · hop − hop / 2` samples, which makes the analysed mel
/// exactly `sum(durations)` frames long.
pub fn render_utterance(
    tokens: &[LinguisticToken],
    durations: &[u32],
    vocabs: &Vocabs,
    timbre: Timbre,
    style: EmotionStyle,
    signal: &SignalConfig,
) -> Waveform {
    let hop = signal.hop_length;
    let sr = signal.sample_rate as f64;
    let total: usize = durations.iter().map(|&d| d as usize).sum::<usize>() * hop;
    let mut samples = Vec::with_capacity(total);
    let mut phase = [0.0f64; 3];
    let mut formant_phase = [0.0f64; 3];
    for (tok, &d) in tokens.iter().zip(durations) {
        if tok.is_boundary() || d == 0 {
            continue;
        }
        let n = d as usize * hop;
        let tone = vocabs.tones.name(tok.tone_stress_id).unwrap_or(NONE_TONE);
        let (gain, contour): (f64, fn(f64) -> f64) = match tone {
            "t1" => (1.0, |_| 1.1),
            "t2" => (1.0, |u| 0.9 + 0.3 * u),
            "t3" => (0.9, |u| 0.95 - 0.25 * (PI * u).sin()),
            "t4" => (1.0, |u| 1.2 - 0.4 * u),
            "t5" => (0.8, |_| 0.9),
            "s1" => (1.15, |u| 1.05 - 0.05 * u),
            "s2" => (1.0, |_| 1.0),
            _ => (0.85, |_| 0.97),
        };
        let formant = 400.0 + 170.0 * (tok.phone_id as f64 - 1.0) + timbre.formant_offset_hz;
        for k in 0..n {
            let u = (k as f64 + 0.5) / n as f64;
            let f0 = timbre.base_pitch_hz * style.pitch_scale * contour(u);
            let env = 0.35 + 0.65 * (PI * u).sin().powf(timbre.envelope_shape);
            let mut s = 0.0;
            for (h, (ph, amp)) in phase.iter_mut().zip([0.3, 0.15, 0.08]).enumerate() {
                *ph = (*ph + 2.0 * PI * f0 * (h + 1) as f64 / sr) % (2.0 * PI);
                s += amp * ph.sin();
            }
            for (ph, df) in formant_phase.iter_mut().zip([-60.0, 0.0, 60.0]) {
                *ph = (*ph + 2.0 * PI * (formant + df) / sr) % (2.0 * PI);
                s += 0.12 * ph.sin();
            }
            samples.push(gain * env * s);
        }
    }
    samples.truncate(total.saturating_sub(hop / 2));
    Waveform::new(samples, signal.sample_rate)
}

fn speaker_rng(seed: u64, speaker: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (speaker as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn draw_tokens(rng: &mut ChaCha8Rng, spec: &SynthSpec, v: &Vocabs, scale: f64) -> (Vec<LinguisticToken>, Vec<u32>) {
    let n_phones = rng.random_range(spec.phonemes_per_utterance.0..=spec.phonemes_per_utterance.1);
    let half = spec.phone_inventory_size / 2;
    let mut tokens = Vec::new();
    let mut durations = Vec::new();
    for i in 0..n_phones {
        if i > 0 && rng.random_bool(spec.boundary_probability) {
            tokens.push(LinguisticToken::boundary(v));
            durations.push(0);
        }
        let phone = rng.random_range(1..=spec.phone_inventory_size);
        let (lang, tone) = if phone <= half {
            ("zh", TONES[rng.random_range(0..TONES.len())])
        } else {
            ("en", STRESSES[rng.random_range(0..STRESSES.len())])
        };
        tokens.push(LinguisticToken::phoneme(phone, v.tones.id(tone).unwrap(), v.languages.id(lang).unwrap()));
        let d = rng.random_range(spec.duration_range.0..=spec.duration_range.1) as f64 * scale;
        durations.push((d.round() as u32).max(1));
    }
    (tokens, durations)
}

/// Generates `wavs/`, `mels/`, `manifest.tsv` and the vocab files under
/// `out_dir`. The output bytes depend only on `spec`.
pub fn make_synthetic_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest, CorpusError> {
    spec.validate()?;
    fs::create_dir_all(out_dir.join("wavs"))?;
    fs::create_dir_all(out_dir.join("mels"))?;
    let vocabs = spec.vocabs();
    let mut records = Vec::new();
    for local in 0..spec.n_speakers {
        let global = spec.first_speaker + local;
        let mut rng = speaker_rng(spec.seed, global);
        let timbre = spec.timbre(local);
        for i in 0..spec.n_utterances_per_speaker {
            let emotion = &spec.emotions_used[i % spec.emotions_used.len()];
            let style = EmotionStyle::for_emotion(emotion);
            let (tokens, durations) = draw_tokens(&mut rng, spec, &vocabs, style.rate_scale);
            let wave = render_utterance(&tokens, &durations, &vocabs, timbre, style, &spec.signal);
            let wave = Waveform::new(dsp::io::quantize_pcm16(&wave.samples), wave.sample_rate);
            let mel = dsp::wave_to_mel(&wave, &spec.signal)?;
            let utt_id = format!("spk{global}_{emotion}_{i:04}");
            let wav_rel = PathBuf::from("wavs").join(format!("{utt_id}.wav"));
            let mel_rel = PathBuf::from("mels").join(format!("{utt_id}.mel"));
            dsp::io::write_wav(&out_dir.join(&wav_rel), &wave)?;
            dsp::io::write_mel(&out_dir.join(&mel_rel), &mel)?;
            let utt = Utterance {
                utt_id,
                speaker_id: local,
                emotion_id: vocabs.emotions.id(emotion).unwrap(),
                tokens,
                durations,
                mel_path: mel_rel,
                wave_path: Some(wav_rel),
            };
            debug_assert_eq!(utt.num_frames() as usize, mel.num_frames());
            records.push(utt);
        }
    }
    let manifest = Manifest { root: out_dir.to_path_buf(), records, vocabs: Arc::new(vocabs), signal: spec.signal };
    write_manifest(&manifest, &out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
