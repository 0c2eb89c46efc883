//! The acoustic model: content encoder, duration model, frame expansion,
//! windowed-attention decoder and delayed post-net.

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::corpus::LinguisticToken;
use crate::nn::layers::{
    Activation, BiLstm, Builder, Cbhg, CbhgSpec, Embedding, Linear, Lstm, Mlp, ResidualLstm, WindowedAttention,
};
use crate::nn::{GroupName, ParamStore, Real, Tape, Var};

/// Layer handles into a [`ParamStore`]. The same config always produces the
/// same parameter names, shapes and order.
#[derive(Debug, Clone)]
pub struct AcousticModel {
    pub config: ModelConfig,
    phone: Embedding,
    tone: Embedding,
    language: Embedding,
    emotion: Embedding,
    speaker: Embedding,
    enc_prenet: Mlp,
    cbhg: Cbhg,
    dur_phone: Embedding,
    dur_tone: Embedding,
    dur_language: Embedding,
    dur_layers: Vec<BiLstm>,
    dur_out: Linear,
    dec_prenet: Mlp,
    attention: WindowedAttention,
    dec_in: Linear,
    dec_lstm1: ResidualLstm,
    dec_lstm2: Lstm,
    dec_out: Linear,
    post_fc: Mlp,
    post_lstm: Lstm,
    post_out: Linear,
}

/// Frame-level decoder output plus what the step loop did.
#[derive(Debug, Clone)]
pub struct DecodeTrace<F> {
    pub coarse: Array2<F>,
    pub steps: usize,
    /// Per step: first window row and the window's weights.
    pub attention: Vec<(usize, Vec<F>)>,
}

/// Indices of phoneme-kind tokens, in order.
pub fn phoneme_indices(tokens: &[LinguisticToken]) -> Vec<usize> {
    tokens.iter().enumerate().filter(|(_, t)| !t.is_boundary()).map(|(i, _)| i).collect()
}

/// Drops the rows at prosodic-boundary positions.
pub fn skip_states<F: Real>(states: &Array2<F>, tokens: &[LinguisticToken]) -> Array2<F> {
    assert_eq!(states.nrows(), tokens.len(), "one state per token");
    states.select(ndarray::Axis(0), &phoneme_indices(tokens))
}

/// Round half up, then at least one frame.
pub fn round_durations(d: &[f64]) -> Vec<u32> {
    d.iter().map(|&x| ((x + 0.5).floor().max(1.0)) as u32).collect()
}

/// Phoneme index and relative position `(i + 1) / d` of every frame.
pub fn expansion_plan(durations: &[u32]) -> (Vec<usize>, Vec<f64>) {
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    let mut block = Vec::with_capacity(total);
    let mut pos = Vec::with_capacity(total);
    for (j, &d) in durations.iter().enumerate() {
        for i in 0..d {
            block.push(j);
            pos.push((i + 1) as f64 / d as f64);
        }
    }
    (block, pos)
}

pub fn decoder_steps(frames: usize, r: usize) -> usize {
    frames.div_ceil(r)
}

impl AcousticModel {
    fn build<F: Real>(config: &ModelConfig, store: &mut ParamStore<F>, rng: &mut ChaCha8Rng) -> Self {
        let c = config;
        let mut b = Builder::new(store, rng, GroupName::PhoneEmbedding);
        let phone = Embedding::new(&mut b, "phone_embedding", c.n_phones, c.phone_dim);
        let tone = Embedding::new(b.in_group(GroupName::ToneStressEmbedding), "tone_embedding", c.n_tones, c.tone_dim);
        let language =
            Embedding::new(b.in_group(GroupName::LanguageEmbedding), "language_embedding", c.n_languages, c.language_dim);
        let emotion =
            Embedding::new(b.in_group(GroupName::EmotionEmbedding), "emotion_embedding", c.n_emotions, c.emotion_dim);
        let speaker =
            Embedding::new(b.in_group(GroupName::SpeakerEmbedding), "speaker_embedding", c.n_speakers, c.speaker_dim);

        b.in_group(GroupName::Encoder);
        let enc_prenet = Mlp::new(&mut b, "encoder.prenet", c.phone_dim + c.tone_dim, &c.encoder_prenet, Activation::Relu);
        let cbhg = Cbhg::new(
            &mut b,
            "encoder.cbhg",
            CbhgSpec {
                input: enc_prenet.output(),
                width: c.encoder_width,
                bank_size: c.cbhg_bank_size,
                bank_channels: c.cbhg_bank_channels,
                highway_layers: c.cbhg_highway_layers,
            },
        );

        b.in_group(GroupName::DurationModel);
        let dur_phone = Embedding::new(&mut b, "duration.phone_embedding", c.n_phones, c.duration_phone_dim);
        let dur_tone = Embedding::new(&mut b, "duration.tone_embedding", c.n_tones, c.duration_tone_dim);
        let dur_language = Embedding::new(&mut b, "duration.language_embedding", c.n_languages, c.duration_language_dim);
        let mut width = c.duration_phone_dim + c.duration_tone_dim + c.duration_language_dim;
        let mut dur_layers = Vec::new();
        for i in 0..c.duration_layers {
            let l = BiLstm::new(&mut b, &format!("duration.blstm{i}"), width, c.duration_width / 2);
            width = l.output();
            dur_layers.push(l);
        }
        let dur_out = Linear::new(&mut b, "duration.out", width, 1, Activation::Identity);

        b.in_group(GroupName::Decoder);
        let rm = c.frames_per_step * c.n_mels;
        let ctx = c.expanded_width();
        let dec_prenet = Mlp::new(&mut b, "decoder.prenet", rm, &c.decoder_prenet, Activation::Relu);
        let p = dec_prenet.output();
        let attention = WindowedAttention::new(
            &mut b,
            "decoder.attention",
            p + ctx,
            ctx,
            c.attention_depth,
            c.attention_half_width,
        );
        let dec_in = Linear::new(&mut b, "decoder.input", ctx + p, c.decoder_width, Activation::Identity);
        let dec_lstm1 = ResidualLstm::new(&mut b, "decoder.lstm1", c.decoder_width);
        let dec_lstm2 = Lstm::new(&mut b, "decoder.lstm2", c.decoder_width, c.decoder_width);
        let dec_out = Linear::new(&mut b, "decoder.out", c.decoder_width + ctx, rm, Activation::Identity);

        b.in_group(GroupName::Postnet);
        let post_fc = Mlp::new(&mut b, "postnet.fc", c.n_mels, &c.postnet_fc, Activation::Relu);
        let post_lstm = Lstm::new(&mut b, "postnet.lstm", post_fc.output(), c.postnet_width);
        let post_out = Linear::new(&mut b, "postnet.out", c.postnet_width, c.n_mels, Activation::Identity);

        Self {
            config: config.clone(),
            phone,
            tone,
            language,
            emotion,
            speaker,
            enc_prenet,
            cbhg,
            dur_phone,
            dur_tone,
            dur_language,
            dur_layers,
            dur_out,
            dec_prenet,
            attention,
            dec_in,
            dec_lstm1,
            dec_lstm2,
            dec_out,
            post_fc,
            post_lstm,
            post_out,
        }
    }

    /// Fresh parameters drawn from `seed`.
    pub fn init<F: Real>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<F>), ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::build(config, &mut store, &mut rng);
        store.check_partition(&GroupName::ALL)?;
        Ok((model, store))
    }

    /// Handles for an existing store; names and shapes must match the
    /// layout `config` produces.
    pub fn bind<F: Real>(config: &ModelConfig, store: &ParamStore<F>) -> Result<Self, ModelError> {
        let (model, layout) = Self::init::<F>(config, 0)?;
        if layout.len() != store.len() {
            return Err(ModelError::Layout(format!("expected {} tensors, found {}", layout.len(), store.len())));
        }
        for ((_, want), (_, got)) in layout.iter().zip(store.iter()) {
            if want.name != got.name || want.group != got.group || want.value.dim() != got.value.dim() {
                return Err(ModelError::Layout(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    got.name,
                    got.value.dim(),
                    want.name,
                    want.value.dim()
                )));
            }
        }
        Ok(model)
    }

    pub fn speaker_table(&self) -> crate::nn::ParamId {
        self.speaker.table
    }

    pub fn emotion_table(&self) -> crate::nn::ParamId {
        self.emotion.table
    }

    pub fn check_tokens(&self, tokens: &[LinguisticToken]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Empty("token sequence"));
        }
        let c = &self.config;
        for (i, t) in tokens.iter().enumerate() {
            for (field, id, n) in [
                ("phone", t.phone_id, c.n_phones),
                ("tone/stress", t.tone_stress_id, c.n_tones),
                ("language", t.language_id, c.n_languages),
            ] {
                if id >= n {
                    return Err(ModelError::IdOutOfRange { what: field, index: i, id, size: n });
                }
            }
        }
        Ok(())
    }

    fn check_conditions(&self, speaker: usize, emotion: usize) -> Result<(), ModelError> {
        if speaker >= self.config.n_speakers {
            return Err(ModelError::IdOutOfRange { what: "speaker", index: 0, id: speaker, size: self.config.n_speakers });
        }
        if emotion >= self.config.n_emotions {
            return Err(ModelError::IdOutOfRange { what: "emotion", index: 0, id: emotion, size: self.config.n_emotions });
        }
        Ok(())
    }

    // ---- encoder ----

    pub fn encode_var<F: Real>(&self, tape: &mut Tape<'_, F>, tokens: &[LinguisticToken]) -> Var {
        let phones: Vec<usize> = tokens.iter().map(|t| t.phone_id).collect();
        let tones: Vec<usize> = tokens.iter().map(|t| t.tone_stress_id).collect();
        let p = self.phone.lookup(tape, &phones);
        let t = self.tone.lookup(tape, &tones);
        let x = tape.concat_cols(&[p, t]);
        let x = self.enc_prenet.forward(tape, x);
        self.cbhg.forward(tape, x)
    }

    /// Per-token encoder states. Speaker and emotion are not inputs.
    pub fn encode<F: Real>(&self, params: &ParamStore<F>, tokens: &[LinguisticToken]) -> Result<Array2<F>, ModelError> {
        self.check_tokens(tokens)?;
        let mut tape = Tape::new(params);
        let v = self.encode_var(&mut tape, tokens);
        Ok(tape.value(v).to_owned())
    }

    // ---- duration model ----

    /// `log(1 + frames)` prediction per phoneme token, `N_phonemes x 1`.
    pub fn duration_var<F: Real>(&self, tape: &mut Tape<'_, F>, tokens: &[LinguisticToken]) -> Var {
        let ids = |f: fn(&LinguisticToken) -> usize| tokens.iter().map(f).collect::<Vec<_>>();
        let p = self.dur_phone.lookup(tape, &ids(|t| t.phone_id));
        let t = self.dur_tone.lookup(tape, &ids(|t| t.tone_stress_id));
        let l = self.dur_language.lookup(tape, &ids(|t| t.language_id));
        let mut h = tape.concat_cols(&[p, t, l]);
        for layer in &self.dur_layers {
            h = layer.run(tape, h);
        }
        let h = tape.gather(h, &phoneme_indices(tokens));
        let y = self.dur_out.forward(tape, h);
        tape.softplus(y)
    }

    /// Real-valued frames per phoneme token (boundaries excluded).
    pub fn predict_durations<F: Real>(
        &self,
        params: &ParamStore<F>,
        tokens: &[LinguisticToken],
    ) -> Result<Vec<f64>, ModelError> {
        self.check_tokens(tokens)?;
        if phoneme_indices(tokens).is_empty() {
            return Err(ModelError::Empty("phoneme tokens"));
        }
        let mut tape = Tape::new(params);
        let v = self.duration_var(&mut tape, tokens);
        Ok(tape.value(v).iter().map(|x| x.as_f64().exp_m1().max(0.0)).collect())
    }

    // ---- expansion ----

    fn check_expansion(&self, n: usize, durations: &[u32], languages: &[usize]) -> Result<(), ModelError> {
        if n == 0 {
            return Err(ModelError::Empty("encoder states"));
        }
        if durations.len() != n || languages.len() != n {
            return Err(ModelError::LengthMismatch {
                what: "states/durations/languages",
                expected: n,
                got: if durations.len() != n { durations.len() } else { languages.len() },
            });
        }
        if let Some(j) = durations.iter().position(|&d| d == 0) {
            return Err(ModelError::Config(format!("phoneme {j} has duration 0")));
        }
        if let Some(&l) = languages.iter().find(|&&l| l >= self.config.n_languages) {
            return Err(ModelError::IdOutOfRange { what: "language", index: 0, id: l, size: self.config.n_languages });
        }
        Ok(())
    }

    pub fn expand_var<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        states: Var,
        durations: &[u32],
        speaker: usize,
        emotion: usize,
        languages: &[usize],
    ) -> Var {
        let (block, pos) = expansion_plan(durations);
        let t = block.len();
        let enc = tape.gather(states, &block);
        let spk = self.speaker.lookup(tape, &vec![speaker; t]);
        let emo = self.emotion.lookup(tape, &vec![emotion; t]);
        let lang_ids: Vec<usize> = block.iter().map(|&j| languages[j]).collect();
        let lang = self.language.lookup(tape, &lang_ids);
        let pos = tape.constant(Array2::from_shape_fn((t, 1), |(i, _)| F::of(pos[i])));
        tape.concat_cols(&[enc, spk, emo, lang, pos])
    }

    /// Frame-level rows `[state ‖ speaker ‖ emotion ‖ language ‖ (i+1)/d]`.
    pub fn expand_states<F: Real>(
        &self,
        params: &ParamStore<F>,
        states: &Array2<F>,
        durations: &[u32],
        speaker: usize,
        emotion: usize,
        languages: &[usize],
    ) -> Result<Array2<F>, ModelError> {
        self.check_expansion(states.nrows(), durations, languages)?;
        self.check_conditions(speaker, emotion)?;
        if states.ncols() != self.config.encoder_width {
            return Err(ModelError::LengthMismatch {
                what: "encoder state width",
                expected: self.config.encoder_width,
                got: states.ncols(),
            });
        }
        let mut tape = Tape::new(params);
        let s = tape.constant(states.clone());
        let v = self.expand_var(&mut tape, s, durations, speaker, emotion, languages);
        Ok(tape.value(v).to_owned())
    }

    // ---- attention and decoder ----

    /// One attention read; weights are returned over all `T` rows, zero
    /// outside the window.
    pub fn windowed_attention<F: Real>(
        &self,
        params: &ParamStore<F>,
        query: &Array2<F>,
        expanded: &Array2<F>,
        center: usize,
    ) -> Result<(Array2<F>, Vec<F>), ModelError> {
        let t = expanded.nrows();
        if center >= t {
            return Err(ModelError::CenterOutOfRange { center, frames: t });
        }
        let mut tape = Tape::new(params);
        let q = tape.constant(query.clone());
        let m = tape.constant(expanded.clone());
        let keys = self.attention.keys(&mut tape, m);
        let read = self.attention.read(&mut tape, q, m, keys, center);
        let mut weights = vec![F::zero(); t];
        for (k, &w) in tape.value(read.weights).iter().enumerate() {
            weights[read.start + k] = w;
        }
        Ok((tape.value(read.context).to_owned(), weights))
    }

    pub fn attention_query_width(&self) -> usize {
        self.attention.query
    }

    /// Previous-block inputs for teacher forcing: row `s` holds frames
    /// `(s-1)r .. sr` flattened, row 0 is zeros.
    fn teacher_blocks<F: Real>(&self, teacher: &Array2<F>, steps: usize) -> Array2<F> {
        let (r, m) = (self.config.frames_per_step, self.config.n_mels);
        let t = teacher.nrows();
        let mut out = Array2::zeros((steps, r * m));
        for s in 1..steps {
            for k in 0..r {
                let f = ((s - 1) * r + k).min(t - 1);
                out.slice_mut(s![s, k * m..(k + 1) * m]).assign(&teacher.row(f));
            }
        }
        out
    }

    /// Runs `ceil(T / r)` decoder steps and truncates to `T` frames.
    pub fn decode_var<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        expanded: Var,
        teacher: Option<&Array2<F>>,
        mut trace: Option<&mut Vec<(usize, Vec<F>)>>,
    ) -> Var {
        let c = &self.config;
        let (r, m) = (c.frames_per_step, c.n_mels);
        let t = tape.shape(expanded).0;
        let steps = decoder_steps(t, r);
        let keys = self.attention.keys(tape, expanded);
        let mut ctx = tape.constant(Array2::zeros((1, c.expanded_width())));
        let mut s1 = self.dec_lstm1.cell.zero_state(tape);
        let mut s2 = self.dec_lstm2.zero_state(tape);
        let teacher_prenet = teacher.map(|tm| {
            let blocks = tape.constant(self.teacher_blocks(tm, steps));
            self.dec_prenet.forward(tape, blocks)
        });
        let mut prev: Option<Var> = None;
        let mut outs = Vec::with_capacity(steps);
        for step in 0..steps {
            let p = match teacher_prenet {
                Some(all) => tape.slice_rows(all, step, 1),
                None => {
                    let input = match prev {
                        Some(o) => o,
                        None => tape.constant(Array2::zeros((1, r * m))),
                    };
                    self.dec_prenet.forward(tape, input)
                }
            };
            let q = tape.concat_cols(&[p, ctx]);
            let read = self.attention.read(tape, q, expanded, keys, step * r);
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((read.start, tape.value(read.weights).iter().copied().collect()));
            }
            ctx = read.context;
            let x = tape.concat_cols(&[ctx, p]);
            let x = self.dec_in.forward(tape, x);
            let (h1, n1) = self.dec_lstm1.step(tape, x, s1);
            s1 = n1;
            s2 = self.dec_lstm2.step(tape, h1, s2);
            let y = tape.concat_cols(&[s2.h, ctx]);
            if teacher_prenet.is_some() {
                // output rows do not feed back; project them in one product below
                outs.push(y);
            } else {
                let o = self.dec_out.forward(tape, y);
                outs.push(o);
                prev = Some(o);
            }
        }
        let all = tape.concat_rows(&outs);
        let all = if teacher_prenet.is_some() { self.dec_out.forward(tape, all) } else { all };
        let frames = tape.reshape(all, steps * r, m);
        if steps * r == t {
            frames
        } else {
            tape.slice_rows(frames, 0, t)
        }
    }

    /// Coarse frames in the network's (normalized) mel space.
    pub fn decode_sequence<F: Real>(
        &self,
        params: &ParamStore<F>,
        expanded: &Array2<F>,
        teacher: Option<&Array2<F>>,
    ) -> Result<DecodeTrace<F>, ModelError> {
        let t = expanded.nrows();
        if t == 0 {
            return Err(ModelError::Empty("expanded states"));
        }
        if expanded.ncols() != self.config.expanded_width() {
            return Err(ModelError::LengthMismatch {
                what: "expanded width",
                expected: self.config.expanded_width(),
                got: expanded.ncols(),
            });
        }
        if let Some(tm) = teacher {
            if tm.dim() != (t, self.config.n_mels) {
                return Err(ModelError::LengthMismatch { what: "teacher frames", expected: t, got: tm.nrows() });
            }
        }
        let mut tape = Tape::new(params);
        let e = tape.constant(expanded.clone());
        let mut attention = Vec::new();
        let v = self.decode_var(&mut tape, e, teacher, Some(&mut attention));
        Ok(DecodeTrace { coarse: tape.value(v).to_owned(), steps: attention.len(), attention })
    }

    // ---- post-net ----

    pub fn postnet_var<F: Real>(&self, tape: &mut Tape<'_, F>, coarse: Var) -> Var {
        let t = tape.shape(coarse).0;
        let d = self.config.postnet_delay;
        let u = self.post_fc.forward(tape, coarse);
        let shifted: Vec<usize> = (0..t).map(|i| (i + d).min(t - 1)).collect();
        let u = tape.gather(u, &shifted);
        let (h, _) = self.post_lstm.sequence(tape, u, false, None);
        let delta = self.post_out.forward(tape, h);
        tape.add(coarse, delta)
    }

    /// `coarse[t] + proj(lstm(fc(coarse[min(t + D, T - 1)])))`.
    pub fn postnet_offline<F: Real>(&self, params: &ParamStore<F>, coarse: &Array2<F>) -> Result<Array2<F>, ModelError> {
        if coarse.nrows() == 0 {
            return Err(ModelError::Empty("coarse mel"));
        }
        let mut tape = Tape::new(params);
        let c = tape.constant(coarse.clone());
        let v = self.postnet_var(&mut tape, c);
        Ok(tape.value(v).to_owned())
    }

    pub(crate) fn postnet_parts(&self) -> (&Mlp, &Lstm, &Linear) {
        (&self.post_fc, &self.post_lstm, &self.post_out)
    }
}
