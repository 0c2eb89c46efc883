//! End-to-end acceptance run. Criteria execute one after another (their
//! runtime limits assume an otherwise idle machine) and each prints a single
//! PASS or FAIL line. The process exits non-zero if any criterion fails.
//!
//! `cargo test -p adadurian --test acceptance` runs it; pass `-- c01 c07`
//! to run a subset by id.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use adadurian::adaptation::{
    adapt, prepare_samples, train_average, verify_freeze, AdaptOutcome, FreezeRung, ModelSpec, TrainConfig, TrainOutcome,
};
use adadurian::bench::{bench_rtf, BenchOptions};
use adadurian::corpus::{make_synthetic_corpus, split_train_valid, LinguisticToken, Manifest, SynthSpec, TokenKind};
use adadurian::dsp::{self, griffin_lim, griffin_lim_traced, io, mel_to_linear, stft_magnitude, MelSpectrogram, SignalConfig, Waveform};
use adadurian::model::{end_to_end_grad_check, skip_states, AcousticModel, ModelConfig, StreamState, SynthRequest};
use adadurian::nn::layers::{random_normal, Activation, CbhgSpec};
use adadurian::nn::{grad_check, Checkpoint, GroupName, LayerSpec, ParamStore};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(clock: Instant, limit: Duration) -> Result<f64, String> {
    let secs = clock.elapsed().as_secs_f64();
    ensure(secs < limit.as_secs_f64(), || format!("took {secs:.1} s, limit {} s", limit.as_secs()))?;
    Ok(secs)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const SEED: u64 = 7;

/// The desk-scale average model and the adaptation run built on it.
struct Desk {
    dir: PathBuf,
    train: Manifest,
    valid: Manifest,
    new_train: Manifest,
    new_valid: Manifest,
    average: TrainOutcome,
    train_seconds: f64,
    adapted: Option<(AdaptOutcome, f64)>,
}

fn desk_corpora(dir: &Path) -> Result<(Manifest, Manifest, Manifest, Manifest), String> {
    let avg = SynthSpec { n_speakers: 2, n_utterances_per_speaker: 50, seed: SEED, ..SynthSpec::default() };
    let m = make_synthetic_corpus(&avg, &dir.join("average")).map_err(err)?;
    let (train, valid) = split_train_valid(&m, 0.1, SEED).map_err(err)?;
    let new = SynthSpec { n_speakers: 1, first_speaker: 2, n_utterances_per_speaker: 10, ..avg };
    let m = make_synthetic_corpus(&new, &dir.join("new")).map_err(err)?;
    let (new_train, new_valid) = split_train_valid(&m, 0.2, SEED).map_err(err)?;
    Ok((train, valid, new_train, new_valid))
}

fn desk_average(train: &Manifest, valid: &Manifest) -> Result<TrainOutcome, String> {
    train_average(train, valid, &ModelConfig::default(), &TrainConfig::average(), None).map_err(err)
}

fn desk_adapt(base: &Checkpoint, train: &Manifest, valid: &Manifest) -> Result<AdaptOutcome, String> {
    adapt(base, train, valid, &TrainConfig::adaptation(FreezeRung::Encoder.freeze_set()), None).map_err(err)
}

struct Shared {
    scratch: tempfile::TempDir,
    desk: Option<Result<Desk, String>>,
}

impl Shared {
    fn desk(&mut self) -> Result<&mut Desk, String> {
        if self.desk.is_none() {
            let build = || -> Result<Desk, String> {
                let clock = Instant::now();
                let dir = self.scratch.path().join("desk");
                let (train, valid, new_train, new_valid) = desk_corpora(&dir)?;
                let average = desk_average(&train, &valid)?;
                let train_seconds = clock.elapsed().as_secs_f64();
                Ok(Desk { dir, train, valid, new_train, new_valid, average, train_seconds, adapted: None })
            };
            self.desk = Some(build());
        }
        self.desk.as_mut().expect("just set").as_mut().map_err(|e| format!("desk training failed: {e}"))
    }

    fn adapted(&mut self) -> Result<(&AdaptOutcome, f64), String> {
        let desk = self.desk()?;
        if desk.adapted.is_none() {
            let clock = Instant::now();
            let out = desk_adapt(&desk.average.best, &desk.new_train, &desk.new_valid)?;
            desk.adapted = Some((out, clock.elapsed().as_secs_f64()));
        }
        let (out, secs) = desk.adapted.as_ref().expect("just set");
        Ok((out, *secs))
    }
}

/// Per-frame reference for state expansion, written against the layout
/// contract: `[state | speaker | emotion | language | (k+1)/d]`.
fn expand_reference(
    params: &ParamStore<f64>,
    states: &Array2<f64>,
    durations: &[u32],
    speaker: usize,
    emotion: usize,
    languages: &[usize],
) -> Array2<f64> {
    let table = |name: &str| params.value(params.id(name).expect("embedding table")).clone();
    let (spk, emo, lang) = (table("speaker_embedding"), table("emotion_embedding"), table("language_embedding"));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (j, &d) in durations.iter().enumerate() {
        for k in 0..d {
            let mut row: Vec<f64> = states.row(j).to_vec();
            row.extend(spk.row(speaker).iter());
            row.extend(emo.row(emotion).iter());
            row.extend(lang.row(languages[j]).iter());
            row.push(f64::from(k + 1) / f64::from(d));
            rows.push(row);
        }
    }
    let width = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), width), |(i, c)| rows[i][c])
}

fn c01_expansion_oracle(_: &mut Shared) -> Verdict {
    let clock = Instant::now();
    let (m, ps) = AcousticModel::init::<f64>(&ModelConfig::tiny(2, 8), SEED).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000 {
        let n = rng.random_range(1..=20);
        let states: Array2<f64> = random_normal(&mut rng, n, m.config.encoder_width);
        let durations: Vec<u32> = (0..n).map(|_| rng.random_range(1..=10)).collect();
        let langs: Vec<usize> = (0..n).map(|_| rng.random_range(0..m.config.n_languages)).collect();
        let (spk, emo) = (rng.random_range(0..m.config.n_speakers), rng.random_range(0..m.config.n_emotions));
        let got = m.expand_states(&ps, &states, &durations, spk, emo, &langs).map_err(err)?;
        let want = expand_reference(&ps, &states, &durations, spk, emo, &langs);
        ensure(got == want, || format!("case {case}: expansion differs from the per-frame reference"))?;
    }
    let secs = within(clock, Duration::from_secs(10))?;
    Ok(format!("1000 cases bit-exact in {secs:.2} s"))
}

fn c02_streaming_equality(_: &mut Shared) -> Verdict {
    let clock = Instant::now();
    let (m, ps) = AcousticModel::init::<f32>(&ModelConfig::default(), SEED).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f32;
    for _ in 0..100 {
        let coarse: Array2<f32> = random_normal(&mut rng, 200, m.config.n_mels);
        let offline = m.postnet_offline(&ps, &coarse).map_err(err)?;
        let mut st = StreamState::new(&m);
        let mut rows = Vec::new();
        for t in 0..coarse.nrows() {
            rows.extend(m.postnet_stream_push(&ps, &mut st, &coarse.slice(s![t..t + 1, ..]).to_owned()).map_err(err)?);
        }
        rows.extend(m.postnet_stream_flush(&ps, &mut st).map_err(err)?);
        ensure(rows.len() == 200, || format!("stream emitted {} frames", rows.len()))?;
        for (t, row) in rows.iter().enumerate() {
            for (a, b) in row.iter().zip(offline.row(t)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max abs diff {worst:e} > 1e-6"))?;
    let secs = within(clock, Duration::from_secs(30))?;
    Ok(format!("max abs diff {worst:e} over 100 x 200 frames in {secs:.1} s"))
}

fn c03_gradient_checks(_: &mut Shared) -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut rnd = |r, c| -> Array2<f64> { random_normal(&mut rng, r, c) };
    let cases = vec![
        ("fc-tanh", LayerSpec::FullyConnected { input: 5, output: 4, activation: Activation::Tanh }, vec![rnd(3, 5)]),
        ("fc-relu", LayerSpec::FullyConnected { input: 5, output: 4, activation: Activation::Relu }, vec![rnd(3, 5)]),
        ("embedding", LayerSpec::Embedding { vocab: 6, dim: 3 }, vec![Array2::from_shape_vec((4, 1), vec![0.0, 5.0, 2.0, 5.0]).unwrap()]),
        ("lstm", LayerSpec::Lstm { input: 3, hidden: 4 }, vec![rnd(6, 3)]),
        ("bilstm", LayerSpec::BiLstm { input: 3, hidden: 3 }, vec![rnd(5, 3)]),
        ("residual-lstm", LayerSpec::ResidualLstm { width: 4 }, vec![rnd(5, 4)]),
        (
            "cbhg",
            LayerSpec::Cbhg(CbhgSpec { input: 4, width: 6, bank_size: 3, bank_channels: 2, highway_layers: 2 }),
            vec![rnd(6, 4)],
        ),
        (
            "attention",
            LayerSpec::Attention { query: 3, memory: 4, depth: 5, half_width: 2, center: 4 },
            vec![rnd(1, 3), rnd(9, 4)],
        ),
    ];
    let mut worst = (0.0f64, "");
    for (name, spec, inputs) in cases {
        let mut store = ParamStore::<f64>::new();
        let layer = spec.build(&mut store, GroupName::Decoder, 31).map_err(err)?;
        let e = grad_check(&layer, &store, &inputs, 1e-4, 31).map_err(|e| format!("{name}: {e}"))?;
        if e > worst.0 {
            worst = (e, name);
        }
    }
    let groups = end_to_end_grad_check(SEED, 1e-4).map_err(err)?;
    ensure(groups.len() == GroupName::ALL.len(), || format!("end-to-end check covered {} groups", groups.len()))?;
    for (g, &e) in &groups {
        if e > worst.0 {
            worst = (e, g.as_str());
        }
    }
    ensure(worst.0 <= 1e-3, || format!("relative error {:.2e} in {} > 1e-3", worst.0, worst.1))?;
    let secs = within(clock, Duration::from_secs(120))?;
    Ok(format!("8 layer cases + 9 groups end-to-end, worst {:.1e} ({}) in {secs:.1} s", worst.0, worst.1))
}

fn c04_freeze_ladder(shared: &mut Shared) -> Verdict {
    let desk = shared.desk()?;
    let clock = Instant::now();
    let mut previous: Option<Vec<GroupName>> = None;
    for rung in FreezeRung::ALL {
        let freeze = rung.freeze_set();
        let frozen: Vec<GroupName> = freeze.iter().collect();
        if let Some(p) = &previous {
            ensure(p.iter().all(|g| frozen.contains(g)) && frozen.len() > p.len(), || format!("rung {rung} does not extend its predecessor"))?;
        }
        let cfg = TrainConfig { max_steps: 50, patience: None, ..TrainConfig::adaptation(freeze.clone()) };
        let out = adapt(&desk.average.best, &desk.new_train, &desk.new_valid, &cfg, None).map_err(err)?;
        ensure(out.run.last.meta.step == 50, || format!("rung {rung} stopped at step {}", out.run.last.meta.step))?;
        verify_freeze(&out.start, &out.run.last, &freeze).map_err(err)?;
        for (_, p) in out.start.params.iter() {
            let a = out.start.tensor_bytes(&p.name).expect("tensor");
            let b = out.run.last.tensor_bytes(&p.name).expect("tensor");
            if frozen.contains(&p.group) {
                ensure(a == b, || format!("rung {rung}: frozen {} changed", p.name))?;
            }
        }
        for g in GroupName::ALL.into_iter().filter(|g| !frozen.contains(g)) {
            let moved = out
                .start
                .params
                .iter()
                .filter(|(_, p)| p.group == g)
                .any(|(_, p)| out.start.tensor_bytes(&p.name) != out.run.last.tensor_bytes(&p.name));
            ensure(moved, || format!("rung {rung}: trainable group {g} did not change"))?;
        }
        previous = Some(frozen);
    }
    let secs = within(clock, Duration::from_secs(300))?;
    Ok(format!("4 rungs x 50 steps, frozen bytes identical, others moved, nested; {secs:.1} s"))
}

fn c05_desk_learning(shared: &mut Shared) -> Verdict {
    let desk = shared.desk()?;
    let curve = desk.average.train_curve();
    ensure(curve.len() == 2000, || format!("{} steps logged", curve.len()))?;
    let step10 = curve.iter().find(|(s, _)| *s == 10).map(|(_, l)| *l).ok_or("no step 10")?;
    let tail = &curve[curve.len() - 10..];
    let last = tail.iter().map(|(_, l)| l).sum::<f64>() / tail.len() as f64;
    ensure(last < 0.5 * step10, || format!("final loss {last:.4} not below half of step-10 loss {step10:.4}"))?;

    let trained = &desk.average.last;
    let spec = ModelSpec::from_json(&trained.config).map_err(err)?;
    let model = AcousticModel::bind(&spec.model, &trained.params).map_err(err)?;
    let samples = prepare_samples(&model, &desk.train, None).map_err(err)?;
    let raw = desk.train.load_mels().map_err(err)?;
    let pred = model.teacher_forced(&trained.params, &samples[0]).map_err(err)?;
    let norm = spec.model.mel_norm.normalize(&pred);
    let l1 = (&norm - &samples[0].target).mapv(f32::abs).mean().unwrap_or(f32::NAN);
    let l1_raw = (&pred - &raw[0]).mapv(f32::abs).mean().unwrap_or(f32::NAN);
    ensure(l1 < 0.1, || format!("teacher-forced L1 {l1:.4} (log-mel {l1_raw:.4}) >= 0.1"))?;
    let secs = desk.train_seconds;
    ensure(secs < 900.0, || format!("losses ok but took {secs:.0} s, limit 900 s"))?;
    Ok(format!(
        "loss step 10 {step10:.3} -> final {last:.3}; teacher-forced L1 {l1:.4} normalized ({l1_raw:.4} log-mel); {secs:.0} s"
    ))
}

fn c06_adaptation_benefit(shared: &mut Shared) -> Verdict {
    let (out, secs) = shared.adapted()?;
    let zero_shot = out.run.initial_valid_loss;
    let best = out.run.best_valid_loss();
    ensure(best < zero_shot, || format!("best valid {best:.4} not below zero-shot {zero_shot:.4}"))?;
    ensure(secs < 600.0, || format!("took {secs:.0} s, limit 600 s"))?;
    Ok(format!("valid loss {zero_shot:.4} zero-shot -> {best:.4} at step {} in {secs:.0} s", out.run.best.meta.step))
}

fn random_tokens(rng: &mut ChaCha8Rng, c: &ModelConfig, n: usize) -> Vec<LinguisticToken> {
    let mut tokens = vec![LinguisticToken::phoneme(rng.random_range(1..c.n_phones), rng.random_range(0..c.n_tones), 0)];
    while tokens.len() < n {
        if rng.random_bool(0.2) && tokens.last().is_some_and(|t| t.kind == TokenKind::Phoneme) {
            tokens.push(LinguisticToken { kind: TokenKind::ProsodicBoundary, phone_id: 0, tone_stress_id: 0, language_id: 0 });
        } else {
            let lang = rng.random_range(0..c.n_languages);
            tokens.push(LinguisticToken::phoneme(rng.random_range(1..c.n_phones), rng.random_range(0..c.n_tones), lang));
        }
    }
    tokens
}

fn c07_encoder_independence(_: &mut Shared) -> Verdict {
    let clock = Instant::now();
    let config = ModelConfig { n_speakers: 5, n_emotions: 4, ..ModelConfig::default() };
    let (m, ps) = AcousticModel::init::<f32>(&config, SEED).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let conditions = [(0, 0), (1, 3), (4, 1), (2, 2), (3, 0)];
    let w = config.encoder_width;
    for case in 0..50 {
        let n = rng.random_range(1..=20);
        let tokens = random_tokens(&mut rng, &config, n);
        let phonemes: Vec<usize> = tokens.iter().filter(|t| t.kind == TokenKind::Phoneme).map(|t| t.language_id).collect();
        let durations: Vec<u32> = phonemes.iter().map(|_| rng.random_range(1..=6)).collect();
        let mut reference: Option<Array2<f32>> = None;
        for &(spk, emo) in &conditions {
            let states = skip_states(&m.encode(&ps, &tokens).map_err(err)?, &tokens);
            let expanded = m.expand_states(&ps, &states, &durations, spk, emo, &phonemes).map_err(err)?;
            let encoder_part = expanded.slice(s![.., ..w]).to_owned();
            match &reference {
                None => reference = Some(encoder_part),
                Some(r) => ensure(encoder_part == r, || format!("case {case}: encoder output depends on ({spk}, {emo})"))?,
            }
        }
    }
    let secs = within(clock, Duration::from_secs(5))?;
    Ok(format!("50 sequences x 5 conditions bit-identical in {secs:.2} s"))
}

fn c08_length_conservation(shared: &mut Shared) -> Verdict {
    let clock = Instant::now();
    let config = ModelConfig::tiny(3, 8);
    let config = ModelConfig { n_mels: 80, mel_norm: adadurian::model::MelNorm::identity(80), ..config };
    let (m, ps) = AcousticModel::init::<f32>(&config, SEED).map_err(err)?;
    let signal = SignalConfig::default();
    let dir = shared.scratch.path().join("lengths");
    std::fs::create_dir_all(&dir).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..200 {
        let n = rng.random_range(1..=12);
        let tokens = random_tokens(&mut rng, &config, n);
        let count = tokens.iter().filter(|t| t.kind == TokenKind::Phoneme).count();
        let given: Vec<u32> = (0..count).map(|_| rng.random_range(1..=8)).collect();
        let supplied = case % 2 == 0;
        let req = SynthRequest { tokens: &tokens, speaker: case % 2, emotion: 0, durations: supplied.then_some(given.as_slice()) };
        let out = m.synthesize(&ps, &req).map_err(err)?;
        let total: u32 = out.durations.iter().sum();
        ensure(out.durations.len() == count, || format!("case {case}: {} durations for {count} phonemes", out.durations.len()))?;
        if supplied {
            ensure(out.durations == given, || format!("case {case}: supplied durations altered"))?;
        }
        ensure(out.mel.nrows() == total as usize, || format!("case {case}: {} frames, durations sum {total}", out.mel.nrows()))?;
        let mel = MelSpectrogram::new(out.mel.mapv(f64::from), signal);
        let wave = dsp::vocode(&mel, 1, case as u64).map_err(err)?;
        let path = dir.join("out.wav");
        io::write_wav(&path, &wave).map_err(err)?;
        let back = io::read_wav(&path).map_err(err)?;
        ensure(back.len() == total as usize * 240, || format!("case {case}: wav has {} samples for {total} frames", back.len()))?;
    }
    let secs = within(clock, Duration::from_secs(60))?;
    Ok(format!("200 requests (half predicted), frames = sum(d), samples = 240 * frames; {secs:.1} s"))
}

fn pearson(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn c09_griffin_lim(_: &mut Shared) -> Verdict {
    let clock = Instant::now();
    let cfg = SignalConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for case in 0..20 {
        let t = rng.random_range(4..=16);
        let mel = Array2::from_shape_fn((t, cfg.n_mels), |_| rng.random_range(-8.0..0.0));
        let linear = mel_to_linear(&MelSpectrogram::new(mel, cfg)).map_err(err)?;
        let (_, trace) = griffin_lim_traced(&linear, &cfg, 60, case);
        ensure(trace.consistency.len() == 60, || format!("case {case}: {} iterations traced", trace.consistency.len()))?;
        for (i, w) in trace.consistency.windows(2).enumerate() {
            ensure(w[1] <= w[0] + 1e-9, || format!("case {case}: error rose at iteration {}: {} -> {}", i + 1, w[0], w[1]))?;
        }
    }
    let samples = (0..24_000).map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 24_000.0).sin()).collect();
    let target = stft_magnitude(&Waveform::new(samples, 24_000), &cfg).map_err(err)?;
    let wave = griffin_lim(&target, &cfg, 60, SEED);
    let rebuilt = stft_magnitude(&wave, &cfg).map_err(err)?;
    let rows = target.nrows().min(rebuilt.nrows());
    let r = pearson(&target.slice(s![..rows, ..]).to_owned(), &rebuilt.slice(s![..rows, ..]).to_owned());
    ensure(r >= 0.99, || format!("440 Hz magnitude correlation {r:.4} < 0.99"))?;
    let secs = within(clock, Duration::from_secs(60))?;
    Ok(format!("20 random mels non-increasing over 60 iterations; 440 Hz correlation {r:.4}; {secs:.1} s"))
}

fn c10_determinism(shared: &mut Shared) -> Verdict {
    shared.adapted()?;
    let desk = shared.desk()?;
    let first_avg = desk.average.best.encode().map_err(err)?;
    let first_adapt = desk.adapted.as_ref().expect("adapted").0.run.best.encode().map_err(err)?;
    let dir = desk.dir.with_file_name("desk-rerun");
    let (train, valid, new_train, new_valid) = desk_corpora(&dir)?;
    let again = desk_average(&train, &valid)?;
    let second_avg = again.best.encode().map_err(err)?;
    ensure(first_avg == second_avg, || "average-model best checkpoints differ".into())?;
    let second_adapt = desk_adapt(&again.best, &new_train, &new_valid)?.run.best.encode().map_err(err)?;
    ensure(first_adapt == second_adapt, || "adapted best checkpoints differ".into())?;
    Ok(format!("rerun best checkpoints byte-identical (average {} bytes, adapted {} bytes)", first_avg.len(), first_adapt.len()))
}

fn c11_latency_law(shared: &mut Shared) -> Verdict {
    let desk = shared.desk()?;
    let best = &desk.average.best;
    let spec = ModelSpec::from_json(&best.config).map_err(err)?;
    let model = AcousticModel::bind(&spec.model, &best.params).map_err(err)?;
    let (d, r) = (spec.model.postnet_delay, spec.model.frames_per_step);
    ensure((d, r) == (5, 4), || format!("defaults are D={d}, r={r}"))?;

    // independent count: frames pushed before the stream emits anything
    let mut st = StreamState::new(&model);
    let mut silent = 0;
    for _ in 0..20 {
        let frame = Array2::<f32>::zeros((1, spec.model.n_mels));
        if model.postnet_stream_push(&best.params, &mut st, &frame).map_err(err)?.is_empty() {
            silent += 1;
        } else {
            break;
        }
    }
    ensure(silent == d, || format!("stream stayed silent for {silent} frames, expected {d}"))?;

    let records: Vec<_> = desk.valid.records.iter().take(4).collect();
    let requests: Vec<SynthRequest<'_>> = records
        .iter()
        .map(|u| SynthRequest { tokens: &u.tokens, speaker: u.speaker_id, emotion: u.emotion_id, durations: None })
        .collect();
    let report = bench_rtf(&model, &best.params, &requests, &desk.train.signal, &BenchOptions::default()).map_err(err)?;
    ensure(report.first_frame_latency_frames == silent + r, || {
        format!("bench reports {} frames, expected {}", report.first_frame_latency_frames, silent + r)
    })?;
    let st = report.stages;
    ensure(report.rtf.is_finite() && report.rtf > 0.0, || format!("rtf {}", report.rtf))?;
    ensure([st.encode, st.duration, st.expand, st.decode, st.postnet].iter().all(|t| *t >= 0.0), || "negative stage time".into())?;
    Ok(format!(
        "latency {} frames (D {d} + r {r}); RTF {:.1} [encode {:.3} duration {:.3} expand {:.4} decode {:.3} postnet {:.3} s]; reference 17x",
        report.first_frame_latency_frames, report.rtf, st.encode, st.duration, st.expand, st.decode, st.postnet
    ))
}

type Criterion = (&'static str, &'static str, fn(&mut Shared) -> Verdict);

const CRITERIA: [Criterion; 11] = [
    ("c01", "expansion oracle", c01_expansion_oracle),
    ("c02", "streaming equality", c02_streaming_equality),
    ("c03", "gradient checks", c03_gradient_checks),
    ("c05", "desk-scale learning", c05_desk_learning),
    ("c04", "freeze ladder", c04_freeze_ladder),
    ("c06", "adaptation benefit", c06_adaptation_benefit),
    ("c07", "encoder speaker-independence", c07_encoder_independence),
    ("c08", "length conservation", c08_length_conservation),
    ("c09", "griffin-lim monotonicity", c09_griffin_lim),
    ("c10", "determinism", c10_determinism),
    ("c11", "streaming latency law", c11_latency_law),
];

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared { scratch: tempfile::tempdir().expect("temp dir"), desk: None };
    let mut failed = Vec::new();
    let mut ran = 0;
    let stdout = std::io::stdout();
    for (id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        ran += 1;
        let verdict = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut shared)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let line = match &verdict {
            Ok(detail) => format!("PASS {id} {name}: {detail}"),
            Err(detail) => {
                failed.push(id);
                format!("FAIL {id} {name}: {detail}")
            }
        };
        let mut out = stdout.lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
    println!("acceptance: {}/{ran} passed", ran - failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
