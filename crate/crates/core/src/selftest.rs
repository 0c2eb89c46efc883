//! Embedded checks run by `adadurian selftest`: expansion oracle, streaming
//! equality, gradient checks and the freeze ladder.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptation::{adapt, train_average, verify_freeze, AdaptError, FreezeRung, TrainConfig};
use crate::corpus::{make_synthetic_corpus, split_train_valid, SynthSpec};
use crate::model::{end_to_end_grad_check, AcousticModel, ModelConfig};
use crate::nn::layers::{random_normal, Activation, CbhgSpec};
use crate::nn::{grad_check, FreezeSet, GroupName, LayerSpec, ParamStore};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    /// Skip checks that train.
    pub fast: bool,
    /// Flip one bit of a frozen tensor before verifying the ladder.
    pub corrupt_frozen: bool,
    pub seed: u64,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> CheckResult {
    let clock = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckResult { name, passed, detail, seconds: clock.elapsed().as_secs_f64() }
}

pub fn run(opts: SelftestOptions) -> Vec<CheckResult> {
    let mut out = vec![
        timed("expansion-oracle", || expansion_oracle(1000, opts.seed)),
        timed("streaming-equality", || streaming_equality(100, 200, opts.seed)),
        timed("gradient-checks", || gradient_checks(opts.seed)),
    ];
    if !opts.fast {
        out.push(timed("freeze-ladder", || freeze_ladder(opts.seed, opts.corrupt_frozen)));
    }
    out
}

/// Frame-by-frame reference: scan cumulative durations for each frame.
fn brute_expand(
    params: &ParamStore<f64>,
    states: &Array2<f64>,
    durations: &[u32],
    speaker: usize,
    emotion: usize,
    languages: &[usize],
) -> Array2<f64> {
    let table = |name: &str| params.value(params.id(name).expect("table")).clone();
    let (spk, emo, lang) = (table("speaker_embedding"), table("emotion_embedding"), table("language_embedding"));
    let total: u32 = durations.iter().sum();
    let mut rows = Vec::new();
    for f in 0..total {
        let (mut j, mut start) = (0, 0);
        while f >= start + durations[j] {
            start += durations[j];
            j += 1;
        }
        let mut row = states.row(j).to_vec();
        row.extend(spk.row(speaker));
        row.extend(emo.row(emotion));
        row.extend(lang.row(languages[j]));
        row.push((f - start + 1) as f64 / durations[j] as f64);
        rows.extend(row);
    }
    let width = rows.len() / total as usize;
    Array2::from_shape_vec((total as usize, width), rows).expect("rectangular")
}

pub fn expansion_oracle(cases: usize, seed: u64) -> Result<String, String> {
    let (m, ps) = AcousticModel::init::<f64>(&ModelConfig::tiny(2, 8), seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.random_range(1..=20);
        let states: Array2<f64> = random_normal(&mut rng, n, m.config.encoder_width);
        let durations: Vec<u32> = (0..n).map(|_| rng.random_range(1..=10)).collect();
        let langs: Vec<usize> = (0..n).map(|_| rng.random_range(0..m.config.n_languages)).collect();
        let spk = rng.random_range(0..m.config.n_speakers);
        let emo = rng.random_range(0..m.config.n_emotions);
        let got = m.expand_states(&ps, &states, &durations, spk, emo, &langs).map_err(|e| e.to_string())?;
        if got != brute_expand(&ps, &states, &durations, spk, emo, &langs) {
            return Err(format!("case {case} differs from the per-frame reference"));
        }
    }
    Ok(format!("{cases} cases exact"))
}

pub fn streaming_equality(cases: usize, frames: usize, seed: u64) -> Result<String, String> {
    let (m, ps) = AcousticModel::init::<f32>(&ModelConfig::default(), seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f32;
    for _ in 0..cases {
        let coarse: Array2<f32> = random_normal(&mut rng, frames, m.config.n_mels);
        let offline = m.postnet_offline(&ps, &coarse).map_err(|e| e.to_string())?;
        let (streamed, _) = m.postnet_stream_all(&ps, &coarse).map_err(|e| e.to_string())?;
        let diff = (&offline - &streamed).iter().fold(0.0f32, |a, d| a.max(d.abs()));
        worst = worst.max(diff);
    }
    if worst <= 1e-6 {
        Ok(format!("max abs diff {worst:e}"))
    } else {
        Err(format!("max abs diff {worst:e} > 1e-6"))
    }
}

pub fn gradient_checks(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rnd = |r, c| -> Array2<f64> { random_normal(&mut rng, r, c) };
    let cases = vec![
        ("fully_connected", LayerSpec::FullyConnected { input: 5, output: 4, activation: Activation::Relu }, vec![rnd(3, 5)]),
        ("embedding", LayerSpec::Embedding { vocab: 6, dim: 3 }, vec![Array2::from_shape_vec((3, 1), vec![1.0, 4.0, 1.0]).unwrap()]),
        ("lstm", LayerSpec::Lstm { input: 3, hidden: 4 }, vec![rnd(5, 3)]),
        ("bilstm", LayerSpec::BiLstm { input: 3, hidden: 2 }, vec![rnd(4, 3)]),
        ("residual_lstm", LayerSpec::ResidualLstm { width: 4 }, vec![rnd(5, 4)]),
        (
            "cbhg",
            LayerSpec::Cbhg(CbhgSpec { input: 4, width: 6, bank_size: 3, bank_channels: 2, highway_layers: 2 }),
            vec![rnd(5, 4)],
        ),
        (
            "attention",
            LayerSpec::Attention { query: 3, memory: 4, depth: 5, half_width: 2, center: 3 },
            vec![rnd(1, 3), rnd(7, 4)],
        ),
    ];
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (name, spec, inputs) in cases {
        let mut store = ParamStore::<f64>::new();
        let layer = spec.build(&mut store, GroupName::Decoder, seed).map_err(|e| e.to_string())?;
        let err = grad_check(&layer, &store, &inputs, 1e-4, seed).map_err(|e| format!("{name}: {e}"))?;
        worst = worst.max(err);
        parts.push(format!("{name} {err:.1e}"));
    }
    let groups = end_to_end_grad_check(seed, 1e-4).map_err(|e| format!("end-to-end: {e}"))?;
    let e2e = groups.values().fold(0.0f64, |a, &b| a.max(b));
    worst = worst.max(e2e);
    parts.push(format!("end_to_end {e2e:.1e}"));
    let detail = parts.join(", ");
    if worst <= 1e-3 {
        Ok(detail)
    } else {
        Err(format!("max relative error {worst:.2e} > 1e-3 ({detail})"))
    }
}

struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> std::io::Result<Self> {
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.subsec_nanos());
        let dir = std::env::temp_dir().join(format!("adadurian-{tag}-{}-{nanos}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        Ok(Self(dir))
    }

    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

/// Four rungs of 50 adaptation steps each on a small model; every frozen
/// group must come back bit-identical and every other group must move.
pub fn freeze_ladder(seed: u64, corrupt_frozen: bool) -> Result<String, String> {
    let run = || -> Result<String, AdaptError> {
        let tmp = Scratch::new("selftest")?;
        let small = SynthSpec {
            n_speakers: 2,
            n_utterances_per_speaker: 4,
            phone_inventory_size: 8,
            duration_range: (2, 4),
            phonemes_per_utterance: (2, 4),
            seed,
            ..SynthSpec::default()
        };
        let avg = make_synthetic_corpus(&small, &tmp.path().join("avg"))?;
        let (t, v) = split_train_valid(&avg, 0.25, seed)?;
        let cfg = TrainConfig { batch_size: 2, max_steps: 5, validation_interval: 5, seed, ..TrainConfig::average() };
        let base = train_average(&t, &v, &ModelConfig::tiny(2, 8), &cfg, None)?.best;
        let new_spec = SynthSpec { n_speakers: 1, first_speaker: 2, n_utterances_per_speaker: 10, ..small };
        let new = make_synthetic_corpus(&new_spec, &tmp.path().join("new"))?;
        let (t, v) = split_train_valid(&new, 0.2, seed)?;

        let mut prev = None;
        for rung in FreezeRung::ALL {
            let freeze = rung.freeze_set();
            if let Some(p) = &prev {
                let p: &FreezeSet = p;
                if !p.is_subset(&freeze) || p.len() >= freeze.len() {
                    return Err(AdaptError::Config(format!("rung {rung} does not extend the previous rung")));
                }
            }
            let cfg = TrainConfig {
                freeze: freeze.clone(),
                max_steps: 50,
                patience: None,
                seed,
                ..TrainConfig::adaptation(freeze.clone())
            };
            let out = adapt(&base, &t, &v, &cfg, None)?;
            let mut after = out.run.last.clone();
            if corrupt_frozen && rung == FreezeRung::Encoder {
                let id = after.params.id("phone_embedding").expect("phone table");
                let x = &mut after.params.value_mut(id)[[0, 0]];
                *x = f32::from_bits(x.to_bits() ^ 1);
            }
            let report = verify_freeze(&out.start, &after, &freeze)?;
            for (g, d) in &report.groups {
                if !d.frozen && !d.changed {
                    return Err(AdaptError::Config(format!("rung {rung}: trainable group {g} did not change")));
                }
            }
            prev = Some(freeze);
        }
        Ok("4 rungs x 50 steps, frozen groups bit-identical, others moved, rungs nested".into())
    };
    run().map_err(|e| e.to_string())
}
