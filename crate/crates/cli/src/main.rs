use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use adadurian::adaptation::{
    adapt, train_average, transfer_emotion, AdaptError, FreezeRung, ModelSpec, SpeakerInit, TrainConfig,
};
use adadurian::bench::{bench_rtf, BenchError, BenchOptions};
use adadurian::corpus::{
    load_manifest, make_synthetic_corpus, parse_request_line, split_train_valid, CorpusError, LinguisticToken,
    Manifest, SynthSpec, Vocab,
};
use adadurian::dsp::{self, io as dspio, DspError, MelSpectrogram, SignalConfig};
use adadurian::model::{AcousticModel, ModelConfig, ModelError, SynthRequest};
use adadurian::nn::{Checkpoint, FreezeSet, NnError};
use adadurian::selftest::{self, SelftestOptions};

#[derive(Parser, Debug)]
#[command(name = "adadurian", version, about = "Duration-informed TTS: corpus, training, adaptation, synthesis")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, env = "ADADURIAN_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic multi-speaker corpus.
    MakeCorpus(MakeCorpusArgs),
    /// Train an average model from scratch.
    TrainAverage(TrainAverageArgs),
    /// Adapt a trained model to one new speaker.
    Adapt(AdaptArgs),
    /// Emotional fine-tuning followed by target-speaker adaptation.
    TransferEmotion(TransferArgs),
    /// Token file to mel and WAV files.
    Synthesize(SynthArgs),
    /// Measure the real-time factor of the synthesis path.
    BenchRtf(BenchArgs),
    /// Run the embedded checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct MakeCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utts: Option<usize>,
    #[arg(long)]
    first_speaker: Option<usize>,
    /// Comma-separated emotion names, assigned round-robin.
    #[arg(long, value_delimiter = ',')]
    emotions: Option<Vec<String>>,
    #[arg(long)]
    phones: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    validation_interval: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainAverageArgs {
    #[arg(long)]
    train: PathBuf,
    /// Held-out manifest; without it a per-speaker split of `--train` is used.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    valid_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    /// Use the full-size layer widths.
    #[arg(long)]
    paper_scale: bool,
    #[command(flatten)]
    train_flags: TrainFlags,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    /// nothing, +phone, +tone_lang or +encoder.
    #[arg(long, conflicts_with = "freeze")]
    freeze_rung: Option<String>,
    /// Explicit comma-separated group names.
    #[arg(long, value_delimiter = ',')]
    freeze: Option<Vec<String>>,
    #[arg(long, value_parser = ["mean", "zero"])]
    init: Option<String>,
    #[command(flatten)]
    train_flags: TrainFlags,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[arg(long)]
    base: PathBuf,
    /// Multi-emotion corpus of one speaker.
    #[arg(long)]
    emotional: PathBuf,
    /// Single-emotion corpus of the target speaker.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    valid_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stage1_steps: Option<u64>,
    #[arg(long)]
    stage2_steps: Option<u64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One utterance per line: tokens, optionally a tab and durations.
    #[arg(long)]
    input: PathBuf,
    /// Speaker name or id.
    #[arg(long)]
    speaker: Option<String>,
    /// Emotion name or id.
    #[arg(long)]
    emotion: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    speaker: Option<String>,
    #[arg(long)]
    emotion: Option<String>,
    #[arg(long, default_value_t = 2)]
    threads: usize,
    /// Benchmark each input line this many times.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Griffin-Lim iterations for the separate vocoder timing; 0 skips it.
    #[arg(long, default_value_t = 32)]
    gl_iters: usize,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Skip the training-based checks.
    #[arg(long)]
    fast: bool,
    /// Debug hook: flip a bit of a frozen tensor before the ladder check.
    #[arg(long, hide = true)]
    corrupt_frozen: bool,
}

/// Settings read from `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    signal: Option<SignalConfig>,
    corpus: Option<SynthSpec>,
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    adapt: Option<TrainConfig>,
}

/// Fully resolved settings of one command, written before it runs.
#[derive(Debug, Clone, Serialize)]
struct CliConfig {
    command: &'static str,
    seed: u64,
    threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<SynthSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    train: Vec<TrainConfig>,
    paths: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Divergence(String),
    Freeze(String),
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Check(_) => 1,
            CliError::Divergence(_) => 3,
            CliError::Freeze(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Divergence(m) | CliError::Freeze(m) | CliError::Check(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DspError> for CliError {
    fn from(e: DspError) -> Self {
        match e {
            DspError::Io(_) | DspError::Wav(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => CliError::Io(e.to_string()),
            CorpusError::Dsp(d) => d.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AdaptError> for CliError {
    fn from(e: AdaptError) -> Self {
        match e {
            AdaptError::Divergence { .. } => CliError::Divergence(e.to_string()),
            AdaptError::FreezeViolation { .. } => CliError::Freeze(e.to_string()),
            AdaptError::Io(_) => CliError::Io(e.to_string()),
            AdaptError::Corpus(c) => c.into(),
            AdaptError::Nn(n) => n.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Dsp(d) => d.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    json: bool,
    seed: u64,
    file: FileConfig,
}

impl Ctx {
    fn emit(&self, value: &serde_json::Value, human: impl FnOnce() -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value).expect("json value"));
        } else {
            println!("{}", human());
        }
    }
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn load(path: &Path, what: &str) -> Result<Manifest> {
    require_file(path, what)?;
    Ok(load_manifest(path)?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    Checkpoint::load(path).map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))
}

fn write_resolved(dir: &Path, cfg: &CliConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let text = serde_json::to_string_pretty(cfg).expect("plain data");
    fs::write(dir.join("cli_config.json"), text + "\n")
        .map_err(|e| CliError::Io(format!("cannot write to {}: {e}", dir.display())))
}

fn paths(items: &[(&str, &Path)]) -> serde_json::Map<String, serde_json::Value> {
    items.iter().map(|(k, p)| (k.to_string(), serde_json::Value::from(p.display().to_string()))).collect()
}

fn apply_train_flags(mut cfg: TrainConfig, f: &TrainFlags, seed: u64) -> TrainConfig {
    cfg.seed = seed;
    if let Some(v) = f.steps {
        cfg.max_steps = v;
    }
    if let Some(v) = f.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = f.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = f.validation_interval {
        cfg.validation_interval = v;
    }
    if f.patience.is_some() {
        cfg.patience = f.patience;
    }
    cfg
}

/// Explicit validation manifest, or a seeded per-speaker split.
fn train_valid(train: &Path, valid: Option<&Path>, fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    let t = load(train, "train manifest")?;
    match valid {
        Some(v) => Ok((t, load(v, "valid manifest")?)),
        None => Ok(split_train_valid(&t, fraction, seed)?),
    }
}

fn cmd_make_corpus(ctx: &Ctx, a: &MakeCorpusArgs) -> Result<()> {
    let mut spec = ctx.file.corpus.clone().unwrap_or_default();
    spec.seed = ctx.seed;
    if let Some(s) = ctx.file.signal {
        spec.signal = s;
    }
    if let Some(v) = a.speakers {
        spec.n_speakers = v;
    }
    if let Some(v) = a.utts {
        spec.n_utterances_per_speaker = v;
    }
    if let Some(v) = a.first_speaker {
        spec.first_speaker = v;
    }
    if let Some(v) = &a.emotions {
        spec.emotions_used = v.clone();
    }
    if let Some(v) = a.phones {
        spec.phone_inventory_size = v;
    }
    spec.validate()?;
    let cfg = CliConfig {
        command: "make-corpus",
        seed: ctx.seed,
        threads: 1,
        corpus: Some(spec.clone()),
        model: None,
        train: vec![],
        paths: paths(&[("out", &a.out)]),
    };
    write_resolved(&a.out, &cfg)?;
    let m = make_synthetic_corpus(&spec, &a.out)?;
    let manifest = a.out.join("manifest.tsv");
    let frames: u64 = m.records.iter().map(|u| u.num_frames()).sum();
    ctx.emit(
        &serde_json::json!({ "manifest": manifest, "records": m.len(), "speakers": m.speaker_ids().len(), "frames": frames }),
        || format!("{} ({} records, {} frames)", manifest.display(), m.len(), frames),
    );
    Ok(())
}

fn cmd_train_average(ctx: &Ctx, a: &TrainAverageArgs) -> Result<()> {
    let model = if a.paper_scale {
        ModelConfig::paper_scale()
    } else {
        ctx.file.model.clone().unwrap_or_default()
    };
    let base = ctx.file.train.clone().unwrap_or_else(TrainConfig::average);
    let mut train_cfg = apply_train_flags(base, &a.train_flags, ctx.seed);
    train_cfg.threads = ctx.file.threads.unwrap_or(1);
    train_cfg.validate()?;
    model.validate()?;
    let (train, valid) = train_valid(&a.train, a.valid.as_deref(), a.valid_fraction, ctx.seed)?;
    let mut p = paths(&[("train", &a.train), ("out", &a.out)]);
    if let Some(v) = &a.valid {
        p.extend(paths(&[("valid", v)]));
    }
    let cfg = CliConfig {
        command: "train-average",
        seed: ctx.seed,
        threads: train_cfg.threads,
        corpus: None,
        model: Some(model.clone()),
        train: vec![train_cfg.clone()],
        paths: p,
    };
    write_resolved(&a.out, &cfg)?;
    let out = train_average(&train, &valid, &model, &train_cfg, Some(&a.out))?;
    let best = a.out.join("best.ckpt");
    ctx.emit(
        &serde_json::json!({
            "best_checkpoint": best,
            "best_step": out.best.meta.step,
            "best_valid_loss": out.best_valid_loss(),
            "initial_valid_loss": out.initial_valid_loss,
            "steps": out.last.meta.step,
        }),
        || format!("best step {} valid loss {:.4} -> {}", out.best.meta.step, out.best_valid_loss(), best.display()),
    );
    Ok(())
}

fn parse_freeze(a: &AdaptArgs) -> Result<FreezeSet> {
    match (&a.freeze_rung, &a.freeze) {
        (Some(r), _) => Ok(r.parse::<FreezeRung>()?.freeze_set()),
        (None, Some(groups)) => Ok(FreezeSet::parse(groups)?),
        (None, None) => Ok(FreezeRung::Encoder.freeze_set()),
    }
}

fn cmd_adapt(ctx: &Ctx, a: &AdaptArgs) -> Result<()> {
    let freeze = parse_freeze(a)?;
    let base_cfg = ctx.file.adapt.clone().unwrap_or_else(|| TrainConfig::adaptation(freeze.clone()));
    let mut cfg = apply_train_flags(base_cfg, &a.train_flags, ctx.seed);
    cfg.freeze = freeze;
    cfg.threads = ctx.file.threads.unwrap_or(1);
    if let Some(i) = &a.init {
        cfg.new_speaker_init = if i == "zero" { SpeakerInit::Zero } else { SpeakerInit::Mean };
    }
    cfg.validate()?;
    let base = load_checkpoint(&a.base)?;
    let (train, valid) = train_valid(&a.train, a.valid.as_deref(), a.valid_fraction, ctx.seed)?;
    let resolved = CliConfig {
        command: "adapt",
        seed: ctx.seed,
        threads: cfg.threads,
        corpus: None,
        model: None,
        train: vec![cfg.clone()],
        paths: paths(&[("base", &a.base), ("train", &a.train), ("out", &a.out)]),
    };
    write_resolved(&a.out, &resolved)?;
    let out = adapt(&base, &train, &valid, &cfg, Some(&a.out))?;
    let r = &out.report;
    ctx.emit(&serde_json::to_value(r).expect("report"), || {
        let changed: Vec<String> = r.changed_groups().iter().map(|g| g.to_string()).collect();
        let unchanged: Vec<String> = r.unchanged_groups().iter().map(|g| g.to_string()).collect();
        format!(
            "selected step {} valid loss {:.4} (zero-shot {:.4})\nchanged: {}\nunchanged: {}",
            r.selected_step,
            r.best_valid_loss.unwrap_or(f64::NAN),
            r.zero_shot_valid_loss.unwrap_or(f64::NAN),
            changed.join(", "),
            unchanged.join(", ")
        )
    });
    Ok(())
}

fn cmd_transfer(ctx: &Ctx, a: &TransferArgs) -> Result<()> {
    let base = load_checkpoint(&a.base)?;
    let emotional = load(&a.emotional, "emotional manifest")?;
    let target = load(&a.target, "target manifest")?;
    let (et, ev) = split_train_valid(&emotional, a.valid_fraction, ctx.seed)?;
    let (tt, tv) = split_train_valid(&target, a.valid_fraction, ctx.seed)?;
    let threads = ctx.file.threads.unwrap_or(1);
    let mut s1 = TrainConfig { seed: ctx.seed, threads, ..TrainConfig::adaptation(FreezeSet::none()) };
    let mut s2 = TrainConfig { seed: ctx.seed, threads, ..TrainConfig::adaptation(FreezeRung::Encoder.freeze_set()) };
    if let Some(v) = a.stage1_steps {
        s1.max_steps = v;
    }
    if let Some(v) = a.stage2_steps {
        s2.max_steps = v;
    }
    let resolved = CliConfig {
        command: "transfer-emotion",
        seed: ctx.seed,
        threads,
        corpus: None,
        model: None,
        train: vec![s1.clone(), s2.clone()],
        paths: paths(&[("base", &a.base), ("emotional", &a.emotional), ("target", &a.target), ("out", &a.out)]),
    };
    write_resolved(&a.out, &resolved)?;
    let out = transfer_emotion(&base, (&et, &ev), (&tt, &tv), &s1, &s2, Some(&a.out))?;
    let best = a.out.join("best.ckpt");
    ctx.emit(
        &serde_json::json!({
            "best_checkpoint": best,
            "stage1_best_valid_loss": out.emotional.run.best_valid_loss(),
            "stage2_best_valid_loss": out.target.run.best_valid_loss(),
            "stage2_zero_shot_valid_loss": out.target.run.initial_valid_loss,
        }),
        || format!("stage 2 valid loss {:.4} -> {}", out.target.run.best_valid_loss(), best.display()),
    );
    Ok(())
}

fn lookup(v: &Vocab, what: &str, given: Option<&str>, default: usize) -> Result<usize> {
    let id = match given {
        None => default,
        Some(s) => match v.id(s) {
            Some(id) => id,
            None => s.parse::<usize>().map_err(|_| CliError::Config(format!("unknown {what} `{s}`")))?,
        },
    };
    if id >= v.len() {
        return Err(CliError::Config(format!("{what} id {id} out of range (0..{})", v.len())));
    }
    Ok(id)
}

struct Loaded {
    spec: ModelSpec,
    model: AcousticModel,
    ckpt: Checkpoint,
    lines: Vec<(Vec<LinguisticToken>, Option<Vec<u32>>)>,
    speaker: usize,
    emotion: usize,
}

fn load_for_synthesis(checkpoint: &Path, input: &Path, speaker: Option<&str>, emotion: Option<&str>) -> Result<Loaded> {
    let ckpt = load_checkpoint(checkpoint)?;
    let spec = ModelSpec::from_json(&ckpt.config)?;
    let model = AcousticModel::bind(&spec.model, &ckpt.params)?;
    let vocabs = spec.vocabs.to_vocabs();
    require_file(input, "input")?;
    let text = fs::read_to_string(input)?;
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        lines.push(parse_request_line(line, &vocabs, i + 1)?);
    }
    if lines.is_empty() {
        return Err(CliError::Config(format!("{} has no utterances", input.display())));
    }
    let neutral = vocabs.emotions.id("neutral").unwrap_or(0);
    let speaker = lookup(&vocabs.speakers, "speaker", speaker, 0)?;
    let emotion = lookup(&vocabs.emotions, "emotion", emotion, neutral)?;
    Ok(Loaded { spec, model, ckpt, lines, speaker, emotion })
}

fn cmd_synthesize(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let l = load_for_synthesis(&a.checkpoint, &a.input, a.speaker.as_deref(), a.emotion.as_deref())?;
    let resolved = CliConfig {
        command: "synthesize",
        seed: ctx.seed,
        threads: 1,
        corpus: None,
        model: Some(l.spec.model.clone()),
        train: vec![],
        paths: paths(&[("checkpoint", &a.checkpoint), ("input", &a.input), ("out", &a.out)]),
    };
    write_resolved(&a.out, &resolved)?;
    let signal = SignalConfig { n_mels: l.spec.model.n_mels, ..l.spec.signal };
    let mut rows = Vec::new();
    for (k, (tokens, durations)) in l.lines.iter().enumerate() {
        let req = SynthRequest { tokens, speaker: l.speaker, emotion: l.emotion, durations: durations.as_deref() };
        let s = l.model.synthesize(&l.ckpt.params, &req)?;
        let mel = MelSpectrogram::new(s.mel.mapv(f64::from), signal);
        let wave = dsp::vocode(&mel, a.gl_iters, ctx.seed)?;
        let stem = format!("{:04}", k + 1);
        dspio::write_mel(&a.out.join(format!("{stem}.mel")), &mel)?;
        dspio::write_wav(&a.out.join(format!("{stem}.wav")), &wave)?;
        rows.push(serde_json::json!({
            "utterance": stem,
            "frames": s.mel.nrows(),
            "samples": wave.len(),
            "durations": s.durations,
            "predicted_durations": s.predicted,
        }));
    }
    ctx.emit(&serde_json::Value::from(rows.clone()), || {
        rows.iter()
            .map(|r| format!("{} frames={} durations={}", r["utterance"].as_str().unwrap_or(""), r["frames"], r["durations"]))
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(())
}

fn cmd_bench(ctx: &Ctx, a: &BenchArgs) -> Result<()> {
    let l = load_for_synthesis(&a.checkpoint, &a.input, a.speaker.as_deref(), a.emotion.as_deref())?;
    let requests: Vec<SynthRequest<'_>> = (0..a.repeat.max(1))
        .flat_map(|_| l.lines.iter())
        .map(|(tokens, durations)| SynthRequest {
            tokens,
            speaker: l.speaker,
            emotion: l.emotion,
            durations: durations.as_deref(),
        })
        .collect();
    let signal = SignalConfig { n_mels: l.spec.model.n_mels, ..l.spec.signal };
    let opts = BenchOptions { threads: a.threads, griffin_lim_iters: a.gl_iters, seed: ctx.seed };
    let report = bench_rtf(&l.model, &l.ckpt.params, &requests, &signal, &opts)?;
    let value = serde_json::to_value(&report).expect("report");
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&value).expect("json") + "\n")?;
    }
    ctx.emit(&value, || {
        let s = &report.stages;
        format!(
            "RTF {:.2} ({:.2} s audio in {:.3} s, {} threads)\nstages: encode {:.4} duration {:.4} expand {:.4} decode {:.4} postnet {:.4}\nfirst-frame latency {} frames (D={} + r={})\ngriffin-lim {}",
            report.rtf,
            report.audio_seconds,
            report.compute_seconds,
            report.threads,
            s.encode,
            s.duration,
            s.expand,
            s.decode,
            s.postnet,
            report.first_frame_latency_frames,
            report.postnet_delay,
            report.frames_per_step,
            report.griffin_lim_seconds.map_or("skipped".into(), |g| format!("{g:.3} s")),
        )
    });
    Ok(())
}

fn cmd_selftest(ctx: &Ctx, a: &SelftestArgs) -> Result<()> {
    let results = selftest::run(SelftestOptions { fast: a.fast, corrupt_frozen: a.corrupt_frozen, seed: ctx.seed });
    ctx.emit(&serde_json::to_value(&results).expect("results"), || {
        results
            .iter()
            .map(|r| format!("{:<20} {}  {:>7.2}s  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.seconds, r.detail))
            .collect::<Vec<_>>()
            .join("\n")
    });
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("failed: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = read_file_config(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(7);
    let ctx = Ctx { json: cli.json, seed, file };
    match &cli.command {
        Command::MakeCorpus(a) => cmd_make_corpus(&ctx, a),
        Command::TrainAverage(a) => cmd_train_average(&ctx, a),
        Command::Adapt(a) => cmd_adapt(&ctx, a),
        Command::TransferEmotion(a) => cmd_transfer(&ctx, a),
        Command::Synthesize(a) => cmd_synthesize(&ctx, a),
        Command::BenchRtf(a) => cmd_bench(&ctx, a),
        Command::Selftest(a) => cmd_selftest(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
