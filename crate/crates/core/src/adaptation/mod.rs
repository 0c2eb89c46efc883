//! Average-model training, few-shot speaker adaptation under a freeze set,
//! the two-stage emotion transfer recipe, and freeze verification.

mod config;
mod report;
mod train;

pub use config::{FreezeRung, ModelSpec, SpeakerInit, TrainConfig, VocabNames};
pub use report::{verify_freeze, AdaptReport, GroupDelta};
pub use train::{prepare_samples, LogEntry, TrainOutcome};

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};

use crate::corpus::{CorpusError, Manifest};
use crate::model::{AcousticModel, MelNorm, ModelConfig, ModelError};
use crate::nn::{Checkpoint, CheckpointMeta, GroupName, NnError};

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("{0}")]
    Config(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("frozen tensor {tensor} (group {group}) changed")]
    FreezeViolation { tensor: String, group: GroupName },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn write_json(dir: Option<&Path>, name: &str, value: &impl serde::Serialize) -> Result<(), AdaptError> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| AdaptError::Config(e.to_string()))?;
        fs::write(dir.join(name), text + "\n")?;
    }
    Ok(())
}

/// Trains a multi-speaker model from scratch on globally shuffled batches
/// and returns the lowest-validation-loss checkpoint.
pub fn train_average(
    train: &Manifest,
    valid: &Manifest,
    model_config: &ModelConfig,
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome, AdaptError> {
    config.validate()?;
    if train.vocabs != valid.vocabs {
        return Err(AdaptError::Config("train and valid manifests use different vocabularies".into()));
    }
    if train.speaker_ids().len() < 2 {
        eprintln!("warning: training an average model on a single speaker");
    }
    let mels = train.load_mels()?;
    let mut mc = model_config.clone().with_vocabs(&train.vocabs);
    mc.n_mels = train.signal.n_mels;
    mc.mel_norm = MelNorm::fit(&mels, mc.n_mels);
    let spec = ModelSpec { model: mc, vocabs: VocabNames::from_vocabs(&train.vocabs), signal: train.signal };
    write_json(run_dir, "config.json", &serde_json::json!({ "command": "train_average", "train": config, "spec": spec }))?;

    let (model, params) = AcousticModel::init::<f32>(&spec.model, config.seed)?;
    let train_samples = prepare_samples(&model, train, None)?;
    let valid_samples = prepare_samples(&model, valid, None)?;
    train::Run {
        model: &model,
        spec: &spec,
        train_manifest: train,
        train: &train_samples,
        valid: &valid_samples,
        config,
        run_dir,
    }
    .execute(params)
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Base parameters with the new speaker row, before any update.
    pub start: Checkpoint,
    pub run: TrainOutcome,
    pub report: AdaptReport,
    pub speaker_id: usize,
}

/// Adds the manifest's speaker to `base` (or reuses its row when the name
/// is known) and returns the adaptation starting point.
pub fn prepare_adaptation(
    base: &Checkpoint,
    data: &Manifest,
    init: SpeakerInit,
) -> Result<(ModelSpec, Checkpoint, usize), AdaptError> {
    let mut spec = ModelSpec::from_json(&base.config)?;
    spec.vocabs.check_compatible(&data.vocabs)?;
    let speakers = data.speaker_ids();
    let [local] = speakers.as_slice() else {
        return Err(AdaptError::Config(format!("adaptation data must hold one speaker, found {}", speakers.len())));
    };
    let name = data.vocabs.speakers.name(*local).unwrap_or("new").to_string();
    let mut params = base.params.clone();
    let model = AcousticModel::bind(&spec.model, &params)?;
    let speaker_id = match spec.vocabs.speakers.iter().position(|s| *s == name) {
        Some(id) => id,
        None => {
            let table = model.speaker_table();
            let old = params.value(table).clone();
            let row = match init {
                SpeakerInit::Mean => old.mean_axis(Axis(0)).expect("at least one speaker").insert_axis(Axis(0)),
                SpeakerInit::Zero => Array2::zeros((1, old.ncols())),
            };
            params.replace(table, concatenate(Axis(0), &[old.view(), row.view()]).expect("same width"));
            spec.model.n_speakers += 1;
            spec.vocabs.speakers.push(name);
            spec.model.n_speakers - 1
        }
    };
    let start = Checkpoint {
        config: spec.to_json(),
        meta: CheckpointMeta { step: 0, valid_loss: None, seed: base.meta.seed, threads: base.meta.threads },
        params,
    };
    Ok((spec, start, speaker_id))
}

/// Fine-tunes `base` on one new speaker with the groups in
/// `config.freeze` held fixed, and proves the freeze on the selected
/// checkpoint.
pub fn adapt(
    base: &Checkpoint,
    train: &Manifest,
    valid: &Manifest,
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<AdaptOutcome, AdaptError> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(AdaptError::Config("adaptation data is empty".into()));
    }
    let declared: Vec<GroupName> = base.params.groups().into_iter().collect();
    if let Some(g) = config.freeze.iter().find(|g| !declared.contains(g)) {
        return Err(AdaptError::Nn(NnError::UnknownGroup(g.to_string())));
    }
    let mut both = train.clone();
    both.records.extend(valid.records.iter().cloned());
    let (spec, start, speaker_id) = prepare_adaptation(base, &both, config.new_speaker_init)?;
    write_json(run_dir, "config.json", &serde_json::json!({ "command": "adapt", "train": config, "spec": spec }))?;

    let model = AcousticModel::bind(&spec.model, &start.params)?;
    let train_samples = prepare_samples(&model, train, Some(speaker_id))?;
    let valid_samples = prepare_samples(&model, valid, Some(speaker_id))?;
    let run = train::Run {
        model: &model,
        spec: &spec,
        train_manifest: train,
        train: &train_samples,
        valid: &valid_samples,
        config,
        run_dir,
    }
    .execute(start.params.clone())?;

    verify_freeze(&start, &run.last, &config.freeze)?;
    let mut report = verify_freeze(&start, &run.best, &config.freeze)?;
    report.zero_shot_valid_loss = Some(run.initial_valid_loss);
    report.train_curve = run.train_curve();
    report.valid_curve = run.valid_curve();
    write_json(run_dir, "adapt_report.json", &report)?;
    Ok(AdaptOutcome { start, run, report, speaker_id })
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub emotional: AdaptOutcome,
    pub target: AdaptOutcome,
}

/// Stage 1 fine-tunes the average model on a multi-emotion corpus with
/// `stage1.freeze`; stage 2 adapts the result to a neutral-only target
/// speaker with `stage2.freeze`.
#[allow(clippy::too_many_arguments)]
pub fn transfer_emotion(
    base: &Checkpoint,
    emotional: (&Manifest, &Manifest),
    target: (&Manifest, &Manifest),
    stage1: &TrainConfig,
    stage2: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TransferOutcome, AdaptError> {
    if emotional.0.emotion_ids().len() < 2 {
        return Err(AdaptError::Config("emotional corpus needs at least two emotions".into()));
    }
    if target.0.emotion_ids().len() != 1 {
        return Err(AdaptError::Config("target corpus must hold a single emotion".into()));
    }
    let sub = |s: &str| run_dir.map(|d| d.join(s));
    let first = adapt(base, emotional.0, emotional.1, stage1, sub("stage1").as_deref())?;
    let second = adapt(&first.run.best, target.0, target.1, stage2, sub("stage2").as_deref())?;
    if let Some(dir) = run_dir {
        second.run.best.save(&dir.join("best.ckpt"))?;
    }
    Ok(TransferOutcome { emotional: first, target: second })
}

/// Mean over frames of the per-frame L1 distance between two mels of equal
/// shape.
pub fn mel_distance(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "mel shapes differ");
    if a.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum();
    total / a.nrows() as f64
}

/// Contrast of a transferred model: the mean distance between renderings
/// of the same tokens under each pair of distinct emotion ids, and the
/// distance between two repeated renderings under one id.
pub fn emotion_contrast(
    model: &AcousticModel,
    params: &crate::nn::ParamStore<f32>,
    tokens: &[crate::corpus::LinguisticToken],
    durations: &[u32],
    speaker: usize,
    emotions: &[usize],
) -> Result<(f64, f64), ModelError> {
    let render = |emotion| {
        let req = crate::model::SynthRequest { tokens, speaker, emotion, durations: Some(durations) };
        model.synthesize(params, &req).map(|s| s.mel)
    };
    let mels = emotions.iter().map(|&e| render(e)).collect::<Result<Vec<_>, _>>()?;
    let (mut sum, mut pairs) = (0.0, 0);
    for i in 0..mels.len() {
        for j in i + 1..mels.len() {
            sum += mel_distance(&mels[i], &mels[j]);
            pairs += 1;
        }
    }
    let repeat = mel_distance(&mels[0], &render(emotions[0])?);
    Ok((if pairs > 0 { sum / pairs as f64 } else { 0.0 }, repeat))
}
