//! The shared optimization loop: shuffled batches, periodic validation,
//! best-checkpoint selection, optional early stopping and a JSON-lines log.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdaptError, ModelSpec, TrainConfig};
use crate::corpus::{BatchStream, Manifest};
use crate::model::{AcousticModel, LossBreakdown, Sample};
use crate::nn::{apply_update, Adam, AdamConfig, Checkpoint, CheckpointMeta, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_loss: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest validation loss seen, including the evaluation before step 1.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<LogEntry>,
    /// Validation loss of the starting parameters.
    pub initial_valid_loss: f64,
}

impl TrainOutcome {
    pub fn best_valid_loss(&self) -> f64 {
        self.best.meta.valid_loss.expect("best checkpoint records its loss")
    }

    pub fn train_curve(&self) -> Vec<(u64, f64)> {
        self.log.iter().filter_map(|e| e.train_loss.map(|l| (e.step, l.total))).collect()
    }

    pub fn valid_curve(&self) -> Vec<(u64, f64)> {
        self.log.iter().filter_map(|e| e.valid_loss.map(|l| (e.step, l))).collect()
    }
}

/// Model-space samples for every record, optionally forcing one speaker id.
pub fn prepare_samples(
    model: &AcousticModel,
    manifest: &Manifest,
    speaker: Option<usize>,
) -> Result<Vec<Sample<f32>>, AdaptError> {
    let mels = manifest.load_mels()?;
    Ok(manifest.records.iter().zip(&mels).map(|(u, m)| Sample::from_utterance(model, u, m, speaker)).collect())
}

pub(crate) struct Run<'a> {
    pub model: &'a AcousticModel,
    pub spec: &'a ModelSpec,
    pub train_manifest: &'a Manifest,
    pub train: &'a [Sample<f32>],
    pub valid: &'a [Sample<f32>],
    pub config: &'a TrainConfig,
    pub run_dir: Option<&'a Path>,
}

fn checkpoint(spec: &ModelSpec, params: &ParamStore<f32>, step: u64, valid: Option<f64>, cfg: &TrainConfig) -> Checkpoint {
    Checkpoint {
        config: spec.to_json(),
        meta: CheckpointMeta { step, valid_loss: valid, seed: cfg.seed, threads: cfg.threads },
        params: params.clone(),
    }
}

impl Run<'_> {
    fn validate(&self, params: &ParamStore<f32>) -> Result<f64, AdaptError> {
        let (l, _) = self.model.compute_loss(params, self.valid, false)?;
        Ok(l.total)
    }

    pub fn execute(&self, mut params: ParamStore<f32>) -> Result<TrainOutcome, AdaptError> {
        let cfg = self.config;
        cfg.validate()?;
        if self.train.is_empty() || self.valid.is_empty() {
            return Err(AdaptError::Config("training and validation sets must be non-empty".into()));
        }
        let mut log_file = match self.run_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(BufWriter::new(File::create(dir.join("log.jsonl"))?))
            }
            None => None,
        };
        let mut log = Vec::new();
        let mut emit = |entry: LogEntry, log: &mut Vec<LogEntry>| -> Result<(), AdaptError> {
            if let Some(f) = log_file.as_mut() {
                serde_json::to_writer(&mut *f, &entry).map_err(|e| AdaptError::Config(e.to_string()))?;
                f.write_all(b"\n")?;
            }
            log.push(entry);
            Ok(())
        };

        let mut opt = Adam::new(
            &params,
            AdamConfig { lr: cfg.learning_rate, clip_norm: cfg.clip_norm, ..AdamConfig::default() },
        );
        let mut stream = BatchStream::new(self.train_manifest, cfg.batch_size, cfg.seed)?;

        let initial = self.validate(&params)?;
        if !initial.is_finite() {
            return Err(AdaptError::Divergence { step: 0, loss: initial });
        }
        emit(LogEntry { step: 0, train_loss: None, valid_loss: Some(initial) }, &mut log)?;
        let mut best = checkpoint(self.spec, &params, 0, Some(initial), cfg);
        let mut since_best = 0usize;

        let mut step = 0;
        while step < cfg.max_steps {
            step += 1;
            let batch: Vec<Sample<f32>> = stream.next_batch().into_iter().map(|i| self.train[i].clone()).collect();
            let (loss, grads) = self.model.compute_loss(&params, &batch, true)?;
            if !loss.is_finite() {
                return Err(AdaptError::Divergence { step, loss: loss.total });
            }
            apply_update(&mut params, &grads.expect("requested"), &cfg.freeze, &mut opt)?;
            let valid_loss = if step % cfg.validation_interval == 0 || step == cfg.max_steps {
                let v = self.validate(&params)?;
                if !v.is_finite() {
                    return Err(AdaptError::Divergence { step, loss: v });
                }
                Some(v)
            } else {
                None
            };
            emit(LogEntry { step, train_loss: Some(loss), valid_loss }, &mut log)?;
            if let Some(v) = valid_loss {
                if v < best.meta.valid_loss.expect("set") {
                    best = checkpoint(self.spec, &params, step, Some(v), cfg);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if cfg.patience.is_some_and(|p| since_best >= p) {
                        break;
                    }
                }
            }
        }
        let last_valid = log.iter().rev().find_map(|e| e.valid_loss);
        let last = checkpoint(self.spec, &params, step, last_valid, cfg);
        if let Some(dir) = self.run_dir {
            if let Some(f) = log_file.as_mut() {
                f.flush()?;
            }
            best.save(&dir.join("best.ckpt"))?;
            last.save(&dir.join("last.ckpt"))?;
        }
        Ok(TrainOutcome { best, last, log, initial_valid_loss: initial })
    }
}
