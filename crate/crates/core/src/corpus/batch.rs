//! Per-speaker train/valid split and globally shuffled batching.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Manifest, Utterance};

/// Holds out `round(fraction · n)` utterances of every speaker (at least one,
/// at most `n − 1`). Both halves keep the manifest's record order.
pub fn split_train_valid(manifest: &Manifest, valid_fraction: f64, seed: u64) -> Result<(Manifest, Manifest), CorpusError> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(CorpusError::Invalid(format!("valid_fraction {valid_fraction} not in (0, 1)")));
    }
    let mut by_speaker: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, u) in manifest.records.iter().enumerate() {
        by_speaker.entry(u.speaker_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut valid = vec![false; manifest.len()];
    for (spk, mut idx) in by_speaker {
        let n = idx.len();
        if n < 2 {
            let name = manifest.vocabs.speakers.name(spk).unwrap_or("?");
            return Err(CorpusError::Invalid(format!("speaker {name} has {n} utterance(s); a split needs 2")));
        }
        let k = ((valid_fraction * n as f64).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            valid[i] = true;
        }
    }
    let pick = |want: bool| Manifest {
        records: manifest.records.iter().zip(&valid).filter(|(_, &v)| v == want).map(|(u, _)| u.clone()).collect(),
        ..manifest.clone()
    };
    Ok((pick(false), pick(true)))
}

fn permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch)));
    order
}

/// One epoch of batches. Yields record indices through [`Batches::next_indices`]
/// or utterances through `Iterator`.
#[derive(Debug, Clone)]
pub struct Batches<'a> {
    manifest: &'a Manifest,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Batches<'a> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn next_indices(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(b)
    }
}

impl<'a> Iterator for Batches<'a> {
    type Item = Vec<&'a Utterance>;

    fn next(&mut self) -> Option<Self::Item> {
        let m = self.manifest;
        self.next_indices().map(|b| b.into_iter().map(|i| &m.records[i]).collect())
    }
}

/// Uniform permutation of all records seeded by `seed + epoch`, cut into
/// batches of `batch_size` (the last one may be short).
pub fn batch_iterator(manifest: &Manifest, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_>, CorpusError> {
    if batch_size == 0 {
        return Err(CorpusError::Invalid("batch_size must be at least 1".into()));
    }
    if manifest.is_empty() {
        return Err(CorpusError::Invalid("cannot batch an empty manifest".into()));
    }
    Ok(Batches { manifest, order: permutation(manifest.len(), seed, epoch), batch_size, pos: 0 })
}

/// Endless batch source that rolls over to the next epoch's permutation.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(manifest: &Manifest, batch_size: usize, seed: u64) -> Result<Self, CorpusError> {
        let first = batch_iterator(manifest, batch_size, seed, 0)?;
        Ok(Self { n: manifest.len(), batch_size, seed, epoch: 0, order: first.order, pos: 0 })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.epoch += 1;
            self.order = permutation(self.n, self.seed, self.epoch);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        b
    }
}
