//! Finite-difference check of the full training loss, one parameter group at
//! a time.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AcousticModel, ModelConfig, ModelError, Sample};
use crate::corpus::{LinguisticToken, TokenKind};
use crate::nn::layers::random_normal;
use crate::nn::probe::check_directions_masked;
use crate::nn::{GroupName, NnError, ParamStore, Tape};

/// Two phonemes around a boundary, `r = 2`, width 8, in `f64`.
pub fn tiny_case(seed: u64) -> Result<(AcousticModel, ParamStore<f64>, Sample<f64>), ModelError> {
    let config = ModelConfig::tiny(2, 8);
    let (model, mut params) = AcousticModel::init::<f64>(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Zero biases put ReLUs fed by the all-zero first decoder input exactly
    // on their kink; move to a generic point.
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if params.value(id).iter().all(|&v| v == 0.0) {
            let (r, c) = params.value(id).dim();
            let noise: Array2<f64> = random_normal(&mut rng, r, c);
            params.replace(id, noise * 0.1);
        }
    }
    let boundary = LinguisticToken { kind: TokenKind::ProsodicBoundary, phone_id: 0, tone_stress_id: 0, language_id: 0 };
    let tokens = vec![LinguisticToken::phoneme(1, 1, 0), boundary, LinguisticToken::phoneme(3, 2, 1)];
    let durations = vec![2, 3];
    let target: Array2<f64> = random_normal(&mut rng, 5, config.n_mels);
    let sample = Sample { tokens, durations, speaker: 1, emotion: 1, languages: vec![0, 1], target };
    Ok((model, params, sample))
}

/// Worst relative error between the analytic directional derivative and a
/// central difference at `eps`, for every parameter group.
pub fn end_to_end_grad_check(seed: u64, eps: f64) -> Result<BTreeMap<GroupName, f64>, ModelError> {
    let (model, params, sample) = tiny_case(seed)?;
    let objective = |p: &ParamStore<f64>, _: &[Array2<f64>]| -> Result<(f64, Vec<i8>), NnError> {
        let mut tape = Tape::new(p);
        let (_, b) = model.loss_var(&mut tape, &sample);
        Ok((b.total, tape.kink_pattern()))
    };
    let (_, base_pattern) = objective(&params, &[])?;
    let (_, grads) = model.compute_loss(&params, std::slice::from_ref(&sample), true)?;
    let grads = grads.expect("requested");
    let analytic = |dir: &[Array2<f64>], _: &[Option<Array2<f64>>]| -> f64 {
        params
            .ids()
            .zip(dir)
            .filter_map(|(id, d)| grads.get(id).map(|g| (g * d).sum()))
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut out = BTreeMap::new();
    for group in GroupName::ALL {
        let mask: Vec<bool> = params.iter().map(|(_, p)| p.group == group).collect();
        let err = check_directions_masked(&params, Some(&mask), &[], &[], eps, &mut rng, &base_pattern, objective, analytic)?;
        out.insert(group, err);
    }
    Ok(out)
}
