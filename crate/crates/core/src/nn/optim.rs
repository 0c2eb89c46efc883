use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{FreezeSet, Grads, NnError, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip over the trainable tensors; `0` disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0 }
    }
}

/// Adaptive-moment optimizer state, one moment pair per tensor.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Array2<F>>,
    second: Vec<Array2<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamStore<F>, config: AdamConfig) -> Self {
        Self { config, step: 0, first: params.zeros_like(), second: params.zeros_like() }
    }

    pub fn first_moment(&self, index: usize) -> &Array2<F> {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Array2<F> {
        &self.second[index]
    }
}

/// Applies one optimizer step to every tensor outside `freeze`.
///
/// Tensors in frozen groups and their moment estimates are not touched at
/// all, so they stay bit-identical. Returns the pre-clip gradient norm of the
/// trainable tensors.
pub fn apply_update<F: Real>(
    params: &mut ParamStore<F>,
    grads: &Grads<F>,
    freeze: &FreezeSet,
    opt: &mut Adam<F>,
) -> Result<f64, NnError> {
    let declared = params.groups();
    if let Some(g) = freeze.iter().find(|g| !declared.contains(g)) {
        return Err(NnError::UnknownGroup(g.to_string()));
    }
    if grads.tensors.len() != params.len() || opt.first.len() != params.len() {
        return Err(NnError::Shape("gradient/optimizer state does not match parameters".into()));
    }
    let trainable: Vec<usize> = params
        .iter()
        .filter(|(_, p)| !freeze.contains(p.group))
        .map(|(id, _)| id.index())
        .collect();
    for &i in &trainable {
        if let Some(g) = &grads.tensors[i] {
            if g.dim() != opt.first[i].dim() {
                return Err(NnError::Shape(format!(
                    "gradient for {} has shape {:?}, parameter {:?}",
                    params.iter().nth(i).map(|(_, p)| p.name.as_str()).unwrap_or("?"),
                    g.dim(),
                    opt.first[i].dim()
                )));
            }
        }
    }

    let norm = trainable
        .iter()
        .filter_map(|&i| grads.tensors[i].as_ref())
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    let c = opt.config;
    let clip = if c.clip_norm > 0.0 && norm > c.clip_norm { c.clip_norm / norm } else { 1.0 };

    opt.step += 1;
    let t = opt.step as i32;
    let lr_t = c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
    let (b1, b2, eps, lr, clip) = (F::of(c.beta1), F::of(c.beta2), F::of(c.eps), F::of(lr_t), F::of(clip));
    let one = F::one();

    let ids: Vec<_> = params.ids().collect();
    for &i in &trainable {
        let Some(g) = &grads.tensors[i] else { continue };
        let (m, v) = (&mut opt.first[i], &mut opt.second[i]);
        let p = params.value_mut(ids[i]);
        Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            let g = g * clip;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        });
    }
    Ok(norm)
}
