//! Stand-alone layer evaluation: build one layer from a [`LayerSpec`], run it
//! forward, backpropagate an output gradient through the cached forward, and
//! compare against central finite differences.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    random_normal, Activation, BiLstm, Builder, Cbhg, CbhgSpec, Embedding, Linear, Lstm, ResidualLstm,
    WindowedAttention,
};
use super::{Graph, GroupName, Grads, NnError, ParamStore, Real, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerSpec {
    FullyConnected { input: usize, output: usize, activation: Activation },
    Embedding { vocab: usize, dim: usize },
    Lstm { input: usize, hidden: usize },
    BiLstm { input: usize, hidden: usize },
    ResidualLstm { width: usize },
    Cbhg(CbhgSpec),
    /// Reads memory around `center`; inputs are `[query, memory]`.
    Attention { query: usize, memory: usize, depth: usize, half_width: usize, center: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        let dims: Vec<usize> = match self {
            LayerSpec::FullyConnected { input, output, .. } => vec![*input, *output],
            LayerSpec::Embedding { vocab, dim } => vec![*vocab, *dim],
            LayerSpec::Lstm { input, hidden } | LayerSpec::BiLstm { input, hidden } => vec![*input, *hidden],
            LayerSpec::ResidualLstm { width } => vec![*width],
            LayerSpec::Cbhg(c) => vec![c.input, c.width, c.bank_size, c.bank_channels],
            LayerSpec::Attention { query, memory, depth, .. } => vec![*query, *memory, *depth],
        };
        if dims.contains(&0) {
            return Err(NnError::Shape(format!("{self:?} has a zero dimension")));
        }
        Ok(())
    }

    /// Builds the layer's parameters into `store` under `group`.
    pub fn build<F: Real>(&self, store: &mut ParamStore<F>, group: GroupName, seed: u64) -> Result<Layer, NnError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(store, &mut rng, group);
        Ok(match *self {
            LayerSpec::FullyConnected { input, output, activation } => {
                Layer::Linear(Linear::new(&mut b, "fc", input, output, activation))
            }
            LayerSpec::Embedding { vocab, dim } => Layer::Embedding(Embedding::new(&mut b, "emb", vocab, dim)),
            LayerSpec::Lstm { input, hidden } => Layer::Lstm(Lstm::new(&mut b, "lstm", input, hidden)),
            LayerSpec::BiLstm { input, hidden } => Layer::BiLstm(BiLstm::new(&mut b, "blstm", input, hidden)),
            LayerSpec::ResidualLstm { width } => Layer::Residual(ResidualLstm::new(&mut b, "rlstm", width)),
            LayerSpec::Cbhg(spec) => Layer::Cbhg(Cbhg::new(&mut b, "cbhg", spec)),
            LayerSpec::Attention { query, memory, depth, half_width, center } => Layer::Attention(
                WindowedAttention::new(&mut b, "attn", query, memory, depth, half_width),
                center,
            ),
        })
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Embedding(Embedding),
    Lstm(Lstm),
    BiLstm(BiLstm),
    Residual(ResidualLstm),
    Cbhg(Cbhg),
    Attention(WindowedAttention, usize),
}

impl Layer {
    /// Number of tensor inputs.
    pub fn arity(&self) -> usize {
        match self {
            Layer::Attention(..) => 2,
            _ => 1,
        }
    }

    /// Whether input `i` is differentiable (embedding ids are not).
    pub fn input_is_continuous(&self, _i: usize) -> bool {
        !matches!(self, Layer::Embedding(_))
    }

    fn input_width(&self, i: usize) -> usize {
        match self {
            Layer::Linear(l) => l.input,
            Layer::Embedding(_) => 1,
            Layer::Lstm(l) => l.input,
            Layer::BiLstm(b) => b.forward.input,
            Layer::Residual(r) => r.cell.input,
            Layer::Cbhg(c) => c.spec.input,
            Layer::Attention(a, _) => {
                if i == 0 {
                    a.query
                } else {
                    a.memory
                }
            }
        }
    }

    fn check_inputs<F: Real>(&self, inputs: &[Array2<F>]) -> Result<(), NnError> {
        if inputs.len() != self.arity() {
            return Err(NnError::Shape(format!("expected {} inputs, got {}", self.arity(), inputs.len())));
        }
        for (i, x) in inputs.iter().enumerate() {
            if x.ncols() != self.input_width(i) || x.nrows() == 0 {
                return Err(NnError::Shape(format!(
                    "input {i} has shape {:?}, expected (_, {})",
                    x.dim(),
                    self.input_width(i)
                )));
            }
        }
        match self {
            Layer::Embedding(e) => {
                for &v in inputs[0].iter() {
                    let id = v.as_f64();
                    if id < 0.0 || id.fract() != 0.0 || id as usize >= e.vocab {
                        return Err(NnError::Shape(format!("embedding id {id} outside vocab {}", e.vocab)));
                    }
                }
            }
            Layer::Attention(_, center) if *center >= inputs[1].nrows() => {
                return Err(NnError::Shape(format!("attention center {center} outside memory")));
            }
            Layer::Attention(_, _) if inputs[0].nrows() != 1 => {
                return Err(NnError::Shape("attention query must be a single row".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Records the layer on `tape` given input nodes (ids for embeddings are
    /// read from the first input's values).
    pub fn apply<F: Real>(&self, tape: &mut Tape<'_, F>, inputs: &[Var]) -> Var {
        match self {
            Layer::Linear(l) => l.forward(tape, inputs[0]),
            Layer::Embedding(e) => {
                let ids: Vec<usize> = tape.value(inputs[0]).iter().map(|v| v.as_f64() as usize).collect();
                e.lookup(tape, &ids)
            }
            Layer::Lstm(l) => l.sequence(tape, inputs[0], false, None).0,
            Layer::BiLstm(b) => b.run(tape, inputs[0]),
            Layer::Residual(r) => r.sequence(tape, inputs[0]),
            Layer::Cbhg(c) => c.forward(tape, inputs[0]),
            Layer::Attention(a, center) => {
                let keys = a.keys(tape, inputs[1]);
                a.read(tape, inputs[0], inputs[1], keys, *center).context
            }
        }
    }
}

/// Everything needed to backpropagate through one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    graph: Graph<F>,
    inputs: Vec<Var>,
    output: Var,
}

pub fn forward<F: Real>(
    layer: &Layer,
    params: &ParamStore<F>,
    inputs: &[Array2<F>],
) -> Result<(Array2<F>, ForwardCache<F>), NnError> {
    layer.check_inputs(inputs)?;
    let mut tape = Tape::new(params);
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| if layer.input_is_continuous(i) { tape.input(x.clone()) } else { tape.constant(x.clone()) })
        .collect();
    let out = layer.apply(&mut tape, &vars);
    let value = tape.value(out).to_owned();
    Ok((value, ForwardCache { graph: tape.into_graph(), inputs: vars, output: out }))
}

/// Input gradients (`None` for non-differentiable inputs) and parameter
/// gradients for an output gradient.
pub fn backward<F: Real>(
    params: &ParamStore<F>,
    cache: &ForwardCache<F>,
    grad_output: &Array2<F>,
) -> Result<(Vec<Option<Array2<F>>>, Grads<F>), NnError> {
    if cache.graph.generation() != params.generation() {
        return Err(NnError::StaleCache);
    }
    let tape = Tape::resume(params, cache.graph.clone());
    if grad_output.dim() != tape.shape(cache.output) {
        return Err(NnError::Shape(format!(
            "output gradient {:?} does not match output {:?}",
            grad_output.dim(),
            tape.shape(cache.output)
        )));
    }
    let bp = tape.backward_with(cache.output, grad_output.clone());
    let inputs = cache.inputs.iter().map(|&v| bp.grad(v).cloned()).collect();
    Ok((inputs, bp.params))
}

/// Max relative error between analytic and central-difference directional
/// derivatives of `<R, layer(params, inputs)>` for a random projection `R`,
/// over several random directions in parameter and input space.
///
/// A direction whose `±eps` probes land on different sides of a ReLU,
/// max-pool or L1 kink is redrawn: finite differences across a kink do not
/// estimate the derivative.
pub fn grad_check(
    layer: &Layer,
    params: &ParamStore<f64>,
    inputs: &[Array2<f64>],
    eps: f64,
    seed: u64,
) -> Result<f64, NnError> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(NnError::Shape(format!("eps {eps} outside [1e-6, 1e-3]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, cache) = forward(layer, params, inputs)?;
    let proj: Array2<f64> = random_normal(&mut rng, out.nrows(), out.ncols());
    let (input_grads, param_grads) = backward(params, &cache, &proj)?;
    let base_pattern = Tape::resume(params, cache.graph.clone()).kink_pattern();

    let continuous: Vec<bool> = (0..inputs.len()).map(|i| layer.input_is_continuous(i)).collect();
    let objective = |p: &ParamStore<f64>, xs: &[Array2<f64>]| -> Result<(f64, Vec<i8>), NnError> {
        let (y, cache) = forward(layer, p, xs)?;
        let pattern = Tape::resume(p, cache.graph).kink_pattern();
        Ok(((&y * &proj).sum(), pattern))
    };
    let analytic_along = |dir_p: &[Array2<f64>], dir_x: &[Option<Array2<f64>>]| {
        let mut a = 0.0;
        for (g, d) in param_grads.tensors.iter().zip(dir_p) {
            if let Some(g) = g {
                a += (g * d).sum();
            }
        }
        for (g, d) in input_grads.iter().zip(dir_x) {
            if let (Some(g), Some(d)) = (g, d) {
                a += (g * d).sum();
            }
        }
        a
    };
    check_directions(
        params,
        inputs,
        &continuous,
        eps,
        &mut rng,
        &base_pattern,
        |p, xs| objective(p, xs),
        analytic_along,
    )
}

pub(crate) const DIRECTIONS: usize = 4;
const MAX_DRAWS: usize = 64;

/// Shared driver for directional finite-difference checks. `mask` limits the
/// perturbation to some tensors (all when `None` is passed through
/// `random_direction`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn check_directions(
    params: &ParamStore<f64>,
    inputs: &[Array2<f64>],
    continuous: &[bool],
    eps: f64,
    rng: &mut ChaCha8Rng,
    base_pattern: &[i8],
    objective: impl Fn(&ParamStore<f64>, &[Array2<f64>]) -> Result<(f64, Vec<i8>), NnError>,
    analytic_along: impl Fn(&[Array2<f64>], &[Option<Array2<f64>>]) -> f64,
) -> Result<f64, NnError> {
    check_directions_masked(params, None, inputs, continuous, eps, rng, base_pattern, objective, analytic_along)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn check_directions_masked(
    params: &ParamStore<f64>,
    mask: Option<&[bool]>,
    inputs: &[Array2<f64>],
    continuous: &[bool],
    eps: f64,
    rng: &mut ChaCha8Rng,
    base_pattern: &[i8],
    objective: impl Fn(&ParamStore<f64>, &[Array2<f64>]) -> Result<(f64, Vec<i8>), NnError>,
    analytic_along: impl Fn(&[Array2<f64>], &[Option<Array2<f64>>]) -> f64,
) -> Result<f64, NnError> {
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut draws = 0;
    while accepted < DIRECTIONS {
        draws += 1;
        if draws > MAX_DRAWS {
            return Err(NnError::Shape("no kink-free direction found for the gradient check".into()));
        }
        let dir_p: Vec<Array2<f64>> = params
            .iter()
            .enumerate()
            .map(|(i, (_, p))| {
                if mask.is_none_or(|m| m[i]) {
                    random_normal(rng, p.value.nrows(), p.value.ncols())
                } else {
                    Array2::zeros(p.value.raw_dim())
                }
            })
            .collect();
        let dir_x: Vec<Option<Array2<f64>>> = inputs
            .iter()
            .zip(continuous)
            .map(|(x, &c)| c.then(|| random_normal(rng, x.nrows(), x.ncols())))
            .collect();

        let shifted = |sign: f64| {
            let mut p = params.clone();
            let ids: Vec<_> = p.ids().collect();
            for (id, d) in ids.into_iter().zip(&dir_p) {
                p.value_mut(id).scaled_add(sign * eps, d);
            }
            let xs: Vec<Array2<f64>> = inputs
                .iter()
                .zip(&dir_x)
                .map(|(x, d)| match d {
                    Some(d) => x + &(d * (sign * eps)),
                    None => x.clone(),
                })
                .collect();
            objective(&p, &xs)
        };
        let (plus, pat_plus) = shifted(1.0)?;
        let (minus, pat_minus) = shifted(-1.0)?;
        if pat_plus != base_pattern || pat_minus != base_pattern {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = analytic_along(&dir_p, &dir_x);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
        accepted += 1;
    }
    Ok(worst)
}
