use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{GroupName, ParamId, ParamStore, Real, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<F: Real>(self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Fan-in scaled uniform matrix.
pub fn init_matrix<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Array2::from_shape_simple_fn((rows, cols), || F::of(dist.sample(rng)))
}

/// `N(0, 0.1)` embedding table.
pub fn init_embedding<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let dist = Normal::new(0.0, 0.1).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || F::of(dist.sample(rng)))
}

/// Shared context for building layers into a store.
pub struct Builder<'a, F: Real> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut ChaCha8Rng,
    pub group: GroupName,
}

impl<'a, F: Real> Builder<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, rng: &'a mut ChaCha8Rng, group: GroupName) -> Self {
        Self { store, rng, group }
    }

    pub fn in_group(&mut self, group: GroupName) -> &mut Self {
        self.group = group;
        self
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let v = init_matrix(self.rng, rows, cols);
        self.store.add(name, self.group, v)
    }

    pub fn bias(&mut self, name: &str, cols: usize) -> ParamId {
        self.store.add(name, self.group, Array2::zeros((1, cols)))
    }

    pub fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let v = init_embedding(self.rng, rows, cols);
        self.store.add(name, self.group, v)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<F: Real>(
        b: &mut Builder<'_, F>,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
    ) -> Self {
        Self {
            weight: b.matrix(&format!("{name}.weight"), input, output),
            bias: b.bias(&format!("{name}.bias"), output),
            activation,
            input,
            output,
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        let y = tape.add_row(xw, b);
        self.activation.apply(tape, y)
    }
}

/// A stack of fully-connected layers sharing one activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<F: Real>(
        b: &mut Builder<'_, F>,
        name: &str,
        input: usize,
        widths: &[usize],
        activation: Activation,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(b, &format!("{name}.{i}"), prev, w, activation));
            prev = w;
        }
        Self { layers }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map(|l| l.output).unwrap_or(0)
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, mut x: Var) -> Var {
        for l in &self.layers {
            x = l.forward(tape, x);
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, name: &str, vocab: usize, dim: usize) -> Self {
        Self { table: b.embedding(name, vocab, dim), vocab, dim }
    }

    /// One row per id. Ids must be in range (checked by callers).
    pub fn lookup<F: Real>(&self, tape: &mut Tape<'_, F>, ids: &[usize]) -> Var {
        let t = tape.param(self.table);
        tape.gather(t, ids)
    }
}

/// Hidden and cell state of an LSTM, each `1 x hidden`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Gated recurrent cell (LSTM). Gate column order: input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            w_input: b.matrix(&format!("{name}.w_input"), input, 4 * hidden),
            w_hidden: b.matrix(&format!("{name}.w_hidden"), hidden, 4 * hidden),
            bias: b.bias(&format!("{name}.bias"), 4 * hidden),
            input,
            hidden,
        }
    }

    pub fn zero_state<F: Real>(&self, tape: &mut Tape<'_, F>) -> LstmState {
        let h = tape.constant(Array2::zeros((1, self.hidden)));
        let c = tape.constant(Array2::zeros((1, self.hidden)));
        LstmState { h, c }
    }

    /// State from concrete values (streaming sessions carry these between tapes).
    pub fn state_from<F: Real>(tape: &mut Tape<'_, F>, h: Array2<F>, c: Array2<F>) -> LstmState {
        LstmState { h: tape.constant(h), c: tape.constant(c) }
    }

    /// Input projection `x W_in + b` for any number of rows.
    pub fn project<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        let w = tape.param(self.w_input);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    /// One step given an already projected `1 x 4H` input row.
    pub fn step_projected<F: Real>(&self, tape: &mut Tape<'_, F>, xp: Var, state: LstmState) -> LstmState {
        let h = self.hidden;
        let wh = tape.param(self.w_hidden);
        let hw = tape.matmul(state.h, wh);
        let gates = tape.add(xp, hw);
        let i = tape.slice_cols(gates, 0, h);
        let f = tape.slice_cols(gates, h, h);
        let g = tape.slice_cols(gates, 2 * h, h);
        let o = tape.slice_cols(gates, 3 * h, h);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, state.c);
        let write = tape.mul(i, g);
        let c = tape.add(keep, write);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        LstmState { h, c }
    }

    /// Step-wise mode: one `1 x input` row.
    pub fn step<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var, state: LstmState) -> LstmState {
        let xp = self.project(tape, x);
        self.step_projected(tape, xp, state)
    }

    /// Full-sequence mode over the rows of `x`; returns all hidden states
    /// (`T x hidden`, in input order) and the final state.
    pub fn sequence<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        x: Var,
        reverse: bool,
        init: Option<LstmState>,
    ) -> (Var, LstmState) {
        let t = tape.shape(x).0;
        let xp = self.project(tape, x);
        let mut state = match init {
            Some(s) => s,
            None => self.zero_state(tape),
        };
        let mut outs = vec![state.h; t];
        let order: Box<dyn Iterator<Item = usize>> =
            if reverse { Box::new((0..t).rev()) } else { Box::new(0..t) };
        for k in order {
            let row = tape.slice_rows(xp, k, 1);
            state = self.step_projected(tape, row, state);
            outs[k] = state.h;
        }
        (tape.concat_rows(&outs), state)
    }
}

/// Forward and backward LSTMs over the same input, outputs side by side.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            forward: Lstm::new(b, &format!("{name}.fw"), input, hidden),
            backward: Lstm::new(b, &format!("{name}.bw"), input, hidden),
        }
    }

    pub fn output(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn run<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        let (fw, _) = self.forward.sequence(tape, x, false, None);
        let (bw, _) = self.backward.sequence(tape, x, true, None);
        tape.concat_cols(&[fw, bw])
    }
}

/// `y = x + lstm(x)`; input and hidden widths must match.
#[derive(Debug, Clone)]
pub struct ResidualLstm {
    pub cell: Lstm,
}

impl ResidualLstm {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, name: &str, width: usize) -> Self {
        Self { cell: Lstm::new(b, name, width, width) }
    }

    pub fn step<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var, state: LstmState) -> (Var, LstmState) {
        let next = self.cell.step(tape, x, state);
        (tape.add(x, next.h), next)
    }

    pub fn sequence<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        let (h, _) = self.cell.sequence(tape, x, false, None);
        tape.add(x, h)
    }
}

/// 1-D convolution over time with "same" padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub activation: Activation,
}

impl Conv1d {
    pub fn new<F: Real>(
        b: &mut Builder<'_, F>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        activation: Activation,
    ) -> Self {
        Self {
            weight: b.matrix(&format!("{name}.weight"), kernel * input, output),
            bias: b.bias(&format!("{name}.bias"), output),
            kernel,
            activation,
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        let cols = tape.unfold(x, self.kernel, (self.kernel - 1) / 2);
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(cols, w);
        let y = tape.add_row(y, b);
        self.activation.apply(tape, y)
    }
}

/// `relu(x W_h) * gate + x * (1 - gate)` with `gate = sigmoid(x W_t)`.
#[derive(Debug, Clone)]
pub struct Highway {
    pub transform: Linear,
    pub gate: Linear,
}

impl Highway {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, name: &str, width: usize) -> Self {
        Self {
            transform: Linear::new(b, &format!("{name}.h"), width, width, Activation::Relu),
            gate: Linear::new(b, &format!("{name}.t"), width, width, Activation::Sigmoid),
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        let h = self.transform.forward(tape, x);
        let t = self.gate.forward(tape, x);
        let carry = tape.affine(t, -1.0, 1.0);
        let a = tape.mul(h, t);
        let c = tape.mul(x, carry);
        tape.add(a, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbhgSpec {
    pub input: usize,
    pub width: usize,
    pub bank_size: usize,
    pub bank_channels: usize,
    pub highway_layers: usize,
}

/// Convolution bank, max-pool, projections with a residual connection,
/// highway stack, then a bidirectional LSTM whose output width equals
/// `width`.
#[derive(Debug, Clone)]
pub struct Cbhg {
    pub spec: CbhgSpec,
    pub bank: Vec<Conv1d>,
    pub proj1: Conv1d,
    pub proj2: Conv1d,
    pub pre_highway: Option<Linear>,
    pub highways: Vec<Highway>,
    pub rnn: BiLstm,
}

impl Cbhg {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, name: &str, spec: CbhgSpec) -> Self {
        assert!(spec.width.is_multiple_of(2), "CBHG width must be even");
        let bank = (1..=spec.bank_size)
            .map(|k| {
                Conv1d::new(b, &format!("{name}.bank{k}"), spec.input, spec.bank_channels, k, Activation::Relu)
            })
            .collect();
        let stacked = spec.bank_size * spec.bank_channels;
        let proj1 = Conv1d::new(b, &format!("{name}.proj1"), stacked, spec.width, 3, Activation::Relu);
        let proj2 = Conv1d::new(b, &format!("{name}.proj2"), spec.width, spec.input, 3, Activation::Identity);
        let pre_highway = (spec.input != spec.width).then(|| {
            Linear::new(b, &format!("{name}.pre_highway"), spec.input, spec.width, Activation::Identity)
        });
        let highways = (0..spec.highway_layers)
            .map(|i| Highway::new(b, &format!("{name}.highway{i}"), spec.width))
            .collect();
        let rnn = BiLstm::new(b, &format!("{name}.rnn"), spec.width, spec.width / 2);
        Self { spec, bank, proj1, proj2, pre_highway, highways, rnn }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        let banks: Vec<Var> = self.bank.iter().map(|c| c.forward(tape, x)).collect();
        let stacked = tape.concat_cols(&banks);
        let pooled = tape.max_pool2(stacked);
        let p1 = self.proj1.forward(tape, pooled);
        let p2 = self.proj2.forward(tape, p1);
        let mut h = tape.add(p2, x);
        if let Some(pre) = &self.pre_highway {
            h = pre.forward(tape, h);
        }
        for hw in &self.highways {
            h = hw.forward(tape, h);
        }
        self.rnn.run(tape, h)
    }
}

/// Additive (tanh) content-based attention restricted to a window of memory
/// rows around a center index.
#[derive(Debug, Clone)]
pub struct WindowedAttention {
    pub w_query: ParamId,
    pub w_memory: ParamId,
    pub bias: ParamId,
    pub score: ParamId,
    pub query: usize,
    pub memory: usize,
    pub depth: usize,
    pub half_width: usize,
}

/// Result of one attention read.
#[derive(Debug, Clone, Copy)]
pub struct AttentionRead {
    pub context: Var,
    /// `1 x len` weights over rows `start .. start + len`.
    pub weights: Var,
    pub start: usize,
    pub len: usize,
}

impl WindowedAttention {
    pub fn new<F: Real>(
        b: &mut Builder<'_, F>,
        name: &str,
        query: usize,
        memory: usize,
        depth: usize,
        half_width: usize,
    ) -> Self {
        Self {
            w_query: b.matrix(&format!("{name}.w_query"), query, depth),
            w_memory: b.matrix(&format!("{name}.w_memory"), memory, depth),
            bias: b.bias(&format!("{name}.bias"), depth),
            score: b.matrix(&format!("{name}.score"), depth, 1),
            query,
            memory,
            depth,
            half_width,
        }
    }

    /// Rows `[center - W, center + W]` clipped to `[0, len)`.
    pub fn window(&self, center: usize, len: usize) -> (usize, usize) {
        let start = center.saturating_sub(self.half_width);
        let end = (center + self.half_width + 1).min(len);
        (start, end - start)
    }

    /// Memory projection, computed once per utterance.
    pub fn keys<F: Real>(&self, tape: &mut Tape<'_, F>, memory: Var) -> Var {
        let w = tape.param(self.w_memory);
        let b = tape.param(self.bias);
        let k = tape.matmul(memory, w);
        tape.add_row(k, b)
    }

    pub fn read<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        query: Var,
        memory: Var,
        keys: Var,
        center: usize,
    ) -> AttentionRead {
        let rows = tape.shape(memory).0;
        assert!(center < rows, "attention center {center} outside {rows} rows");
        let (start, len) = self.window(center, rows);
        let wq = tape.param(self.w_query);
        let q = tape.matmul(query, wq);
        let k = tape.slice_rows(keys, start, len);
        let e = tape.add_row(k, q);
        let e = tape.tanh(e);
        let v = tape.param(self.score);
        let scores = tape.matmul(e, v);
        let scores = tape.transpose(scores);
        let weights = tape.softmax_rows(scores);
        let mem = tape.slice_rows(memory, start, len);
        let context = tape.matmul(weights, mem);
        AttentionRead { context, weights, start, len }
    }
}

/// Draws a seeded `rows x cols` matrix of standard normals; test helper shared
/// by the gradient checker.
pub fn random_normal<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_simple_fn((rows, cols), || F::of(dist.sample(rng)))
}

pub fn random_ids(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::SeedableRng;

    use super::*;

    fn store_and_rng() -> (ParamStore<f64>, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn identity_linear_is_identity() {
        let (mut store, mut rng) = store_and_rng();
        let lin = Linear::new(&mut Builder::new(&mut store, &mut rng, GroupName::Encoder), "fc", 3, 3, Activation::Identity);
        *store.value_mut(lin.weight) = Array2::eye(3);
        let mut tape = Tape::new(&store);
        let x = tape.constant(array![[1.0, -2.0, 0.5], [3.0, 0.0, 4.0]]);
        let y = lin.forward(&mut tape, x);
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn embedding_lookup_returns_rows() {
        let (mut store, mut rng) = store_and_rng();
        let emb = Embedding::new(&mut Builder::new(&mut store, &mut rng, GroupName::PhoneEmbedding), "emb", 5, 4);
        let mut tape = Tape::new(&store);
        let y = emb.lookup(&mut tape, &[3, 0, 3]);
        let table = store.value(emb.table);
        assert_eq!(tape.value(y).row(0), table.row(3));
        assert_eq!(tape.value(y).row(1), table.row(0));
        assert_eq!(tape.value(y).row(2), table.row(3));
    }

    #[test]
    fn lstm_step_and_sequence_agree() {
        let (mut store, mut rng) = store_and_rng();
        let lstm = Lstm::new(&mut Builder::new(&mut store, &mut rng, GroupName::Decoder), "rnn", 4, 6);
        let x = random_normal::<f64>(&mut rng, 9, 4);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let (all, _) = lstm.sequence(&mut tape, xv, false, None);
        let mut state = lstm.zero_state(&mut tape);
        for t in 0..9 {
            let row = tape.constant(x.slice(ndarray::s![t..t + 1, ..]).to_owned());
            state = lstm.step(&mut tape, row, state);
            let diff = (&tape.value(state.h) - &tape.value(all).slice(ndarray::s![t..t + 1, ..]))
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff <= 1e-12, "step {t}: {diff}");
        }
    }

    #[test]
    fn zero_residual_lstm_is_identity() {
        let (mut store, mut rng) = store_and_rng();
        let res = ResidualLstm::new(&mut Builder::new(&mut store, &mut rng, GroupName::Decoder), "res", 5);
        for id in [res.cell.w_input, res.cell.w_hidden, res.cell.bias] {
            store.value_mut(id).fill(0.0);
        }
        let x = random_normal::<f64>(&mut rng, 4, 5);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let y = res.sequence(&mut tape, xv);
        // Zero weights: gates are 0.5, cell input tanh(0) = 0, so h stays 0.
        assert_eq!(tape.value(y), x.view());
    }

    #[test]
    fn attention_window_saturates_and_collapses() {
        let (mut store, mut rng) = store_and_rng();
        let mut b = Builder::new(&mut store, &mut rng, GroupName::Decoder);
        let wide = WindowedAttention::new(&mut b, "wide", 3, 4, 5, 100);
        let mut narrow = wide.clone();
        narrow.half_width = 0;
        let mem = random_normal::<f64>(&mut rng, 7, 4);
        let q = random_normal::<f64>(&mut rng, 1, 3);
        let mut tape = Tape::new(&store);
        let m = tape.constant(mem.clone());
        let qv = tape.constant(q);
        let k = wide.keys(&mut tape, m);
        let r = wide.read(&mut tape, qv, m, k, 3);
        assert_eq!((r.start, r.len), (0, 7));
        let sum: f64 = tape.value(r.weights).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let one = narrow.read(&mut tape, qv, m, k, 5);
        assert_eq!((one.start, one.len), (5, 1));
        assert_eq!(tape.value(one.weights)[[0, 0]], 1.0);
        assert_eq!(tape.value(one.context).row(0), mem.row(5));
    }

    #[test]
    fn cbhg_keeps_length_and_width() {
        let (mut store, mut rng) = store_and_rng();
        let spec = CbhgSpec { input: 6, width: 8, bank_size: 4, bank_channels: 3, highway_layers: 2 };
        let cbhg = Cbhg::new(&mut Builder::new(&mut store, &mut rng, GroupName::Encoder), "cbhg", spec);
        let x = random_normal::<f64>(&mut rng, 5, 6);
        let mut tape = Tape::new(&store);
        let xv = tape.constant(x);
        let y = cbhg.forward(&mut tape, xv);
        assert_eq!(tape.shape(y), (5, 8));
    }
}
