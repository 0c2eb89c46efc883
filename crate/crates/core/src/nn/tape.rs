//! Reverse-mode differentiation over 2-D matrices.
//!
//! Values are computed eagerly as ops are recorded. Parameters are borrowed
//! from a [`ParamStore`] rather than copied; each parameter appears on a tape
//! at most once, so its gradient is accumulated in one place.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::{Grads, ParamId, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Const,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    SoftmaxRows(Var),
    Unfold { x: Var, width: usize, pad_left: usize },
    MaxPool2(Var),
    MeanAbsDiff(Var, Var),
    MeanSqDiff(Var, Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<F> {
    // `None` only for parameter nodes, whose value lives in the store.
    value: Option<Array2<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// The recorded computation, detachable from the parameter borrow so it can
/// be cached between a forward and a later backward call.
#[derive(Debug, Clone)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    generation: u64,
}

impl<F: Real> Graph<F> {
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub struct Tape<'p, F: Real> {
    params: &'p ParamStore<F>,
    graph: Graph<F>,
}

/// Gradients produced by one backward pass.
pub struct Backprop<F> {
    node_grads: Vec<Option<Array2<F>>>,
    pub params: Grads<F>,
}

impl<F: Real> Backprop<F> {
    /// Gradient flowing into `v`, if it was reached. Parameter gradients
    /// are moved into `params`.
    pub fn grad(&self, v: Var) -> Option<&Array2<F>> {
        self.node_grads[v.0].as_ref()
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `a · b`. Short left operands go through row axpys instead of the
/// general product, whose micro-kernel pads them to its tile height.
fn product<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    if a.nrows() > SHORT_ROWS {
        return a.dot(&b);
    }
    let b = b.as_standard_layout();
    let (k, n) = b.dim();
    let bs = b.as_slice().expect("standard layout");
    let mut out = Array2::zeros((a.nrows(), n));
    for (arow, mut orow) in a.rows().into_iter().zip(out.rows_mut()) {
        let o = orow.as_slice_mut().expect("fresh row");
        let x: Vec<F> = arow.to_vec();
        let mut r = 0;
        while r + 4 <= k {
            let (x0, x1, x2, x3) = (x[r], x[r + 1], x[r + 2], x[r + 3]);
            let b0 = &bs[r * n..(r + 1) * n];
            let b1 = &bs[(r + 1) * n..(r + 2) * n];
            let b2 = &bs[(r + 2) * n..(r + 3) * n];
            let b3 = &bs[(r + 3) * n..(r + 4) * n];
            for ((((oj, &p0), &p1), &p2), &p3) in o.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3) {
                *oj = *oj + x0 * p0 + x1 * p1 + x2 * p2 + x3 * p3;
            }
            r += 4;
        }
        for (rr, &xv) in x.iter().enumerate().skip(r) {
            for (oj, &bj) in o.iter_mut().zip(&bs[rr * n..(rr + 1) * n]) {
                *oj += xv * bj;
            }
        }
    }
    out
}

/// `g · bᵀ`, with row-by-row dots for short `g`.
fn product_t<F: Real>(g: &Array2<F>, b: ArrayView2<'_, F>) -> Array2<F> {
    if g.nrows() > SHORT_ROWS {
        return g.dot(&b.t());
    }
    let mut out = Array2::zeros((g.nrows(), b.nrows()));
    for (grow, mut orow) in g.rows().into_iter().zip(out.rows_mut()) {
        for (o, brow) in orow.iter_mut().zip(b.rows()) {
            *o = grow.dot(&brow);
        }
    }
    out
}

const SHORT_ROWS: usize = 4;

fn softplus<F: Real>(x: F) -> F {
    // log(1 + e^x) without overflow
    x.max(F::zero()) + (-(x.abs())).exp().ln_1p()
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self {
            params,
            graph: Graph {
                nodes: Vec::new(),
                param_vars: vec![None; params.len()],
                generation: params.generation(),
            },
        }
    }

    /// Reattaches a detached graph to its parameters.
    pub fn resume(params: &'p ParamStore<F>, graph: Graph<F>) -> Self {
        Self { params, graph }
    }

    pub fn into_graph(self) -> Graph<F> {
        self.graph
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.graph.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, F> {
        let node = &self.graph.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val.view(),
            (None, Op::Param(id)) => self.params.value(*id).view(),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> F {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "not a scalar node");
        val[[0, 0]]
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.graph.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.graph.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.graph.nodes[v.0].needs_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Const, false)
    }

    /// A leaf whose gradient is reported by [`Backprop::grad`].
    pub fn input(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.graph.param_vars[id.0] {
            return v;
        }
        self.graph.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.graph.nodes.len() - 1);
        self.graph.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = product(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = &self.value(a) + &self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row expects a 1 x {n} row");
        let out = &self.value(a) + &self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let out = &self.value(a) - &self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let out = &self.value(a) * &self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (sc, sh) = (F::of(scale), F::of(shift));
        let out = self.value(a).mapv(|v| sc * v + sh);
        let ng = self.ng(a);
        self.push(out, Op::Affine(a, sc), ng)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(F::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(F::zero()));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(softplus);
        let ng = self.ng(a);
        self.push(out, Op::Softplus(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<F> = self.value(a).iter().copied().collect();
        assert_eq!(flat.len(), rows * cols, "reshape size mismatch");
        let out = Array2::from_shape_vec((rows, cols), flat).expect("size checked");
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: widths differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    /// Row gather: output row `i` is row `indices[i]` of `a`. Used for
    /// embedding lookup and frame expansion.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = self.value(a);
        let out = src.select(Axis(0), indices);
        let ng = self.ng(a);
        self.push(out, Op::Gather(a, indices.to_vec()), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).to_owned();
        for mut row in out.rows_mut() {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum: F = row.iter().copied().sum();
            row.mapv_inplace(|v| v / sum);
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Time-unfold for 1-D convolution: row `t` of the output holds input rows
    /// `t - pad_left .. t - pad_left + width` side by side (zeros outside).
    pub fn unfold(&mut self, x: Var, width: usize, pad_left: usize) -> Var {
        let src = self.value(x);
        let (t, c) = src.dim();
        let mut out = Array2::zeros((t, width * c));
        for row in 0..t {
            for j in 0..width {
                let k = row as isize + j as isize - pad_left as isize;
                if k >= 0 && (k as usize) < t {
                    out.slice_mut(s![row, j * c..(j + 1) * c]).assign(&src.row(k as usize));
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::Unfold { x, width, pad_left }, ng)
    }

    /// Max over each pair of consecutive rows (`t`, `t+1`); the last row
    /// passes through.
    pub fn max_pool2(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (t, _) = src.dim();
        let mut out = src.to_owned();
        for row in 0..t.saturating_sub(1) {
            Zip::from(out.row_mut(row)).and(src.row(row + 1)).for_each(|o, &n| {
                if n > *o {
                    *o = n;
                }
            });
        }
        let ng = self.ng(a);
        self.push(out, Op::MaxPool2(a), ng)
    }

    /// Mean absolute difference, `1 x 1`.
    pub fn mean_abs_diff(&mut self, a: Var, target: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(target), "l1 shape mismatch");
        let va = self.value(a);
        let vt = self.value(target);
        let n = F::of(va.len().max(1) as f64);
        let sum: F = va.iter().zip(vt.iter()).map(|(&x, &y)| (x - y).abs()).sum();
        let ng = self.ng(a) || self.ng(target);
        self.push(Array2::from_elem((1, 1), sum / n), Op::MeanAbsDiff(a, target), ng)
    }

    /// Mean squared difference, `1 x 1`.
    pub fn mean_sq_diff(&mut self, a: Var, target: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(target), "l2 shape mismatch");
        let va = self.value(a);
        let vt = self.value(target);
        let n = F::of(va.len().max(1) as f64);
        let sum: F = va.iter().zip(vt.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let ng = self.ng(a) || self.ng(target);
        self.push(Array2::from_elem((1, 1), sum / n), Op::MeanSqDiff(a, target), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: F = self.value(a).iter().copied().sum();
        let ng = self.ng(a);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a), ng)
    }

    /// Which side of every non-differentiable point the recorded values sit
    /// on: ReLU masks, max-pool choices and L1 residual signs. Two evaluations
    /// with equal patterns lie in the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<i8> {
        let mut out = Vec::new();
        for node in &self.graph.nodes {
            match &node.op {
                Op::Relu(_) => {
                    let y = node.value.as_ref().expect("op value");
                    out.extend(y.iter().map(|&v| (v > F::zero()) as i8));
                }
                Op::MaxPool2(a) => {
                    let src = self.value(*a);
                    for row in 0..src.nrows().saturating_sub(1) {
                        for col in 0..src.ncols() {
                            out.push((src[[row + 1, col]] > src[[row, col]]) as i8);
                        }
                    }
                }
                Op::MeanAbsDiff(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    out.extend(va.iter().zip(vb.iter()).map(|(&x, &y)| {
                        if x > y {
                            1
                        } else if x < y {
                            -1
                        } else {
                            0
                        }
                    }));
                }
                _ => {}
            }
        }
        out
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, output: Var) -> Backprop<F> {
        assert_eq!(self.shape(output), (1, 1), "backward from a non-scalar; use backward_with");
        self.backward_with(output, Array2::from_elem((1, 1), F::one()))
    }

    /// Backpropagates an explicit output gradient.
    pub fn backward_with(&self, output: Var, seed: Array2<F>) -> Backprop<F> {
        let mut params = Grads::empty(self.params.len());
        let node_grads = self.run_backward(output, seed, &mut params);
        Backprop { node_grads, params }
    }

    /// Backpropagates from a scalar output, adding parameter gradients to `acc`.
    pub fn backward_into(&self, output: Var, acc: &mut Grads<F>) {
        assert_eq!(self.shape(output), (1, 1), "backward from a non-scalar");
        assert_eq!(acc.tensors.len(), self.params.len(), "gradient set from another store");
        self.run_backward(output, Array2::from_elem((1, 1), F::one()), acc);
    }

    fn run_backward(&self, output: Var, seed: Array2<F>, params: &mut Grads<F>) -> Vec<Option<Array2<F>>> {
        assert_eq!(seed.dim(), self.shape(output), "seed gradient shape mismatch");
        let nodes = &self.graph.nodes;
        let mut grads: Vec<Option<Array2<F>>> = vec![None; nodes.len()];
        grads[output.0] = Some(seed);
        // Per parameter node: (left operand, output grad) pairs of every
        // product it was the right operand of, reduced in one product when
        // the node is reached. Recurrences use a weight once per step.
        let mut deferred: Vec<Vec<(Var, Array2<F>)>> = vec![Vec::new(); nodes.len()];

        for i in (0..=output.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Input | Op::Const => continue,
                Op::Param(id) => {
                    let pending = std::mem::take(&mut deferred[i]);
                    if let Some(g) = grads[i].take() {
                        params.accumulate_owned(*id, g);
                    }
                    if !pending.is_empty() {
                        let lhs: Vec<_> = pending.iter().map(|(a, _)| self.value(*a)).collect();
                        let outs: Vec<_> = pending.iter().map(|(_, g)| g.view()).collect();
                        let lhs = ndarray::concatenate(Axis(0), &lhs).expect("same input width");
                        let outs = ndarray::concatenate(Axis(0), &outs).expect("same output width");
                        params.accumulate_product(*id, lhs.t(), outs.view());
                    }
                    continue;
                }
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(i, &g, &mut grads, &mut deferred);
        }
        grads
    }

    fn propagate(
        &self,
        i: usize,
        g: &Array2<F>,
        grads: &mut [Option<Array2<F>>],
        deferred: &mut [Vec<(Var, Array2<F>)>],
    ) {
        let nodes = &self.graph.nodes;
        let out = || nodes[i].value.as_ref().expect("op nodes own values");
        let mut send = |v: Var, d: Array2<F>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &nodes[i].op {
            Op::Const | Op::Input | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                if nodes[a.0].needs_grad {
                    send(*a, product_t(g, self.value(*b)));
                }
                if nodes[b.0].needs_grad {
                    if matches!(nodes[b.0].op, Op::Param(_)) {
                        deferred[b.0].push((*a, g.clone()));
                    } else {
                        send(*b, self.value(*a).t().dot(g));
                    }
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                send(*a, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                if nodes[a.0].needs_grad {
                    send(*a, g * &self.value(*b));
                }
                if nodes[b.0].needs_grad {
                    send(*b, g * &self.value(*a));
                }
            }
            Op::Affine(a, sc) => send(*a, g.mapv(|v| v * *sc)),
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out()).for_each(|d, &y| *d = *d * y * (F::one() - y));
                send(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out()).for_each(|d, &y| *d *= F::one() - y * y);
                send(*a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out()).for_each(|d, &y| {
                    if y <= F::zero() {
                        *d = F::zero()
                    }
                });
                send(*a, d);
            }
            Op::Softplus(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| *d *= sigmoid(x));
                send(*a, d);
            }
            Op::Transpose(a) => send(*a, g.t().to_owned()),
            Op::Reshape(a) => {
                let dim = self.value(*a).raw_dim();
                let flat: Vec<F> = g.iter().copied().collect();
                send(*a, Array2::from_shape_vec(dim, flat).expect("same size"));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    send(p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    send(p, g.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                send(*a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                send(*a, d);
            }
            Op::Gather(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for (r, &k) in idx.iter().enumerate() {
                    let mut row = d.row_mut(k);
                    row += &g.row(r);
                }
                send(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = out();
                let mut d = Array2::zeros(g.raw_dim());
                for ((mut dr, gr), yr) in d.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                    let dot: F = gr.iter().zip(yr.iter()).map(|(&a, &b)| a * b).sum();
                    Zip::from(&mut dr).and(&gr).and(&yr).for_each(|d, &gv, &yv| *d = yv * (gv - dot));
                }
                send(*a, d);
            }
            Op::Unfold { x, width, pad_left } => {
                let (t, c) = self.value(*x).dim();
                let mut d = Array2::zeros((t, c));
                for row in 0..t {
                    for j in 0..*width {
                        let k = row as isize + j as isize - *pad_left as isize;
                        if k >= 0 && (k as usize) < t {
                            let mut dst = d.row_mut(k as usize);
                            dst += &g.slice(s![row, j * c..(j + 1) * c]);
                        }
                    }
                }
                send(*x, d);
            }
            Op::MaxPool2(a) => {
                let src = self.value(*a);
                let (t, c) = src.dim();
                let mut d = Array2::zeros((t, c));
                for row in 0..t {
                    for col in 0..c {
                        let from_next = row + 1 < t && src[[row + 1, col]] > src[[row, col]];
                        let k = if from_next { row + 1 } else { row };
                        d[[k, col]] += g[[row, col]];
                    }
                }
                send(*a, d);
            }
            Op::MeanAbsDiff(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = g[[0, 0]] / F::of(va.len().max(1) as f64);
                let mut d = Array2::zeros(va.raw_dim());
                Zip::from(&mut d).and(&va).and(&vb).for_each(|d, &x, &y| {
                    *d = if x > y {
                        scale
                    } else if x < y {
                        -scale
                    } else {
                        F::zero()
                    }
                });
                if nodes[b.0].needs_grad {
                    send(*b, d.mapv(|v| -v));
                }
                send(*a, d);
            }
            Op::MeanSqDiff(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = F::of(2.0) * g[[0, 0]] / F::of(va.len().max(1) as f64);
                let d = (&va - &vb).mapv(|v| v * scale);
                if nodes[b.0].needs_grad {
                    send(*b, d.mapv(|v| -v));
                }
                send(*a, d);
            }
            Op::Sum(a) => {
                let dim = self.value(*a).raw_dim();
                send(*a, Array2::from_elem(dim, g[[0, 0]]));
            }
        }
    }
}
