//! Minimal tape-based reverse-mode differentiation over `f64` vectors.
//!
//! Nodes hold dense vectors (scalars are length-1 vectors). Parameter
//! tensors live outside the tape in a [`ParamSet`]; ops that read them
//! accumulate straight into a [`GradBuffer`] on the backward pass, so one
//! tape can be built per example and dropped after `backward`.
//!
//! Every ReLU records its input as a "kink" so that finite-difference checks
//! can skip coordinates whose perturbation crosses a non-differentiable point.

use serde::{Deserialize, Serialize};

/// Dense row-major parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// A fixed list of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn zeros_like(other: &ParamSet) -> Self {
        Self {
            tensors: other.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, tensor: usize, idx: usize) -> f64 {
        self.tensors[tensor].data[idx]
    }

    pub fn set(&mut self, tensor: usize, idx: usize, value: f64) {
        self.tensors[tensor].data[idx] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = value);
        }
    }

    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|&x| x == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Per-parameter gradient accumulators, shaped like the parameters.
pub type GradBuffer = ParamSet;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    ParamRow { param: usize, row: usize },
    EmbedMean { param: usize, rows: Vec<usize> },
    Affine { w: usize, b: usize, x: Var },
    Concat(Vec<Var>),
    Tanh(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Ln(Var),
    Recip(Var),
    Softplus(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Vec<Var>),
    SumSquares(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    kinks: Vec<f64>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            kinks: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1, "scalar() on a vector node");
        val[0]
    }

    /// Inputs of every ReLU and every explicitly noted kink, in creation order.
    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    /// Records a signed distance to a non-differentiable point.
    pub fn note_kink(&mut self, distance: f64) {
        self.kinks.push(distance);
    }

    pub fn constant(&mut self, x: f64) -> Var {
        self.push(vec![x], Op::Constant)
    }

    pub fn constant_vec(&mut self, x: Vec<f64>) -> Var {
        self.push(x, Op::Constant)
    }

    /// One row of a parameter matrix (or the whole vector of a 1-row tensor).
    pub fn param_row(&mut self, param: usize, row: usize) -> Var {
        let v = self.params.tensors[param].row(row).to_vec();
        self.push(v, Op::ParamRow { param, row })
    }

    /// Mean of the selected rows of a parameter matrix; zeros when `rows` is empty.
    pub fn embed_mean(&mut self, param: usize, rows: &[usize]) -> Var {
        let t = &self.params.tensors[param];
        let mut out = vec![0.0; t.cols];
        for &r in rows {
            for (o, x) in out.iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        if !rows.is_empty() {
            let inv = 1.0 / rows.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        self.push(
            out,
            Op::EmbedMean {
                param,
                rows: rows.to_vec(),
            },
        )
    }

    /// `W x + b` with `W` of shape `out × in` and `b` a `1 × out` tensor.
    pub fn affine(&mut self, w: usize, b: usize, x: Var) -> Var {
        let wt = &self.params.tensors[w];
        let bt = &self.params.tensors[b];
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(wt.cols, xv.len());
        let out = affine_forward(wt, &bt.data, xv);
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(out, Op::Tanh(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = log_softmax(&self.nodes[x.0].value);
        self.push(out, Op::LogSoftmax(x))
    }

    pub fn pick(&mut self, x: Var, i: usize) -> Var {
        let v = self.nodes[x.0].value[i];
        self.push(vec![v], Op::Pick(x, i))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(out, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x + c).collect();
        self.push(out, Op::Offset(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        self.push(out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        self.push(out, Op::Ln(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| 1.0 / x).collect();
        self.push(out, Op::Recip(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|&x| softplus(x)).collect();
        self.push(out, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let input = &self.nodes[a.0].value;
        self.kinks.extend_from_slice(input);
        let out = input.iter().map(|&x| x.max(0.0)).collect();
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(out, Op::Sigmoid(a))
    }

    /// Sum of scalar nodes; `0` for an empty list.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let total = xs.iter().map(|x| self.nodes[x.0].value[0]).sum();
        self.push(vec![total], Op::Sum(xs.to_vec()))
    }

    /// `Σ θ²` over one parameter tensor.
    pub fn sum_squares(&mut self, param: usize) -> Var {
        let total = self.params.tensors[param].data.iter().map(|x| x * x).sum();
        self.push(vec![total], Op::SumSquares(param))
    }

    /// Numerically stable `ln Σ e^{x_i}` over scalar nodes.
    pub fn log_sum_exp(&mut self, xs: &[Var]) -> Var {
        let max = xs
            .iter()
            .map(|x| self.nodes[x.0].value[0])
            .fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<Var> = xs
            .iter()
            .map(|&x| {
                let s = self.offset(x, -max);
                self.exp(s)
            })
            .collect();
        let total = self.sum(&shifted);
        let l = self.ln(total);
        self.offset(l, max)
    }

    /// Reverse sweep from scalar `output`, accumulating parameter gradients
    /// into a fresh buffer.
    pub fn backward(&self, output: Var) -> GradBuffer {
        let mut grads = GradBuffer::zeros_like(self.params);
        self.backward_into(output, 1.0, &mut grads);
        grads
    }

    /// Like [`Tape::backward`] but adds `seed · ∂output/∂θ` into `grads`.
    pub fn backward_into(&self, output: Var, seed: f64, grads: &mut GradBuffer) {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(vec![seed; self.nodes[output.0].value.len()]);

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::ParamRow { param, row } => {
                    let t = &mut grads.tensors[*param];
                    let cols = t.cols;
                    for (d, gv) in t.data[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::EmbedMean { param, rows } => {
                    if rows.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / rows.len() as f64;
                    let t = &mut grads.tensors[*param];
                    let cols = t.cols;
                    for &r in rows {
                        for (d, gv) in t.data[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                            *d += gv * inv;
                        }
                    }
                }
                Op::Affine { w, b, x } => {
                    let wt = &self.params.tensors[*w];
                    let xv = &self.nodes[x.0].value;
                    let (rows, cols) = (wt.rows, wt.cols);
                    let mut gx = vec![0.0; cols];
                    {
                        let gw = &mut grads.tensors[*w].data;
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let wrow = &wt.data[r * cols..(r + 1) * cols];
                            let gwrow = &mut gw[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                gwrow[c] += gr * xv[c];
                                gx[c] += gr * wrow[c];
                            }
                        }
                    }
                    for (d, gv) in grads.tensors[*b].data.iter_mut().zip(&g) {
                        *d += gv;
                    }
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut adj, *p, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Tanh(x) => {
                    let gx: Vec<f64> = g.iter().zip(&node.value).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::LogSoftmax(x) => {
                    let gsum: f64 = g.iter().sum();
                    let gx: Vec<f64> = g.iter().zip(&node.value).map(|(gv, lp)| gv - lp.exp() * gsum).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Pick(x, idx) => {
                    let n = self.nodes[x.0].value.len();
                    let slot = adj[x.0].get_or_insert_with(|| vec![0.0; n]);
                    slot[*idx] += g[0];
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut adj, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Offset(a) => accumulate(&mut adj, *a, &g),
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(&node.value).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Ln(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga: Vec<f64> = g.iter().zip(av).map(|(x, y)| x / y).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Recip(a) => {
                    let ga: Vec<f64> = g.iter().zip(&node.value).map(|(x, y)| -x * y * y).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Softplus(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga: Vec<f64> = g.iter().zip(av).map(|(x, &y)| x * sigmoid(y)).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga: Vec<f64> = g.iter().zip(av).map(|(x, &y)| if y > 0.0 { *x } else { 0.0 }).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g.iter().zip(&node.value).map(|(x, y)| x * y * (1.0 - y)).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sum(xs) => {
                    for x in xs {
                        accumulate(&mut adj, *x, &g);
                    }
                }
                Op::SumSquares(param) => {
                    let src = &self.params.tensors[*param].data;
                    for (d, x) in grads.tensors[*param].data.iter_mut().zip(src) {
                        *d += 2.0 * x * g[0];
                    }
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(slot) => {
            for (s, x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn affine_forward(w: &Tensor, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.rows);
    for (r, bias) in b.iter().enumerate().take(w.rows) {
        let row = w.row(r);
        let mut acc = 0.0;
        for c in 0..w.cols {
            acc += row[c] * x[c];
        }
        out.push(acc + bias);
    }
    out
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    x.iter().map(|v| v - lse).collect()
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
