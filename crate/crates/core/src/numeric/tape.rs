//! Vector-valued reverse-mode differentiation.
//!
//! Forward ops append nodes to a [`Tape`]; [`Tape::backward`] walks the tape
//! in reverse and accumulates gradients into the [`ModelParams`] tensors the
//! parameter leaves were read from. Parameter leaves are memoized per tape so
//! every use of a tensor (or embedding row) shares one node.

use std::collections::HashMap;

use super::params::{ModelParams, ParamId};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { id: ParamId, row: Option<usize> },
    /// `w · x (+ b)` with `w` of shape `[rows × cols]`.
    Affine { w: Var, x: Var, b: Option<Var>, cols: usize },
    Add(Var, Var),
    Relu(Var),
    Concat(Vec<Var>),
    /// Scalars gathered into a vector.
    Stack(Vec<Var>),
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    Sum(Vec<Var>),
    Scale(Var, f64),
    Dot(Var, Var),
    Sigmoid(Var),
    Bce { prob: Var, label: f64 },
    Mean(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Lower clamp on log arguments of the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<(ParamId, Option<usize>), Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn expect_len(&self, op: &'static str, v: Var, len: usize) -> Result<()> {
        let got = self.value(v).len();
        if got != len {
            return Err(Error::dim(op, format!("expected length {len}, got {got}")));
        }
        Ok(())
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Constant)
    }

    /// Leaf holding a whole parameter tensor.
    pub fn param(&mut self, params: &ModelParams, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&(id, None)) {
            return v;
        }
        let v = self.push(params.get(id).values().to_vec(), Op::Param { id, row: None });
        self.params.insert((id, None), v);
        v
    }

    /// Leaf holding one row of an embedding table.
    pub fn param_row(&mut self, params: &ModelParams, id: ParamId, row: usize) -> Result<Var> {
        if let Some(&v) = self.params.get(&(id, Some(row))) {
            return Ok(v);
        }
        let t = params.get(id);
        if row >= t.rows() {
            return Err(Error::Index {
                kind: id.name(),
                id: row,
                count: t.rows(),
            });
        }
        let v = self.push(t.row(row).to_vec(), Op::Param { id, row: Some(row) });
        self.params.insert((id, Some(row)), v);
        Ok(v)
    }

    /// `w · x + b`; `w` is a row-major matrix with `x.len()` columns.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let cols = self.value(x).len();
        let wl = self.value(w).len();
        if cols == 0 || !wl.is_multiple_of(cols) {
            return Err(Error::dim(
                "affine",
                format!("matrix of {wl} entries cannot multiply a vector of length {cols}"),
            ));
        }
        let rows = wl / cols;
        if let Some(b) = b {
            self.expect_len("affine", b, rows)?;
        }
        let (wv, xv) = (self.value(w), self.value(x));
        let mut out: Vec<f64> = wv.chunks_exact(cols).map(|r| dot(r, xv)).collect();
        if let Some(b) = b {
            for (o, bi) in out.iter_mut().zip(self.value(b)) {
                *o += bi;
            }
        }
        Ok(self.push(out, Op::Affine { w, x, b, cols }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_len("add", b, self.value(a).len())?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        self.push(out, Op::Relu(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        for &s in scalars {
            self.expect_len("stack", s, 1)?;
        }
        let out = scalars.iter().map(|&s| self.scalar(s)).collect();
        Ok(self.push(out, Op::Stack(scalars.to_vec())))
    }

    /// Max-subtracted softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax(self.value(x));
        self.push(out, Op::Softmax(x))
    }

    /// `Σ_i weights[i] · items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        self.expect_len("weighted_sum", weights, items.len())?;
        let Some(&first) = items.first() else {
            return Err(Error::dim("weighted_sum", "no items"));
        };
        let d = self.value(first).len();
        let mut out = vec![0.0; d];
        for (&w, &item) in self.value(weights).iter().zip(items) {
            let iv = self.value(item);
            if iv.len() != d {
                return Err(Error::dim("weighted_sum", format!("item length {} != {d}", iv.len())));
            }
            for (o, x) in out.iter_mut().zip(iv) {
                *o += w * x;
            }
        }
        Ok(self.push(out, Op::WeightedSum { weights, items: items.to_vec() }))
    }

    pub fn sum(&mut self, items: &[Var]) -> Result<Var> {
        let Some(&first) = items.first() else {
            return Err(Error::dim("sum", "no items"));
        };
        let mut out = self.value(first).to_vec();
        for &item in &items[1..] {
            self.expect_len("sum", item, out.len())?;
            for (o, x) in out.iter_mut().zip(self.value(item)) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::Sum(items.to_vec())))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        self.push(out, Op::Scale(x, factor))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_len("dot", b, self.value(a).len())?;
        let out = dot(self.value(a), self.value(b));
        Ok(self.push(vec![out], Op::Dot(a, b)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(out, Op::Sigmoid(x))
    }

    /// Binary cross-entropy of a probability against a `{0, 1}` label, with
    /// log arguments clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`.
    pub fn bce(&mut self, prob: Var, label: f64) -> Result<Var> {
        self.expect_len("bce", prob, 1)?;
        let out = bce(self.scalar(prob), label);
        Ok(self.push(vec![out], Op::Bce { prob, label }))
    }

    pub fn mean(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::dim("mean", "no items"));
        }
        for &s in scalars {
            self.expect_len("mean", s, 1)?;
        }
        let out = scalars.iter().map(|&s| self.scalar(s)).sum::<f64>() / scalars.len() as f64;
        Ok(self.push(vec![out], Op::Mean(scalars.to_vec())))
    }

    /// Back-propagates from the scalar `loss`. Every parameter's gradient is
    /// reset first, so parameters the loss never touched end with zeros.
    pub fn backward(&self, loss: Var, params: &mut ModelParams) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called before any forward op".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got length {}",
                self.value(loss).len()
            )));
        }
        params.zero_grads();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param { id, row } => {
                    let t = params.get_mut(*id);
                    let cols = t.cols();
                    let dst = match row {
                        Some(r) => &mut t.grad_mut()[r * cols..(r + 1) * cols],
                        None => t.grad_mut(),
                    };
                    axpy(dst, 1.0, &g);
                }
                Op::Affine { w, x, b, cols } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let mut gw = vec![0.0; wv.len()];
                    let mut gx = vec![0.0; *cols];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let wrow = &wv[r * cols..(r + 1) * cols];
                        axpy(&mut gw[r * cols..(r + 1) * cols], gr, xv);
                        axpy(&mut gx, gr, wrow);
                    }
                    accumulate(&mut grads, *w, &gw);
                    accumulate(&mut grads, *x, &gx);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, &g);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Relu(x) => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x))
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        accumulate(&mut grads, p, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Stack(scalars) => {
                    for (&s, gi) in scalars.iter().zip(&g) {
                        accumulate(&mut grads, s, &[*gi]);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let gy = dot(&g, y);
                    let gx: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi * (gi - gy)).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::WeightedSum { weights, items } => {
                    let wv = self.value(*weights);
                    let gw: Vec<f64> = items.iter().map(|&it| dot(&g, self.value(it))).collect();
                    for (&it, &w) in items.iter().zip(wv) {
                        let gi: Vec<f64> = g.iter().map(|x| x * w).collect();
                        accumulate(&mut grads, it, &gi);
                    }
                    accumulate(&mut grads, *weights, &gw);
                }
                Op::Sum(items) => {
                    for &it in items {
                        accumulate(&mut grads, it, &g);
                    }
                }
                Op::Scale(x, f) => {
                    let gx: Vec<f64> = g.iter().map(|v| v * f).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> = self.value(*b).iter().map(|v| v * g[0]).collect();
                    let gb: Vec<f64> = self.value(*a).iter().map(|v| v * g[0]).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Sigmoid(x) => {
                    let gx: Vec<f64> = node.value.iter().zip(&g).map(|(s, gi)| gi * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Bce { prob, label } => {
                    let p = self.scalar(*prob);
                    let dp = if !(LOG_CLAMP..=1.0 - LOG_CLAMP).contains(&p) {
                        0.0
                    } else {
                        -label / p + (1.0 - label) / (1.0 - p)
                    };
                    accumulate(&mut grads, *prob, &[g[0] * dp]);
                }
                Op::Mean(scalars) => {
                    let share = g[0] / scalars.len() as f64;
                    for &s in scalars {
                        accumulate(&mut grads, s, &[share]);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => axpy(acc, 1.0, g),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, xi) in dst.iter_mut().zip(x) {
        *d += a * xi;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function, kept strictly inside `(0, 1)` for every finite input.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn bce(p: f64, label: f64) -> f64 {
    let p = p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}
