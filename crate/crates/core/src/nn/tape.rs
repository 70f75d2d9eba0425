//! Reverse-mode differentiation over a linear tape of tensor operations.

use super::tensor::gemm;
use super::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Clamp(Var, f32, f32),
    Scale(Var, f32),
    OneMinus(Var),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SumAll(Var),
    WeightedHuber {
        pred: Var,
        residual: Vec<f32>,
        weights: Vec<f32>,
        delta: f32,
    },
    KlRows(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 0.5x² inside ±δ, linear with matching slope outside.
pub fn huber(x: f32, delta: f32) -> f32 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if cfg!(debug_assertions) && !value.is_finite() {
            panic!("non-finite value produced by {op:?}");
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(k, tb.rows(), "matmul: inner dimensions {k} and {}", tb.rows());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b))
    }

    /// `a` (n×m) plus the length-m row `bias` on every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(bias));
        let m = ta.cols();
        assert_eq!(tb.len(), m, "add_row: bias length");
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f32, f32) -> f32, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(out, Op::OneMinus(a))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        let (rows, cols) = (ta.rows(), ta.cols());
        assert!(start + len <= cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        self.push(Tensor::matrix(rows, len, data), Op::SliceCols(a, start))
    }

    /// Rows of `a` picked by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(ta.row(i));
        }
        self.push(Tensor::matrix(idx.len(), c, data), Op::GatherRows(a, idx))
    }

    /// Output row `r` is the sum of the rows `k` of `a` with `idx[k] == r`.
    /// Sums are accumulated in f64 in row order.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Vec<usize>, rows: usize) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        assert_eq!(ta.rows(), idx.len(), "scatter_add_rows: index length");
        let mut acc = vec![0.0f64; rows * c];
        for (k, &r) in idx.iter().enumerate() {
            for (x, &v) in acc[r * c..(r + 1) * c].iter_mut().zip(ta.row(k)) {
                *x += v as f64;
            }
        }
        let out = Tensor::matrix(rows, c, acc.into_iter().map(|x| x as f32).collect());
        self.push(out, Op::ScatterAddRows(a, idx))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&x| x as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::SumAll(a))
    }

    /// Σᵢ wᵢ · huber(predᵢ − targetᵢ, δ) as a scalar.
    pub fn weighted_huber(&mut self, pred: Var, target: &[f32], weights: &[f32], delta: f32) -> Var {
        let tp = self.value(pred);
        assert_eq!(tp.len(), target.len(), "weighted_huber: target length");
        assert_eq!(tp.len(), weights.len(), "weighted_huber: weight length");
        let residual: Vec<f32> = tp.data().iter().zip(target).map(|(p, t)| p - t).collect();
        let total: f64 = residual
            .iter()
            .zip(weights)
            .map(|(&r, &w)| w as f64 * huber(r, delta) as f64)
            .sum();
        self.push(
            Tensor::scalar(total as f32),
            Op::WeightedHuber {
                pred,
                residual,
                weights: weights.to_vec(),
                delta,
            },
        )
    }

    /// Per-row KL(N(μ, σ²) ‖ N(0, 1)) with `log_sigma` the log standard
    /// deviation; returns one value per row.
    pub fn kl_rows(&mut self, mu: Var, log_sigma: Var) -> Var {
        let (tm, ts) = (self.value(mu), self.value(log_sigma));
        same_shape("kl_rows", tm, ts);
        let rows = tm.rows();
        let out: Vec<f32> = (0..rows)
            .map(|r| {
                tm.row(r)
                    .iter()
                    .zip(ts.row(r))
                    .map(|(&m, &s)| 0.5 * (m as f64 * m as f64 + (2.0 * s as f64).exp() - 1.0 - 2.0 * s as f64))
                    .sum::<f64>() as f32
            })
            .collect();
        self.push(Tensor::vector(out), Op::KlRows(mu, log_sigma))
    }

    /// Hash of which side of every ReLU and clamp kink each input lies on.
    /// Finite differences are only meaningful when this does not change.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bit: bool| {
            h ^= bit as u64 + 1;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => self.value(*a).data().iter().for_each(|&x| mix(x > 0.0)),
                Op::Clamp(a, lo, hi) => self.value(*a).data().iter().for_each(|&x| {
                    mix(x >= *lo);
                    mix(x <= *hi);
                }),
                _ => {}
            }
        }
        h
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut da, false);
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, false);
                    accumulate(&mut grads, *a, Tensor::new(ta.shape().to_vec(), da));
                    accumulate(&mut grads, *b, Tensor::new(tb.shape().to_vec(), db));
                }
                Op::AddRow(a, bias) => {
                    let m = g.cols();
                    let mut db = vec![0.0f64; m];
                    for row in g.data().chunks(m) {
                        for (x, &v) in db.iter_mut().zip(row) {
                            *x += v as f64;
                        }
                    }
                    let tb = self.value(*bias);
                    let db = Tensor::new(tb.shape().to_vec(), db.into_iter().map(|x| x as f32).collect());
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, elementwise(&g, tb, |x, y| x * y));
                    accumulate(&mut grads, *b, elementwise(&g, ta, |x, y| x * y));
                }
                Op::Sigmoid(a) => {
                    let d = elementwise(&g, &node.value, |x, s| x * s * (1.0 - s));
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = elementwise(&g, &node.value, |x, t| x * (1.0 - t * t));
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let d = elementwise(&g, self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = elementwise(&g, &node.value, |x, e| x * e);
                    accumulate(&mut grads, *a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let d = elementwise(&g, self.value(*a), |x, v| if v >= lo && v <= hi { x } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| c * x));
                }
                Op::OneMinus(a) => accumulate(&mut grads, *a, g.map(|x| -x)),
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let (rows, cols, len) = (ta.rows(), ta.cols(), g.cols());
                    let mut d = Tensor::zeros(ta.shape());
                    for r in 0..rows {
                        d.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut acc = vec![0.0f64; ta.len()];
                    for (k, &r) in idx.iter().enumerate() {
                        for (x, &v) in acc[r * c..(r + 1) * c].iter_mut().zip(g.row(k)) {
                            *x += v as f64;
                        }
                    }
                    let d = Tensor::new(ta.shape().to_vec(), acc.into_iter().map(|x| x as f32).collect());
                    accumulate(&mut grads, *a, d);
                }
                Op::ScatterAddRows(a, idx) => {
                    let ta = self.value(*a);
                    let mut data = Vec::with_capacity(ta.len());
                    for &r in idx {
                        data.extend_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, Tensor::new(ta.shape().to_vec(), data));
                }
                Op::SumAll(a) => {
                    let ta = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::full(ta.shape(), g.item()));
                }
                Op::WeightedHuber {
                    pred,
                    residual,
                    weights,
                    delta,
                } => {
                    let s = g.item();
                    let tp = self.value(*pred);
                    let data = residual
                        .iter()
                        .zip(weights)
                        .map(|(&r, &w)| s * w * r.clamp(-delta, *delta))
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::new(tp.shape().to_vec(), data));
                }
                Op::KlRows(mu, log_sigma) => {
                    let (tm, ts) = (self.value(*mu), self.value(*log_sigma));
                    let c = tm.cols();
                    let mut dm = Vec::with_capacity(tm.len());
                    let mut ds = Vec::with_capacity(ts.len());
                    for r in 0..tm.rows() {
                        let gr = g.data()[r];
                        for k in 0..c {
                            let m = tm.row(r)[k];
                            let s = ts.row(r)[k];
                            dm.push(gr * m);
                            ds.push(gr * ((2.0 * s).exp() - 1.0));
                        }
                    }
                    accumulate(&mut grads, *mu, Tensor::new(tm.shape().to_vec(), dm));
                    accumulate(&mut grads, *log_sigma, Tensor::new(ts.shape().to_vec(), ds));
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    /// Parameter gradients gathered from a backward pass, indexed like
    /// `store` (parameters absent from the tape get zeros).
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Tensor> {
        let mut out = store.zeros_like();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                out[id.0].add_assign(g);
            }
        }
        out
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_values() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(-2.0, 1.0), 1.5);
        assert_eq!(huber(0.5, 1.0), 0.125);
    }

    #[test]
    fn matmul_gradient_by_hand() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let b = t.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]));
        let c = t.matmul(a, b);
        let s = t.sum_all(c);
        assert_eq!(t.value(s).item(), 11.0);
        let g = t.backward(s);
        assert_eq!(g.wrt(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn scatter_and_gather_are_adjoint() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]));
        let s = t.scatter_add_rows(a, vec![1, 0, 1], 2);
        assert_eq!(t.value(s).data(), &[2.0, 4.0]);
        let w = t.constant(Tensor::matrix(2, 1, vec![10.0, 100.0]));
        let p = t.mul(s, w);
        let l = t.sum_all(p);
        let g = t.backward(l);
        assert_eq!(g.wrt(a).unwrap().data(), &[100.0, 10.0, 100.0]);
    }

    #[test]
    fn kl_closed_form() {
        let mut t = Tape::new();
        let mu = t.constant(Tensor::full(&[1, 256], 1.0));
        let ls = t.constant(Tensor::zeros(&[1, 256]));
        let kl = t.kl_rows(mu, ls);
        assert_eq!(t.value(kl).item(), 128.0);
        let mu0 = t.constant(Tensor::zeros(&[1, 4]));
        let ls0 = t.constant(Tensor::zeros(&[1, 4]));
        let kl0 = t.kl_rows(mu0, ls0);
        assert_eq!(t.value(kl0).item(), 0.0);
    }
}
