//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records operations as they execute (define-by-run). Values are
//! computed eagerly; [`Graph::backward`] then walks the tape in reverse and
//! accumulates one gradient per tracked leaf. The op set is deliberately
//! small: exactly what multilayer perceptrons, the contrastive losses, and
//! the policy heads in this crate need.
//!
//! Shape errors inside the graph are programming errors and panic with the
//! offending dimensions; public entry points validate their inputs and
//! return [`IcrlError`](crate::error::IcrlError) before building a graph.

use crate::error::{IcrlError, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    LogSumExpRows(Var),
    LogSoftmaxRows(Var),
    SoftmaxRows(Var),
    Diag(Var),
    Transpose(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    PairwiseL2(Var, Var),
    PairedL2(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Silu(..) => "silu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::RowSum(..) => "row_sum",
            Op::LogSumExpRows(..) => "logsumexp_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Diag(..) => "diag",
            Op::Transpose(..) => "transpose",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::PairwiseL2(..) => "pairwise_l2",
            Op::PairedL2(..) => "paired_l2",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients produced by one backward pass, addressed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, zero-filled if the loss does not
    /// depend on it.
    pub fn get(&self, v: Var, shape_of: &Graph) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape_of.value(v).shape().to_vec()),
        }
    }
}

/// A define-by-run tape of tensor operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Insert an untracked leaf. No gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Insert a tracked leaf; `backward` produces a gradient for it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Param, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul: inner dims differ, {:?} vs {:?}", ta.shape(), tb.shape());
        let mut out = vec![0.0; m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            let arow = &da[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &db[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMul(a, b), tracked)
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, op_name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{op_name}: shapes {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary_same_shape(a, b, "add", |x, y| x + y);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(t, Op::Add(a, b), tracked)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary_same_shape(a, b, "sub", |x, y| x - y);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(t, Op::Sub(a, b), tracked)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary_same_shape(a, b, "mul", |x, y| x * y);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(t, Op::Mul(a, b), tracked)
    }

    /// Broadcast-add a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = (ta.rows(), ta.cols());
        assert_eq!(tr.rows(), 1, "add_row: rhs must be a row, got {:?}", tr.shape());
        assert_eq!(tr.cols(), n, "add_row: widths {n} vs {}", tr.cols());
        let rd = tr.data();
        let mut out = ta.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += rd[j];
            }
        }
        let tracked = self.tracked(a) || self.tracked(row);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::AddRow(a, row), tracked)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x * c).collect()).unwrap();
        let tracked = self.tracked(a);
        self.push(out, Op::Scale(a, c), tracked)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x + c).collect()).unwrap();
        let tracked = self.tracked(a);
        self.push(out, Op::AddScalar(a), tracked)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).unwrap();
        let tracked = self.tracked(a);
        self.push(out, op, tracked)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid_op(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), tracked)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum();
        let n = t.len() as f64;
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s / n), Op::MeanAll(a), tracked)
    }

    /// Row-wise sum: m×n → m×1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let out: Vec<f64> = (0..m).map(|i| t.row_slice(i).iter().sum()).collect();
        let _ = n;
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![m, 1], out).unwrap(), Op::RowSum(a), tracked)
    }

    /// Row-wise log-sum-exp with max subtraction: m×n → m×1.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.rows();
        let out: Vec<f64> = (0..m).map(|i| lse(t.row_slice(i))).collect();
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![m, 1], out).unwrap(), Op::LogSumExpRows(a), tracked)
    }

    /// Row-wise log-softmax: m×n → m×n.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = t.row_slice(i);
            let l = lse(row);
            for j in 0..n {
                out[i * n + j] = row[j] - l;
            }
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::LogSoftmaxRows(a), tracked)
    }

    /// Row-wise softmax: m×n → m×n.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = t.row_slice(i);
            let l = lse(row);
            for j in 0..n {
                out[i * n + j] = (row[j] - l).exp();
            }
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::SoftmaxRows(a), tracked)
    }

    /// Main diagonal of a square matrix: m×m → m×1.
    pub fn diag(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        assert_eq!(m, n, "diag: needs a square matrix, got {:?}", t.shape());
        let out: Vec<f64> = (0..m).map(|i| t.at(i, i)).collect();
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![m, 1], out).unwrap(), Op::Diag(a), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.at(i, j);
            }
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![n, m], out).unwrap(), Op::Transpose(a), tracked)
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, p) = (ta.rows(), ta.cols());
        let (m2, q) = (tb.rows(), tb.cols());
        assert_eq!(m, m2, "concat_cols: row counts {m} vs {m2}");
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(ta.row_slice(i));
            out.extend_from_slice(tb.row_slice(i));
        }
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::new(vec![m, p + q], out).unwrap(), Op::ConcatCols(a, b), tracked)
    }

    /// Columns `from..to` of a matrix.
    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        assert!(from < to && to <= n, "slice_cols: range {from}..{to} out of width {n}");
        let w = to - from;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&t.row_slice(i)[from..to]);
        }
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![m, w], out).unwrap(), Op::SliceCols(a, from, to), tracked)
    }

    /// All-pairs Euclidean distances between row sets: (m×d, n×d) → m×n.
    ///
    /// The forward value is exact; the backward pass clamps the distance in
    /// the denominator at 1e-12 so coincident rows do not emit NaN.
    pub fn pairwise_l2(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, d) = (ta.rows(), ta.cols());
        let (n, d2) = (tb.rows(), tb.cols());
        assert_eq!(d, d2, "pairwise_l2: dims {d} vs {d2}");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ra = ta.row_slice(i);
            for j in 0..n {
                let rb = tb.row_slice(j);
                let mut s = 0.0;
                for k in 0..d {
                    let diff = ra[k] - rb[k];
                    s += diff * diff;
                }
                out[i * n + j] = s.sqrt();
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::PairwiseL2(a, b), tracked)
    }

    /// Row-paired Euclidean distances: (m×d, m×d) → m×1.
    pub fn paired_l2(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "paired_l2: shapes {:?} vs {:?}", ta.shape(), tb.shape());
        let (m, d) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; m];
        for i in 0..m {
            let (ra, rb) = (ta.row_slice(i), tb.row_slice(i));
            let mut s = 0.0;
            for k in 0..d {
                let diff = ra[k] - rb[k];
                s += diff * diff;
            }
            out[i] = s.sqrt();
        }
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::new(vec![m, 1], out).unwrap(), Op::PairedL2(a, b), tracked)
    }

    /// Reverse pass from a scalar loss. Errors if the loss is not a single
    /// finite value; the error names the earliest operation whose output
    /// went non-finite.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(IcrlError::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", lt.shape()),
            ));
        }
        if !lt.item().is_finite() {
            let culprit = self
                .nodes
                .iter()
                .find(|n| !n.value.all_finite())
                .map(|n| n.op.name())
                .unwrap_or("unknown");
            return Err(IcrlError::NonFinite {
                context: format!("loss (first non-finite op: {culprit})"),
                step: None,
            });
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if self.tracked(a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = g.row_slice(i);
                        let darow = &mut da[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let brow = &tb.data()[kk * n..(kk + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            darow[kk] = s;
                        }
                    }
                    self.add_grad(grads, a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.tracked(b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let arow = ta.row_slice(i);
                        let grow = g.row_slice(i);
                        for (kk, &av) in arow.iter().enumerate() {
                            if av == 0.0 {
                                continue;
                            }
                            let dbrow = &mut db[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                dbrow[j] += av * grow[j];
                            }
                        }
                    }
                    self.add_grad(grads, b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.add_grad(grads, a, g.clone());
                self.add_grad(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, a, g.clone());
                let neg = Tensor::new(g.shape().to_vec(), g.data().iter().map(|&x| -x).collect()).unwrap();
                self.add_grad(grads, b, neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                if self.tracked(a) {
                    let da = g.data().iter().zip(tb.data()).map(|(&gv, &bv)| gv * bv).collect();
                    self.add_grad(grads, a, Tensor::new(g.shape().to_vec(), da).unwrap());
                }
                if self.tracked(b) {
                    let db = g.data().iter().zip(ta.data()).map(|(&gv, &av)| gv * av).collect();
                    self.add_grad(grads, b, Tensor::new(g.shape().to_vec(), db).unwrap());
                }
            }
            Op::AddRow(a, row) => {
                self.add_grad(grads, a, g.clone());
                if self.tracked(row) {
                    let n = g.cols();
                    let mut dr = vec![0.0; n];
                    for i in 0..g.rows() {
                        for (j, dv) in dr.iter_mut().enumerate() {
                            *dv += g.at(i, j);
                        }
                    }
                    self.add_grad(grads, row, Tensor::new(vec![1, n], dr).unwrap());
                }
            }
            Op::Scale(a, c) => {
                let da = g.data().iter().map(|&x| x * c).collect();
                self.add_grad(grads, a, Tensor::new(g.shape().to_vec(), da).unwrap());
            }
            Op::AddScalar(a) => {
                self.add_grad(grads, a, g.clone());
            }
            Op::Silu(a) => {
                let ta = self.value(a);
                let da = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(&gv, &x)| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    })
                    .collect();
                self.add_grad(grads, a, Tensor::new(g.shape().to_vec(), da).unwrap());
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let da = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect();
                self.add_grad(grads, a, Tensor::new(g.shape().to_vec(), da).unwrap());
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let da = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect();
                self.add_grad(grads, a, Tensor::new(g.shape().to_vec(), da).unwrap());
            }
            Op::Relu(a) => {
                let ta = self.value(a);
                let da = g.data().iter().zip(ta.data()).map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 }).collect();
                self.add_grad(grads, a, Tensor::new(g.shape().to_vec(), da).unwrap());
            }
            Op::Exp(a) => {
                let y = &node.value;
                let da = g.data().iter().zip(y.data()).map(|(&gv, &yv)| gv * yv).collect();
                self.add_grad(grads, a, Tensor::new(g.shape().to_vec(), da).unwrap());
            }
            Op::Ln(a) => {
                let ta = self.value(a);
                let da = g.data().iter().zip(ta.data()).map(|(&gv, &x)| gv / x).collect();
                self.add_grad(grads, a, Tensor::new(g.shape().to_vec(), da).unwrap());
            }
            Op::SumAll(a) => {
                let gv = g.item();
                let ta = self.value(a);
                self.add_grad(grads, a, Tensor::new(ta.shape().to_vec(), vec![gv; ta.len()]).unwrap());
            }
            Op::MeanAll(a) => {
                let ta = self.value(a);
                let gv = g.item() / ta.len() as f64;
                self.add_grad(grads, a, Tensor::new(ta.shape().to_vec(), vec![gv; ta.len()]).unwrap());
            }
            Op::RowSum(a) => {
                let ta = self.value(a);
                let (m, n) = (ta.rows(), ta.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let gv = g.at(i, 0);
                    for j in 0..n {
                        da[i * n + j] = gv;
                    }
                }
                self.add_grad(grads, a, Tensor::new(vec![m, n], da).unwrap());
            }
            Op::LogSumExpRows(a) => {
                let ta = self.value(a);
                let (m, n) = (ta.rows(), ta.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let l = node.value.at(i, 0);
                    let gv = g.at(i, 0);
                    let row = ta.row_slice(i);
                    for j in 0..n {
                        da[i * n + j] = gv * (row[j] - l).exp();
                    }
                }
                self.add_grad(grads, a, Tensor::new(vec![m, n], da).unwrap());
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let grow = g.row_slice(i);
                    let gsum: f64 = grow.iter().sum();
                    let yrow = y.row_slice(i);
                    for j in 0..n {
                        da[i * n + j] = grow[j] - yrow[j].exp() * gsum;
                    }
                }
                self.add_grad(grads, a, Tensor::new(vec![m, n], da).unwrap());
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let grow = g.row_slice(i);
                    let yrow = y.row_slice(i);
                    let dot: f64 = grow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                    for j in 0..n {
                        da[i * n + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.add_grad(grads, a, Tensor::new(vec![m, n], da).unwrap());
            }
            Op::Diag(a) => {
                let ta = self.value(a);
                let m = ta.rows();
                let mut da = vec![0.0; m * m];
                for i in 0..m {
                    da[i * m + i] = g.at(i, 0);
                }
                self.add_grad(grads, a, Tensor::new(vec![m, m], da).unwrap());
            }
            Op::Transpose(a) => {
                let (n, m) = (g.rows(), g.cols());
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = g.at(i, j);
                    }
                }
                self.add_grad(grads, a, Tensor::new(vec![m, n], da).unwrap());
            }
            Op::ConcatCols(a, b) => {
                let (pa, pb) = (self.value(a).cols(), self.value(b).cols());
                let m = g.rows();
                if self.tracked(a) {
                    let mut da = Vec::with_capacity(m * pa);
                    for i in 0..m {
                        da.extend_from_slice(&g.row_slice(i)[..pa]);
                    }
                    self.add_grad(grads, a, Tensor::new(vec![m, pa], da).unwrap());
                }
                if self.tracked(b) {
                    let mut db = Vec::with_capacity(m * pb);
                    for i in 0..m {
                        db.extend_from_slice(&g.row_slice(i)[pa..]);
                    }
                    self.add_grad(grads, b, Tensor::new(vec![m, pb], db).unwrap());
                }
            }
            Op::SliceCols(a, from, _to) => {
                let ta = self.value(a);
                let (m, n) = (ta.rows(), ta.cols());
                let w = g.cols();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..w {
                        da[i * n + from + j] = g.at(i, j);
                    }
                }
                self.add_grad(grads, a, Tensor::new(vec![m, n], da).unwrap());
            }
            Op::PairwiseL2(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, d) = (ta.rows(), ta.cols());
                let n = tb.rows();
                let dist = &node.value;
                let mut da = vec![0.0; m * d];
                let mut db = vec![0.0; n * d];
                for i in 0..m {
                    let ra = ta.row_slice(i);
                    for j in 0..n {
                        let gv = g.at(i, j);
                        if gv == 0.0 {
                            continue;
                        }
                        let rb = tb.row_slice(j);
                        let denom = dist.at(i, j).max(1e-12);
                        for k in 0..d {
                            let u = gv * (ra[k] - rb[k]) / denom;
                            da[i * d + k] += u;
                            db[j * d + k] -= u;
                        }
                    }
                }
                if self.tracked(a) {
                    self.add_grad(grads, a, Tensor::new(vec![m, d], da).unwrap());
                }
                if self.tracked(b) {
                    self.add_grad(grads, b, Tensor::new(vec![n, d], db).unwrap());
                }
            }
            Op::PairedL2(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, d) = (ta.rows(), ta.cols());
                let dist = &node.value;
                let mut da = vec![0.0; m * d];
                let mut db = vec![0.0; m * d];
                for i in 0..m {
                    let gv = g.at(i, 0);
                    if gv == 0.0 {
                        continue;
                    }
                    let (ra, rb) = (ta.row_slice(i), tb.row_slice(i));
                    let denom = dist.at(i, 0).max(1e-12);
                    for k in 0..d {
                        let u = gv * (ra[k] - rb[k]) / denom;
                        da[i * d + k] += u;
                        db[i * d + k] -= u;
                    }
                }
                if self.tracked(a) {
                    self.add_grad(grads, a, Tensor::new(vec![m, d], da).unwrap());
                }
                if self.tracked(b) {
                    self.add_grad(grads, b, Tensor::new(vec![m, d], db).unwrap());
                }
            }
        }
    }
}

/// Log-sum-exp of a slice with max subtraction.
pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_via_mul_doubles_gradient() {
        // loss = x·x at x = 3 → d/dx = 6
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x, &g).item(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        let c = g.constant(Tensor::scalar(5.0));
        let _unused = g.sum_all(x);
        let grads = g.backward(c).unwrap();
        assert!(grads.get(x, &g).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonfinite_loss_names_the_operation() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(-1.0));
        let y = g.ln(x); // ln(-1) = NaN
        let s = g.sum_all(y);
        let err = g.backward(s).unwrap_err();
        assert!(err.to_string().contains("ln"), "got: {err}");
    }

    #[test]
    fn backward_rejects_vector_loss() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn logsumexp_matches_naive() {
        assert!((lse(&[0.0, 0.0]) - 2.0_f64.ln()).abs() < 1e-15);
        assert!((lse(&[1000.0, 1000.0]) - (1000.0 + 2.0_f64.ln())).abs() < 1e-9);
    }
}
