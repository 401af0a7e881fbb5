//! Reverse-mode differentiation over [`DenseMatrix`] values.
//!
//! A [`Tape`] lives for one forward/backward pass. Nodes are appended in
//! creation order, which is a topological order, so `backward` walks the
//! node list in reverse and visits each node once. Leaves created with
//! [`Tape::param`] receive gradient buffers; leaves created with
//! [`Tape::constant`] do not, and neither does anything computed purely
//! from constants.

use super::{CsrMatrix, DenseMatrix, NumError};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Spmm(&'a CsrMatrix, Var),
    SpmmValues(&'a CsrMatrix, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f32),
    ScaleByVar(Var, Var),
    Mul(Var, Var),
    Act(Activation, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    RepeatRows(Var),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ColMean(Var),
    ColSum(Var),
    DiagBilinear(Var, Var, Var),
    Bce(Var, Vec<f32>),
    SoftmaxCe(Var, Vec<usize>),
    L1(Var, Var),
    Mse(Var, Var),
}

struct Node<'a> {
    value: DenseMatrix,
    op: Op<'a>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradient buffers indexed by node; `None` for nodes off every parameter path.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when no gradient reached it.
    pub fn wrt(&self, v: Var) -> DenseMatrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

fn stable_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn row_log_softmax(x: &DenseMatrix) -> DenseMatrix {
    let (n, c) = x.shape();
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        let row = x.row(r);
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&v| (v as f64 - lse) as f32));
    }
    DenseMatrix::from_raw(n, c, out)
}

fn row_softmax(x: &DenseMatrix) -> DenseMatrix {
    let (n, c) = x.shape();
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        let row = x.row(r);
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| (e / total) as f32));
    }
    DenseMatrix::from_raw(n, c, out)
}

/// Row-wise softmax outside any tape.
pub fn softmax_rows(x: &DenseMatrix) -> DenseMatrix {
    row_softmax(x)
}

/// Row-wise log-softmax outside any tape.
pub fn log_softmax_rows(x: &DenseMatrix) -> DenseMatrix {
    row_log_softmax(x)
}

/// Logistic function evaluated in a branch that never overflows.
pub fn sigmoid(t: f32) -> f32 {
    stable_sigmoid(t as f64) as f32
}

fn ensure_same(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<(), NumError> {
    if a.shape() != b.shape() {
        return Err(NumError::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f32 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    fn push(&mut self, op_name: &'static str, value: DenseMatrix, op: Op<'a>) -> Result<Var, NumError> {
        if let Some(pos) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: op_name, index: pos });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRowBias(a, b)
            | Op::ScaleByVar(a, b)
            | Op::Mul(a, b)
            | Op::L1(a, b)
            | Op::Mse(a, b) => self.rg(*a) || self.rg(*b),
            Op::SpmmValues(_, a, b) => self.rg(*a) || self.rg(*b),
            Op::DiagBilinear(a, w, b) => self.rg(*a) || self.rg(*w) || self.rg(*b),
            Op::Spmm(_, a)
            | Op::Scale(a, _)
            | Op::Act(_, a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RepeatRows(a)
            | Op::SelectRows(a, _)
            | Op::SliceCols(a, _)
            | Op::ColMean(a)
            | Op::ColSum(a)
            | Op::Bce(a, _)
            | Op::SoftmaxCe(a, _) => self.rg(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn spmm(&mut self, s: &'a CsrMatrix, b: Var) -> Result<Var, NumError> {
        let out = s.spmm(self.value(b))?;
        self.push("spmm", out, Op::Spmm(s, b))
    }

    /// Sparse product where the nonzero values come from a `1 x nnz` node.
    pub fn spmm_values(&mut self, pattern: &'a CsrMatrix, values: Var, b: Var) -> Result<Var, NumError> {
        let vals = self.value(values);
        if vals.shape() != (1, pattern.nnz()) {
            return Err(NumError::dim("spmm_values", (1, pattern.nnz()), vals.shape()));
        }
        let out = pattern.with_values(vals.data())?.spmm(self.value(b))?;
        self.push("spmm_values", out, Op::SpmmValues(pattern, values, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y).map_err(|_| {
            NumError::dim("add", self.value(a).shape(), self.value(b).shape())
        })?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y).map_err(|_| {
            NumError::dim("sub", self.value(a).shape(), self.value(b).shape())
        })?;
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Adds a `1 x cols` row to every row of `x`. The only broadcasting op.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(NumError::dim("add_row_bias", xv.shape(), bv.shape()));
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bv.data()[i % c];
        }
        let out = DenseMatrix::from_raw(xv.rows(), c, data);
        self.push("add_row_bias", out, Op::AddRowBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var, NumError> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale(x, factor))
    }

    /// Multiplies `x` by the single entry of a `1 x 1` node.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var, NumError> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(NumError::dim("scale_by", (1, 1), sv.shape()));
        }
        let f = sv.get(0, 0);
        let out = self.value(x).map(|v| v * f);
        self.push("scale_by", out, Op::ScaleByVar(x, s))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y).map_err(|_| {
            NumError::dim("mul", self.value(a).shape(), self.value(b).shape())
        })?;
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn elementwise(&mut self, kind: Activation, x: Var) -> Result<Var, NumError> {
        let out = match kind {
            Activation::Relu => self.value(x).map(|v| v.max(0.0)),
            Activation::Sigmoid => self.value(x).map(sigmoid),
        };
        self.push("elementwise", out, Op::Act(kind, x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumError> {
        self.elementwise(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumError> {
        self.elementwise(Activation::Sigmoid, x)
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var, NumError> {
        let out = row_softmax(self.value(x));
        self.push("row_softmax", out, Op::Softmax(x))
    }

    pub fn row_log_softmax(&mut self, x: Var) -> Result<Var, NumError> {
        let out = row_log_softmax(self.value(x));
        self.push("row_log_softmax", out, Op::LogSoftmax(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumError> {
        let out = DenseMatrix::scalar(self.value(x).sum() as f32);
        self.push("sum", out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumError> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(NumError::Contract("mean of an empty matrix".into()));
        }
        let out = DenseMatrix::scalar((v.sum() / v.len() as f64) as f32);
        self.push("mean", out, Op::Mean(x))
    }

    /// Tiles a `1 x cols` row into `n x cols`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var, NumError> {
        let v = self.value(x);
        if v.rows() != 1 {
            return Err(NumError::dim("repeat_rows", (1, v.cols()), v.shape()));
        }
        let out = DenseMatrix::from_raw(n, v.cols(), v.data().repeat(n));
        self.push("repeat_rows", out, Op::RepeatRows(x))
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumError> {
        let out = self.value(x).select_rows(idx)?;
        self.push("select_rows", out, Op::SelectRows(x, idx.to_vec()))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let v = self.value(x);
        if start > end || end > v.cols() {
            return Err(NumError::Index {
                op: "slice_cols",
                index: end,
                bound: v.cols(),
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(v.rows() * w);
        for r in 0..v.rows() {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        let out = DenseMatrix::from_raw(v.rows(), w, data);
        self.push("slice_cols", out, Op::SliceCols(x, start))
    }

    pub fn col_mean(&mut self, x: Var) -> Result<Var, NumError> {
        let out = self.value(x).col_mean()?;
        self.push("col_mean", out, Op::ColMean(x))
    }

    pub fn col_sum(&mut self, x: Var) -> Result<Var, NumError> {
        let v = self.value(x);
        let mut acc = vec![0.0f64; v.cols()];
        for r in 0..v.rows() {
            for (a, &e) in acc.iter_mut().zip(v.row(r)) {
                *a += e as f64;
            }
        }
        let out = DenseMatrix::from_raw(1, v.cols(), acc.into_iter().map(|a| a as f32).collect());
        self.push("col_sum", out, Op::ColSum(x))
    }

    /// Per-row `⟨a_i, diag(w) b_i⟩` as an `n x 1` column; `w` is `1 x d`.
    pub fn diag_bilinear(&mut self, a: Var, w: Var, b: Var) -> Result<Var, NumError> {
        let (av, wv, bv) = (self.value(a), self.value(w), self.value(b));
        ensure_same("diag_bilinear", av, bv)?;
        if wv.shape() != (1, av.cols()) {
            return Err(NumError::dim("diag_bilinear", (1, av.cols()), wv.shape()));
        }
        let wd = wv.data();
        let out: Vec<f32> = (0..av.rows())
            .map(|r| {
                av.row(r)
                    .iter()
                    .zip(wd)
                    .zip(bv.row(r))
                    .map(|((&x, &w), &y)| x as f64 * w as f64 * y as f64)
                    .sum::<f64>() as f32
            })
            .collect();
        let out = DenseMatrix::from_raw(av.rows(), 1, out);
        self.push("diag_bilinear", out, Op::DiagBilinear(a, w, b))
    }

    /// Mean binary cross-entropy of pre-sigmoid scores against `{0,1}` targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f32]) -> Result<Var, NumError> {
        let lv = self.value(logits);
        if targets.len() != lv.len() {
            return Err(NumError::dim("bce_with_logits", lv.shape(), (targets.len(), 1)));
        }
        if lv.is_empty() {
            return Err(NumError::Contract("bce_with_logits on zero elements".into()));
        }
        if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(NumError::Contract(format!("bce target {t} outside {{0,1}}")));
        }
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&l, &t)| softplus(l as f64) - t as f64 * l as f64)
            .sum();
        let out = DenseMatrix::scalar((total / lv.len() as f64) as f32);
        self.push("bce_with_logits", out, Op::Bce(logits, targets.to_vec()))
    }

    /// Mean over rows of `-log_softmax(row)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumError> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(NumError::dim("softmax_cross_entropy", lv.shape(), (labels.len(), 1)));
        }
        if labels.is_empty() {
            return Err(NumError::Contract("cross-entropy over zero rows".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= lv.cols()) {
            return Err(NumError::Index {
                op: "softmax_cross_entropy",
                index: l,
                bound: lv.cols(),
            });
        }
        let ls = row_log_softmax(lv);
        let total: f64 = labels.iter().enumerate().map(|(r, &l)| -(ls.get(r, l) as f64)).sum();
        let out = DenseMatrix::scalar((total / labels.len() as f64) as f32);
        self.push("softmax_cross_entropy", out, Op::SoftmaxCe(logits, labels.to_vec()))
    }

    /// Mean over rows of the row-wise L1 norm of `a - b`.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        ensure_same("l1_loss", av, bv)?;
        if av.rows() == 0 {
            return Err(NumError::Contract("l1_loss over zero rows".into()));
        }
        let total: f64 = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
        let out = DenseMatrix::scalar((total / av.rows() as f64) as f32);
        self.push("l1_loss", out, Op::L1(a, b))
    }

    /// Mean over all entries of `(a - b)²`.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        ensure_same("mse_loss", av, bv)?;
        if av.is_empty() {
            return Err(NumError::Contract("mse_loss over zero entries".into()));
        }
        let total: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum();
        let out = DenseMatrix::scalar((total / av.len() as f64) as f32);
        self.push("mse_loss", out, Op::Mse(a, b))
    }

    /// Back-propagates from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        if self.value(loss).shape() != (1, 1) {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(DenseMatrix::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<'a>, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<(), NumError> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_t(val(*b))?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, val(*a).t_matmul(g)?);
                }
            }
            Op::Spmm(s, b) => {
                self.accumulate(grads, *b, s.spmm_transpose(g)?);
            }
            Op::SpmmValues(pattern, values, b) => {
                let s = pattern.with_values(val(*values).data())?;
                if self.rg(*values) {
                    let gv = s.value_grad(val(*b), g);
                    self.accumulate(grads, *values, DenseMatrix::from_raw(1, gv.len(), gv));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, s.spmm_transpose(g)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::AddRowBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*bias) {
                    let ones = DenseMatrix::filled(g.rows(), 1, 1.0);
                    self.accumulate(grads, *bias, ones.t_matmul(g)?);
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * f)),
            Op::ScaleByVar(x, s) => {
                let f = val(*s).get(0, 0);
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.map(|v| v * f));
                }
                if self.rg(*s) {
                    let d: f64 = g.data().iter().zip(val(*x).data()).map(|(&a, &b)| a as f64 * b as f64).sum();
                    self.accumulate(grads, *s, DenseMatrix::scalar(d as f32));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y)?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y)?);
                }
            }
            Op::Act(kind, x) => {
                let gx = match kind {
                    Activation::Relu => g.zip_map(val(*x), |gi, xi| if xi > 0.0 { gi } else { 0.0 })?,
                    Activation::Sigmoid => g.zip_map(&node.value, |gi, yi| gi * yi * (1.0 - yi))?,
                };
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (n, c) = y.shape();
                let mut out = Vec::with_capacity(n * c);
                for r in 0..n {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a as f64 * b as f64).sum();
                    out.extend(g.row(r).iter().zip(y.row(r)).map(|(&gi, &yi)| (yi as f64 * (gi as f64 - dot)) as f32));
                }
                self.accumulate(grads, *x, DenseMatrix::from_raw(n, c, out));
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let (n, c) = y.shape();
                let mut out = Vec::with_capacity(n * c);
                for r in 0..n {
                    let total: f64 = g.row(r).iter().map(|&a| a as f64).sum();
                    out.extend(
                        g.row(r)
                            .iter()
                            .zip(y.row(r))
                            .map(|(&gi, &yi)| (gi as f64 - (yi as f64).exp() * total) as f32),
                    );
                }
                self.accumulate(grads, *x, DenseMatrix::from_raw(n, c, out));
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                self.accumulate(grads, *x, DenseMatrix::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                let f = g.get(0, 0) / (r * c) as f32;
                self.accumulate(grads, *x, DenseMatrix::filled(r, c, f));
            }
            Op::RepeatRows(x) => {
                let ones = DenseMatrix::filled(g.rows(), 1, 1.0);
                self.accumulate(grads, *x, ones.t_matmul(g)?);
            }
            Op::SelectRows(x, idx) => {
                let (r, c) = val(*x).shape();
                let mut acc = vec![0.0f64; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for (a, &gv) in acc[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *a += gv as f64;
                    }
                }
                let out = DenseMatrix::from_raw(r, c, acc.into_iter().map(|v| v as f32).collect());
                self.accumulate(grads, *x, out);
            }
            Op::SliceCols(x, start) => {
                let (r, c) = val(*x).shape();
                let mut out = DenseMatrix::zeros(r, c);
                let w = g.cols();
                for i in 0..r {
                    out.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *x, out);
            }
            Op::ColMean(x) => {
                let (r, c) = val(*x).shape();
                let scaled = g.map(|v| v / r as f32);
                let out = DenseMatrix::from_raw(r, c, scaled.data().repeat(r));
                self.accumulate(grads, *x, out);
            }
            Op::ColSum(x) => {
                let (r, c) = val(*x).shape();
                self.accumulate(grads, *x, DenseMatrix::from_raw(r, c, g.data().repeat(r)));
            }
            Op::DiagBilinear(a, w, b) => {
                let (av, wv, bv) = (val(*a), val(*w), val(*b));
                let (n, d) = av.shape();
                let wd = wv.data();
                if self.rg(*a) {
                    let ga = DenseMatrix::from_fn(n, d, |i, j| g.get(i, 0) * wd[j] * bv.get(i, j));
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = DenseMatrix::from_fn(n, d, |i, j| g.get(i, 0) * wd[j] * av.get(i, j));
                    self.accumulate(grads, *b, gb);
                }
                if self.rg(*w) {
                    let mut acc = vec![0.0f64; d];
                    for i in 0..n {
                        let gi = g.get(i, 0) as f64;
                        for (j, s) in acc.iter_mut().enumerate() {
                            *s += gi * av.get(i, j) as f64 * bv.get(i, j) as f64;
                        }
                    }
                    let gw = DenseMatrix::from_raw(1, d, acc.into_iter().map(|v| v as f32).collect());
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::Bce(x, targets) => {
                let lv = val(*x);
                let f = g.get(0, 0) as f64 / lv.len() as f64;
                let data = lv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&l, &t)| ((stable_sigmoid(l as f64) - t as f64) * f) as f32)
                    .collect();
                self.accumulate(grads, *x, DenseMatrix::from_raw(lv.rows(), lv.cols(), data));
            }
            Op::SoftmaxCe(x, labels) => {
                let lv = val(*x);
                let mut p = row_softmax(lv);
                let f = g.get(0, 0) / labels.len() as f32;
                let c = p.cols();
                for (r, &l) in labels.iter().enumerate() {
                    p.data_mut()[r * c + l] -= 1.0;
                }
                self.accumulate(grads, *x, p.map(|v| v * f));
            }
            Op::L1(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let f = g.get(0, 0) / av.rows() as f32;
                let sign = av.zip_map(bv, |x, y| {
                    if x > y {
                        f
                    } else if x < y {
                        -f
                    } else {
                        0.0
                    }
                })?;
                if self.rg(*b) {
                    self.accumulate(grads, *b, sign.map(|v| -v));
                }
                self.accumulate(grads, *a, sign);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let f = 2.0 * g.get(0, 0) / av.len() as f32;
                let diff = av.zip_map(bv, |x, y| (x - y) * f)?;
                if self.rg(*b) {
                    self.accumulate(grads, *b, diff.map(|v| -v));
                }
                self.accumulate(grads, *a, diff);
            }
        }
        Ok(())
    }
}
