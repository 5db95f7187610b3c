use crate::error::AutodiffError;

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Silu(Var),
    Softplus(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    /// Saved per-row inverse standard deviations.
    LayerNorm(Var, Vec<f64>),
    SegmentSoftmax(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations and replays them in reverse for gradients.
///
/// A tape supports a single backward pass; call [`Tape::clear_grads`] before
/// differentiating again.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            check_finite: true,
        }
    }

    /// Enables or disables the finiteness check run after every op.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn clear_grads(&mut self) {
        self.grads.clear();
        self.consumed = false;
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if self.check_finite && !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        let requires_grad = self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::ConcatCols(parts) => parts.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::MeanRows(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::Silu(a)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Elu(a, _)
            | Op::LayerNorm(a, _)
            | Op::SegmentSoftmax(a, _) => vec![*a],
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(f);
        self.push(name, value, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let mut out = Tensor::zeros(sa.0, sb.1);
        matmul_acc(self.value(a), self.value(b), &mut out);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: sa,
                right: sr,
            });
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (o, b) in out.row_slice_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_row",
                left: sa,
                right: sr,
            });
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (o, b) in out.row_slice_mut(i).iter_mut().zip(&r) {
                *o *= b;
            }
        }
        self.push("mul_row", out, Op::MulRow(a, row))
    }

    /// Scales row `i` of `a` by `col[i]` for an `r x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AutodiffError> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_col",
                left: sa,
                right: sc,
            });
        }
        let mut out = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, &s) in c.iter().enumerate() {
            for o in out.row_slice_mut(i) {
                *o *= s;
            }
        }
        self.push("mul_col", out, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = parts.first().map_or(0, |p| self.shape(*p).0);
        for p in parts {
            let s = self.shape(*p);
            if s.0 != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    left: (rows, 0),
                    right: s,
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row_slice(r);
                out.row_slice_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if start >= end || end > s.1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                left: s,
                right: (start, end),
            });
        }
        let src = self.value(a);
        let mut out = Tensor::zeros(s.0, end - start);
        for r in 0..s.0 {
            out.row_slice_mut(r)
                .copy_from_slice(&src.row_slice(r)[start..end]);
        }
        self.push("slice_cols", out, Op::SliceCols(a, start))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= s.0) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: s.0,
            });
        }
        let src = self.value(a);
        let mut out = Tensor::zeros(index.len(), s.1);
        for (r, &i) in index.iter().enumerate() {
            out.row_slice_mut(r).copy_from_slice(src.row_slice(i));
        }
        self.push("gather_rows", out, Op::GatherRows(a, index.to_vec()))
    }

    /// Sums row `i` of `a` into output row `index[i]`; output has `n_out` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: &[usize],
        n_out: usize,
    ) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if index.len() != s.0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_add_rows",
                left: s,
                right: (index.len(), 1),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n_out) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "scatter_add_rows",
                index: bad,
                len: n_out,
            });
        }
        let src = self.value(a);
        let mut out = Tensor::zeros(n_out, s.1);
        for (r, &i) in index.iter().enumerate() {
            for (o, v) in out.row_slice_mut(i).iter_mut().zip(src.row_slice(r)) {
                *o += v;
            }
        }
        self.push(
            "scatter_add_rows",
            out,
            Op::ScatterAddRows(a, index.to_vec()),
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", v, Op::Mean(a))
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        self.push("sum_rows", out, Op::SumRows(a))
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let n = t.rows() as f64;
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / n);
        self.push("mean_rows", out, Op::MeanRows(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("silu", a, |x| x * sigmoid(x), Op::Silu(a))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, AutodiffError> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Result<Var, AutodiffError> {
        self.unary(
            "elu",
            a,
            |x| if x > 0.0 { x } else { alpha * x.exp_m1() },
            Op::Elu(a, alpha),
        )
    }

    /// Row-wise normalisation to zero mean and unit (population) variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let (rows, cols) = t.shape();
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = t.row_slice(r);
            let mu = x.iter().sum::<f64>() / cols as f64;
            let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out.row_slice_mut(r).iter_mut().zip(x) {
                *o = (v - mu) * inv;
            }
            inv_std.push(inv);
        }
        self.push("layer_norm", out, Op::LayerNorm(a, inv_std))
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let (rows, cols) = t.shape();
        if segments.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "segment_softmax",
                left: (rows, cols),
                right: (segments.len(), 1),
            });
        }
        let n_seg = segments.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg * cols];
        for (r, &s) in segments.iter().enumerate() {
            for (c, &v) in t.row_slice(r).iter().enumerate() {
                let m = &mut max[s * cols + c];
                *m = m.max(v);
            }
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut denom = vec![0.0; n_seg * cols];
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let e = (t.get(r, c) - max[s * cols + c]).exp();
                out.set(r, c, e);
                denom[s * cols + c] += e;
            }
        }
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let v = out.get(r, c) / denom[s * cols + c];
                out.set(r, c, v);
            }
        }
        self.push(
            "segment_softmax",
            out,
            Op::SegmentSoftmax(a, segments.to_vec()),
        )
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::ConsumedTape);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn grad_slot(&mut self, v: Var) -> Option<&mut Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(self.grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1)))
    }

    fn elementwise_grad(&mut self, a: Var, g: &Tensor, f: impl Fn(f64, f64) -> f64, i: usize) {
        // f(input, output) -> local derivative
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let input = &self.nodes[a.0].value;
        let output = &self.nodes[i].value;
        let data = input
            .data()
            .iter()
            .zip(output.data())
            .zip(g.data())
            .map(|((&x, &y), &gv)| gv * f(x, y))
            .collect();
        let delta = Tensor::from_vec(g.rows(), g.cols(), data);
        self.accumulate(a, delta);
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor) {
        // Temporarily take the op out so parents can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].requires_grad {
                    let sa = self.shape(a);
                    let mut d = Tensor::zeros(sa.0, sa.1);
                    matmul_nt_acc(g, &self.nodes[b.0].value, &mut d);
                    self.accumulate(a, d);
                }
                if self.nodes[b.0].requires_grad {
                    let sb = self.shape(b);
                    let mut d = Tensor::zeros(sb.0, sb.1);
                    matmul_tn_acc(&self.nodes[a.0].value, g, &mut d);
                    self.accumulate(b, d);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].requires_grad {
                    let d = zip(g, &self.nodes[b.0].value, |x, y| x * y);
                    self.accumulate(a, d);
                }
                if self.nodes[b.0].requires_grad {
                    let d = zip(g, &self.nodes[a.0].value, |x, y| x * y);
                    self.accumulate(b, d);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(*a, g.clone());
                if let Some(dr) = self.grad_slot(*row) {
                    for r in 0..g.rows() {
                        for (o, v) in dr.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (a, row) = (*a, *row);
                if self.nodes[a.0].requires_grad {
                    let rv = self.nodes[row.0].value.data().to_vec();
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        for (o, s) in d.row_slice_mut(r).iter_mut().zip(&rv) {
                            *o *= s;
                        }
                    }
                    self.accumulate(a, d);
                }
                if self.nodes[row.0].requires_grad {
                    let mut d = Tensor::zeros(1, g.cols());
                    let av = &self.nodes[a.0].value;
                    for r in 0..g.rows() {
                        for ((o, gv), x) in d
                            .data_mut()
                            .iter_mut()
                            .zip(g.row_slice(r))
                            .zip(av.row_slice(r))
                        {
                            *o += gv * x;
                        }
                    }
                    self.accumulate(row, d);
                }
            }
            Op::MulCol(a, col) => {
                let (a, col) = (*a, *col);
                if self.nodes[a.0].requires_grad {
                    let cv = self.nodes[col.0].value.data().to_vec();
                    let mut d = g.clone();
                    for (r, s) in cv.iter().enumerate() {
                        for o in d.row_slice_mut(r) {
                            *o *= s;
                        }
                    }
                    self.accumulate(a, d);
                }
                if self.nodes[col.0].requires_grad {
                    let av = &self.nodes[a.0].value;
                    let data = (0..g.rows())
                        .map(|r| {
                            g.row_slice(r)
                                .iter()
                                .zip(av.row_slice(r))
                                .map(|(x, y)| x * y)
                                .sum()
                        })
                        .collect();
                    self.accumulate(col, Tensor::from_vec(g.rows(), 1, data));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(*a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => self.accumulate(*a, g.clone()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = self.shape(*p);
                    if self.nodes[p.0].requires_grad {
                        let mut d = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            d.row_slice_mut(r)
                                .copy_from_slice(&g.row_slice(r)[offset..offset + cols]);
                        }
                        self.accumulate(*p, d);
                    }
                    offset += cols;
                }
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                if let Some(d) = self.grad_slot(*a) {
                    for r in 0..g.rows() {
                        for (o, v) in d.row_slice_mut(r)[start..start + g.cols()]
                            .iter_mut()
                            .zip(g.row_slice(r))
                        {
                            *o += v;
                        }
                    }
                }
            }
            Op::GatherRows(a, index) => {
                if let Some(d) = self.grad_slot(*a) {
                    for (r, &src) in index.iter().enumerate() {
                        for (o, v) in d.row_slice_mut(src).iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ScatterAddRows(a, index) => {
                if self.nodes[a.0].requires_grad {
                    let mut d = Tensor::zeros(index.len(), g.cols());
                    for (r, &dst) in index.iter().enumerate() {
                        d.row_slice_mut(r).copy_from_slice(g.row_slice(dst));
                    }
                    self.accumulate(*a, d);
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(*a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(*a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let scale = if matches!(op, Op::MeanRows(_)) {
                    1.0 / r as f64
                } else {
                    1.0
                };
                let mut d = Tensor::zeros(r, c);
                for row in 0..r {
                    for (o, v) in d.row_slice_mut(row).iter_mut().zip(g.data()) {
                        *o = v * scale;
                    }
                }
                self.accumulate(*a, d);
            }
            Op::Exp(a) => self.elementwise_grad(*a, g, |_, y| y, i),
            Op::Log(a) => self.elementwise_grad(*a, g, |x, _| 1.0 / x, i),
            Op::Sigmoid(a) => self.elementwise_grad(*a, g, |_, y| y * (1.0 - y), i),
            Op::Silu(a) => self.elementwise_grad(
                *a,
                g,
                |x, _| {
                    let s = sigmoid(x);
                    s + x * s * (1.0 - s)
                },
                i,
            ),
            Op::Softplus(a) => self.elementwise_grad(*a, g, |x, _| sigmoid(x), i),
            Op::Relu(a) => {
                self.elementwise_grad(*a, g, |x, _| if x > 0.0 { 1.0 } else { 0.0 }, i)
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                self.elementwise_grad(*a, g, |x, _| if x > 0.0 { 1.0 } else { slope }, i)
            }
            Op::Elu(a, alpha) => {
                let alpha = *alpha;
                self.elementwise_grad(*a, g, |x, y| if x > 0.0 { 1.0 } else { y + alpha }, i)
            }
            Op::LayerNorm(a, inv_std) => {
                if self.nodes[a.0].requires_grad {
                    let y = &self.nodes[i].value;
                    let (rows, cols) = y.shape();
                    let mut d = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row_slice(r);
                        let yr = y.row_slice(r);
                        let g_mean = gr.iter().sum::<f64>() / cols as f64;
                        let gy_mean =
                            gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for ((o, gv), yv) in d.row_slice_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = inv_std[r] * (gv - g_mean - yv * gy_mean);
                        }
                    }
                    self.accumulate(*a, d);
                }
            }
            Op::SegmentSoftmax(a, segments) => {
                if self.nodes[a.0].requires_grad {
                    let y = &self.nodes[i].value;
                    let (rows, cols) = y.shape();
                    let n_seg = segments.iter().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; n_seg * cols];
                    for (r, &s) in segments.iter().enumerate() {
                        for c in 0..cols {
                            dot[s * cols + c] += g.get(r, c) * y.get(r, c);
                        }
                    }
                    let mut d = Tensor::zeros(rows, cols);
                    for (r, &s) in segments.iter().enumerate() {
                        for c in 0..cols {
                            d.set(r, c, y.get(r, c) * (g.get(r, c) - dot[s * cols + c]));
                        }
                    }
                    self.accumulate(*a, d);
                }
            }
        }
        self.nodes[i].op = op;
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}
