//! Dense row-major tensors and a reverse-mode tape.
//!
//! Every op is evaluated eagerly and its output pushed onto a [`Tape`]. Nodes
//! whose inputs require gradients keep enough information to run the
//! vector-Jacobian product during [`Tape::backward`]. All arithmetic is `f64`.
//!
//! Broadcasting is limited to three right-hand-side forms for the binary ops:
//! a scalar (`[]`), a per-row vector (`[cols]`, added to every row) and a
//! per-row scalar (`[rows, 1]`).

use crate::error::{Error, Result};

/// Floor applied before logs and divisions inside the losses.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "ragged rows: {} vs {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(Error::Dimension(format!(
                    "gradient of length {} for tensor of {} values",
                    g.len(),
                    self.data.len()
                )));
            }
        }
        self.grad = grad;
        Ok(())
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a matrix (1 for vectors, 0 for an empty matrix).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        let c = self.cols().max(1);
        self.data.chunks(c).take(self.rows())
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the selected rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::Dimension(format!(
                    "row {i} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::matrix(idx.len(), c, data)
    }

    /// Index of the largest entry of each row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.row_iter().map(argmax).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    MatMul,
    Relu,
    Exp,
    Log,
    SoftmaxRows,
    LogSoftmaxRows,
    L2NormalizeRows,
    Sum,
    Mean,
    Transpose,
    ConcatRows,
    SelectRows(Vec<usize>),
    ClampMin(f64),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::ScalarMul(_) => "scalar_mul",
            Op::MatMul => "matmul",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::SoftmaxRows => "softmax_rows",
            Op::LogSoftmaxRows => "log_softmax_rows",
            Op::L2NormalizeRows => "l2_normalize_rows",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Transpose => "transpose",
            Op::ConcatRows => "concat_rows",
            Op::SelectRows(_) => "select_rows",
            Op::ClampMin(_) => "clamp_min",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    RowVector,
    RowScalar,
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b.is_empty() {
        return Ok(Broadcast::Scalar);
    }
    if a.len() == 2 {
        if b == [a[1]] || b == [1, a[1]] {
            return Ok(Broadcast::RowVector);
        }
        if b == [a[0], 1] {
            return Ok(Broadcast::RowScalar);
        }
    }
    Err(Error::Dimension(format!(
        "cannot combine shapes {a:?} and {b:?}"
    )))
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<(Op, Vec<Var>)>,
}

/// Records executed ops in topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
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

    /// Adds an input tensor, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: None });
        Var(self.nodes.len() - 1)
    }

    /// Adds a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    /// Adds an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Moves a node's value out of the tape (the node keeps an empty husk).
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let arity_ok = match op {
            Op::Add | Op::Sub | Op::Mul | Op::MatMul => inputs.len() == 2,
            Op::ConcatRows => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(Error::Contract(format!(
                "{} got {} inputs",
                op.name(),
                inputs.len()
            )));
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (shape, data) = forward(&op, &vals)?;
        if data.iter().any(|v| !v.is_finite()) && vals.iter().all(|t| t.is_finite()) {
            return Err(Error::Domain(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        let requires_grad = vals.iter().any(|t| t.requires_grad);
        let value = Tensor {
            shape,
            data,
            grad: None,
            requires_grad,
        };
        self.nodes.push(Node {
            value,
            op: Some((op, inputs.to_vec())),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Op::ScalarMul(s), &[a])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Relu, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Log, &[a])
    }
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::SoftmaxRows, &[a])
    }
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::LogSoftmaxRows, &[a])
    }
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::L2NormalizeRows, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Mean, &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Transpose, &[a])
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::ConcatRows, parts)
    }
    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        self.apply(Op::SelectRows(idx), &[a])
    }
    pub fn clamp_min(&mut self, a: Var, min: f64) -> Result<Var> {
        self.apply(Op::ClampMin(min), &[a])
    }

    /// `log(max(x, LOG_EPS))`.
    pub fn safe_log(&mut self, a: Var) -> Result<Var> {
        let c = self.clamp_min(a, LOG_EPS)?;
        self.log(c)
    }

    /// Row sums of an `[n, m]` matrix as an `[n, 1]` column.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!("row_sums on shape {shape:?}")));
        }
        let ones = self.constant(Tensor::full(&[shape[1], 1], 1.0));
        self.matmul(a, ones)
    }

    /// Column means of an `[n, m]` matrix as a `[1, m]` row.
    pub fn col_means(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::Dimension(format!("col_means on shape {shape:?}")));
        }
        let ones = self.constant(Tensor::full(&[1, shape[0]], 1.0));
        let s = self.matmul(ones, a)?;
        self.scalar_mul(s, 1.0 / shape[0] as f64)
    }

    /// Populates gradients of `loss` on every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; build a new one".into(),
            ));
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.shape.is_empty() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape
            )));
        }
        if !lv.requires_grad {
            return Err(Error::EmptyTape(
                "loss does not depend on any input that requires a gradient".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if let Some((op, inputs)) = &self.nodes[idx].op {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let out = &self.nodes[idx].value;
                let local = vjp(op, &ins, out, &g);
                for (v, lg) in inputs.iter().zip(local) {
                    if !self.nodes[v.0].value.requires_grad {
                        continue;
                    }
                    let Some(lg) = lg else { continue };
                    match &mut grads[v.0] {
                        Some(acc) => acc.iter_mut().zip(&lg).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(lg),
                    }
                }
            }
            self.nodes[idx].value.grad = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }
}

fn dims2(t: &Tensor, op: &Op) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "{} needs a matrix, got shape {:?}",
            op.name(),
            t.shape
        )));
    }
    Ok((t.shape[0], t.shape[1]))
}

fn forward(op: &Op, ins: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)> {
    let a = ins[0];
    Ok(match op {
        Op::Add | Op::Sub | Op::Mul => {
            let b = ins[1];
            let kind = broadcast_kind(&a.shape, &b.shape)?;
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add => |x, y| x + y,
                Op::Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            let cols = a.cols().max(1);
            let data = a
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = match kind {
                        Broadcast::Same => b.data[i],
                        Broadcast::Scalar => b.data[0],
                        Broadcast::RowVector => b.data[i % cols],
                        Broadcast::RowScalar => b.data[i / cols],
                    };
                    f(x, y)
                })
                .collect();
            (a.shape.clone(), data)
        }
        Op::ScalarMul(s) => (a.shape.clone(), a.data.iter().map(|x| x * s).collect()),
        Op::MatMul => {
            let (n, k) = dims2(a, op)?;
            let (k2, m) = dims2(ins[1], op)?;
            if k != k2 {
                return Err(Error::Dimension(format!(
                    "matmul of [{n}, {k}] by [{k2}, {m}]"
                )));
            }
            (vec![n, m], matmul(&a.data, &ins[1].data, n, k, m))
        }
        Op::Relu => (a.shape.clone(), a.data.iter().map(|x| x.max(0.0)).collect()),
        Op::Exp => (a.shape.clone(), a.data.iter().map(|x| x.exp()).collect()),
        Op::Log => {
            if let Some(bad) = a.data.iter().find(|&&x| x <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
            (a.shape.clone(), a.data.iter().map(|x| x.ln()).collect())
        }
        Op::SoftmaxRows | Op::LogSoftmaxRows => {
            let (_, m) = dims2(a, op)?;
            let mut out = Vec::with_capacity(a.data.len());
            for row in a.data.chunks(m.max(1)) {
                if m == 0 {
                    break;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
                if matches!(op, Op::SoftmaxRows) {
                    out.extend(row.iter().map(|x| (x - max).exp() / z));
                } else {
                    let lz = z.ln() + max;
                    out.extend(row.iter().map(|x| x - lz));
                }
            }
            (a.shape.clone(), out)
        }
        Op::L2NormalizeRows => {
            let (_, m) = dims2(a, op)?;
            let mut out = Vec::with_capacity(a.data.len());
            for (i, row) in a.data.chunks(m.max(1)).enumerate() {
                if m == 0 {
                    break;
                }
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm <= LOG_EPS {
                    return Err(Error::Domain(format!("row {i} has zero norm")));
                }
                out.extend(row.iter().map(|x| x / norm));
            }
            (a.shape.clone(), out)
        }
        Op::Sum => (Vec::new(), vec![a.data.iter().sum()]),
        Op::Mean => {
            if a.data.is_empty() {
                return Err(Error::Contract("mean of an empty tensor".into()));
            }
            (Vec::new(), vec![a.data.iter().sum::<f64>() / a.data.len() as f64])
        }
        Op::Transpose => {
            let (n, m) = dims2(a, op)?;
            (vec![m, n], transpose(&a.data, n, m))
        }
        Op::ConcatRows => {
            let (_, m) = dims2(a, op)?;
            let mut rows = 0;
            let mut data = Vec::new();
            for t in ins {
                let (r, c) = dims2(t, op)?;
                if c != m {
                    return Err(Error::Dimension(format!(
                        "concat_rows of widths {m} and {c}"
                    )));
                }
                rows += r;
                data.extend_from_slice(&t.data);
            }
            (vec![rows, m], data)
        }
        Op::SelectRows(idx) => {
            dims2(a, op)?;
            let t = a.select_rows(idx)?;
            (t.shape, t.data)
        }
        Op::ClampMin(min) => (a.shape.clone(), a.data.iter().map(|x| x.max(*min)).collect()),
    })
}

/// Local vector-Jacobian products, one entry per input.
fn vjp(op: &Op, ins: &[&Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let a = ins[0];
    match op {
        Op::Add | Op::Sub | Op::Mul => {
            let b = ins[1];
            let kind = broadcast_kind(&a.shape, &b.shape).expect("checked in forward");
            let cols = a.cols().max(1);
            let bval = |i: usize| match kind {
                Broadcast::Same => b.data[i],
                Broadcast::Scalar => b.data[0],
                Broadcast::RowVector => b.data[i % cols],
                Broadcast::RowScalar => b.data[i / cols],
            };
            let ga: Vec<f64> = match op {
                Op::Mul => g.iter().enumerate().map(|(i, gi)| gi * bval(i)).collect(),
                _ => g.to_vec(),
            };
            let mut gb = vec![0.0; b.data.len()];
            if b.requires_grad {
                for (i, gi) in g.iter().enumerate() {
                    let contrib = match op {
                        Op::Add => *gi,
                        Op::Sub => -gi,
                        _ => gi * a.data[i],
                    };
                    let slot = match kind {
                        Broadcast::Same => i,
                        Broadcast::Scalar => 0,
                        Broadcast::RowVector => i % cols,
                        Broadcast::RowScalar => i / cols,
                    };
                    gb[slot] += contrib;
                }
            }
            vec![Some(ga), b.requires_grad.then_some(gb)]
        }
        Op::ScalarMul(s) => vec![Some(g.iter().map(|x| x * s).collect())],
        Op::MatMul => {
            let b = ins[1];
            let (n, k) = (a.shape[0], a.shape[1]);
            let m = b.shape[1];
            let ga = a
                .requires_grad
                .then(|| matmul_a_bt(g, &b.data, n, m, k));
            let gb = b.requires_grad.then(|| matmul_at_b(&a.data, g, n, k, m));
            vec![ga, gb]
        }
        Op::Relu => vec![Some(
            g.iter()
                .zip(&a.data)
                .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                .collect(),
        )],
        Op::Exp => vec![Some(g.iter().zip(&out.data).map(|(gi, y)| gi * y).collect())],
        Op::Log => vec![Some(g.iter().zip(&a.data).map(|(gi, x)| gi / x).collect())],
        Op::SoftmaxRows => {
            let m = a.shape[1].max(1);
            let mut ga = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(m).zip(out.data.chunks(m)) {
                let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                ga.extend(gr.iter().zip(yr).map(|(gi, yi)| yi * (gi - dot)));
            }
            vec![Some(ga)]
        }
        Op::LogSoftmaxRows => {
            let m = a.shape[1].max(1);
            let mut ga = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(m).zip(out.data.chunks(m)) {
                let total: f64 = gr.iter().sum();
                ga.extend(gr.iter().zip(yr).map(|(gi, yi)| gi - yi.exp() * total));
            }
            vec![Some(ga)]
        }
        Op::L2NormalizeRows => {
            let m = a.shape[1].max(1);
            let mut ga = Vec::with_capacity(g.len());
            for ((gr, yr), xr) in g.chunks(m).zip(out.data.chunks(m)).zip(a.data.chunks(m)) {
                let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
                let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                ga.extend(gr.iter().zip(yr).map(|(gi, yi)| (gi - yi * dot) / norm));
            }
            vec![Some(ga)]
        }
        Op::Sum => vec![Some(vec![g[0]; a.data.len()])],
        Op::Mean => vec![Some(vec![g[0] / a.data.len() as f64; a.data.len()])],
        Op::Transpose => {
            let (n, m) = (a.shape[0], a.shape[1]);
            vec![Some(transpose(g, m, n))]
        }
        Op::ConcatRows => {
            let mut offset = 0;
            ins.iter()
                .map(|t| {
                    let len = t.data.len();
                    let part = g[offset..offset + len].to_vec();
                    offset += len;
                    Some(part)
                })
                .collect()
        }
        Op::SelectRows(idx) => {
            let m = a.shape[1];
            let mut ga = vec![0.0; a.data.len()];
            for (r, &src) in idx.iter().enumerate() {
                for j in 0..m {
                    ga[src * m + j] += g[r * m + j];
                }
            }
            vec![Some(ga)]
        }
        Op::ClampMin(min) => vec![Some(
            g.iter()
                .zip(&a.data)
                .map(|(gi, x)| if *x >= *min { *gi } else { 0.0 })
                .collect(),
        )],
    }
}

/// `[n, k] x [k, m]`, row-major.
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `[n, m] x [k, m]^T`.
fn matmul_a_bt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let bt = transpose(b, k, m);
    matmul(a, &bt, n, m, k)
}

/// `[n, k]^T x [n, m]`.
fn matmul_at_b(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

/// Compares the tape gradient of `f` at `point` with central differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn finite_difference_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |x: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let out = f(&mut tape, v)?;
        let val = tape.value(out).item()?;
        if !val.is_finite() {
            return Err(Error::Domain("function value is not finite".into()));
        }
        Ok(val)
    };

    let mut tape = Tape::new();
    let x = tape.param(point.clone().with_requires_grad(false));
    let out = f(&mut tape, x)?;
    let base = tape.value(out).item()?;
    if !base.is_finite() {
        return Err(Error::Domain("function value is not finite".into()));
    }
    let analytic = if tape.requires_grad(out) {
        tape.backward(out)?;
        tape.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; point.numel()])
    } else {
        vec![0.0; point.numel()]
    };

    let mut worst: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data[i] += eps;
        let mut minus = point.clone();
        minus.data[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
