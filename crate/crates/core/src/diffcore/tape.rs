//! Eager computation tape with reverse-mode gradient replay.

use crate::error::{CoreError, Result};

use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul { a: usize, b: usize },
    /// `[m,n] x [n] -> [m]`
    MatVec { m: usize, v: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    AddScalar { a: usize },
    Scale { a: usize, c: f64 },
    Neg { a: usize },
    Exp { a: usize },
    /// `ln(1 + x)`
    Ln1p { a: usize },
    Elu { a: usize },
    Tanh { a: usize },
    SigmoidScaled { a: usize, c: f64 },
    Sum { a: usize },
    Mean { a: usize },
    /// Full contraction of two same-shape tensors.
    Dot { a: usize, b: usize },
    /// Column `col` of a rank-2 tensor, as a vector.
    Column { a: usize, col: usize },
    /// `[n,c] + [c]` broadcast over rows.
    AddRow { a: usize, row: usize },
    Reshape { a: usize },
    /// Mean over rows of `-log softmax(logits)[label]`; caches the
    /// softmax for the backward rule.
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        softmax: Vec<f64>,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
    trainable: bool,
}

/// Records operations during the forward pass; replaying the records
/// backward visits nodes in reverse topological order (inputs always
/// precede outputs).
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ran_backward: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor, op: Op, trainable: bool) -> Var {
        self.nodes.push(Node {
            tensor,
            op,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a constant input. No gradient is reported for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    /// Registers a trainable input; backward will produce its gradient.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, true)
    }

    pub fn leaf_vector(&mut self, values: &[f64]) -> Var {
        self.leaf(Tensor::vector(values.to_vec()))
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn values(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.values()
    }

    /// Whether `v` was registered as a trainable parameter.
    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    /// Gradient of the last backward target with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        if !self.ran_backward {
            return Err(CoreError::InvalidState(
                "gradient requested before a backward pass",
            ));
        }
        self.nodes[v.0]
            .tensor
            .grad()
            .ok_or(CoreError::InvalidState("node has no gradient buffer"))
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.nodes[a.0].tensor.shape(), self.nodes[b.0].tensor.shape());
        if sa != sb {
            return Err(CoreError::ShapeMismatch {
                op: op_name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (av, bv) = (ta.values(), tb.values());
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul { a: a.0, b: b.0 }, false))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (&self.nodes[m.0].tensor, &self.nodes[v.0].tensor);
        if tm.shape().len() != 2 || tv.shape().len() != 1 || tm.cols() != tv.len() {
            return Err(CoreError::ShapeMismatch {
                op: "matvec",
                lhs: tm.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let (rows, cols) = (tm.rows(), tm.cols());
        let mut out = vec![0.0; rows];
        for i in 0..rows {
            let mrow = &tm.values()[i * cols..(i + 1) * cols];
            out[i] = mrow
                .iter()
                .zip(tv.values())
                .map(|(x, y)| x * y)
                .sum::<f64>();
        }
        Ok(self.push(Tensor::vector(out), Op::MatVec { m: m.0, v: v.0 }, false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out: Vec<f64> = self.values(a).iter().zip(self.values(b)).map(|(x, y)| x + y).collect();
        let shape = self.nodes[a.0].tensor.shape().to_vec();
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }, false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out: Vec<f64> = self.values(a).iter().zip(self.values(b)).map(|(x, y)| x - y).collect();
        let shape = self.nodes[a.0].tensor.shape().to_vec();
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Sub { a: a.0, b: b.0 }, false))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out: Vec<f64> = self.values(a).iter().zip(self.values(b)).map(|(x, y)| x * y).collect();
        let shape = self.nodes[a.0].tensor.shape().to_vec();
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0 }, false))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("div", a, b)?;
        let out: Vec<f64> = self.values(a).iter().zip(self.values(b)).map(|(x, y)| x / y).collect();
        let shape = self.nodes[a.0].tensor.shape().to_vec();
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Div { a: a.0, b: b.0 }, false))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut t = self.nodes[a.0].tensor.clone();
        t.grad = None;
        t.values_mut().iter_mut().for_each(|x| *x += c);
        self.push(t, Op::AddScalar { a: a.0 }, false)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut t = self.nodes[a.0].tensor.clone();
        t.grad = None;
        t.values_mut().iter_mut().for_each(|x| *x *= c);
        self.push(t, Op::Scale { a: a.0, c }, false)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let mut t = self.nodes[a.0].tensor.clone();
        t.grad = None;
        t.values_mut().iter_mut().for_each(|x| *x = -*x);
        self.push(t, Op::Neg { a: a.0 }, false)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let mut t = self.nodes[a.0].tensor.clone();
        t.grad = None;
        if t.values().iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("exp"));
        }
        t.values_mut().iter_mut().for_each(|x| *x = x.exp());
        Ok(self.push(t, Op::Exp { a: a.0 }, false))
    }

    pub fn ln1p(&mut self, a: Var) -> Result<Var> {
        let mut t = self.nodes[a.0].tensor.clone();
        t.grad = None;
        if t.values().iter().any(|x| !x.is_finite() || *x <= -1.0) {
            return Err(CoreError::NonFinite("ln1p"));
        }
        t.values_mut().iter_mut().for_each(|x| *x = x.ln_1p());
        Ok(self.push(t, Op::Ln1p { a: a.0 }, false))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let mut t = self.nodes[a.0].tensor.clone();
        t.grad = None;
        if t.values().iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("elu"));
        }
        t.values_mut()
            .iter_mut()
            .for_each(|x| *x = if *x >= 0.0 { *x } else { x.exp() - 1.0 });
        Ok(self.push(t, Op::Elu { a: a.0 }, false))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let mut t = self.nodes[a.0].tensor.clone();
        t.grad = None;
        if t.values().iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("tanh"));
        }
        t.values_mut().iter_mut().for_each(|x| *x = x.tanh());
        Ok(self.push(t, Op::Tanh { a: a.0 }, false))
    }

    /// `c / (1 + e^{-x})` with `c > 0`; output lies in `(0, c)`.
    pub fn sigmoid_scaled(&mut self, a: Var, c: f64) -> Result<Var> {
        if c <= 0.0 {
            return Err(CoreError::Config(format!(
                "sigmoid scale must be positive, got {c}"
            )));
        }
        let mut t = self.nodes[a.0].tensor.clone();
        t.grad = None;
        if t.values().iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("sigmoid_scaled"));
        }
        t.values_mut()
            .iter_mut()
            .for_each(|x| *x = c / (1.0 + (-*x).exp()));
        Ok(self.push(t, Op::SigmoidScaled { a: a.0, c }, false))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.values(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a: a.0 }, false)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values(a).len();
        let s: f64 = self.values(a).iter().sum();
        self.push(Tensor::scalar(s / n as f64), Op::Mean { a: a.0 }, false)
    }

    /// Full contraction `sum(a .* b)` of two same-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("dot", a, b)?;
        let s: f64 = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { a: a.0, b: b.0 }, false))
    }

    /// Column `col` of a rank-2 tensor, as a vector of length `rows`.
    pub fn column(&mut self, a: Var, col: usize) -> Result<Var> {
        let t = &self.nodes[a.0].tensor;
        if t.shape().len() != 2 || col >= t.cols() {
            return Err(CoreError::IndexOutOfRange {
                op: "column",
                index: col,
                bound: if t.shape().len() == 2 { t.cols() } else { 0 },
            });
        }
        let (rows, cols) = (t.rows(), t.cols());
        let out: Vec<f64> = (0..rows).map(|i| t.values()[i * cols + col]).collect();
        Ok(self.push(Tensor::vector(out), Op::Column { a: a.0, col }, false))
    }

    /// Adds a length-`c` vector to every row of an `[n, c]` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (&self.nodes[a.0].tensor, &self.nodes[row.0].tensor);
        if ta.shape().len() != 2 || tr.shape().len() != 1 || ta.cols() != tr.len() {
            return Err(CoreError::ShapeMismatch {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let (n, c) = (ta.rows(), ta.cols());
        let mut out = ta.values().to_vec();
        for i in 0..n {
            for j in 0..c {
                out[i * c + j] += tr.values()[j];
            }
        }
        let t = Tensor::new(vec![n, c], out)?;
        Ok(self.push(t, Op::AddRow { a: a.0, row: row.0 }, false))
    }

    /// Reinterprets the values under a new shape of equal size.
    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let t = &self.nodes[a.0].tensor;
        if shape.iter().product::<usize>() != t.len() {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape,
            });
        }
        let t = Tensor::new(shape, t.values().to_vec())?;
        Ok(self.push(t, Op::Reshape { a: a.0 }, false))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = &self.nodes[logits.0].tensor;
        if t.shape().len() != 2 || t.rows() != labels.len() {
            return Err(CoreError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (n, classes) = (t.rows(), t.cols());
        for &label in labels {
            if label >= classes {
                return Err(CoreError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: label,
                    bound: classes,
                });
            }
        }
        let mut softmax = vec![0.0; n * classes];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &t.values()[i * classes..(i + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..classes {
                let e = (row[j] - max).exp();
                softmax[i * classes + j] = e;
                denom += e;
            }
            for j in 0..classes {
                softmax[i * classes + j] /= denom;
            }
            loss -= softmax[i * classes + labels[i]].ln();
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite("softmax_cross_entropy"));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                softmax,
            },
            false,
        ))
    }

    /// Accumulates `d loss / d node` into every node's grad buffer.
    ///
    /// `loss` must be a scalar node on this tape. Trainable leaves that
    /// do not reach `loss` end up with an all-zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(CoreError::InvalidState("backward target not on this tape"));
        }
        if self.nodes[loss.0].tensor.len() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "backward",
                lhs: self.nodes[loss.0].tensor.shape().to_vec(),
                rhs: vec![],
            });
        }
        for node in &mut self.nodes {
            node.tensor.zero_grad();
        }
        self.nodes[loss.0].tensor.grad_mut()[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            // Split so the output grad can be read while inputs are written.
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &mut rest[0];
            let g = node.tensor.grad().expect("grad allocated").to_vec();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, n) = (node.tensor.rows(), node.tensor.cols());
                    let k = before[*a].tensor.cols();
                    // dA += G . B^T
                    {
                        let bvals = before[*b].tensor.values().to_vec();
                        let da = before[*a].tensor.grad_mut();
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    da[i * k + p] += gij * bvals[p * n + j];
                                }
                            }
                        }
                    }
                    // dB += A^T . G
                    {
                        let avals = before[*a].tensor.values().to_vec();
                        let db = before[*b].tensor.grad_mut();
                        for p in 0..k {
                            for i in 0..m {
                                let aip = avals[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::MatVec { m, v } => {
                    let rows = node.tensor.len();
                    let cols = before[*v].tensor.len();
                    {
                        let vvals = before[*v].tensor.values().to_vec();
                        let dm = before[*m].tensor.grad_mut();
                        for i in 0..rows {
                            for j in 0..cols {
                                dm[i * cols + j] += g[i] * vvals[j];
                            }
                        }
                    }
                    {
                        let mvals = before[*m].tensor.values().to_vec();
                        let dv = before[*v].tensor.grad_mut();
                        for i in 0..rows {
                            for j in 0..cols {
                                dv[j] += g[i] * mvals[i * cols + j];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(before[*a].tensor.grad_mut(), &g, 1.0);
                    accumulate(before[*b].tensor.grad_mut(), &g, 1.0);
                }
                Op::Sub { a, b } => {
                    accumulate(before[*a].tensor.grad_mut(), &g, 1.0);
                    accumulate(before[*b].tensor.grad_mut(), &g, -1.0);
                }
                Op::Mul { a, b } => {
                    {
                        let bvals = before[*b].tensor.values().to_vec();
                        let da = before[*a].tensor.grad_mut();
                        for (i, gi) in g.iter().enumerate() {
                            da[i] += gi * bvals[i];
                        }
                    }
                    {
                        let avals = before[*a].tensor.values().to_vec();
                        let db = before[*b].tensor.grad_mut();
                        for (i, gi) in g.iter().enumerate() {
                            db[i] += gi * avals[i];
                        }
                    }
                }
                Op::Div { a, b } => {
                    let avals = before[*a].tensor.values().to_vec();
                    let bvals = before[*b].tensor.values().to_vec();
                    {
                        let da = before[*a].tensor.grad_mut();
                        for (i, gi) in g.iter().enumerate() {
                            da[i] += gi / bvals[i];
                        }
                    }
                    {
                        let db = before[*b].tensor.grad_mut();
                        for (i, gi) in g.iter().enumerate() {
                            db[i] -= gi * avals[i] / (bvals[i] * bvals[i]);
                        }
                    }
                }
                Op::AddScalar { a } => accumulate(before[*a].tensor.grad_mut(), &g, 1.0),
                Op::Scale { a, c } => accumulate(before[*a].tensor.grad_mut(), &g, *c),
                Op::Neg { a } => accumulate(before[*a].tensor.grad_mut(), &g, -1.0),
                Op::Exp { a } => {
                    let yvals = node.tensor.values().to_vec();
                    let da = before[*a].tensor.grad_mut();
                    for (i, gi) in g.iter().enumerate() {
                        da[i] += gi * yvals[i];
                    }
                }
                Op::Ln1p { a } => {
                    let xvals = before[*a].tensor.values().to_vec();
                    let da = before[*a].tensor.grad_mut();
                    for (i, gi) in g.iter().enumerate() {
                        da[i] += gi / (1.0 + xvals[i]);
                    }
                }
                Op::Elu { a } => {
                    let xvals = before[*a].tensor.values().to_vec();
                    let yvals = node.tensor.values().to_vec();
                    let da = before[*a].tensor.grad_mut();
                    for (i, gi) in g.iter().enumerate() {
                        // derivative is 1 for x >= 0, e^x = y + 1 otherwise
                        da[i] += gi * if xvals[i] >= 0.0 { 1.0 } else { yvals[i] + 1.0 };
                    }
                }
                Op::Tanh { a } => {
                    let yvals = node.tensor.values().to_vec();
                    let da = before[*a].tensor.grad_mut();
                    for (i, gi) in g.iter().enumerate() {
                        da[i] += gi * (1.0 - yvals[i] * yvals[i]);
                    }
                }
                Op::SigmoidScaled { a, c } => {
                    let yvals = node.tensor.values().to_vec();
                    let da = before[*a].tensor.grad_mut();
                    for (i, gi) in g.iter().enumerate() {
                        da[i] += gi * yvals[i] * (c - yvals[i]) / c;
                    }
                }
                Op::Sum { a } => {
                    let da = before[*a].tensor.grad_mut();
                    da.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Mean { a } => {
                    let n = before[*a].tensor.len() as f64;
                    let da = before[*a].tensor.grad_mut();
                    da.iter_mut().for_each(|x| *x += g[0] / n);
                }
                Op::Dot { a, b } => {
                    {
                        let bvals = before[*b].tensor.values().to_vec();
                        let da = before[*a].tensor.grad_mut();
                        for (i, bi) in bvals.iter().enumerate() {
                            da[i] += g[0] * bi;
                        }
                    }
                    {
                        let avals = before[*a].tensor.values().to_vec();
                        let db = before[*b].tensor.grad_mut();
                        for (i, ai) in avals.iter().enumerate() {
                            db[i] += g[0] * ai;
                        }
                    }
                }
                Op::Column { a, col } => {
                    let cols = before[*a].tensor.cols();
                    let da = before[*a].tensor.grad_mut();
                    for (i, gi) in g.iter().enumerate() {
                        da[i * cols + col] += gi;
                    }
                }
                Op::AddRow { a, row } => {
                    let c = before[*row].tensor.len();
                    accumulate(before[*a].tensor.grad_mut(), &g, 1.0);
                    let dr = before[*row].tensor.grad_mut();
                    for (i, gi) in g.iter().enumerate() {
                        dr[i % c] += gi;
                    }
                }
                Op::Reshape { a } => accumulate(before[*a].tensor.grad_mut(), &g, 1.0),
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    softmax,
                } => {
                    let n = labels.len();
                    let classes = softmax.len() / n;
                    let softmax = softmax.clone();
                    let labels = labels.clone();
                    let dl = before[*logits].tensor.grad_mut();
                    for i in 0..n {
                        for j in 0..classes {
                            let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                            dl[i * classes + j] +=
                                g[0] * (softmax[i * classes + j] - onehot) / n as f64;
                        }
                    }
                }
            }
        }
        self.ran_backward = true;
        Ok(())
    }

    /// Checks that the gradients of the given vars are all finite.
    pub fn grads_finite(&self, vars: &[Var]) -> Result<()> {
        for &v in vars {
            if self.grad(v)?.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite("gradient"));
            }
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}
