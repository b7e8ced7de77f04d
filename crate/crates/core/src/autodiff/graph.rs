//! Reverse-mode computation graph.
//!
//! Eager tape: each operation computes its value immediately and records a
//! node whose index order is already topological, so `backward` is a single
//! reverse sweep. Shapes are rank 0/1/2 and there is no broadcasting beyond
//! scalar-times-tensor, which keeps the rule surface small.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node in one specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Entropy(NodeId),
    L1ToConst(NodeId, Tensor),
    Sum(NodeId),
    Reshape(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    NarrowRows(NodeId, usize, usize),
    NarrowCols(NodeId, usize, usize),
    BceWithLogits(NodeId, Tensor),
    CrossEntropyLogits(NodeId, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Ego-attention output: the differentiable context plus a detached copy of
/// the post-softmax weights, so downstream selection never backpropagates
/// through the weights it inspects.
#[derive(Debug)]
pub struct Attention {
    pub output: NodeId,
    pub weights: Tensor,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward value from {op:?}");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        id
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf that gradients flow into.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf with no gradient (inputs, targets, anchors).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last `backward`, if any reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    // ── elementwise and scalar ops ──────────────────────────────────────

    fn check_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa != sb {
            return Err(Error::Dimension(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "sub")?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "mul")?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let mut value = self.nodes[a.0].value.clone();
        value.scale_in_place(factor);
        let rg = self.requires(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut value = self.nodes[a.0].value.clone();
        for v in value.data_mut() {
            *v = v.tanh();
        }
        let rg = self.requires(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut value = self.nodes[a.0].value.clone();
        for v in value.data_mut() {
            *v = stable_sigmoid(*v);
        }
        let rg = self.requires(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        if !va.is_matrix() || !vb.is_matrix() || va.cols() != vb.rows() {
            return Err(Error::Dimension(format!(
                "matmul: {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let data = matmul_raw(va.data(), vb.data(), m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if !va.is_matrix() {
            return Err(Error::Dimension(format!("transpose: {:?}", va.shape())));
        }
        let (r, c) = (va.rows(), va.cols());
        let t = transpose_raw(va.data(), r, c);
        let rg = self.requires(a);
        Ok(self.push(Tensor::matrix(c, r, t)?, Op::Transpose(a), rg))
    }

    // ── probability ops ─────────────────────────────────────────────────

    /// Softmax over the last axis (each row of a matrix, or a whole vector),
    /// stabilized by max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if va.numel() == 0 || va.cols() == 0 {
            return Err(Error::Dimension("softmax: empty input".into()));
        }
        let (rows, cols) = (va.rows(), va.cols());
        let mut data = va.data().to_vec();
        for r in 0..rows {
            softmax_row_in_place(&mut data[r * cols..(r + 1) * cols]);
        }
        let shape = va.shape().to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(a), rg))
    }

    /// Shannon entropy in nats of a probability vector; zero entries
    /// contribute zero.
    pub fn entropy(&mut self, p: NodeId) -> Result<NodeId> {
        let vp = &self.nodes[p.0].value;
        if vp.shape().len() != 1 {
            return Err(Error::Dimension(format!(
                "entropy expects a vector, got {:?}",
                vp.shape()
            )));
        }
        check_probability_vector(vp.data())?;
        let h = entropy_raw(vp.data());
        let rg = self.requires(p);
        Ok(self.push(Tensor::scalar(h), Op::Entropy(p), rg))
    }

    // ── losses ──────────────────────────────────────────────────────────

    /// |a0 - b0| + |a1 - b1| against a constant; the subgradient at a tie
    /// is 0.
    pub fn l1_to_const(&mut self, a: NodeId, target: &Tensor) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if va.numel() != 2 || target.numel() != 2 {
            return Err(Error::Dimension(format!(
                "l1_to_const expects two-element operands, got {:?} and {:?}",
                va.shape(),
                target.shape()
            )));
        }
        let d0 = va.data()[0] - target.data()[0];
        let d1 = va.data()[1] - target.data()[1];
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::scalar(d0.abs() + d1.abs()),
            Op::L1ToConst(a, target.clone()),
            rg,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.requires(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean squared error against a constant target of the same size.
    pub fn mse_to_const(&mut self, a: NodeId, target: &Tensor) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if va.numel() != target.numel() {
            return Err(Error::Dimension(format!(
                "mse_to_const: {:?} vs {:?}",
                va.shape(),
                target.shape()
            )));
        }
        let t = self.constant(Tensor::new(va.shape().to_vec(), target.data().to_vec())?);
        let d = self.sub(a, t)?;
        let sq = self.mul(d, d)?;
        let s = self.sum(sq);
        Ok(self.scale(s, 1.0 / target.numel() as f64))
    }

    /// Mean binary cross-entropy of logits against constant 0/1 labels,
    /// computed in the numerically stable log1p form.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &Tensor) -> Result<NodeId> {
        let vz = &self.nodes[logits.0].value;
        if vz.numel() != labels.numel() {
            return Err(Error::Dimension(format!(
                "bce_with_logits: {:?} vs {:?}",
                vz.shape(),
                labels.shape()
            )));
        }
        let n = vz.numel() as f64;
        let mut total = 0.0;
        for (&z, &y) in vz.data().iter().zip(labels.data()) {
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let rg = self.requires(logits);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::BceWithLogits(logits, labels.clone()),
            rg,
        ))
    }

    /// Cross-entropy of a logit vector against a single target index,
    /// via log-sum-exp.
    pub fn cross_entropy_logits(&mut self, scores: NodeId, target: usize) -> Result<NodeId> {
        let vs = &self.nodes[scores.0].value;
        if vs.shape().len() != 1 || target >= vs.numel() {
            return Err(Error::Dimension(format!(
                "cross_entropy_logits: shape {:?}, target {}",
                vs.shape(),
                target
            )));
        }
        let data = vs.data();
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + data.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let rg = self.requires(scores);
        Ok(self.push(
            Tensor::scalar(lse - data[target]),
            Op::CrossEntropyLogits(scores, target),
            rg,
        ))
    }

    // ── shape ops ───────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let numel: usize = shape.iter().product();
        if numel != va.numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?}",
                va.shape(),
                shape
            )));
        }
        let value = Tensor::new(shape, va.data().to_vec())?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Stack matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_rows: no parts".into()));
        }
        let cols = self.nodes[parts[0].0].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut rg = false;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if !v.is_matrix() || v.cols() != cols {
                return Err(Error::Dimension(format!(
                    "concat_rows: part shape {:?}, want [_, {}]",
                    v.shape(),
                    cols
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
            rg |= self.requires(p);
        }
        Ok(self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_cols: no parts".into()));
        }
        let rows = self.nodes[parts[0].0].value.rows();
        let mut total_cols = 0;
        let mut rg = false;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if !v.is_matrix() || v.rows() != rows {
                return Err(Error::Dimension(format!(
                    "concat_cols: part shape {:?}, want [{}, _]",
                    v.shape(),
                    rows
                )));
            }
            total_cols += v.cols();
            rg |= self.requires(p);
        }
        let mut data = vec![0.0; rows * total_cols];
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            let c = v.cols();
            for r in 0..rows {
                data[r * total_cols + offset..r * total_cols + offset + c]
                    .copy_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        Ok(self.push(
            Tensor::matrix(rows, total_cols, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn narrow_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if !va.is_matrix() || start + len > va.rows() {
            return Err(Error::Dimension(format!(
                "narrow_rows {start}..{} of {:?}",
                start + len,
                va.shape()
            )));
        }
        let c = va.cols();
        let data = va.data()[start * c..(start + len) * c].to_vec();
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::matrix(len, c, data)?,
            Op::NarrowRows(a, start, len),
            rg,
        ))
    }

    pub fn narrow_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        if !va.is_matrix() || start + len > va.cols() {
            return Err(Error::Dimension(format!(
                "narrow_cols {start}..{} of {:?}",
                start + len,
                va.shape()
            )));
        }
        let (r, c) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&va.data()[row * c + start..row * c + start + len]);
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::matrix(r, len, data)?,
            Op::NarrowCols(a, start, len),
            rg,
        ))
    }

    // ── attention ───────────────────────────────────────────────────────

    /// Single-head scaled dot-product attention. `q` is [n_q, d], `k` and
    /// `v` are [n, d]; the returned weights are a detached [n_q, n] copy.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<Attention> {
        let d = self.nodes[q.0].value.cols();
        if self.nodes[k.0].value.cols() != d {
            return Err(Error::Dimension(format!(
                "attention: q cols {} vs k cols {}",
                d,
                self.nodes[k.0].value.cols()
            )));
        }
        if self.nodes[k.0].value.rows() != self.nodes[v.0].value.rows() {
            return Err(Error::Dimension(format!(
                "attention: k rows {} vs v rows {}",
                self.nodes[k.0].value.rows(),
                self.nodes[v.0].value.rows()
            )));
        }
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = self.softmax(scaled)?;
        let detached = self.nodes[weights.0].value.clone();
        let output = self.matmul(weights, v)?;
        Ok(Attention { output, weights: detached })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Clear accumulated node gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar root; every `requires_grad` node reached
    /// ends up with d(root)/d(node) in its grad slot. Contributions from a
    /// node used several times accumulate.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; call reset_grads first".into(),
            ));
        }
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let seed_shape = self.nodes[root.0].value.shape().to_vec();
        self.nodes[root.0].grad = Some(Tensor::new(seed_shape, vec![1.0])?);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.clone().expect("checked above");
            self.propagate(i, &g)?;
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, shape: &[usize], delta: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut self.nodes[id.0].grad;
        match slot {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => {
                *slot = Some(
                    Tensor::new(shape.to_vec(), delta.to_vec()).expect("grad shape matches value"),
                );
            }
        }
    }

    fn propagate(&mut self, idx: usize, g: &Tensor) -> Result<()> {
        // Clones below keep the borrow checker happy; buffers are small.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accum(a, &shape, g.data());
                self.accum(b, &shape, g.data());
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                let shape = self.nodes[a.0].value.shape().to_vec();
                let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                self.accum(a, &shape, g.data());
                self.accum(b, &shape, &neg);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let shape = self.nodes[a.0].value.shape().to_vec();
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(self.nodes[b.0].value.data())
                    .map(|(g, y)| g * y)
                    .collect();
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(self.nodes[a.0].value.data())
                    .map(|(g, x)| g * x)
                    .collect();
                self.accum(a, &shape, &da);
                self.accum(b, &shape, &db);
            }
            Op::Scale(a, factor) => {
                let (a, factor) = (*a, *factor);
                let shape = self.nodes[a.0].value.shape().to_vec();
                let da: Vec<f64> = g.data().iter().map(|v| v * factor).collect();
                self.accum(a, &shape, &da);
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                // dA = g . B^T, dB = A^T . g
                let bt = transpose_raw(vb.data(), k, n);
                let da = matmul_raw(g.data(), &bt, m, n, k);
                let at = transpose_raw(va.data(), m, k);
                let db = matmul_raw(&at, g.data(), k, m, n);
                self.accum(a, va.shape(), &da);
                self.accum(b, vb.shape(), &db);
            }
            Op::Transpose(a) => {
                let a = *a;
                let (r, c) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols())
                };
                // g is [c, r]; transpose back to [r, c]
                let da = transpose_raw(g.data(), c, r);
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accum(a, &shape, &da);
            }
            Op::Tanh(a) => {
                let a = *a;
                let y = self.nodes[idx].value.clone();
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accum(a, &shape, &da);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let y = self.nodes[idx].value.clone();
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accum(a, &shape, &da);
            }
            Op::Softmax(a) => {
                let a = *a;
                let y = self.nodes[idx].value.clone();
                let (rows, cols) = (y.rows(), y.cols());
                let mut da = vec![0.0; y.numel()];
                for r in 0..rows {
                    let ys = &y.data()[r * cols..(r + 1) * cols];
                    let gs = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for c in 0..cols {
                        da[r * cols + c] = ys[c] * (gs[c] - dot);
                    }
                }
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accum(a, &shape, &da);
            }
            Op::Entropy(p) => {
                let p = *p;
                let gs = g.item();
                let vp = self.nodes[p.0].value.clone();
                let da: Vec<f64> = vp
                    .data()
                    .iter()
                    .map(|&pi| if pi > 0.0 { -gs * (pi.ln() + 1.0) } else { 0.0 })
                    .collect();
                let shape = vp.shape().to_vec();
                self.accum(p, &shape, &da);
            }
            Op::L1ToConst(a, target) => {
                let a = *a;
                let gs = g.item();
                let va = self.nodes[a.0].value.clone();
                let da: Vec<f64> = va
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(x, t)| gs * tie_zero_sign(x - t))
                    .collect();
                let shape = va.shape().to_vec();
                self.accum(a, &shape, &da);
            }
            Op::Sum(a) => {
                let a = *a;
                let gs = g.item();
                let n = self.nodes[a.0].value.numel();
                let da = vec![gs; n];
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accum(a, &shape, &da);
            }
            Op::Reshape(a) => {
                let a = *a;
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accum(a, &shape, g.data());
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let (r, c, shape) = {
                        let v = &self.nodes[p.0].value;
                        (v.rows(), v.cols(), v.shape().to_vec())
                    };
                    let chunk = g.data()[offset..offset + r * c].to_vec();
                    self.accum(p, &shape, &chunk);
                    offset += r * c;
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let total_cols = self.nodes[idx].value.cols();
                let rows = self.nodes[idx].value.rows();
                let mut offset = 0;
                for p in parts {
                    let (c, shape) = {
                        let v = &self.nodes[p.0].value;
                        (v.cols(), v.shape().to_vec())
                    };
                    let mut chunk = vec![0.0; rows * c];
                    for r in 0..rows {
                        chunk[r * c..(r + 1) * c].copy_from_slice(
                            &g.data()[r * total_cols + offset..r * total_cols + offset + c],
                        );
                    }
                    self.accum(p, &shape, &chunk);
                    offset += c;
                }
            }
            Op::NarrowRows(a, start, _len) => {
                let (a, start) = (*a, *start);
                let (r, c, shape) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols(), v.shape().to_vec())
                };
                let mut da = vec![0.0; r * c];
                da[start * c..start * c + g.numel()].copy_from_slice(g.data());
                self.accum(a, &shape, &da);
            }
            Op::NarrowCols(a, start, len) => {
                let (a, start, len) = (*a, *start, *len);
                let (r, c, shape) = {
                    let v = &self.nodes[a.0].value;
                    (v.rows(), v.cols(), v.shape().to_vec())
                };
                let mut da = vec![0.0; r * c];
                for row in 0..r {
                    da[row * c + start..row * c + start + len]
                        .copy_from_slice(&g.data()[row * len..(row + 1) * len]);
                }
                self.accum(a, &shape, &da);
            }
            Op::BceWithLogits(z, labels) => {
                let z = *z;
                let labels = labels.clone();
                let gs = g.item();
                let vz = self.nodes[z.0].value.clone();
                let n = vz.numel() as f64;
                let da: Vec<f64> = vz
                    .data()
                    .iter()
                    .zip(labels.data())
                    .map(|(&zi, &yi)| gs * (stable_sigmoid(zi) - yi) / n)
                    .collect();
                let shape = vz.shape().to_vec();
                self.accum(z, &shape, &da);
            }
            Op::CrossEntropyLogits(s, target) => {
                let (s, target) = (*s, *target);
                let gs = g.item();
                let vs = self.nodes[s.0].value.clone();
                let mut probs = vs.data().to_vec();
                softmax_row_in_place(&mut probs);
                let da: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| gs * (p - if i == target { 1.0 } else { 0.0 }))
                    .collect();
                let shape = vs.shape().to_vec();
                self.accum(s, &shape, &da);
            }
        }
        Ok(())
    }
}

// ── raw kernels shared by forward and backward ──────────────────────────

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(crate) fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum::<f64>()
}

pub(crate) fn check_probability_vector(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Contract(
            "entropy input must be nonnegative and finite".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "entropy input must sum to 1 (got {sum})"
        )));
    }
    Ok(())
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn tie_zero_sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}
