use super::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    ConcatCols(Var, Var),
    VStack(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    Softmax(Var),
    CausalSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    EmbeddingMean(Var, Vec<Vec<usize>>),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes are pushed in evaluation order, so the node list is always a
/// topological order and the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    tanh_fault: Option<f64>,
}

const LN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales every tanh backward contribution by `factor`. Only used as a
    /// negative control for the gradient checker.
    #[doc(hidden)]
    pub fn corrupt_tanh_backward(&mut self, factor: f64) {
        self.tanh_fault = Some(factor);
    }

    /// Inserts a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        let mut value = tensor;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut t = tensor;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, shape: [usize; 2], data: Vec<f64>, op: Op) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Tensor::raw(shape, data),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulBt(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Mul(a, b)
            | Op::ConcatCols(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Gelu(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _)
            | Op::GatherCols(a, _)
            | Op::Softmax(a)
            | Op::CausalSoftmax(a)
            | Op::EmbeddingMean(a, _)
            | Op::MeanRows(a)
            | Op::Sum(a) => vec![*a],
            Op::VStack(vs) => vs.clone(),
            Op::LayerNorm { x, gain, offset, .. } => vec![*x, *gain, *offset],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    // ---- forward operations -------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut out = vec![0.0; sa[0] * sb[1]];
        matmul_into(&self.value(a).data, &self.value(b).data, &mut out, sa[0], sa[1], sb[1]);
        self.push("matmul", [sa[0], sb[1]], out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[1] {
            return Err(Error::Dimension {
                op: "matmul_bt",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut out = vec![0.0; sa[0] * sb[0]];
        matmul_bt_into(&self.value(a).data, &self.value(b).data, &mut out, sa[0], sa[1], sb[0]);
        self.push("matmul_bt", [sa[0], sb[0]], out, Op::MatMulBt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let [m, n] = self.shape(a);
        let src = &self.value(a).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push("transpose", [n, m], out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        self.push("add", sa, out, Op::Add(a, b))
    }

    /// Adds a `[1×n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb[0] != 1 || sa[1] != sb[1] {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: sa,
                rhs: sb,
            });
        }
        let b = &self.value(bias).data;
        let out = self
            .value(a)
            .data
            .chunks(sa[1])
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        self.push("add_row", sa, out, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op: "mul",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        self.push("mul", sa, out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).data.iter().map(|x| x * s).collect();
        self.push("scale", self.shape(a), out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).data.iter().map(|x| x.tanh()).collect();
        self.push("tanh", self.shape(a), out, Op::Tanh(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).data.iter().map(|&x| gelu(x)).collect();
        self.push("gelu", self.shape(a), out, Op::Gelu(a))
    }

    /// Concatenates two row vectors `[1×p] ⊕ [1×q] → [1×(p+q)]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != 1 || sb[0] != 1 {
            return Err(Error::Shape {
                op: "concat",
                msg: format!("expected row vectors, got {:?} and {:?}", sa, sb),
            });
        }
        self.concat_cols(a, b)
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: sa,
                rhs: sb,
            });
        }
        let (da, db) = (&self.value(a).data, &self.value(b).data);
        let mut out = Vec::with_capacity(da.len() + db.len());
        for r in 0..sa[0] {
            out.extend_from_slice(&da[r * sa[1]..(r + 1) * sa[1]]);
            out.extend_from_slice(&db[r * sb[1]..(r + 1) * sb[1]]);
        }
        self.push("concat", [sa[0], sa[1] + sb[1]], out, Op::ConcatCols(a, b))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape {
            op: "vstack",
            msg: "no inputs".into(),
        })?;
        let cols = self.shape(*first)[1];
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1] != cols {
                return Err(Error::Dimension {
                    op: "vstack",
                    lhs: self.shape(*first),
                    rhs: s,
                });
            }
            rows += s[0];
            out.extend_from_slice(&self.value(p).data);
        }
        self.push("vstack", [rows, cols], out, Op::VStack(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let [m, n] = self.shape(a);
        if start + len > m {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                len: m,
            });
        }
        let out = self.value(a).data[start * n..(start + len) * n].to_vec();
        self.push("slice_rows", [len, n], out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let [m, n] = self.shape(a);
        if start + len > n {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                len: n,
            });
        }
        let src = &self.value(a).data;
        let out = (0..m)
            .flat_map(|r| src[r * n + start..r * n + start + len].iter().copied())
            .collect();
        self.push("slice_cols", [m, len], out, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let [m, n] = self.shape(a);
        let src = &self.value(a).data;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::IndexOutOfRange { index: i, len: m });
            }
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        self.push("gather_rows", [idx.len(), n], out, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let [m, n] = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let src = &self.value(a).data;
        let out = (0..m).flat_map(|r| idx.iter().map(move |&j| src[r * n + j])).collect();
        self.push("gather_cols", [m, idx.len()], out, Op::GatherCols(a, idx.to_vec()))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let [m, n] = self.shape(a);
        if n == 0 {
            return Err(Error::Shape {
                op: "softmax",
                msg: "empty input".into(),
            });
        }
        let mut out = self.value(a).data.clone();
        for r in 0..m {
            softmax_in_place(&mut out[r * n..(r + 1) * n]);
        }
        self.push("softmax", [m, n], out, Op::Softmax(a))
    }

    /// Row-wise softmax of a square score matrix where row `i` only spans
    /// columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let [m, n] = self.shape(a);
        if m != n {
            return Err(Error::Shape {
                op: "causal_softmax",
                msg: format!("expected square scores, got {:?}", [m, n]),
            });
        }
        let mut out = self.value(a).data.clone();
        for r in 0..m {
            let row = &mut out[r * n..(r + 1) * n];
            softmax_in_place(&mut row[..=r]);
            row[r + 1..].iter_mut().for_each(|x| *x = 0.0);
        }
        self.push("causal_softmax", [m, n], out, Op::CausalSoftmax(a))
    }

    /// Row-wise layer normalization with `[1×n]` gain and offset.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var> {
        let [m, n] = self.shape(x);
        for p in [gain, offset] {
            if self.shape(p) != [1, n] {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: [m, n],
                    rhs: self.shape(p),
                });
            }
        }
        let src = &self.value(x).data;
        let g = &self.value(gain).data;
        let b = &self.value(offset).data;
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        self.push(
            "layer_norm",
            [m, n],
            out,
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                inv_std,
            },
        )
    }

    /// Looks up rows of `table` and averages each id list into one output row.
    pub fn embedding_mean(&mut self, table: Var, ids: &[Vec<usize>]) -> Result<Var> {
        let [v, d] = self.shape(table);
        let src = &self.value(table).data;
        let mut out = vec![0.0; ids.len() * d];
        for (r, list) in ids.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Shape {
                    op: "embedding_mean",
                    msg: format!("empty id list at row {r}"),
                });
            }
            let w = 1.0 / list.len() as f64;
            for &id in list {
                if id >= v {
                    return Err(Error::IndexOutOfRange { index: id, len: v });
                }
                for c in 0..d {
                    out[r * d + c] += w * src[id * d + c];
                }
            }
        }
        self.push(
            "embedding_mean",
            [ids.len(), d],
            out,
            Op::EmbeddingMean(table, ids.to_vec()),
        )
    }

    /// Embedding lookup, one output row per id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let [m, n] = self.shape(a);
        if m == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                msg: "no rows".into(),
            });
        }
        let src = &self.value(a).data;
        let mut out = vec![0.0; n];
        for r in 0..m {
            for c in 0..n {
                out[c] += src[r * n + c];
            }
        }
        out.iter_mut().for_each(|x| *x /= m as f64);
        self.push("mean_rows", [1, n], out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        self.push("sum", [1, 1], vec![s], Op::Sum(a))
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean_of(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::contract("mean of zero terms"));
        }
        let stacked = self.vstack(scalars)?;
        let total = self.sum(stacked)?;
        self.scale(total, 1.0 / scalars.len() as f64)
    }

    /// `−log softmax(logits)[target]` for a `[1×V]` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let [m, n] = self.shape(logits);
        if m != 1 || n == 0 {
            return Err(Error::Shape {
                op: "cross_entropy",
                msg: format!("expected non-empty [1×V] logits, got {:?}", [m, n]),
            });
        }
        if target >= n {
            return Err(Error::IndexOutOfRange { index: target, len: n });
        }
        let z = &self.value(logits).data;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let loss = sum_exp.ln() - (z[target] - max);
        let probs = z.iter().map(|v| (v - max).exp() / sum_exp).collect();
        self.push(
            "cross_entropy",
            [1, 1],
            vec![loss],
            Op::CrossEntropy { logits, target, probs },
        )
    }

    // ---- backward -----------------------------------------------------

    /// Propagates `∂loss/∂node` to every node that needs a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; call zero_grad first".into(),
            ));
        }
        if self.shape(loss) != [1, 1] {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    /// Clears all gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let len = self.nodes[v.0].value.data.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let shape = self.nodes[i].value.shape;
        // Take the op out to appease the borrow checker; restored below.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs_grad(*a) {
                    let bv = self.value(*b).data.clone();
                    self.acc(*a, |ga| matmul_bt_into(g, &bv, ga, m, n, k));
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a).data.clone();
                    self.acc(*b, |gb| matmul_at_into(&av, g, gb, m, k, n));
                }
            }
            Op::MatMulBt(a, b) => {
                // out[m×n] = a[m×k] · b[n×k]ᵀ
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[0]);
                if self.needs_grad(*a) {
                    let bv = self.value(*b).data.clone();
                    self.acc(*a, |ga| matmul_into(g, &bv, ga, m, n, k));
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a).data.clone();
                    self.acc(*b, |gb| matmul_at_into(g, &av, gb, m, n, k));
                }
            }
            Op::Transpose(a) => {
                let [m, n] = shape; // output shape; input is [n×m]
                self.acc(*a, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[c * m + r] += g[r * n + c];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(*a, |ga| add_into(ga, g));
                self.acc(*b, |gb| add_into(gb, g));
            }
            Op::AddRow(a, b) => {
                let n = shape[1];
                self.acc(*a, |ga| add_into(ga, g));
                self.acc(*b, |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    let bv = self.value(*b).data.clone();
                    self.acc(*a, |ga| {
                        ga.iter_mut().zip(g).zip(&bv).for_each(|((x, gi), y)| *x += gi * y)
                    });
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a).data.clone();
                    self.acc(*b, |gb| {
                        gb.iter_mut().zip(g).zip(&av).for_each(|((x, gi), y)| *x += gi * y)
                    });
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(*a, |ga| ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi * s));
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data.clone();
                let fault = self.tanh_fault.unwrap_or(1.0);
                self.acc(*a, |ga| {
                    ga.iter_mut()
                        .zip(g)
                        .zip(&y)
                        .for_each(|((x, gi), yi)| *x += fault * gi * (1.0 - yi * yi))
                });
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).data.clone();
                self.acc(*a, |ga| {
                    ga.iter_mut()
                        .zip(g)
                        .zip(&xv)
                        .for_each(|((x, gi), xi)| *x += gi * gelu_grad(*xi))
                });
            }
            Op::ConcatCols(a, b) => {
                let (na, nb) = (self.shape(*a)[1], self.shape(*b)[1]);
                let rows = shape[0];
                self.acc(*a, |ga| {
                    for r in 0..rows {
                        add_into(&mut ga[r * na..(r + 1) * na], &g[r * (na + nb)..r * (na + nb) + na]);
                    }
                });
                self.acc(*b, |gb| {
                    for r in 0..rows {
                        add_into(
                            &mut gb[r * nb..(r + 1) * nb],
                            &g[r * (na + nb) + na..(r + 1) * (na + nb)],
                        );
                    }
                });
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.data.len();
                    self.acc(p, |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = shape[1];
                let start = *start;
                self.acc(*a, |ga| add_into(&mut ga[start * n..start * n + g.len()], g));
            }
            Op::SliceCols(a, start) => {
                let n_in = self.shape(*a)[1];
                let [m, len] = shape;
                let start = *start;
                self.acc(*a, |ga| {
                    for r in 0..m {
                        add_into(
                            &mut ga[r * n_in + start..r * n_in + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let n = shape[1];
                self.acc(*a, |ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut ga[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::GatherCols(a, idx) => {
                let n_in = self.shape(*a)[1];
                let k = idx.len();
                let m = shape[0];
                self.acc(*a, |ga| {
                    for r in 0..m {
                        for (c, &src) in idx.iter().enumerate() {
                            ga[r * n_in + src] += g[r * k + c];
                        }
                    }
                });
            }
            Op::Softmax(a) | Op::CausalSoftmax(a) => {
                let y = self.nodes[i].value.data.clone();
                let n = shape[1];
                self.acc(*a, |ga| {
                    for r in 0..shape[0] {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            ga[r * n + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                inv_std,
            } => {
                let [m, n] = shape;
                let gv = self.value(*gain).data.clone();
                self.acc(*x, |gx| {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let dh: Vec<f64> = gr.iter().zip(&gv).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for c in 0..n {
                            gx[r * n + c] += inv_std[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                });
                self.acc(*gain, |gg| {
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                });
                self.acc(*offset, |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::EmbeddingMean(table, ids) => {
                let d = shape[1];
                self.acc(*table, |gt| {
                    for (r, list) in ids.iter().enumerate() {
                        let w = 1.0 / list.len() as f64;
                        for &id in list {
                            for c in 0..d {
                                gt[id * d + c] += w * g[r * d + c];
                            }
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let [m, n] = self.shape(*a);
                self.acc(*a, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c] / m as f64;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.acc(*a, |ga| ga.iter_mut().for_each(|x| *x += g0));
            }
            Op::CrossEntropy { logits, target, probs } => {
                let g0 = g[0];
                let t = *target;
                self.acc(*logits, |gl| {
                    for (c, p) in probs.iter().enumerate() {
                        gl[c] += g0 * (p - if c == t { 1.0 } else { 0.0 });
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(g: &mut Graph, v: &[f64]) -> Var {
        g.leaf(Tensor::row(v).unwrap().with_grad())
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::eye(2));
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let ia = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(ia).data(), g.value(a).data());
        let b = g.constant(Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab).shape(), [2, 1]);
        assert_eq!(g.value(ab).data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(4, 5));
        let err = g.matmul(a, b).unwrap_err();
        assert!(
            err.to_string().contains("[2, 3]") && err.to_string().contains("[4, 5]"),
            "{err}"
        );
    }

    #[test]
    fn concat_values_and_gradient_split() {
        let mut g = Graph::new();
        let a = row(&mut g, &[1.0, 2.0]);
        let b = row(&mut g, &[3.0]);
        let c = g.concat(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0]);

        let mut g = Graph::new();
        let empty = g.constant(Tensor::zeros(1, 0));
        let five = g.constant(Tensor::row(&[5.0]).unwrap());
        let c = g.concat(empty, five).unwrap();
        assert_eq!(g.value(c).data(), &[5.0]);

        let m = g.constant(Tensor::zeros(2, 2));
        assert!(matches!(g.concat(m, five), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_hand_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(&[0.0, 0.0, 0.0]).unwrap());
        let s = g.softmax(z).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = g.constant(Tensor::row(&[1.0, 0.0]).unwrap());
        let s = g.softmax(z).unwrap();
        let e = std::f64::consts::E;
        assert!((g.value(s).data()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((g.value(s).data()[0] - 0.7310586).abs() < 1e-6);
        assert!((g.value(s).data()[1] - 0.2689414).abs() < 1e-6);
        let z = g.constant(Tensor::row(&[1000.0, 0.0]).unwrap());
        let s = g.softmax(z).unwrap();
        assert!((g.value(s).data()[0] - 1.0).abs() < 1e-15);
        assert!(g.value(s).data()[1] < 1e-300);
        let empty = g.constant(Tensor::zeros(1, 0));
        assert!(matches!(g.softmax(empty), Err(Error::Shape { .. })));
    }

    #[test]
    fn cross_entropy_hand_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(1, 4));
        let l = g.cross_entropy(z, 0).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-15);
        let z = g.constant(Tensor::row(&[1.0, 2.0, 3.0]).unwrap());
        let l = g.cross_entropy(z, 2).unwrap();
        let oracle = (1.0 + (-1f64).exp() + (-2f64).exp()).ln();
        assert!((g.scalar(l) - oracle).abs() < 1e-15);
        assert!((g.scalar(l) - 0.407606).abs() < 1e-6);
        let z = g.constant(Tensor::row(&[0.0, 50.0]).unwrap());
        let l = g.cross_entropy(z, 1).unwrap();
        assert!(g.scalar(l) >= 0.0 && g.scalar(l) < 1e-20);
        assert!(matches!(
            g.cross_entropy(z, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn backward_linearity_and_quadratic() {
        let mut g = Graph::new();
        let x = row(&mut g, &[1.0, -2.0, 3.0]);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = row(&mut g, &[1.0, -2.0, 3.0]);
        let xx = g.matmul_bt(x, x).unwrap();
        g.backward(xx).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_contracts() {
        let mut g = Graph::new();
        let x = row(&mut g, &[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::State(_))));
        g.zero_grad();
        g.backward(s).unwrap();
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = row(&mut g, &[2.0]);
        let a = g.scale(x, 3.0).unwrap();
        let b = g.add(a, x).unwrap();
        g.backward(b).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::from_rows(&[vec![1.0, 9.0], vec![0.0, 0.0]]).unwrap());
        let p = g.causal_softmax(s).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[1e308]).unwrap());
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { op: "scale" })));
    }
}
