//! Computation tape and reverse-mode differentiation.
//!
//! Every forward operation appends one node to the tape. Node indices are a
//! topological order, so the backward pass is a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernels;
use crate::{Elem, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a custom operation: given the input values, the output
/// value and the output gradient, return one gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Vec<T>> + Send + Sync>;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Sum(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<f64>,
    },
    LeakyRelu(Var, T),
    Gelu(Var),
    Dropout(Var, Vec<T>),
    CrossEntropy {
        logits: Var,
        gold: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    RelGather {
        scores: Var,
        rel: Arc<[u16]>,
    },
    RelScatter {
        alpha: Var,
        rel: Arc<[u16]>,
    },
    RowDot(Var, Var),
    Custom {
        inputs: Vec<Var>,
        backward: BackwardFn<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::RowDot(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Softmax(x)
            | Op::LeakyRelu(x, _)
            | Op::Gelu(x)
            | Op::Dropout(x, _) => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::SliceCols { x, .. } => vec![*x],
            Op::ConcatCols(parts) => parts.clone(),
            Op::GatherRows { table, .. } => vec![*table],
            Op::RelGather { scores, .. } => vec![*scores],
            Op::RelScatter { alpha, .. } => vec![*alpha],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    name: &'static str,
    needs_grad: bool,
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    visited: usize,
}

impl<T: Elem> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Number of tape nodes the backward sweep visited.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }
}

/// Records operations for one forward pass.
pub struct Tape<T: Elem = f32> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(ParamId, Var)>,
    bound: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<T: Elem> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;

impl<T: Elem> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: Vec::new(),
            bound: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never tracks gradients; parameters bind as constants.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].name
    }

    pub fn bindings(&self) -> &[(ParamId, Var)] {
        &self.bindings
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Var {
        let needs_grad = self.grad_enabled
            && match &op {
                Op::Leaf => value.requires_grad(),
                other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
            };
        self.nodes.push(Node {
            value,
            op,
            name,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, var: Var) -> &[T] {
        self.nodes[var.0].value.data()
    }

    fn make(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).expect("kernel produced inconsistent shape")
    }

    /// Record a tensor. It is differentiable iff `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, "leaf")
    }

    /// Record a tensor that never receives a gradient.
    pub fn constant(&mut self, mut value: Tensor<T>) -> Var {
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, "constant")
    }

    /// Bind a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&var) = self.bound.get(&id) {
            return var;
        }
        let mut value = store.get(id).clone();
        value.zero_grad();
        value.set_requires_grad(self.grad_enabled);
        let var = self.push(value, Op::Leaf, "param");
        self.bound.insert(id, var);
        self.bindings.push((id, var));
        var
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(TensorError::invalid(op, format!("expected a matrix, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(TensorError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.data(a), self.data(b), m, k, n);
        Ok(self.push(Self::make(vec![m, n], out), Op::MatMul(a, b), "matmul"))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("transpose", x)?;
        let out = kernels::transpose(self.data(x), r, c);
        Ok(self.push(Self::make(vec![c, r], out), Op::Transpose(x), "transpose"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Self::make(shape, out), Op::Add(a, b), "add"))
    }

    /// Sum of equally shaped tensors.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var, TensorError> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| TensorError::invalid("add_n", "no operands"))?;
        let mut acc = first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// Add a vector to every last-dimension slice of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let cols = self.value(x).cols();
        if self.shape(bias) != [cols] {
            return Err(TensorError::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let out: Vec<T> = self
            .data(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&p, &q)| p + q))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Self::make(shape, out), Op::AddRow(x, bias), "add_row"))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out: Vec<T> = self.data(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(Self::make(shape, out), Op::Scale(x, factor), "scale")
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var, TensorError> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(TensorError::shape("reshape", self.shape(x), &shape));
        }
        let out = self.data(x).to_vec();
        Ok(self.push(Self::make(shape, out), Op::Reshape(x), "reshape"))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|v| v.widen()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), "sum")
    }

    /// Softmax over the last dimension, computed with max subtraction.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).cols();
        if n == 0 || self.shape(x).is_empty() {
            return Err(TensorError::invalid("softmax", "empty last dimension"));
        }
        let mut out = Vec::with_capacity(self.value(x).numel());
        let mut buf = vec![0f64; n];
        for row in self.data(x).chunks(n) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.widen()));
            let mut total = 0.0;
            for (b, v) in buf.iter_mut().zip(row) {
                *b = (v.widen() - max).exp();
                total += *b;
            }
            out.extend(buf.iter().map(|&e| T::of(e / total)));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Self::make(shape, out), Op::Softmax(x), "softmax"))
    }

    /// Layer normalisation over the last dimension with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let d = self.value(x).cols();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(TensorError::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let g = self.data(gain);
        let b = self.data(bias);
        let mut out = Vec::with_capacity(self.value(x).numel());
        let mut xhat = Vec::with_capacity(self.value(x).numel());
        let mut inv_std = Vec::with_capacity(self.value(x).rows());
        for row in self.data(x).chunks(d) {
            let mean = row.iter().map(|v| v.widen()).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|v| {
                    let c = v.widen() - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (k, v) in row.iter().enumerate() {
                let h = (v.widen() - mean) * inv;
                xhat.push(T::of(h));
                out.push(T::of(h * g[k].widen() + b[k].widen()));
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Self::make(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            "layer_norm",
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out: Vec<T> = self
            .data(x)
            .iter()
            .map(|&v| if v >= T::zero() { v } else { v * slope })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Self::make(shape, out), Op::LeakyRelu(x, slope), "leaky_relu")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out: Vec<T> = self
            .data(x)
            .iter()
            .map(|&v| T::of(gelu_forward(v.widen())))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Self::make(shape, out), Op::Gelu(x), "gelu")
    }

    /// Inverted dropout with a mask drawn from a seeded ChaCha stream.
    /// Identity (same node) in inference mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out: Vec<T> = self
            .data(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Self::make(shape, out), Op::Dropout(x, mask), "dropout"))
    }

    /// Mean negative log-likelihood of `gold` under row-wise softmax of
    /// `logits`. Rows whose gold index equals `ignore` are skipped.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        gold: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var, TensorError> {
        let (n, c) = self.matrix_dims("cross_entropy", logits)?;
        if gold.len() != n {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("{} gold indices for {n} rows", gold.len()),
            ));
        }
        let mut targets = Vec::with_capacity(n);
        for &g in gold {
            if Some(g) == ignore {
                targets.push(None);
            } else if g >= c {
                return Err(TensorError::invalid(
                    "cross_entropy",
                    format!("gold index {g} outside [0, {c})"),
                ));
            } else {
                targets.push(Some(g));
            }
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(TensorError::NoSupervisedPositions);
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut total = 0.0;
        for (row, target) in self.data(logits).chunks(c).zip(&targets) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.widen()));
            let z: f64 = row.iter().map(|v| (v.widen() - max).exp()).sum();
            let log_z = max + z.ln();
            probs.extend(row.iter().map(|v| (v.widen() - log_z).exp()));
            if let Some(t) = target {
                total += log_z - row[*t].widen();
            }
        }
        let loss = Tensor::scalar(T::of(total / count as f64));
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                gold: targets,
                probs,
            },
            "cross_entropy",
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("slice_cols", x)?;
        if start + len > c {
            return Err(TensorError::invalid(
                "slice_cols",
                format!("columns {start}..{} of {c}", start + len),
            ));
        }
        let out: Vec<T> = self
            .data(x)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(Self::make(vec![r, len], out), Op::SliceCols { x, start }, "slice_cols"))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat_cols", "no operands"))?;
        let (r, _) = self.matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix_dims("concat_cols", p)?;
            if pr != r {
                return Err(TensorError::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            Self::make(vec![r, total], out),
            Op::ConcatCols(parts.to_vec()),
            "concat_cols",
        ))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (rows, d) = self.matrix_dims("gather_rows", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::invalid(
                "gather_rows",
                format!("row {bad} outside table of {rows} rows"),
            ));
        }
        let t = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Self::make(vec![ids.len(), d], out),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            "gather_rows",
        ))
    }

    /// `out[i][j] = scores[i][rel[i][j]]` for an `n×n` id matrix `rel`.
    pub fn rel_gather(&mut self, scores: Var, rel: Arc<[u16]>) -> Result<Var, TensorError> {
        let (n, width) = self.matrix_dims("rel_gather", scores)?;
        check_rel("rel_gather", &rel, n, width)?;
        let s = self.data(scores);
        let out: Vec<T> = rel
            .iter()
            .enumerate()
            .map(|(ij, &r)| s[(ij / n) * width + r as usize])
            .collect();
        Ok(self.push(
            Self::make(vec![n, n], out),
            Op::RelGather { scores, rel },
            "rel_gather",
        ))
    }

    /// `out[i][r] = Σ_{j : rel[i][j] = r} alpha[i][j]`, with `width` columns.
    pub fn rel_scatter(&mut self, alpha: Var, rel: Arc<[u16]>, width: usize) -> Result<Var, TensorError> {
        let (n, n2) = self.matrix_dims("rel_scatter", alpha)?;
        if n != n2 {
            return Err(TensorError::invalid("rel_scatter", "attention matrix must be square"));
        }
        check_rel("rel_scatter", &rel, n, width)?;
        let a = self.data(alpha);
        let mut acc = vec![0f64; n * width];
        for (ij, &r) in rel.iter().enumerate() {
            acc[(ij / n) * width + r as usize] += a[ij].widen();
        }
        let out = acc.into_iter().map(T::of).collect();
        Ok(self.push(
            Self::make(vec![n, width], out),
            Op::RelScatter { alpha, rel },
            "rel_scatter",
        ))
    }

    /// Grouped row-wise dot products: `a` is `n×(g·h)`, `b` is `n×h`, and
    /// `out[r][q] = Σ_k a[r][q·h + k] · b[r][k]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (n, gh) = self.matrix_dims("row_dot", a)?;
        let (n2, h) = self.matrix_dims("row_dot", b)?;
        if n != n2 || h == 0 || gh % h != 0 {
            return Err(TensorError::shape("row_dot", self.shape(a), self.shape(b)));
        }
        let g = gh / h;
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(n * g);
        for r in 0..n {
            let brow = &bd[r * h..(r + 1) * h];
            for q in 0..g {
                let arow = &ad[r * gh + q * h..r * gh + (q + 1) * h];
                let s: f64 = arow.iter().zip(brow).map(|(&x, &y)| x.widen() * y.widen()).sum();
                out.push(T::of(s));
            }
        }
        Ok(self.push(Self::make(vec![n, g], out), Op::RowDot(a, b), "row_dot"))
    }

    /// Record an operation defined outside this crate.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            name,
        )
    }

    /// Name of the first operation whose output holds a NaN, or an infinity
    /// that none of its inputs carried.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        for node in &self.nodes {
            let data = node.value.data();
            if data.iter().any(|v| v.is_nan()) {
                return Some(node.name);
            }
            if !node.value.all_finite() {
                let inherited = node
                    .op
                    .inputs()
                    .iter()
                    .any(|v| !self.nodes[v.0].value.all_finite());
                if !inherited && !matches!(node.op, Op::Leaf) {
                    return Some(node.name);
                }
            }
        }
        None
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            visited += 1;
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], var: Var, contribution: Vec<T>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, idx: usize, dout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if self.nodes[a.0].needs_grad {
                    let da = kernels::matmul_nt(dout, self.data(*b), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let db = kernels::matmul_tn(self.data(*a), dout, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let dx = kernels::transpose(dout, s[0], s[1]);
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dout.to_vec());
                self.accumulate(grads, *b, dout.to_vec());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, dout.to_vec());
                if self.nodes[bias.0].needs_grad {
                    let cols = node.value.cols();
                    let mut db = vec![0f64; cols];
                    for row in dout.chunks(cols) {
                        for (s, v) in db.iter_mut().zip(row) {
                            *s += v.widen();
                        }
                    }
                    self.accumulate(grads, *bias, db.into_iter().map(T::of).collect());
                }
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, dout.iter().map(|&v| v * *f).collect());
            }
            Op::Reshape(x) => self.accumulate(grads, *x, dout.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![dout[0]; n]);
            }
            Op::Softmax(x) => {
                let n = node.value.cols();
                let mut dx = Vec::with_capacity(dout.len());
                for (y, dy) in node.value.data().chunks(n).zip(dout.chunks(n)) {
                    let dot: f64 = y.iter().zip(dy).map(|(&p, &q)| p.widen() * q.widen()).sum();
                    dx.extend(
                        y.iter()
                            .zip(dy)
                            .map(|(&p, &q)| T::of(p.widen() * (q.widen() - dot))),
                    );
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let g = self.data(*gain);
                if self.nodes[x.0].needs_grad {
                    let mut dx = Vec::with_capacity(dout.len());
                    let mut dh = vec![0f64; d];
                    for ((dy, h), &inv) in dout.chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                        for k in 0..d {
                            dh[k] = dy[k].widen() * g[k].widen();
                        }
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(&a, &b)| a * b.widen()).sum();
                        for k in 0..d {
                            let v = inv / d as f64
                                * (d as f64 * dh[k] - sum_dh - h[k].widen() * sum_dh_h);
                            dx.push(T::of(v));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.nodes[gain.0].needs_grad || self.nodes[bias.0].needs_grad {
                    let mut dg = vec![0f64; d];
                    let mut db = vec![0f64; d];
                    for (dy, h) in dout.chunks(d).zip(xhat.chunks(d)) {
                        for k in 0..d {
                            dg[k] += dy[k].widen() * h[k].widen();
                            db[k] += dy[k].widen();
                        }
                    }
                    self.accumulate(grads, *gain, dg.into_iter().map(T::of).collect());
                    self.accumulate(grads, *bias, db.into_iter().map(T::of).collect());
                }
            }
            Op::LeakyRelu(x, slope) => {
                let dx = self
                    .data(*x)
                    .iter()
                    .zip(dout)
                    .map(|(&v, &d)| if v >= T::zero() { d } else { d * *slope })
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let dx = self
                    .data(*x)
                    .iter()
                    .zip(dout)
                    .map(|(&v, &d)| T::of(gelu_derivative(v.widen()) * d.widen()))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Dropout(x, mask) => {
                let dx = dout.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                gold,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let count = gold.iter().filter(|g| g.is_some()).count() as f64;
                let scale = dout[0].widen() / count;
                let mut dx = vec![T::zero(); probs.len()];
                for (r, target) in gold.iter().enumerate() {
                    let Some(t) = target else { continue };
                    for k in 0..c {
                        let onehot = if k == *t { 1.0 } else { 0.0 };
                        dx[r * c + k] = T::of((probs[r * c + k] - onehot) * scale);
                    }
                }
                self.accumulate(grads, *logits, dx);
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let len = node.value.cols();
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (r, row) in dout.chunks(len).enumerate() {
                    dx[r * c + start..r * c + start + len].copy_from_slice(row);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let dp: Vec<T> = dout
                        .chunks(total)
                        .flat_map(|row| row[offset..offset + w].iter().copied())
                        .collect();
                    self.accumulate(grads, p, dp);
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                let d = node.value.cols();
                let mut dt = vec![T::zero(); self.value(*table).numel()];
                for (row, &i) in dout.chunks(d).zip(ids) {
                    for (acc, &v) in dt[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::RelGather { scores, rel } => {
                let width = self.value(*scores).cols();
                let n = node.value.cols();
                let mut ds = vec![T::zero(); self.value(*scores).numel()];
                for (ij, &r) in rel.iter().enumerate() {
                    ds[(ij / n) * width + r as usize] += dout[ij];
                }
                self.accumulate(grads, *scores, ds);
            }
            Op::RelScatter { alpha, rel } => {
                let width = node.value.cols();
                let n = self.value(*alpha).cols();
                let da = rel
                    .iter()
                    .enumerate()
                    .map(|(ij, &r)| dout[(ij / n) * width + r as usize])
                    .collect();
                self.accumulate(grads, *alpha, da);
            }
            Op::RowDot(a, b) => {
                let (n, gh) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let h = self.value(*b).cols();
                let g = gh / h;
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![T::zero(); n * gh];
                    for r in 0..n {
                        for q in 0..g {
                            let d = dout[r * g + q];
                            for k in 0..h {
                                da[r * gh + q * h + k] = d * bd[r * h + k];
                            }
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![T::zero(); n * h];
                    for r in 0..n {
                        for k in 0..h {
                            let s: f64 = (0..g)
                                .map(|q| dout[r * g + q].widen() * ad[r * gh + q * h + k].widen())
                                .sum();
                            db[r * h + k] = T::of(s);
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let dins = backward(&values, &node.value, dout);
                for (&v, d) in inputs.iter().zip(dins) {
                    self.accumulate(grads, v, d);
                }
            }
        }
    }
}

fn check_rel(op: &'static str, rel: &[u16], n: usize, width: usize) -> Result<(), TensorError> {
    if rel.len() != n * n {
        return Err(TensorError::invalid(op, format!("relation matrix has {} entries, expected {}", rel.len(), n * n)));
    }
    if let Some(&bad) = rel.iter().find(|&&r| r as usize >= width) {
        return Err(TensorError::invalid(op, format!("relation id {bad} outside table of {width} rows")));
    }
    Ok(())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_forward(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
