use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis of a rank-2 tensor. `Rows` reduces or stacks along the first axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding: output length `L - W + 1`.
    Valid,
    /// Zero padding that preserves the length; the extra element for an even
    /// width goes on the right.
    Same,
}

impl Padding {
    fn amounts(self, width: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let left = (width - 1) / 2;
                (left, width - 1 - left)
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    RowBroadcast(Var),
    Conv1d { input: Var, kernel: Var, bias: Var, pad_left: usize },
    ConvTranspose1d { input: Var, kernel: Var, bias: Var, stride: usize },
    TopK { input: Var, indices: Vec<usize> },
    SoftmaxRows(Var),
    LayerNorm { input: Var, gain: Var, shift: Var, normalized: Vec<f64>, inv_std: Vec<f64> },
    Embedding { table: Var, tokens: Vec<usize>, padding_idx: Option<usize> },
    Concat { inputs: Vec<Var>, axis: Axis },
    Mean { input: Var, axis: Axis },
    Sum(Var),
    Dropout { input: Var, mask: Vec<f64> },
    SliceCols { input: Var, start: usize },
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Transpose(a)
            | Op::RowBroadcast(a)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![*a],
            Op::Conv1d { input, kernel, bias, .. } | Op::ConvTranspose1d { input, kernel, bias, .. } => {
                vec![*input, *kernel, *bias]
            }
            Op::TopK { input, .. }
            | Op::Mean { input, .. }
            | Op::Dropout { input, .. }
            | Op::SliceCols { input, .. } => vec![*input],
            Op::LayerNorm { input, gain, shift, .. } => vec![*input, *gain, *shift],
            Op::Embedding { table, .. } => vec![*table],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Computation record for reverse-mode differentiation.
///
/// Every op appends one node. [`Graph::backward`] walks the nodes in reverse
/// execution order exactly once and accumulates gradients into every
/// grad-enabled node. A graph supports a single backward pass; build a new
/// graph (or [`Graph::clear`] this one) for the next forward.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<ParamId, Var>,
    backward_done: bool,
    visit_order: Vec<Var>,
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, left: left.to_vec(), right: right.to_vec() }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, contribution: &[f64]) {
    match &mut grads[var.0] {
        Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contribution.to_vec()),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every recorded node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.bound.clear();
        self.visit_order.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(Arc::new(value), op, requires_grad)
    }

    fn push_node(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Arc::new(value), Op::Leaf, false)
    }

    /// A grad-enabled leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(Arc::new(value), Op::Leaf, true)
    }

    /// Bind a stored parameter as a grad-enabled leaf. Binding the same id twice
    /// returns the same node, so every use shares one gradient slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let v = self.push_node(store.shared(id), Op::Leaf, true);
        self.bound.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn param_grad(&self, id: ParamId) -> Option<Tensor> {
        self.bound.get(&id).and_then(|v| self.grad(*v))
    }

    /// Parameters bound into this graph.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(p, v)| (*p, *v))
    }

    /// Nodes visited by the last backward pass, in visiting order.
    pub fn visit_order(&self) -> &[Var] {
        &self.visit_order
    }

    /// Discrete branch decisions taken during the forward pass: relu activity
    /// and top-k selections. Two forwards with equal signatures lie on the same
    /// smooth piece of the function.
    pub fn decision_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => sig.extend(self.nodes[a.0].value.data().iter().map(|&x| u64::from(x > 0.0))),
                Op::TopK { indices, .. } => sig.extend(indices.iter().map(|&i| i as u64)),
                _ => {}
            }
        }
        sig
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect()).expect("shape")
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(TensorError::Parameter { op, message: format!("expected a matrix, got shape {s:?}") }),
        }
    }

    fn vector_len(&self, op: &'static str, v: Var) -> Result<usize> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(TensorError::Parameter { op, message: format!("expected a vector, got shape {s:?}") }),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.map(a, |x| x * factor);
        self.push(t, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.push(t, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::exp);
        self.push(t, Op::Exp(a))
    }

    /// `[m × k] · [k × n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::matrix(m, n, data)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let t = Tensor::matrix(n, m, transpose_raw(self.value(a).data(), m, n))?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    /// Adds vector `v` (length C) to every row of `a` (R × C).
    pub fn add_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("add_row", a)?;
        let n = self.vector_len("add_row", v)?;
        if n != c {
            return Err(shape_err("add_row", self.shape(a), self.shape(v)));
        }
        let vv = self.value(v).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            data[i * c..(i + 1) * c].iter_mut().zip(&vv).for_each(|(x, b)| *x += b);
        }
        let t = Tensor::matrix(r, c, data)?;
        Ok(self.push(t, Op::AddRow(a, v)))
    }

    /// Repeats vector `v` as `rows` identical rows.
    pub fn row_broadcast(&mut self, v: Var, rows: usize) -> Result<Var> {
        let c = self.vector_len("row_broadcast", v)?;
        if rows == 0 {
            return Err(TensorError::Parameter { op: "row_broadcast", message: "rows must be positive".into() });
        }
        let data = self.value(v).data().repeat(rows);
        let t = Tensor::matrix(rows, c, data)?;
        Ok(self.push(t, Op::RowBroadcast(v)))
    }

    /// Dense projection `x · w + b` for `x` of shape R × I.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// 1D convolution over the rows of `input` (L × C_in) with kernels
    /// W × C_in × C_out.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let (len, c_in) = self.matrix_dims("conv1d", input)?;
        let (width, k_in, c_out) = match self.shape(kernel) {
            [w, ci, co] => (*w, *ci, *co),
            s => return Err(shape_err("conv1d", &[len, c_in], s)),
        };
        if k_in != c_in {
            return Err(shape_err("conv1d", self.shape(input), self.shape(kernel)));
        }
        if self.vector_len("conv1d", bias)? != c_out {
            return Err(shape_err("conv1d", self.shape(kernel), self.shape(bias)));
        }
        let (pl, pr) = padding.amounts(width);
        if width > len + pl + pr {
            return Err(TensorError::Parameter {
                op: "conv1d",
                message: format!("kernel width {width} exceeds padded length {}", len + pl + pr),
            });
        }
        let out_len = len + pl + pr - width + 1;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = Vec::with_capacity(out_len * c_out);
        for _ in 0..out_len {
            out.extend_from_slice(b);
        }
        for i in 0..out_len {
            for w in 0..width {
                let src = (i + w) as isize - pl as isize;
                if src < 0 || src as usize >= len {
                    continue;
                }
                let xrow = &x[src as usize * c_in..(src as usize + 1) * c_in];
                let orow = &mut out[i * c_out..(i + 1) * c_out];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &k[(w * c_in + c) * c_out..(w * c_in + c + 1) * c_out];
                    orow.iter_mut().zip(krow).for_each(|(o, kv)| *o += xv * kv);
                }
            }
        }
        let t = Tensor::matrix(out_len, c_out, out)?;
        Ok(self.push(t, Op::Conv1d { input, kernel, bias, pad_left: pl }))
    }

    /// Transposed 1D convolution: input L × C_in, kernels W × C_out × C_in,
    /// output `(L - 1)·stride + W` rows. Scatter-adds input-scaled kernels.
    pub fn conv_transpose1d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(TensorError::Parameter { op: "conv_transpose1d", message: "stride must be ≥ 1".into() });
        }
        let (len, c_in) = self.matrix_dims("conv_transpose1d", input)?;
        let (width, c_out, k_in) = match self.shape(kernel) {
            [w, co, ci] => (*w, *co, *ci),
            s => return Err(shape_err("conv_transpose1d", &[len, c_in], s)),
        };
        if k_in != c_in {
            return Err(shape_err("conv_transpose1d", self.shape(input), self.shape(kernel)));
        }
        if self.vector_len("conv_transpose1d", bias)? != c_out {
            return Err(shape_err("conv_transpose1d", self.shape(kernel), self.shape(bias)));
        }
        let out_len = (len - 1) * stride + width;
        let y = self.value(input).data();
        let k = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = Vec::with_capacity(out_len * c_out);
        for _ in 0..out_len {
            out.extend_from_slice(b);
        }
        for i in 0..len {
            let yrow = &y[i * c_in..(i + 1) * c_in];
            for w in 0..width {
                let t = i * stride + w;
                for co in 0..c_out {
                    let krow = &k[(w * c_out + co) * c_in..(w * c_out + co + 1) * c_in];
                    out[t * c_out + co] += yrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let t = Tensor::matrix(out_len, c_out, out)?;
        Ok(self.push(t, Op::ConvTranspose1d { input, kernel, bias, stride }))
    }

    /// Per-column top-k of an L × C map. Returns the k × C values, largest
    /// first, and the k × C source row indices (row-major). Ties go to the
    /// smaller row index.
    pub fn topk_per_channel(&mut self, input: Var, k: usize) -> Result<(Var, Vec<usize>)> {
        let (len, c) = self.matrix_dims("topk_per_channel", input)?;
        if k == 0 || k > len {
            return Err(TensorError::Parameter {
                op: "topk_per_channel",
                message: format!("k = {k} must satisfy 1 ≤ k ≤ L = {len}"),
            });
        }
        let x = self.value(input).data();
        let mut values = vec![0.0; k * c];
        let mut indices = vec![0usize; k * c];
        let mut order: Vec<usize> = Vec::with_capacity(len);
        for col in 0..c {
            order.clear();
            order.extend(0..len);
            order.sort_by(|&a, &b| x[b * c + col].total_cmp(&x[a * c + col]).then(a.cmp(&b)));
            for (r, &src) in order.iter().take(k).enumerate() {
                values[r * c + col] = x[src * c + col];
                indices[r * c + col] = src;
            }
        }
        let t = Tensor::matrix(k, c, values)?;
        let v = self.push(t, Op::TopK { input, indices: indices.clone() });
        Ok((v, indices))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let (r, c) = t.dims2();
        let mut data = t.data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        let t = Tensor::new(t.shape().to_vec(), data).expect("shape");
        self.push(t, Op::SoftmaxRows(input))
    }

    /// Normalizes over the last dimension, then applies `gain` and `shift`.
    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (r, d) = self.value(input).dims2();
        for p in [gain, shift] {
            if self.vector_len("layer_norm", p)? != d {
                return Err(shape_err("layer_norm", self.shape(input), self.shape(p)));
            }
        }
        let x = self.value(input).data();
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let mut normalized = vec![0.0; r * d];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                normalized[i * d + j] = xh;
                out[i * d + j] = xh * g[j] + s[j];
            }
        }
        let t = Tensor::new(self.shape(input).to_vec(), out)?;
        Ok(self.push(t, Op::LayerNorm { input, gain, shift, normalized, inv_std }))
    }

    /// Gathers rows of `table` (V × D). Rows looked up through `padding_idx`
    /// never receive gradient.
    pub fn embedding(&mut self, table: Var, tokens: &[usize], padding_idx: Option<usize>) -> Result<Var> {
        let (vocab, d) = self.matrix_dims("embedding", table)?;
        if tokens.is_empty() {
            return Err(TensorError::Parameter { op: "embedding", message: "empty token sequence".into() });
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(TensorError::Parameter {
                op: "embedding",
                message: format!("token {bad} out of range for vocabulary of {vocab}"),
            });
        }
        let tab = self.value(table).data();
        let mut data = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            data.extend_from_slice(&tab[t * d..(t + 1) * d]);
        }
        let t = Tensor::matrix(tokens.len(), d, data)?;
        Ok(self.push(t, Op::Embedding { table, tokens: tokens.to_vec(), padding_idx }))
    }

    /// Concatenates vectors end to end, or matrices along `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var> {
        let first =
            *inputs.first().ok_or_else(|| TensorError::Parameter { op: "concat", message: "no inputs".into() })?;
        let rank = self.shape(first).len();
        let t = if rank == 1 {
            let mut data = Vec::new();
            for &v in inputs {
                self.vector_len("concat", v)?;
                data.extend_from_slice(self.value(v).data());
            }
            let n = data.len();
            Tensor::new(vec![n], data)?
        } else {
            let (r0, c0) = self.matrix_dims("concat", first)?;
            for &v in inputs {
                let (r, c) = self.matrix_dims("concat", v)?;
                let ok = match axis {
                    Axis::Rows => c == c0,
                    Axis::Cols => r == r0,
                };
                if !ok {
                    return Err(shape_err("concat", self.shape(first), self.shape(v)));
                }
            }
            match axis {
                Axis::Rows => {
                    let mut data = Vec::new();
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).data());
                    }
                    let rows = data.len() / c0;
                    Tensor::matrix(rows, c0, data)?
                }
                Axis::Cols => {
                    let cols: usize = inputs.iter().map(|&v| self.shape(v)[1]).sum();
                    let mut data = Vec::with_capacity(r0 * cols);
                    for i in 0..r0 {
                        for &v in inputs {
                            let c = self.shape(v)[1];
                            data.extend_from_slice(&self.value(v).data()[i * c..(i + 1) * c]);
                        }
                    }
                    Tensor::matrix(r0, cols, data)?
                }
            }
        };
        Ok(self.push(t, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Mean of a matrix along `axis`: `Rows` gives a length-C vector, `Cols` a
    /// length-R vector. A vector reduces to shape `[1]`.
    pub fn mean(&mut self, input: Var, axis: Axis) -> Var {
        let t = self.value(input);
        let (r, c) = t.dims2();
        let x = t.data();
        let out = if t.rank() == 1 {
            Tensor::scalar(x.iter().sum::<f64>() / x.len() as f64)
        } else {
            match axis {
                Axis::Rows => {
                    let mut m = vec![0.0; c];
                    for i in 0..r {
                        m.iter_mut().zip(&x[i * c..(i + 1) * c]).for_each(|(a, b)| *a += b);
                    }
                    m.iter_mut().for_each(|a| *a /= r as f64);
                    Tensor::vector(&m)
                }
                Axis::Cols => {
                    let m: Vec<f64> = (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64).collect();
                    Tensor::vector(&m)
                }
            }
        };
        self.push(out, Op::Mean { input, axis })
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean_all(&mut self, input: Var) -> Var {
        let n = self.value(input).len() as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// Inverted dropout. Identity (no node recorded) when `rng` is `None` or
    /// the rate is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Parameter { op: "dropout", message: format!("rate {rate} outside [0, 1)") });
        }
        let rng = match rng {
            Some(r) if rate > 0.0 => r,
            _ => return Ok(input),
        };
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(input).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let t = self.value(input);
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { input, mask }))
    }

    /// Columns `start .. start + len` of a matrix.
    pub fn slice_cols(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims("slice_cols", input)?;
        if len == 0 || start + len > c {
            return Err(TensorError::Parameter {
                op: "slice_cols",
                message: format!("columns {start}..{} out of range for {c}", start + len),
            });
        }
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        let t = Tensor::matrix(r, len, data)?;
        Ok(self.push(t, Op::SliceCols { input, start }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(input)))
    }

    /// Mean squared error between two equal-length vectors, shape `[1]`.
    pub fn mse_loss(&mut self, predicted: Var, observed: Var) -> Result<Var> {
        let d = self.sub(predicted, observed)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Populates gradients of `loss` with respect to every grad-enabled node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::Contract("backward already ran on this record; run a new forward first".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        self.visit_order.clear();
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.visit_order.push(Var(i));
            backprop(nodes, grads, node, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| nodes[v.0].value.data();
    let needs = |v: Var| nodes[v.0].requires_grad;
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if needs(v) {
                    accumulate(grads, v, g);
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g);
            }
            if needs(*b) {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(grads, *b, &neg);
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let c: Vec<f64> = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                accumulate(grads, *a, &c);
            }
            if needs(*b) {
                let c: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                accumulate(grads, *b, &c);
            }
        }
        Op::Scale(a, f) => {
            let c: Vec<f64> = g.iter().map(|x| x * f).collect();
            accumulate(grads, *a, &c);
        }
        Op::Sigmoid(a) => {
            let c: Vec<f64> = g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect();
            accumulate(grads, *a, &c);
        }
        Op::Relu(a) => {
            let c: Vec<f64> = g.iter().zip(val(*a)).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
            accumulate(grads, *a, &c);
        }
        Op::Exp(a) => {
            let c: Vec<f64> = g.iter().zip(out).map(|(g, e)| g * e).collect();
            accumulate(grads, *a, &c);
        }
        Op::MatMul(a, b) => {
            let (m, k) = nodes[a.0].value.dims2();
            let n = nodes[b.0].value.dims2().1;
            if needs(*a) {
                let bt = transpose_raw(val(*b), k, n);
                accumulate(grads, *a, &matmul_raw(g, &bt, m, n, k));
            }
            if needs(*b) {
                let at = transpose_raw(val(*a), m, k);
                accumulate(grads, *b, &matmul_raw(&at, g, k, m, n));
            }
        }
        Op::Transpose(a) => {
            let (m, n) = nodes[a.0].value.dims2();
            accumulate(grads, *a, &transpose_raw(g, n, m));
        }
        Op::AddRow(a, v) => {
            if needs(*a) {
                accumulate(grads, *a, g);
            }
            if needs(*v) {
                let (r, c) = node.value.dims2();
                accumulate(grads, *v, &column_sums(g, r, c));
            }
        }
        Op::RowBroadcast(v) => {
            let (r, c) = node.value.dims2();
            accumulate(grads, *v, &column_sums(g, r, c));
        }
        Op::Conv1d { input, kernel, bias, pad_left } => {
            let (len, c_in) = nodes[input.0].value.dims2();
            let kshape = nodes[kernel.0].value.shape();
            let (width, c_out) = (kshape[0], kshape[2]);
            let out_len = node.value.dims2().0;
            let x = val(*input);
            let k = val(*kernel);
            let mut gx = vec![0.0; x.len()];
            let mut gk = vec![0.0; k.len()];
            for i in 0..out_len {
                let grow = &g[i * c_out..(i + 1) * c_out];
                for w in 0..width {
                    let src = (i + w) as isize - *pad_left as isize;
                    if src < 0 || src as usize >= len {
                        continue;
                    }
                    let src = src as usize;
                    for c in 0..c_in {
                        let kbase = (w * c_in + c) * c_out;
                        let krow = &k[kbase..kbase + c_out];
                        gx[src * c_in + c] += grow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                        let xv = x[src * c_in + c];
                        if xv != 0.0 {
                            gk[kbase..kbase + c_out].iter_mut().zip(grow).for_each(|(a, b)| *a += xv * b);
                        }
                    }
                }
            }
            if needs(*input) {
                accumulate(grads, *input, &gx);
            }
            if needs(*kernel) {
                accumulate(grads, *kernel, &gk);
            }
            if needs(*bias) {
                accumulate(grads, *bias, &column_sums(g, out_len, c_out));
            }
        }
        Op::ConvTranspose1d { input, kernel, bias, stride } => {
            let (len, c_in) = nodes[input.0].value.dims2();
            let kshape = nodes[kernel.0].value.shape();
            let (width, c_out) = (kshape[0], kshape[1]);
            let out_len = node.value.dims2().0;
            let y = val(*input);
            let k = val(*kernel);
            let mut gy = vec![0.0; y.len()];
            let mut gk = vec![0.0; k.len()];
            for i in 0..len {
                let yrow = &y[i * c_in..(i + 1) * c_in];
                for w in 0..width {
                    let t = i * stride + w;
                    for co in 0..c_out {
                        let go = g[t * c_out + co];
                        if go == 0.0 {
                            continue;
                        }
                        let kbase = (w * c_out + co) * c_in;
                        let krow = &k[kbase..kbase + c_in];
                        gy[i * c_in..(i + 1) * c_in].iter_mut().zip(krow).for_each(|(a, b)| *a += go * b);
                        gk[kbase..kbase + c_in].iter_mut().zip(yrow).for_each(|(a, b)| *a += go * b);
                    }
                }
            }
            if needs(*input) {
                accumulate(grads, *input, &gy);
            }
            if needs(*kernel) {
                accumulate(grads, *kernel, &gk);
            }
            if needs(*bias) {
                accumulate(grads, *bias, &column_sums(g, out_len, c_out));
            }
        }
        Op::TopK { input, indices } => {
            let c = node.value.dims2().1;
            let mut gx = vec![0.0; nodes[input.0].value.len()];
            for (pos, &src) in indices.iter().enumerate() {
                gx[src * c + pos % c] += g[pos];
            }
            accumulate(grads, *input, &gx);
        }
        Op::SoftmaxRows(a) => {
            let (r, c) = node.value.dims2();
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let s = &out[i * c..(i + 1) * c];
                let gr = &g[i * c..(i + 1) * c];
                let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    gx[i * c + j] = s[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, *a, &gx);
        }
        Op::LayerNorm { input, gain, shift, normalized, inv_std } => {
            let (r, d) = node.value.dims2();
            let gn = val(*gain);
            if needs(*gain) {
                let mut gg = vec![0.0; d];
                for i in 0..r {
                    for j in 0..d {
                        gg[j] += g[i * d + j] * normalized[i * d + j];
                    }
                }
                accumulate(grads, *gain, &gg);
            }
            if needs(*shift) {
                accumulate(grads, *shift, &column_sums(g, r, d));
            }
            if needs(*input) {
                let mut gx = vec![0.0; r * d];
                for i in 0..r {
                    let xh = &normalized[i * d..(i + 1) * d];
                    let gxh: Vec<f64> = (0..d).map(|j| g[i * d + j] * gn[j]).collect();
                    let s1: f64 = gxh.iter().sum();
                    let s2: f64 = gxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let scale = inv_std[i] / d as f64;
                    for j in 0..d {
                        gx[i * d + j] = scale * (d as f64 * gxh[j] - s1 - xh[j] * s2);
                    }
                }
                accumulate(grads, *input, &gx);
            }
        }
        Op::Embedding { table, tokens, padding_idx } => {
            let d = nodes[table.0].value.dims2().1;
            let mut gt = vec![0.0; nodes[table.0].value.len()];
            for (i, &t) in tokens.iter().enumerate() {
                if Some(t) == *padding_idx {
                    continue;
                }
                gt[t * d..(t + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(a, b)| *a += b);
            }
            accumulate(grads, *table, &gt);
        }
        Op::Concat { inputs, axis } => {
            if node.value.rank() == 1 || *axis == Axis::Rows {
                let mut offset = 0;
                for &v in inputs {
                    let n = nodes[v.0].value.len();
                    if needs(v) {
                        accumulate(grads, v, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            } else {
                let (r, total) = node.value.dims2();
                let mut offset = 0;
                for &v in inputs {
                    let c = nodes[v.0].value.dims2().1;
                    if needs(v) {
                        let mut part = Vec::with_capacity(r * c);
                        for i in 0..r {
                            part.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                        }
                        accumulate(grads, v, &part);
                    }
                    offset += c;
                }
            }
        }
        Op::Mean { input, axis } => {
            let t = &nodes[input.0].value;
            let (r, c) = t.dims2();
            let gx: Vec<f64> = if t.rank() == 1 {
                vec![g[0] / t.len() as f64; t.len()]
            } else {
                match axis {
                    Axis::Rows => (0..r * c).map(|idx| g[idx % c] / r as f64).collect(),
                    Axis::Cols => (0..r * c).map(|idx| g[idx / c] / c as f64).collect(),
                }
            };
            accumulate(grads, *input, &gx);
        }
        Op::Sum(a) => {
            let n = nodes[a.0].value.len();
            accumulate(grads, *a, &vec![g[0]; n]);
        }
        Op::Dropout { input, mask } => {
            let c: Vec<f64> = g.iter().zip(mask).map(|(a, b)| a * b).collect();
            accumulate(grads, *input, &c);
        }
        Op::SliceCols { input, start } => {
            let (r, c) = nodes[input.0].value.dims2();
            let len = node.value.dims2().1;
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
            }
            accumulate(grads, *input, &gx);
        }
        Op::Reshape(a) => accumulate(grads, *a, g),
    }
}

fn column_sums(g: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut s = vec![0.0; c];
    for i in 0..r {
        s.iter_mut().zip(&g[i * c..(i + 1) * c]).for_each(|(a, b)| *a += b);
    }
    s
}
