use super::{AdError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Affine(usize, f64),
    MulConst(usize, Vec<f64>),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    SumSquares(usize),
    Concat(Vec<usize>),
    Slice {
        x: usize,
        start: usize,
    },
    Reshape(usize),
    Conv1d {
        x: usize,
        w: usize,
        dilation: usize,
    },
    TimeSlice {
        x: usize,
        start: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Affine(a, _)
            | Op::MulConst(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumSquares(a)
            | Op::Reshape(a) => vec![*a],
            Op::Slice { x, .. } | Op::TimeSlice { x, .. } => vec![*x],
            Op::Concat(parts) => parts.clone(),
            Op::Conv1d { x, w, .. } => vec![*x, *w],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of a dynamic computation graph.
///
/// Every operation evaluates eagerly and appends a node whose parents were
/// recorded earlier, so recording order is a topological order. `backward`
/// walks that order in reverse exactly once and adds the result into the
/// gradient accumulators of the leaves that require gradients. Accumulators
/// persist across `backward` calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(usize, ParamId)>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), AdError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(AdError::NonFinite { op, index }),
        None => Ok(()),
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
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

    fn node(&self, v: Var) -> Result<&Node, AdError> {
        self.nodes.get(v.0).ok_or(AdError::UnknownVar(v.0))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Parent indices of a recorded node.
    pub fn parents(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].op.parents()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, name: &'static str) -> Result<Var, AdError> {
        check_finite(name, &data)?;
        let requires_grad = op.parents().iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value: Tensor::raw(shape, data),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable parameter as a gradient-carrying leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let trainable = store.is_trainable(id);
        let v = self.leaf(store.value(id).clone(), trainable);
        if trainable {
            self.bindings.push((v.0, id));
        }
        v
    }

    /// Number of parameter leaves recorded through [`Tape::param`].
    pub fn bound_params(&self) -> usize {
        self.bindings.len()
    }

    /// Copies `v` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.leaf(value, false)
    }

    fn binary_same(&self, name: &'static str, a: Var, b: Var) -> Result<(), AdError> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(AdError::ShapeMismatch {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// `a[.., k] · b[k, n]`, treating all leading axes of `a` as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
        let out = matmul_kernel(av.data(), bv.data(), m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(shape, out, Op::MatMul(a.0, b.0), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary_same("add", a, b)?;
        let data = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(shape, data, Op::Add(a.0, b.0), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary_same("sub", a, b)?;
        let data = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(shape, data, Op::Sub(a.0, b.0), "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary_same("mul", a, b)?;
        let data = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(shape, data, Op::Mul(a.0, b.0), "mul")
    }

    fn row_check(&self, name: &'static str, x: Var, row: Var) -> Result<(), AdError> {
        let (xv, rv) = (&self.node(x)?.value, &self.node(row)?.value);
        if rv.len() != xv.cols() {
            return Err(AdError::ShapeMismatch {
                op: name,
                lhs: xv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Adds a length-`n` row to every row of `x[.., n]` (bias broadcast).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, AdError> {
        self.row_check("add_row", x, row)?;
        let (xv, rv) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        let n = rv.len();
        let data: Vec<f64> = xv.data().iter().enumerate().map(|(i, v)| v + rv.data()[i % n]).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, data, Op::AddRow(x.0, row.0), "add_row")
    }

    /// Scales every row of `x[.., n]` elementwise by a length-`n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, AdError> {
        self.row_check("mul_row", x, row)?;
        let (xv, rv) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        let n = rv.len();
        let data: Vec<f64> = xv.data().iter().enumerate().map(|(i, v)| v * rv.data()[i % n]).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, data, Op::MulRow(x.0, row.0), "mul_row")
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|v| scale * v + shift).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, data, Op::Affine(x.0, scale), "affine")
    }

    /// Elementwise product with a constant array (dropout masks, fixed scales).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        if factors.len() != xv.len() {
            return Err(AdError::ShapeMismatch {
                op: "mul_const",
                lhs: xv.shape().to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let data = xv.data().iter().zip(&factors).map(|(v, f)| v * f).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, data, Op::MulConst(x.0, factors), "mul_const")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|v| v.tanh()).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, data, Op::Tanh(x.0), "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, data, Op::Sigmoid(x.0), "sigmoid")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|v| v.max(0.0)).collect();
        let shape = xv.shape().to_vec();
        self.push(shape, data, Op::Relu(x.0), "relu")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.node(x)?.value.data().iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x.0), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(x.0), "mean")
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.node(x)?.value.sum_squares();
        self.push(vec![1], vec![s], Op::SumSquares(x.0), "sum_squares")
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let first = parts.first().ok_or(AdError::Invalid("concat of nothing".into()))?;
        let lead = self.node(*first)?.value.shape().split_last().unwrap().1.to_vec();
        let mut cols = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.node(*p)?.value.shape();
            if s.split_last().unwrap().1 != lead.as_slice() {
                return Err(AdError::ShapeMismatch {
                    op: "concat",
                    lhs: lead.clone(),
                    rhs: s.to_vec(),
                });
            }
            cols.push(*s.last().unwrap());
        }
        let total: usize = cols.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &c) in parts.iter().zip(&cols) {
                data.extend_from_slice(&self.nodes[p.0].value.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(shape, data, Op::Concat(parts.iter().map(|v| v.0).collect()), "concat")
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        let c = xv.cols();
        if len == 0 || start + len > c {
            return Err(AdError::Invalid(format!("slice {start}..{} of {c} columns", start + len)));
        }
        let data = (0..xv.rows()).flat_map(|r| xv.data()[r * c + start..r * c + start + len].iter().copied()).collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(shape, data, Op::Slice { x: x.0, start }, "slice")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        if shape.iter().product::<usize>() != xv.len() || shape.contains(&0) {
            return Err(AdError::ShapeMismatch {
                op: "reshape",
                lhs: xv.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = xv.data().to_vec();
        self.push(shape.to_vec(), data, Op::Reshape(x.0), "reshape")
    }

    /// Positions `start..start + len` along axis 1 of `x[b, T, C]`.
    pub fn time_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let xv = &self.node(x)?.value;
        let s = xv.shape();
        if s.len() != 3 || len == 0 || start + len > s[1] {
            return Err(AdError::Invalid(format!("time_slice {start}+{len} of {s:?}")));
        }
        let (b, t, c) = (s[0], s[1], s[2]);
        let mut data = Vec::with_capacity(b * len * c);
        for bi in 0..b {
            let base = bi * t * c;
            data.extend_from_slice(&xv.data()[base + start * c..base + (start + len) * c]);
        }
        self.push(vec![b, len, c], data, Op::TimeSlice { x: x.0, start }, "time_slice")
    }

    /// Causal dilated convolution of `x[b, T, C_in]` with `w[k, C_in, C_out]`.
    ///
    /// `out[b, t, o] = sum_j sum_c x[b, t - d*j, c] * w[j, c, o]`, where
    /// positions before zero read as zero. Output length equals input length.
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var, AdError> {
        let (xv, wv) = (&self.node(x)?.value, &self.node(w)?.value);
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] {
            return Err(AdError::ShapeMismatch {
                op: "conv1d",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if dilation == 0 {
            return Err(AdError::Invalid("dilation must be >= 1".into()));
        }
        let (b, t, cin) = (xs[0], xs[1], xs[2]);
        let (k, cout) = (ws[0], ws[2]);
        let (xd, wd) = (xv.data(), wv.data());
        let mut out = vec![0.0; b * t * cout];
        for bi in 0..b {
            for ti in 0..t {
                let o = &mut out[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                for j in 0..k {
                    let Some(src) = ti.checked_sub(dilation * j) else { break };
                    let xrow = &xd[(bi * t + src) * cin..(bi * t + src + 1) * cin];
                    for (c, &xval) in xrow.iter().enumerate() {
                        if xval == 0.0 {
                            continue;
                        }
                        let wrow = &wd[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                        for (ov, wv) in o.iter_mut().zip(wrow) {
                            *ov += xval * wv;
                        }
                    }
                }
            }
        }
        self.push(vec![b, t, cout], out, Op::Conv1d { x: x.0, w: w.0, dilation }, "conv1d")
    }

    /// Batch normalization over the rows of `x[m, n]` using batch statistics.
    ///
    /// Returns the normalized output together with the per-column batch mean
    /// and biased variance, which callers fold into running statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>), AdError> {
        self.row_check("batch_norm", x, gamma)?;
        self.row_check("batch_norm", x, beta)?;
        let xv = &self.nodes[x.0].value;
        let (m, n) = (xv.rows(), xv.cols());
        let xd = xv.data();
        let mut mean = vec![0.0; n];
        for r in 0..m {
            for c in 0..n {
                mean[c] += xd[r * n + c];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; n];
        for r in 0..m {
            for c in 0..n {
                let d = xd[r * n + c] - mean[c];
                var[c] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat: Vec<f64> = (0..m * n).map(|i| (xd[i] - mean[i % n]) * inv_std[i % n]).collect();
        let (g, bt) = (self.nodes[gamma.0].value.data(), self.nodes[beta.0].value.data());
        let out = (0..m * n).map(|i| g[i % n] * xhat[i] + bt[i % n]).collect();
        let shape = xv.shape().to_vec();
        let v = self.push(
            shape,
            out,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            "batch_norm",
        )?;
        Ok((v, mean, var))
    }

    /// Reverse pass from `output` with upstream gradient `seed`.
    ///
    /// Adds `d(output . seed)/d(leaf)` into the accumulator of every leaf
    /// that requires gradients.
    pub fn backward(&mut self, output: Var, seed: &Tensor) -> Result<(), AdError> {
        let out_shape = self.node(output)?.value.shape();
        if out_shape != seed.shape() {
            return Err(AdError::ShapeMismatch {
                op: "backward seed",
                lhs: out_shape.to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed.data().to_vec());
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(Tensor::raw(node.value.shape().to_vec(), g)),
                }
                continue;
            }
            propagate(&self.nodes, i, &g, &mut adj);
        }
        Ok(())
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward_scalar(&mut self, output: Var) -> Result<(), AdError> {
        let shape = self.node(output)?.value.shape().to_vec();
        self.backward(output, &Tensor::full(&shape, 1.0))
    }

    /// Adds the accumulated gradients of bound parameters into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, id) in &self.bindings {
            if let Some(Some(g)) = self.grads.get(node) {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (ov, bv) in o.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *ov += av * bv;
            }
        }
    }
    out
}

fn add_to(adj: &mut [Option<Vec<f64>>], nodes: &[Node], p: usize, contrib: impl FnOnce() -> Vec<f64>) {
    if !nodes[p].requires_grad {
        return;
    }
    let c = contrib();
    match &mut adj[p] {
        Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(c),
    }
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let val = |p: usize| nodes[p].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
            add_to(adj, nodes, *a, || {
                let mut bt = vec![0.0; n * k];
                for p in 0..k {
                    for (j, &v) in bv.data()[p * n..(p + 1) * n].iter().enumerate() {
                        bt[j * k + p] = v;
                    }
                }
                matmul_kernel(g, &bt, m, n, k)
            });
            add_to(adj, nodes, *b, || {
                let mut d = vec![0.0; k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let a_rp = av.data()[r * k + p];
                        if a_rp == 0.0 {
                            continue;
                        }
                        for (dv, gv) in d[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *dv += a_rp * gv;
                        }
                    }
                }
                d
            });
        }
        Op::Add(a, b) => {
            add_to(adj, nodes, *a, || g.to_vec());
            add_to(adj, nodes, *b, || g.to_vec());
        }
        Op::Sub(a, b) => {
            add_to(adj, nodes, *a, || g.to_vec());
            add_to(adj, nodes, *b, || g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            add_to(adj, nodes, *a, || g.iter().zip(val(*b)).map(|(x, y)| x * y).collect());
            add_to(adj, nodes, *b, || g.iter().zip(val(*a)).map(|(x, y)| x * y).collect());
        }
        Op::AddRow(x, r) => {
            add_to(adj, nodes, *x, || g.to_vec());
            let n = nodes[*r].value.len();
            add_to(adj, nodes, *r, || {
                let mut d = vec![0.0; n];
                g.iter().enumerate().for_each(|(i, v)| d[i % n] += v);
                d
            });
        }
        Op::MulRow(x, r) => {
            let n = nodes[*r].value.len();
            let (xd, rd) = (val(*x), val(*r));
            add_to(adj, nodes, *x, || g.iter().enumerate().map(|(i, v)| v * rd[i % n]).collect());
            add_to(adj, nodes, *r, || {
                let mut d = vec![0.0; n];
                g.iter().enumerate().for_each(|(i, v)| d[i % n] += v * xd[i]);
                d
            });
        }
        Op::Affine(x, scale) => add_to(adj, nodes, *x, || g.iter().map(|v| v * scale).collect()),
        Op::MulConst(x, f) => add_to(adj, nodes, *x, || g.iter().zip(f).map(|(v, c)| v * c).collect()),
        Op::Tanh(x) => {
            let y = node.value.data();
            add_to(adj, nodes, *x, || g.iter().zip(y).map(|(v, t)| v * (1.0 - t * t)).collect());
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            add_to(adj, nodes, *x, || g.iter().zip(y).map(|(v, s)| v * s * (1.0 - s)).collect());
        }
        Op::Relu(x) => {
            let xd = val(*x);
            add_to(adj, nodes, *x, || g.iter().zip(xd).map(|(v, &a)| if a > 0.0 { *v } else { 0.0 }).collect());
        }
        Op::Sum(x) => {
            let n = nodes[*x].value.len();
            add_to(adj, nodes, *x, || vec![g[0]; n]);
        }
        Op::Mean(x) => {
            let n = nodes[*x].value.len();
            add_to(adj, nodes, *x, || vec![g[0] / n as f64; n]);
        }
        Op::SumSquares(x) => add_to(adj, nodes, *x, || val(*x).iter().map(|v| 2.0 * v * g[0]).collect()),
        Op::Concat(parts) => {
            let total = node.value.cols();
            let rows = node.value.rows();
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p].value.cols();
                add_to(adj, nodes, p, || {
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                    }
                    d
                });
                offset += c;
            }
        }
        Op::Slice { x, start } => {
            let c = nodes[*x].value.cols();
            let len = node.value.cols();
            let rows = node.value.rows();
            add_to(adj, nodes, *x, || {
                let mut d = vec![0.0; rows * c];
                for r in 0..rows {
                    d[r * c + start..r * c + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                d
            });
        }
        Op::Reshape(x) => add_to(adj, nodes, *x, || g.to_vec()),
        Op::TimeSlice { x, start } => {
            let s = nodes[*x].value.shape();
            let (b, t, c) = (s[0], s[1], s[2]);
            let len = node.value.shape()[1];
            add_to(adj, nodes, *x, || {
                let mut d = vec![0.0; b * t * c];
                for bi in 0..b {
                    let dst = bi * t * c + start * c;
                    d[dst..dst + len * c].copy_from_slice(&g[bi * len * c..(bi + 1) * len * c]);
                }
                d
            });
        }
        Op::Conv1d { x, w, dilation } => {
            let (xv, wv) = (&nodes[*x].value, &nodes[*w].value);
            let (b, t, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let (k, cout) = (wv.shape()[0], wv.shape()[2]);
            let (xd, wd) = (xv.data(), wv.data());
            add_to(adj, nodes, *x, || {
                let mut d = vec![0.0; b * t * cin];
                for bi in 0..b {
                    for ti in 0..t {
                        let grow = &g[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                        for j in 0..k {
                            let Some(src) = ti.checked_sub(dilation * j) else { break };
                            for c in 0..cin {
                                let wrow = &wd[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                                d[(bi * t + src) * cin + c] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
                d
            });
            add_to(adj, nodes, *w, || {
                let mut d = vec![0.0; k * cin * cout];
                for bi in 0..b {
                    for ti in 0..t {
                        let grow = &g[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
                        for j in 0..k {
                            let Some(src) = ti.checked_sub(dilation * j) else { break };
                            for c in 0..cin {
                                let xval = xd[(bi * t + src) * cin + c];
                                if xval == 0.0 {
                                    continue;
                                }
                                let drow = &mut d[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                                for (dv, gv) in drow.iter_mut().zip(grow) {
                                    *dv += xval * gv;
                                }
                            }
                        }
                    }
                }
                d
            });
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let n = inv_std.len();
            let m = xhat.len() / n;
            let gd = val(*gamma);
            add_to(adj, nodes, *gamma, || {
                let mut d = vec![0.0; n];
                g.iter().zip(xhat).enumerate().for_each(|(i, (v, h))| d[i % n] += v * h);
                d
            });
            add_to(adj, nodes, *beta, || {
                let mut d = vec![0.0; n];
                g.iter().enumerate().for_each(|(i, v)| d[i % n] += v);
                d
            });
            add_to(adj, nodes, *x, || {
                let mut sum_dh = vec![0.0; n];
                let mut sum_dh_h = vec![0.0; n];
                for i in 0..m * n {
                    let dh = g[i] * gd[i % n];
                    sum_dh[i % n] += dh;
                    sum_dh_h[i % n] += dh * xhat[i];
                }
                let mf = m as f64;
                (0..m * n)
                    .map(|i| {
                        let c = i % n;
                        let dh = g[i] * gd[c];
                        inv_std[c] / mf * (mf * dh - sum_dh[c] - xhat[i] * sum_dh_h[c])
                    })
                    .collect()
            });
        }
    }
}
