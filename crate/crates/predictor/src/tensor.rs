//! Dense vectors, named parameter matrices and a small reverse-mode tape.
//!
//! Every value on the tape is a vector; matrices only appear as parameters
//! (`matvec` and `lookup`). That covers everything the predictor needs.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("lookup of row {row} in {param} with {rows} rows")]
    Row {
        param: String,
        row: usize,
        rows: usize,
    },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Glorot-uniform.
    Weight,
    /// Zeros.
    Bias,
    /// Uniform in +-0.01.
    Embedding,
}

impl ParamKind {
    pub fn tag(self) -> u8 {
        match self {
            ParamKind::Weight => 0,
            ParamKind::Bias => 1,
            ParamKind::Embedding => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<ParamKind> {
        match tag {
            0 => Some(ParamKind::Weight),
            1 => Some(ParamKind::Bias),
            2 => Some(ParamKind::Embedding),
            _ => None,
        }
    }
}

/// Row-major matrix; vectors are `rows x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    pub data: Vec<f64>,
}

impl Param {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Registers a zero-filled parameter.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        kind: ParamKind,
    ) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            rows,
            cols,
            kind,
            data: vec![0.0; rows * cols],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn push(&mut self, param: Param) -> ParamId {
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn initialize<R: Rng>(&mut self, rng: &mut R) {
        for p in &mut self.params {
            match p.kind {
                ParamKind::Bias => p.data.fill(0.0),
                ParamKind::Embedding => p
                    .data
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-0.01..=0.01)),
                ParamKind::Weight => {
                    let bound = (6.0 / (p.rows + p.cols) as f64).sqrt();
                    p.data
                        .iter_mut()
                        .for_each(|v| *v = rng.gen_range(-bound..=bound));
                }
            }
        }
    }

    pub fn zeros_like(&self) -> Grads {
        Grads {
            data: self
                .params
                .iter()
                .map(|p| vec![0.0; p.data.len()])
                .collect(),
        }
    }
}

/// One buffer per parameter, shaped like the store it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|d| d.fill(0.0));
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().flatten().for_each(|g| *g *= k);
    }
}

/// Classical momentum with L2 applied as a gradient term:
/// `v = mu*v - eta*(g + lambda*theta)`, `theta += v`.
pub fn sgd_momentum_step(
    params: &mut ParamStore,
    grads: &Grads,
    velocity: &mut Grads,
    eta: f64,
    mu: f64,
    lambda: f64,
) {
    for ((p, g), v) in params
        .params
        .iter_mut()
        .zip(&grads.data)
        .zip(&mut velocity.data)
    {
        for ((theta, g), v) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = mu * *v - eta * (g + lambda * *theta);
            *theta += *v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Lookup(ParamId, usize),
    MatVec(ParamId, Var),
    Add(Vec<Var>),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Softmax(Var),
    WeightedSum(Var, Vec<Var>),
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

/// Records a forward computation against a read-only parameter store.
pub struct Graph<'a> {
    params: &'a ParamStore,
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

fn check_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
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

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamStore) -> Graph<'a> {
        Graph {
            params,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>, name: &'static str) -> Result<Var> {
        check_finite(name, &value)?;
        self.values.push(value);
        self.ops.push(op);
        Ok(Var(self.values.len() - 1))
    }

    fn dim(&self, v: Var) -> usize {
        self.values[v.0].len()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> Result<Var> {
        self.push(Op::Input, value, "input")
    }

    /// Whole parameter as a vector (biases, peepholes, pads).
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let value = self.params.get(id).data.clone();
        self.push(Op::Param(id), value, "param")
    }

    pub fn lookup(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let p = self.params.get(id);
        if row >= p.rows {
            return Err(TensorError::Row {
                param: p.name.clone(),
                row,
                rows: p.rows,
            });
        }
        let value = p.row(row).to_vec();
        self.push(Op::Lookup(id, row), value, "lookup")
    }

    pub fn matvec(&mut self, id: ParamId, x: Var) -> Result<Var> {
        let p = self.params.get(id);
        let xv = &self.values[x.0];
        if p.cols != xv.len() {
            return Err(TensorError::Shape {
                op: "matvec",
                left: (p.rows, p.cols),
                right: (xv.len(), 1),
            });
        }
        let value = (0..p.rows)
            .map(|r| p.row(r).iter().zip(xv).map(|(w, x)| w * x).sum())
            .collect();
        self.push(Op::MatVec(id, x), value, "matvec")
    }

    pub fn add(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::Usage("add of nothing".into()))?;
        let n = self.dim(first);
        let mut value = vec![0.0; n];
        for &x in xs {
            if self.dim(x) != n {
                return Err(TensorError::Shape {
                    op: "add",
                    left: (n, 1),
                    right: (self.dim(x), 1),
                });
            }
            value
                .iter_mut()
                .zip(&self.values[x.0])
                .for_each(|(a, b)| *a += b);
        }
        self.push(Op::Add(xs.to_vec()), value, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dim(a) != self.dim(b) {
            return Err(TensorError::Shape {
                op: "hadamard",
                left: (self.dim(a), 1),
                right: (self.dim(b), 1),
            });
        }
        let value = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), value, "hadamard")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.values[x.0].iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh(x), value, "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.values[x.0].iter().map(|&v| sigmoid(v)).collect();
        self.push(Op::Sigmoid(x), value, "sigmoid")
    }

    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let value = self.values[x.0].iter().map(|v| 1.0 - v).collect();
        self.push(Op::OneMinus(x), value, "one_minus")
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(TensorError::Usage("concat of nothing".into()));
        }
        let value = xs
            .iter()
            .flat_map(|x| self.values[x.0].iter().copied())
            .collect();
        self.push(Op::Concat(xs.to_vec()), value, "concat")
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.dim(x) {
            return Err(TensorError::Shape {
                op: "slice",
                left: (self.dim(x), 1),
                right: (start + len, 1),
            });
        }
        let value = self.values[x.0][start..start + len].to_vec();
        self.push(Op::Slice(x, start), value, "slice")
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = softmax(&self.values[x.0]);
        self.push(Op::Softmax(x), value, "softmax")
    }

    /// `sum_k w[k] * xs[k]`.
    pub fn weighted_sum(&mut self, w: Var, xs: &[Var]) -> Result<Var> {
        if self.dim(w) != xs.len() || xs.is_empty() {
            return Err(TensorError::Shape {
                op: "weighted_sum",
                left: (self.dim(w), 1),
                right: (xs.len(), 1),
            });
        }
        let n = self.dim(xs[0]);
        let mut value = vec![0.0; n];
        for (k, &x) in xs.iter().enumerate() {
            if self.dim(x) != n {
                return Err(TensorError::Shape {
                    op: "weighted_sum",
                    left: (n, 1),
                    right: (self.dim(x), 1),
                });
            }
            let wk = self.values[w.0][k];
            value
                .iter_mut()
                .zip(&self.values[x.0])
                .for_each(|(a, b)| *a += wk * b);
        }
        self.push(Op::WeightedSum(w, xs.to_vec()), value, "weighted_sum")
    }

    /// Negative log-likelihood of `target` under softmax(`logits`); the
    /// probabilities are available through [`Graph::probs`].
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var> {
        if target >= self.dim(logits) {
            return Err(TensorError::Shape {
                op: "softmax_xent",
                left: (self.dim(logits), 1),
                right: (target, 1),
            });
        }
        let probs = softmax(&self.values[logits.0]);
        let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
        self.push(
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
            vec![loss],
            "softmax_xent",
        )
    }

    pub fn probs(&self, loss: Var) -> Option<&[f64]> {
        match &self.ops[loss.0] {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse pass from a scalar; parameter gradients are added to `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Grads) -> Result<()> {
        if self.values.is_empty() {
            return Err(TensorError::Usage("backward before forward".into()));
        }
        if self.dim(loss) != 1 {
            return Err(TensorError::Shape {
                op: "backward",
                left: (self.dim(loss), 1),
                right: (1, 1),
            });
        }
        if grads.data.len() != self.params.len() {
            return Err(TensorError::Usage(
                "gradient buffer does not match parameters".into(),
            ));
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        adj[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let acc = |v: Var, idx: usize, d: f64, adj: &mut Vec<Vec<f64>>| {
                let slot = &mut adj[v.0];
                if slot.is_empty() {
                    *slot = vec![0.0; self.values[v.0].len()];
                }
                slot[idx] += d;
            };
            match &self.ops[i] {
                Op::Input => {}
                Op::Param(id) => grads.data[id.0]
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(a, b)| *a += b),
                Op::Lookup(id, row) => {
                    let cols = self.params.get(*id).cols;
                    grads.data[id.0][row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::MatVec(id, x) => {
                    let p = self.params.get(*id);
                    let xv = &self.values[x.0];
                    let gw = &mut grads.data[id.0];
                    let mut dx = vec![0.0; p.cols];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let wrow = p.row(r);
                        let grow = &mut gw[r * p.cols..(r + 1) * p.cols];
                        for c in 0..p.cols {
                            grow[c] += gr * xv[c];
                            dx[c] += gr * wrow[c];
                        }
                    }
                    for (c, d) in dx.into_iter().enumerate() {
                        acc(*x, c, d, &mut adj);
                    }
                }
                Op::Add(xs) => {
                    for &x in xs {
                        for (k, &d) in g.iter().enumerate() {
                            acc(x, k, d, &mut adj);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (k, &d) in g.iter().enumerate() {
                        let (av, bv) = (self.values[a.0][k], self.values[b.0][k]);
                        acc(*a, k, d * bv, &mut adj);
                        acc(*b, k, d * av, &mut adj);
                    }
                }
                Op::Tanh(x) => {
                    for (k, &d) in g.iter().enumerate() {
                        let y = self.values[i][k];
                        acc(*x, k, d * (1.0 - y * y), &mut adj);
                    }
                }
                Op::Sigmoid(x) => {
                    for (k, &d) in g.iter().enumerate() {
                        let y = self.values[i][k];
                        acc(*x, k, d * y * (1.0 - y), &mut adj);
                    }
                }
                Op::OneMinus(x) => {
                    for (k, &d) in g.iter().enumerate() {
                        acc(*x, k, -d, &mut adj);
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let n = self.dim(x);
                        for k in 0..n {
                            acc(x, k, g[off + k], &mut adj);
                        }
                        off += n;
                    }
                }
                Op::Slice(x, start) => {
                    for (k, &d) in g.iter().enumerate() {
                        acc(*x, start + k, d, &mut adj);
                    }
                }
                Op::Softmax(x) => {
                    let y = &self.values[i];
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    for k in 0..y.len() {
                        acc(*x, k, y[k] * (g[k] - dot), &mut adj);
                    }
                }
                Op::WeightedSum(w, xs) => {
                    for (k, &x) in xs.iter().enumerate() {
                        let xv = &self.values[x.0];
                        let dw: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                        acc(*w, k, dw, &mut adj);
                        let wk = self.values[w.0][k];
                        for (c, &d) in g.iter().enumerate() {
                            acc(x, c, wk * d, &mut adj);
                        }
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    target,
                    probs,
                } => {
                    for (k, &p) in probs.iter().enumerate() {
                        let t = if k == *target { 1.0 } else { 0.0 };
                        acc(*logits, k, g[0] * (p - t), &mut adj);
                    }
                }
            }
        }
        for g in &grads.data {
            check_finite("backward", g)?;
        }
        Ok(())
    }
}
