//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! Every operation appends one node; `backward` walks the nodes in reverse
//! and applies each node's local gradient rule exactly once. A tape lives
//! for one forward pass.

use std::collections::HashMap;
use std::rc::Rc;

use super::mask::BoolMatrix;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default negative slope for leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Epsilon added to the batch variance in batch normalization.
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu { slope: LEAKY_SLOPE }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Sums values in a fixed canonical order (ascending by total order), so
/// the result depends only on the multiset of terms.
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    PairwiseSum(Var, Var),
    MaskedSoftmax(Var, Rc<BoolMatrix>),
    Aggregate(Var, Var),
    RowGroupMean(Var, Vec<Vec<usize>>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Statistics produced by a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (biased when the batch has one row).
    pub var: Vec<f64>,
}

/// Recording tape. Parameters are borrowed read-only from a [`ParamStore`].
pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient for each parameter touched by the tape, in first-use order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].as_deref().map(|g| (*id, g)))
    }

    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (id, g) in self.params() {
            store.accumulate_grad(id, g)?;
        }
        Ok(())
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `acc += g * b^T` for g: m×n, b: k×n, acc: m×k.
fn acc_g_bt(acc: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (x, y) in grow.iter().zip(brow) {
                s += x * y;
            }
            acc[i * k + p] += s;
        }
    }
}

/// `acc += a^T * g` for a: m×k, g: m×n, acc: k×n.
fn acc_at_g(acc: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let arow = &mut acc[p * n..(p + 1) * n];
            for (o, gv) in arow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn log_softmax_row(row: &[f64]) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    (max, z.ln())
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// A tape that cannot reference parameters; used for standalone math.
    pub fn detached() -> Tape<'static> {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("parameter tape").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite output of {op:?}");
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (the tensor's own buffer is ignored).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let store = self.store.expect("param() requires a tape bound to a ParamStore");
        let trainable = store.is_trainable(id);
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param,
            requires_grad: trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_kernel(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).values();
        let out: Vec<f64> = self
            .value(a)
            .values()
            .chunks(n)
            .flat_map(|ch| ch.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.values().iter().map(|x| x * c).collect(),
        )
        .expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let t = self.value(a);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.values().iter().map(|&x| kind.apply(x)).collect(),
        )
        .expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Act(a, kind), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::shape("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p).values());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > m || len == 0 {
            return Err(Error::Index(format!(
                "slice_rows {start}..{} of {m} rows",
                start + len
            )));
        }
        let out = self.value(a).values()[start * n..(start + len) * n].to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(len, n, out), Op::SliceRows(a, start), rg))
    }

    /// Output row `i` is input row `indices[i]`; gradients scatter-add back.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Index(format!("row {bad} out of range for {m} rows")));
        }
        if indices.is_empty() {
            return Err(Error::Index("gather_rows with no indices".into()));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::matrix(indices.len(), n, out),
            Op::GatherRows(a, indices.to_vec()),
            rg,
        ))
    }

    /// `out[i][j] = col[i] + row[j]` for column vectors `col: n x 1`, `row: m x 1`.
    pub fn pairwise_sum(&mut self, col: Var, row: Var) -> Result<Var> {
        let c = self.value(col);
        let r = self.value(row);
        if c.cols() != 1 || r.cols() != 1 {
            return Err(Error::shape("pairwise_sum", c.shape(), r.shape()));
        }
        let (n, m) = (c.rows(), r.rows());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ci = c.values()[i];
            out.extend(r.values().iter().map(|rj| ci + rj));
        }
        let rg = self.any_grad(&[col, row]);
        Ok(self.push(Tensor::matrix(n, m, out), Op::PairwiseSum(col, row), rg))
    }

    /// Row-wise softmax restricted to the mask support. Masked-out entries
    /// are exactly zero and rows with an empty support are all zero.
    pub fn masked_row_softmax(&mut self, scores: Var, mask: Rc<BoolMatrix>) -> Result<Var> {
        let (m, n) = self.dims(scores);
        if (mask.rows(), mask.cols()) != (m, n) {
            return Err(Error::shape(
                "masked_row_softmax",
                self.shape(scores),
                &[mask.rows(), mask.cols()],
            ));
        }
        let s = self.value(scores);
        let mut out = vec![0.0; m * n];
        let mut buf = Vec::with_capacity(n);
        for i in 0..m {
            let row = s.row(i);
            let support: Vec<usize> = mask.row_support(i).collect();
            if support.is_empty() {
                continue;
            }
            let max = support
                .iter()
                .map(|&j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            buf.clear();
            buf.extend(support.iter().map(|&j| (row[j] - max).exp()));
            let mut terms = buf.clone();
            let z = canonical_sum(&mut terms);
            for (&j, e) in support.iter().zip(&buf) {
                out[i * n + j] = e / z;
            }
        }
        let rg = self.any_grad(&[scores]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MaskedSoftmax(scores, mask), rg))
    }

    /// `adj · y` with each inner product summed in canonical order over the
    /// nonzero entries of `adj`, so relabeling nodes permutes the result
    /// exactly.
    pub fn aggregate(&mut self, adj: Var, y: Var) -> Result<Var> {
        let (m, k) = self.dims(adj);
        let (k2, n) = self.dims(y);
        if k != k2 {
            return Err(Error::shape("aggregate", self.shape(adj), self.shape(y)));
        }
        let a = self.value(adj);
        let yv = self.value(y);
        let mut out = vec![0.0; m * n];
        let mut terms = Vec::with_capacity(k);
        for i in 0..m {
            let arow = a.row(i);
            let nz: Vec<usize> = (0..k).filter(|&j| arow[j] != 0.0).collect();
            if nz.is_empty() {
                continue;
            }
            for c in 0..n {
                terms.clear();
                terms.extend(nz.iter().map(|&j| arow[j] * yv.values()[j * n + c]));
                out[i * n + c] = canonical_sum(&mut terms);
            }
        }
        let rg = self.any_grad(&[adj, y]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::Aggregate(adj, y), rg))
    }

    /// Output row `g` is the mean of input rows listed in `groups[g]`.
    pub fn row_group_mean(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (m, n) = self.dims(a);
        let t = self.value(a);
        let mut out = Vec::with_capacity(groups.len() * n);
        for g in groups {
            if g.is_empty() || g.iter().any(|&i| i >= m) {
                return Err(Error::Index(format!("bad row group {g:?} for {m} rows")));
            }
            let mut acc = vec![0.0; n];
            for &i in g {
                acc.iter_mut().zip(t.row(i)).for_each(|(s, v)| *s += v);
            }
            let inv = 1.0 / g.len() as f64;
            out.extend(acc.into_iter().map(|s| s * inv));
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::matrix(groups.len(), n, out),
            Op::RowGroupMean(a, groups.to_vec()),
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index(format!("target class {bad} outside [0, {c})")));
        }
        let l = self.value(logits);
        let mut probs = Vec::with_capacity(m * c);
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = l.row(i);
            let (max, lse) = log_softmax_row(row);
            loss += lse - (row[t] - max);
            probs.extend(row.iter().map(|v| (v - max - lse).exp()));
        }
        loss /= m as f64;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Batch normalization over rows. With `stats = None` the batch
    /// statistics are computed (and returned); otherwise the given
    /// `(mean, var)` are used as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (m, n) = self.dims(x);
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("batch_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x).values();
        let (mean, var_biased, reported) = match stats {
            Some((mu, var)) => (mu.to_vec(), var.to_vec(), None),
            None => {
                let mut mean = vec![0.0; n];
                let mut var = vec![0.0; n];
                let mut col = Vec::with_capacity(m);
                for c in 0..n {
                    col.clear();
                    col.extend((0..m).map(|i| xv[i * n + c]));
                    let mu = canonical_sum(&mut col) / m as f64;
                    col.clear();
                    col.extend((0..m).map(|i| (xv[i * n + c] - mu).powi(2)));
                    mean[c] = mu;
                    var[c] = canonical_sum(&mut col) / m as f64;
                }
                let unbiased = if m > 1 {
                    var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect()
                } else {
                    var.clone()
                };
                let report = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(report))
            }
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).values();
        let b = self.value(beta).values();
        let mut xhat = vec![0.0; m * n];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for c in 0..n {
                let h = (xv[i * n + c] - mean[c]) * inv_std[c];
                xhat[i * n + c] = h;
                out[i * n + c] = g[c] * h + b[c];
            }
        }
        let batch_stats = reported.is_some();
        let rg = self.any_grad(&[x, gamma, beta]);
        let v = self.push(
            Tensor::matrix(m, n, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, reported))
    }

    /// Runs reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.apply_rule(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params: Vec<(ParamId, Var)> =
            self.param_vars.iter().map(|(id, v)| (*id, *v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn apply_rule(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[idx].value_ref(self);
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if let Some(ga) = self.acc(grads, *a) {
                    acc_g_bt(ga, g, self.value(*b).values(), m, k, n);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    acc_at_g(gb, self.value(*a).values(), g, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                let n = self.dims(*a).1;
                if let Some(gr) = self.acc(grads, *row) {
                    for ch in g.chunks(n) {
                        gr.iter_mut().zip(ch).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::Act(a, kind) => {
                let xv = self.value(*a).values();
                let yv = out.values();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * kind.derivative(xv[i], yv[i]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (out.rows(), out.cols());
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if let Some(gp) = self.acc(grads, p) {
                        for i in 0..rows {
                            let src = &g[i * total + offset..i * total + offset + c];
                            gp[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(x, y)| *x += y);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.dims(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    ga[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, y)| *x += y);
                }
            }
            Op::GatherRows(a, indices) => {
                let n = self.dims(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, &i) in indices.iter().enumerate() {
                        ga[i * n..(i + 1) * n]
                            .iter_mut()
                            .zip(&g[r * n..(r + 1) * n])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::PairwiseSum(col, row) => {
                let (n, m) = (out.rows(), out.cols());
                if let Some(gc) = self.acc(grads, *col) {
                    for i in 0..n {
                        gc[i] += g[i * m..(i + 1) * m].iter().sum::<f64>();
                    }
                }
                if let Some(gr) = self.acc(grads, *row) {
                    for i in 0..n {
                        for j in 0..m {
                            gr[j] += g[i * m + j];
                        }
                    }
                }
            }
            Op::MaskedSoftmax(scores, mask) => {
                let n = out.cols();
                let y = out.values();
                if let Some(gs) = self.acc(grads, *scores) {
                    for i in 0..out.rows() {
                        let dot: f64 = mask.row_support(i).map(|j| g[i * n + j] * y[i * n + j]).sum();
                        for j in mask.row_support(i) {
                            gs[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                }
            }
            Op::Aggregate(adj, y) => {
                let (m, k) = self.dims(*adj);
                let n = self.dims(*y).1;
                if let Some(ga) = self.acc(grads, *adj) {
                    acc_g_bt(ga, g, self.value(*y).values(), m, k, n);
                }
                if let Some(gy) = self.acc(grads, *y) {
                    acc_at_g(gy, self.value(*adj).values(), g, m, k, n);
                }
            }
            Op::RowGroupMean(a, groups) => {
                let n = self.dims(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, grp) in groups.iter().enumerate() {
                        let inv = 1.0 / grp.len() as f64;
                        for &i in grp {
                            for c in 0..n {
                                ga[i * n + c] += g[r * n + c] * inv;
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.dims(*logits).1;
                let scale = g[0] / targets.len() as f64;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (m, n) = self.dims(*x);
                let gam = self.value(*gamma).values().to_vec();
                if let Some(gg) = self.acc(grads, *gamma) {
                    for i in 0..m {
                        for c in 0..n {
                            gg[c] += g[i * n + c] * xhat[i * n + c];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for i in 0..m {
                        for c in 0..n {
                            gb[c] += g[i * n + c];
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    if *batch_stats {
                        let mf = m as f64;
                        for c in 0..n {
                            let mut sum_d = 0.0;
                            let mut sum_dx = 0.0;
                            for i in 0..m {
                                let d = g[i * n + c] * gam[c];
                                sum_d += d;
                                sum_dx += d * xhat[i * n + c];
                            }
                            for i in 0..m {
                                let d = g[i * n + c] * gam[c];
                                gx[i * n + c] += inv_std[c] / mf
                                    * (mf * d - sum_d - xhat[i * n + c] * sum_dx);
                            }
                        }
                    } else {
                        for i in 0..m {
                            for c in 0..n {
                                gx[i * n + c] += g[i * n + c] * gam[c] * inv_std[c];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Node {
    fn value_ref<'a>(&'a self, tape: &'a Tape<'_>) -> &'a Tensor {
        match &self.value {
            Value::Owned(t) => t,
            Value::Param(id) => tape.store.expect("parameter tape").get(*id),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut t = Tape::detached();
        let a = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = t.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let p = t.matmul(a, i).unwrap();
        assert_eq!(t.value(p).values(), &[1.0, 2.0, 3.0, 4.0]);

        let r = t.constant(mat(&[&[1.0, 2.0]]));
        let c = t.constant(mat(&[&[3.0], &[4.0]]));
        let p = t.matmul(r, c).unwrap();
        assert_eq!(t.value(p).values(), &[11.0]);
    }

    #[test]
    fn matmul_inner_mismatch_names_both_shapes() {
        let mut t = Tape::detached();
        let a = t.constant(mat(&[&[1.0, 2.0]]));
        let b = t.constant(mat(&[&[3.0, 4.0]]));
        match t.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![1, 2]);
                assert_eq!(right, vec![1, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn activation_examples() {
        assert_eq!(Activation::leaky().apply(-5.0), -1.0);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        let mut t = Tape::detached();
        let x = t.constant(mat(&[&[-1.0, 2.0]]));
        let y = t.activation(x, Activation::Relu);
        assert_eq!(t.value(y).values(), &[0.0, 2.0]);
    }

    #[test]
    fn masked_softmax_examples() {
        let mut t = Tape::detached();
        let s = t.constant(mat(&[&[2.0, 2.0], &[0.0, 3f64.ln()], &[5.0, 7.0]]));
        let mask = BoolMatrix::from_fn(3, 2, |i, _| i < 2);
        let y = t.masked_row_softmax(s, Rc::new(mask)).unwrap();
        let v = t.value(y);
        assert_eq!(v.row(0), &[0.5, 0.5]);
        assert!((v.get(1, 0) - 0.25).abs() < 1e-15);
        assert!((v.get(1, 1) - 0.75).abs() < 1e-15);
        assert_eq!(v.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::detached();
        let u = t.constant(Tensor::zeros(&[3, 4]));
        let l = t.cross_entropy(u, &[0, 2, 3]).unwrap();
        assert!((t.value(l).values()[0] - 4f64.ln()).abs() < 1e-12);

        let sat = t.constant(mat(&[&[0.0, 1000.0, 0.0]]));
        let l = t.cross_entropy(sat, &[1]).unwrap();
        assert!(t.value(l).values()[0].abs() < 1e-12);

        let z = t.constant(mat(&[&[0.0, 3f64.ln()]]));
        let l = t.cross_entropy(z, &[1]).unwrap();
        assert!((t.value(l).values()[0] + 0.75f64.ln()).abs() < 1e-12);

        assert!(matches!(t.cross_entropy(z, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn backward_linear_form_and_tanh() {
        let mut t = Tape::detached();
        let w = t.leaf(mat(&[&[0.5, -1.0, 2.0]]));
        let x = t.constant(mat(&[&[3.0, 4.0, 5.0]]));
        let p = t.mul(w, x).unwrap();
        let loss = t.sum(p);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[3.0, 4.0, 5.0]);
        assert_eq!(g.wrt(loss).unwrap(), &[1.0]);
        assert!(g.wrt(x).is_none());

        let mut t = Tape::detached();
        let w = t.leaf(Tensor::zeros(&[2, 2]));
        let h = t.activation(w, Activation::Tanh);
        let loss = t.sum(h);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::detached();
        let w = t.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn param_vars_are_shared_and_accumulate() {
        let mut store = ParamStore::new();
        let id = store.add("w", mat(&[&[2.0]]));
        let mut t = Tape::new(&store);
        let a = t.param(id);
        let b = t.param(id);
        assert_eq!(a, b);
        let p = t.mul(a, b).unwrap();
        let loss = t.sum(p);
        let g = t.backward(loss).unwrap();
        g.accumulate_into(&mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &[4.0]);
    }

    #[test]
    fn aggregate_matches_matmul_values() {
        let mut t = Tape::detached();
        let a = t.constant(mat(&[&[0.0, 0.3, 0.7], &[1.0, 0.0, 0.0]]));
        let y = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let g = t.aggregate(a, y).unwrap();
        let m = t.matmul(a, y).unwrap();
        for (x, z) in t.value(g).values().iter().zip(t.value(m).values()) {
            assert!((x - z).abs() < 1e-15);
        }
    }
}
