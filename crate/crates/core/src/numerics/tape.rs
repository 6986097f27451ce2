//! Arena tape for reverse-mode automatic differentiation.
//!
//! Every operation appends a node whose inputs are already on the tape, so the
//! arena order is a topological order. [`Tape::backward`] walks it once in
//! reverse and visits each node at most once.

use crate::error::{CobraError, Result};

use super::kernels;
use super::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Gelu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        temperature: f64,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    SumAll(Var),
    Bce {
        p: Var,
        targets: Vec<f64>,
        eps: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    MarginPenalty {
        centers: Var,
        margin: f64,
    },
    WeightedSum(Vec<(Var, S)>),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Ordered record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CobraError::dim(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contribution: Vec<S>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e = *e + c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. It participates in backward iff `requires_grad` is set
    /// on the tensor.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        let needs_grad = value.requires_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(CobraError::dim("matmul", format!("{m}×{k} · {k2}×{n}")));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(CobraError::dim(
                "matmul_nt",
                format!("{m}×{k} · ({n}×{k2})ᵀ"),
            ));
        }
        let data = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let data = kernels::transpose(self.value(a).data(), m, n);
        Ok(self.push(Tensor::matrix(n, m, data)?, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(row).numel() != n {
            return Err(CobraError::dim(
                "add_row",
                format!(
                    "row of {} values against {n} columns",
                    self.value(row).numel()
                ),
            ));
        }
        let r = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for (d, b) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *d = *d + *b;
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, row), &[x, row]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x - *y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| *x * factor).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Scale(a, factor), &[a]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|x| S::narrow(gelu(x.widen())))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Gelu(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|x| S::narrow(sigmoid(x.widen())))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Sigmoid(a), &[a]))
    }

    /// Row-wise softmax of `x / temperature` over the trailing axis.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(CobraError::Parameter(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let (m, n) = self.dims(x);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            data.extend(
                softmax_row(&src[i * n..(i + 1) * n], temperature)
                    .into_iter()
                    .map(S::narrow),
            );
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Softmax { x, temperature }, &[x]))
    }

    /// Per-row normalization to zero mean and unit variance followed by an
    /// affine map with `gamma`, `beta` (each of length `cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(CobraError::dim(
                "layer_norm",
                format!("affine parameters must have {n} values"),
            ));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = kernels::sum_wide(row) / n as f64;
            let var = row.iter().map(|v| (v.widen() - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v.widen() - mean) * is;
                xhat.push(h);
                data.push(S::narrow(h * g[j].widen() + b[j].widen()));
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Mean over rows: `m×n → 1×n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let sums = kernels::column_sums(self.value(x).data(), m, n);
        let data = sums
            .into_iter()
            .map(|v| S::narrow(v.widen() / m as f64))
            .collect();
        Ok(self.push(Tensor::matrix(1, n, data)?, Op::MeanRows(x), &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(CobraError::dim("concat_rows", "no inputs"));
        };
        let n = self.dims(first).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(CobraError::dim("concat_rows", format!("width {c} vs {n}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Tensor::matrix(rows, n, data)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(CobraError::dim("concat_cols", "no inputs"));
        };
        let m = self.dims(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(CobraError::dim("concat_cols", format!("height {r} vs {m}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            Tensor::matrix(m, n, data)?,
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if len == 0 || start + len > n {
            return Err(CobraError::dim(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        Ok(self.push(
            Tensor::matrix(m, len, data)?,
            Op::SliceCols { x, start },
            &[x],
        ))
    }

    /// Selects rows by index. Gradients are scattered back to the selected
    /// rows only; the indices themselves are not differentiable.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if index.is_empty() {
            return Err(CobraError::dim("gather_rows", "empty index list"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(CobraError::Index {
                index: bad,
                bound: m,
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let out = Tensor::matrix(index.len(), n, data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Divides each row by its Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let src = self.value(x).data();
        let mut norms = Vec::with_capacity(m);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let norm = row
                .iter()
                .map(|v| v.widen().powi(2))
                .sum::<f64>()
                .sqrt()
                .max(NORMALIZE_EPS);
            norms.push(norm);
            data.extend(row.iter().map(|v| S::narrow(v.widen() / norm)));
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(out, Op::L2NormalizeRows { x, norms }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = kernels::sum_wide(self.value(x).data());
        Ok(self.push(Tensor::scalar(S::narrow(s)), Op::SumAll(x), &[x]))
    }

    /// Binary cross-entropy summed over columns and averaged over rows, with
    /// probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, targets: &[S], eps: f64) -> Result<Var> {
        let (m, n) = self.dims(p);
        if targets.len() != m * n {
            return Err(CobraError::dim(
                "bce",
                format!("{} targets for {m}×{n} predictions", targets.len()),
            ));
        }
        let targets: Vec<f64> = targets.iter().map(|t| t.widen()).collect();
        if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(CobraError::Contract("bce targets must be 0 or 1".into()));
        }
        let mut total = 0.0;
        for (pv, &y) in self.value(p).data().iter().zip(&targets) {
            let pc = pv.widen().clamp(eps, 1.0 - eps);
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        let out = Tensor::scalar(S::narrow(total / m as f64));
        Ok(self.push(out, Op::Bce { p, targets, eps }, &[p]))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(CobraError::dim(
                "cross_entropy",
                format!("{} targets for {m} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(CobraError::Index {
                index: bad,
                bound: n,
            });
        }
        let src = self.value(logits).data();
        let mut probs = Vec::with_capacity(m * n);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = softmax_row(&src[i * n..(i + 1) * n], 1.0);
            total -= log_softmax_at(&src[i * n..(i + 1) * n], t);
            probs.extend(row);
        }
        let out = Tensor::scalar(S::narrow(total / m as f64));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// `Σ_{i<j} max(0, 2·margin − ‖c_i − c_j‖)²` over the rows of `centers`.
    pub fn margin_penalty(&mut self, centers: Var, margin: f64) -> Result<Var> {
        let (m, n) = self.dims(centers);
        let c = self.value(centers).to_f64_vec();
        let mut total = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                let d = pair_distance(&c, i, j, n);
                let h = 2.0 * margin - d;
                if h > 0.0 {
                    total += h * h;
                }
            }
        }
        Ok(self.push(
            Tensor::scalar(S::narrow(total)),
            Op::MarginPenalty { centers, margin },
            &[centers],
        ))
    }

    /// `Σ w_i · x_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, S)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            if !self.value(v).is_scalar() {
                return Err(CobraError::dim("weighted_sum", "terms must be scalars"));
            }
            total += w.widen() * self.value(v).item().widen();
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(
            Tensor::scalar(S::narrow(total)),
            Op::WeightedSum(terms.to_vec()),
            &inputs,
        ))
    }

    /// Propagates d`loss`/d(node) to every node that needs a gradient and
    /// stores the totals on requires-grad leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(CobraError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].clone() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads)?;
        }
        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                let g = g
                    .clone()
                    .unwrap_or_else(|| vec![S::zero(); node.value.numel()]);
                node.value.set_grad(g)?;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Vec<S>>], to: Var, contribution: Vec<S>) {
        if self.nodes[to.0].needs_grad {
            accumulate(&mut grads[to.0], contribution);
        }
    }

    fn backprop_node(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let ta = self.value(*a).data();
                let tb = self.value(*b).data();
                if self.needs_grad(*a) {
                    self.send(grads, *a, kernels::matmul_nt(g, tb, m, n, k));
                }
                if self.needs_grad(*b) {
                    self.send(grads, *b, kernels::matmul_tn(ta, g, m, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if self.needs_grad(*a) {
                    self.send(
                        grads,
                        *a,
                        kernels::matmul(g, self.value(*b).data(), m, n, k),
                    );
                }
                if self.needs_grad(*b) {
                    self.send(
                        grads,
                        *b,
                        kernels::matmul_tn(g, self.value(*a).data(), m, n, k),
                    );
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                self.send(grads, *a, kernels::transpose(g, n, m));
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.to_vec());
                self.send(grads, *b, g.to_vec());
            }
            Op::AddRow(x, row) => {
                let (m, n) = self.dims(*x);
                self.send(grads, *x, g.to_vec());
                if self.needs_grad(*row) {
                    self.send(grads, *row, kernels::column_sums(g, m, n));
                }
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.to_vec());
                self.send(grads, *b, g.iter().map(|v| -*v).collect());
            }
            Op::Mul(a, b) => {
                let ta = self.value(*a).data();
                let tb = self.value(*b).data();
                if self.needs_grad(*a) {
                    self.send(grads, *a, g.iter().zip(tb).map(|(g, y)| *g * *y).collect());
                }
                if self.needs_grad(*b) {
                    self.send(grads, *b, g.iter().zip(ta).map(|(g, x)| *g * *x).collect());
                }
            }
            Op::Scale(a, f) => {
                self.send(grads, *a, g.iter().map(|v| *v * *f).collect());
            }
            Op::Gelu(a) => {
                let ta = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(ta)
                    .map(|(g, x)| S::narrow(g.widen() * gelu_grad(x.widen())))
                    .collect();
                self.send(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = g
                    .iter()
                    .zip(y)
                    .map(|(g, y)| {
                        let y = y.widen();
                        S::narrow(g.widen() * y * (1.0 - y))
                    })
                    .collect();
                self.send(grads, *a, d);
            }
            Op::Softmax { x, temperature } => {
                let (m, n) = self.dims(*x);
                let y = node.value.data();
                let mut d = Vec::with_capacity(m * n);
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.widen() * b.widen()).sum();
                    d.extend(
                        yr.iter()
                            .zip(gr)
                            .map(|(y, g)| S::narrow(y.widen() * (g.widen() - dot) / temperature)),
                    );
                }
                self.send(grads, *x, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                let gam = self.value(*gamma).data();
                if self.needs_grad(*x) {
                    let mut d = Vec::with_capacity(m * n);
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let hr = &xhat[i * n..(i + 1) * n];
                        let dh: Vec<f64> = gr
                            .iter()
                            .zip(gam)
                            .map(|(g, w)| g.widen() * w.widen())
                            .collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h =
                            dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        d.extend(
                            dh.iter().zip(hr).map(|(a, h)| {
                                S::narrow(inv_std[i] * (a - mean_dh - h * mean_dh_h))
                            }),
                        );
                    }
                    self.send(grads, *x, d);
                }
                if self.needs_grad(*gamma) {
                    let mut acc = vec![0.0f64; n];
                    for i in 0..m {
                        for j in 0..n {
                            acc[j] += g[i * n + j].widen() * xhat[i * n + j];
                        }
                    }
                    self.send(grads, *gamma, acc.into_iter().map(S::narrow).collect());
                }
                if self.needs_grad(*beta) {
                    self.send(grads, *beta, kernels::column_sums(g, m, n));
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = self.dims(*x);
                let scale = 1.0 / m as f64;
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend(g.iter().map(|v| S::narrow(v.widen() * scale)));
                }
                self.send(grads, *x, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.send(grads, p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let n = node.value.cols();
                let mut col = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if self.needs_grad(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g[i * n + col..i * n + col + w]);
                        }
                        self.send(grads, p, d);
                    }
                    col += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.dims(*x);
                let w = node.value.cols();
                let mut d = vec![S::zero(); m * n];
                for i in 0..m {
                    d[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.send(grads, *x, d);
            }
            Op::GatherRows { x, index } => {
                let (m, n) = self.dims(*x);
                let mut d = vec![S::zero(); m * n];
                for (r, &src) in index.iter().enumerate() {
                    for j in 0..n {
                        d[src * n + j] = d[src * n + j] + g[r * n + j];
                    }
                }
                self.send(grads, *x, d);
            }
            Op::Reshape(x) => {
                self.send(grads, *x, g.to_vec());
            }
            Op::L2NormalizeRows { x, norms } => {
                let (m, n) = self.dims(*x);
                let y = node.value.data();
                let mut d = Vec::with_capacity(m * n);
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.widen() * b.widen()).sum();
                    d.extend(
                        yr.iter()
                            .zip(gr)
                            .map(|(y, g)| S::narrow((g.widen() - y.widen() * dot) / norms[i])),
                    );
                }
                self.send(grads, *x, d);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).numel();
                self.send(grads, *x, vec![g[0]; n]);
            }
            Op::Bce { p, targets, eps } => {
                let rows = self.value(*p).rows() as f64;
                let scale = g[0].widen() / rows;
                let d = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(pv, &y)| {
                        let pv = pv.widen();
                        if pv < *eps || pv > 1.0 - eps {
                            S::zero()
                        } else {
                            S::narrow(scale * (-y / pv + (1.0 - y) / (1.0 - pv)))
                        }
                    })
                    .collect();
                self.send(grads, *p, d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (m, n) = self.dims(*logits);
                let scale = g[0].widen() / m as f64;
                let mut d: Vec<S> = probs.iter().map(|p| S::narrow(p * scale)).collect();
                for (i, &t) in targets.iter().enumerate() {
                    d[i * n + t] = S::narrow((probs[i * n + t] - 1.0) * scale);
                }
                self.send(grads, *logits, d);
            }
            Op::MarginPenalty { centers, margin } => {
                let (m, n) = self.dims(*centers);
                let c = self.value(*centers).to_f64_vec();
                let mut acc = vec![0.0f64; m * n];
                for i in 0..m {
                    for j in i + 1..m {
                        let d = pair_distance(&c, i, j, n);
                        let h = 2.0 * margin - d;
                        // The norm is not differentiable at coincident centers.
                        if h <= 0.0 || d == 0.0 {
                            continue;
                        }
                        let coef = -2.0 * h / d;
                        for k in 0..n {
                            let diff = c[i * n + k] - c[j * n + k];
                            acc[i * n + k] += coef * diff;
                            acc[j * n + k] -= coef * diff;
                        }
                    }
                }
                let scale = g[0].widen();
                self.send(
                    grads,
                    *centers,
                    acc.into_iter().map(|v| S::narrow(v * scale)).collect(),
                );
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.send(grads, v, vec![g[0] * w]);
                }
            }
        }
        Ok(())
    }
}

fn pair_distance(c: &[f64], i: usize, j: usize, n: usize) -> f64 {
    (0..n)
        .map(|k| (c[i * n + k] - c[j * n + k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row<S: Scalar>(row: &[S], temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = row.iter().map(|v| v.widen() / temperature).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax_at<S: Scalar>(row: &[S], target: usize) -> f64 {
    let z: Vec<f64> = row.iter().map(|v| v.widen()).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z[target] - lse
}
