//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a define-by-run tape: every operation appends a node
//! holding its output values and a record of its inputs, and
//! [`Graph::backward`] replays adjoints over the tape in reverse creation
//! order, which is a reverse topological order by construction. Graphs are
//! rebuilt each forward pass and are confined to one thread; independent
//! graphs on independent threads share nothing.
//!
//! Gradients accumulate: repeated backward calls without an intervening
//! [`Graph::zero_grads`] add up, and the caller is responsible for zeroing
//! before an optimizer step.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    AddRowBroadcast(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MulScalarNode(TensorId, TensorId),
    Neg(TensorId),
    Scale(TensorId, T),
    AddConst(TensorId, T),
    Recip(TensorId),
    Abs(TensorId),
    Log(TensorId),
    Sigmoid(TensorId),
    Gelu(TensorId),
    SoftmaxRows(TensorId),
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: T,
    },
    Transpose(TensorId),
    NarrowRows {
        x: TensorId,
        start: usize,
        len: usize,
    },
    NarrowCols {
        x: TensorId,
        start: usize,
        len: usize,
    },
    ConcatRows(Vec<TensorId>),
    ConcatCols(Vec<TensorId>),
    SumAll(TensorId),
    MeanAll(TensorId),
    Clamp {
        x: TensorId,
        lo: T,
        hi: T,
    },
    Reshape(TensorId),
}

/// One tape entry: output values plus the operation that produced them.
#[derive(Debug, Clone)]
struct Node<T> {
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Vec<T>,
    op: Op<T>,
}

/// Define-by-run computation graph over dense row-major tensors.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Op<T>) -> TensorId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let grad = if requires_grad {
            vec![T::zero(); data.len()]
        } else {
            Vec::new()
        };
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            grad,
            op,
        });
        id
    }

    /// New leaf tensor. `requires_grad` leaves receive gradient accumulators.
    pub fn leaf(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf data length must equal product of shape extents"
        );
        self.push(data, shape, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, data: Vec<T>, shape: Vec<usize>) -> TensorId {
        self.leaf(data, shape, false)
    }

    /// 1x1 constant.
    pub fn scalar_const(&mut self, v: T) -> TensorId {
        self.constant(vec![v], vec![1, 1])
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, id: TensorId) -> T {
        debug_assert_eq!(self.numel(id), 1);
        self.nodes[id.0].data[0]
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient; `Some` iff the node requires gradients.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        let n = &self.nodes[id.0];
        if n.requires_grad {
            Some(&n.grad)
        } else {
            None
        }
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            for g in &mut n.grad {
                *g = T::zero();
            }
        }
    }

    fn rows_cols(&self, id: TensorId) -> (usize, usize) {
        let s = &self.nodes[id.0].shape;
        debug_assert_eq!(s.len(), 2, "operation requires a 2-d tensor");
        (s[0], s[1])
    }

    fn any_requires(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- operations ----

    /// Standard matrix product `a[m,k] * b[k,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.rows_cols(a);
        let (k2, n) = self.rows_cols(b);
        if k != k2 {
            return Err(Error::Dim {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let data = mm(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(data, vec![m, n], rg, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dim {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Add(a, b)))
    }

    /// `a[m,n] + bias[1,n]` broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (m, n) = self.rows_cols(a);
        let (br, bn) = self.rows_cols(bias);
        if br != 1 || bn != n {
            return Err(Error::Dim {
                op: "add_row_broadcast",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[bias.0].shape.clone(),
            });
        }
        let mut data = self.nodes[a.0].data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += self.nodes[bias.0].data[j];
            }
        }
        let rg = self.any_requires(&[a, bias]);
        Ok(self.push(data, vec![m, n], rg, Op::AddRowBroadcast(a, bias)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(data, shape, rg, Op::Mul(a, b)))
    }

    /// Elementwise product of a 1x1 node with an arbitrary node.
    pub fn mul_scalar_node(&mut self, s: TensorId, a: TensorId) -> Result<TensorId> {
        if self.numel(s) != 1 {
            return Err(Error::Contract(format!(
                "mul_scalar_node needs a 1x1 scalar, got shape {:?}",
                self.nodes[s.0].shape
            )));
        }
        let sv = self.nodes[s.0].data[0];
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| sv * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_requires(&[s, a]);
        Ok(self.push(data, shape, rg, Op::MulScalarNode(s, a)))
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| -x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Neg(a))
    }

    pub fn scale(&mut self, a: TensorId, k: T) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| k * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: TensorId, k: T) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| x + k).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::AddConst(a, k))
    }

    pub fn recip(&mut self, a: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| x.recip()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Recip(a))
    }

    /// Elementwise absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| x.abs()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Abs(a))
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Sigmoid(a))
    }

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| gelu(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Gelu(a))
    }

    /// Row-wise softmax with row-max subtraction for stability.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.rows_cols(a);
        let src = &self.nodes[a.0].data;
        if src.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "softmax_rows input contains NaN or infinity".into(),
            ));
        }
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(row[0], T::max);
            let mut sum = T::zero();
            for j in 0..n {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![m, n], rg, Op::SoftmaxRows(a)))
    }

    /// Row-wise layer normalization with learnable gain and shift.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: T,
    ) -> Result<TensorId> {
        let (m, n) = self.rows_cols(x);
        if self.numel(gamma) != n || self.numel(beta) != n {
            return Err(Error::Dim {
                op: "layer_norm",
                lhs: self.nodes[x.0].shape.clone(),
                rhs: self.nodes[gamma.0].shape.clone(),
            });
        }
        let mut data = vec![T::zero(); m * n];
        {
            let src = &self.nodes[x.0].data;
            let g = &self.nodes[gamma.0].data;
            let b = &self.nodes[beta.0].data;
            for i in 0..m {
                let row = &src[i * n..(i + 1) * n];
                let (mean, inv) = row_norm_stats(row, eps);
                for j in 0..n {
                    data[i * n + j] = (row[j] - mean) * inv * g[j] + b[j];
                }
            }
        }
        let rg = self.any_requires(&[x, gamma, beta]);
        Ok(self.push(data, vec![m, n], rg, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.rows_cols(a);
        let src = &self.nodes[a.0].data;
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, vec![n, m], rg, Op::Transpose(a))
    }

    /// Contiguous row slice `[start, start+len)`.
    pub fn narrow_rows(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (m, n) = self.rows_cols(a);
        if start + len > m {
            return Err(Error::Contract(format!(
                "narrow_rows [{start}, {}) out of bounds for {m} rows",
                start + len
            )));
        }
        let data = self.nodes[a.0].data[start * n..(start + len) * n].to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![len, n], rg, Op::NarrowRows { x: a, start, len }))
    }

    /// Column slice `[start, start+len)`.
    pub fn narrow_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (m, n) = self.rows_cols(a);
        if start + len > n {
            return Err(Error::Contract(format!(
                "narrow_cols [{start}, {}) out of bounds for {n} cols",
                start + len
            )));
        }
        let src = &self.nodes[a.0].data;
        let mut data = vec![T::zero(); m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![m, len], rg, Op::NarrowCols { x: a, start, len }))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        }
        let (_, n) = self.rows_cols(parts[0]);
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.rows_cols(p);
            if pn != n {
                return Err(Error::Dim {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            rows += pm;
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let rg = self.any_requires(parts);
        Ok(self.push(data, vec![rows, n], rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero parts".into()));
        }
        let (m, _) = self.rows_cols(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pm, pn) = self.rows_cols(p);
            if pm != m {
                return Err(Error::Dim {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            cols += pn;
        }
        let mut data = vec![T::zero(); m * cols];
        let mut offset = 0;
        for &p in parts {
            let (pm, pn) = self.rows_cols(p);
            let src = &self.nodes[p.0].data;
            for i in 0..pm {
                data[i * cols + offset..i * cols + offset + pn]
                    .copy_from_slice(&src[i * pn..(i + 1) * pn]);
            }
            offset += pn;
        }
        let rg = self.any_requires(parts);
        Ok(self.push(data, vec![m, cols], rg, Op::ConcatCols(parts.to_vec())))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let mut s = T::zero();
        for &v in &self.nodes[a.0].data {
            s += v;
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![s], vec![1, 1], rg, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].data.len();
        let mut s = T::zero();
        for &v in &self.nodes[a.0].data {
            s += v;
        }
        let mean = s / T::from_f(n as f64);
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![mean], vec![1, 1], rg, Op::MeanAll(a))
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the interval.
    pub fn clamp(&mut self, a: TensorId, lo: T, hi: T) -> TensorId {
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| x.max(lo).min(hi))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Clamp { x: a, lo, hi })
    }

    /// Reinterpret the row-major data under a new shape of equal size.
    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        if shape.iter().product::<usize>() != self.numel(a) {
            return Err(Error::Dim {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape,
            });
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, shape, rg, Op::Reshape(a)))
    }

    // ---- backward ----

    /// Propagate adjoints from a scalar loss to every `requires_grad`
    /// ancestor, accumulating into their `grad` buffers.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<T>>> = vec![None; n];
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..loss.0 + 1).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            // Accumulate into the node's own persistent grad buffer.
            {
                let node = &mut self.nodes[i];
                for (dst, src) in node.grad.iter_mut().zip(&g) {
                    *dst += *src;
                }
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.rows_cols(a);
                    let (_, nn) = self.rows_cols(b);
                    if self.nodes[a.0].requires_grad {
                        let da = mm_a_bt(&g, &self.nodes[b.0].data, m, nn, k);
                        accumulate(&mut adj[a.0], &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = mm_at_b(&self.nodes[a.0].data, &g, m, k, nn);
                        accumulate(&mut adj[b.0], &db);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], &g);
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut adj[b.0], &g);
                    }
                }
                Op::AddRowBroadcast(a, bias) => {
                    let (m, nn) = self.rows_cols(a);
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], &g);
                    }
                    if self.nodes[bias.0].requires_grad {
                        let mut db = vec![T::zero(); nn];
                        for i in 0..m {
                            for j in 0..nn {
                                db[j] += g[i * nn + j];
                            }
                        }
                        accumulate(&mut adj[bias.0], &db);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], &g);
                    }
                    if self.nodes[b.0].requires_grad {
                        let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                        accumulate(&mut adj[b.0], &neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<T> = g
                            .iter()
                            .zip(&self.nodes[b.0].data)
                            .map(|(&gv, &bv)| gv * bv)
                            .collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db: Vec<T> = g
                            .iter()
                            .zip(&self.nodes[a.0].data)
                            .map(|(&gv, &av)| gv * av)
                            .collect();
                        accumulate(&mut adj[b.0], &db);
                    }
                }
                Op::MulScalarNode(s, a) => {
                    let sv = self.nodes[s.0].data[0];
                    if self.nodes[s.0].requires_grad {
                        let mut ds = T::zero();
                        for (gv, av) in g.iter().zip(&self.nodes[a.0].data) {
                            ds += *gv * *av;
                        }
                        accumulate(&mut adj[s.0], &[ds]);
                    }
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<T> = g.iter().map(|&gv| gv * sv).collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::Neg(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<T> = g.iter().map(|&v| -v).collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::Scale(a, k) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<T> = g.iter().map(|&v| v * k).collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::AddConst(a, _) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], &g);
                    }
                }
                Op::Recip(a) => {
                    if self.nodes[a.0].requires_grad {
                        let y = &self.nodes[i].data;
                        let da: Vec<T> = g
                            .iter()
                            .zip(y)
                            .map(|(&gv, &yv)| -gv * yv * yv)
                            .collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::Abs(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<T> = g
                            .iter()
                            .zip(&self.nodes[a.0].data)
                            .map(|(&gv, &xv)| {
                                if xv > T::zero() {
                                    gv
                                } else if xv < T::zero() {
                                    -gv
                                } else {
                                    T::zero()
                                }
                            })
                            .collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::Log(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<T> = g
                            .iter()
                            .zip(&self.nodes[a.0].data)
                            .map(|(&gv, &xv)| gv / xv)
                            .collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.nodes[a.0].requires_grad {
                        let y = &self.nodes[i].data;
                        let da: Vec<T> = g
                            .iter()
                            .zip(y)
                            .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                            .collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::Gelu(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<T> = g
                            .iter()
                            .zip(&self.nodes[a.0].data)
                            .map(|(&gv, &xv)| gv * gelu_deriv(xv))
                            .collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (m, nn) = self.rows_cols(a);
                        let y = &self.nodes[i].data;
                        let mut da = vec![T::zero(); m * nn];
                        for r in 0..m {
                            let mut dot = T::zero();
                            for j in 0..nn {
                                dot += g[r * nn + j] * y[r * nn + j];
                            }
                            for j in 0..nn {
                                da[r * nn + j] = y[r * nn + j] * (g[r * nn + j] - dot);
                            }
                        }
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (m, nn) = self.rows_cols(x);
                    let xs = self.nodes[x.0].data.clone();
                    let gs = self.nodes[gamma.0].data.clone();
                    let inv_n = T::one() / T::from_f(nn as f64);
                    let mut dx = vec![T::zero(); m * nn];
                    let mut dgamma = vec![T::zero(); nn];
                    let mut dbeta = vec![T::zero(); nn];
                    for r in 0..m {
                        let row = &xs[r * nn..(r + 1) * nn];
                        let (mean, inv) = row_norm_stats(row, eps);
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..nn {
                            let xhat = (row[j] - mean) * inv;
                            let gj = g[r * nn + j];
                            dgamma[j] += gj * xhat;
                            dbeta[j] += gj;
                            let h = gj * gs[j];
                            m1 += h;
                            m2 += h * xhat;
                        }
                        m1 *= inv_n;
                        m2 *= inv_n;
                        for j in 0..nn {
                            let xhat = (row[j] - mean) * inv;
                            let h = g[r * nn + j] * gs[j];
                            dx[r * nn + j] = inv * (h - m1 - xhat * m2);
                        }
                    }
                    if self.nodes[x.0].requires_grad {
                        accumulate(&mut adj[x.0], &dx);
                    }
                    if self.nodes[gamma.0].requires_grad {
                        accumulate(&mut adj[gamma.0], &dgamma);
                    }
                    if self.nodes[beta.0].requires_grad {
                        accumulate(&mut adj[beta.0], &dbeta);
                    }
                }
                Op::Transpose(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (m, nn) = self.rows_cols(a);
                        // g has shape [n, m]
                        let mut da = vec![T::zero(); m * nn];
                        for r in 0..m {
                            for c in 0..nn {
                                da[r * nn + c] = g[c * m + r];
                            }
                        }
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::NarrowRows { x, start, len } => {
                    if self.nodes[x.0].requires_grad {
                        let (m, nn) = self.rows_cols(x);
                        let mut da = vec![T::zero(); m * nn];
                        da[start * nn..(start + len) * nn].copy_from_slice(&g);
                        accumulate(&mut adj[x.0], &da);
                    }
                }
                Op::NarrowCols { x, start, len } => {
                    if self.nodes[x.0].requires_grad {
                        let (m, nn) = self.rows_cols(x);
                        let mut da = vec![T::zero(); m * nn];
                        for r in 0..m {
                            for c in 0..len {
                                da[r * nn + start + c] = g[r * len + c];
                            }
                        }
                        accumulate(&mut adj[x.0], &da);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in &parts {
                        let (pm, pn) = self.rows_cols(p);
                        if self.nodes[p.0].requires_grad {
                            let dp = g[offset..offset + pm * pn].to_vec();
                            accumulate(&mut adj[p.0], &dp);
                        }
                        offset += pm * pn;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = self.rows_cols(TensorId(i));
                    let mut offset = 0;
                    for &p in &parts {
                        let (_, pn) = self.rows_cols(p);
                        if self.nodes[p.0].requires_grad {
                            let mut dp = vec![T::zero(); m * pn];
                            for r in 0..m {
                                dp[r * pn..(r + 1) * pn]
                                    .copy_from_slice(&g[r * total + offset..r * total + offset + pn]);
                            }
                            accumulate(&mut adj[p.0], &dp);
                        }
                        offset += pn;
                    }
                }
                Op::SumAll(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = vec![g[0]; self.numel(a)];
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::MeanAll(a) => {
                    if self.nodes[a.0].requires_grad {
                        let k = g[0] / T::from_f(self.numel(a) as f64);
                        let da = vec![k; self.numel(a)];
                        accumulate(&mut adj[a.0], &da);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    if self.nodes[x.0].requires_grad {
                        let da: Vec<T> = g
                            .iter()
                            .zip(&self.nodes[x.0].data)
                            .map(|(&gv, &xv)| {
                                if xv > lo && xv < hi {
                                    gv
                                } else {
                                    T::zero()
                                }
                            })
                            .collect();
                        accumulate(&mut adj[x.0], &da);
                    }
                }
                Op::Reshape(a) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], &g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, delta: &[T]) {
    match slot {
        Some(buf) => {
            for (dst, src) in buf.iter_mut().zip(delta) {
                *dst += *src;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

fn row_norm_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_f(row.len() as f64);
    let mut mean = T::zero();
    for &v in row {
        mean += v;
    }
    mean /= n;
    let mut var = T::zero();
    for &v in row {
        let d = v - mean;
        var += d * d;
    }
    var /= n;
    (mean, (var + eps).sqrt().recip())
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f(0.7978845608028654); // sqrt(2/pi)
    let a = T::from_f(0.044715);
    let half = T::from_f(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_deriv<T: Scalar>(x: T) -> T {
    let c = T::from_f(0.7978845608028654);
    let a = T::from_f(0.044715);
    let half = T::from_f(0.5);
    let three = T::from_f(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

/// `c[m,n] = a[m,k] * b[k,n]`.
pub fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// `c[m,k] = g[m,n] * b[k,n]^T` without materializing the transpose.
fn mm_a_bt<T: Scalar>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for j in 0..n {
                s += grow[j] * brow[j];
            }
            c[i * k + p] = s;
        }
    }
    c
}

/// `c[k,n] = a[m,k]^T * g[m,n]` without materializing the transpose.
fn mm_at_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * grow[j];
            }
        }
    }
    c
}
