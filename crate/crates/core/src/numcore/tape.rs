// SPDX-License-Identifier: Apache-2.0

//! Tensor-level reverse-mode differentiation.
//!
//! Operations append a node holding the forward value and whatever the
//! backward rule needs. Nodes are only ever appended, so every node's
//! inputs precede it and a reverse sweep over the node list is a valid
//! reverse topological order.
//!
//! Matrices are row-major; a 1-D tensor of length `d` acts as a `1×d` row
//! wherever an op needs a matrix view. Fused ops (attention, RMS norm,
//! softmax cross-entropy, the hinge loss) carry hand-written backward rules
//! so the tape stays short.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Dot(Var, Var),
    Silu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        probs: Vec<f64>,
    },
    Rope {
        x: Var,
        heads: usize,
        seq_len: usize,
        base: f64,
    },
    MeanPool {
        x: Var,
        mask: Vec<bool>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    Stack(Vec<Var>),
    Hinge {
        s: Var,
        active: Vec<Option<usize>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Norm floor below which a vector is considered degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Registers a leaf; its `requires_grad` flag decides whether gradients
    /// are collected for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value.with_requires_grad(true), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// `a · b`, or `a · bᵀ` when `trans_b` (the `x · Wᵀ` layout of a linear
    /// layer whose weight is stored out×in).
    pub fn matmul_with(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb || self.shape(a).len() > 2 || self.shape(b).len() != 2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, trans_b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_with(a, b, false)
    }

    /// `x · wᵀ` for a weight stored as out×in.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        self.matmul_with(x, w, true)
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let src = self.value(a);
        let t = Tensor::new(src.shape(), src.data().iter().map(|x| x * c).collect()).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::shape("dot", ta.shape(), tb.shape()));
        }
        let s = super::tensor::dot(ta.data(), tb.data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| x * sigmoid(x)).collect();
        let t = Tensor::new(src.shape(), data).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::Silu(a), rg)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::Contract("gather with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "row id {bad} out of range for {rows} rows"
            )));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(&[ids.len(), cols], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise `x / sqrt(mean(x²) + eps) * gain`.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.dims(x);
        if self.value(gain).len() != d {
            return Err(Error::shape("rms_norm", self.shape(x), self.shape(gain)));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let mut out = vec![0.0; n * d];
        let mut inv_rms = Vec::with_capacity(n);
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            for c in 0..d {
                out[r * d + c] = row[c] * inv * g[c];
            }
            inv_rms.push(inv);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gain);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::RmsNorm { x, gain, inv_rms },
            rg,
        ))
    }

    /// Multi-head causal self-attention over `rows / seq_len` independent
    /// sequences stacked row-wise. `q`, `k`, `v` are already projected.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
    ) -> Result<Var> {
        let (n, d) = self.dims(q);
        if self.dims(k) != (n, d) || self.dims(v) != (n, d) {
            return Err(Error::shape("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 || seq_len == 0 || n % seq_len != 0 {
            return Err(Error::Contract(format!(
                "attention: {n}×{d} input does not split into {heads} heads over sequences of {seq_len}"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let nseq = n / seq_len;
        let mut probs = vec![0.0; nseq * heads * seq_len * seq_len];
        let mut out = vec![0.0; n * d];
        let mut scores = vec![0.0; seq_len];
        for s in 0..nseq {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq_len {
                    let qi = &qs[(s * seq_len + i) * d + off..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, sc) in scores.iter_mut().enumerate().take(i + 1) {
                        let kj = &ks[(s * seq_len + j) * d + off..][..dh];
                        *sc = super::tensor::dot(qi, kj) * scale;
                        max = max.max(*sc);
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut().take(i + 1) {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let prow = &mut probs[((s * heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let orow = &mut out[(s * seq_len + i) * d + off..][..dh];
                    for j in 0..=i {
                        let p = scores[j] / z;
                        prow[j] = p;
                        let vj = &vs[(s * seq_len + j) * d + off..][..dh];
                        for (o, vv) in orow.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(&[n, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            },
            rg,
        ))
    }

    /// Rotary position embedding: within each head, coordinate pairs
    /// `(2i, 2i+1)` of the row at position `p = row mod seq_len` are rotated
    /// by `p · base^(−2i/head_dim)`. Position 0 is left unchanged.
    pub fn rope(&mut self, x: Var, heads: usize, seq_len: usize, base: f64) -> Result<Var> {
        let (n, d) = self.dims(x);
        if heads == 0
            || d % heads != 0
            || !(d / heads).is_multiple_of(2)
            || seq_len == 0
            || n % seq_len != 0
        {
            return Err(Error::Contract(format!(
                "rope: {n}×{d} input does not split into {heads} even-width heads over sequences of {seq_len}"
            )));
        }
        let mut out = self.value(x).data().to_vec();
        rotate(&mut out, d, heads, seq_len, base, 1.0);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[n, d], out)?,
            Op::Rope {
                x,
                heads,
                seq_len,
                base,
            },
            rg,
        ))
    }

    /// Mean of the rows selected by `mask`; output is 1-D of length `cols`.
    pub fn mean_pool_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (n, d) = self.dims(x);
        if mask.len() != n {
            return Err(Error::shape(
                "mean_pool_masked",
                self.shape(x),
                &[mask.len()],
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyPool);
        }
        let xs = self.value(x).data();
        let mut out = vec![0.0; d];
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for (o, v) in out.iter_mut().zip(&xs[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= count as f64;
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[d], out)?,
            Op::MeanPool {
                x,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise unit-norm scaling. A row with norm at or below
    /// [`DEGENERATE_EPS`] is an error.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        let xs = self.value(x).data();
        let mut out = vec![0.0; n * d];
        let mut norms = Vec::with_capacity(n);
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let nrm = super::tensor::norm(row);
            if nrm.is_nan() || nrm <= DEGENERATE_EPS {
                return Err(Error::DegenerateVector {
                    norm: nrm,
                    eps: DEGENERATE_EPS,
                });
            }
            for c in 0..d {
                out[r * d + c] = row[c] / nrm;
            }
            norms.push(nrm);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::L2Normalize { x, norms }, rg))
    }

    /// Stacks equal-length vectors (or single-row matrices) into a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Contract("stack of zero rows".into()))?;
        let d = self.value(first).len();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            if t.len() != d {
                return Err(Error::shape("stack", self.shape(first), t.shape()));
            }
            out.extend_from_slice(t.data());
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        Ok(self.push(
            Tensor::new(&[rows.len(), d], out)?,
            Op::Stack(rows.to_vec()),
            rg,
        ))
    }

    /// In-batch hardest-negative hinge over a square similarity matrix `s`
    /// (anchors × positives).
    ///
    /// Row `i` pays `max(0, margin + s[i, n(i)] − s[i, i])` where `n(i)` is
    /// the first index of the row maximum over `j ≠ i`. Returns the mean row
    /// loss and, per row, the chosen negative (`None` when the batch has a
    /// single row).
    pub fn hardest_negative_hinge(
        &mut self,
        s: Var,
        margin: f64,
    ) -> Result<(Var, Vec<Option<usize>>)> {
        let (b, b2) = self.dims(s);
        if b != b2 || self.shape(s).len() != 2 {
            return Err(Error::Contract(format!(
                "similarity matrix must be square, got {:?}",
                self.shape(s)
            )));
        }
        let sv = self.value(s);
        let mut negatives = Vec::with_capacity(b);
        let mut active = Vec::with_capacity(b);
        let mut total = 0.0;
        for i in 0..b {
            let neg = hardest_negative(sv.row(i), i);
            negatives.push(neg);
            let hit = neg.and_then(|j| {
                let l = margin + sv.at(i, j) - sv.at(i, i);
                if l > 0.0 {
                    total += l;
                    Some(j)
                } else {
                    None
                }
            });
            active.push(hit);
        }
        let rg = self.rg(s);
        let loss = self.push(
            Tensor::scalar(total / b as f64),
            Op::Hinge { s, active },
            rg,
        );
        Ok((loss, negatives))
    }

    /// Mean softmax cross-entropy of `logits` rows against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, v) = self.dims(logits);
        if targets.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Contract(format!(
                "target {bad} out of range for {v} classes"
            )));
        }
        let ls = self.value(logits).data();
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &ls[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[targets[r]];
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Every `requires_grad` leaf gets a
    /// gradient; leaves the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }
        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims(*a);
                let n = node.value.cols();
                if self.rg(*a) {
                    // dA = G · op(B)ᵀ
                    let ga = acc(grads, *a, m * k);
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        false,
                        self.value(*b).data(),
                        !*trans_b,
                        ga,
                        true,
                    );
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, k * n);
                    if *trans_b {
                        // B is n×k: dB = Gᵀ · A
                        gemm(n, m, k, g, true, self.value(*a).data(), false, gb, true);
                    } else {
                        gemm(k, m, n, self.value(*a).data(), true, g, false, gb, true);
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g, |x| x);
                self.accumulate(grads, *b, g, |x| x);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g, |x| x);
                self.accumulate(grads, *b, g, |x| -x);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b).data();
                    let ga = acc(grads, *a, g.len());
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if self.rg(*b) {
                    let av = self.value(*a).data();
                    let gb = acc(grads, *b, g.len());
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g, |x| x * c),
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let ga = acc(grads, *a, n);
                for o in ga {
                    *o += g[0];
                }
            }
            Op::Dot(a, b) => {
                for (x, y) in [(*a, *b), (*b, *a)] {
                    if self.rg(x) {
                        let yv = self.value(y).data();
                        let gx = acc(grads, x, yv.len());
                        for (o, yi) in gx.iter_mut().zip(yv) {
                            *o += g[0] * yi;
                        }
                    }
                }
            }
            Op::Silu(a) => {
                let xs = self.value(*a).data();
                let ga = acc(grads, *a, xs.len());
                for ((o, gi), &x) in ga.iter_mut().zip(g).zip(xs) {
                    let s = sigmoid(x);
                    *o += gi * s * (1.0 + x * (1.0 - s));
                }
            }
            Op::Gather { table, ids } => {
                let (rows, d) = self.dims(*table);
                let gt = acc(grads, *table, rows * d);
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        gt[id * d + c] += g[r * d + c];
                    }
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (n, d) = self.dims(*x);
                let xs = self.value(*x).data();
                let gv = self.value(*gain).data();
                if self.rg(*gain) {
                    let gg = acc(grads, *gain, d);
                    for r in 0..n {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xs[r * d + c] * inv_rms[r];
                        }
                    }
                }
                if self.rg(*x) {
                    let gx = acc(grads, *x, n * d);
                    for r in 0..n {
                        let inv = inv_rms[r];
                        let row = &xs[r * d..(r + 1) * d];
                        // dx = inv * (gy*g − xhat * mean(gy*g*xhat))
                        let mut m = 0.0;
                        for c in 0..d {
                            m += g[r * d + c] * gv[c] * row[c] * inv;
                        }
                        m /= d as f64;
                        for c in 0..d {
                            gx[r * d + c] += inv * (g[r * d + c] * gv[c] - row[c] * inv * m);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, *seq_len, probs, g, grads),
            Op::Rope {
                x,
                heads,
                seq_len,
                base,
            } => {
                let d = node.value.cols();
                let mut back = g.to_vec();
                rotate(&mut back, d, *heads, *seq_len, *base, -1.0);
                self.accumulate(grads, *x, &back, |v| v);
            }
            Op::MeanPool { x, mask } => {
                let (n, d) = self.dims(*x);
                let count = mask.iter().filter(|&&m| m).count() as f64;
                let gx = acc(grads, *x, n * d);
                for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    for c in 0..d {
                        gx[r * d + c] += g[c] / count;
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                let (n, d) = self.dims(*x);
                let ys = node.value.data();
                let gx = acc(grads, *x, n * d);
                for r in 0..n {
                    let y = &ys[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let yg = super::tensor::dot(y, gr);
                    for c in 0..d {
                        gx[r * d + c] += (gr[c] - y[c] * yg) / norms[r];
                    }
                }
            }
            Op::Stack(rows) => {
                let d = node.value.cols();
                for (r, &v) in rows.iter().enumerate() {
                    if self.rg(v) {
                        let gv = acc(grads, v, d);
                        for c in 0..d {
                            gv[c] += g[r * d + c];
                        }
                    }
                }
            }
            Op::Hinge { s, active } => {
                let b = active.len();
                let gs = acc(grads, *s, b * b);
                for (i, hit) in active.iter().enumerate() {
                    if let Some(j) = hit {
                        gs[i * b + j] += g[0] / b as f64;
                        gs[i * b + i] -= g[0] / b as f64;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (n, v) = self.dims(*logits);
                let gl = acc(grads, *logits, n * v);
                let w = g[0] / n as f64;
                for r in 0..n {
                    for c in 0..v {
                        gl[r * v + c] += w * probs[r * v + c];
                    }
                    gl[r * v + targets[r]] -= w;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (n, d) = self.dims(q);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut gq = vec![0.0; n * d];
        let mut gk = vec![0.0; n * d];
        let mut gv = vec![0.0; n * d];
        let mut dp = vec![0.0; seq_len];
        for s in 0..n / seq_len {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq_len {
                    let prow = &probs[((s * heads + h) * seq_len + i) * seq_len..][..seq_len];
                    let gi = &g[(s * seq_len + i) * d + off..][..dh];
                    let mut weighted = 0.0;
                    for j in 0..=i {
                        let vj = &vs[(s * seq_len + j) * d + off..][..dh];
                        dp[j] = super::tensor::dot(gi, vj);
                        weighted += prow[j] * dp[j];
                        let gvj = &mut gv[(s * seq_len + j) * d + off..][..dh];
                        for (o, x) in gvj.iter_mut().zip(gi) {
                            *o += prow[j] * x;
                        }
                    }
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let (ri, rj) = ((s * seq_len + i) * d + off, (s * seq_len + j) * d + off);
                        for c in 0..dh {
                            gq[ri + c] += ds * ks[rj + c];
                            gk[rj + c] += ds * qs[ri + c];
                        }
                    }
                }
            }
        }
        for (var, local) in [(q, gq), (k, gk), (v, gv)] {
            if self.rg(var) {
                for (o, x) in acc(grads, var, n * d).iter_mut().zip(local) {
                    *o += x;
                }
            }
        }
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        g: &[f64],
        f: impl Fn(f64) -> f64,
    ) {
        if !self.rg(v) {
            return;
        }
        let gv = acc(grads, v, g.len());
        for (o, x) in gv.iter_mut().zip(g) {
            *o += f(*x);
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// In-place rotary rotation; `sign = -1` applies the inverse.
fn rotate(data: &mut [f64], d: usize, heads: usize, seq_len: usize, base: f64, sign: f64) {
    let dh = d / heads;
    for (r, row) in data.chunks_exact_mut(d).enumerate() {
        let pos = (r % seq_len) as f64;
        if pos == 0.0 {
            continue;
        }
        for h in 0..heads {
            for i in 0..dh / 2 {
                let theta = sign * pos * base.powf(-2.0 * i as f64 / dh as f64);
                let (sin, cos) = theta.sin_cos();
                let (a, b) = (h * dh + 2 * i, h * dh + 2 * i + 1);
                let (x0, x1) = (row[a], row[b]);
                row[a] = x0 * cos - x1 * sin;
                row[b] = x0 * sin + x1 * cos;
            }
        }
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

/// First index of the maximum over `row[j]`, `j != i`.
pub(crate) fn hardest_negative(row: &[f64], i: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if j == i {
            continue;
        }
        match best {
            Some(b) if row[b] >= v => {}
            _ => best = Some(j),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let v = tape.param(t(&[3], &[1.0, -2.0, 5.0]));
        let s = tape.sum(v);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dot_self_gradient() {
        let mut tape = Tape::new();
        let v = tape.param(t(&[2], &[1.0, 2.0]));
        let s = tape.dot(v, v).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 2.0]));
        let b = tape.param(t(&[2], &[3.0, 4.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let s = tape.sum(a);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[0.0, 0.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn hardest_negative_first_index_on_ties() {
        assert_eq!(hardest_negative(&[0.9, 0.5, 0.5], 0), Some(1));
        assert_eq!(hardest_negative(&[0.5, 0.9, 0.5], 1), Some(0));
        assert_eq!(hardest_negative(&[0.2, 0.7, 0.7], 0), Some(1));
        assert_eq!(hardest_negative(&[1.0], 0), None);
    }

    #[test]
    fn single_position_attention_passes_values() {
        let mut tape = Tape::new();
        let q = tape.param(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.param(t(&[1, 4], &[0.5, 0.5, 0.5, 0.5]));
        let v = tape.param(t(&[1, 4], &[9.0, 8.0, 7.0, 6.0]));
        let o = tape.causal_attention(q, k, v, 2, 1).unwrap();
        assert_eq!(tape.value(o).data(), &[9.0, 8.0, 7.0, 6.0]);
        let s = tape.sum(o);
        tape.backward(s).unwrap();
        assert!(tape.grad(q).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(tape.grad(v).unwrap(), &[1.0; 4]);
    }
}
