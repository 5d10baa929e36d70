use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use rand::Rng;

use crate::error::{ensure, Result};

use super::real::gemm;
use super::{Real, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u32,
}

/// Geometry of a multi-head scaled dot-product attention call.
///
/// Queries are laid out as `[batch * q_len, model_dim]`, keys and values as
/// `[batch * k_len, model_dim]`; heads split the model dimension evenly.
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub causal: bool,
    /// `batch * k_len` flags; `false` keys are never attended to.
    pub key_valid: Option<Vec<bool>>,
}

enum Op<T> {
    Constant,
    Param(String),
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    AddRow { a: usize, bias: usize },
    Scale { a: usize, factor: T },
    Mul { a: usize, b: usize },
    Relu { a: usize },
    Softmax { a: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, mean: Vec<T>, rstd: Vec<T> },
    Embedding { table: usize, ids: Vec<usize> },
    CrossEntropy { logits: usize, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    Dropout { a: usize, mask: Vec<T> },
    Attention { q: usize, k: usize, v: usize, spec: AttentionSpec, probs: Vec<T> },
    Sum { a: usize },
    Reshape { a: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar loss, keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T = f32> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.by_name.get_mut(name)
    }

    /// Parameters that never reached the loss have an all-zero gradient.
    pub fn get_or_zeros(&self, name: &str, shape: &[usize]) -> Tensor<T> {
        self.by_name
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.by_name.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.by_name.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

/// Records primitive operations in execution order so adjoints can be replayed
/// in reverse. Inputs always precede outputs, so the record is acyclic.
pub struct Tape<T: Real = f32> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.idx].value
    }

    fn idx(&self, v: Var) -> Result<usize> {
        ensure!(
            v.tape == self.id && v.idx < self.nodes.len(),
            Contract,
            "variable {v:?} was not recorded on this tape"
        );
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value recorded on tape");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// A trainable leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        self.push(value, Op::Param(name.into()), true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// `[m,k] · [k,n]`; the lhs may carry leading batch dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = self.nodes[ia].value.rows_cols();
        let bs = self.nodes[ib].value.shape();
        ensure!(
            bs.len() == 2 && bs[0] == k,
            Shape,
            "matmul {:?} x {bs:?}",
            self.nodes[ia].value.shape()
        );
        let n = bs[1];
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.nodes[ia].value.data(),
            false,
            self.nodes[ib].value.data(),
            false,
            &mut out,
            false,
        );
        let mut shape = self.nodes[ia].value.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul { a: ia, b: ib, m, k, n },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        ensure!(
            va.shape() == vb.shape(),
            Shape,
            "add {:?} + {:?}",
            va.shape(),
            vb.shape()
        );
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(out, Op::Add { a: ia, b: ib }, needs))
    }

    /// Adds a `[cols]` vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(bias)?);
        let (_, cols) = self.nodes[ia].value.rows_cols();
        let bv = &self.nodes[ib].value;
        ensure!(
            bv.numel() == cols,
            Shape,
            "row bias of {} elements for width {cols}",
            bv.numel()
        );
        let mut data = self.nodes[ia].value.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (x, &b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(self.nodes[ia].value.shape().to_vec(), data)?;
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(out, Op::AddRow { a: ia, bias: ib }, needs))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let f = T::of(factor);
        let va = &self.nodes[ia].value;
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| x * f).collect())?;
        let needs = self.needs(ia);
        Ok(self.push(out, Op::Scale { a: ia, factor: f }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        ensure!(
            va.shape() == vb.shape(),
            Shape,
            "mul {:?} * {:?}",
            va.shape(),
            vb.shape()
        );
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(out, Op::Mul { a: ia, b: ib }, needs))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let data = va.data().iter().map(|&x| x.max(T::zero())).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(ia);
        Ok(self.push(out, Op::Relu { a: ia }, needs))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let va = &self.nodes[ia].value;
        let (_, cols) = va.rows_cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(ia);
        Ok(self.push(out, Op::Softmax { a: ia }, needs))
    }

    /// Normalizes each row to zero mean and unit variance, then applies gain and offset.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gain)?, self.idx(bias)?);
        let vx = &self.nodes[ix].value;
        let (rows, cols) = vx.rows_cols();
        let (g, b) = (self.nodes[ig].value.data(), self.nodes[ib].value.data());
        ensure!(
            g.len() == cols && b.len() == cols,
            Shape,
            "layer norm params for width {cols}"
        );
        let n = T::of(cols as f64);
        let eps = T::of(eps);
        let mut out = vec![T::zero(); rows * cols];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for (row, o) in vx.data().chunks(cols).zip(out.chunks_mut(cols)) {
            let mu = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            for c in 0..cols {
                o[c] = (row[c] - mu) * r * g[c] + b[c];
            }
            mean.push(mu);
            rstd.push(r);
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        let needs = self.needs(ix) || self.needs(ig) || self.needs(ib);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                mean,
                rstd,
            },
            needs,
        ))
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.idx(table)?;
        let vt = &self.nodes[it].value;
        ensure!(vt.shape().len() == 2, Shape, "embedding table must be 2-D");
        let (vocab, dim) = (vt.shape()[0], vt.shape()[1]);
        ensure!(!ids.is_empty(), InvalidInput, "embedding lookup of zero ids");
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            ensure!(id < vocab, InvalidInput, "token id {id} outside vocabulary of {vocab}");
            out.extend_from_slice(&vt.data()[id * dim..(id + 1) * dim]);
        }
        let out = Tensor::new(vec![ids.len(), dim], out)?;
        let needs = self.needs(it);
        Ok(self.push(
            out,
            Op::Embedding {
                table: it,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Mean token cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let il = self.idx(logits)?;
        let vl = &self.nodes[il].value;
        let (rows, cols) = vl.rows_cols();
        ensure!(
            targets.len() == rows,
            Shape,
            "{} targets for {rows} rows",
            targets.len()
        );
        let count = targets.iter().filter(|t| t.is_some()).count();
        ensure!(count > 0, InvalidInput, "cross entropy over zero targets");
        let mut probs = vl.data().to_vec();
        let mut total = 0.0f64;
        for (row, t) in probs.chunks_mut(cols).zip(targets) {
            softmax_in_place(row);
            if let Some(t) = *t {
                ensure!(t < cols, InvalidInput, "target {t} outside {cols} classes");
                total -= row[t].as_f64().max(f64::MIN_POSITIVE).ln();
            }
        }
        let loss = Tensor::scalar(T::of(total / count as f64));
        let needs = self.needs(il);
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                probs,
                count,
            },
            needs,
        ))
    }

    /// Inverted dropout with an explicit mask drawn from `rng` and kept on the tape.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        ensure!((0.0..1.0).contains(&p), Contract, "dropout rate {p} outside [0,1)");
        if p == 0.0 {
            return Ok(a);
        }
        let ia = self.idx(a)?;
        let keep = T::of(1.0 / (1.0 - p));
        let va = &self.nodes[ia].value;
        let mask: Vec<T> = (0..va.numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(ia);
        Ok(self.push(out, Op::Dropout { a: ia, mask }, needs))
    }

    /// Multi-head scaled dot-product attention; see [`AttentionSpec`] for layout.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        let (iq, ik, iv) = (self.idx(q)?, self.idx(k)?, self.idx(v)?);
        let (vq, vk, vv) = (
            &self.nodes[iq].value,
            &self.nodes[ik].value,
            &self.nodes[iv].value,
        );
        let (qr, dim) = vq.rows_cols();
        let (kr, kd) = vk.rows_cols();
        ensure!(
            qr == spec.batch * spec.q_len && kr == spec.batch * spec.k_len,
            Shape,
            "attention rows q={qr} k={kr} for batch {} × ({}, {})",
            spec.batch,
            spec.q_len,
            spec.k_len
        );
        ensure!(
            kd == dim && vv.shape() == vk.shape(),
            Shape,
            "attention q/k/v widths differ"
        );
        ensure!(
            spec.heads > 0 && dim % spec.heads == 0,
            Shape,
            "{dim} not divisible by {} heads",
            spec.heads
        );
        if let Some(kv) = &spec.key_valid {
            ensure!(kv.len() == kr, Shape, "key mask length {} for {kr} keys", kv.len());
        }
        ensure!(
            !spec.causal || spec.q_len == spec.k_len,
            Shape,
            "causal attention requires equal query/key lengths"
        );
        let (qd, kdata, vdata) = (vq.data(), vk.data(), vv.data());
        let dh = dim / spec.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (lq, lk) = (spec.q_len, spec.k_len);
        let mut probs = vec![T::zero(); spec.batch * spec.heads * lq * lk];
        let mut out = vec![T::zero(); qr * dim];
        for b in 0..spec.batch {
            for h in 0..spec.heads {
                let off = h * dh;
                for i in 0..lq {
                    let qrow = &qd[(b * lq + i) * dim + off..][..dh];
                    let p = &mut probs[((b * spec.heads + h) * lq + i) * lk..][..lk];
                    let mut max = T::neg_infinity();
                    for j in 0..lk {
                        if !attends(&spec, b, i, j) {
                            continue;
                        }
                        let krow = &kdata[(b * lk + j) * dim + off..][..dh];
                        let s = dot(qrow, krow) * scale;
                        p[j] = s;
                        max = max.max(s);
                    }
                    if max == T::neg_infinity() {
                        continue;
                    }
                    let mut z = T::zero();
                    for j in 0..lk {
                        if attends(&spec, b, i, j) {
                            p[j] = (p[j] - max).exp();
                            z += p[j];
                        }
                    }
                    let o = &mut out[(b * lq + i) * dim + off..][..dh];
                    for j in 0..lk {
                        if p[j] == T::zero() {
                            continue;
                        }
                        p[j] = p[j] / z;
                        let vrow = &vdata[(b * lk + j) * dim + off..][..dh];
                        for c in 0..dh {
                            o[c] += p[j] * vrow[c];
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vq.shape().to_vec(), out)?;
        let needs = self.needs(iq) || self.needs(ik) || self.needs(iv);
        Ok(self.push(
            out,
            Op::Attention {
                q: iq,
                k: ik,
                v: iv,
                spec,
                probs,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.sum();
        let needs = self.needs(ia);
        Ok(self.push(Tensor::scalar(s), Op::Sum { a: ia }, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.clone().reshape(shape)?;
        let needs = self.needs(ia);
        Ok(self.push(out, Op::Reshape { a: ia }, needs))
    }

    /// Replays the tape backwards from a scalar `loss`, visiting each recorded
    /// operation once, and returns the gradient of every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let il = self.idx(loss)?;
        ensure!(
            self.nodes[il].value.numel() == 1,
            Contract,
            "backprop requires a scalar loss, got shape {:?}",
            self.nodes[il].value.shape()
        );
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(il + 1);
        grads.resize_with(il + 1, || None);
        grads[il] = Some(vec![T::one()]);
        let mut out = Gradients::default();
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.step_back(i, &node.op, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn step_back(
        &self,
        i: usize,
        op: &Op<T>,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        out: &mut Gradients<T>,
    ) -> Result<()> {
        let val = |j: usize| self.nodes[j].value.data();
        match op {
            Op::Constant => {}
            Op::Param(name) => {
                let shape = self.nodes[i].value.shape().to_vec();
                match out.by_name.get_mut(name) {
                    Some(t) => t.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => {
                        out.by_name.insert(name.clone(), Tensor::new(shape, g)?);
                    }
                }
            }
            &Op::MatMul { a, b, m, k, n } => {
                if self.needs(a) {
                    let da = self.grad_buf(grads, a);
                    gemm(m, n, k, &g, false, val(b), true, da, true);
                }
                if self.needs(b) {
                    let db = self.grad_buf(grads, b);
                    gemm(k, m, n, val(a), true, &g, false, db, true);
                }
            }
            &Op::Add { a, b } => {
                for j in [a, b] {
                    if self.needs(j) {
                        axpy(self.grad_buf(grads, j), &g, T::one());
                    }
                }
            }
            &Op::AddRow { a, bias } => {
                if self.needs(a) {
                    axpy(self.grad_buf(grads, a), &g, T::one());
                }
                if self.needs(bias) {
                    let db = self.grad_buf(grads, bias);
                    let cols = db.len();
                    for row in g.chunks(cols) {
                        axpy(db, row, T::one());
                    }
                }
            }
            &Op::Scale { a, factor } => {
                if self.needs(a) {
                    axpy(self.grad_buf(grads, a), &g, factor);
                }
            }
            &Op::Mul { a, b } => {
                if self.needs(a) {
                    let (da, vb) = (self.grad_buf(grads, a), val(b));
                    for ((d, &gg), &y) in da.iter_mut().zip(&g).zip(vb) {
                        *d += gg * y;
                    }
                }
                if self.needs(b) {
                    let (db, va) = (self.grad_buf(grads, b), val(a));
                    for ((d, &gg), &x) in db.iter_mut().zip(&g).zip(va) {
                        *d += gg * x;
                    }
                }
            }
            &Op::Relu { a } => {
                if self.needs(a) {
                    let y = val(i);
                    let da = self.grad_buf(grads, a);
                    for ((d, &gg), &yy) in da.iter_mut().zip(&g).zip(y) {
                        if yy > T::zero() {
                            *d += gg;
                        }
                    }
                }
            }
            &Op::Softmax { a } => {
                if self.needs(a) {
                    let y = val(i);
                    let (_, cols) = self.nodes[i].value.rows_cols();
                    let da = self.grad_buf(grads, a);
                    for ((d, gg), yy) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        softmax_backward(d, gg, yy);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let xv = val(x);
                let gv = val(gain);
                let cols = gv.len();
                let n = T::of(cols as f64);
                if self.needs(gain) || self.needs(bias) {
                    let mut dg = vec![T::zero(); cols];
                    let mut db = vec![T::zero(); cols];
                    for (r, (row, gg)) in xv.chunks(cols).zip(g.chunks(cols)).enumerate() {
                        for c in 0..cols {
                            let xhat = (row[c] - mean[r]) * rstd[r];
                            dg[c] += gg[c] * xhat;
                            db[c] += gg[c];
                        }
                    }
                    if self.needs(gain) {
                        axpy(self.grad_buf(grads, gain), &dg, T::one());
                    }
                    if self.needs(bias) {
                        axpy(self.grad_buf(grads, bias), &db, T::one());
                    }
                }
                if self.needs(x) {
                    let dx = self.grad_buf(grads, x);
                    let mut dxhat = vec![T::zero(); cols];
                    for (r, ((row, gg), d)) in xv
                        .chunks(cols)
                        .zip(g.chunks(cols))
                        .zip(dx.chunks_mut(cols))
                        .enumerate()
                    {
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for c in 0..cols {
                            dxhat[c] = gg[c] * gv[c];
                            let xhat = (row[c] - mean[r]) * rstd[r];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xhat;
                        }
                        mean_d = mean_d / n;
                        mean_dx = mean_dx / n;
                        for c in 0..cols {
                            let xhat = (row[c] - mean[r]) * rstd[r];
                            d[c] += rstd[r] * (dxhat[c] - mean_d - xhat * mean_dx);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let table = *table;
                if self.needs(table) {
                    let dim = self.nodes[table].value.shape()[1];
                    let dt = self.grad_buf(grads, table);
                    for (row, &id) in g.chunks(dim).zip(ids) {
                        axpy(&mut dt[id * dim..(id + 1) * dim], row, T::one());
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let logits = *logits;
                if self.needs(logits) {
                    let (_, cols) = self.nodes[logits].value.rows_cols();
                    let w = g[0] / T::of(*count as f64);
                    let dl = self.grad_buf(grads, logits);
                    for ((d, p), t) in dl.chunks_mut(cols).zip(probs.chunks(cols)).zip(targets) {
                        if let Some(t) = *t {
                            for c in 0..cols {
                                d[c] += w * p[c];
                            }
                            d[t] -= w;
                        }
                    }
                }
            }
            Op::Dropout { a, mask } => {
                let a = *a;
                if self.needs(a) {
                    let da = self.grad_buf(grads, a);
                    for ((d, &gg), &m) in da.iter_mut().zip(&g).zip(mask) {
                        *d += gg * m;
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            } => self.attention_back(*q, *k, *v, spec, probs, &g, grads),
            &Op::Sum { a } => {
                if self.needs(a) {
                    let da = self.grad_buf(grads, a);
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Reshape { a } => {
                if self.needs(a) {
                    axpy(self.grad_buf(grads, a), &g, T::one());
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_back(
        &self,
        iq: usize,
        ik: usize,
        iv: usize,
        spec: &AttentionSpec,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (_, dim) = self.nodes[iq].value.rows_cols();
        let dh = dim / spec.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (lq, lk) = (spec.q_len, spec.k_len);
        let (qd, kd, vd) = (
            self.nodes[iq].value.data(),
            self.nodes[ik].value.data(),
            self.nodes[iv].value.data(),
        );
        let mut dq = vec![T::zero(); qd.len()];
        let mut dk = vec![T::zero(); kd.len()];
        let mut dv = vec![T::zero(); vd.len()];
        let mut ds = vec![T::zero(); lk];
        for b in 0..spec.batch {
            for h in 0..spec.heads {
                let off = h * dh;
                for i in 0..lq {
                    let p = &probs[((b * spec.heads + h) * lq + i) * lk..][..lk];
                    let go = &g[(b * lq + i) * dim + off..][..dh];
                    let mut weighted = T::zero();
                    for j in 0..lk {
                        ds[j] = T::zero();
                        if p[j] == T::zero() {
                            continue;
                        }
                        let vrow = &vd[(b * lk + j) * dim + off..][..dh];
                        let dp = dot(go, vrow);
                        ds[j] = dp;
                        weighted += p[j] * dp;
                        let dvrow = &mut dv[(b * lk + j) * dim + off..][..dh];
                        for c in 0..dh {
                            dvrow[c] += p[j] * go[c];
                        }
                    }
                    let qrow = &qd[(b * lq + i) * dim + off..][..dh];
                    let dqrow_start = (b * lq + i) * dim + off;
                    for j in 0..lk {
                        if p[j] == T::zero() {
                            continue;
                        }
                        let s = p[j] * (ds[j] - weighted) * scale;
                        let krow = &kd[(b * lk + j) * dim + off..][..dh];
                        for c in 0..dh {
                            dq[dqrow_start + c] += s * krow[c];
                        }
                        let dkrow = &mut dk[(b * lk + j) * dim + off..][..dh];
                        for c in 0..dh {
                            dkrow[c] += s * qrow[c];
                        }
                    }
                }
            }
        }
        for (idx, d) in [(iq, dq), (ik, dk), (iv, dv)] {
            if self.needs(idx) {
                axpy(self.grad_buf(grads, idx), &d, T::one());
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], j: usize) -> &'g mut [T] {
        let n = self.nodes[j].value.numel();
        grads[j].get_or_insert_with(|| vec![T::zero(); n])
    }
}

/// Reverse-mode gradients of a scalar `loss` with respect to every parameter leaf.
pub fn backprop<T: Real>(tape: &Tape<T>, loss: Var) -> Result<Gradients<T>> {
    tape.backward(loss)
}

fn attends(spec: &AttentionSpec, b: usize, i: usize, j: usize) -> bool {
    if spec.causal && j > i {
        return false;
    }
    match &spec.key_valid {
        Some(kv) => kv[b * spec.k_len + j],
        None => true,
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x = *x / z;
    }
}

fn softmax_backward<T: Real>(d: &mut [T], g: &[T], y: &[T]) {
    let inner = g.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    for c in 0..d.len() {
        d[c] += y[c] * (g[c] - inner);
    }
}
