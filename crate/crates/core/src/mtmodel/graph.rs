//! Reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Graph`] is a tape: every op appends a node holding its value, and [`Graph::backward`]
//! walks the tape in reverse. Sequences of a batch are packed back to back without padding;
//! attention gets the packing through [`Segments`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vmf::ContinuousLoss;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Tensor { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// `c = alpha * a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let max_a = if k == 0 { 0 } else { (m - 1) * rsa + (k - 1) * csa };
    let max_b = if k == 0 { 0 } else { (k - 1) * rsb + (n - 1) * csb };
    assert!(k == 0 || (max_a < a.len() && max_b < b.len()));
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Packed sequences: segment `i` of the queries attends to segment `i` of the keys.
/// Each entry is `(start_row, len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    pub q: Vec<(usize, usize)>,
    pub k: Vec<(usize, usize)>,
}

impl Segments {
    pub fn same(lens: &[usize]) -> Self {
        let spans = spans(lens);
        Segments {
            q: spans.clone(),
            k: spans,
        }
    }

    pub fn cross(q_lens: &[usize], k_lens: &[usize]) -> Self {
        Segments {
            q: spans(q_lens),
            k: spans(k_lens),
        }
    }
}

pub fn spans(lens: &[usize]) -> Vec<(usize, usize)> {
    let mut start = 0;
    lens.iter()
        .map(|&l| {
            let s = (start, l);
            start += l;
            s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    ConcatRows(Var, Var),
    NormalizeRows(Var, Vec<f64>),
    Dropout(Var, Vec<f64>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Segments,
        probs: Vec<f64>,
    },
    VmfLoss {
        pred: Var,
        table: Var,
        ids: Vec<usize>,
        grad_pred: Vec<f64>,
        grad_target: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        ids: Vec<usize>,
        smoothing: f64,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    grad_enabled: bool,
    dropout_rng: Option<ChaCha8Rng>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
    /// `dropout_rng = None` disables dropout (evaluation mode).
    pub fn new(grad_enabled: bool, dropout_rng: Option<ChaCha8Rng>) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled,
            dropout_rng,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows, t.cols)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A parameter node; `trainable = false` makes it a constant.
    pub fn param(&mut self, id: usize, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            needs_grad: trainable && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = Tensor::zeros(n, m);
        gemm(
            n,
            k,
            m,
            1.0,
            &self.value(a).data,
            k,
            1,
            &self.value(b).data,
            m,
            1,
            0.0,
            &mut out.data,
            m,
            1,
        );
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(bias), (1, c), "bias shape");
        let mut out = self.value(a).clone();
        let b = self.value(bias).data.clone();
        out.data.chunks_mut(c).for_each(|r| r.iter_mut().zip(&b).for_each(|(x, y)| *x += y));
        self.push(out, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (n, c) = self.shape(x);
        let mut out = Tensor::zeros(n, c);
        let mut xhat = vec![0.0; n * c];
        let mut rstd = vec![0.0; n];
        {
            let xv = self.value(x);
            let g = &self.value(gamma).data;
            let b = &self.value(beta).data;
            for i in 0..n {
                let row = xv.row(i);
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                rstd[i] = r;
                for j in 0..c {
                    let h = (row[j] - mean) * r;
                    xhat[i * c + j] = h;
                    out.data[i * c + j] = g[j] * h + b[j];
                }
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, c) = self.shape(table);
        let mut out = Tensor::zeros(ids.len(), c);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < rows, "gather index {id} out of range {rows}");
            out.row_mut(i).copy_from_slice(self.value(table).row(id));
        }
        self.push(out, Op::Gather(table, ids.to_vec()), &[table])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (ra, c) = self.shape(a);
        let (rb, c2) = self.shape(b);
        assert_eq!(c, c2, "concat widths");
        let mut data = self.value(a).data.clone();
        data.extend_from_slice(&self.value(b).data);
        self.push(Tensor::from_vec(ra + rb, c, data), Op::ConcatRows(a, b), &[a, b])
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols;
        let mut norms = Vec::with_capacity(out.rows);
        for row in out.data.chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        self.push(out, Op::NormalizeRows(a, norms), &[a])
    }

    /// Inverted dropout; the identity when the graph has no dropout generator or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut().filter(|_| p > 0.0) else {
            return a;
        };
        let keep = 1.0 / (1.0 - p);
        let n = self.nodes[a.0].value.data.len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let mut out = self.value(a).clone();
        out.data.iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
        self.push(out, Op::Dropout(a, mask), &[a])
    }

    /// Scaled dot-product attention over `heads` column blocks, per segment. With `causal`,
    /// query `i` of a segment sees keys `0..=i` of the same segment.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool, segments: &Segments) -> Var {
        let (nq, d) = self.shape(q);
        assert_eq!(self.shape(k).1, d);
        assert_eq!(self.shape(k), self.shape(v));
        assert!(d % heads == 0, "width not divisible by heads");
        assert_eq!(segments.q.len(), segments.k.len());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let total: usize = segments.q.iter().zip(&segments.k).map(|(a, b)| a.1 * b.1).sum();
        let mut probs = vec![0.0; total * heads];
        let mut out = Tensor::zeros(nq, d);
        let (qv, kv, vv) = (&self.value(q).data, &self.value(k).data, &self.value(v).data);
        let mut off = 0;
        for (&(qs, ql), &(ks, kl)) in segments.q.iter().zip(&segments.k) {
            if causal {
                assert_eq!(ql, kl, "causal attention needs equal segment lengths");
            }
            for h in 0..heads {
                let p = &mut probs[off..off + ql * kl];
                let col = h * dh;
                gemm(
                    ql,
                    dh,
                    kl,
                    scale,
                    &qv[qs * d + col..],
                    d,
                    1,
                    &kv[ks * d + col..],
                    1,
                    d,
                    0.0,
                    p,
                    kl,
                    1,
                );
                for i in 0..ql {
                    let row = &mut p[i * kl..(i + 1) * kl];
                    let visible = if causal { i + 1 } else { kl };
                    let mx = row[..visible].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for x in row[..visible].iter_mut() {
                        *x = (*x - mx).exp();
                        sum += *x;
                    }
                    row[..visible].iter_mut().for_each(|x| *x /= sum);
                    row[visible..].iter_mut().for_each(|x| *x = 0.0);
                }
                gemm(
                    ql,
                    kl,
                    dh,
                    1.0,
                    p,
                    kl,
                    1,
                    &vv[ks * d + col..],
                    d,
                    1,
                    0.0,
                    &mut out.data[qs * d + col..],
                    d,
                    1,
                );
                off += ql * kl;
            }
        }
        let op = Op::Attention {
            q,
            k,
            v,
            heads,
            segments: segments.clone(),
            probs,
        };
        self.push(out, op, &[q, k, v])
    }

    /// Mean continuous loss between each predicted row and the table row of its target id.
    pub fn vmf_loss(&mut self, pred: Var, table: Var, ids: &[usize], loss: &ContinuousLoss) -> Result<Var> {
        let (n, e) = self.shape(pred);
        assert_eq!(n, ids.len());
        assert_eq!(self.shape(table).1, e);
        if n == 0 {
            return Err(Error::Empty("loss over zero target tokens"));
        }
        let mut grad_pred = vec![0.0; n * e];
        let mut grad_target = vec![0.0; n * e];
        let mut total = 0.0;
        let p = self.value(pred);
        let t = self.value(table);
        for (i, &id) in ids.iter().enumerate() {
            let (x, y) = (p.row(i), t.row(id));
            total += loss.loss_and_grad(x, y, &mut grad_pred[i * e..(i + 1) * e])?;
            let gt = &mut grad_target[i * e..(i + 1) * e];
            match *loss {
                ContinuousLoss::Vmf | ContinuousLoss::VmfL1 { .. } => {
                    gt.iter_mut().zip(x).for_each(|(g, v)| *g = -v);
                }
                ContinuousLoss::VmfL2 { lambda2 } => {
                    gt.iter_mut().zip(x).for_each(|(g, v)| *g = -lambda2 * v);
                }
                ContinuousLoss::Cosine => {
                    let k = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    gt.iter_mut().zip(x).for_each(|(g, v)| *g = -v / k);
                }
            }
        }
        let inv = 1.0 / n as f64;
        grad_pred.iter_mut().chain(grad_target.iter_mut()).for_each(|g| *g *= inv);
        if !total.is_finite() {
            return Err(Error::NonFinite("continuous loss"));
        }
        let op = Op::VmfLoss {
            pred,
            table,
            ids: ids.to_vec(),
            grad_pred,
            grad_target,
        };
        Ok(self.push(Tensor::from_vec(1, 1, vec![total * inv]), op, &[pred, table]))
    }

    /// Mean label-smoothed cross-entropy; smoothing mass is spread uniformly over all classes.
    pub fn softmax_ce(&mut self, logits: Var, ids: &[usize], smoothing: f64) -> Result<Var> {
        let (n, v) = self.shape(logits);
        assert_eq!(n, ids.len());
        if n == 0 {
            return Err(Error::Empty("loss over zero target tokens"));
        }
        let mut probs = vec![0.0; n * v];
        let mut total = 0.0;
        let l = self.value(logits);
        for (i, &id) in ids.iter().enumerate() {
            let row = l.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            let p = &mut probs[i * v..(i + 1) * v];
            let mut mean_logp = 0.0;
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - lse).exp();
                mean_logp += x - lse;
            }
            mean_logp /= v as f64;
            total += -(1.0 - smoothing) * (row[id] - lse) - smoothing * mean_logp;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("cross-entropy"));
        }
        let op = Op::SoftmaxCe {
            logits,
            ids: ids.to_vec(),
            smoothing,
            probs,
        };
        Ok(self.push(Tensor::from_vec(1, 1, vec![total / n as f64]), op, &[logits]))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dy) = self.grads[idx].take() else { continue };
            self.propagate(idx, &dy);
            self.grads[idx] = Some(dy);
        }
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&mut self, idx: usize, dy: &Tensor) {
        let node = &self.nodes[idx];
        let mut pending: Vec<(Var, Tensor)> = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, k, m) = (av.rows, av.cols, bv.cols);
                if self.wants(a) {
                    let mut da = Tensor::zeros(n, k);
                    gemm(n, m, k, 1.0, &dy.data, m, 1, &bv.data, 1, m, 0.0, &mut da.data, k, 1);
                    pending.push((a, da));
                }
                if self.wants(b) {
                    let mut db = Tensor::zeros(k, m);
                    gemm(k, n, m, 1.0, &av.data, 1, k, &dy.data, m, 1, 0.0, &mut db.data, m, 1);
                    pending.push((b, db));
                }
            }
            &Op::Add(a, b) => {
                pending.push((a, dy.clone()));
                pending.push((b, dy.clone()));
            }
            &Op::AddRow(a, bias) => {
                pending.push((a, dy.clone()));
                if self.wants(bias) {
                    let mut db = Tensor::zeros(1, dy.cols);
                    for r in dy.data.chunks(dy.cols) {
                        db.data.iter_mut().zip(r).for_each(|(s, x)| *s += x);
                    }
                    pending.push((bias, db));
                }
            }
            &Op::Scale(a, s) => {
                let mut da = dy.clone();
                da.data.iter_mut().for_each(|x| *x *= s);
                pending.push((a, da));
            }
            &Op::Relu(a) => {
                let mut da = dy.clone();
                da.data
                    .iter_mut()
                    .zip(&node.value.data)
                    .for_each(|(g, y)| if *y <= 0.0 { *g = 0.0 });
                pending.push((a, da));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (n, c) = (dy.rows, dy.cols);
                let g = &self.value(*gamma).data;
                let mut dx = Tensor::zeros(n, c);
                let mut dg = Tensor::zeros(1, c);
                let mut db = Tensor::zeros(1, c);
                for i in 0..n {
                    let dyr = dy.row(i);
                    let xh = &xhat[i * c..(i + 1) * c];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..c {
                        let dxh = dyr[j] * g[j];
                        sum_d += dxh;
                        sum_dx += dxh * xh[j];
                        dg.data[j] += dyr[j] * xh[j];
                        db.data[j] += dyr[j];
                    }
                    let r = rstd[i] / c as f64;
                    for j in 0..c {
                        let dxh = dyr[j] * g[j];
                        dx.data[i * c + j] = r * (c as f64 * dxh - sum_d - xh[j] * sum_dx);
                    }
                }
                pending.push((*x, dx));
                pending.push((*gamma, dg));
                pending.push((*beta, db));
            }
            Op::Gather(table, ids) => {
                if self.wants(*table) {
                    let (r, c) = self.shape(*table);
                    let mut dt = Tensor::zeros(r, c);
                    for (i, &id) in ids.iter().enumerate() {
                        dt.row_mut(id).iter_mut().zip(dy.row(i)).for_each(|(a, b)| *a += b);
                    }
                    pending.push((*table, dt));
                }
            }
            &Op::ConcatRows(a, b) => {
                let ra = self.shape(a).0;
                let c = dy.cols;
                pending.push((a, Tensor::from_vec(ra, c, dy.data[..ra * c].to_vec())));
                pending.push((b, Tensor::from_vec(dy.rows - ra, c, dy.data[ra * c..].to_vec())));
            }
            Op::NormalizeRows(a, norms) => {
                let c = dy.cols;
                let mut da = Tensor::zeros(dy.rows, c);
                for (i, n) in norms.iter().enumerate() {
                    let y = node.value.row(i);
                    let g = dy.row(i);
                    let dot: f64 = y.iter().zip(g).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        da.data[i * c + j] = (g[j] - y[j] * dot) / n;
                    }
                }
                pending.push((*a, da));
            }
            Op::Dropout(a, mask) => {
                let mut da = dy.clone();
                da.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                pending.push((*a, da));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            } => {
                let (qv, kv, vv) = (&self.value(*q).data, &self.value(*k).data, &self.value(*v).data);
                let (nq, d) = self.shape(*q);
                let nk = self.shape(*k).0;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Tensor::zeros(nq, d);
                let mut dk = Tensor::zeros(nk, d);
                let mut dv = Tensor::zeros(nk, d);
                let mut off = 0;
                let mut ds = Vec::new();
                for (&(qs, ql), &(ks, kl)) in segments.q.iter().zip(&segments.k) {
                    for h in 0..*heads {
                        let col = h * dh;
                        let p = &probs[off..off + ql * kl];
                        // dV += P^T dO
                        gemm(kl, ql, dh, 1.0, p, 1, kl, &dy.data[qs * d + col..], d, 1, 1.0, &mut dv.data[ks * d + col..], d, 1);
                        // dP = dO V^T
                        ds.clear();
                        ds.resize(ql * kl, 0.0);
                        gemm(ql, dh, kl, 1.0, &dy.data[qs * d + col..], d, 1, &vv[ks * d + col..], 1, d, 0.0, &mut ds, kl, 1);
                        for i in 0..ql {
                            let pr = &p[i * kl..(i + 1) * kl];
                            let dr = &mut ds[i * kl..(i + 1) * kl];
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            dr.iter_mut().zip(pr).for_each(|(g, pp)| *g = pp * (*g - dot));
                        }
                        gemm(ql, kl, dh, scale, &ds, kl, 1, &kv[ks * d + col..], d, 1, 1.0, &mut dq.data[qs * d + col..], d, 1);
                        gemm(kl, ql, dh, scale, &ds, 1, kl, &qv[qs * d + col..], d, 1, 1.0, &mut dk.data[ks * d + col..], d, 1);
                        off += ql * kl;
                    }
                }
                pending.push((*q, dq));
                pending.push((*k, dk));
                pending.push((*v, dv));
            }
            Op::VmfLoss {
                pred,
                table,
                ids,
                grad_pred,
                grad_target,
            } => {
                let s = dy.data[0];
                let (n, e) = self.shape(*pred);
                let mut dp = Tensor::from_vec(n, e, grad_pred.clone());
                dp.data.iter_mut().for_each(|g| *g *= s);
                pending.push((*pred, dp));
                if self.wants(*table) {
                    let (r, _) = self.shape(*table);
                    let mut dt = Tensor::zeros(r, e);
                    for (i, &id) in ids.iter().enumerate() {
                        dt.row_mut(id)
                            .iter_mut()
                            .zip(&grad_target[i * e..(i + 1) * e])
                            .for_each(|(a, b)| *a += s * b);
                    }
                    pending.push((*table, dt));
                }
            }
            Op::SoftmaxCe {
                logits,
                ids,
                smoothing,
                probs,
            } => {
                let s = dy.data[0];
                let (n, v) = self.shape(*logits);
                let inv = s / n as f64;
                let uniform = smoothing / v as f64;
                let mut dl = Tensor::from_vec(n, v, probs.clone());
                for (i, &id) in ids.iter().enumerate() {
                    let row = dl.row_mut(i);
                    row.iter_mut().for_each(|p| *p = (*p - uniform) * inv);
                    row[id] -= (1.0 - smoothing) * inv;
                }
                pending.push((*logits, dl));
            }
        }
        for (v, g) in pending {
            self.accumulate(v, g);
        }
    }

    /// Parameter id and gradient for every trainable parameter node reached by backward.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => self.grads.get(i).and_then(|g| g.as_ref()).map(|g| (id, g)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d(sum(w * f(x)))/dx for every entry of every input.
    fn check<F>(inputs: Vec<Tensor>, f: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |inputs: &[Tensor], weights: Option<&Tensor>| -> (f64, Tensor, Vec<Tensor>) {
            let mut g = Graph::new(true, None);
            let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| g.param(i, t.clone(), true)).collect();
            let out = f(&mut g, &vars);
            let shape = g.shape(out);
            let w = weights.cloned().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1));
            let flat_out = g.value(out).data.clone();
            let s: f64 = flat_out.iter().zip(&w.data).map(|(a, b)| a * b).sum();
            let mut grads = Vec::new();
            if weights.is_some() {
                // backward seeded with w gives d(sum(out * w))/dx
                g.grads = (0..g.nodes.len()).map(|_| None).collect();
                g.grads[out.0] = Some(w.clone());
                for idx in (0..=out.0).rev() {
                    if !g.nodes[idx].needs_grad {
                        continue;
                    }
                    let Some(dy) = g.grads[idx].take() else { continue };
                    g.propagate(idx, &dy);
                    g.grads[idx] = Some(dy);
                }
                for v in &vars {
                    grads.push(g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(*v).0, g.shape(*v).1)));
                }
            }
            (s, Tensor::from_vec(shape.0, shape.1, flat_out), grads)
        };
        let (_, out, _) = eval(&inputs, None);
        let w = rand_tensor(&mut rng, out.rows, out.cols);
        let (_, _, grads) = eval(&inputs, Some(&w));
        let h = 1e-6;
        for (ti, gt) in grads.iter().enumerate() {
            for j in 0..gt.data.len() {
                let mut plus = inputs.clone();
                plus[ti].data[j] += h;
                let mut minus = inputs.clone();
                minus[ti].data[j] -= h;
                let fd = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * h);
                let an = gt.data[j];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(err < 1e-5, "input {ti} entry {j}: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn gradients_of_dense_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 4, 2);
        let bias = rand_tensor(&mut rng, 1, 2);
        check(vec![a.clone(), b.clone(), bias], |g, v| {
            let m = g.matmul(v[0], v[1]);
            let r = g.add_row(m, v[2]);
            let s = g.scale(r, 0.7);
            g.relu(s)
        });
        let gam = rand_tensor(&mut rng, 1, 4);
        let bet = rand_tensor(&mut rng, 1, 4);
        check(vec![a.clone(), gam, bet], |g, v| g.layer_norm(v[0], v[1], v[2]));
        let c = rand_tensor(&mut rng, 2, 4);
        check(vec![a.clone(), c], |g, v| {
            let cat = g.concat_rows(v[0], v[1]);
            let n = g.normalize_rows(cat);
            let x = g.gather(n, &[4, 0, 0, 2]);
            g.add(x, x)
        });
    }

    #[test]
    fn gradients_of_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = rand_tensor(&mut rng, 5, 4);
        let k = rand_tensor(&mut rng, 5, 4);
        let v = rand_tensor(&mut rng, 5, 4);
        let seg = Segments::same(&[2, 3]);
        check(vec![q.clone(), k.clone(), v.clone()], |g, x| g.attention(x[0], x[1], x[2], 2, true, &seg));
        let kc = rand_tensor(&mut rng, 7, 4);
        let vc = rand_tensor(&mut rng, 7, 4);
        let cross = Segments::cross(&[2, 3], &[4, 3]);
        check(vec![q, kc, vc], |g, x| g.attention(x[0], x[1], x[2], 2, false, &cross));
    }

    #[test]
    fn gradients_of_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = rand_tensor(&mut rng, 3, 5);
        check(vec![logits], |g, v| g.softmax_ce(v[0], &[1, 4, 1], 0.1).unwrap());
        let pred = rand_tensor(&mut rng, 3, 4);
        let raw = rand_tensor(&mut rng, 2, 4);
        for loss in [ContinuousLoss::Vmf, ContinuousLoss::VmfL1 { lambda1: 0.02 }, ContinuousLoss::Cosine] {
            check(vec![pred.clone(), raw.clone()], |g, v| {
                let t = g.normalize_rows(v[1]);
                g.vmf_loss(v[0], t, &[1, 0, 1], &loss).unwrap()
            });
        }
    }

    #[test]
    fn causal_attention_ignores_future_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, 4, 4);
        let mut y = x.clone();
        y.row_mut(3).iter_mut().for_each(|v| *v += 1.0);
        let run = |t: &Tensor| {
            let mut g = Graph::new(false, None);
            let v = g.leaf(t.clone());
            let o = g.attention(v, v, v, 2, true, &Segments::same(&[4]));
            g.value(o).clone()
        };
        let (a, b) = (run(&x), run(&y));
        assert_eq!(a.data[..12], b.data[..12]);
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn smoothed_cross_entropy_matches_direct_formula() {
        let logits = Tensor::from_vec(1, 3, vec![1.0, 2.0, 0.5]);
        let mut g = Graph::new(false, None);
        let l = g.leaf(logits);
        let v = g.softmax_ce(l, &[1], 0.1).unwrap();
        let z: f64 = [1.0f64, 2.0, 0.5].iter().map(|x| x.exp()).sum();
        let logp: Vec<f64> = [1.0f64, 2.0, 0.5].iter().map(|x| x - z.ln()).collect();
        let expect = -(0.9 * logp[1]) - 0.1 * logp.iter().sum::<f64>() / 3.0;
        assert!((g.scalar(v) - expect).abs() < 1e-14);
    }
}
