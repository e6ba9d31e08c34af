//! Reverse-mode tape over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamStore`], records every operation applied to
//! its nodes and replays them backwards in [`Graph::backward`]. Parameters
//! used several times (tied projections, shared embeddings) appear once on the
//! tape, so their gradient contributions add up.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Query/key row ranges of one attended sequence within packed inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

#[derive(Debug, Clone)]
pub struct AttnLayout {
    pub segments: Vec<AttnSegment>,
    /// Query `i` of a segment only sees keys `0..=i`.
    pub causal: bool,
    /// Per key row; `false` rows are never attended.
    pub key_valid: Option<Vec<bool>>,
}

impl AttnLayout {
    fn visible(&self, seg: &AttnSegment, qi: usize, kj: usize) -> bool {
        if self.causal && kj > qi {
            return false;
        }
        self.key_valid.as_ref().is_none_or(|v| v[seg.k_start + kj])
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    AddRow {
        x: NodeId,
        bias: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Gelu {
        x: NodeId,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        layout: Arc<AttnLayout>,
        probs: Vec<f64>,
    },
    SelectRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
        smoothing: f64,
        probs: Tensor,
    },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'p> Graph<'p> {
    /// Inference graph: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            dropout_rng: None,
        }
    }

    /// Training graph: dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        Self {
            dropout_rng: Some(rng),
            ..Self::new(params)
        }
    }

    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.dropout_rng
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.params.get(*p),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(node);
        node
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// `a * b`, or `a * b^T` when `trans_b`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.shape();
        let n = if trans_b { bv.rows() } else { bv.cols() };
        let kb = if trans_b { bv.cols() } else { bv.rows() };
        assert_eq!(k, kb, "matmul inner dimensions differ");
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, av.data(), false, bv.data(), trans_b, out.data_mut(), 0.0);
        self.push(out, Op::MatMul { a, b, trans_b })
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let b = self.value(bias);
        assert_eq!(b.shape(), (1, out.cols()));
        for i in 0..out.rows() {
            for (o, bb) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddRow { x, bias })
    }

    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        let h = self.matmul(x, weight, false);
        self.add_row(h, bias)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b })
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            let xh = xhat.row_mut(i);
            for j in 0..cols {
                xh[j] = (row[j] - mean) * r;
            }
            let o = out.row_mut(i);
            for j in 0..cols {
                o[j] = xh[j] * g.data()[j] + b.data()[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            let u = *v;
            *v = 0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh());
        }
        self.push(out, Op::Gelu { x })
    }

    /// Inverted dropout; the identity on inference graphs or when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> NodeId {
        let len = self.value(x).len();
        let Some(rng) = self.dropout_rng.as_mut() else { return x };
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, layout: Arc<AttnLayout>) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let dim = qv.cols();
        assert!(dim % heads == 0);
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = Tensor::zeros(qv.rows(), dim);
        let total: usize = layout.segments.iter().map(|s| s.q_len * s.k_len).sum();
        let mut probs = vec![0.0; total * heads];
        let mut offset = 0;
        let mut scores = Vec::new();
        for seg in &layout.segments {
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                for qi in 0..seg.q_len {
                    let qrow = &qv.row(seg.q_start + qi)[cols.clone()];
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for kj in 0..seg.k_len {
                        if layout.visible(seg, qi, kj) {
                            let krow = &kv.row(seg.k_start + kj)[cols.clone()];
                            let s = dot(qrow, krow) * scale;
                            max = max.max(s);
                            scores.push(s);
                        } else {
                            scores.push(f64::NEG_INFINITY);
                        }
                    }
                    let p = &mut probs[offset + qi * seg.k_len..offset + (qi + 1) * seg.k_len];
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut sum = 0.0;
                    for (pj, &s) in p.iter_mut().zip(&scores) {
                        *pj = if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() };
                        sum += *pj;
                    }
                    let orow = &mut out.row_mut(seg.q_start + qi)[cols.clone()];
                    for (kj, pj) in p.iter_mut().enumerate() {
                        *pj /= sum;
                        if *pj != 0.0 {
                            let vrow = &vv.row(seg.k_start + kj)[cols.clone()];
                            for (o, x) in orow.iter_mut().zip(vrow) {
                                *o += *pj * x;
                            }
                        }
                    }
                }
                offset += seg.q_len * seg.k_len;
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            },
        )
    }

    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> NodeId {
        let xv = self.value(x);
        let mut out = Tensor::zeros(rows.len(), xv.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// `sum_r weights[r] * CE(softmax(logits[r]), targets[r])` as a `1 x 1` node.
    /// With `smoothing > 0` the target distribution puts `smoothing / V` on every class.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[f64], smoothing: f64) -> NodeId {
        let lv = self.value(logits);
        let (rows, classes) = lv.shape();
        assert_eq!(rows, targets.len());
        assert_eq!(rows, weights.len());
        let mut probs = Tensor::zeros(rows, classes);
        let mut total = 0.0;
        for r in 0..rows {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = probs.row_mut(r);
            let mut sum = 0.0;
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - max).exp();
                sum += *pj;
            }
            let log_z = max + sum.ln();
            for pj in p.iter_mut() {
                *pj /= sum;
            }
            let nll = log_z - row[targets[r]];
            let loss = if smoothing > 0.0 {
                let mean_nll = log_z - row.iter().sum::<f64>() / classes as f64;
                (1.0 - smoothing) * nll + smoothing * mean_nll
            } else {
                nll
            };
            total += weights[r] * loss;
        }
        self.push(
            Tensor::filled(1, 1, total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                smoothing,
                probs,
            },
        )
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    /// Back-propagates `sum_i seed_i * node_i` and returns parameter gradients.
    pub fn backward(&self, seeds: &[(NodeId, f64)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let mut out = Gradients::new(self.params.len());
        let mut start = 0;
        for &(node, w) in seeds {
            let shape = self.value(node).shape();
            accumulate(&mut grads, node, Tensor::filled(shape.0, shape.1, w));
            start = start.max(node.0);
        }
        for idx in (0..=start).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(p) => out.accumulate(*p, g),
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Tensor::zeros(t.rows(), t.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for (d, x) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.shape();
                    let n = g.cols();
                    let mut da = Tensor::zeros(m, k);
                    // dA = dC * op(B)^T
                    gemm(m, n, k, g.data(), false, bv.data(), !trans_b, da.data_mut(), 0.0);
                    accumulate(&mut grads, *a, da);
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    if *trans_b {
                        // B is n x k: dB = dC^T * A
                        gemm(n, m, k, g.data(), true, av.data(), false, db.data_mut(), 0.0);
                    } else {
                        // dB = A^T * dC
                        gemm(k, m, n, av.data(), true, g.data(), false, db.data_mut(), 0.0);
                    }
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow { x, bias } => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, x) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data();
                    let (rows, cols) = g.shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dgain = Tensor::zeros(1, cols);
                    let mut dbias = Tensor::zeros(1, cols);
                    for i in 0..rows {
                        let (gr, xh) = (g.row(i), xhat.row(i));
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..cols {
                            dgain.data_mut()[j] += gr[j] * xh[j];
                            dbias.data_mut()[j] += gr[j];
                            let dxh = gr[j] * gv[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= cols as f64;
                        mean_dxh_xh /= cols as f64;
                        let d = dx.row_mut(i);
                        for j in 0..cols {
                            d[j] = rstd[i] * (gr[j] * gv[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
                Op::Gelu { x } => {
                    let mut dx = g;
                    for (d, &u) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        let inner = GELU_C * (u + 0.044715 * u * u * u);
                        let t = inner.tanh();
                        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * u * u);
                        *d *= 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    layout,
                    probs,
                } => {
                    let (dq, dk, dv) = self.attention_backward(*q, *k, *v, *heads, layout, probs, &g);
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::SelectRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, x) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    smoothing,
                    probs,
                } => {
                    let upstream = g.data()[0];
                    let classes = probs.cols();
                    let mut dl = probs.clone();
                    let uniform = smoothing / classes as f64;
                    for r in 0..dl.rows() {
                        let w = upstream * weights[r];
                        let row = dl.row_mut(r);
                        row[targets[r]] -= 1.0 - smoothing;
                        for x in row.iter_mut() {
                            *x = (*x - uniform) * w;
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        layout: &AttnLayout,
        probs: &[f64],
        g: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let dim = qv.cols();
        let hd = dim / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = Tensor::zeros(qv.rows(), dim);
        let mut dk = Tensor::zeros(kv.rows(), dim);
        let mut dv = Tensor::zeros(vv.rows(), dim);
        let mut dp = Vec::new();
        let mut offset = 0;
        for seg in &layout.segments {
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                for qi in 0..seg.q_len {
                    let p = &probs[offset + qi * seg.k_len..offset + (qi + 1) * seg.k_len];
                    let go = &g.row(seg.q_start + qi)[cols.clone()];
                    dp.clear();
                    let mut dot_pdp = 0.0;
                    for (kj, &pj) in p.iter().enumerate() {
                        if pj == 0.0 {
                            dp.push(0.0);
                            continue;
                        }
                        let vrow = &vv.row(seg.k_start + kj)[cols.clone()];
                        let d = dot(go, vrow);
                        dot_pdp += pj * d;
                        dp.push(d);
                        let dvrow = &mut dv.row_mut(seg.k_start + kj)[cols.clone()];
                        for (a, b) in dvrow.iter_mut().zip(go) {
                            *a += pj * b;
                        }
                    }
                    let qrow = &qv.row(seg.q_start + qi)[cols.clone()];
                    for (kj, &pj) in p.iter().enumerate() {
                        if pj == 0.0 {
                            continue;
                        }
                        let ds = pj * (dp[kj] - dot_pdp) * scale;
                        let krow = &kv.row(seg.k_start + kj)[cols.clone()];
                        let dqrow = &mut dq.row_mut(seg.q_start + qi)[cols.clone()];
                        for (a, b) in dqrow.iter_mut().zip(krow) {
                            *a += ds * b;
                        }
                        let dkrow = &mut dk.row_mut(seg.k_start + kj)[cols.clone()];
                        for (a, b) in dkrow.iter_mut().zip(qrow) {
                            *a += ds * b;
                        }
                    }
                }
                offset += seg.q_len * seg.k_len;
            }
        }
        (dq, dk, dv)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], node: NodeId, g: Tensor) {
    match &mut grads[node.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::normal_init;
    use crate::seed;

    /// Central differences of `loss` with respect to every entry of `param`.
    fn numeric_grad(store: &mut ParamStore, param: ParamId, loss: &dyn Fn(&ParamStore) -> f64) -> Vec<f64> {
        let eps = 1e-6;
        (0..store.get(param).len())
            .map(|i| {
                let orig = store.get(param).data()[i];
                store.get_mut(param).data_mut()[i] = orig + eps;
                let up = loss(store);
                store.get_mut(param).data_mut()[i] = orig - eps;
                let down = loss(store);
                store.get_mut(param).data_mut()[i] = orig;
                (up - down) / (2.0 * eps)
            })
            .collect()
    }

    fn assert_close(analytic: &Tensor, numeric: &[f64]) {
        for (a, n) in analytic.data().iter().zip(numeric) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / denom < 1e-5, "analytic {a} vs numeric {n}");
        }
    }

    fn check(build: &dyn Fn(&mut Graph, &[ParamId]) -> NodeId, shapes: &[(usize, usize)]) {
        let mut rng = seed::rng(42);
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| store.add(format!("p{i}"), normal_init(&mut rng, r, c, 0.7)))
            .collect();
        let loss = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let out = build(&mut g, &ids);
            g.scalar(out)
        };
        let grads = {
            let mut g = Graph::new(&store);
            let out = build(&mut g, &ids);
            g.backward(&[(out, 1.0)])
        };
        for &id in &ids {
            let numeric = numeric_grad(&mut store, id, &loss);
            assert_close(grads.get(id).expect("gradient"), &numeric);
        }
    }

    #[test]
    fn matmul_layernorm_gelu_gradients() {
        check(
            &|g, p| {
                let x = g.param(p[0]);
                let w = g.param(p[1]);
                let b = g.param(p[2]);
                let h = g.linear(x, w, b);
                let gain = g.param(p[3]);
                let beta = g.param(p[4]);
                let h = g.layer_norm(h, gain, beta);
                let h = g.gelu(h);
                let proj = g.param(p[5]);
                let logits = g.matmul(h, proj, true);
                g.cross_entropy(logits, &[1, 3, 0], &[0.5, 0.3, 0.2], 0.1)
            },
            &[(3, 4), (4, 5), (1, 5), (1, 5), (1, 5), (6, 5)],
        );
    }

    #[test]
    fn attention_gradients_with_masks() {
        let layout = Arc::new(AttnLayout {
            segments: vec![
                AttnSegment {
                    q_start: 0,
                    q_len: 3,
                    k_start: 0,
                    k_len: 3,
                },
                AttnSegment {
                    q_start: 3,
                    q_len: 2,
                    k_start: 3,
                    k_len: 2,
                },
            ],
            causal: true,
            key_valid: Some(vec![true, true, false, true, true]),
        });
        check(
            &move |g, p| {
                let q = g.param(p[0]);
                let k = g.param(p[1]);
                let v = g.param(p[2]);
                let a = g.attention(q, k, v, 2, layout.clone());
                let tbl = g.param(p[3]);
                let e = g.gather(tbl, &[1, 0, 1]);
                let rows = g.select_rows(a, &[0, 2, 4]);
                let s = g.add(rows, e);
                let proj = g.param(p[4]);
                let logits = g.matmul(s, proj, false);
                g.cross_entropy(logits, &[0, 2, 1], &[1.0, 1.0, 1.0], 0.0)
            },
            &[(5, 4), (5, 4), (5, 4), (2, 4), (4, 3)],
        );
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor::filled(1, 2, 1.0));
        let k = g.constant(Tensor::from_vec(2, 2, vec![1.0, 0.0, 5.0, 5.0]));
        let v = g.constant(Tensor::from_vec(2, 2, vec![1.0, 2.0, 100.0, 100.0]));
        let layout = Arc::new(AttnLayout {
            segments: vec![AttnSegment {
                q_start: 0,
                q_len: 1,
                k_start: 0,
                k_len: 2,
            }],
            causal: false,
            key_valid: Some(vec![true, false]),
        });
        let out = g.attention(q, k, v, 1, layout);
        assert_eq!(g.value(out).data(), &[1.0, 2.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let l = g.constant(Tensor::zeros(2, 4));
        let ce = g.cross_entropy(l, &[0, 3], &[0.5, 0.5], 0.0);
        assert!((g.scalar(ce) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_identity_without_rng() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::filled(2, 2, 3.0));
        assert_eq!(g.dropout(x, 0.5), x);
        let mut g = Graph::training(&store, seed::rng(1));
        let x = g.constant(Tensor::filled(50, 50, 1.0));
        let y = g.dropout(x, 0.5);
        let zeros = g.value(y).data().iter().filter(|v| **v == 0.0).count();
        assert!(zeros > 1000 && zeros < 1500);
    }
}
