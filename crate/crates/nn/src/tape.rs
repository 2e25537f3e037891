//! Minimal reverse-mode automatic differentiation over matrices.
//!
//! A `Tape` records one computation graph, typically one training step.
//! Parameters live in a `ParamStore`; injecting a parameter copies its
//! current value onto the tape, and `backward` plus
//! `accumulate_param_grads` routes gradients back into the store.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::{matmul, matmul_nt, matmul_tn, matmul_tn_into, Matrix};

pub type NodeId = usize;

const LN_EPS: f64 = 1e-12;

enum Op {
    Leaf,
    Param(usize),
    MatMul(NodeId, NodeId),
    /// A * B^T; used for attention scores.
    MatMulNt(NodeId, NodeId),
    /// Broadcast-add a [1, n] row vector to every row.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    /// Per-row softmax; the node value doubles as the saved output.
    SoftmaxRows(NodeId),
    /// Per-row layer norm with scale/shift; saves (x_hat, inv_std).
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        x_hat: Matrix,
        inv_std: Vec<f64>,
    },
    /// Sum over rows of softmax cross-entropy against integer targets;
    /// value is [1, 1]. Saves the softmax probabilities.
    CeLossRows {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Matrix,
    },
    /// Gather rows of a parameter table by id (embedding lookup).
    EmbedRows { table: NodeId, ids: Vec<usize> },
    /// Gather arbitrary rows of an activation.
    RowGather { x: NodeId, rows: Vec<usize> },
    /// Mean over rows: [m, n] -> [1, n].
    MeanRows(NodeId),
    /// Inverted dropout; mask entries are 0 or 1/(1-p).
    Dropout { x: NodeId, mask: Matrix },
    /// Gradient reversal: identity forward, -lambda * g backward.
    Grl { x: NodeId, lambda: f64 },
    ColSlice { x: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
}

/// Named parameter tensors with gradient buffers.
#[derive(Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.grads.push(Matrix::zeros(value.rows, value.cols));
        self.values.push(value);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Matrix {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn grad(&self, id: usize) -> &Matrix {
        &self.grads[id]
    }

    pub fn grad_mut(&mut self, id: usize) -> &mut Matrix {
        &mut self.grads[id]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn param_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Flat export in insertion order, for checkpoints.
    pub fn export(&self) -> Vec<(String, Vec<f64>)> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.data.clone()))
            .collect()
    }

    pub fn import(&mut self, params: &[(String, Vec<f64>)]) -> Result<(), String> {
        for (name, data) in params {
            let id = *self
                .index
                .get(name)
                .ok_or_else(|| format!("unknown parameter '{name}' in checkpoint"))?;
            if self.values[id].len() != data.len() {
                return Err(format!(
                    "parameter '{name}' has {} values, checkpoint carries {}",
                    self.values[id].len(),
                    data.len()
                ));
            }
            self.values[id].data.copy_from_slice(data);
        }
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id].grad.as_ref()
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Copy a parameter's current value onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: usize) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(&self.nodes[a].value, &self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul_nt(&self.nodes[a].value, &self.nodes[b].value);
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let xm = &self.nodes[x].value;
        let bm = &self.nodes[bias].value;
        assert_eq!(bm.rows, 1);
        assert_eq!(bm.cols, xm.cols);
        let mut v = xm.clone();
        for r in 0..v.rows {
            for (xv, bv) in v.row_mut(r).iter_mut().zip(&bm.data) {
                *xv += bv;
            }
        }
        self.push(v, Op::AddRow(x, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let am = &self.nodes[a].value;
        let bm = &self.nodes[b].value;
        assert_eq!((am.rows, am.cols), (bm.rows, bm.cols));
        let mut v = am.clone();
        for (x, y) in v.data.iter_mut().zip(&bm.data) {
            *x += y;
        }
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        v.data.iter_mut().for_each(|d| *d *= c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        v.data.iter_mut().for_each(|d| *d = d.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let v = softmax_rows_value(&self.nodes[x].value);
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xm = &self.nodes[x].value;
        let gm = &self.nodes[gamma].value;
        let bm = &self.nodes[beta].value;
        let (v, x_hat, inv_std) = layer_norm_value(xm, gm, bm);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
            },
        )
    }

    /// Sum of per-row softmax cross-entropy losses; result is [1, 1].
    pub fn ce_loss_rows(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let lm = &self.nodes[logits].value;
        assert_eq!(lm.rows, targets.len());
        let probs = softmax_rows_value(lm);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            loss -= probs.row(r)[t].max(1e-300).ln();
        }
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CeLossRows {
                logits,
                targets,
                probs,
            },
        )
    }

    pub fn embed_rows(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let tm = &self.nodes[table].value;
        let mut v = Matrix::zeros(ids.len(), tm.cols);
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(tm.row(id));
        }
        self.push(
            v,
            Op::EmbedRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn row_gather(&mut self, x: NodeId, rows: &[usize]) -> NodeId {
        let xm = &self.nodes[x].value;
        let mut v = Matrix::zeros(rows.len(), xm.cols);
        for (r, &src) in rows.iter().enumerate() {
            v.row_mut(r).copy_from_slice(xm.row(src));
        }
        self.push(
            v,
            Op::RowGather {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x].value;
        let mut v = Matrix::zeros(1, xm.cols);
        for r in 0..xm.rows {
            for (o, i) in v.data.iter_mut().zip(xm.row(r)) {
                *o += i;
            }
        }
        let inv = 1.0 / xm.rows as f64;
        v.data.iter_mut().for_each(|d| *d *= inv);
        self.push(v, Op::MeanRows(x))
    }

    /// Inverted dropout in train mode; pass p = 0 to disable.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut ChaCha8Rng) -> NodeId {
        if p == 0.0 {
            return x;
        }
        let xm = &self.nodes[x].value;
        let keep = 1.0 / (1.0 - p);
        let mask = Matrix::from_vec(
            xm.rows,
            xm.cols,
            (0..xm.len())
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect(),
        );
        let mut v = xm.clone();
        for (d, m) in v.data.iter_mut().zip(&mask.data) {
            *d *= m;
        }
        self.push(v, Op::Dropout { x, mask })
    }

    /// Identity forward; multiplies the gradient by -lambda on the way back.
    pub fn grl(&mut self, x: NodeId, lambda: f64) -> NodeId {
        let v = self.nodes[x].value.clone();
        self.push(v, Op::Grl { x, lambda })
    }

    pub fn col_slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xm = &self.nodes[x].value;
        let mut v = Matrix::zeros(xm.rows, len);
        for r in 0..xm.rows {
            v.row_mut(r).copy_from_slice(&xm.row(r)[start..start + len]);
        }
        self.push(v, Op::ColSlice { x, start, len })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let pm = &self.nodes[p].value;
            assert_eq!(pm.rows, rows);
            for r in 0..rows {
                v.row_mut(r)[off..off + pm.cols].copy_from_slice(pm.row(r));
            }
            off += pm.cols;
        }
        self.push(v, Op::ConcatCols(parts))
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        let cols = self.nodes[parts[0]].value.cols;
        let rows: usize = parts.iter().map(|&p| self.nodes[p].value.rows).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let pm = &self.nodes[p].value;
            assert_eq!(pm.cols, cols);
            for r in 0..pm.rows {
                v.row_mut(off + r).copy_from_slice(pm.row(r));
            }
            off += pm.rows;
        }
        self.push(v, Op::ConcatRows(parts))
    }

    fn add_grad(&mut self, id: NodeId, g: Matrix) {
        match &mut self.nodes[id].grad {
            Some(acc) => {
                for (a, b) in acc.data.iter_mut().zip(&g.data) {
                    *a += b;
                }
            }
            None => self.nodes[id].grad = Some(g),
        }
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss].value.len(), 1, "backward needs a scalar loss");
        self.nodes[loss].grad = Some(Matrix::from_vec(1, 1, vec![1.0]));
        for id in (0..=loss).rev() {
            let Some(grad) = self.nodes[id].grad.clone() else {
                continue;
            };
            // borrow dance: read-only info first, then accumulate
            match &self.nodes[id].op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = matmul_nt(&grad, &self.nodes[b].value);
                    let mut db = Matrix::zeros(self.nodes[b].value.rows, self.nodes[b].value.cols);
                    matmul_tn_into(&self.nodes[a].value, &grad, &mut db);
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::MatMulNt(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = matmul(&grad, &self.nodes[b].value);
                    let db = matmul_tn(&grad, &self.nodes[a].value);
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::AddRow(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    let mut db = Matrix::zeros(1, grad.cols);
                    for r in 0..grad.rows {
                        for (o, g) in db.data.iter_mut().zip(grad.row(r)) {
                            *o += g;
                        }
                    }
                    self.add_grad(x, grad);
                    self.add_grad(bias, db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, grad.clone());
                    self.add_grad(b, grad);
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    let mut g = grad;
                    g.data.iter_mut().for_each(|d| *d *= c);
                    self.add_grad(x, g);
                }
                Op::Relu(x) => {
                    let x = *x;
                    let mut g = grad;
                    for (gv, xv) in g.data.iter_mut().zip(&self.nodes[x].value.data) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    self.add_grad(x, g);
                }
                Op::SoftmaxRows(x) => {
                    let x = *x;
                    let y = &self.nodes[id].value;
                    let mut g = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = grad.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in g.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    self.add_grad(x, g);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let gm = self.nodes[gamma].value.clone();
                    let n = x_hat.cols as f64;
                    let mut dx = Matrix::zeros(x_hat.rows, x_hat.cols);
                    let mut dgamma = Matrix::zeros(1, x_hat.cols);
                    let mut dbeta = Matrix::zeros(1, x_hat.cols);
                    for r in 0..x_hat.rows {
                        let xr = x_hat.row(r);
                        let gr = grad.row(r);
                        // dj through scale/shift
                        for ((dg, &gv), &xh) in dgamma.data.iter_mut().zip(gr).zip(xr) {
                            *dg += gv * xh;
                        }
                        for (db, &gv) in dbeta.data.iter_mut().zip(gr) {
                            *db += gv;
                        }
                        // dx_hat = g * gamma
                        let dx_hat: Vec<f64> = gr.iter().zip(&gm.data).map(|(g, gm)| g * gm).collect();
                        let sum: f64 = dx_hat.iter().sum();
                        let dot: f64 = dx_hat.iter().zip(xr).map(|(d, x)| d * x).sum();
                        let is = inv_std[r];
                        for ((o, &dh), &xh) in dx.row_mut(r).iter_mut().zip(&dx_hat).zip(xr) {
                            *o = is / n * (n * dh - sum - xh * dot);
                        }
                    }
                    self.add_grad(x, dx);
                    self.add_grad(gamma, dgamma);
                    self.add_grad(beta, dbeta);
                }
                Op::CeLossRows {
                    logits,
                    targets,
                    probs,
                } => {
                    let logits = *logits;
                    let scale = grad.data[0];
                    let mut g = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        g.row_mut(r)[t] -= 1.0;
                    }
                    g.data.iter_mut().for_each(|d| *d *= scale);
                    self.add_grad(logits, g);
                }
                Op::EmbedRows { table, ids } => {
                    let table = *table;
                    let tm = &self.nodes[table].value;
                    let mut g = Matrix::zeros(tm.rows, tm.cols);
                    for (r, &id2) in ids.clone().iter().enumerate() {
                        for (o, gv) in g.row_mut(id2).iter_mut().zip(grad.row(r)) {
                            *o += gv;
                        }
                    }
                    self.add_grad(table, g);
                }
                Op::RowGather { x, rows } => {
                    let x = *x;
                    let xm = &self.nodes[x].value;
                    let mut g = Matrix::zeros(xm.rows, xm.cols);
                    for (r, &src) in rows.clone().iter().enumerate() {
                        for (o, gv) in g.row_mut(src).iter_mut().zip(grad.row(r)) {
                            *o += gv;
                        }
                    }
                    self.add_grad(x, g);
                }
                Op::MeanRows(x) => {
                    let x = *x;
                    let xm = &self.nodes[x].value;
                    let inv = 1.0 / xm.rows as f64;
                    let mut g = Matrix::zeros(xm.rows, xm.cols);
                    for r in 0..xm.rows {
                        for (o, gv) in g.row_mut(r).iter_mut().zip(&grad.data) {
                            *o = gv * inv;
                        }
                    }
                    self.add_grad(x, g);
                }
                Op::Dropout { x, mask } => {
                    let x = *x;
                    let mut g = grad;
                    for (gv, m) in g.data.iter_mut().zip(&mask.data) {
                        *gv *= m;
                    }
                    self.add_grad(x, g);
                }
                Op::Grl { x, lambda } => {
                    let (x, lambda) = (*x, *lambda);
                    let mut g = grad;
                    g.data.iter_mut().for_each(|d| *d *= -lambda);
                    self.add_grad(x, g);
                }
                Op::ColSlice { x, start, len } => {
                    let (x, start, len) = (*x, *start, *len);
                    let xm = &self.nodes[x].value;
                    let mut g = Matrix::zeros(xm.rows, xm.cols);
                    for r in 0..xm.rows {
                        g.row_mut(r)[start..start + len].copy_from_slice(grad.row(r));
                    }
                    self.add_grad(x, g);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let cols = self.nodes[p].value.cols;
                        let rows = self.nodes[p].value.rows;
                        let mut g = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            g.row_mut(r).copy_from_slice(&grad.row(r)[off..off + cols]);
                        }
                        self.add_grad(p, g);
                        off += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let rows = self.nodes[p].value.rows;
                        let cols = self.nodes[p].value.cols;
                        let mut g = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            g.row_mut(r).copy_from_slice(grad.row(off + r));
                        }
                        self.add_grad(p, g);
                        off += rows;
                    }
                }
            }
        }
    }

    /// Add tape gradients of every `Param` node into the store's buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Op::Param(id), Some(grad)) = (&node.op, &node.grad) {
                let acc = store.grad_mut(*id);
                for (a, g) in acc.data.iter_mut().zip(&grad.data) {
                    *a += g;
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

pub fn softmax_rows_value(x: &Matrix) -> Matrix {
    let mut v = x.clone();
    for r in 0..v.rows {
        let row = v.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for d in row.iter_mut() {
            *d = (*d - max).exp();
            sum += *d;
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|d| *d *= inv);
    }
    v
}

pub fn layer_norm_value(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> (Matrix, Matrix, Vec<f64>) {
    let n = x.cols as f64;
    let mut out = Matrix::zeros(x.rows, x.cols);
    let mut x_hat = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for (((o, xh), &xv), (g, b)) in out
            .row_mut(r)
            .iter_mut()
            .zip(x_hat.row_mut(r).iter_mut())
            .zip(row)
            .zip(gamma.data.iter().zip(&beta.data))
        {
            *xh = (xv - mean) * is;
            *o = *xh * g + b;
        }
    }
    (out, x_hat, inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>() - 0.5).collect())
    }

    /// Central finite differences against the analytic gradient for a graph
    /// that exercises every op.
    #[test]
    fn finite_difference_agreement_all_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        let table = store.add("table", rand_matrix(5, 6, &mut rng));
        let w = store.add("w", rand_matrix(6, 4, &mut rng));
        let b = store.add("b", rand_matrix(1, 4, &mut rng));
        let gamma = store.add("gamma", rand_matrix(1, 6, &mut rng));
        let beta = store.add("beta", rand_matrix(1, 6, &mut rng));
        let head = store.add("head", rand_matrix(4, 3, &mut rng));

        let ids = vec![0usize, 2, 4, 1];
        let targets = vec![1usize, 0, 2, 2];

        let loss_fn = |store: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let t = tape.param(store, table);
            let wn = tape.param(store, w);
            let bn = tape.param(store, b);
            let gn = tape.param(store, gamma);
            let be = tape.param(store, beta);
            let hn = tape.param(store, head);
            let x = tape.embed_rows(t, &ids);
            let xs = tape.col_slice(x, 0, 3);
            let xs2 = tape.col_slice(x, 3, 3);
            let sm = tape.softmax_rows(xs);
            let scores = tape.matmul_nt(sm, xs2);
            let att = tape.softmax_rows(scores);
            let ctx = tape.matmul(att, xs2);
            let cat = tape.concat_cols(vec![sm, ctx]);
            let ln = tape.layer_norm(cat, gn, be);
            let h = tape.matmul(ln, wn);
            let hb = tape.add_row(h, bn);
            let hr = tape.relu(hb);
            let logits = tape.matmul(hr, hn);
            let pooled = tape.mean_rows(logits);
            let row0 = tape.row_gather(logits, &[0, 2]);
            let l1 = tape.ce_loss_rows(logits, targets.clone());
            let l2 = tape.ce_loss_rows(pooled, vec![0]);
            let l3 = tape.ce_loss_rows(row0, vec![1, 2]);
            let l12 = tape.add(l1, l2);
            let scaled = tape.scale(l3, 0.5);
            let total = tape.add(l12, scaled);
            tape.value(total).data[0]
        };

        // analytic gradients
        let mut tape = Tape::new();
        let t = tape.param(&store, table);
        let wn = tape.param(&store, w);
        let bn = tape.param(&store, b);
        let gn = tape.param(&store, gamma);
        let be = tape.param(&store, beta);
        let hn = tape.param(&store, head);
        let x = tape.embed_rows(t, &ids);
        let xs = tape.col_slice(x, 0, 3);
        let xs2 = tape.col_slice(x, 3, 3);
        let sm = tape.softmax_rows(xs);
        let scores = tape.matmul_nt(sm, xs2);
        let att = tape.softmax_rows(scores);
        let ctx = tape.matmul(att, xs2);
        let cat = tape.concat_cols(vec![sm, ctx]);
        let ln = tape.layer_norm(cat, gn, be);
        let h = tape.matmul(ln, wn);
        let hb = tape.add_row(h, bn);
        let hr = tape.relu(hb);
        let logits = tape.matmul(hr, hn);
        let pooled = tape.mean_rows(logits);
        let row0 = tape.row_gather(logits, &[0, 2]);
        let l1 = tape.ce_loss_rows(logits, targets.clone());
        let l2 = tape.ce_loss_rows(pooled, vec![0]);
        let l3 = tape.ce_loss_rows(row0, vec![1, 2]);
        let l12 = tape.add(l1, l2);
        let scaled = tape.scale(l3, 0.5);
        let total = tape.add(l12, scaled);
        tape.backward(total);
        store.zero_grads();
        tape.accumulate_param_grads(&mut store);

        let h = 1e-6;
        for pid in 0..store.len() {
            for i in 0..store.value(pid).len() {
                let orig = store.value(pid).data[i];
                store.value_mut(pid).data[i] = orig + h;
                let up = loss_fn(&store);
                store.value_mut(pid).data[i] = orig - h;
                let down = loss_fn(&store);
                store.value_mut(pid).data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = store.grad(pid).data[i];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((an - fd) / denom).abs() < 1e-4,
                    "param {} [{i}]: analytic {an}, fd {fd}",
                    store.name(pid)
                );
            }
        }
    }

    #[test]
    fn grl_is_identity_forward_and_reverses_backward() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_vec(2, 2, vec![0.3, -0.2, 0.5, 0.7]));
        for lambda in [0.0, 0.5, 1.0] {
            let grad_with = |lam: Option<f64>| -> Matrix {
                let mut tape = Tape::new();
                let wn = tape.param(&store, w);
                let x = tape.leaf(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
                let z = tape.matmul(x, wn);
                let z2 = match lam {
                    Some(l) => tape.grl(z, l),
                    None => z,
                };
                let loss = tape.ce_loss_rows(z2, vec![0]);
                tape.backward(loss);
                // forward identity check
                assert_eq!(tape.value(z2).data, tape.value(z).data);
                tape.grad(wn).unwrap().clone()
            };
            let with = grad_with(Some(lambda));
            let without = grad_with(None);
            for (a, b) in with.data.iter().zip(&without.data) {
                assert!((a - (-lambda) * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unused_parameter_gets_zero_grad() {
        let mut store = ParamStore::new();
        let used = store.add("used", Matrix::from_vec(1, 2, vec![0.5, -0.5]));
        let unused = store.add("unused", Matrix::from_vec(1, 2, vec![1.0, 1.0]));
        let mut tape = Tape::new();
        let u = tape.param(&store, used);
        let _v = tape.param(&store, unused);
        let loss = tape.ce_loss_rows(u, vec![0]);
        tape.backward(loss);
        store.zero_grads();
        tape.accumulate_param_grads(&mut store);
        assert!(store.grad(used).data.iter().any(|g| *g != 0.0));
        assert!(store.grad(unused).data.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn sum_of_losses_gradient_is_sum_of_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_vec(2, 3, vec![0.1, 0.4, -0.3, 0.2, 0.0, 0.6]));
        let x = Matrix::from_vec(1, 2, vec![1.0, -1.5]);

        let grad_of = |targets: &[usize]| -> Matrix {
            let mut tape = Tape::new();
            let wn = tape.param(&store, w);
            let xn = tape.leaf(x.clone());
            let z = tape.matmul(xn, wn);
            let mut total = None;
            for &t in targets {
                let l = tape.ce_loss_rows(z, vec![t]);
                total = Some(match total {
                    None => l,
                    Some(acc) => tape.add(acc, l),
                });
            }
            tape.backward(total.unwrap());
            tape.grad(wn).unwrap().clone()
        };
        let g0 = grad_of(&[0]);
        let g2 = grad_of(&[2]);
        let gsum = grad_of(&[0, 2]);
        for ((a, b), s) in g0.data.iter().zip(&g2.data).zip(&gsum.data) {
            assert!((a + b - s).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Matrix::from_vec(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.5, 9.0]);
        let gamma = Matrix::from_vec(1, 4, vec![1.0; 4]);
        let beta = Matrix::from_vec(1, 4, vec![0.0; 4]);
        let (_, x_hat, _) = layer_norm_value(&x, &gamma, &beta);
        for r in 0..2 {
            let row = x_hat.row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Matrix::from_vec(3, 5, (0..15).map(|i| (i as f64) * 0.7 - 5.0).collect());
        let s = softmax_rows_value(&x);
        for r in 0..3 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
