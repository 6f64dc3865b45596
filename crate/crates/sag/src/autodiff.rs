//! A small reverse-mode tape for dense 2-D tensors.
//!
//! Everything the encoder and the decoder-only model need is expressed with
//! the ops below; each op records enough to replay its adjoint during
//! [`Tape::backward`]. Values and gradients are f64 end to end so central
//! finite differences stay a meaningful oracle for the analytic gradients.
//!
//! Shapes are `(rows, cols)`; a scalar is `(1, 1)` and a row vector `(1, n)`.

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    Softplus(Var),
    CausalRowSoftmax(Var),
    RowLogSoftmax(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    MeanRows(Var),
    SumAll(Var),
    L2Normalize(Var),
    Dot(Var, Var),
    Pick(Var, Vec<(usize, usize)>),
    LogSumExpAll(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { rows, cols, value, grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(1, 1, vec![value])
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v), (1, 1));
        self.nodes[v.0].value[0]
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    // ---- forward ops ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(ka, kb, "matmul inner dims {ka} vs {kb}");
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                let arow = &av[i * ka..(i + 1) * ka];
                let orow = &mut out[i * n..(i + 1) * n];
                for (k, &aik) in arow.iter().enumerate() {
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv[k * n..(k + 1) * n];
                    for (o, &b) in orow.iter_mut().zip(brow) {
                        *o += aik * b;
                    }
                }
            }
        }
        self.push(m, n, out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, n));
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(m, n, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, n));
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(m, n, out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, n));
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(m, n, out, Op::Mul(a, b))
    }

    /// `(m, n) + (1, n)` row-broadcast add.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n));
        let rv = self.nodes[row.0].value.clone();
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(idx, x)| x + rv[idx % n])
            .collect();
        self.push(m, n, out, Op::AddRowBroadcast(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(m, n, out, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(m, n, out, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| gelu(x)).collect();
        self.push(m, n, out, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| softplus(x)).collect();
        self.push(m, n, out, Op::Softplus(a))
    }

    /// Row-wise softmax over a square `(t, t)` matrix where row `i` only sees
    /// columns `0..=i`; masked positions come out as zero.
    pub fn causal_row_softmax(&mut self, a: Var) -> Var {
        let (t, t2) = self.shape(a);
        assert_eq!(t, t2, "causal softmax needs a square matrix");
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            let row = &av[i * t..i * t + i + 1];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                out[i * t + j] = e;
                denom += e;
            }
            for j in 0..=i {
                out[i * t + j] /= denom;
            }
        }
        self.push(t, t, out, Op::CausalRowSoftmax(a))
    }

    /// Row-wise log-softmax (max-subtracted).
    pub fn row_log_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        self.push(m, n, out, Op::RowLogSoftmax(a))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.shape(table);
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "row index {id} out of range {v}");
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        self.push(ids.len(), d, out, Op::GatherRows(table, ids.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= n);
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        self.push(m, len, out, Op::SliceCols(a, start, len))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let (pm, pn) = self.shape(p);
                assert_eq!(pm, m);
                let pv = &self.nodes[p.0].value;
                out.extend_from_slice(&pv[i * pn..(i + 1) * pn]);
            }
        }
        self.push(m, total, out, Op::ConcatCols(parts.to_vec()))
    }

    /// Same data, new shape (row-major layout preserved).
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(m * n, rows * cols, "reshape size mismatch");
        let value = self.nodes[a.0].value.clone();
        self.push(rows, cols, value, Op::Reshape(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.push(n, m, out, Op::Transpose(a))
    }

    /// Column means: `(m, n) -> (1, n)`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        assert!(m > 0);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += av[i * n + j];
            }
        }
        for x in &mut out {
            *x /= m as f64;
        }
        self.push(1, n, out, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (m * n) as f64)
    }

    /// Unit-normalize a row vector.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(m, 1, "l2_normalize expects a row vector");
        let norm = self.nodes[a.0].value.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 0.0, "cannot normalize a zero vector");
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x / norm).collect();
        self.push(1, n, out, Op::L2Normalize(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(a), self.shape(b));
        let _ = n;
        let s: f64 = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(1, 1, vec![s], Op::Dot(a, b))
    }

    /// Selected entries as a column vector, in the given order.
    pub fn pick(&mut self, a: Var, positions: &[(usize, usize)]) -> Var {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(positions.len());
        for &(i, j) in positions {
            assert!(i < m && j < n);
            out.push(av[i * n + j]);
        }
        self.push(positions.len(), 1, out, Op::Pick(a, positions.to_vec()))
    }

    /// log(Σ exp(x)) over all entries, max-subtracted.
    pub fn logsumexp_all(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let mx = av.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + av.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
        self.push(1, 1, vec![lse], Op::LogSumExpAll(a))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, n));
        assert_eq!(self.shape(beta), (1, n));
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * inv * gv[j] + bv[j];
            }
        }
        self.push(m, n, out, Op::LayerNorm { x, gamma, beta, eps })
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulate gradients of a scalar `root` into every node. Nodes are
    /// visited in reverse creation order, which is a valid topological order
    /// because ops only reference earlier nodes.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[root.0].grad[0] = 1.0;

        for idx in (0..=root.0).rev() {
            let op = self.nodes[idx].op.clone();
            let grad = std::mem::take(&mut self.nodes[idx].grad);
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(a);
                    let (_, n) = self.shape(b);
                    // dA = dC Bᵀ, with Bᵀ materialized so the inner loop is
                    // the same contiguous-axpy shape as the forward pass
                    {
                        let bv = &self.nodes[b.0].value;
                        let mut bt = vec![0.0; n * k];
                        for kk in 0..k {
                            for j in 0..n {
                                bt[j * k + kk] = bv[kk * n + j];
                            }
                        }
                        let ga = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            let grow = &grad[i * n..(i + 1) * n];
                            let garow = &mut ga[i * k..(i + 1) * k];
                            for (j, &g) in grow.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                let btrow = &bt[j * k..(j + 1) * k];
                                for (ga_k, &bt_k) in garow.iter_mut().zip(btrow) {
                                    *ga_k += g * bt_k;
                                }
                            }
                        }
                    }
                    // dB = Aᵀ dC
                    {
                        let av = self.nodes[a.0].value.clone();
                        let gb = &mut self.nodes[b.0].grad;
                        for i in 0..m {
                            let arow = &av[i * k..(i + 1) * k];
                            let grow = &grad[i * n..(i + 1) * n];
                            for (kk, &aik) in arow.iter().enumerate() {
                                if aik == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[kk * n..(kk + 1) * n];
                                for (gbj, &gj) in gbrow.iter_mut().zip(grow) {
                                    *gbj += aik * gj;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (g, d) in self.nodes[a.0].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    for (g, d) in self.nodes[b.0].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                }
                Op::Sub(a, b) => {
                    for (g, d) in self.nodes[a.0].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    for (g, d) in self.nodes[b.0].grad.iter_mut().zip(&grad) {
                        *g -= d;
                    }
                }
                Op::Mul(a, b) => {
                    let bv = self.nodes[b.0].value.clone();
                    for ((g, d), v) in self.nodes[a.0].grad.iter_mut().zip(&grad).zip(&bv) {
                        *g += d * v;
                    }
                    let av = self.nodes[a.0].value.clone();
                    for ((g, d), v) in self.nodes[b.0].grad.iter_mut().zip(&grad).zip(&av) {
                        *g += d * v;
                    }
                }
                Op::AddRowBroadcast(a, row) => {
                    let (_, n) = self.shape(a);
                    for (g, d) in self.nodes[a.0].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                    let gr = &mut self.nodes[row.0].grad;
                    for (idx2, d) in grad.iter().enumerate() {
                        gr[idx2 % n] += d;
                    }
                }
                Op::Scale(a, c) => {
                    for (g, d) in self.nodes[a.0].grad.iter_mut().zip(&grad) {
                        *g += c * d;
                    }
                }
                Op::Tanh(a) => {
                    let yv = self.nodes[idx].value.clone();
                    for ((g, d), y) in self.nodes[a.0].grad.iter_mut().zip(&grad).zip(&yv) {
                        *g += d * (1.0 - y * y);
                    }
                }
                Op::Gelu(a) => {
                    let xv = self.nodes[a.0].value.clone();
                    for ((g, d), &x) in self.nodes[a.0].grad.iter_mut().zip(&grad).zip(xv.iter()) {
                        *g += d * gelu_derivative(x);
                    }
                }
                Op::Softplus(a) => {
                    let xv = self.nodes[a.0].value.clone();
                    for ((g, d), &x) in self.nodes[a.0].grad.iter_mut().zip(&grad).zip(xv.iter()) {
                        *g += d * sigmoid(x);
                    }
                }
                Op::CausalRowSoftmax(a) => {
                    let (t, _) = self.shape(a);
                    let yv = self.nodes[idx].value.clone();
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..t {
                        let mut dotv = 0.0;
                        for j in 0..=i {
                            dotv += yv[i * t + j] * grad[i * t + j];
                        }
                        for j in 0..=i {
                            ga[i * t + j] += yv[i * t + j] * (grad[i * t + j] - dotv);
                        }
                    }
                }
                Op::RowLogSoftmax(a) => {
                    let (m, n) = self.shape(a);
                    let yv = self.nodes[idx].value.clone();
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..m {
                        let dsum: f64 = grad[i * n..(i + 1) * n].iter().sum();
                        for j in 0..n {
                            let p = yv[i * n + j].exp();
                            ga[i * n + j] += grad[i * n + j] - p * dsum;
                        }
                    }
                }
                Op::GatherRows(table, ids) => {
                    let (_, d) = self.shape(table);
                    let gt = &mut self.nodes[table.0].grad;
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += grad[r * d + j];
                        }
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let (m, n) = self.shape(a);
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..m {
                        for j in 0..len {
                            ga[i * n + start + j] += grad[i * len + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let m = self.shape(parts[0]).0;
                    let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
                    let mut offset = 0;
                    for &p in &parts {
                        let (_, pn) = self.shape(p);
                        let gp = &mut self.nodes[p.0].grad;
                        for i in 0..m {
                            for j in 0..pn {
                                gp[i * pn + j] += grad[i * total + offset + j];
                            }
                        }
                        offset += pn;
                    }
                }
                Op::Reshape(a) => {
                    for (g, d) in self.nodes[a.0].grad.iter_mut().zip(&grad) {
                        *g += d;
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = self.shape(a);
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += grad[j * m + i];
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let (m, n) = self.shape(a);
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += grad[j] / m as f64;
                        }
                    }
                }
                Op::SumAll(a) => {
                    for g in self.nodes[a.0].grad.iter_mut() {
                        *g += grad[0];
                    }
                }
                Op::L2Normalize(a) => {
                    let norm = self.nodes[a.0]
                        .value
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt();
                    let yv = self.nodes[idx].value.clone();
                    let ydotg: f64 = yv.iter().zip(&grad).map(|(y, d)| y * d).sum();
                    for ((g, d), y) in self.nodes[a.0].grad.iter_mut().zip(&grad).zip(&yv) {
                        *g += (d - y * ydotg) / norm;
                    }
                }
                Op::Dot(a, b) => {
                    let bv = self.nodes[b.0].value.clone();
                    for (g, v) in self.nodes[a.0].grad.iter_mut().zip(&bv) {
                        *g += grad[0] * v;
                    }
                    let av = self.nodes[a.0].value.clone();
                    for (g, v) in self.nodes[b.0].grad.iter_mut().zip(&av) {
                        *g += grad[0] * v;
                    }
                }
                Op::Pick(a, positions) => {
                    let (_, n) = self.shape(a);
                    let ga = &mut self.nodes[a.0].grad;
                    for (k, &(i, j)) in positions.iter().enumerate() {
                        ga[i * n + j] += grad[k];
                    }
                }
                Op::LogSumExpAll(a) => {
                    let lse = self.nodes[idx].value[0];
                    let av = self.nodes[a.0].value.clone();
                    for (g, &x) in self.nodes[a.0].grad.iter_mut().zip(av.iter()) {
                        *g += grad[0] * (x - lse).exp();
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (m, n) = self.shape(x);
                    let xv = self.nodes[x.0].value.clone();
                    let gv = self.nodes[gamma.0].value.clone();
                    for i in 0..m {
                        let row = &xv[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() / n as f64;
                        let var =
                            row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                        let dy = &grad[i * n..(i + 1) * n];

                        {
                            let gg = &mut self.nodes[gamma.0].grad;
                            for j in 0..n {
                                gg[j] += dy[j] * xhat[j];
                            }
                        }
                        {
                            let gb = &mut self.nodes[beta.0].grad;
                            for j in 0..n {
                                gb[j] += dy[j];
                            }
                        }
                        let dxhat: Vec<f64> = (0..n).map(|j| dy[j] * gv[j]).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        let gx = &mut self.nodes[x.0].grad;
                        for j in 0..n {
                            gx[i * n + j] +=
                                inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        }
                    }
                }
            }
            self.nodes[idx].grad = grad;
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

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Smooth (tanh-form) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Central finite-difference gradient of `f` at `at`. Independent of the
/// tape: it only evaluates `f`, so it stays a valid oracle for any analytic
/// gradient path.
pub fn central_difference_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    at: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut point = at.to_vec();
    let mut grad = vec![0.0; at.len()];
    for i in 0..at.len() {
        let orig = point[i];
        point[i] = orig + h;
        let fp = f(&point);
        point[i] = orig - h;
        let fm = f(&point);
        point[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// `|a-b| / max(|a|+|b|, floor)`, the usual gradient-check distance.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}
