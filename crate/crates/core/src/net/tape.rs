//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices of f64. Every operation pushes a node onto a tape; `backward`
//! walks the tape in reverse and accumulates gradients for every node.
//!
//! The tape is rebuilt per evaluation; parameters enter as leaves whose
//! gradients are read back after the sweep. Freezing a subgraph is done by
//! pushing the frozen values as fresh leaves and ignoring their gradients.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum TapeError {
    #[error("shape mismatch: left {left:?}, right {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("slice out of range in {op}: start {start} len {len} of {size}")]
    SliceRange {
        op: &'static str,
        start: usize,
        len: usize,
        size: usize,
    },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub usize);

type BackFn = Box<dyn Fn(&Tape, &[f64], &mut [Vec<f64>])>;

struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, back: Option<BackFn>) -> TensorId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            back,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Leaf node. Gradients are accumulated for every leaf; the caller
    /// decides which ones to read.
    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> TensorId {
        self.push(rows, cols, value, None)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                left: (m, ka),
                right: (kb, n),
            });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for k in 0..ka {
                let x = av[i * ka + k];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[k * n..(k + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += x * b;
                }
            }
        }
        let back: BackFn = Box::new(move |t, g, grads| {
            let av = t.value(a);
            let bv = t.value(b);
            // dA = G B^T
            {
                let ga = &mut grads[a.0];
                for i in 0..m {
                    for k in 0..ka {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv[k * n + j];
                        }
                        ga[i * ka + k] += s;
                    }
                }
            }
            // dB = A^T G
            let gb = &mut grads[b.0];
            for k in 0..ka {
                for j in 0..n {
                    let mut s = 0.0;
                    for i in 0..m {
                        s += av[i * ka + k] * g[i * n + j];
                    }
                    gb[k * n + j] += s;
                }
            }
        });
        Ok(self.push(m, n, out, Some(back)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (m, n) = self.shape(a);
        if self.shape(b) != (m, n) {
            return Err(TapeError::ShapeMismatch {
                op: "add",
                left: (m, n),
                right: self.shape(b),
            });
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let back: BackFn = Box::new(move |_, g, grads| {
            for (ga, gi) in grads[a.0].iter_mut().zip(g) {
                *ga += gi;
            }
            for (gb, gi) in grads[b.0].iter_mut().zip(g) {
                *gb += gi;
            }
        });
        Ok(self.push(m, n, out, Some(back)))
    }

    /// Adds a `[1, n]` row vector to every row of `a`.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId, TapeError> {
        let (m, n) = self.shape(a);
        let rs = self.shape(row);
        if rs != (1, n) {
            return Err(TapeError::ShapeMismatch {
                op: "add_row",
                left: (m, n),
                right: rs,
            });
        }
        let rv = self.value(row).to_vec();
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + rv[i % n])
            .collect();
        let back: BackFn = Box::new(move |_, g, grads| {
            for (ga, gi) in grads[a.0].iter_mut().zip(g) {
                *ga += gi;
            }
            let gr = &mut grads[row.0];
            for (i, gi) in g.iter().enumerate() {
                gr[i % n] += gi;
            }
        });
        Ok(self.push(m, n, out, Some(back)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let (m, n) = self.shape(a);
        if self.shape(b) != (m, n) {
            return Err(TapeError::ShapeMismatch {
                op: "mul",
                left: (m, n),
                right: self.shape(b),
            });
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let back: BackFn = Box::new(move |t, g, grads| {
            let av = t.value(a).to_vec();
            let bv = t.value(b).to_vec();
            for ((ga, gi), y) in grads[a.0].iter_mut().zip(g).zip(&bv) {
                *ga += gi * y;
            }
            for ((gb, gi), x) in grads[b.0].iter_mut().zip(g).zip(&av) {
                *gb += gi * x;
            }
        });
        Ok(self.push(m, n, out, Some(back)))
    }

    /// Broadcast-multiplies every row of `a` by a `[1, n]` row vector.
    pub fn mul_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId, TapeError> {
        let (m, n) = self.shape(a);
        let rs = self.shape(row);
        if rs != (1, n) {
            return Err(TapeError::ShapeMismatch {
                op: "mul_row",
                left: (m, n),
                right: rs,
            });
        }
        let rv = self.value(row).to_vec();
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x * rv[i % n])
            .collect();
        let back: BackFn = Box::new(move |t, g, grads| {
            let av = t.value(a).to_vec();
            let rv = t.value(row).to_vec();
            for (i, gi) in g.iter().enumerate() {
                grads[a.0][i] += gi * rv[i % n];
            }
            let gr = &mut grads[row.0];
            for (i, gi) in g.iter().enumerate() {
                gr[i % n] += gi * av[i];
            }
        });
        Ok(self.push(m, n, out, Some(back)))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * c).collect();
        let back: BackFn = Box::new(move |_, g, grads| {
            for (ga, gi) in grads[a.0].iter_mut().zip(g) {
                *ga += gi * c;
            }
        });
        self.push(m, n, out, Some(back))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let back: BackFn = Box::new(move |_, g, grads| {
            let ga = &mut grads[a.0];
            for i in 0..m {
                for j in 0..n {
                    ga[i * n + j] += g[j * m + i];
                }
            }
        });
        self.push(n, m, out, Some(back))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (j, x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                out[i * n + j] = e;
                s += e;
            }
            for j in 0..n {
                out[i * n + j] /= s;
            }
        }
        let id = self.push(m, n, out, None);
        let back: BackFn = Box::new(move |t, g, grads| {
            let y = t.value(id);
            let ga = &mut grads[a.0];
            for i in 0..m {
                let yr = &y[i * n..(i + 1) * n];
                let gr = &g[i * n..(i + 1) * n];
                let dot: f64 = yr.iter().zip(gr).map(|(yy, gg)| yy * gg).sum();
                for j in 0..n {
                    ga[i * n + j] += yr[j] * (gr[j] - dot);
                }
            }
        });
        self.nodes[id.0].back = Some(back);
        id
    }

    /// Row-wise layer normalization (zero mean, unit variance, no affine).
    pub fn layer_norm_rows(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * is;
            }
        }
        let id = self.push(m, n, out, None);
        let back: BackFn = Box::new(move |t, g, grads| {
            let y = t.value(id);
            let ga = &mut grads[a.0];
            for i in 0..m {
                let yr = &y[i * n..(i + 1) * n];
                let gr = &g[i * n..(i + 1) * n];
                let gmean = gr.iter().sum::<f64>() / n as f64;
                let gydot: f64 = yr.iter().zip(gr).map(|(yy, gg)| yy * gg).sum::<f64>() / n as f64;
                for j in 0..n {
                    ga[i * n + j] += inv_std[i] * (gr[j] - gmean - yr[j] * gydot);
                }
            }
        });
        self.nodes[id.0].back = Some(back);
        id
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let back: BackFn = Box::new(move |t, g, grads| {
            let av = t.value(a).to_vec();
            for ((ga, gi), x) in grads[a.0].iter_mut().zip(g).zip(&av) {
                if *x > 0.0 {
                    *ga += gi;
                }
            }
        });
        self.push(m, n, out, Some(back))
    }

    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .map(|&x| if x > 30.0 { x } else { x.exp().ln_1p() })
            .collect();
        let back: BackFn = Box::new(move |t, g, grads| {
            let av = t.value(a).to_vec();
            for ((ga, gi), x) in grads[a.0].iter_mut().zip(g).zip(&av) {
                *ga += gi / (1.0 + (-x).exp());
            }
        });
        self.push(m, n, out, Some(back))
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.abs()).collect();
        let back: BackFn = Box::new(move |t, g, grads| {
            let av = t.value(a).to_vec();
            for ((ga, gi), x) in grads[a.0].iter_mut().zip(g).zip(&av) {
                *ga += gi * x.signum();
            }
        });
        self.push(m, n, out, Some(back))
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let len = (m * n) as f64;
        let mean = self.value(a).iter().sum::<f64>() / len;
        let back: BackFn = Box::new(move |_, g, grads| {
            let gi = g[0] / len;
            for ga in grads[a.0].iter_mut() {
                *ga += gi;
            }
        });
        self.push(1, 1, vec![mean], Some(back))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s = self.value(a).iter().sum::<f64>();
        let back: BackFn = Box::new(move |_, g, grads| {
            for ga in grads[a.0].iter_mut() {
                *ga += g[0];
            }
        });
        self.push(1, 1, vec![s], Some(back))
    }

    /// Mean over rows, shape `[1, cols]`.
    pub fn mean_rows(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = self.value(a);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += av[i * n + j];
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let back: BackFn = Box::new(move |_, g, grads| {
            let ga = &mut grads[a.0];
            for i in 0..m {
                for j in 0..n {
                    ga[i * n + j] += g[j] / m as f64;
                }
            }
        });
        self.push(1, n, out, Some(back))
    }

    pub fn concat_rows(&mut self, ids: &[TensorId]) -> Result<TensorId, TapeError> {
        let n = self.shape(ids[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &id in ids {
            let (m, c) = self.shape(id);
            if c != n {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_rows",
                    left: (rows, n),
                    right: (m, c),
                });
            }
            rows += m;
            out.extend_from_slice(self.value(id));
        }
        let owned: Vec<TensorId> = ids.to_vec();
        let back: BackFn = Box::new(move |t, g, grads| {
            let mut offset = 0;
            for &id in &owned {
                let (m, c) = t.shape(id);
                let len = m * c;
                for (ga, gi) in grads[id.0].iter_mut().zip(&g[offset..offset + len]) {
                    *ga += gi;
                }
                offset += len;
            }
        });
        Ok(self.push(rows, n, out, Some(back)))
    }

    pub fn concat_cols(&mut self, ids: &[TensorId]) -> Result<TensorId, TapeError> {
        let m = self.shape(ids[0]).0;
        let mut widths = Vec::with_capacity(ids.len());
        let mut total = 0;
        for &id in ids {
            let (r, c) = self.shape(id);
            if r != m {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_cols",
                    left: (m, total),
                    right: (r, c),
                });
            }
            widths.push(c);
            total += c;
        }
        let mut out = vec![0.0; m * total];
        let mut offset = 0;
        for (&id, &w) in ids.iter().zip(&widths) {
            let v = self.value(id);
            for i in 0..m {
                out[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let owned: Vec<(TensorId, usize)> = ids.iter().cloned().zip(widths).collect();
        let back: BackFn = Box::new(move |_, g, grads| {
            let mut offset = 0;
            for &(id, w) in &owned {
                let ga = &mut grads[id.0];
                for i in 0..m {
                    for j in 0..w {
                        ga[i * w + j] += g[i * total + offset + j];
                    }
                }
                offset += w;
            }
        });
        Ok(self.push(m, total, out, Some(back)))
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId, TapeError> {
        let (m, n) = self.shape(a);
        if start + len > m {
            return Err(TapeError::SliceRange {
                op: "slice_rows",
                start,
                len,
                size: m,
            });
        }
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        let back: BackFn = Box::new(move |_, g, grads| {
            let ga = &mut grads[a.0];
            for (i, gi) in g.iter().enumerate() {
                ga[start * n + i] += gi;
            }
        });
        Ok(self.push(len, n, out, Some(back)))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId, TapeError> {
        let (m, n) = self.shape(a);
        if start + len > n {
            return Err(TapeError::SliceRange {
                op: "slice_cols",
                start,
                len,
                size: n,
            });
        }
        let av = self.value(a);
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&av[i * n + start..i * n + start + len]);
        }
        let back: BackFn = Box::new(move |_, g, grads| {
            let ga = &mut grads[a.0];
            for i in 0..m {
                for j in 0..len {
                    ga[i * n + start + j] += g[i * len + j];
                }
            }
        });
        Ok(self.push(m, len, out, Some(back)))
    }

    /// Mean-reduced smooth-L1 (Huber, delta 1) between `pred` and a constant
    /// target of the same shape.
    pub fn smooth_l1(&mut self, pred: TensorId, target: &[f64]) -> Result<TensorId, TapeError> {
        let (m, n) = self.shape(pred);
        if target.len() != m * n {
            return Err(TapeError::ShapeMismatch {
                op: "smooth_l1",
                left: (m, n),
                right: (1, target.len()),
            });
        }
        let len = (m * n) as f64;
        let mut loss = 0.0;
        for (p, t) in self.value(pred).iter().zip(target) {
            let d = p - t;
            loss += if d.abs() < 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            };
        }
        loss /= len;
        let target = target.to_vec();
        let back: BackFn = Box::new(move |t, g, grads| {
            let pv = t.value(pred).to_vec();
            let ga = &mut grads[pred.0];
            for i in 0..pv.len() {
                let d = pv[i] - target[i];
                let dd = if d.abs() < 1.0 { d } else { d.signum() };
                ga[i] += g[0] * dd / len;
            }
        });
        Ok(self.push(1, 1, vec![loss], Some(back)))
    }

    /// Scaled dot-product attention over a single head with an optional
    /// additive mask (`[T, T]`, 0 where allowed, large negative where not).
    pub fn attention(
        &mut self,
        q: TensorId,
        k: TensorId,
        v: TensorId,
        mask: Option<&[f64]>,
    ) -> Result<TensorId, TapeError> {
        let (t_q, d) = self.shape(q);
        let (t_k, dk) = self.shape(k);
        if d != dk || self.shape(v).0 != t_k {
            return Err(TapeError::ShapeMismatch {
                op: "attention",
                left: (t_q, d),
                right: (t_k, dk),
            });
        }
        let kt = self.transpose(k);
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let masked = match mask {
            Some(m) => {
                if m.len() != t_q * t_k {
                    return Err(TapeError::ShapeMismatch {
                        op: "attention mask",
                        left: (t_q, t_k),
                        right: (1, m.len()),
                    });
                }
                let mc = self.leaf(t_q, t_k, m.to_vec());
                self.add(scaled, mc)?
            }
            None => scaled,
        };
        let w = self.softmax_rows(masked);
        self.matmul(w, v)
    }

    /// Reverse sweep; returns one gradient buffer per node. The seed node
    /// must be scalar-shaped.
    pub fn backward(&mut self, seed: TensorId) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|node| vec![0.0; node.rows * node.cols])
            .collect();
        grads[seed.0][0] = 1.0;
        for id in (0..n).rev() {
            if grads[id].iter().all(|g| *g == 0.0) {
                continue;
            }
            if let Some(back) = self.nodes[id].back.take() {
                let (before, rest) = grads.split_at_mut(id);
                back(self, &rest[0], before);
                self.nodes[id].back = Some(back);
            }
        }
        grads
    }
}

/// Additive causal mask: position t may attend to positions <= t.
pub fn causal_mask(t: usize) -> Vec<f64> {
    let mut m = vec![0.0; t * t];
    for i in 0..t {
        for j in (i + 1)..t {
            m[i * t + j] = -1e30;
        }
    }
    m
}

/// Prefix mask over a context block followed by query rows: context
/// positions attend bidirectionally among themselves, each query attends to
/// the full context and itself only. Queries never see each other or the
/// future, and context order carries no information.
pub fn prefix_mask(n_ctx: usize, n_query: usize) -> Vec<f64> {
    let t = n_ctx + n_query;
    let mut m = vec![-1e30; t * t];
    for i in 0..t {
        for j in 0..n_ctx {
            m[i * t + j] = 0.0;
        }
        if i >= n_ctx {
            m[i * t + i] = 0.0;
        }
    }
    for i in 0..n_ctx {
        for j in 0..n_ctx {
            m[i * t + j] = 0.0;
        }
    }
    m
}
