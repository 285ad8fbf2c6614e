//! Reverse-mode tape over vector-valued nodes.
//!
//! Parameters are never copied onto the tape: ops that read a parameter hold its
//! [`ParamId`] and write their gradient straight into a [`Grads`] buffer during
//! [`Graph::backward`]. Scalars are length-1 vectors.

use super::tensor::{Grads, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Row(ParamId, usize),
    MixRows(ParamId, Var),
    MatVec(ParamId, Var),
    MatTVec(ParamId, Var),
    GatherDot(ParamId, Vec<usize>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    Concat(Vec<Var>),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    Ln(Var, f64),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Dot(Var, Var),
    Pick(Var, usize),
    Scatter(Var, Vec<usize>),
    WeightedSum(Var, Vec<Var>),
    StraightThrough(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, c: f64) -> Var {
        self.push(vec![c], Op::Leaf)
    }

    /// Whole parameter as a flat vector.
    pub fn param(&mut self, p: ParamId) -> Var {
        let value = self.store.value(p).to_vec();
        self.push(value, Op::Param(p))
    }

    /// Row `r` of a `[rows, cols]` table.
    pub fn row(&mut self, p: ParamId, r: usize) -> Var {
        let (rows, cols) = self.store.dims(p);
        assert!(r < rows, "row {r} out of {rows}");
        let value = self.store.value(p)[r * cols..(r + 1) * cols].to_vec();
        self.push(value, Op::Row(p, r))
    }

    /// `Σ_r w_r · table[r]`; the relaxed-one-hot embedding lookup.
    pub fn mix_rows(&mut self, p: ParamId, w: Var) -> Var {
        let (rows, cols) = self.store.dims(p);
        let weights = &self.nodes[w.0].value;
        assert_eq!(weights.len(), rows, "mixture width vs table rows");
        let table = self.store.value(p);
        let mut out = vec![0.0; cols];
        for (r, &wr) in weights.iter().enumerate() {
            if wr != 0.0 {
                axpy(&mut out, wr, &table[r * cols..(r + 1) * cols]);
            }
        }
        self.push(out, Op::MixRows(p, w))
    }

    /// `W x` for `W: [out, in]`.
    pub fn matvec(&mut self, p: ParamId, x: Var) -> Var {
        let (rows, cols) = self.store.dims(p);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), cols, "matvec inner dimension");
        let w = self.store.value(p);
        let out = (0..rows)
            .map(|r| dot(&w[r * cols..(r + 1) * cols], xv))
            .collect();
        self.push(out, Op::MatVec(p, x))
    }

    /// `Wᵀ x` for `W: [rows, cols]`, `x` of length `rows`.
    pub fn mat_t_vec(&mut self, p: ParamId, x: Var) -> Var {
        let (rows, cols) = self.store.dims(p);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), rows, "transposed matvec inner dimension");
        let w = self.store.value(p);
        let mut out = vec![0.0; cols];
        for (r, &xr) in xv.iter().enumerate() {
            axpy(&mut out, xr, &w[r * cols..(r + 1) * cols]);
        }
        self.push(out, Op::MatTVec(p, x))
    }

    /// `out_k = table[idx_k] · x`.
    pub fn gather_dot(&mut self, p: ParamId, idx: &[usize], x: Var) -> Var {
        let (_, cols) = self.store.dims(p);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), cols, "gather_dot width");
        let t = self.store.value(p);
        let out = idx
            .iter()
            .map(|&r| dot(&t[r * cols..(r + 1) * cols], xv))
            .collect();
        self.push(out, Op::GatherDot(p, idx.to_vec(), x))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "elementwise length mismatch");
        av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a.0].value.iter().map(|x| f(*x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine_const(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.map(a, |x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine_const(a, c, 0.0)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine_const(a, -1.0, 1.0)
    }

    /// Vector `a` times scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let v = self.map(a, |x| x * sv);
        self.push(v, Op::ScaleBy(a, s))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.map(a, |x| leaky_relu(x, slope));
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax(&self.nodes[a.0].value);
        self.push(v, Op::Softmax(a))
    }

    /// `ln(max(a, floor))`; no gradient where the floor is active.
    pub fn ln(&mut self, a: Var, floor: f64) -> Var {
        let v = self.map(a, |x| x.max(floor).ln());
        self.push(v, Op::Ln(a, floor))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// Sum of scalar nodes, left to right.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let c = self.concat(parts);
        self.sum(c)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "dot length mismatch");
        let s = dot(av, bv);
        self.push(vec![s], Op::Dot(a, b))
    }

    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let s = self.nodes[a.0].value[i];
        self.push(vec![s], Op::Pick(a, i))
    }

    /// Places `a[k]` at position `idx[k]` of a zero vector of length `len`.
    pub fn scatter(&mut self, a: Var, idx: &[usize], len: usize) -> Var {
        let mut v = vec![0.0; len];
        for (k, &i) in idx.iter().enumerate() {
            v[i] += self.nodes[a.0].value[k];
        }
        self.push(v, Op::Scatter(a, idx.to_vec()))
    }

    /// `Σ_t w_t · items[t]` with `w` a vector node of length `items.len()`.
    pub fn weighted_sum(&mut self, w: Var, items: &[Var]) -> Var {
        let wv = &self.nodes[w.0].value;
        assert_eq!(wv.len(), items.len(), "weighted_sum arity");
        let width = self.nodes[items[0].0].value.len();
        let mut out = vec![0.0; width];
        for (t, it) in items.iter().enumerate() {
            axpy(&mut out, wv[t], &self.nodes[it.0].value);
        }
        self.push(out, Op::WeightedSum(w, items.to_vec()))
    }

    /// Forward value `hard`, backward routed unchanged into `soft`.
    pub fn straight_through(&mut self, hard: Vec<f64>, soft: Var) -> Var {
        assert_eq!(hard.len(), self.nodes[soft.0].value.len());
        self.push(hard, Op::StraightThrough(soft))
    }

    /// Gradients of the scalar `loss` with respect to every parameter it reads.
    pub fn backward(&self, loss: Var) -> Grads {
        self.backward_inputs(loss, &[]).0
    }

    /// Like [`Graph::backward`], also returning `∂loss/∂leaf` for each of `wrt`.
    pub fn backward_inputs(&self, loss: Var, wrt: &[Var]) -> (Grads, Vec<Vec<f64>>) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be scalar");
        let mut grads = Grads::new(self.store.len());
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let len_of = |v: Var| self.nodes[v.0].value.len();
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                }
                Op::Param(p) => {
                    let s = grads.slot(*p, g.len());
                    s.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Row(p, r) => {
                    let (rows, cols) = self.store.dims(*p);
                    let s = grads.slot(*p, rows * cols);
                    axpy(&mut s[r * cols..(r + 1) * cols], 1.0, &g);
                }
                Op::MixRows(p, w) => {
                    let (rows, cols) = self.store.dims(*p);
                    let table = self.store.value(*p);
                    let wv = &self.nodes[w.0].value;
                    let s = grads.slot(*p, rows * cols);
                    for (r, &wr) in wv.iter().enumerate() {
                        if wr != 0.0 {
                            axpy(&mut s[r * cols..(r + 1) * cols], wr, &g);
                        }
                    }
                    let dw = slot(&mut adj, *w, rows);
                    for (r, d) in dw.iter_mut().enumerate() {
                        *d += dot(&table[r * cols..(r + 1) * cols], &g);
                    }
                }
                Op::MatVec(p, x) => {
                    let (rows, cols) = self.store.dims(*p);
                    let w = self.store.value(*p);
                    let xv = &self.nodes[x.0].value;
                    let s = grads.slot(*p, rows * cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(&mut s[r * cols..(r + 1) * cols], gr, xv);
                        }
                    }
                    let dx = slot(&mut adj, *x, cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(dx, gr, &w[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::MatTVec(p, x) => {
                    let (rows, cols) = self.store.dims(*p);
                    let w = self.store.value(*p);
                    let xv = &self.nodes[x.0].value;
                    let s = grads.slot(*p, rows * cols);
                    for (r, &xr) in xv.iter().enumerate() {
                        axpy(&mut s[r * cols..(r + 1) * cols], xr, &g);
                    }
                    let dx = slot(&mut adj, *x, rows);
                    for (r, d) in dx.iter_mut().enumerate() {
                        *d += dot(&w[r * cols..(r + 1) * cols], &g);
                    }
                }
                Op::GatherDot(p, idx_list, x) => {
                    let (rows, cols) = self.store.dims(*p);
                    let t = self.store.value(*p);
                    let xv = &self.nodes[x.0].value;
                    let s = grads.slot(*p, rows * cols);
                    for (k, &r) in idx_list.iter().enumerate() {
                        axpy(&mut s[r * cols..(r + 1) * cols], g[k], xv);
                    }
                    let dx = slot(&mut adj, *x, cols);
                    for (k, &r) in idx_list.iter().enumerate() {
                        axpy(dx, g[k], &t[r * cols..(r + 1) * cols]);
                    }
                }
                Op::Add(a, b) => {
                    axpy(slot(&mut adj, *a, g.len()), 1.0, &g);
                    axpy(slot(&mut adj, *b, g.len()), 1.0, &g);
                }
                Op::Sub(a, b) => {
                    axpy(slot(&mut adj, *a, g.len()), 1.0, &g);
                    axpy(slot(&mut adj, *b, g.len()), -1.0, &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    axpy(slot(&mut adj, *a, g.len()), 1.0, &da);
                    axpy(slot(&mut adj, *b, g.len()), 1.0, &db);
                }
                Op::Affine(a, c) => axpy(slot(&mut adj, *a, g.len()), *c, &g),
                Op::ScaleBy(a, s) => {
                    let sv = self.nodes[s.0].value[0];
                    let av = &self.nodes[a.0].value;
                    let ds = dot(av, &g);
                    axpy(slot(&mut adj, *a, g.len()), sv, &g);
                    slot(&mut adj, *s, 1)[0] += ds;
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = len_of(*p);
                        axpy(slot(&mut adj, *p, n), 1.0, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = slot(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        d[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = slot(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        d[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &self.nodes[a.0].value;
                    let d = slot(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        d[k] += if x[k] > 0.0 { g[k] } else { slope * g[k] };
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = dot(&g, y);
                    let d = slot(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        d[k] += y[k] * (g[k] - gy);
                    }
                }
                Op::Ln(a, floor) => {
                    let x = &self.nodes[a.0].value;
                    let d = slot(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        if x[k] > *floor {
                            d[k] += g[k] / x[k];
                        }
                    }
                }
                Op::Abs(a) => {
                    let x = &self.nodes[a.0].value;
                    let d = slot(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        if x[k] > 0.0 {
                            d[k] += g[k];
                        } else if x[k] < 0.0 {
                            d[k] -= g[k];
                        }
                    }
                }
                Op::Square(a) => {
                    let x = &self.nodes[a.0].value;
                    let d = slot(&mut adj, *a, g.len());
                    for k in 0..g.len() {
                        d[k] += 2.0 * x[k] * g[k];
                    }
                }
                Op::Sum(a) => {
                    let n = len_of(*a);
                    slot(&mut adj, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let n = av.len();
                    axpy(slot(&mut adj, *a, n), g[0], bv);
                    axpy(slot(&mut adj, *b, n), g[0], av);
                }
                Op::Pick(a, i) => {
                    let n = len_of(*a);
                    slot(&mut adj, *a, n)[*i] += g[0];
                }
                Op::Scatter(a, idx_list) => {
                    let n = len_of(*a);
                    let d = slot(&mut adj, *a, n);
                    for (k, &i) in idx_list.iter().enumerate() {
                        d[k] += g[i];
                    }
                }
                Op::WeightedSum(w, items) => {
                    let wv = self.nodes[w.0].value.clone();
                    let dw: Vec<f64> = items
                        .iter()
                        .map(|it| dot(&self.nodes[it.0].value, &g))
                        .collect();
                    axpy(slot(&mut adj, *w, items.len()), 1.0, &dw);
                    for (t, it) in items.iter().enumerate() {
                        axpy(slot(&mut adj, *it, g.len()), wv[t], &g);
                    }
                }
                Op::StraightThrough(soft) => {
                    axpy(slot(&mut adj, *soft, g.len()), 1.0, &g);
                }
            }
        }
        let inputs = wrt
            .iter()
            .map(|v| {
                adj.get(v.0)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()])
            })
            .collect();
        (grads, inputs)
    }
}
