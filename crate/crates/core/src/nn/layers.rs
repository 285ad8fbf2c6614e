use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// `y = W x + b`. Checks shapes before touching the tape.
pub fn affine(g: &mut Graph, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
    let (rows, cols) = g.store().dims(w);
    let xl = g.value(x).len();
    if xl != cols {
        return Err(Error::Shape {
            context: "affine input",
            left: vec![rows, cols],
            right: vec![xl],
        });
    }
    let y = g.matvec(w, x);
    match b {
        None => Ok(y),
        Some(b) => {
            let bl = g.store().value(b).len();
            if bl != rows {
                return Err(Error::Shape {
                    context: "affine bias",
                    left: vec![rows, cols],
                    right: vec![bl],
                });
            }
            let bv = g.param(b);
            Ok(g.add(y, bv))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(&format!("{name}.w"), &[out_dim, in_dim], Init::Glorot, rng);
        let bias = bias.then(|| store.add(&format!("{name}.b"), &[out_dim], Init::Zeros, rng));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        affine(g, x, self.weight, self.bias)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Stack of affine layers with leaky-ReLU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply leaky-ReLU after the last layer too.
    pub activate_output: bool,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activate_output: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("{name}.{k}"), w[0], w[1], true, rng))
            .collect();
        Mlp {
            layers,
            activate_output,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if k < last || self.activate_output {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

/// GRU cell with the update convention
/// `h_t = (1 - z) ⊙ h_prev + z ⊙ h̃`, `h̃ = tanh(W_h x + U_h (r ⊙ h_prev) + b_h)`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |s: &str| store.add(&format!("{name}.w_{s}"), &[d_h, d_in], Init::Glorot, rng);
        let (w_z, w_r, w_h) = (w("z"), w("r"), w("h"));
        let mut u = |s: &str| store.add(&format!("{name}.u_{s}"), &[d_h, d_h], Init::Glorot, rng);
        let (u_z, u_r, u_h) = (u("z"), u("r"), u("h"));
        let mut b = |s: &str| store.add(&format!("{name}.b_{s}"), &[d_h], Init::Zeros, rng);
        let (b_z, b_r, b_h) = (b("z"), b("r"), b("h"));
        GruCell {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            d_in,
            d_h,
        }
    }

    pub fn step(&self, g: &mut Graph, x: Var, h_prev: Var) -> Result<Var> {
        let (xl, hl) = (g.value(x).len(), g.value(h_prev).len());
        if xl != self.d_in || hl != self.d_h {
            return Err(Error::Shape {
                context: "gru_step (input, state)",
                left: vec![self.d_in, self.d_h],
                right: vec![xl, hl],
            });
        }
        let gate = |g: &mut Graph, w, u, b, h: Var| -> Var {
            let a = g.matvec(w, x);
            let c = g.matvec(u, h);
            let bv = g.param(b);
            let s = g.add(a, c);
            g.add(s, bv)
        };
        let z_pre = gate(g, self.w_z, self.u_z, self.b_z, h_prev);
        let z = g.sigmoid(z_pre);
        let r_pre = gate(g, self.w_r, self.u_r, self.b_r, h_prev);
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h_prev);
        let cand_pre = gate(g, self.w_h, self.u_h, self.b_h, rh);
        let cand = g.tanh(cand_pre);
        // h_prev + z ⊙ (h̃ - h_prev)
        let diff = g.sub(cand, h_prev);
        let upd = g.mul(z, diff);
        Ok(g.add(h_prev, upd))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }
}

/// One position of a text input: a hard token id or a relaxed one-hot mixture.
#[derive(Clone, Copy, Debug)]
pub enum TokenInput {
    Id(usize),
    Mix(Var),
}

pub fn embed(g: &mut Graph, table: ParamId, input: TokenInput) -> Result<Var> {
    let (rows, _) = g.store().dims(table);
    match input {
        TokenInput::Id(t) if t >= rows => Err(Error::UnknownId {
            kind: "token",
            index: t,
            len: rows,
        }),
        TokenInput::Id(t) => Ok(g.row(table, t)),
        TokenInput::Mix(w) => {
            if g.value(w).len() != rows {
                return Err(Error::Shape {
                    context: "relaxed token mixture",
                    left: vec![rows],
                    right: vec![g.value(w).len()],
                });
            }
            Ok(g.mix_rows(table, w))
        }
    }
}

/// Bidirectional GRU whose per-position states are pooled by inner attention
/// `α = softmax(wᵀ tanh(W_a H_t))`.
#[derive(Clone, Debug)]
pub struct BiGruAttention {
    pub forward: GruCell,
    pub backward: GruCell,
    pub att_proj: ParamId,
    pub att_vec: ParamId,
}

pub struct Encoding {
    pub pooled: Var,
    pub alphas: Var,
}

impl BiGruAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_h: usize,
        d_att: usize,
        rng: &mut R,
    ) -> Self {
        let forward = GruCell::new(store, &format!("{name}.fwd"), d_in, d_h, rng);
        let backward = GruCell::new(store, &format!("{name}.bwd"), d_in, d_h, rng);
        let att_proj = store.add(&format!("{name}.att_w"), &[d_att, 2 * d_h], Init::Glorot, rng);
        let att_vec = store.add(&format!("{name}.att_v"), &[d_att], Init::Glorot, rng);
        BiGruAttention {
            forward,
            backward,
            att_proj,
            att_vec,
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.forward.d_h
    }

    pub fn encode(&self, g: &mut Graph, xs: &[Var]) -> Result<Encoding> {
        if xs.is_empty() {
            return Err(Error::Empty("sequence to encode"));
        }
        let d_h = self.forward.d_h;
        let mut fwd = Vec::with_capacity(xs.len());
        let mut h = g.leaf(vec![0.0; d_h]);
        for &x in xs {
            h = self.forward.step(g, x, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![h; xs.len()];
        let mut h = g.leaf(vec![0.0; d_h]);
        for (t, &x) in xs.iter().enumerate().rev() {
            h = self.backward.step(g, x, h)?;
            bwd[t] = h;
        }
        let states: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| g.concat(&[*f, *b]))
            .collect();
        let v = g.param(self.att_vec);
        let scores: Vec<Var> = states
            .iter()
            .map(|&s| {
                let p = g.matvec(self.att_proj, s);
                let t = g.tanh(p);
                g.dot(t, v)
            })
            .collect();
        let scores = g.concat(&scores);
        let alphas = g.softmax(scores);
        let pooled = g.weighted_sum(alphas, &states);
        Ok(Encoding { pooled, alphas })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p.push(self.att_proj);
        p.push(self.att_vec);
        p
    }
}
