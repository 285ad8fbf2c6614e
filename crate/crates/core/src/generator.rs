//! Gated GRU explanation generator.
//!
//! At each position the GRU consumes the previous token, then an attribute gate
//! (copy head + bilinear attention over the item's attributes) and a sentiment
//! gate (scalar-weighted fusion of the sentiment vector) shape the output
//! distribution `y_t = (1 - c_t) η_t + c_t ζ_t`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::nn::{embed, Graph, GruCell, Init, Linear, ParamId, ParamStore, TokenInput, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub d_x: usize,
    pub d_xh: usize,
    pub d_xv: usize,
    pub lambda_g: f64,
    pub max_len: usize,
    /// Compress `h_t` to the sentiment width before the attribute attention.
    pub compress: bool,
    /// Ablation: force the copy probability to zero.
    pub copy_disabled: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            d_x: 32,
            d_xh: 128,
            d_xv: 64,
            lambda_g: 0.05,
            max_len: 50,
            compress: false,
            copy_disabled: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub users: ParamId,
    pub items: ParamId,
    pub words: ParamId,
    pub init: Linear,
    pub gru: GruCell,
    pub compress: Option<Linear>,
    /// `W_z`, shape `[(d_att + d_rs), d_xv]`.
    pub w_z: ParamId,
    pub copy: Linear,
    pub gate: Linear,
    pub fuse: Linear,
    pub head: Linear,
    pub n_users: usize,
    pub n_items: usize,
    pub vocab_size: usize,
    pub d_rs: usize,
    pub copy_disabled: bool,
}

/// Decoder state between positions.
#[derive(Clone, Debug, PartialEq)]
pub struct GenState {
    pub h: Vec<f64>,
    /// Tokens already fed through the GRU; `h` summarizes all of them.
    pub prefix: Vec<usize>,
}

impl GenState {
    pub fn position(&self) -> usize {
        self.prefix.len()
    }

    /// Token id emitted last, i.e. the next input; BOS before the first step.
    pub fn last(&self) -> usize {
        *self.prefix.last().unwrap_or(&BOS)
    }
}

/// Plain-valued outputs of one position.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub eta: Vec<f64>,
    /// Distribution over `attrs`, in the same order.
    pub zeta: Vec<f64>,
    pub attrs: Vec<usize>,
    pub copy: f64,
    pub gate: f64,
    pub y: Vec<f64>,
}

/// Tape nodes of one position.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub h: Var,
    pub eta: Var,
    pub zeta: Var,
    pub copy: Var,
    pub gate: Var,
    pub y: Var,
}

/// One teacher-forcing example; `tokens` excludes BOS and EOS.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    pub user: usize,
    pub item: usize,
    pub tokens: &'a [usize],
    pub attrs: &'a [usize],
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_users: usize,
        n_items: usize,
        vocab_size: usize,
        d_rs: usize,
        cfg: &GeneratorConfig,
        rng: &mut R,
    ) -> Self {
        let users = store.add("gen.P", &[n_users, cfg.d_x], Init::Glorot, rng);
        let items = store.add("gen.Q", &[n_items, cfg.d_x], Init::Glorot, rng);
        let words = store.add("gen.V", &[vocab_size, cfg.d_xv], Init::Glorot, rng);
        let init = Linear::new(store, "gen.init", 2 * cfg.d_x, cfg.d_xh, true, rng);
        let gru = GruCell::new(store, "gen.gru", cfg.d_xv, cfg.d_xh, rng);
        let compress = cfg
            .compress
            .then(|| Linear::new(store, "gen.compress", cfg.d_xh, d_rs, true, rng));
        let d_att = if cfg.compress { d_rs } else { cfg.d_xh };
        let w_z = store.add("gen.W_z", &[d_att + d_rs, cfg.d_xv], Init::Glorot, rng);
        Generator {
            users,
            items,
            words,
            init,
            gru,
            compress,
            w_z,
            copy: Linear::new(store, "gen.copy", cfg.d_xh, 1, true, rng),
            gate: Linear::new(store, "gen.gate", cfg.d_xh, 1, true, rng),
            fuse: Linear::new(store, "gen.fuse", d_rs, cfg.d_xh, true, rng),
            head: Linear::new(store, "gen.head", cfg.d_xh, vocab_size, true, rng),
            n_users,
            n_items,
            vocab_size,
            d_rs,
            copy_disabled: cfg.copy_disabled,
        }
    }

    pub fn d_h(&self) -> usize {
        self.gru.d_h
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.users, self.items, self.words];
        v.extend(self.init.params());
        v.extend(self.gru.params());
        if let Some(c) = &self.compress {
            v.extend(c.params());
        }
        v.push(self.w_z);
        for l in [&self.copy, &self.gate, &self.fuse, &self.head] {
            v.extend(l.params());
        }
        v
    }

    /// `h_0 = W_init [p_u; q_i] + b_init`.
    pub fn init_state_graph(&self, g: &mut Graph, user: usize, item: usize) -> Result<Var> {
        if user >= self.n_users {
            return Err(Error::UnknownId { kind: "user", index: user, len: self.n_users });
        }
        if item >= self.n_items {
            return Err(Error::UnknownId { kind: "item", index: item, len: self.n_items });
        }
        let p = g.row(self.users, user);
        let q = g.row(self.items, item);
        let x = g.concat(&[p, q]);
        self.init.forward(g, x)
    }

    pub fn init_state(&self, store: &ParamStore, user: usize, item: usize) -> Result<GenState> {
        let mut g = Graph::new(store);
        let h = self.init_state_graph(&mut g, user, item)?;
        Ok(GenState { h: g.value(h).to_vec(), prefix: Vec::new() })
    }

    /// `ζ_t = softmax_k([h'_t, s]ᵀ W_z v_{a_k})` over exactly `attrs`.
    pub fn attribute_distribution(&self, g: &mut Graph, h: Var, s: Var, attrs: &[usize]) -> Result<Var> {
        if attrs.is_empty() {
            return Err(Error::Empty("item attribute set"));
        }
        if let Some(&a) = attrs.iter().find(|&&a| a >= self.vocab_size) {
            return Err(Error::UnknownId { kind: "attribute token", index: a, len: self.vocab_size });
        }
        let hc = match &self.compress {
            Some(c) => c.forward(g, h)?,
            None => h,
        };
        let hs = g.concat(&[hc, s]);
        let (rows, _) = g.store().dims(self.w_z);
        if g.value(hs).len() != rows {
            return Err(Error::Shape {
                context: "attribute gate [h, s]",
                left: vec![rows],
                right: vec![g.value(hs).len()],
            });
        }
        let u = g.mat_t_vec(self.w_z, hs);
        let z = g.gather_dot(self.words, attrs, u);
        Ok(g.softmax(z))
    }

    /// Returns `(g_t, m_t)` with `g_t = σ(W_g h + b_g)` and
    /// `m_t = tanh(h + g_t (W_m s + b_m))`.
    pub fn sentiment_fuse(&self, g: &mut Graph, h: Var, s: Var) -> Result<(Var, Var)> {
        let gp = self.gate.forward(g, h)?;
        let gate = g.sigmoid(gp);
        let ms = self.fuse.forward(g, s)?;
        let weighted = g.scale_by(ms, gate);
        let pre = g.add(h, weighted);
        Ok((gate, g.tanh(pre)))
    }

    /// Consumes `input` and produces the distribution for the next token.
    pub fn step_graph(
        &self,
        g: &mut Graph,
        h_prev: Var,
        input: TokenInput,
        s: Var,
        attrs: &[usize],
    ) -> Result<StepVars> {
        let x = embed(g, self.words, input)?;
        let h = self.gru.step(g, x, h_prev)?;
        let (gate, m) = self.sentiment_fuse(g, h, s)?;
        let logits = self.head.forward(g, m)?;
        let eta = g.softmax(logits);
        let zeta = self.attribute_distribution(g, h, s, attrs)?;
        let (copy, y) = if self.copy_disabled {
            (g.constant(0.0), eta)
        } else {
            let cp = self.copy.forward(g, h)?;
            let c = g.sigmoid(cp);
            let keep = g.one_minus(c);
            let a = g.scale_by(eta, keep);
            let spread = g.scatter(zeta, attrs, self.vocab_size);
            let b = g.scale_by(spread, c);
            (c, g.add(a, b))
        };
        Ok(StepVars { h, eta, zeta, copy, gate, y })
    }

    /// Frozen-parameter step on plain values.
    pub fn step(
        &self,
        store: &ParamStore,
        state: &GenState,
        token: usize,
        s: &[f64],
        attrs: &[usize],
    ) -> Result<(StepOutput, GenState)> {
        let mut g = Graph::new(store);
        let h = g.leaf(state.h.clone());
        let sv = g.leaf(s.to_vec());
        let v = self.step_graph(&mut g, h, TokenInput::Id(token), sv, attrs)?;
        let out = StepOutput {
            eta: g.value(v.eta).to_vec(),
            zeta: g.value(v.zeta).to_vec(),
            attrs: attrs.to_vec(),
            copy: g.scalar(v.copy),
            gate: g.scalar(v.gate),
            y: g.value(v.y).to_vec(),
        };
        let mut prefix = state.prefix.clone();
        prefix.push(token);
        Ok((out, GenState { h: g.value(v.h).to_vec(), prefix }))
    }

    /// Sum over positions of `-ln y_t(w_t) + λ_g |g_t|` for one sequence with
    /// EOS appended; returns the sum and the number of target tokens.
    pub fn sequence_loss(
        &self,
        g: &mut Graph,
        target: &Target,
        s: Var,
        lambda_g: f64,
    ) -> Result<(Var, usize)> {
        let mut h = self.init_state_graph(g, target.user, target.item)?;
        let mut input = BOS;
        let mut terms = Vec::with_capacity(target.tokens.len() + 1);
        for &w in target.tokens.iter().chain(std::iter::once(&EOS)) {
            let v = self.step_graph(g, h, TokenInput::Id(input), s, target.attrs)?;
            let p = g.pick(v.y, w);
            let lp = g.ln(p, 1e-300);
            let nll = g.scale(lp, -1.0);
            if lambda_g != 0.0 {
                let a = g.abs(v.gate);
                let pen = g.scale(a, lambda_g);
                terms.push(g.add(nll, pen));
            } else {
                terms.push(nll);
            }
            h = v.h;
            input = w;
        }
        Ok((g.sum_scalars(&terms), terms.len()))
    }

    /// Batch sum divided by `norm`; `norm = None` uses the batch's own token count.
    pub fn loss_terms(
        &self,
        g: &mut Graph,
        batch: &[Target],
        s: &[Var],
        lambda_g: f64,
        norm: Option<usize>,
    ) -> Result<Var> {
        if s.len() != batch.len() {
            return Err(Error::Shape {
                context: "sentiment vectors per target",
                left: vec![batch.len()],
                right: vec![s.len()],
            });
        }
        let mut sums = Vec::with_capacity(batch.len());
        let mut count = 0;
        for (t, &sv) in batch.iter().zip(s) {
            let (l, n) = self.sequence_loss(g, t, sv, lambda_g)?;
            sums.push(l);
            count += n;
        }
        if sums.is_empty() {
            return Ok(g.constant(0.0));
        }
        let total = g.sum_scalars(&sums);
        Ok(g.scale(total, 1.0 / norm.unwrap_or(count) as f64))
    }

    /// `L^x`: token-normalized teacher-forced NLL plus the L1 gate penalty.
    pub fn loss_generation(&self, g: &mut Graph, batch: &[Target], s: &[Var], lambda_g: f64) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Empty("generation batch"));
        }
        self.loss_terms(g, batch, s, lambda_g, None)
    }

    /// Overwrites rows of the word table from a text file of
    /// `token v_1 ... v_d` lines. Returns the number of rows set.
    pub fn load_word_embeddings(&self, store: &mut ParamStore, vocab: &Vocabulary, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path)?;
        let d = store.dims(self.words).1;
        let table = store.value_mut(self.words);
        let mut set = 0;
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { path: path.to_path_buf(), line: n + 1, msg: e.to_string() })?;
            if vals.len() != d {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    msg: format!("expected {d} values, found {}", vals.len()),
                });
            }
            let id = vocab.id(tok);
            if vocab.token(id) == tok {
                table[id * d..(id + 1) * d].copy_from_slice(&vals);
                set += 1;
            }
        }
        Ok(set)
    }
}
