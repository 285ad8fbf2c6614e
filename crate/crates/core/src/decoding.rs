//! Inference-time decoding: top-k sampling, upgraded to rollout-based value
//! search at positions where the sentiment gate is open.
//!
//! The search is flat Monte-Carlo: each top-k candidate is scored by the mean
//! `(r̂ - f^R(x̂))²` over `n` completions sampled from the same top-k policy.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS};
use crate::critics::SentimentRegressor;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::{Graph, ParamStore, TokenInput};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub k: usize,
    pub n: usize,
    /// Positions with `g_t >= gate_threshold` are searched; values above 1
    /// disable the search.
    pub gate_threshold: f64,
    pub max_len: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { k: 5, n: 10, gate_threshold: 0.5, max_len: 50, temperature: 1.0, seed: 0 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 || self.max_len == 0 {
            return Err(Error::Config("k, n and max_len must be at least 1".into()));
        }
        if !(self.gate_threshold >= 0.0) {
            return Err(Error::Config(format!("gate threshold {} must be >= 0", self.gate_threshold)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        Ok(())
    }
}

/// Next-token distribution of a decoder that has consumed some prefix.
#[derive(Clone, Debug)]
pub struct Cursor<S> {
    pub state: S,
    pub y: Vec<f64>,
    pub gate: f64,
}

/// A frozen autoregressive model as seen by the decoder.
pub trait Policy: Sync {
    type State: Clone + Send + Sync;

    /// Cursor after consuming BOS.
    fn start(&self) -> Result<Cursor<Self::State>>;

    /// Cursor after additionally consuming `token`.
    fn advance(&self, state: &Self::State, token: usize) -> Result<Cursor<Self::State>>;
}

/// Scores a complete token sequence.
pub trait RatingOracle: Sync {
    fn rate(&self, tokens: &[usize]) -> Result<f64>;
}

/// The generator bound to one `(u, i)` context.
pub struct GeneratorPolicy<'a> {
    pub store: &'a ParamStore,
    pub gen: &'a Generator,
    pub user: usize,
    pub item: usize,
    pub s: Vec<f64>,
    pub attrs: Vec<usize>,
}

impl GeneratorPolicy<'_> {
    fn cursor(&self, h: &[f64], token: usize) -> Result<Cursor<Vec<f64>>> {
        let mut g = Graph::new(self.store);
        let hv = g.leaf(h.to_vec());
        let sv = g.leaf(self.s.clone());
        let v = self.gen.step_graph(&mut g, hv, TokenInput::Id(token), sv, &self.attrs)?;
        Ok(Cursor { state: g.value(v.h).to_vec(), y: g.value(v.y).to_vec(), gate: g.scalar(v.gate) })
    }
}

impl Policy for GeneratorPolicy<'_> {
    type State = Vec<f64>;

    fn start(&self) -> Result<Cursor<Vec<f64>>> {
        let st = self.gen.init_state(self.store, self.user, self.item)?;
        self.cursor(&st.h, BOS)
    }

    fn advance(&self, state: &Vec<f64>, token: usize) -> Result<Cursor<Vec<f64>>> {
        self.cursor(state, token)
    }
}

pub struct RegressorOracle<'a> {
    pub store: &'a ParamStore,
    pub reg: &'a SentimentRegressor,
}

impl RatingOracle for RegressorOracle<'_> {
    fn rate(&self, tokens: &[usize]) -> Result<f64> {
        self.reg.predict(self.store, tokens)
    }
}

/// Indices of the `k` largest entries, larger first, ties by ascending index.
pub fn top_k(y: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    idx.truncate(k.min(y.len()));
    idx
}

/// Samples from `y` restricted to its top `k` entries, renormalized and
/// sharpened by `p^(1/temperature)`.
pub fn topk_step<R: Rng + ?Sized>(y: &[f64], k: usize, temperature: f64, rng: &mut R) -> Result<usize> {
    if y.is_empty() {
        return Err(Error::Empty("distribution to sample"));
    }
    let cand = top_k(y, k.max(1));
    if cand.len() == 1 {
        return Ok(cand[0]);
    }
    let w: Vec<f64> = cand.iter().map(|&c| y[c].max(0.0).powf(1.0 / temperature)).collect();
    match WeightedIndex::new(&w) {
        Ok(d) => Ok(cand[d.sample(rng)]),
        // all-zero mass after sharpening: fall back to the top candidate
        Err(_) => Ok(cand[0]),
    }
}

fn is_terminal(tokens: &[usize], max_len: usize) -> bool {
    tokens.last() == Some(&EOS) || tokens.len() >= max_len
}

/// Completes `prefix` with top-k sampling. `cursor` must be the decoder state
/// after consuming `prefix`.
pub fn rollout<P: Policy, R: Rng + ?Sized>(
    policy: &P,
    cursor: &Cursor<P::State>,
    prefix: &[usize],
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut tokens = prefix.to_vec();
    if is_terminal(&tokens, cfg.max_len) {
        return Ok(tokens);
    }
    let mut cur = cursor.clone();
    loop {
        let w = topk_step(&cur.y, cfg.k, cfg.temperature, rng)?;
        tokens.push(w);
        if is_terminal(&tokens, cfg.max_len) {
            return Ok(tokens);
        }
        cur = policy.advance(&cur.state, w)?;
    }
}

/// `Q̄ = mean_j (r̂ - f^R(x̂_j))²` over `n` rollouts of `prefix + [w]`.
/// Rollout `j` draws from the stream keyed by `(seed, position, w, j)`.
#[allow(clippy::too_many_arguments)]
pub fn action_value<P: Policy, O: RatingOracle>(
    policy: &P,
    oracle: &O,
    cursor: &Cursor<P::State>,
    prefix: &[usize],
    w: usize,
    r_hat: f64,
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<f64> {
    let mut ext = prefix.to_vec();
    ext.push(w);
    let next = if is_terminal(&ext, cfg.max_len) { None } else { Some(policy.advance(&cursor.state, w)?) };
    let position = prefix.len() as u64;
    let qs = (0..cfg.n)
        .into_par_iter()
        .map(|j| {
            let x = match &next {
                None => ext.clone(),
                Some(c) => {
                    let mut r = rng::stream(seed, &[position, w as u64, j as u64]);
                    rollout(policy, c, &ext, cfg, &mut r)?
                }
            };
            let f = oracle.rate(&x)?;
            Ok((r_hat - f) * (r_hat - f))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(qs.iter().sum::<f64>() / cfg.n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sampled,
    Searched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionTrace {
    pub gate: f64,
    pub mode: Mode,
    /// `(token, Q̄)` for every candidate at searched positions.
    pub candidates: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedExplanation {
    pub tokens: Vec<usize>,
    pub gates: Vec<f64>,
    pub modes: Vec<Mode>,
    /// Q̄ of the action chosen at the last searched position.
    pub q_estimate: Option<f64>,
    /// Regressor calls made by the search.
    pub evaluations: usize,
    pub trace: Vec<PositionTrace>,
}

/// Top-k sampling at positions with `g_t < threshold`; elsewhere the top-k
/// candidate minimizing `Q̄` (ties: larger `y_t`, then smaller id).
pub fn constrained_decode<P: Policy, O: RatingOracle>(
    policy: &P,
    oracle: &O,
    r_hat: f64,
    cfg: &DecodeConfig,
) -> Result<DecodedExplanation> {
    cfg.validate()?;
    let mut out = DecodedExplanation {
        tokens: Vec::new(),
        gates: Vec::new(),
        modes: Vec::new(),
        q_estimate: None,
        evaluations: 0,
        trace: Vec::new(),
    };
    let mut cur = policy.start()?;
    loop {
        let t = out.tokens.len();
        let (w, mode, candidates) = if cur.gate >= cfg.gate_threshold {
            let cand = top_k(&cur.y, cfg.k);
            let mut scored = Vec::with_capacity(cand.len());
            for &c in &cand {
                let q = action_value(policy, oracle, &cur, &out.tokens, c, r_hat, cfg, cfg.seed)?;
                out.evaluations += cfg.n;
                scored.push((c, q));
            }
            let best = scored
                .iter()
                .min_by(|a, b| {
                    a.1.total_cmp(&b.1)
                        .then(cur.y[b.0].total_cmp(&cur.y[a.0]))
                        .then(a.0.cmp(&b.0))
                })
                .copied()
                .expect("k >= 1 candidates");
            out.q_estimate = Some(best.1);
            (best.0, Mode::Searched, scored)
        } else {
            let mut r = rng::stream(cfg.seed, &[0x70c, t as u64]);
            (topk_step(&cur.y, cfg.k, cfg.temperature, &mut r)?, Mode::Sampled, Vec::new())
        };
        out.tokens.push(w);
        out.gates.push(cur.gate);
        out.modes.push(mode);
        out.trace.push(PositionTrace { gate: cur.gate, mode, candidates });
        if is_terminal(&out.tokens, cfg.max_len) {
            return Ok(out);
        }
        cur = policy.advance(&cur.state, w)?;
    }
}

/// Plain top-k decoding with the same per-position streams as
/// [`constrained_decode`].
pub fn topk_decode<P: Policy, O: RatingOracle>(policy: &P, oracle: &O, cfg: &DecodeConfig) -> Result<DecodedExplanation> {
    let never = DecodeConfig { gate_threshold: f64::INFINITY, ..cfg.clone() };
    constrained_decode(policy, oracle, 0.0, &never)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_k_ties_ascending() {
        assert_eq!(top_k(&[0.2, 0.4, 0.2, 0.2], 3), vec![1, 0, 2]);
        assert_eq!(top_k(&[0.5, 0.5], 5), vec![0, 1]);
    }

    #[test]
    fn k_one_is_greedy() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(topk_step(&[0.1, 0.5, 0.4], 1, 1.0, &mut r).unwrap(), 1);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(DecodeConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(DecodeConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
        assert!(DecodeConfig { gate_threshold: 1.5, ..Default::default() }.validate().is_ok());
    }
}
