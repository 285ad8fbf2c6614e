//! Straight-through Gumbel sampling of explanations and the training-time
//! alignment (`L^a`) and adversarial (`L^c`) losses.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::corpus::{BOS, EOS};
use crate::critics::{clamped_ln, Discriminator, SentimentRegressor};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::{softmax, Graph, ParamStore, TokenInput, Var};
use crate::rng;

/// Floor applied to probabilities before taking logs of `y_t`.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSample {
    pub index: usize,
    pub hard: Vec<f64>,
    pub soft: Vec<f64>,
    pub tau: f64,
}

fn gumbel_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel parameters are valid");
    (0..n).map(|_| g.sample(rng)).collect()
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = k;
        }
    }
    best
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// Perturbs `ln max(y, 1e-10)` with Gumbel(0,1) noise; `hard` is the one-hot
/// argmax and `soft = softmax(perturbed / τ)`.
pub fn gumbel_st<R: Rng + ?Sized>(y: &[f64], tau: f64, rng: &mut R) -> Result<GumbelSample> {
    if y.is_empty() {
        return Err(Error::Empty("distribution to sample"));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("Gumbel temperature must be positive, got {tau}")));
    }
    let noise = gumbel_noise(y.len(), rng);
    let perturbed: Vec<f64> = y.iter().zip(&noise).map(|(p, e)| p.max(LOG_FLOOR).ln() + e).collect();
    let index = argmax(&perturbed);
    let scaled: Vec<f64> = perturbed.iter().map(|v| v / tau).collect();
    Ok(GumbelSample { index, hard: one_hot(y.len(), index), soft: softmax(&scaled), tau })
}

/// Tape version of [`gumbel_st`]: the returned node carries `hard` forward and
/// passes its gradient to the relaxed `soft` node.
pub fn gumbel_st_graph<R: Rng + ?Sized>(g: &mut Graph, y: Var, tau: f64, rng: &mut R) -> Result<(Var, GumbelSample)> {
    let n = g.value(y).len();
    if n == 0 {
        return Err(Error::Empty("distribution to sample"));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("Gumbel temperature must be positive, got {tau}")));
    }
    let noise = gumbel_noise(n, rng);
    let logy = g.ln(y, LOG_FLOOR);
    let e = g.leaf(noise);
    let perturbed = g.add(logy, e);
    let index = argmax(g.value(perturbed));
    let scaled = g.scale(perturbed, 1.0 / tau);
    let soft = g.softmax(scaled);
    let hard = one_hot(n, index);
    let sample = GumbelSample { index, hard: hard.clone(), soft: g.value(soft).to_vec(), tau };
    Ok((g.straight_through(hard, soft), sample))
}

/// A sampled explanation on the tape. `inputs` are the straight-through nodes,
/// one per emitted token, EOS included when it was drawn.
#[derive(Clone, Debug)]
pub struct SampledSeq {
    pub user: usize,
    pub item: usize,
    pub inputs: Vec<Var>,
    pub samples: Vec<GumbelSample>,
    pub tokens: Vec<usize>,
    pub terminated: bool,
}

impl SampledSeq {
    pub fn token_inputs(&self) -> Vec<TokenInput> {
        self.inputs.iter().map(|&v| TokenInput::Mix(v)).collect()
    }
}

/// Autoregressive rollout that feeds each position's straight-through sample
/// back as the next input; stops after EOS or `max_len` tokens.
#[allow(clippy::too_many_arguments)]
pub fn sample_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    gen: &Generator,
    user: usize,
    item: usize,
    s: Var,
    attrs: &[usize],
    tau: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<SampledSeq> {
    let mut h = gen.init_state_graph(g, user, item)?;
    let mut input = TokenInput::Id(BOS);
    let mut seq = SampledSeq {
        user,
        item,
        inputs: Vec::new(),
        samples: Vec::new(),
        tokens: Vec::new(),
        terminated: false,
    };
    while seq.tokens.len() < max_len {
        let v = gen.step_graph(g, h, input, s, attrs)?;
        let (st, sample) = gumbel_st_graph(g, v.y, tau, rng)?;
        seq.tokens.push(sample.index);
        seq.inputs.push(st);
        let done = sample.index == EOS;
        seq.samples.push(sample);
        if done {
            seq.terminated = true;
            break;
        }
        h = v.h;
        input = TokenInput::Mix(st);
    }
    Ok(seq)
}

/// Plain sampled explanation (no tape kept).
#[derive(Clone, Debug, PartialEq)]
pub struct SampledExplanation {
    pub user: usize,
    pub item: usize,
    pub positions: Vec<GumbelSample>,
    pub tokens: Vec<usize>,
    pub terminated: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn sample_explanation<R: Rng + ?Sized>(
    store: &ParamStore,
    gen: &Generator,
    user: usize,
    item: usize,
    s: &[f64],
    attrs: &[usize],
    tau: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<SampledExplanation> {
    let mut g = Graph::new(store);
    let sv = g.leaf(s.to_vec());
    let seq = sample_graph(&mut g, gen, user, item, sv, attrs, tau, max_len, rng)?;
    Ok(SampledExplanation {
        user,
        item,
        positions: seq.samples,
        tokens: seq.tokens,
        terminated: seq.terminated,
    })
}

/// One `(u, i)` pair for the alignment objective. `r_hat` and `s` come from the
/// frozen recommender and enter the tape as constants. `seed` keys the pair's
/// sampling streams.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignPair {
    pub user: usize,
    pub item: usize,
    pub r_hat: f64,
    pub s: Vec<f64>,
    pub attrs: Vec<usize>,
    pub seed: u64,
}

/// Draws `samples_per_pair` explanations per pair, each from its own stream.
pub fn sample_pairs(
    g: &mut Graph,
    gen: &Generator,
    pairs: &[AlignPair],
    samples_per_pair: usize,
    tau: f64,
    max_len: usize,
) -> Result<Vec<SampledSeq>> {
    let mut out = Vec::with_capacity(pairs.len() * samples_per_pair);
    for p in pairs {
        let s = g.leaf(p.s.clone());
        for k in 0..samples_per_pair {
            let mut r = rng::stream(p.seed, &[k as u64]);
            out.push(sample_graph(g, gen, p.user, p.item, s, &p.attrs, tau, max_len, &mut r)?);
        }
    }
    Ok(out)
}

/// Sum of `(r̂ - f^R(x̂))²` over the samples, divided by `norm`.
pub fn alignment_terms(
    g: &mut Graph,
    reg: &SentimentRegressor,
    targets: &[f64],
    samples: &[SampledSeq],
    norm: usize,
) -> Result<Var> {
    if targets.len() != samples.len() {
        return Err(Error::Shape { context: "alignment targets", left: vec![samples.len()], right: vec![targets.len()] });
    }
    let mut terms = Vec::with_capacity(samples.len());
    for (&r, x) in targets.iter().zip(samples) {
        let f = reg.score_graph(g, &x.token_inputs())?;
        let d = g.affine_const(f, -1.0, r);
        let sq = g.square(d);
        terms.push(g.scale(sq, 1.0 / norm as f64));
    }
    if terms.is_empty() {
        return Ok(g.constant(0.0));
    }
    Ok(g.sum_scalars(&terms))
}

/// Sum of `-ln f^D(x̂)` over the samples, divided by `norm`.
pub fn adversarial_terms(g: &mut Graph, disc: &Discriminator, samples: &[SampledSeq], norm: usize) -> Result<Var> {
    let mut terms = Vec::with_capacity(samples.len());
    for x in samples {
        let p = disc.prob_graph(g, &x.token_inputs())?;
        let lp = clamped_ln(g, p);
        terms.push(g.scale(lp, -1.0 / norm as f64));
    }
    if terms.is_empty() {
        return Ok(g.constant(0.0));
    }
    Ok(g.sum_scalars(&terms))
}

/// `L^a`: Monte-Carlo mean of `(r̂ - f^R(x̂))²` over pairs and samples.
#[allow(clippy::too_many_arguments)]
pub fn loss_alignment(
    g: &mut Graph,
    gen: &Generator,
    reg: &SentimentRegressor,
    pairs: &[AlignPair],
    samples_per_pair: usize,
    tau: f64,
    max_len: usize,
) -> Result<Var> {
    if pairs.is_empty() || samples_per_pair == 0 {
        return Err(Error::Empty("alignment batch"));
    }
    let samples = sample_pairs(g, gen, pairs, samples_per_pair, tau, max_len)?;
    let targets: Vec<f64> = pairs
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.r_hat, samples_per_pair))
        .collect();
    alignment_terms(g, reg, &targets, &samples, samples.len())
}

/// `L^c = -mean ln f^D(x̂)`.
pub fn loss_adversarial(g: &mut Graph, disc: &Discriminator, samples: &[SampledSeq]) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::Empty("adversarial batch"));
    }
    adversarial_terms(g, disc, samples, samples.len())
}
