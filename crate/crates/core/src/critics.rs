//! Text critics: a sentiment regressor `f^R` and a real/fake discriminator `f^D`.
//!
//! Both read a token sequence through private word embeddings, a bidirectional
//! GRU and inner attention. Inputs may be hard ids or relaxed one-hot mixtures.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    embed, fit_batch, Adam, AdamConfig, BiGruAttention, Graph, Init, Mlp, ParamId, ParamStore,
    TokenInput, Var,
};
use crate::rng;

/// Bounds for every logarithm of a probability.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub d_w: usize,
    pub d_h: usize,
    pub d_att: usize,
    pub hidden: Vec<usize>,
    pub label_smoothing: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            d_w: 32,
            d_h: 32,
            d_att: 32,
            hidden: vec![32],
            label_smoothing: 0.1,
            patience: 5,
            max_epochs: 50,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub words: ParamId,
    pub rnn: BiGruAttention,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        cfg: &CriticConfig,
        rng: &mut R,
    ) -> Self {
        let words = store.add(&format!("{name}.V"), &[vocab_size, cfg.d_w], Init::Glorot, rng);
        let rnn = BiGruAttention::new(store, &format!("{name}.rnn"), cfg.d_w, cfg.d_h, cfg.d_att, rng);
        TextEncoder { words, rnn }
    }

    pub fn encode(&self, g: &mut Graph, inputs: &[TokenInput]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let xs = inputs
            .iter()
            .map(|&t| embed(g, self.words, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.rnn.encode(g, &xs)?.pooled)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.words];
        v.extend(self.rnn.params());
        v
    }
}

fn ids(tokens: &[usize]) -> Vec<TokenInput> {
    tokens.iter().map(|&t| TokenInput::Id(t)).collect()
}

fn head_widths(d_in: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(d_in).chain(hidden.iter().copied()).chain(std::iter::once(1)).collect()
}

/// `f^R`: text → unbounded rating.
#[derive(Clone, Debug)]
pub struct SentimentRegressor {
    pub encoder: TextEncoder,
    pub head: Mlp,
}

impl SentimentRegressor {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, vocab_size: usize, cfg: &CriticConfig, rng: &mut R) -> Self {
        let encoder = TextEncoder::new(store, "reg", vocab_size, cfg, rng);
        let head = Mlp::new(store, "reg.head", &head_widths(encoder.rnn.out_dim(), &cfg.hidden), false, rng);
        SentimentRegressor { encoder, head }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.encoder.params();
        v.extend(self.head.params());
        v
    }

    pub fn score_graph(&self, g: &mut Graph, inputs: &[TokenInput]) -> Result<Var> {
        let h = self.encoder.encode(g, inputs)?;
        self.head.forward(g, h)
    }

    pub fn predict(&self, store: &ParamStore, tokens: &[usize]) -> Result<f64> {
        let mut g = Graph::new(store);
        let r = self.score_graph(&mut g, &ids(tokens))?;
        Ok(g.scalar(r))
    }

    pub fn is_frozen(&self, store: &ParamStore) -> bool {
        self.params().iter().all(|&p| !store.get(p).trainable)
    }

    pub fn fingerprint(&self, store: &ParamStore) -> String {
        store.fingerprint(&self.params())
    }
}

/// `f^D`: text → probability of being an authentic explanation.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub encoder: TextEncoder,
    pub head: Mlp,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, vocab_size: usize, cfg: &CriticConfig, rng: &mut R) -> Self {
        let encoder = TextEncoder::new(store, "disc", vocab_size, cfg, rng);
        let head = Mlp::new(store, "disc.head", &head_widths(encoder.rnn.out_dim(), &cfg.hidden), false, rng);
        Discriminator { encoder, head }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.encoder.params();
        v.extend(self.head.params());
        v
    }

    pub fn prob_graph(&self, g: &mut Graph, inputs: &[TokenInput]) -> Result<Var> {
        let h = self.encoder.encode(g, inputs)?;
        let logit = self.head.forward(g, h)?;
        Ok(g.sigmoid(logit))
    }

    pub fn discriminate(&self, store: &ParamStore, tokens: &[usize]) -> Result<f64> {
        let mut g = Graph::new(store);
        let p = self.prob_graph(&mut g, &ids(tokens))?;
        Ok(g.scalar(p))
    }

    /// Sum over `real` of the smoothed positive cross-entropy divided by
    /// `real_norm`, plus the sum over `fake` of `-ln(1 - p)` divided by `fake_norm`.
    pub fn loss_terms(
        &self,
        g: &mut Graph,
        real: &[&[usize]],
        fake: &[&[usize]],
        smoothing: f64,
        real_norm: usize,
        fake_norm: usize,
    ) -> Result<Var> {
        let mut terms = Vec::with_capacity(real.len() + fake.len());
        for x in real {
            let p = self.prob_graph(g, &ids(x))?;
            let lp = clamped_ln(g, p);
            let q = g.one_minus(p);
            let lq = clamped_ln(g, q);
            let a = g.scale(lp, -(1.0 - smoothing) / real_norm as f64);
            terms.push(a);
            if smoothing != 0.0 {
                terms.push(g.scale(lq, -smoothing / real_norm as f64));
            }
        }
        for x in fake {
            let p = self.prob_graph(g, &ids(x))?;
            let q = g.one_minus(p);
            let lq = clamped_ln(g, q);
            terms.push(g.scale(lq, -1.0 / fake_norm as f64));
        }
        if terms.is_empty() {
            return Ok(g.constant(0.0));
        }
        Ok(g.sum_scalars(&terms))
    }

    /// `L^D = -mean ln f^D(x) - mean ln(1 - f^D(x̂))`; with `smoothing > 0` the
    /// real targets are `1 - smoothing` instead of 1.
    pub fn loss_discriminator(
        &self,
        g: &mut Graph,
        real: &[&[usize]],
        fake: &[&[usize]],
        smoothing: f64,
    ) -> Result<Var> {
        if real.is_empty() || fake.is_empty() {
            return Err(Error::Empty("discriminator batch"));
        }
        self.loss_terms(g, real, fake, smoothing, real.len(), fake.len())
    }
}

/// `ln(clamp(p, 1e-7, 1 - 1e-7))`; zero gradient where the clamp is active.
pub fn clamped_ln(g: &mut Graph, p: Var) -> Var {
    let v = g.scalar(p);
    if v > 1.0 - PROB_FLOOR {
        return g.constant((1.0 - PROB_FLOOR).ln());
    }
    g.ln(p, PROB_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    pub valid_curve: Vec<f64>,
}

/// Mean squared error of `f^R` on `(tokens, rating)` pairs.
pub fn regressor_mse(store: &ParamStore, reg: &SentimentRegressor, data: &[(Vec<usize>, f64)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("regressor evaluation set"));
    }
    let mut sum = 0.0;
    for (x, r) in data {
        let p = reg.predict(store, x)?;
        sum += (p - r) * (p - r);
    }
    Ok(sum / data.len() as f64)
}

/// MSE training with early stopping on `valid`; restores the best epoch's
/// parameters and freezes them.
pub fn pretrain_regressor(
    store: &mut ParamStore,
    reg: &SentimentRegressor,
    train: &[(Vec<usize>, f64)],
    valid: &[(Vec<usize>, f64)],
    cfg: &CriticConfig,
    seed: u64,
) -> Result<PretrainReport> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Empty("regressor pretraining split"));
    }
    let params = reg.params();
    store.set_trainable(&params, true);
    let mean = train.iter().map(|(_, r)| r).sum::<f64>() / train.len() as f64;
    if let Some(b) = reg.head.layers.last().and_then(|l| l.bias) {
        store.value_mut(b)[0] = mean;
    }
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), store, &params);
    let snapshot = |store: &ParamStore| -> Vec<Vec<f64>> {
        params.iter().map(|&p| store.value(p).to_vec()).collect()
    };
    let mut best = (regressor_mse(store, reg, valid)?, 0, snapshot(store));
    let mut curve = vec![best.0];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng::stream(seed, &[0x7e9, epoch as u64]));
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let n = batch.len() as f64;
            fit_batch(store, &mut opt, batch, 8, |g, chunk| {
                let mut terms = Vec::with_capacity(chunk.len());
                for &k in chunk {
                    let (x, r) = &train[k];
                    let p = reg.score_graph(g, &ids(x))?;
                    let d = g.affine_const(p, 1.0, -r);
                    let sq = g.square(d);
                    terms.push(g.scale(sq, 1.0 / n));
                }
                Ok(g.sum_scalars(&terms))
            })?;
        }
        let mse = regressor_mse(store, reg, valid)?;
        if !mse.is_finite() {
            return Err(Error::NonFinite(format!("regressor valid MSE at epoch {epoch}")));
        }
        curve.push(mse);
        log::debug!("regressor epoch {epoch}: valid mse {mse:.4}");
        if mse < best.0 {
            best = (mse, epoch, snapshot(store));
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    for (&p, v) in params.iter().zip(&best.2) {
        store.value_mut(p).copy_from_slice(v);
    }
    store.set_trainable(&params, false);
    Ok(PretrainReport { epochs, best_epoch: best.1, best_valid_mse: best.0, valid_curve: curve })
}
