use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{Grads, ParamId, ParamStore, Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn for_param(p: &Parameter) -> Self {
        AdamState {
            m: Tensor::zeros(p.value.shape()),
            v: Tensor::zeros(p.value.shape()),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update; zeroes `param.grad` afterwards.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if !param.grad.all_finite() {
        return Err(Error::NonFinite(format!("gradient of {}", param.name)));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let grad = param.grad.data();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    let theta = param.value.data_mut();
    for k in 0..theta.len() {
        let gk = grad[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        theta[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    param.grad.fill(0.0);
    Ok(())
}

/// Adam over a fixed set of trainable parameters.
pub struct Adam {
    cfg: AdamConfig,
    states: BTreeMap<ParamId, AdamState>,
}

impl Adam {
    /// Frozen (non-trainable) parameters among `ids` are skipped.
    pub fn new(cfg: AdamConfig, store: &ParamStore, ids: &[ParamId]) -> Self {
        let states = ids
            .iter()
            .filter(|id| store.get(**id).trainable)
            .map(|id| (*id, AdamState::for_param(store.get(*id))))
            .collect();
        Adam { cfg, states }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.states.keys().copied().collect()
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Updates the tracked parameters from their accumulated grads and zeroes
    /// every grad in the store.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (id, state) in self.states.iter_mut() {
            let p = store.get_mut(*id);
            if !p.trainable {
                continue;
            }
            adam_step(p, state, &self.cfg)?;
        }
        store.zero_grads();
        Ok(())
    }
}

/// Adds `2·λ·θ` to the grads of `ids` (the gradient of `λ‖θ‖²`).
pub fn add_l2_grad(store: &mut ParamStore, ids: &[ParamId], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for id in ids {
        let p = store.get_mut(*id);
        let vals = p.value.data().to_vec();
        for (g, v) in p.grad.data_mut().iter_mut().zip(vals) {
            *g += 2.0 * lambda * v;
        }
    }
}

/// Evaluates `loss_fn` over fixed-size chunks of `items` (in parallel) and reduces
/// losses and gradients in chunk order, so the result does not depend on thread
/// count. `loss_fn` must return the chunk's contribution to the batch loss.
pub fn batch_gradients<T, F>(
    store: &ParamStore,
    items: &[T],
    chunk: usize,
    loss_fn: F,
) -> Result<(f64, Grads)>
where
    T: Sync,
    F: Fn(&mut Graph, &[T]) -> Result<Var> + Sync,
{
    let parts: Vec<Result<(f64, Grads)>> = items
        .par_chunks(chunk.max(1))
        .map(|c| {
            let mut g = Graph::new(store);
            let loss = loss_fn(&mut g, c)?;
            let value = g.scalar(loss);
            Ok((value, g.backward(loss)))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Grads::new(store.len());
    for part in parts {
        let (v, gr) = part?;
        total += v;
        grads.add_assign(&gr);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    Ok((total, grads))
}

/// One optimizer step on a batch: gradients via [`batch_gradients`], then Adam.
/// Returns the batch loss.
pub fn fit_batch<T, F>(
    store: &mut ParamStore,
    opt: &mut Adam,
    items: &[T],
    chunk: usize,
    loss_fn: F,
) -> Result<f64>
where
    T: Sync,
    F: Fn(&mut Graph, &[T]) -> Result<Var> + Sync,
{
    let (loss, grads) = batch_gradients(store, items, chunk, loss_fn)?;
    store.accumulate(&grads);
    opt.step(store)?;
    Ok(loss)
}

/// Central-difference check of the analytic gradient of `loss_fn`.
///
/// Samples up to `probes` coordinates of each parameter in `ids` and returns the
/// largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    probes: usize,
    h: f64,
    seed: u64,
    loss_fn: F,
) -> Result<f64>
where
    F: for<'a, 'b> Fn(&'a mut Graph<'b>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        Ok(g.scalar(loss))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= probes {
            (0..n).collect()
        } else {
            sample(&mut rng, n, probes).into_vec()
        };
        for k in coords {
            let orig = store.value(id)[k];
            store.value_mut(id)[k] = orig + h;
            let up = eval(store)?;
            store.value_mut(id)[k] = orig - h;
            let down = eval(store)?;
            store.value_mut(id)[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).map(|g| g[k]).unwrap_or(0.0);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
