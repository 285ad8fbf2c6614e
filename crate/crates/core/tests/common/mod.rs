//! Independent recomputations shared by the oracle tests.
#![allow(dead_code)]

pub mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saer::nn::*;

pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum())
        .collect()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct GruOracle {
    w: [Vec<f64>; 3],
    u: [Vec<f64>; 3],
    b: [Vec<f64>; 3],
    d_in: usize,
    d_h: usize,
}

impl GruOracle {
    pub fn from(store: &ParamStore, c: &GruCell) -> Self {
        let v = |id| store.value(id).to_vec();
        GruOracle {
            w: [v(c.w_z), v(c.w_r), v(c.w_h)],
            u: [v(c.u_z), v(c.u_r), v(c.u_h)],
            b: [v(c.b_z), v(c.b_r), v(c.b_h)],
            d_in: c.d_in,
            d_h: c.d_h,
        }
    }

    pub fn step(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let pre = |k: usize, hh: &[f64]| -> Vec<f64> {
            let a = matvec(&self.w[k], self.d_h, self.d_in, x);
            let b = matvec(&self.u[k], self.d_h, self.d_h, hh);
            (0..self.d_h).map(|i| a[i] + b[i] + self.b[k][i]).collect()
        };
        let z: Vec<f64> = pre(0, h).into_iter().map(sig).collect();
        let r: Vec<f64> = pre(1, h).into_iter().map(sig).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = pre(2, &rh).into_iter().map(f64::tanh).collect();
        (0..self.d_h)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
            .collect()
    }
}

pub fn randomize(store: &mut ParamStore, scale: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id) {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_corpus(seed: u64) -> saer::corpus::Dataset {
    let spec = saer::corpus::SynthSpec {
        n_users: 24,
        n_items: 12,
        n_interactions: 160,
        attributes: (0..8).map(|k| format!("attr{k}")).collect(),
        seed,
        ..Default::default()
    };
    saer::corpus::synthesize_corpus(&spec).unwrap()
}

/// A configuration small enough to run all five stages in a few seconds.
pub fn tiny_config(seed: u64) -> saer::pipeline::TrainConfig {
    let mut cfg = saer::pipeline::TrainConfig {
        d_r: 4,
        d_rs: 4,
        encoder_hidden: vec![4],
        regressor_hidden: vec![3],
        d_x: 4,
        d_xh: 6,
        d_xv: 4,
        d_w: 4,
        d_h: 4,
        d_att: 3,
        critic_hidden: vec![4],
        stage_epochs: [2, 2, 2, 2, 2],
        batch_size: 16,
        align_batch: 4,
        align_steps: 3,
        align_probe: 6,
        max_len: 10,
        seed,
        ..Default::default()
    };
    cfg.decode.k = 2;
    cfg.decode.n = 2;
    cfg.decode.max_len = 10;
    cfg.decode.gate_threshold = 0.3;
    cfg
}
