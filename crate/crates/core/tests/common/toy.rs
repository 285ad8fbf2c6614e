//! A hash-defined policy small enough to enumerate, with exact value oracles.

use std::sync::atomic::{AtomicUsize, Ordering};

use saer::corpus::{BOS, EOS};
use saer::decoding::{Cursor, Policy, RatingOracle};
use saer::Result;

use super::softmax_oracle;

pub const V: usize = 6;

/// Hash-defined toy model over 6 tokens; the state is the consumed prefix.
pub struct Toy {
    pub gates: Vec<f64>,
    pub sharp: f64,
}

impl Toy {
    pub fn dist(&self, prefix: &[usize]) -> Cursor<Vec<usize>> {
        let t = prefix.len();
        let last = prefix.last().copied().unwrap_or(BOS);
        let logits: Vec<f64> = (0..V)
            .map(|w| self.sharp * (((w * 7 + last * 5 + t * 3) % 11) as f64 / 11.0))
            .collect();
        Cursor { state: prefix.to_vec(), y: softmax_oracle(&logits), gate: self.gates[t % self.gates.len()] }
    }
}

impl Policy for Toy {
    type State = Vec<usize>;
    fn start(&self) -> Result<Cursor<Vec<usize>>> {
        Ok(self.dist(&[]))
    }
    fn advance(&self, state: &Vec<usize>, token: usize) -> Result<Cursor<Vec<usize>>> {
        let mut p = state.clone();
        p.push(token);
        Ok(self.dist(&p))
    }
}

pub struct Counting<F: Fn(&[usize]) -> f64 + Sync> {
    f: F,
    calls: AtomicUsize,
}

impl<F: Fn(&[usize]) -> f64 + Sync> Counting<F> {
    pub fn new(f: F) -> Self {
        Counting { f, calls: AtomicUsize::new(0) }
    }
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F: Fn(&[usize]) -> f64 + Sync> RatingOracle for Counting<F> {
    fn rate(&self, tokens: &[usize]) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok((self.f)(tokens))
    }
}

pub fn score(x: &[usize]) -> f64 {
    1.0 + 2.0 * x.iter().filter(|&&w| w == 4).count() as f64 + x.iter().filter(|&&w| w == 5).count() as f64
}

/// A rater on a rating-like scale: values of `(3 - f)²` stay within [0, 1.6].
pub fn half_score(x: &[usize]) -> f64 {
    2.0 + 0.5 * x.iter().filter(|&&w| w == 4).count() as f64 + 0.25 * x.iter().filter(|&&w| w == 5).count() as f64
}

/// Truncated, renormalized distribution computed independently of the crate.
pub fn truncated(y: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    let z: f64 = idx.iter().map(|&c| y[c]).sum();
    idx.into_iter().map(|c| (c, y[c] / z)).collect()
}

/// Exact expectation of `(r̂ - f(x))²` over top-k completions of `prefix`.
pub fn exact(toy: &Toy, prefix: &[usize], k: usize, max_len: usize, r_hat: f64) -> f64 {
    exact_with(toy, prefix, k, max_len, r_hat, &score)
}

pub fn exact_with(toy: &Toy, prefix: &[usize], k: usize, max_len: usize, r_hat: f64, f: &dyn Fn(&[usize]) -> f64) -> f64 {
    if prefix.last() == Some(&EOS) || prefix.len() >= max_len {
        return (r_hat - f(prefix)).powi(2);
    }
    let y = toy.dist(prefix).y;
    truncated(&y, k)
        .into_iter()
        .map(|(c, p)| {
            let mut x = prefix.to_vec();
            x.push(c);
            p * exact_with(toy, &x, k, max_len, r_hat, f)
        })
        .sum()
}
