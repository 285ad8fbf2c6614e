//! Rating prediction through a latent sentiment vector.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Init, Mlp, ParamId, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommenderConfig {
    pub d_r: usize,
    pub d_rs: usize,
    /// Hidden widths of the sentiment encoder (between `2 d_r` and `d_rs`).
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the rating regressor (between `d_rs` and 1).
    pub regressor_hidden: Vec<usize>,
    pub beta: f64,
    pub lambda_h: f64,
    pub pairs_per_user: usize,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        RecommenderConfig {
            d_r: 32,
            d_rs: 32,
            encoder_hidden: vec![32],
            regressor_hidden: vec![16],
            beta: 0.3,
            lambda_h: 0.5,
            pairs_per_user: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Recommender {
    pub users: ParamId,
    pub items: ParamId,
    pub encoder: Mlp,
    pub regressor: Mlp,
    pub n_users: usize,
    pub n_items: usize,
}

/// A user's sampled preference pairs `(i, j)` with `r_i > r_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub user: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl Recommender {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_users: usize,
        n_items: usize,
        cfg: &RecommenderConfig,
        rng: &mut R,
    ) -> Self {
        let users = store.add("rec.P", &[n_users, cfg.d_r], Init::Glorot, rng);
        let items = store.add("rec.Q", &[n_items, cfg.d_r], Init::Glorot, rng);
        let enc: Vec<usize> = std::iter::once(2 * cfg.d_r)
            .chain(cfg.encoder_hidden.iter().copied())
            .chain(std::iter::once(cfg.d_rs))
            .collect();
        let reg: Vec<usize> = std::iter::once(cfg.d_rs)
            .chain(cfg.regressor_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        Recommender {
            users,
            items,
            encoder: Mlp::new(store, "rec.enc", &enc, true, rng),
            regressor: Mlp::new(store, "rec.reg", &reg, false, rng),
            n_users,
            n_items,
        }
    }

    pub fn d_rs(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.users, self.items];
        v.extend(self.encoder.params());
        v.extend(self.regressor.params());
        v
    }

    /// Sets the regressor's output bias, e.g. to the mean train rating.
    pub fn set_output_bias(&self, store: &mut ParamStore, value: f64) {
        if let Some(b) = self.regressor.layers.last().and_then(|l| l.bias) {
            store.value_mut(b)[0] = value;
        }
    }

    fn check_ids(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.n_users {
            return Err(Error::UnknownId { kind: "user", index: user, len: self.n_users });
        }
        if item >= self.n_items {
            return Err(Error::UnknownId { kind: "item", index: item, len: self.n_items });
        }
        Ok(())
    }

    /// `s = MLP_enc([p_u; q_i])`.
    pub fn encode_sentiment(&self, g: &mut Graph, user: usize, item: usize) -> Result<Var> {
        self.check_ids(user, item)?;
        let p = g.row(self.users, user);
        let q = g.row(self.items, item);
        let x = g.concat(&[p, q]);
        self.encoder.forward(g, x)
    }

    /// Unclipped `r̂` from a sentiment vector.
    pub fn predict_rating(&self, g: &mut Graph, s: Var) -> Result<Var> {
        self.regressor.forward(g, s)
    }

    pub fn predict_graph(&self, g: &mut Graph, user: usize, item: usize) -> Result<Var> {
        let s = self.encode_sentiment(g, user, item)?;
        self.predict_rating(g, s)
    }

    pub fn sentiment(&self, store: &ParamStore, user: usize, item: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let s = self.encode_sentiment(&mut g, user, item)?;
        Ok(g.value(s).to_vec())
    }

    pub fn predict(&self, store: &ParamStore, user: usize, item: usize) -> Result<f64> {
        let mut g = Graph::new(store);
        let r = self.predict_graph(&mut g, user, item)?;
        Ok(g.scalar(r))
    }

    /// Squared-error sum scaled by `1 / mse_norm` plus the per-user hinge terms.
    /// With `mse_norm = ratings.len()` this is the full batch loss; smaller
    /// chunks of one batch pass the batch size so their parts add up.
    pub fn loss_terms(
        &self,
        g: &mut Graph,
        ratings: &[(usize, usize, f64)],
        pairs: &[PairBatch],
        mse_norm: usize,
        beta: f64,
        lambda_h: f64,
    ) -> Result<Var> {
        let mut terms = Vec::with_capacity(ratings.len() + pairs.len());
        for &(u, i, r) in ratings {
            let rh = self.predict_graph(g, u, i)?;
            let d = g.affine_const(rh, 1.0, -r);
            let sq = g.square(d);
            terms.push(g.scale(sq, 1.0 / mse_norm as f64));
        }
        for b in pairs {
            if b.pairs.is_empty() {
                continue;
            }
            let mut hinges = Vec::with_capacity(b.pairs.len());
            for &(i, j) in &b.pairs {
                let ri = self.predict_graph(g, b.user, i)?;
                let rj = self.predict_graph(g, b.user, j)?;
                let diff = g.sub(ri, rj);
                let slack = g.affine_const(diff, -1.0, beta);
                hinges.push(g.leaky_relu(slack, 0.0));
            }
            let s = g.sum_scalars(&hinges);
            terms.push(g.scale(s, lambda_h / b.pairs.len() as f64));
        }
        if terms.is_empty() {
            return Ok(g.constant(0.0));
        }
        Ok(g.sum_scalars(&terms))
    }

    /// `L^r` over one batch: mean squared error plus
    /// `Σ_u λ_h / |B_u| Σ_{(i,j)} max(0, β - (r̂_ui - r̂_uj))`.
    pub fn loss_recommender(
        &self,
        g: &mut Graph,
        ratings: &[(usize, usize, f64)],
        pairs: &[PairBatch],
        beta: f64,
        lambda_h: f64,
    ) -> Result<Var> {
        if ratings.is_empty() {
            return Err(Error::Empty("rating batch"));
        }
        self.loss_terms(g, ratings, pairs, ratings.len(), beta, lambda_h)
    }

    /// Candidates sorted by `r̂` descending, ties by ascending item id.
    pub fn rank_items(&self, store: &ParamStore, user: usize, candidates: &[usize]) -> Result<Vec<usize>> {
        let scored = candidates
            .iter()
            .map(|&i| Ok((i, self.predict(store, user, i)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(rank_by_score(scored))
    }
}

/// Sorts `(id, score)` by score descending, ties by ascending id.
pub fn rank_by_score(mut scored: Vec<(usize, f64)>) -> Vec<usize> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(i, _)| i).collect()
}

/// Tab-separated `(user, item, r̂)` rows.
pub fn write_predictions(path: &Path, rows: &[(String, String, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (u, i, r) in rows {
        writeln!(f, "{u}\t{i}\t{r}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(d: usize) -> (ParamStore, Recommender) {
        let cfg = RecommenderConfig {
            d_r: d,
            d_rs: 2 * d,
            encoder_hidden: vec![],
            regressor_hidden: vec![],
            ..RecommenderConfig::default()
        };
        let mut store = ParamStore::new();
        let rec = Recommender::new(&mut store, 2, 3, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        (store, rec)
    }

    #[test]
    fn identity_encoder_is_leaky_concat() {
        let (mut store, rec) = single_layer(2);
        let w = rec.encoder.layers[0].weight;
        let v = store.value_mut(w);
        v.fill(0.0);
        for k in 0..4 {
            v[k * 4 + k] = 1.0;
        }
        store.value_mut(rec.users)[..2].copy_from_slice(&[1.0, -2.0]);
        store.value_mut(rec.items)[2..4].copy_from_slice(&[0.5, -1.0]);
        let s = rec.sentiment(&store, 0, 1).unwrap();
        assert_eq!(s, vec![1.0, -0.02, 0.5, -0.01]);
    }

    #[test]
    fn zero_embeddings_give_leaky_bias() {
        let (mut store, rec) = single_layer(2);
        store.value_mut(rec.users).fill(0.0);
        store.value_mut(rec.items).fill(0.0);
        let b = rec.encoder.layers[0].bias.unwrap();
        store.value_mut(b).copy_from_slice(&[1.0, -1.0, 0.0, 3.0]);
        assert_eq!(rec.sentiment(&store, 1, 2).unwrap(), vec![1.0, -0.01, 0.0, 3.0]);
    }

    #[test]
    fn linear_regressor_arithmetic() {
        let (mut store, rec) = single_layer(2);
        let l = &rec.regressor.layers[0];
        store.value_mut(l.weight).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        store.value_mut(l.bias.unwrap())[0] = 2.0;
        let mut g = Graph::new(&store);
        let s = g.leaf(vec![1.5, 7.0, -3.0, 2.0]);
        let r = rec.predict_rating(&mut g, s).unwrap();
        assert_eq!(g.scalar(r), 3.5);
        let z = g.leaf(vec![0.0; 4]);
        let mut store0 = store.clone();
        store0.value_mut(l.bias.unwrap())[0] = 0.0;
        let mut g0 = Graph::new(&store0);
        let z0 = g0.leaf(g.value(z).to_vec());
        let r0 = rec.predict_rating(&mut g0, z0).unwrap();
        assert_eq!(g0.scalar(r0), 0.0);
    }

    #[test]
    fn unknown_ids_error() {
        let (store, rec) = single_layer(2);
        assert!(matches!(rec.predict(&store, 5, 0), Err(Error::UnknownId { kind: "user", .. })));
        assert!(matches!(rec.predict(&store, 0, 3), Err(Error::UnknownId { kind: "item", .. })));
    }

    #[test]
    fn empty_rating_batch_errors() {
        let (store, rec) = single_layer(2);
        let mut g = Graph::new(&store);
        assert!(rec.loss_recommender(&mut g, &[], &[], 0.3, 0.5).is_err());
    }

    #[test]
    fn ranking_ties_ascending() {
        assert_eq!(rank_by_score(vec![(3, 2.1), (1, 4.2)]), vec![1, 3]);
        assert_eq!(rank_by_score(vec![(2, 1.0), (0, 1.0), (1, 1.0)]), vec![0, 1, 2]);
        assert_eq!(rank_by_score(vec![(7, 0.0)]), vec![7]);
        assert!(rank_by_score(vec![]).is_empty());
    }
}
