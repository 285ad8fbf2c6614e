use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::critics::{Discriminator, SentimentRegressor};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::{ParamId, ParamStore};
use crate::recommender::Recommender;
use crate::rng;

/// All four networks over one shared parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub rec: Recommender,
    pub gen: Generator,
    pub reg: SentimentRegressor,
    pub disc: Discriminator,
    pub n_users: usize,
    pub n_items: usize,
    pub vocab_size: usize,
}

impl Model {
    pub fn new(cfg: &TrainConfig, n_users: usize, n_items: usize, vocab_size: usize) -> Self {
        let mut store = ParamStore::new();
        let mut r = rng::stream(cfg.seed, &[0x1417]);
        let rec = Recommender::new(&mut store, n_users, n_items, &cfg.recommender(), &mut r);
        let gen = Generator::new(&mut store, n_users, n_items, vocab_size, cfg.d_rs, &cfg.generator(), &mut r);
        let critic = cfg.critic();
        let reg = SentimentRegressor::new(&mut store, vocab_size, &critic, &mut r);
        let disc = Discriminator::new(&mut store, vocab_size, &critic, &mut r);
        Model { store, rec, gen, reg, disc, n_users, n_items, vocab_size }
    }

    /// Makes exactly `ids` trainable.
    pub fn train_only(&mut self, ids: &[ParamId]) {
        let all: Vec<ParamId> = self.store.ids().collect();
        self.store.set_trainable(&all, false);
        self.store.set_trainable(ids, true);
    }

    pub fn fingerprints(&self) -> Fingerprints {
        Fingerprints {
            recommender: self.store.fingerprint(&self.rec.params()),
            generator: self.store.fingerprint(&self.gen.params()),
            regressor: self.store.fingerprint(&self.reg.params()),
            discriminator: self.store.fingerprint(&self.disc.params()),
        }
    }

    pub fn snapshot(&self, ids: &[ParamId]) -> Vec<Vec<f64>> {
        ids.iter().map(|&p| self.store.value(p).to_vec()).collect()
    }

    pub fn restore(&mut self, ids: &[ParamId], values: &[Vec<f64>]) {
        for (&p, v) in ids.iter().zip(values) {
            self.store.value_mut(p).copy_from_slice(v);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub recommender: String,
    pub generator: String,
    pub regressor: String,
    pub discriminator: String,
}

/// Per-stage training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub epochs: usize,
    pub best_epoch: usize,
    /// Validation metric before training (index 0) and after each epoch.
    pub valid_curve: Vec<f64>,
    pub disc_steps: usize,
    pub gen_steps: usize,
}

/// A model plus the bookkeeping needed to resume or evaluate it.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub config: TrainConfig,
    /// Last completed stage (0 = untrained).
    pub stage: u8,
    pub vocab_fingerprint: String,
    pub reports: Vec<StageReport>,
}

impl TrainState {
    pub fn new(cfg: TrainConfig, n_users: usize, n_items: usize, vocab_size: usize, vocab_fingerprint: String) -> Result<Self> {
        cfg.validate()?;
        Ok(TrainState {
            model: Model::new(&cfg, n_users, n_items, vocab_size),
            config: cfg,
            stage: 0,
            vocab_fingerprint,
            reports: Vec::new(),
        })
    }

    /// Freezes whatever the completed stages require to stay fixed.
    pub fn apply_freezes(&mut self) {
        let all: Vec<ParamId> = self.model.store.ids().collect();
        self.model.store.set_trainable(&all, true);
        if self.stage >= 1 {
            let reg = self.model.reg.params();
            self.model.store.set_trainable(&reg, false);
        }
    }

    pub fn check_vocab(&self, actual: &str) -> Result<()> {
        if self.vocab_fingerprint != actual {
            return Err(Error::Fingerprint { stored: self.vocab_fingerprint.clone(), actual: actual.to_string() });
        }
        Ok(())
    }
}
