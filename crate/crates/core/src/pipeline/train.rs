//! The five training stages and the total objective.

use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::checkpoint::{save_checkpoint, DirLock};
use super::config::TrainConfig;
use super::model::{Model, StageReport, TrainState};
use crate::alignment::{adversarial_terms, alignment_terms, sample_explanation, sample_pairs, AlignPair};
use crate::corpus::{Dataset, Split, EOS};
use crate::critics::pretrain_regressor;
use crate::decoding::{topk_decode, DecodeConfig, GeneratorPolicy, RegressorOracle};
use crate::error::{Error, Result};
use crate::generator::Target;
use crate::metrics::rmse_mae;
use crate::nn::{add_l2_grad, batch_gradients, Adam, AdamConfig, Graph, ParamId, ParamStore, Var};
use crate::recommender::PairBatch;
use crate::rng;

pub const STAGES: u8 = 5;

/// Component losses of one evaluation of `J`; `None` marks an inactive term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms {
    pub l_r: Option<f64>,
    pub l_x: Option<f64>,
    pub l_a: Option<f64>,
    pub l_c: Option<f64>,
}

/// `J = λ_r L^r + λ_x L^x + λ_a L^a + λ_c L^c + λ_n Σθ²`, where `param_sq` is
/// `Σθ²` over the trainable parameters.
pub fn total_objective(terms: &Terms, cfg: &TrainConfig, param_sq: f64) -> Result<f64> {
    let parts = [
        ("L^r", terms.l_r, cfg.lambda_r),
        ("L^x", terms.l_x, cfg.lambda_x),
        ("L^a", terms.l_a, cfg.lambda_a),
        ("L^c", terms.l_c, cfg.lambda_c),
    ];
    if !param_sq.is_finite() {
        return Err(Error::NonFinite("parameter norm".into()));
    }
    let mut j = cfg.lambda_n * param_sq;
    for (name, l, w) in parts {
        if let Some(v) = l {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
            j += w * v;
        }
    }
    Ok(j)
}

/// Sum of squares over the trainable parameters among `ids`.
pub fn trainable_sq_norm(store: &ParamStore, ids: &[ParamId]) -> f64 {
    let live: Vec<ParamId> = ids.iter().copied().filter(|&p| store.get(p).trainable).collect();
    store.squared_norm(&live)
}

pub fn with_eos(tokens: &[usize]) -> Vec<usize> {
    let mut v = tokens.to_vec();
    v.push(EOS);
    v
}

/// Per-item attribute sets used by the generator. Items without train
/// explanations fall back to the whole attribute lexicon.
pub fn generator_attributes(ds: &Dataset) -> Vec<Vec<usize>> {
    let all: Vec<usize> = ds.vocab.attribute_ids().iter().copied().collect();
    ds.item_attributes
        .iter()
        .map(|a| if a.is_empty() { all.clone() } else { a.clone() })
        .collect()
}

/// `s_{u,i}` for every interaction under the current recommender.
pub fn sentiment_cache(model: &Model, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.interactions
        .par_iter()
        .map(|x| model.rec.sentiment(&model.store, x.user, x.item))
        .collect()
}

/// Reported prediction: `r̂` clipped to the rating scale.
pub fn predict_clipped(model: &Model, ds: &Dataset, user: usize, item: usize) -> Result<f64> {
    Ok(ds.scale.clip(model.rec.predict(&model.store, user, item)?))
}

/// Gradients of `loss_fn` plus `λ_n Σθ²` over the optimizer's parameters, then
/// one Adam step. Returns the data loss.
fn descend<T, F>(store: &mut ParamStore, opt: &mut Adam, items: &[T], cfg: &TrainConfig, loss_fn: F) -> Result<f64>
where
    T: Sync,
    F: Fn(&mut Graph, &[T]) -> Result<Var> + Sync,
{
    let (loss, grads) = batch_gradients(store, items, cfg.chunk, loss_fn)?;
    store.accumulate(&grads);
    add_l2_grad(store, &opt.ids(), cfg.lambda_n);
    opt.step(store)?;
    Ok(loss)
}

fn shuffled(ids: &[usize], seed: u64, parts: &[u64]) -> Vec<usize> {
    let mut v = ids.to_vec();
    v.shuffle(&mut rng::stream(seed, parts));
    v
}

/// This epoch's hinge sample: up to `pairs_per_user` pairs per user.
fn epoch_pairs(ds: &Dataset, cfg: &TrainConfig, stage: u8, epoch: usize) -> Vec<PairBatch> {
    if cfg.lambda_h == 0.0 || cfg.pairs_per_user == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (u, all) in ds.preference_pairs.iter().enumerate() {
        if all.is_empty() {
            continue;
        }
        let m = all.len().min(cfg.pairs_per_user);
        let mut r = rng::stream(cfg.seed, &[stage as u64, epoch as u64, 0xba1f, u as u64]);
        let pairs = sample(&mut r, all.len(), m).into_iter().map(|k| all[k]).collect();
        out.push(PairBatch { user: u, pairs });
    }
    out
}

fn valid_mse(model: &Model, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    let errs: Vec<f64> = idx
        .par_iter()
        .map(|&k| {
            let x = &ds.interactions[k];
            let p = model.rec.predict(&model.store, x.user, x.item)?;
            Ok((p - x.rating) * (p - x.rating))
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / idx.len() as f64)
}

/// Token-mean `L^x` (teacher-forced NLL plus gate penalty) over `idx`.
fn valid_lx(model: &Model, ds: &Dataset, idx: &[usize], s: &[Vec<f64>], attrs: &[Vec<usize>], lambda_g: f64) -> Result<f64> {
    let parts: Vec<(f64, usize)> = idx
        .par_iter()
        .map(|&k| {
            let x = &ds.interactions[k];
            let mut g = Graph::new(&model.store);
            let sv = g.leaf(s[k].clone());
            let t = Target { user: x.user, item: x.item, tokens: &x.explanation, attrs: &attrs[x.item] };
            let (l, n) = model.gen.sequence_loss(&mut g, &t, sv, lambda_g)?;
            Ok((g.scalar(l), n))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = parts.iter().fold((0.0, 0), |a, p| (a.0 + p.0, a.1 + p.1));
    Ok(sum / n.max(1) as f64)
}

/// Top-k decodes of `idx` scored by the frozen regressor: RMSE(f^R(x̂), r̂).
pub fn probe_pd(model: &Model, ds: &Dataset, idx: &[usize], s: &[Vec<f64>], attrs: &[Vec<usize>], decode: &DecodeConfig) -> Result<f64> {
    let rows: Vec<(f64, f64)> = idx
        .par_iter()
        .map(|&k| {
            let x = &ds.interactions[k];
            let r_hat = predict_clipped(model, ds, x.user, x.item)?;
            let policy = GeneratorPolicy {
                store: &model.store,
                gen: &model.gen,
                user: x.user,
                item: x.item,
                s: s[k].clone(),
                attrs: attrs[x.item].clone(),
            };
            let oracle = RegressorOracle { store: &model.store, reg: &model.reg };
            let cfg = DecodeConfig { seed: rng::derive_seed(decode.seed, &[x.user as u64, x.item as u64]), ..decode.clone() };
            let out = topk_decode(&policy, &oracle, &cfg)?;
            Ok((model.reg.predict(&model.store, &out.tokens)?, r_hat))
        })
        .collect::<Result<_>>()?;
    let (f, r): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    Ok(rmse_mae(&f, &r)?.0)
}

struct Splits {
    train: Vec<usize>,
    valid: Vec<usize>,
}

fn splits(ds: &Dataset) -> Result<Splits> {
    let train = ds.indices(Split::Train);
    let valid = ds.indices(Split::Valid);
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Empty("train or valid split"));
    }
    Ok(Splits { train, valid })
}

/// Early-stopping bookkeeping shared by stages 2 to 5.
struct Best {
    value: f64,
    epoch: usize,
    snapshot: Vec<Vec<f64>>,
    curve: Vec<f64>,
}

impl Best {
    fn new(model: &Model, ids: &[ParamId], value: f64) -> Self {
        Best { value, epoch: 0, snapshot: model.snapshot(ids), curve: vec![value] }
    }

    /// Records an epoch; returns true when training should stop.
    fn update(&mut self, model: &Model, ids: &[ParamId], epoch: usize, value: f64, patience: usize) -> Result<bool> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("validation metric at epoch {epoch}")));
        }
        self.curve.push(value);
        if value < self.value {
            self.value = value;
            self.epoch = epoch;
            self.snapshot = model.snapshot(ids);
            Ok(false)
        } else {
            Ok(epoch - self.epoch >= patience)
        }
    }

    fn finish(self, model: &mut Model, ids: &[ParamId], stage: u8, epochs: usize) -> StageReport {
        model.restore(ids, &self.snapshot);
        StageReport { stage, epochs, best_epoch: self.epoch, valid_curve: self.curve, disc_steps: 0, gen_steps: 0 }
    }
}

fn stage1(state: &mut TrainState, ds: &Dataset) -> Result<StageReport> {
    let sp = splits(ds)?;
    let pairs = |idx: &[usize]| -> Vec<(Vec<usize>, f64)> {
        idx.iter()
            .map(|&k| (with_eos(&ds.interactions[k].explanation), ds.interactions[k].rating))
            .collect()
    };
    let cfg = &state.config;
    let m = &mut state.model;
    let ids = m.reg.params();
    m.train_only(&ids);
    let rep = pretrain_regressor(&mut m.store, &m.reg, &pairs(&sp.train), &pairs(&sp.valid), &cfg.critic(), rng::derive_seed(cfg.seed, &[1]))?;
    Ok(StageReport {
        stage: 1,
        epochs: rep.epochs,
        best_epoch: rep.best_epoch,
        valid_curve: rep.valid_curve,
        disc_steps: 0,
        gen_steps: 0,
    })
}

enum RecItem {
    Rating(usize),
    Pairs(usize),
}

/// Stage 2 (`joint = false`): recommender alone on `λ_r L^r`.
/// Stage 4 (`joint = true`): recommender and generator on `λ_r L^r + λ_x L^x`.
fn recommender_stage(state: &mut TrainState, ds: &Dataset, joint: bool) -> Result<StageReport> {
    let stage: u8 = if joint { 4 } else { 2 };
    let sp = splits(ds)?;
    let cfg = state.config.clone();
    let attrs = generator_attributes(ds);
    let m = &mut state.model;
    let mut ids = m.rec.params();
    if joint {
        ids.extend(m.gen.params());
    } else {
        let mean = sp.train.iter().map(|&k| ds.interactions[k].rating).sum::<f64>() / sp.train.len() as f64;
        m.rec.set_output_bias(&mut m.store, mean);
    }
    m.train_only(&ids);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.stage_lr[stage as usize - 1]), &m.store, &ids);

    let metric = |m: &Model| -> Result<f64> {
        let mse = valid_mse(m, ds, &sp.valid)?;
        if !joint {
            return Ok(mse);
        }
        let s = sentiment_cache(m, ds)?;
        Ok(cfg.lambda_r * mse + cfg.lambda_x * valid_lx(m, ds, &sp.valid, &s, &attrs, cfg.lambda_g)?)
    };
    let mut best = Best::new(m, &ids, metric(m)?);
    let mut epochs = 0;
    for epoch in 1..=cfg.stage_epochs[stage as usize - 1] {
        epochs = epoch;
        let order = shuffled(&sp.train, cfg.seed, &[stage as u64, epoch as u64]);
        let pbs = epoch_pairs(ds, &cfg, stage, epoch);
        let n_batches = order.len().div_ceil(cfg.batch_size);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut items: Vec<RecItem> = batch.iter().map(|&k| RecItem::Rating(k)).collect();
            items.extend((b..pbs.len()).step_by(n_batches).map(RecItem::Pairs));
            let n_r = batch.len();
            let n_tok: usize = batch.iter().map(|&k| ds.interactions[k].explanation.len() + 1).sum();
            let Model { store, rec, gen, .. } = &mut *m;
            let (rec, gen) = (&*rec, &*gen);
            total += descend(store, &mut opt, &items, &cfg, |g, chunk| {
                let mut ratings = Vec::new();
                let mut pairs = Vec::new();
                let mut targets = Vec::new();
                for it in chunk {
                    match it {
                        RecItem::Rating(k) => {
                            let x = &ds.interactions[*k];
                            ratings.push((x.user, x.item, x.rating));
                            if joint {
                                targets.push(Target { user: x.user, item: x.item, tokens: &x.explanation, attrs: &attrs[x.item] });
                            }
                        }
                        RecItem::Pairs(p) => pairs.push(pbs[*p].clone()),
                    }
                }
                let lr = rec.loss_terms(g, &ratings, &pairs, n_r, cfg.beta, cfg.lambda_h)?;
                let lr = g.scale(lr, cfg.lambda_r);
                if !joint || targets.is_empty() {
                    return Ok(lr);
                }
                let s = targets
                    .iter()
                    .map(|t| rec.encode_sentiment(g, t.user, t.item))
                    .collect::<Result<Vec<_>>>()?;
                let lx = gen.loss_terms(g, &targets, &s, cfg.lambda_g, Some(n_tok))?;
                let lx = g.scale(lx, cfg.lambda_x);
                Ok(g.add(lr, lx))
            })?;
        }
        let v = metric(m)?;
        log::info!("stage {stage} epoch {epoch}: train loss {:.4}, valid {v:.4}", total / n_batches as f64);
        if best.update(m, &ids, epoch, v, cfg.patience)? {
            break;
        }
    }
    Ok(best.finish(m, &ids, stage, epochs))
}

/// Stage 3: recommender frozen, generator on `λ_x L^x`.
fn stage3(state: &mut TrainState, ds: &Dataset) -> Result<StageReport> {
    let sp = splits(ds)?;
    let cfg = state.config.clone();
    let attrs = generator_attributes(ds);
    let m = &mut state.model;
    let s = sentiment_cache(m, ds)?;
    let ids = m.gen.params();
    m.train_only(&ids);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.stage_lr[2]), &m.store, &ids);
    let mut best = Best::new(m, &ids, valid_lx(m, ds, &sp.valid, &s, &attrs, cfg.lambda_g)?);
    let mut epochs = 0;
    for epoch in 1..=cfg.stage_epochs[2] {
        epochs = epoch;
        let order = shuffled(&sp.train, cfg.seed, &[3, epoch as u64]);
        for batch in order.chunks(cfg.batch_size) {
            let n_tok: usize = batch.iter().map(|&k| ds.interactions[k].explanation.len() + 1).sum();
            let Model { store, gen, .. } = &mut *m;
            let gen = &*gen;
            descend(store, &mut opt, batch, &cfg, |g, chunk| {
                let mut targets = Vec::with_capacity(chunk.len());
                let mut sv = Vec::with_capacity(chunk.len());
                for &k in chunk {
                    let x = &ds.interactions[k];
                    targets.push(Target { user: x.user, item: x.item, tokens: &x.explanation, attrs: &attrs[x.item] });
                    sv.push(g.leaf(s[k].clone()));
                }
                let lx = gen.loss_terms(g, &targets, &sv, cfg.lambda_g, Some(n_tok))?;
                Ok(g.scale(lx, cfg.lambda_x))
            })?;
        }
        let v = valid_lx(m, ds, &sp.valid, &s, &attrs, cfg.lambda_g)?;
        log::info!("stage 3 epoch {epoch}: valid L^x {v:.4}");
        if best.update(m, &ids, epoch, v, cfg.patience)? {
            break;
        }
    }
    Ok(best.finish(m, &ids, 3, epochs))
}

enum DiscItem {
    Real(usize),
    Fake(Vec<usize>),
}

/// Stage 5: recommender and regressor frozen; discriminator steps on `L^D`
/// alternate with generator steps on `λ_x L^x + λ_a L^a + λ_c L^c`.
/// Early stopping tracks PD-RMSE of top-k decodes on a fixed valid probe.
fn stage5(state: &mut TrainState, ds: &Dataset) -> Result<StageReport> {
    let sp = splits(ds)?;
    let cfg = state.config.clone();
    let attrs = generator_attributes(ds);
    let m = &mut state.model;
    let s = sentiment_cache(m, ds)?;
    let r_hat: Vec<f64> = ds
        .interactions
        .par_iter()
        .map(|x| predict_clipped(m, ds, x.user, x.item))
        .collect::<Result<_>>()?;
    let gen_ids = m.gen.params();
    let disc_ids = m.disc.params();
    let mut ids = gen_ids.clone();
    ids.extend(disc_ids.iter().copied());
    m.train_only(&ids);
    let mut opt_g = Adam::new(AdamConfig::with_lr(cfg.stage_lr[4]), &m.store, &gen_ids);
    let mut opt_d = Adam::new(AdamConfig::with_lr(cfg.stage_lr[4]), &m.store, &disc_ids);
    let probe: Vec<usize> = sp.valid.iter().copied().take(cfg.align_probe.max(1)).collect();
    let decode = DecodeConfig { max_len: cfg.decode.max_len.min(cfg.max_len), ..cfg.decode.clone() };

    let mut best = Best::new(m, &ids, probe_pd(m, ds, &probe, &s, &attrs, &decode)?);
    let (mut disc_steps, mut gen_steps, mut epochs) = (0, 0, 0);
    let batch_n = cfg.align_batch.max(1);
    for epoch in 1..=cfg.stage_epochs[4] {
        epochs = epoch;
        let tau = cfg.tau_at(epoch - 1);
        let order = shuffled(&sp.train, cfg.seed, &[5, epoch as u64]);
        let mut cursor = 0;
        for step in 0..cfg.align_steps {
            let batch: Vec<usize> = (0..batch_n).map(|j| order[(cursor + j) % order.len()]).collect();
            cursor += batch_n;
            let pairs: Vec<(usize, AlignPair)> = batch
                .iter()
                .enumerate()
                .map(|(j, &k)| {
                    let x = &ds.interactions[k];
                    let p = AlignPair {
                        user: x.user,
                        item: x.item,
                        r_hat: r_hat[k],
                        s: s[k].clone(),
                        attrs: attrs[x.item].clone(),
                        seed: rng::derive_seed(cfg.seed, &[5, epoch as u64, step as u64, j as u64]),
                    };
                    (k, p)
                })
                .collect();

            for d in 0..cfg.disc_steps {
                let fakes: Vec<Vec<usize>> = pairs
                    .par_iter()
                    .map(|(_, p)| {
                        let mut r = rng::stream(p.seed, &[0xd15c, d as u64]);
                        let mut toks = sample_explanation(&m.store, &m.gen, p.user, p.item, &p.s, &p.attrs, tau, cfg.max_len, &mut r)?.tokens;
                        if toks.is_empty() {
                            toks.push(EOS);
                        }
                        Ok(toks)
                    })
                    .collect::<Result<_>>()?;
                let mut items: Vec<DiscItem> = batch.iter().map(|&k| DiscItem::Real(k)).collect();
                items.extend(fakes.into_iter().map(DiscItem::Fake));
                let reals: Vec<Vec<usize>> = batch.iter().map(|&k| with_eos(&ds.interactions[k].explanation)).collect();
                let Model { store, disc, .. } = &mut *m;
                let disc = &*disc;
                descend(store, &mut opt_d, &items, &cfg, |g, chunk| {
                    let mut real: Vec<&[usize]> = Vec::new();
                    let mut fake: Vec<&[usize]> = Vec::new();
                    for it in chunk {
                        match it {
                            DiscItem::Real(k) => {
                                let j = batch.iter().position(|b| b == k).expect("real item from batch");
                                real.push(&reals[j]);
                            }
                            DiscItem::Fake(t) => fake.push(t),
                        }
                    }
                    disc.loss_terms(g, &real, &fake, cfg.label_smoothing, batch_n, batch_n)
                })?;
                disc_steps += 1;
            }

            let n_tok: usize = batch.iter().map(|&k| ds.interactions[k].explanation.len() + 1).sum();
            let n_samples = batch_n * cfg.samples_per_pair;
            let Model { store, gen, reg, disc, .. } = &mut *m;
            let (gen, reg, disc) = (&*gen, &*reg, &*disc);
            descend(store, &mut opt_g, &pairs, &cfg, |g, chunk| {
                let mut targets = Vec::with_capacity(chunk.len());
                let mut sv = Vec::with_capacity(chunk.len());
                let mut aligned = Vec::with_capacity(chunk.len());
                for (k, p) in chunk {
                    let x = &ds.interactions[*k];
                    targets.push(Target { user: x.user, item: x.item, tokens: &x.explanation, attrs: &p.attrs });
                    sv.push(g.leaf(p.s.clone()));
                    aligned.push(p.clone());
                }
                let lx = gen.loss_terms(g, &targets, &sv, cfg.lambda_g, Some(n_tok))?;
                let mut total = g.scale(lx, cfg.lambda_x);
                if cfg.lambda_a > 0.0 || cfg.lambda_c > 0.0 {
                    let xs = sample_pairs(g, gen, &aligned, cfg.samples_per_pair, tau, cfg.max_len)?;
                    if cfg.lambda_a > 0.0 {
                        let want: Vec<f64> = aligned
                            .iter()
                            .flat_map(|p| std::iter::repeat_n(p.r_hat, cfg.samples_per_pair))
                            .collect();
                        let la = alignment_terms(g, reg, &want, &xs, n_samples)?;
                        let la = g.scale(la, cfg.lambda_a);
                        total = g.add(total, la);
                    }
                    if cfg.lambda_c > 0.0 {
                        let lc = adversarial_terms(g, disc, &xs, n_samples)?;
                        let lc = g.scale(lc, cfg.lambda_c);
                        total = g.add(total, lc);
                    }
                }
                Ok(total)
            })?;
            gen_steps += 1;
        }
        let v = probe_pd(m, ds, &probe, &s, &attrs, &decode)?;
        log::info!("stage 5 epoch {epoch}: tau {tau:.3}, valid probe PD {v:.4}");
        if best.update(m, &ids, epoch, v, cfg.patience)? {
            break;
        }
    }
    let mut rep = best.finish(m, &ids, 5, epochs);
    rep.disc_steps = disc_steps;
    rep.gen_steps = gen_steps;
    Ok(rep)
}

/// Runs one stage. Stages must run in order, and mode `topk` has no stage 5.
pub fn run_stage(state: &mut TrainState, ds: &Dataset, stage: u8) -> Result<()> {
    if stage == 0 || stage > STAGES || stage != state.stage + 1 {
        return Err(Error::StageOrder { requested: stage, completed: state.stage });
    }
    if stage > state.config.mode.last_stage() {
        return Err(Error::Config(format!("mode {} has no stage {stage}", state.config.mode)));
    }
    state.check_vocab(&ds.vocab.fingerprint())?;
    if ds.n_users() != state.model.n_users || ds.n_items() != state.model.n_items || ds.vocab.len() != state.model.vocab_size {
        return Err(Error::Config("dataset sizes do not match the model".into()));
    }
    log::info!("stage {stage} starting");
    let report = match stage {
        1 => stage1(state, ds),
        2 => recommender_stage(state, ds, false),
        3 => stage3(state, ds),
        4 => recommender_stage(state, ds, true),
        _ => stage5(state, ds),
    }
    .map_err(|e| Error::Stage { stage, source: Box::new(e) })?;
    state.stage = stage;
    state.reports.push(report);
    state.apply_freezes();
    Ok(())
}

/// Runs stages up to `last` (capped by the mode). With `dir`, the directory is
/// locked and `stage{n}.ckpt` plus `latest.ckpt` are written after each stage.
pub fn run_stages(state: &mut TrainState, ds: &Dataset, last: u8, dir: Option<&Path>) -> Result<()> {
    let _lock = dir.map(DirLock::acquire).transpose()?;
    let last = last.min(state.config.mode.last_stage());
    while state.stage < last {
        let next = state.stage + 1;
        run_stage(state, ds, next)?;
        if let Some(d) = dir {
            save_checkpoint(state, &d.join(format!("stage{next}.ckpt")))?;
            save_checkpoint(state, &d.join("latest.ckpt"))?;
        }
    }
    Ok(())
}
