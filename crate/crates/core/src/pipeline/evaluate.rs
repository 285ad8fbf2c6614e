use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Mode;
use super::model::TrainState;
use super::train::{generator_attributes, predict_clipped, with_eos};
use crate::corpus::{Dataset, Split, EOS};
use crate::decoding::{constrained_decode, topk_decode, DecodeConfig, DecodedExplanation, GeneratorPolicy, Mode as StepMode, PositionTrace, RegressorOracle};
use crate::error::{Error, Result};
use crate::metrics::{alignment_pd_gt, attribute_pr, attribute_set, bleu, mean_ndcg, rmse_mae, EvalCounts, EvalReport, Gain};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub split: Split,
    /// Decoding mode; `None` uses the state's training mode.
    pub mode: Option<Mode>,
    pub decode: DecodeConfig,
    /// Decode only the first `n` pairs of the split.
    pub max_decode: Option<usize>,
    pub ndcg_ks: Vec<usize>,
    pub bleu_ns: Vec<usize>,
    pub gain: Gain,
}

impl EvalOptions {
    pub fn new(decode: DecodeConfig) -> Self {
        EvalOptions {
            split: Split::Test,
            mode: None,
            decode,
            max_decode: None,
            ndcg_ks: vec![3, 5, 10],
            bleu_ns: vec![1, 4],
            gain: Gain::Linear,
        }
    }
}

/// One decoded explanation with its context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub r_hat: f64,
    /// `f^R` of the generated text.
    pub f_r: f64,
    pub text: String,
    pub reference: String,
    pub gates: Vec<f64>,
    pub modes: Vec<StepMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub user: String,
    pub item: String,
    pub positions: Vec<PositionTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub rows: Vec<GenerationRow>,
    pub traces: Vec<TraceRow>,
}

pub fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.split_last() {
        Some((&EOS, rest)) => rest,
        _ => tokens,
    }
}

/// Rating, ranking and explanation metrics on one split.
pub fn evaluate(state: &TrainState, ds: &Dataset, opts: &EvalOptions) -> Result<Evaluation> {
    let mode = opts.mode.unwrap_or(state.config.mode);
    if state.stage < 1 {
        return Err(Error::Checkpoint("the sentiment regressor has not been trained (stage 1 missing)".into()));
    }
    if state.stage < mode.last_stage().min(state.config.mode.last_stage()) {
        return Err(Error::StageOrder { requested: mode.last_stage(), completed: state.stage });
    }
    state.check_vocab(&ds.vocab.fingerprint())?;
    opts.decode.validate()?;
    let m = &state.model;
    let idx = ds.indices(opts.split);
    if idx.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }

    let r_hat: Vec<f64> = idx
        .par_iter()
        .map(|&k| predict_clipped(m, ds, ds.interactions[k].user, ds.interactions[k].item))
        .collect::<Result<_>>()?;
    let truth: Vec<f64> = idx.iter().map(|&k| ds.interactions[k].rating).collect();
    let (rmse, mae) = rmse_mae(&r_hat, &truth)?;

    // rank each user's rated items of the split
    let mut per_user: BTreeMap<usize, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for (j, &k) in idx.iter().enumerate() {
        let x = &ds.interactions[k];
        per_user.entry(x.user).or_default().push((x.item, r_hat[j], x.rating));
    }
    let lists: Vec<Vec<f64>> = per_user
        .values()
        .filter(|v| v.len() >= 2)
        .map(|v| {
            let mut v = v.clone();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            v.into_iter().map(|(_, _, r)| r).collect()
        })
        .collect();
    let mut ndcg = BTreeMap::new();
    if !lists.is_empty() {
        for &k in &opts.ndcg_ks {
            ndcg.insert(k, mean_ndcg(&lists, k, opts.gain)?);
        }
    }

    let attrs = generator_attributes(ds);
    let n_dec = opts.max_decode.unwrap_or(idx.len()).min(idx.len());
    let decoded: Vec<DecodedExplanation> = (0..n_dec)
        .into_par_iter()
        .map(|j| {
            let x = &ds.interactions[idx[j]];
            decode_with(state, &attrs, x.user, x.item, r_hat[j], mode, &opts.decode)
        })
        .collect::<Result<_>>()?;
    let f_r: Vec<f64> = decoded
        .par_iter()
        .map(|d| m.reg.predict(&m.store, &d.tokens))
        .collect::<Result<_>>()?;

    let cands: Vec<Vec<usize>> = decoded.iter().map(|d| strip_eos(&d.tokens).to_vec()).collect();
    let refs: Vec<Vec<usize>> = idx[..n_dec].iter().map(|&k| ds.interactions[k].explanation.clone()).collect();
    let mut bleu_map = BTreeMap::new();
    for &n in &opts.bleu_ns {
        bleu_map.insert(n, bleu(&cands, &refs, n)?);
    }
    let is_attr = |w: usize| ds.vocab.is_attribute(w);
    let pred_sets: Vec<_> = cands.iter().map(|c| attribute_set(c, is_attr)).collect();
    let truth_sets: Vec<_> = refs.iter().map(|r| attribute_set(r, is_attr)).collect();
    let (attr_precision, attr_recall, n_attr) = attribute_pr(&pred_sets, &truth_sets)?;
    let (pd_rmse, gt_rmse) = alignment_pd_gt(&f_r, &r_hat[..n_dec], &truth[..n_dec])?;

    let report = EvalReport {
        rmse,
        mae,
        ndcg,
        bleu: bleu_map,
        attr_precision,
        attr_recall,
        pd_rmse,
        gt_rmse,
        counts: EvalCounts { rating_pairs: idx.len(), ranked_users: lists.len(), generated: n_dec, attribute_pairs: n_attr },
    };
    report.validate()?;

    let text = |t: &[usize]| ds.vocab.decode(t).join(" ");
    let mut rows = Vec::with_capacity(n_dec);
    let mut traces = Vec::with_capacity(n_dec);
    for (j, d) in decoded.into_iter().enumerate() {
        let x = &ds.interactions[idx[j]];
        let (user, item) = (ds.users[x.user].clone(), ds.items[x.item].clone());
        rows.push(GenerationRow {
            user: user.clone(),
            item: item.clone(),
            rating: x.rating,
            r_hat: r_hat[j],
            f_r: f_r[j],
            text: text(strip_eos(&d.tokens)),
            reference: text(&x.explanation),
            gates: d.gates,
            modes: d.modes,
        });
        traces.push(TraceRow { user, item, positions: d.trace });
    }
    Ok(Evaluation { report, rows, traces })
}

fn decode_with(
    state: &TrainState,
    attrs: &[Vec<usize>],
    user: usize,
    item: usize,
    r_hat: f64,
    mode: Mode,
    decode: &DecodeConfig,
) -> Result<DecodedExplanation> {
    let m = &state.model;
    let policy = GeneratorPolicy {
        store: &m.store,
        gen: &m.gen,
        user,
        item,
        s: m.rec.sentiment(&m.store, user, item)?,
        attrs: attrs[item].clone(),
    };
    let oracle = RegressorOracle { store: &m.store, reg: &m.reg };
    let cfg = DecodeConfig { seed: rng::derive_seed(decode.seed, &[user as u64, item as u64]), ..decode.clone() };
    if mode.searches() {
        constrained_decode(&policy, &oracle, r_hat, &cfg)
    } else {
        topk_decode(&policy, &oracle, &cfg)
    }
}

/// An explanation for one (user, item) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExplanation {
    pub r_hat: f64,
    /// `f^R` of the decoded tokens.
    pub f_r: f64,
    pub decoded: DecodedExplanation,
}

/// Decodes one pair exactly as `evaluate` would.
pub fn explain_pair(state: &TrainState, ds: &Dataset, user: usize, item: usize, mode: Mode, decode: &DecodeConfig) -> Result<PairExplanation> {
    if state.stage < mode.last_stage().min(state.config.mode.last_stage()) {
        return Err(Error::StageOrder { requested: mode.last_stage(), completed: state.stage });
    }
    state.check_vocab(&ds.vocab.fingerprint())?;
    decode.validate()?;
    let m = &state.model;
    let r_hat = predict_clipped(m, ds, user, item)?;
    let decoded = decode_with(state, &generator_attributes(ds), user, item, r_hat, mode, decode)?;
    let f_r = m.reg.predict(&m.store, &decoded.tokens)?;
    Ok(PairExplanation { r_hat, f_r, decoded })
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// `f^R` of every reference explanation in a split, for sanity checks.
pub fn reference_ratings(state: &TrainState, ds: &Dataset, split: Split) -> Result<Vec<f64>> {
    ds.indices(split)
        .par_iter()
        .map(|&k| state.model.reg.predict(&state.model.store, &with_eos(&ds.interactions[k].explanation)))
        .collect()
}
