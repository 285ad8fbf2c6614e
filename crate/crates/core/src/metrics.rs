//! Evaluation metrics. Every function here is pure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pairs(a: usize, b: usize, what: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::Shape { context: what, left: vec![a], right: vec![b] });
    }
    if a == 0 {
        return Err(Error::Empty(what));
    }
    Ok(())
}

pub fn rmse_mae(predictions: &[f64], truths: &[f64]) -> Result<(f64, f64)> {
    check_pairs(predictions.len(), truths.len(), "rating pairs")?;
    let n = predictions.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(truths) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    Ok(((se / n).sqrt(), ae / n))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// gain = r
    #[default]
    Linear,
    /// gain = 2^r - 1
    Exponential,
}

impl Gain {
    fn apply(self, r: f64) -> f64 {
        match self {
            Gain::Linear => r,
            Gain::Exponential => r.exp2() - 1.0,
        }
    }
}

fn dcg(truths: &[f64], k: usize, gain: Gain) -> f64 {
    truths
        .iter()
        .take(k)
        .enumerate()
        .map(|(p, &r)| gain.apply(r) / ((p + 2) as f64).log2())
        .sum()
}

/// NDCG@k of `truths`, given in ranked order. Zero when the ideal DCG is zero.
pub fn ndcg_at_k(truths: &[f64], k: usize, gain: Gain) -> Result<f64> {
    if truths.is_empty() {
        return Err(Error::Empty("ranked list"));
    }
    let mut ideal = truths.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, k, gain);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(truths, k, gain) / idcg)
}

/// Mean NDCG@k over several ranked lists.
pub fn mean_ndcg(lists: &[Vec<f64>], k: usize, gain: Gain) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Empty("ranked lists"));
    }
    let mut total = 0.0;
    for l in lists {
        total += ndcg_at_k(l, k, gain)?;
    }
    Ok(total / lists.len() as f64)
}

fn ngram_counts<T: Eq + Hash + Clone>(x: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if x.len() >= n {
        for w in x.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Unsmoothed corpus BLEU-n in [0, 100] with one reference per candidate.
pub fn bleu<T: Eq + Hash + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    check_pairs(candidates.len(), references.len(), "BLEU corpus")?;
    if n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for order in 1..=n {
            let rc = ngram_counts(r, order);
            for (g, cnt) in ngram_counts(c, order) {
                matched[order - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
                total[order - 1] += cnt;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for (m, t) in matched.iter().zip(&total) {
        if *m == 0 {
            return Ok(0.0);
        }
        log_p += (*m as f64 / *t as f64).ln();
    }
    let bp = if cand_len < ref_len { (1.0 - ref_len as f64 / cand_len as f64).exp() } else { 1.0 };
    Ok(100.0 * bp * (log_p / n as f64).exp())
}

/// Macro-averaged attribute precision and recall. Each pair contributes its
/// predicted and reference attribute sets; pairs with an empty reference set
/// are skipped, and an empty prediction scores 0 on both.
pub fn attribute_pr(predicted: &[BTreeSet<usize>], truth: &[BTreeSet<usize>]) -> Result<(f64, f64, usize)> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape { context: "attribute pairs", left: vec![predicted.len()], right: vec![truth.len()] });
    }
    let (mut p, mut r, mut n) = (0.0, 0.0, 0usize);
    for (pred, t) in predicted.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        n += 1;
        if pred.is_empty() {
            continue;
        }
        let hit = pred.intersection(t).count() as f64;
        p += hit / pred.len() as f64;
        r += hit / t.len() as f64;
    }
    if n == 0 {
        return Err(Error::Empty("evaluable attribute pairs"));
    }
    Ok((p / n as f64, r / n as f64, n))
}

/// Attribute set of a token sequence under an attribute predicate.
pub fn attribute_set(tokens: &[usize], is_attribute: impl Fn(usize) -> bool) -> BTreeSet<usize> {
    tokens.iter().copied().filter(|&w| is_attribute(w)).collect()
}

/// `(RMSE(f^R(x̂), r̂), RMSE(f^R(x̂), r))`.
pub fn alignment_pd_gt(explanation_ratings: &[f64], predicted: &[f64], truths: &[f64]) -> Result<(f64, f64)> {
    check_pairs(explanation_ratings.len(), predicted.len(), "alignment pairs")?;
    check_pairs(explanation_ratings.len(), truths.len(), "alignment pairs")?;
    let (pd, _) = rmse_mae(explanation_ratings, predicted)?;
    let (gt, _) = rmse_mae(explanation_ratings, truths)?;
    Ok((pd, gt))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCounts {
    pub rating_pairs: usize,
    pub ranked_users: usize,
    pub generated: usize,
    pub attribute_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub ndcg: BTreeMap<usize, f64>,
    pub bleu: BTreeMap<usize, f64>,
    pub attr_precision: f64,
    pub attr_recall: f64,
    pub pd_rmse: f64,
    pub gt_rmse: f64,
    pub counts: EvalCounts,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("rmse", self.rmse),
            ("mae", self.mae),
            ("attr_precision", self.attr_precision),
            ("attr_recall", self.attr_recall),
            ("pd_rmse", self.pd_rmse),
            ("gt_rmse", self.gt_rmse),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.attr_precision) || !unit(self.attr_recall) || !self.ndcg.values().all(|&v| unit(v)) {
            return Err(Error::Config("report value outside [0, 1]".into()));
        }
        if !self.bleu.values().all(|v| (0.0..=100.0).contains(v)) {
            return Err(Error::Config("BLEU outside [0, 100]".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rating_arithmetic() {
        assert_eq!(rmse_mae(&[4.0], &[3.0]).unwrap(), (1.0, 1.0));
        assert_eq!(rmse_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert!(rmse_mae(&[], &[]).is_err());
        assert!(rmse_mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&[5.0, 4.0, 1.0], 3, Gain::Linear).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[5.0, 1.0, 4.0], 1, Gain::Linear).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[0.0, 0.0], 2, Gain::Linear).unwrap(), 0.0);
        assert!(ndcg_at_k(&[], 2, Gain::Linear).is_err());
    }

    #[test]
    fn attribute_cases() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        let (p, r, n) = attribute_pr(&[s(&[1, 3])], &[s(&[1, 2, 3])]).unwrap();
        assert_eq!((p, n), (1.0, 1));
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(attribute_pr(&[s(&[])], &[s(&[1])]).unwrap(), (0.0, 0.0, 1));
        assert!(attribute_pr(&[s(&[1])], &[s(&[])]).is_err());
    }

    #[test]
    fn pd_gt_single_pair() {
        assert_eq!(alignment_pd_gt(&[3.0], &[4.0], &[5.0]).unwrap(), (1.0, 2.0));
        assert_eq!(alignment_pd_gt(&[2.0, 3.0], &[2.0, 3.0], &[1.0, 1.0]).unwrap().0, 0.0);
    }
}
