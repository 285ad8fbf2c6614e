use proptest::prelude::*;
use rand::Rng;
use saer::metrics::*;

mod common;
use common::*;

fn brute_ndcg(ranked: &[f64], k: usize) -> f64 {
    let disc = |p: usize| 1.0 / ((p as f64) + 2.0).ln() * 2f64.ln();
    let dcg: f64 = (0..k.min(ranked.len())).map(|p| ranked[p] * disc(p)).sum();
    // ideal: repeatedly take the largest remaining gain
    let mut left = ranked.to_vec();
    let mut idcg = 0.0;
    for p in 0..k.min(ranked.len()) {
        let (j, _) = left.iter().enumerate().fold((0, f64::MIN), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
        idcg += left.remove(j) * disc(p);
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn ndcg_worked_example() {
    let v = ndcg_at_k(&[3.0, 5.0], 2, Gain::Linear).unwrap();
    let dcg = 3.0 + 5.0 / 3f64.log2();
    let idcg = 5.0 + 3.0 / 3f64.log2();
    assert!((dcg - 6.1546).abs() < 1e-4 && (idcg - 6.8927).abs() < 1e-4);
    assert!((v - dcg / idcg).abs() < 1e-12);
    assert!((v - 0.8929).abs() < 1e-4);
}

#[test]
fn ndcg_matches_brute_force() {
    let mut r = rng(21);
    for _ in 0..1000 {
        let len = r.random_range(1..=20);
        let list: Vec<f64> = (0..len).map(|_| r.random_range(0..=5) as f64).collect();
        for k in [3, 5, 10] {
            let got = ndcg_at_k(&list, k, Gain::Linear).unwrap();
            assert!((got - brute_ndcg(&list, k)).abs() < 1e-9);
            assert!((0.0..=1.0 + 1e-12).contains(&got));
        }
    }
}

#[test]
fn bleu_hand_cases() {
    let c = vec![words("the cat sat")];
    let r = vec![words("the cat sat down")];
    let want = 100.0 * (1.0 - 4.0 / 3.0f64).exp();
    assert!((bleu(&c, &r, 1).unwrap() - want).abs() < 1e-12);
    assert!((bleu(&c, &r, 1).unwrap() - 71.65).abs() < 5e-3);

    // clipped counts: "the" matches once
    let c = vec![words("the the the the")];
    let r = vec![words("the cat")];
    assert!((bleu(&c, &r, 1).unwrap() - 25.0).abs() < 1e-12);

    // p1 = 3/4, p2 = 2/3, equal lengths
    let c = vec![words("a b c d")];
    let r = vec![words("a b c e")];
    assert!((bleu(&c, &r, 2).unwrap() - 100.0 * 0.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn bleu_identity_disjoint_and_pooling() {
    let corpus = vec![words("good food here"), words("the service was slow"), words("ok")];
    for n in 1..=4 {
        assert!((bleu(&corpus, &corpus, n).unwrap() - 100.0).abs() < 1e-9);
    }
    let other = vec![words("x y z"), words("p q r s"), words("w")];
    assert_eq!(bleu(&other, &corpus, 1).unwrap(), 0.0);
    // pooled, not averaged: one perfect and one disjoint sentence give p1 = 3/6
    let c = vec![words("a b c"), words("x y z")];
    let r = vec![words("a b c"), words("d e f")];
    assert!((bleu(&c, &r, 1).unwrap() - 50.0).abs() < 1e-12);
    assert!(bleu::<String>(&[], &[], 1).is_err());
}

#[test]
fn report_keys_are_exact() {
    let rep = EvalReport {
        rmse: 1.0,
        mae: 0.8,
        ndcg: [(5, 0.9)].into(),
        bleu: [(1, 20.0), (4, 2.0)].into(),
        attr_precision: 0.3,
        attr_recall: 0.2,
        pd_rmse: 0.5,
        gt_rmse: 1.1,
        counts: EvalCounts::default(),
    };
    rep.validate().unwrap();
    let v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    let mut want = vec!["attr_precision", "attr_recall", "bleu", "counts", "gt_rmse", "mae", "ndcg", "pd_rmse", "rmse"];
    want.sort();
    let mut got = keys.clone();
    got.sort();
    assert_eq!(got, want);
    let back: EvalReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, rep);
    let bad = EvalReport { attr_precision: 1.5, ..rep };
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (rmse, mae) = rmse_mae(&p, &t).unwrap();
        prop_assert!(rmse >= mae - 1e-12);
    }

    #[test]
    fn pd_gt_ignores_order(rows in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0, 1.0f64..5.0), 1..30), rot in 0usize..30) {
        let f: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let p: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let a = alignment_pd_gt(&f, &p, &t).unwrap();
        let k = rot % rows.len();
        let spin = |v: &[f64]| { let mut v = v.to_vec(); v.rotate_left(k); v.reverse(); v };
        let b = alignment_pd_gt(&spin(&f), &spin(&p), &spin(&t)).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }
}
