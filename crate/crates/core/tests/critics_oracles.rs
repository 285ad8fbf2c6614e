use rand::Rng;
use saer::corpus::{synthesize_corpus, Split, SynthSpec, EOS};
use saer::critics::*;
use saer::nn::*;

mod common;
use common::*;

const V: usize = 10;

fn small() -> CriticConfig {
    CriticConfig { d_w: 4, d_h: 3, d_att: 3, hidden: vec![4], ..Default::default() }
}

fn critics(seed: u64) -> (ParamStore, SentimentRegressor, Discriminator) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let reg = SentimentRegressor::new(&mut store, V, &small(), &mut r);
    let disc = Discriminator::new(&mut store, V, &small(), &mut r);
    randomize(&mut store, 0.7, &mut r);
    (store, reg, disc)
}

fn one_hot(t: usize) -> Vec<f64> {
    let mut v = vec![0.0; V];
    v[t] = 1.0;
    v
}

#[test]
fn one_hot_mixtures_equal_ids() {
    let (store, reg, disc) = critics(1);
    let toks = [4, 7, 5, 3];
    let mut g = Graph::new(&store);
    let mix: Vec<TokenInput> = toks.iter().map(|&t| TokenInput::Mix(g.leaf(one_hot(t)))).collect();
    let r = reg.score_graph(&mut g, &mix).unwrap();
    let p = disc.prob_graph(&mut g, &mix).unwrap();
    assert!((g.scalar(r) - reg.predict(&store, &toks).unwrap()).abs() < 1e-9);
    assert!((g.scalar(p) - disc.discriminate(&store, &toks).unwrap()).abs() < 1e-9);
}

#[test]
fn encoder_is_order_sensitive() {
    let (store, reg, _) = critics(2);
    let a = reg.predict(&store, &[4, 5, 6]).unwrap();
    let b = reg.predict(&store, &[6, 5, 4]).unwrap();
    assert_ne!(a, b);
    assert_eq!(a, reg.predict(&store, &[4, 5, 6]).unwrap());
}

#[test]
fn discriminator_output_is_bounded() {
    let (store, _, disc) = critics(3);
    let mut r = rng(33);
    for _ in 0..1000 {
        let len = r.random_range(1..6);
        let toks: Vec<usize> = (0..len).map(|_| r.random_range(0..V)).collect();
        let p = disc.discriminate(&store, &toks).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn relaxed_input_is_lipschitz_on_probes() {
    let (store, reg, _) = critics(4);
    let mut r = rng(44);
    let base: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let w: Vec<f64> = (0..V).map(|_| r.random_range(0.0..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let eval = |ws: &[Vec<f64>]| {
        let mut g = Graph::new(&store);
        let mix: Vec<TokenInput> = ws.iter().map(|w| TokenInput::Mix(g.leaf(w.clone()))).collect();
        let o = reg.score_graph(&mut g, &mix).unwrap();
        g.scalar(o)
    };
    let f0 = eval(&base);
    for k in 0..20 {
        let dir: Vec<Vec<f64>> = (0..3).map(|_| (0..V).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let slope = |d: f64| {
            let moved: Vec<Vec<f64>> = base
                .iter()
                .zip(&dir)
                .map(|(b, e)| b.iter().zip(e).map(|(x, y)| x + d * y).collect())
                .collect();
            (eval(&moved) - f0).abs() / d
        };
        let (s1, s2) = (slope(1e-3), slope(1e-5));
        assert!(s2 < 100.0, "probe {k}: slope {s2}");
        assert!((s1 - s2).abs() < 1e-1 * (1.0 + s2), "probe {k}: {s1} vs {s2}");
    }
}

#[test]
fn discriminator_loss_at_half_is_two_ln2() {
    let (mut store, _, disc) = critics(5);
    let last = disc.head.layers.last().unwrap().clone();
    store.value_mut(last.weight).fill(0.0);
    store.value_mut(last.bias.unwrap()).fill(0.0);
    let mut g = Graph::new(&store);
    let l = disc.loss_discriminator(&mut g, &[&[4, 5], &[6]], &[&[7, 8, 9]], 0.0).unwrap();
    assert!((g.scalar(l) - 2.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn perfect_discriminator_loss_is_near_zero() {
    let (mut store, _, disc) = critics(6);
    let real: &[usize] = &[4, 5];
    let fake: &[usize] = &[7, 8];
    // push the output bias until both clamp limits are reached on the witness pair
    let last = disc.head.layers.last().unwrap().clone();
    let h = |s: &ParamStore, x: &[usize]| {
        let mut g = Graph::new(s);
        let ins: Vec<TokenInput> = x.iter().map(|&t| TokenInput::Id(t)).collect();
        let mut v = disc.encoder.encode(&mut g, &ins).unwrap();
        for l in &disc.head.layers[..disc.head.layers.len() - 1] {
            let y = l.forward(&mut g, v).unwrap();
            v = g.leaky_relu(y, LEAKY_SLOPE);
        }
        g.value(v).to_vec()
    };
    let (hr, hf) = (h(&store, real), h(&store, fake));
    let diff: Vec<f64> = hr.iter().zip(&hf).map(|(a, b)| a - b).collect();
    let scale = 1e4 / diff.iter().map(|d| d * d).sum::<f64>().max(1e-12);
    let new_w: Vec<f64> = diff.iter().map(|d| d * scale).collect();
    let mid: f64 = hr.iter().zip(&hf).zip(&new_w).map(|((a, b), w)| 0.5 * (a + b) * w).sum();
    store.value_mut(last.weight).copy_from_slice(&new_w);
    store.value_mut(last.bias.unwrap())[0] = -mid;
    assert!(disc.discriminate(&store, real).unwrap() > 1.0 - 1e-7);
    assert!(disc.discriminate(&store, fake).unwrap() < 1e-7);
    let mut g = Graph::new(&store);
    let l = disc.loss_discriminator(&mut g, &[real], &[fake], 0.0).unwrap();
    assert!(g.scalar(l) < 1e-6);
}

#[test]
fn discriminator_loss_matches_hand_sum() {
    let (store, _, disc) = critics(7);
    let real: Vec<Vec<usize>> = vec![vec![4, 5, EOS], vec![6, 6]];
    let fake: Vec<Vec<usize>> = vec![vec![9], vec![8, 7, 6, 5], vec![4]];
    let rr: Vec<&[usize]> = real.iter().map(Vec::as_slice).collect();
    let ff: Vec<&[usize]> = fake.iter().map(Vec::as_slice).collect();
    let clamp = |p: f64| p.clamp(1e-7, 1.0 - 1e-7);
    for smoothing in [0.0, 0.1] {
        let mut want = 0.0;
        for x in &rr {
            let p = disc.discriminate(&store, x).unwrap();
            want -= ((1.0 - smoothing) * clamp(p).ln() + smoothing * clamp(1.0 - p).ln()) / 2.0;
        }
        for x in &ff {
            let p = disc.discriminate(&store, x).unwrap();
            want -= clamp(1.0 - p).ln() / 3.0;
        }
        let mut g = Graph::new(&store);
        let l = disc.loss_discriminator(&mut g, &rr, &ff, smoothing).unwrap();
        assert!((g.scalar(l) - want).abs() < 1e-9);
    }
}

#[test]
fn discriminator_loss_gradient_check() {
    let (mut store, _, disc) = critics(8);
    let ids = disc.params();
    let d2 = disc.clone();
    let err = gradient_check(&mut store, &ids, 4, 1e-5, 9, move |g| {
        d2.loss_discriminator(g, &[&[4, 5, 3], &[6]], &[&[9, 8], &[7, 7, 7]], 0.1)
    })
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn regressor_gradient_check_through_mixtures() {
    let (mut store, reg, _) = critics(10);
    let ids = reg.params();
    let r2 = reg.clone();
    let err = gradient_check(&mut store, &ids, 4, 1e-5, 2, move |g| {
        let w = g.leaf(vec![0.1, 0.0, 0.2, 0.0, 0.3, 0.1, 0.1, 0.1, 0.05, 0.05]);
        let o = r2.score_graph(g, &[TokenInput::Id(4), TokenInput::Mix(w), TokenInput::Id(3)])?;
        let d = g.affine_const(o, 1.0, -4.0);
        Ok(g.square(d))
    })
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

fn tiny_synth(seed: u64) -> SynthSpec {
    SynthSpec {
        n_users: 30,
        n_items: 20,
        n_interactions: 500,
        attributes: vec!["crust".into(), "sauce".into(), "service".into(), "view".into(), "price".into()],
        attrs_per_item: 2,
        seed,
        ..SynthSpec::default()
    }
}

fn labelled(ds: &saer::corpus::Dataset, split: Split) -> Vec<(Vec<usize>, f64)> {
    ds.split_interactions(split)
        .into_iter()
        .map(|x| {
            let mut t = x.explanation.clone();
            t.push(EOS);
            (t, x.rating)
        })
        .collect()
}

#[test]
fn pretraining_recovers_planted_sentiment() {
    let ds = synthesize_corpus(&tiny_synth(0)).unwrap();
    let (train, valid) = (labelled(&ds, Split::Train), labelled(&ds, Split::Valid));
    let cfg = CriticConfig { d_w: 8, d_h: 8, d_att: 8, hidden: vec![8], lr: 1e-2, batch_size: 32, ..Default::default() };
    let mut store = ParamStore::new();
    let reg = SentimentRegressor::new(&mut store, ds.vocab.len(), &cfg, &mut rng(1));
    let rep = pretrain_regressor(&mut store, &reg, &train, &valid, &cfg, 5).unwrap();
    assert!(rep.best_valid_mse <= 0.25, "{rep:?}");
    assert!(reg.is_frozen(&store));
    let witness: Vec<usize> = ["the", "crust", "is", "excellent"].iter().map(|w| ds.vocab.id(w)).chain([EOS]).collect();
    let p = reg.predict(&store, &witness).unwrap();
    assert!((p - 5.0).abs() <= 0.5, "prediction {p}");
}

#[test]
fn pretraining_constant_target_and_determinism() {
    let data: Vec<(Vec<usize>, f64)> = (0..40).map(|k| (vec![4 + k % 5, 3], 3.0)).collect();
    let cfg = CriticConfig { lr: 1e-2, ..small() };
    let run = || {
        let mut store = ParamStore::new();
        let reg = SentimentRegressor::new(&mut store, V, &cfg, &mut rng(2));
        pretrain_regressor(&mut store, &reg, &data[..30], &data[30..], &cfg, 9).unwrap();
        (reg.fingerprint(&store), reg.predict(&store, &[5, 6, 3]).unwrap())
    };
    let (fa, pa) = run();
    let (fb, _) = run();
    assert_eq!(fa, fb);
    assert!((pa - 3.0).abs() <= 0.05);
}

#[test]
fn discriminator_separates_disjoint_corpora() {
    let (mut store, _, disc) = critics(12);
    let real: Vec<Vec<usize>> = (0..20).map(|k| vec![4, 5 + k % 2, 4]).collect();
    let fake: Vec<Vec<usize>> = (0..20).map(|k| vec![8, 9 - k % 2, 7]).collect();
    let rr: Vec<&[usize]> = real.iter().map(Vec::as_slice).collect();
    let ff: Vec<&[usize]> = fake.iter().map(Vec::as_slice).collect();
    let ids = disc.params();
    let mut opt = Adam::new(AdamConfig::with_lr(1e-2), &store, &ids);
    for _ in 0..30 {
        let grads = {
            let mut g = Graph::new(&store);
            let l = disc.loss_discriminator(&mut g, &rr, &ff, 0.1).unwrap();
            g.backward(l)
        };
        store.accumulate(&grads);
        opt.step(&mut store).unwrap();
    }
    let mean = |xs: &[&[usize]]| xs.iter().map(|x| disc.discriminate(&store, x).unwrap()).sum::<f64>() / xs.len() as f64;
    assert!(mean(&rr) > mean(&ff));
}
