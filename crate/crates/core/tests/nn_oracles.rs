//! Layer forward passes against direct recomputation, and finite-difference checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saer::nn::*;

mod common;
use common::*;

#[test]
fn affine_identity_and_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 2, 2, true, &mut rng);
    store.value_mut(lin.weight).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    let mut g = Graph::new(&store);
    let x = g.leaf(vec![2.0, -3.0]);
    let y = lin.forward(&mut g, x).unwrap();
    assert_eq!(g.value(y), &[2.0, -3.0]);

    store.value_mut(lin.weight).fill(0.0);
    store.value_mut(lin.bias.unwrap()).copy_from_slice(&[1.0, 1.0]);
    let mut g = Graph::new(&store);
    let x = g.leaf(vec![17.0, -0.25]);
    let y = lin.forward(&mut g, x).unwrap();
    assert_eq!(g.value(y), &[1.0, 1.0]);
}

#[test]
fn affine_matches_dot_product_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 7, 5, true, &mut rng);
    randomize(&mut store, 1.0, &mut rng);
    let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = store.value(lin.weight).to_vec();
    let b = store.value(lin.bias.unwrap()).to_vec();
    let mut g = Graph::new(&store);
    let xv = g.leaf(x.clone());
    let y = lin.forward(&mut g, xv).unwrap();
    for r in 0..5 {
        let mut acc = b[r];
        for c in 0..7 {
            acc += w[r * 7 + c] * x[c];
        }
        assert!((g.value(y)[r] - acc).abs() < 1e-12);
    }
}

#[test]
fn affine_shape_error_names_both_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 3, 2, true, &mut rng);
    let mut g = Graph::new(&store);
    let x = g.leaf(vec![1.0; 4]);
    let err = lin.forward(&mut g, x).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4]"), "{err}");
}

#[test]
fn affine_backward_is_exact_including_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 3, 2, true, &mut rng);
    let x = vec![0.5, -1.0, 2.0];
    let mut g = Graph::new(&store);
    let xv = g.leaf(x.clone());
    let y = lin.forward(&mut g, xv).unwrap();
    let s = g.sum(y);
    let (grads, inputs) = g.backward_inputs(s, &[xv]);
    // d(sum Wx+b)/dW[r][c] = x[c]; /db = 1; /dx[c] = Σ_r W[r][c]
    let gw = grads.get(lin.weight).unwrap();
    for r in 0..2 {
        for c in 0..3 {
            assert_eq!(gw[r * 3 + c], x[c]);
        }
    }
    assert_eq!(grads.get(lin.bias.unwrap()).unwrap(), &[1.0, 1.0]);
    let w = store.value(lin.weight);
    for c in 0..3 {
        assert!((inputs[0][c] - (w[c] + w[3 + c])).abs() < 1e-15);
    }
}

#[test]
fn gru_zero_params_halve_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "g", 3, 2, &mut rng);
    for id in cell.params() {
        store.value_mut(id).fill(0.0);
    }
    let mut g = Graph::new(&store);
    let x = g.leaf(vec![0.3, -0.2, 1.0]);
    let h = g.leaf(vec![1.0, -1.0]);
    let h1 = cell.step(&mut g, x, h).unwrap();
    assert_eq!(g.value(h1), &[0.5, -0.5]);
    let h0 = g.leaf(vec![0.0, 0.0]);
    let h2 = cell.step(&mut g, x, h0).unwrap();
    assert_eq!(g.value(h2), &[0.0, 0.0]);
}

#[test]
fn gru_matches_stepwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "g", 4, 3, &mut rng);
    randomize(&mut store, 0.8, &mut rng);
    let oracle = GruOracle::from(&store, &cell);
    let mut h_or = vec![0.1, -0.4, 0.7];
    let mut g = Graph::new(&store);
    let mut h = g.leaf(h_or.clone());
    for _ in 0..5 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xv = g.leaf(x.clone());
        h = cell.step(&mut g, xv, h).unwrap();
        h_or = oracle.step(&x, &h_or);
        for (a, b) in g.value(h).iter().zip(&h_or) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn gru_dimension_mismatch_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "g", 3, 2, &mut rng);
    let mut g = Graph::new(&store);
    let x = g.leaf(vec![0.0; 2]);
    let h = g.leaf(vec![0.0; 2]);
    assert!(cell.step(&mut g, x, h).is_err());
}

fn birnn_setup(seed: u64) -> (ParamStore, BiGruAttention, ParamId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let emb = store.add("emb", &[10, 4], Init::Uniform(1.0), &mut rng);
    let enc = BiGruAttention::new(&mut store, "enc", 4, 3, 5, &mut rng);
    randomize(&mut store, 0.9, &mut rng);
    (store, enc, emb)
}

#[test]
fn birnn_single_position_attends_fully() {
    let (store, enc, emb) = birnn_setup(3);
    let mut g = Graph::new(&store);
    let x = embed(&mut g, emb, TokenInput::Id(4)).unwrap();
    let out = enc.encode(&mut g, &[x]).unwrap();
    assert_eq!(g.value(out.alphas), &[1.0]);
    // pooled equals concat(fwd state, bwd state) of that position
    let fwd = GruOracle::from(&store, &enc.forward);
    let bwd = GruOracle::from(&store, &enc.backward);
    let xv = g.value(x).to_vec();
    let mut expect = fwd.step(&xv, &[0.0; 3]);
    expect.extend(bwd.step(&xv, &[0.0; 3]));
    for (a, b) in g.value(out.pooled).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn birnn_empty_sequence_errors() {
    let (store, enc, _) = birnn_setup(3);
    let mut g = Graph::new(&store);
    assert!(enc.encode(&mut g, &[]).is_err());
}

#[test]
fn birnn_matches_recomputation_oracle() {
    for seed in 0..20 {
        let (store, enc, emb) = birnn_setup(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let len = rng.random_range(2..8);
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..10)).collect();
        let mut g = Graph::new(&store);
        let xs: Vec<Var> = tokens
            .iter()
            .map(|&t| embed(&mut g, emb, TokenInput::Id(t)).unwrap())
            .collect();
        let out = enc.encode(&mut g, &xs).unwrap();
        let alpha_sum: f64 = g.value(out.alphas).iter().sum();
        assert!((alpha_sum - 1.0).abs() < 1e-9);

        // oracle
        let table = store.value(emb);
        let xs_or: Vec<Vec<f64>> = tokens.iter().map(|&t| table[t * 4..t * 4 + 4].to_vec()).collect();
        let fwd = GruOracle::from(&store, &enc.forward);
        let bwd = GruOracle::from(&store, &enc.backward);
        let mut hf = vec![vec![0.0; 3]; len];
        let mut h = vec![0.0; 3];
        for t in 0..len {
            h = fwd.step(&xs_or[t], &h);
            hf[t] = h.clone();
        }
        let mut hb = vec![vec![0.0; 3]; len];
        let mut h = vec![0.0; 3];
        for t in (0..len).rev() {
            h = bwd.step(&xs_or[t], &h);
            hb[t] = h.clone();
        }
        let states: Vec<Vec<f64>> = (0..len).map(|t| [hf[t].clone(), hb[t].clone()].concat()).collect();
        let wa = store.value(enc.att_proj);
        let va = store.value(enc.att_vec);
        let scores: Vec<f64> = states
            .iter()
            .map(|s| {
                matvec(wa, 5, 6, s)
                    .iter()
                    .zip(va)
                    .map(|(p, v)| p.tanh() * v)
                    .sum()
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let ex: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = ex.iter().sum();
        let mut pooled = vec![0.0; 6];
        for t in 0..len {
            for k in 0..6 {
                pooled[k] += ex[t] / z * states[t][k];
            }
        }
        for (a, b) in g.value(out.pooled).iter().zip(&pooled) {
            assert!((a - b).abs() < 1e-10, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn gradient_check_linear_mse_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 4, 3, true, &mut rng);
    randomize(&mut store, 1.0, &mut rng);
    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ids = lin.params();
    // Central differences are exact for a quadratic loss, so a wide step only
    // removes roundoff.
    let err = gradient_check(&mut store, &ids, 100, 1e-2, 0, |g| {
        let xv = g.leaf(x.clone());
        let tv = g.leaf(t.clone());
        let y = lin.forward(g, xv)?;
        let d = g.sub(y, tv);
        let sq = g.square(d);
        let s = g.sum(sq);
        Ok(g.scale(s, 1.0 / 3.0))
    })
    .unwrap();
    assert!(err < 1e-10, "relative error {err}");
}

#[test]
fn gradient_check_gru_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let emb = store.add("emb", &[6, 4], Init::Uniform(1.0), &mut rng);
    let cell = GruCell::new(&mut store, "g", 4, 5, &mut rng);
    let out = Linear::new(&mut store, "out", 5, 6, true, &mut rng);
    randomize(&mut store, 0.7, &mut rng);
    let seq = [1usize, 4, 2, 5];
    let ids: Vec<ParamId> = store.ids().collect();
    let err = gradient_check(&mut store, &ids, 20, 1e-5, 1, |g| {
        let mut h = g.leaf(vec![0.0; 5]);
        let mut terms = Vec::new();
        let mut prev = 0usize;
        for &w in &seq {
            let x = embed(g, emb, TokenInput::Id(prev))?;
            h = cell.step(g, x, h)?;
            let logits = out.forward(g, h)?;
            let p = g.softmax(logits);
            let lp = g.ln(p, 1e-300);
            terms.push(g.pick(lp, w));
            prev = w;
        }
        let s = g.sum_scalars(&terms);
        Ok(g.scale(s, -1.0))
    })
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}
