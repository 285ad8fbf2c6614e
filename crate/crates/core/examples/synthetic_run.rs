//! Trains on a planted corpus and prints the three decoding modes' reports.
//!
//! usage: synthetic_run [train-config.json] [seed]

use std::time::Instant;

use saer::corpus::{synthesize_corpus, SynthSpec};
use saer::pipeline::{evaluate, run_stages, EvalOptions, Mode, TrainConfig, TrainState};

fn main() -> saer::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = match args.get(1) {
        Some(p) => TrainConfig::load(p.as_ref())?,
        None => TrainConfig::default(),
    };
    let seed: u64 = args.get(2).map(|s| s.parse().expect("seed")).unwrap_or(0);
    cfg.seed = seed;
    let discretize = std::env::var("DISCRETE").map(|v| v != "0").unwrap_or(true);
    let stop: u8 = std::env::var("STOP").ok().and_then(|v| v.parse().ok()).unwrap_or(5);
    let ds = synthesize_corpus(&SynthSpec { seed, discretize, ..SynthSpec::default() })?;
    let t = Instant::now();
    let mut state = TrainState::new(cfg.clone(), ds.n_users(), ds.n_items(), ds.vocab.len(), ds.vocab.fingerprint())?;
    run_stages(&mut state, &ds, stop.min(4), None)?;
    if stop < 4 {
        for r in &state.reports {
            println!("stage {} epochs {} best {} curve {:?}", r.stage, r.epochs, r.best_epoch, r.valid_curve);
        }
        let test = ds.indices(saer::corpus::Split::Test);
        let mut per_user = std::collections::BTreeMap::<usize, Vec<(usize, f64, f64)>>::new();
        let (mut p, mut t) = (Vec::new(), Vec::new());
        for &k in &test {
            let x = &ds.interactions[k];
            let r = saer::pipeline::predict_clipped(&state.model, &ds, x.user, x.item)?;
            p.push(r);
            t.push(x.rating);
            per_user.entry(x.user).or_default().push((x.item, r, x.rating));
        }
        let lists: Vec<Vec<f64>> = per_user
            .values()
            .filter(|v| v.len() >= 2)
            .map(|v| {
                let mut v = v.clone();
                v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                v.into_iter().map(|x| x.2).collect()
            })
            .collect();
        let ndcg = saer::metrics::mean_ndcg(&lists, 5, saer::metrics::Gain::Linear)?;
        println!("test rmse {:.4} ndcg@5 {:.4}", saer::metrics::rmse_mae(&p, &t)?.0, ndcg);
        return Ok(());
    }
    let after4 = state.clone();
    println!("stages 1-4: {:.1}s", t.elapsed().as_secs_f64());
    run_stages(&mut state, &ds, 5, None)?;
    println!("stage 5: {:.1}s", t.elapsed().as_secs_f64());
    for r in &state.reports {
        println!("stage {} epochs {} best {} curve {:?}", r.stage, r.epochs, r.best_epoch, r.valid_curve);
    }
    let mut opts = EvalOptions::new(cfg.decode.clone());
    opts.max_decode = std::env::var("MAXDEC").ok().map(|v| v.parse().expect("MAXDEC"));
    for (name, st, mode) in [("topk", &after4, Mode::Topk), ("reg_topk", &state, Mode::RegTopk), ("saer", &state, Mode::Saer)] {
        let t = Instant::now();
        opts.mode = Some(mode);
        let ev = evaluate(st, &ds, &opts)?;
        println!("{name}: {} ({:.1}s)", serde_json::to_string(&ev.report)?, t.elapsed().as_secs_f64());
        let gates: Vec<f64> = ev.rows.iter().flat_map(|r| r.gates.iter().copied()).collect();
        let mut sorted = gates.clone();
        sorted.sort_by(f64::total_cmp);
        let q = |f: f64| sorted[((sorted.len() - 1) as f64 * f) as usize];
        println!("   gate quantiles 10/50/90/max: {:.3} {:.3} {:.3} {:.3}", q(0.1), q(0.5), q(0.9), q(1.0));
        for row in ev.rows.iter().take(3) {
            println!("   gates {:?}", row.gates.iter().map(|g| (g * 100.0).round() / 100.0).collect::<Vec<_>>());
            println!("   {:.2} {:.2} {:.2} | {} | {}", row.rating, row.r_hat, row.f_r, row.text, row.reference);
        }
    }
    Ok(())
}
