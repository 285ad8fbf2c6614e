use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use saer::corpus::{
    build_vocabulary, extract_explanations, parse_reviews, recursive_filter, synthesize_corpus, Dataset, Lexicon,
    RatingScale, Split, SynthSpec,
};
use saer::decoding::DecodeConfig;
use saer::pipeline::{
    evaluate, explain_pair, load_checkpoint, run_stages, strip_eos, write_jsonl, EvalOptions, Mode, TrainConfig,
    TrainState, STAGES,
};

#[derive(Parser)]
#[command(name = "saer", version, about = "Sentiment-aligned explainable recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Builds a dataset directory from JSON-lines reviews.
    Prepare(PrepareArgs),
    /// Writes a planted synthetic corpus.
    Synthesize(SynthesizeArgs),
    /// Runs training stages, checkpointing after each.
    Train(TrainArgs),
    /// Explains chosen (user, item) pairs.
    Generate(GenerateArgs),
    /// Prints the evaluation report for a split.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Reviews, one {"user","item","rating","text"} object per line.
    #[arg(long)]
    reviews: PathBuf,
    /// Attribute words, one per line. Mined from the reviews when absent.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    mine_top: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    vocab_cap: usize,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
    #[arg(long, default_value_t = 10)]
    min_user: usize,
    #[arg(long, default_value_t = 10)]
    min_item: usize,
    #[arg(long, default_value_t = 1.0)]
    r_min: f64,
    #[arg(long, default_value_t = 5.0)]
    r_max: f64,
    #[arg(long, default_value_t = 0.1)]
    valid_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with synthesis parameters; built-in defaults otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep ratings continuous instead of rounding them.
    #[arg(long)]
    continuous: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory; training resumes from `latest.ckpt` if present.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stage range `A..B` or a single stage.
    #[arg(long, default_value = "1..5")]
    stage: String,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct DecodeArgs {
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    gate_threshold: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    decode_seed: Option<u64>,
    /// Decoding mode; defaults to the training mode.
    #[arg(long)]
    mode: Option<Mode>,
    /// Debug: write per-position gate values, modes and candidate values as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl DecodeArgs {
    fn apply(&self, base: &DecodeConfig) -> Result<DecodeConfig> {
        let mut d = base.clone();
        if let Some(k) = self.topk {
            d.k = k;
        }
        if let Some(n) = self.rollouts {
            d.n = n;
        }
        if let Some(t) = self.gate_threshold {
            d.gate_threshold = t;
        }
        if let Some(l) = self.max_len {
            d.max_len = l;
        }
        if let Some(t) = self.temperature {
            d.temperature = t;
        }
        if let Some(s) = self.decode_seed {
            d.seed = s;
        }
        d.validate()?;
        Ok(d)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated user names. A single user is paired with every item.
    #[arg(long, value_delimiter = ',', required = true)]
    users: Vec<String>,
    /// Comma-separated item names. A single item is paired with every user.
    #[arg(long, value_delimiter = ',', required = true)]
    items: Vec<String>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Decode only the first N pairs of the split.
    #[arg(long)]
    max_decode: Option<usize>,
    /// Write generated explanations as JSON lines.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

fn parse_stage_range(s: &str) -> Result<(u8, u8)> {
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse()?, b.trim().parse()?),
        None => {
            let v = s.trim().parse()?;
            (v, v)
        }
    };
    if a == 0 || a > b || b > STAGES {
        bail!("stage range {s:?} must satisfy 1 <= A <= B <= {STAGES}");
    }
    Ok((a, b))
}

fn prepare(a: &PrepareArgs) -> Result<()> {
    let scale = RatingScale::new(a.r_min, a.r_max);
    let reviews = parse_reviews(&a.reviews, scale)?.collect::<saer::Result<Vec<_>>>()?;
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::mine(&reviews, a.mine_top),
    };
    let (explanations, summary) = extract_explanations(reviews, &lexicon, a.max_len)?;
    let vocab = build_vocabulary(&explanations, a.vocab_cap, &lexicon)?;
    let ds = Dataset::from_explanations(vocab, &explanations, scale, a.seed)?;
    let mut ds = recursive_filter(&ds, a.min_user, a.min_item)?;
    ds.assign_splits(a.valid_frac, a.test_frac);
    ds.save(&a.out)?;
    log::info!(
        "kept {} reviews, dropped {}, truncated {}",
        summary.kept,
        summary.dropped,
        summary.truncated
    );
    print_sizes(&ds);
    Ok(())
}

fn print_sizes(ds: &Dataset) {
    let n = |s| ds.indices(s).len();
    println!(
        "{}",
        json!({
            "users": ds.n_users(),
            "items": ds.n_items(),
            "interactions": ds.interactions.len(),
            "vocabulary": ds.vocab.len(),
            "attributes": ds.vocab.attribute_ids().len(),
            "train": n(Split::Train),
            "valid": n(Split::Valid),
            "test": n(Split::Test),
        })
    );
}

fn synthesize(a: &SynthesizeArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if a.continuous {
        spec.discretize = false;
    }
    let ds = synthesize_corpus(&spec)?;
    ds.save(&a.out)?;
    print_sizes(&ds);
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let (first, last) = parse_stage_range(&a.stage)?;
    let ds = Dataset::load(&a.data)?;
    let fp = ds.vocab.fingerprint();
    let latest = a.out.join("latest.ckpt");
    let mut state = if latest.exists() {
        let mut st = load_checkpoint(&latest, Some(&fp))?;
        if a.config.is_some() || a.seed.is_some_and(|s| s != st.config.seed) {
            bail!("{} already holds a run; its configuration cannot change", a.out.display());
        }
        if let Some(m) = a.mode {
            st.config.mode = m;
        }
        st
    } else {
        let mut cfg = match &a.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(m) = a.mode {
            cfg.mode = m;
        }
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        TrainState::new(cfg, ds.n_users(), ds.n_items(), ds.vocab.len(), fp)?
    };
    if first != state.stage + 1 {
        bail!("cannot start at stage {first}: the last completed stage is {}", state.stage);
    }
    if last > state.config.mode.last_stage() {
        bail!("mode {} stops after stage {}", state.config.mode, state.config.mode.last_stage());
    }
    run_stages(&mut state, &ds, last, Some(&a.out))?;
    for r in &state.reports[first as usize - 1..] {
        println!("{}", serde_json::to_string(r)?);
    }
    Ok(())
}

fn resolve(names: &[String], known: &[String], kind: &str) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| known.iter().position(|k| k == n).with_context(|| format!("unknown {kind} {n:?}")))
        .collect()
}

fn load_model(data: &Path, model: &Path) -> Result<(Dataset, TrainState)> {
    let ds = Dataset::load(data)?;
    let state = load_checkpoint(model, Some(&ds.vocab.fingerprint()))?;
    Ok((ds, state))
}

fn trace_writer(path: &Option<PathBuf>) -> Result<Option<std::io::BufWriter<std::fs::File>>> {
    Ok(match path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    })
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let (ds, state) = load_model(&a.data, &a.model)?;
    let users = resolve(&a.users, &ds.users, "user")?;
    let items = resolve(&a.items, &ds.items, "item")?;
    let pairs: Vec<(usize, usize)> = match (users.len(), items.len()) {
        (1, _) => items.iter().map(|&i| (users[0], i)).collect(),
        (_, 1) => users.iter().map(|&u| (u, items[0])).collect(),
        (n, m) if n == m => users.into_iter().zip(items).collect(),
        (n, m) => bail!("{n} users and {m} items cannot be paired"),
    };
    let decode = a.decode.apply(&state.config.decode)?;
    let mode = a.decode.mode.unwrap_or(state.config.mode);
    let mut trace = trace_writer(&a.decode.trace)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (u, i) in pairs {
        let e = explain_pair(&state, &ds, u, i, mode, &decode)?;
        let row = json!({
            "user": ds.users[u],
            "item": ds.items[i],
            "r_hat": e.r_hat,
            "f_r": e.f_r,
            "text": ds.vocab.decode(strip_eos(&e.decoded.tokens)).join(" "),
            "gates": e.decoded.gates,
            "modes": e.decoded.modes,
            "q_estimate": e.decoded.q_estimate,
            "evaluations": e.decoded.evaluations,
        });
        writeln!(out, "{row}")?;
        if let Some(w) = trace.as_mut() {
            let t = json!({ "user": ds.users[u], "item": ds.items[i], "positions": e.decoded.trace });
            writeln!(w, "{t}")?;
        }
    }
    if let Some(mut w) = trace {
        w.flush()?;
    }
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs) -> Result<()> {
    let (ds, state) = load_model(&a.data, &a.model)?;
    let mut opts = EvalOptions::new(a.decode.apply(&state.config.decode)?);
    opts.split = a.split;
    opts.mode = a.decode.mode;
    opts.max_decode = a.max_decode;
    let ev = evaluate(&state, &ds, &opts)?;
    if let Some(p) = &a.dump {
        write_jsonl(p, &ev.rows)?;
    }
    if let Some(p) = &a.decode.trace {
        write_jsonl(p, &ev.traces)?;
    }
    println!("{}", ev.report.to_json()?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => run_evaluate(a),
    }
}
