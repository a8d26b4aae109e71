use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use s3ma::ablation::{mean_t2v_r1, run_ablation, write_ablation_csv};
use s3ma::embedding_store::{read_embeddings, read_vocabulary, write_embeddings, write_vocabulary, EmbeddingSet};
use s3ma::eval_metrics::{write_reports_csv, write_reports_json};
use s3ma::trainer::{read_checkpoint, write_checkpoint, write_trace_csv};
use s3ma::{
    evaluate, generate_aligned_dataset, init_concepts, inverted_softmax, train, validate, ConceptSpace, HeadMask,
    SentenceMode, Study, TemporalMode,
};

mod config;

const EMBEDDINGS_FILE: &str = "embeddings.emb";
const VOCAB_FILE: &str = "vocab.voc";

#[derive(Parser)]
#[command(name = "s3ma", version, about = "Sparse concept-space video-text retrieval on precomputed embeddings")]
struct Cli {
    /// TOML file with [synth], [train], [eval] and [ablate] sections; flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic aligned dataset (embeddings.emb + vocab.voc)
    GenSynth(GenSynthArgs),
    /// Cluster a vocabulary into a concept file
    Cluster(ClusterArgs),
    /// Train on an embedding file, writing a checkpoint and a loss trace
    Train(TrainArgs),
    /// Retrieval metrics of a checkpoint on an embedding file
    Eval(EvalArgs),
    /// Run an ablation study on synthetic data
    Ablate(AblateArgs),
    /// Top-k candidates for one query id
    Retrieve(RetrieveArgs),
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    /// words per caption
    #[arg(long)]
    words: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct GenSynthArgs {
    #[command(flatten)]
    synth: SynthFlags,
    #[arg(long)]
    seed: Option<u64>,
    /// output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 1024)]
    nc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// enabled heads: `all`, `dense`, or e.g. `dV+sF`
    #[arg(long)]
    heads: Option<String>,
    /// mean-pool frames instead of the attention layer
    #[arg(long)]
    no_temporal: bool,
    /// project the sentence embedding instead of looking up caption words
    #[arg(long)]
    anchor_free: bool,
    /// keep the concept matrix fixed
    #[arg(long)]
    freeze_concepts: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    concepts: PathBuf,
    /// checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// loss trace CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ScoringFlags {
    /// rescore with the dual softmax before ranking
    #[arg(long)]
    inverted_softmax: bool,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    scoring: ScoringFlags,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// heads, temporal, concepts, losses or anchor
    #[arg(long)]
    study: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    synth: SynthFlags,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// CSV path; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum QueryDirection {
    /// the query is a caption, candidates are videos
    T2v,
    /// the query is a video, candidates are captions
    V2t,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// item id of the query
    #[arg(long)]
    query: String,
    #[arg(long, value_enum, default_value = "t2v")]
    direction: QueryDirection,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    scoring: ScoringFlags,
}

/// Bad flag values or config contents; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_usage = err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<s3ma::Error>(),
                Some(s3ma::Error::Config(_) | s3ma::Error::NoHeadsEnabled)
            )
    });
    if is_usage {
        2
    } else {
        1
    }
}

fn log_resolved(command: &str, resolved: &impl Serialize) {
    match serde_json::to_string(resolved) {
        Ok(json) => eprintln!("{command}: resolved config {json}"),
        Err(e) => eprintln!("{command}: could not serialize config: {e}"),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn apply_synth(cfg: &mut s3ma::SynthConfig, f: &SynthFlags) {
    if let Some(v) = f.pairs {
        cfg.n_pairs = v;
    }
    if let Some(v) = f.dim {
        cfg.d = v;
    }
    if let Some(v) = f.frames {
        cfg.n_frame = v;
    }
    if let Some(v) = f.vocab {
        cfg.vocab_size = v;
    }
    if let Some(v) = f.words {
        cfg.words_per_caption = v;
    }
    if let Some(v) = f.noise {
        cfg.noise_sigma = v;
    }
}

fn apply_train(cfg: &mut s3ma::TrainConfig, f: &TrainFlags) -> Result<()> {
    if let Some(v) = f.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = f.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = f.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = f.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = f.warmup {
        cfg.warmup_steps = v;
    }
    if let Some(v) = f.seed {
        cfg.seed = v;
    }
    if let Some(v) = f.alpha {
        cfg.weights.alpha = v;
    }
    if let Some(v) = f.beta {
        cfg.weights.beta = v;
    }
    if let Some(h) = &f.heads {
        cfg.heads = h.parse::<HeadMask>().map_err(|e| usage(e.to_string()))?;
    }
    if f.no_temporal {
        cfg.temporal = TemporalMode::MeanPool;
    }
    if f.anchor_free {
        cfg.sentence_mode = SentenceMode::AnchorFree;
    }
    if f.freeze_concepts {
        cfg.train_concepts = false;
    }
    Ok(())
}

fn resolve_scoring(file: &config::EvalOptions, f: &ScoringFlags) -> Result<config::EvalOptions> {
    let resolved = config::EvalOptions {
        inverted_softmax: file.inverted_softmax || f.inverted_softmax,
        tau: f.tau.unwrap_or(file.tau),
    };
    if !(resolved.tau > 0.0) || !resolved.tau.is_finite() {
        return Err(usage(format!("--tau must be positive, got {}", resolved.tau)));
    }
    Ok(resolved)
}

fn load_data(path: &Path) -> Result<EmbeddingSet> {
    read_embeddings(path).with_context(|| format!("reading embeddings {}", path.display()))
}

fn cmd_gen_synth(file: &config::FileConfig, args: &GenSynthArgs) -> Result<()> {
    let mut cfg = file.synth.clone();
    apply_synth(&mut cfg, &args.synth);
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    log_resolved("gen-synth", &cfg);
    let (set, vocab) = generate_aligned_dataset(&cfg)?;
    let violations = validate(&set, Some(vocab.len()));
    if !violations.is_empty() {
        return Err(s3ma::Error::Validation(violations).into());
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let emb = args.out.join(EMBEDDINGS_FILE);
    let voc = args.out.join(VOCAB_FILE);
    write_embeddings(&set, &emb).with_context(|| format!("writing {}", emb.display()))?;
    write_vocabulary(&vocab, &voc).with_context(|| format!("writing {}", voc.display()))?;
    println!(
        "{}",
        serde_json::json!({
            "embeddings": emb,
            "vocabulary": voc,
            "pairs": set.len(),
            "words": vocab.len(),
        })
    );
    Ok(())
}

fn cmd_cluster(args: &ClusterArgs) -> Result<()> {
    log_resolved("cluster", &serde_json::json!({ "vocab": args.vocab, "nc": args.nc, "seed": args.seed }));
    let vocab = read_vocabulary(&args.vocab).with_context(|| format!("reading vocabulary {}", args.vocab.display()))?;
    let space = init_concepts(&vocab, args.nc, args.seed)?;
    space
        .write(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "{}",
        serde_json::json!({ "concepts": args.out, "n_c": space.n_concepts(), "words": space.n_words() })
    );
    Ok(())
}

fn cmd_train(file: &config::FileConfig, args: &TrainArgs) -> Result<()> {
    let mut cfg = file.train.clone();
    apply_train(&mut cfg, &args.train)?;
    let set = load_data(&args.data)?;
    let space = ConceptSpace::read(&args.concepts).with_context(|| format!("reading concepts {}", args.concepts.display()))?;
    cfg.n_c = space.n_concepts();
    log_resolved("train", &cfg);

    let outcome = train(&set, &space, &cfg)?;
    write_checkpoint(&outcome.params, &cfg, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(p) = &args.trace {
        let mut w = output(Some(p))?;
        write_trace_csv(&outcome.trace, &mut w)?;
        w.flush()?;
    }
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": args.out,
            "steps": outcome.trace.len(),
            "initial_total": outcome.trace.first().map(|r| r.total),
            "final_total": outcome.trace.last().map(|r| r.total),
        })
    );
    Ok(())
}

fn cmd_eval(file: &config::FileConfig, args: &EvalArgs) -> Result<()> {
    let scoring = resolve_scoring(&file.eval, &args.scoring)?;
    log_resolved("eval", &scoring);
    let (params, _) = read_checkpoint(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let set = load_data(&args.data)?;
    let tau = scoring.inverted_softmax.then_some(scoring.tau);
    let reports = evaluate(&params, &set, tau)?;
    let mut w = output(args.out.as_deref())?;
    match args.format {
        Format::Json => {
            write_reports_json(&reports, &mut w)?;
            writeln!(w)?;
        }
        Format::Csv => write_reports_csv(&reports, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn cmd_ablate(file: &config::FileConfig, args: &AblateArgs) -> Result<()> {
    let mut opts = file.ablate.clone();
    if let Some(s) = &args.study {
        opts.study = s.parse::<Study>().map_err(|e| usage(e.to_string()))?;
    }
    if let Some(s) = &args.seeds {
        opts.seeds = s.clone();
    }
    apply_synth(&mut opts.setup.synth, &args.synth);
    if let Some(v) = args.nc {
        opts.setup.train.n_c = v;
    }
    if let Some(v) = args.epochs {
        opts.setup.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        opts.setup.train.batch_size = v;
    }
    if let Some(v) = args.train_fraction {
        opts.setup.train_fraction = v;
    }
    if opts.seeds.is_empty() {
        return Err(usage("at least one seed is required"));
    }
    log_resolved("ablate", &opts);

    let rows = run_ablation(opts.study, &opts.setup, &opts.seeds)?;
    let mut w = output(args.out.as_deref())?;
    write_ablation_csv(&rows, &mut w)?;
    w.flush()?;
    let mut seen = Vec::new();
    for r in &rows {
        if !seen.contains(&r.variant) {
            seen.push(r.variant.clone());
            if let Some(m) = mean_t2v_r1(&rows, &r.variant) {
                eprintln!("ablate: {:<16} mean t2v R@1 {m:.2}", r.variant);
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Hit<'a> {
    rank: usize,
    id: &'a str,
    score: f64,
    is_match: bool,
}

fn cmd_retrieve(file: &config::FileConfig, args: &RetrieveArgs) -> Result<()> {
    let scoring = resolve_scoring(&file.eval, &args.scoring)?;
    log_resolved("retrieve", &scoring);
    if args.k == 0 {
        return Err(usage("--k must be positive"));
    }
    let (params, _) = read_checkpoint(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let set = load_data(&args.data)?;
    let q = set
        .position(&args.query)
        .ok_or_else(|| usage(format!("no item with id {:?}", args.query)))?;
    let mut s = params.score_set(&set)?;
    if scoring.inverted_softmax {
        s = inverted_softmax(&s, scoring.tau)?;
    }
    let n = set.len();
    let scores: Vec<f64> = match args.direction {
        QueryDirection::V2t => s.row(q).to_vec(),
        QueryDirection::T2v => (0..n).map(|i| s[(i, q)]).collect(),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let hits: Vec<Hit> = order
        .iter()
        .take(args.k)
        .enumerate()
        .map(|(r, &j)| Hit {
            rank: r + 1,
            id: &set.items[j].id,
            score: scores[j],
            is_match: j == q,
        })
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "query": args.query,
            "direction": args.direction,
            "hits": hits,
        }))?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = config::load(cli.config.as_deref()).map_err(usage)?;
    match &cli.command {
        Command::GenSynth(a) => cmd_gen_synth(&file, a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Train(a) => cmd_train(&file, a),
        Command::Eval(a) => cmd_eval(&file, a),
        Command::Ablate(a) => cmd_ablate(&file, a),
        Command::Retrieve(a) => cmd_retrieve(&file, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
