//! `sparsegate` command-line tool.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparsegate::checkpoint::Checkpoint;
use sparsegate::classifier::PredictMode;
use sparsegate::data::{read_fasta, read_localization, read_pairs, read_profiles, SequenceStore, Split};
use sparsegate::encoder::encode_all;
use sparsegate::error::ErrorKind;
use sparsegate::evalkit::{export_gates, motif_alignment, read_motifs, write_gates_tsv};
use sparsegate::pipeline;
use sparsegate::synthetic::{generate, SyntheticConfig};
use sparsegate::trainer::{bench_csv, benchmark_epoch, train_with, TrainConfig};
use sparsegate::{Error, Result};

#[derive(Parser)]
#[command(name = "sparsegate", version, about = "Sparse-gated protein interaction models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder and a pair classifier.
    Train(TrainArgs),
    /// Write per-protein embeddings.
    Embed(EmbedArgs),
    /// Score pairs.
    Predict(PredictArgs),
    /// Report AUROC and AP on labeled pairs.
    Evaluate(EvaluateArgs),
    /// Export per-residue gate values.
    Gates(GatesArgs),
    /// Time one training epoch at several dataset sizes.
    Benchmark(BenchmarkArgs),
    /// Generate a synthetic dataset with planted motifs.
    Synth(SynthArgs),
}

/// Configuration file plus flag overrides; flags win.
#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// none | softmax | sparsemax | fusedmax
    #[arg(long)]
    gating: Option<String>,
    /// gaussian | point
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long = "max-len")]
    max_len: Option<String>,
    #[arg(long = "batch-size")]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// Any configuration key, as `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    fasta: PathBuf,
    /// Directory of per-protein profile matrices named `<id>.*`.
    #[arg(long)]
    profiles: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    pairs: PathBuf,
    /// `id<TAB>label` map restricting sampled negatives to differing labels.
    #[arg(long)]
    localization: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Skip fitting the random forest.
    #[arg(long = "no-classifier")]
    no_classifier: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    pairs: PathBuf,
    /// ranking | classifier
    #[arg(long, default_value = "ranking")]
    mode: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Labeled pairs.
    #[arg(long)]
    pairs: PathBuf,
    /// ranking | classifier; both available modes when omitted.
    #[arg(long)]
    mode: Option<String>,
    /// CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GatesArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Motif spans; prints selection and alignment percentages.
    #[arg(long)]
    motifs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    localization: Option<PathBuf>,
    /// Comma-separated pair counts; quarter, half and all pairs by default.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    proteins: usize,
    #[arg(long, default_value_t = 10)]
    families: usize,
    /// Positive pairs, drawn among same-family pairs.
    #[arg(long, default_value_t = 600)]
    positives: usize,
    #[arg(long = "min-len", default_value_t = 100)]
    min_len: usize,
    #[arg(long = "max-len", default_value_t = 300)]
    max_len: usize,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gates(a) => gates(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Synth(a) => synth(a),
    }
}

fn resolve_config(a: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            TrainConfig::parse(&text).map_err(|e| match e {
                Error::Parse { line, message } => Error::Usage(format!("{}:{line}: {message}", p.display())),
                other => other,
            })?
        }
        None => TrainConfig::default(),
    };
    let flags = [
        ("gating", &a.gating),
        ("head", &a.head),
        ("dim", &a.dim),
        ("max_len", &a.max_len),
        ("batch_size", &a.batch_size),
        ("epochs", &a.epochs),
        ("lr", &a.lr),
        ("gamma", &a.gamma),
        ("lambda", &a.lambda),
    ];
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_store(input: &InputArgs) -> Result<SequenceStore> {
    let mut store = SequenceStore::new(read_fasta(&input.fasta)?)?;
    if let Some(dir) = &input.profiles {
        store.attach_profiles(read_profiles(dir)?)?;
    }
    Ok(store)
}

fn profile_width(store: &SequenceStore) -> Option<usize> {
    store
        .records()
        .first()
        .and_then(|r| r.profile.as_ref())
        .map(|p| p.dims2().1)
}

fn check_inputs(ckpt: &Checkpoint, store: &SequenceStore) -> Result<()> {
    let want = ckpt.config.model.profile_dim;
    let have = profile_width(store);
    if want != have {
        return Err(Error::Usage(match want {
            Some(f) => format!("the model reads {f}-column profiles; pass --profiles"),
            None => "the model does not read profiles; drop --profiles".into(),
        }));
    }
    Ok(())
}

fn load_model(path: &Path, store: &SequenceStore) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    check_inputs(&ckpt, store)?;
    eprintln!("seed: {}", ckpt.config.seed);
    Ok(ckpt)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.config)?;
    let store = load_store(&a.input)?;
    cfg.model.profile_dim = profile_width(&store);
    cfg.validate()?;
    eprintln!("seed: {}", cfg.seed);
    let localization = a.localization.as_deref().map(read_localization).transpose()?;
    let ds = pipeline::build_dataset(&read_pairs(&a.pairs)?, &store, &cfg, localization.as_ref())?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let path = a.out.join(format!("{}.tsv", split.name()));
        std::fs::write(&path, pipeline::pairs_tsv(&pipeline::split_records(&ds, split))).map_err(|e| Error::io(path, e))?;
    }
    let config_path = a.out.join("config.txt");
    std::fs::write(&config_path, cfg.to_text()).map_err(|e| Error::io(config_path, e))?;

    let outcome = train_with(&cfg, &ds, &store, |r| {
        let val = r.val_auroc.map_or("-".to_string(), |v| format!("{v:.4}"));
        eprintln!("epoch {:>3}  loss {:.6}  val_auroc {val}  {:.2}s", r.epoch, r.train_loss, r.seconds);
    })?;
    let mut ckpt = Checkpoint::from_outcome(&cfg, &outcome);
    if !a.no_classifier {
        let store = store.truncated(cfg.model.max_len);
        let (forest, grid) = pipeline::fit_classifier(&ckpt.params, &cfg, &ds, &store)?;
        let grid_path = a.out.join("forest_grid.csv");
        std::fs::write(&grid_path, pipeline::grid_csv(&grid)).map_err(|e| Error::io(grid_path, e))?;
        eprintln!(
            "forest: {} trees, max depth {}",
            forest.params.n_trees,
            forest.params.max_depth.map_or("unlimited".into(), |d| d.to_string())
        );
        ckpt.forest = Some(forest);
    }
    ckpt.save(&a.out.join("model.ckpt"))?;
    let history_path = a.out.join("history.csv");
    std::fs::write(&history_path, outcome.history.to_csv()).map_err(|e| Error::io(history_path, e))?;
    let timing_path = a.out.join("timing.csv");
    std::fs::write(&timing_path, outcome.history.timing_csv()).map_err(|e| Error::io(timing_path, e))?;
    match outcome.best_val_auroc {
        Some(v) => println!("best epoch {} (validation AUROC {v:.4})", outcome.best_epoch),
        None => println!("trained {} epochs (no validation split)", outcome.best_epoch),
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let store = load_store(&a.input)?;
    let ckpt = load_model(&a.model, &store)?;
    let encoded = encode_all(store.records(), &ckpt.params, &ckpt.config.model)?;
    write_output(a.out.as_deref(), &pipeline::embeddings_tsv(&store.ids(), &encoded))
}

fn predict(a: PredictArgs) -> Result<()> {
    let mode: PredictMode = a.mode.parse()?;
    let store = load_store(&a.input)?;
    let ckpt = load_model(&a.model, &store)?;
    let records = read_pairs(&a.pairs)?;
    let idx = pipeline::resolve_pairs(&records, &store)?;
    let scores = pipeline::score_pairs(mode, &ckpt, &idx, &store)?;
    write_output(a.out.as_deref(), &pipeline::predictions_tsv(mode, &records, &scores))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let store = load_store(&a.input)?;
    let ckpt = load_model(&a.model, &store)?;
    let pairs = pipeline::labeled_pairs(&read_pairs(&a.pairs)?, &store)?;
    let modes = match &a.mode {
        Some(m) => vec![m.parse::<PredictMode>()?],
        None if ckpt.forest.is_some() => vec![PredictMode::Ranking, PredictMode::Classifier],
        None => vec![PredictMode::Ranking],
    };
    let mut csv = String::from("mode,pairs,auroc,ap\n");
    for mode in modes {
        let (auroc, ap) = pipeline::evaluate_pairs(mode, &ckpt, &pairs, &store)?;
        let name = match mode {
            PredictMode::Ranking => "ranking",
            PredictMode::Classifier => "classifier",
        };
        println!("{name:<10}  pairs {}  AUROC {auroc:.4}  AP {ap:.4}", pairs.len());
        csv.push_str(&format!("{name},{},{auroc:.17e},{ap:.17e}\n", pairs.len()));
    }
    if let Some(p) = &a.out {
        write_output(Some(p), &csv)?;
    }
    Ok(())
}

fn gates(a: GatesArgs) -> Result<()> {
    let store = load_store(&a.input)?;
    let ckpt = load_model(&a.model, &store)?;
    let records: Vec<_> = store
        .records()
        .iter()
        .map(|r| r.truncate(ckpt.config.model.max_len))
        .collect();
    let encoded = encode_all(&records, &ckpt.params, &ckpt.config.model)?;
    let gates: Vec<_> = encoded.into_iter().map(|e| e.gates).collect();
    let rows = export_gates(&records, &gates)?;
    let mut buf = Vec::new();
    write_gates_tsv(&rows, &mut buf).map_err(|e| Error::io("<buffer>", e))?;
    write_output(a.out.as_deref(), std::str::from_utf8(&buf).unwrap())?;
    if let Some(path) = &a.motifs {
        let report = motif_alignment(&store.ids(), &gates, &read_motifs(path)?)?;
        eprintln!(
            "selected {:.2}%  aligned {:.2}%  ({} proteins, {} annotated)",
            report.selected_pct, report.aligned_pct, report.proteins, report.annotated
        );
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.config)?;
    let store = load_store(&a.input)?;
    cfg.model.profile_dim = profile_width(&store);
    cfg.validate()?;
    eprintln!("seed: {}", cfg.seed);
    let localization = a.localization.as_deref().map(read_localization).transpose()?;
    let ds = pipeline::build_dataset(&read_pairs(&a.pairs)?, &store, &cfg, localization.as_ref())?;
    let pairs = ds.all_pairs(&store)?;
    let sizes = if a.sizes.is_empty() {
        let n = pairs.len();
        vec![n.div_ceil(4), n.div_ceil(2), n]
    } else {
        a.sizes
    };
    // interleave labels so every prefix holds both classes
    let (pos, neg): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.label);
    let mut mixed = Vec::with_capacity(pos.len() + neg.len());
    for i in 0..pos.len().max(neg.len()) {
        mixed.extend(pos.get(i));
        mixed.extend(neg.get(i));
    }
    let rows = benchmark_epoch(&cfg, &mixed, &store, &sizes)?;
    write_output(a.out.as_deref(), &bench_csv(&rows))
}

fn synth(a: SynthArgs) -> Result<()> {
    eprintln!("seed: {}", a.seed);
    let data = generate(&SyntheticConfig {
        proteins: a.proteins,
        families: a.families,
        min_len: a.min_len,
        max_len: a.max_len,
        positives: Some(a.positives),
        seed: a.seed,
        ..SyntheticConfig::default()
    })?;
    data.write_to(&a.out)?;
    println!(
        "{} proteins, {} positive and {} negative pairs written to {}",
        data.records.len(),
        data.dataset.positives.len(),
        data.dataset.negatives.len(),
        a.out.display()
    );
    Ok(())
}
