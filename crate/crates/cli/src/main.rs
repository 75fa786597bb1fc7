mod config;

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tabext_core::dataset::SplitSpec;
use tabext_core::evalmetrics::render_report;
use tabext_core::features::{write_feature_jsonl, AlignmentTolerance, FeatureRow};
use tabext_core::neuralnet::NetworkConfig;
use tabext_core::pipeline::{
    featurize_corpus, load_corpus, load_corpus_labels, load_document, load_labels, read_features, train_from_rows,
    write_train_outputs, PipelineError, Predictor, SplitLevel, TrainSettings,
};
use tabext_core::synthgen::{generate_corpus, SynthError};
use tabext_review::{ReviewConfig, DEFAULT_PORT};

use config::{parse_tolerance, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn report(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Internal(m) => ("internal", m),
        };
        json!({ "error": kind, "message": message, "exit_code": self.code() }).to_string()
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InfeasibleSpec(_) | SynthError::EmptyCorpus => CliError::Data(e.to_string()),
            SynthError::Io(_) | SynthError::Json(_) => CliError::Internal(e.to_string()),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "tabext", version, about = "Find product-table tokens in OCR output of invoices")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled synthetic invoice corpus.
    Synth(SynthArgs),
    /// Compute per-token features for a corpus.
    Featurize(FeaturizeArgs),
    /// Train the classifier and report held-out metrics.
    Train(TrainArgs),
    /// Write a prediction overlay for one TSV document.
    Predict(PredictArgs),
    /// Score a checkpoint against labelled features.
    Eval(EvalArgs),
    /// Run the review service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of invoices.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Disable coordinate jitter and token dropout.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output JSON Lines file.
    #[arg(long)]
    out: PathBuf,
    /// Label file to apply; defaults to the corpus labels.jsonl.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// "auto" or a pixel count.
    #[arg(long, value_parser = parse_tolerance)]
    tolerance: Option<AlignmentTolerance>,
}

#[derive(Args, Debug)]
struct DataSource {
    /// Feature file written by `featurize`.
    #[arg(long, conflicts_with = "corpus")]
    features: Option<PathBuf>,
    /// Corpus directory, featurized on the fly.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Label file applied over the feature labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_parser = parse_tolerance)]
    tolerance: Option<AlignmentTolerance>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataSource,
    /// Output directory for checkpoint, history and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Train, test and validation fractions, e.g. 0.7,0.2,0.1.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long, value_parser = ["document", "token"])]
    split_level: Option<String>,
    /// Also write the normalized partitions as CSV.
    #[arg(long)]
    export_encoded: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tsv: PathBuf,
    /// Overlay JSON file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_parser = parse_tolerance)]
    tolerance: Option<AlignmentTolerance>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    data: DataSource,
    #[arg(long)]
    threshold: Option<f64>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Human correction log (created if missing).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long)]
    export_dir: Option<PathBuf>,
}

fn existing(path: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let p = path.ok_or_else(|| CliError::Usage(format!("missing {what}")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

fn check_exists(path: &Option<PathBuf>, what: &str) -> Result<(), CliError> {
    match path {
        Some(p) if !p.exists() => Err(CliError::Usage(format!("{what} {} does not exist", p.display()))),
        _ => Ok(()),
    }
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(internal)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).map_err(internal),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(internal),
    }
}

fn cmd_synth(a: SynthArgs, cfg: RunConfig) -> Result<(), CliError> {
    let n = a.n.or(cfg.synth.n).unwrap_or(500);
    let seed = a.seed.or(cfg.synth.seed).unwrap_or(1);
    let spec = if a.noiseless { cfg.synth.layout.noiseless() } else { cfg.synth.layout };
    let manifest = generate_corpus(n, &spec, seed, &a.out)?;
    let tokens: usize = manifest.documents.iter().map(|d| d.tokens).sum();
    println!("{}", json!({ "documents": n, "tokens": tokens, "out": a.out }));
    Ok(())
}

/// Feature rows from a feature file or a corpus, with labels applied.
fn load_rows(d: DataSource, cfg: &RunConfig) -> Result<Vec<FeatureRow>, CliError> {
    let tolerance = d.tolerance.unwrap_or(cfg.tolerance);
    let labels = d.labels.or(cfg.labels.clone());
    check_exists(&labels, "labels file")?;
    let mut rows = match (d.features.or(cfg.features.clone()), d.corpus.or(cfg.corpus_dir.clone())) {
        (Some(f), _) => read_features(&existing(Some(f), "features file")?)?,
        (None, Some(c)) => {
            let c = existing(Some(c), "corpus directory")?;
            let docs = load_corpus(&c)?;
            let seed = if labels.is_none() { load_corpus_labels(&c)? } else { None };
            featurize_corpus(&docs, tolerance, seed.map(|s| s.label_map()).as_ref())
        }
        (None, None) => return Err(CliError::Usage("one of --features or --corpus is required".into())),
    };
    if let Some(l) = labels {
        let map = load_labels(&l)?.label_map();
        tabext_core::features::apply_labels(&mut rows, &map);
    }
    Ok(rows)
}

fn cmd_featurize(a: FeaturizeArgs, cfg: RunConfig) -> Result<(), CliError> {
    let corpus = existing(a.corpus.or(cfg.corpus_dir), "corpus directory")?;
    let labels = a.labels.or(cfg.labels);
    check_exists(&labels, "labels file")?;
    let docs = load_corpus(&corpus)?;
    let store = match &labels {
        Some(l) => Some(load_labels(l)?),
        None => load_corpus_labels(&corpus)?,
    };
    let rows = featurize_corpus(&docs, a.tolerance.unwrap_or(cfg.tolerance), store.map(|s| s.label_map()).as_ref());
    let f = fs::File::create(&a.out).map_err(internal)?;
    let mut w = std::io::BufWriter::new(f);
    write_feature_jsonl(&mut w, &rows).map_err(internal)?;
    w.flush().map_err(internal)?;
    println!("{}", json!({ "documents": docs.len(), "tokens": rows.len(), "out": a.out }));
    Ok(())
}

fn train_settings(a: &TrainArgs, cfg: &RunConfig) -> Result<TrainSettings, CliError> {
    let mut split = cfg.split.clone();
    if let Some(f) = &a.fractions {
        if f.len() != 3 {
            return Err(CliError::Usage(format!("--fractions takes three values, got {}", f.len())));
        }
        split = SplitSpec {
            train_fraction: f[0],
            test_fraction: f[1],
            validation_fraction: f[2],
            ..split
        };
    }
    if let Some(s) = a.split_seed {
        split.seed = s;
    }
    split.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let base = &cfg.network;
    let network = NetworkConfig {
        seed: a.seed.unwrap_or(base.seed),
        max_epochs: a.epochs.unwrap_or(base.max_epochs),
        learning_rate: a.learning_rate.unwrap_or(base.learning_rate),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        early_stop_patience: a.patience.unwrap_or(base.early_stop_patience),
        threshold: a.threshold.or(cfg.threshold).unwrap_or(base.threshold),
        ..base.clone()
    };
    network.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let split_level = match a.split_level.as_deref() {
        Some("token") => SplitLevel::Token,
        Some(_) => SplitLevel::Document,
        None => cfg.split_level,
    };
    Ok(TrainSettings {
        split,
        split_level,
        network,
    })
}

fn cmd_train(a: TrainArgs, cfg: RunConfig) -> Result<(), CliError> {
    let settings = train_settings(&a, &cfg)?;
    let out = a
        .out
        .or(cfg.out_dir.clone())
        .ok_or_else(|| CliError::Usage("missing --out".into()))?;
    let rows = load_rows(a.data, &cfg)?;
    let run = train_from_rows(&rows, &settings)?;
    write_train_outputs(&run, &out, a.export_encoded)?;
    print!("{}", render_report(&run.test_report));
    println!(
        "{}",
        json!({
            "test_f1": run.test_report.class_1.f1,
            "validation_f1": run.validation_report.class_1.f1,
            "epochs_run": run.checkpoint.metadata.epochs_run,
            "best_epoch": run.checkpoint.metadata.best_epoch,
            "checkpoint": out.join("checkpoint.json"),
        })
    );
    Ok(())
}

fn predictor(path: Option<PathBuf>, cfg: &RunConfig, threshold: Option<f64>) -> Result<Predictor, CliError> {
    let path = existing(path.or(cfg.checkpoint.clone()), "checkpoint")?;
    let mut p = Predictor::load(&path)?;
    if let Some(t) = threshold.or(cfg.threshold) {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::Usage(format!("threshold must lie in (0,1), got {t}")));
        }
        p.checkpoint.threshold = t;
    }
    Ok(p)
}

fn cmd_predict(a: PredictArgs, cfg: RunConfig) -> Result<(), CliError> {
    let mut p = predictor(a.checkpoint, &cfg, a.threshold)?;
    p.tolerance = a.tolerance.unwrap_or(cfg.tolerance);
    let tsv = existing(Some(a.tsv), "TSV file")?;
    let overlay = p.predict_document(&load_document(&tsv)?)?;
    write_json(a.out.as_deref(), &overlay)
}

fn cmd_eval(a: EvalArgs, cfg: RunConfig) -> Result<(), CliError> {
    let p = predictor(a.checkpoint, &cfg, a.threshold)?;
    let rows = load_rows(a.data, &cfg)?;
    let report = p.evaluate(&rows)?;
    if a.json {
        write_json(None, &report)
    } else {
        print!("{}", render_report(&report));
        Ok(())
    }
}

fn cmd_serve(a: ServeArgs, cfg: RunConfig) -> Result<(), CliError> {
    let corpus_dir = existing(a.corpus.or(cfg.corpus_dir), "corpus directory")?;
    let checkpoint = a.checkpoint.or(cfg.checkpoint);
    check_exists(&checkpoint, "checkpoint")?;
    let static_dir = a.static_dir.or(cfg.static_dir);
    check_exists(&static_dir, "static directory")?;
    let review = ReviewConfig {
        corpus_dir,
        checkpoint,
        labels_path: a.labels.or(cfg.labels).unwrap_or_else(|| PathBuf::from("review-labels.jsonl")),
        export_dir: a.export_dir.or(cfg.export_dir).unwrap_or_else(|| PathBuf::from("exports")),
        static_dir,
    };
    let addr: SocketAddr = format!("{}:{}", a.host, a.port.or(cfg.port).unwrap_or(DEFAULT_PORT))
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(internal)?;
    rt.block_on(tabext_review::serve(review, addr))
        .map_err(|e| match e.downcast::<PipelineError>() {
            Ok(pe) => CliError::from(*pe),
            Err(e) => internal(e),
        })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a, cfg),
        Command::Featurize(a) => cmd_featurize(a, cfg),
        Command::Train(a) => cmd_train(a, cfg),
        Command::Predict(a) => cmd_predict(a, cfg),
        Command::Eval(a) => cmd_eval(a, cfg),
        Command::Serve(a) => cmd_serve(a, cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.report());
            return ExitCode::from(err.code());
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.code())
        }
    }
}
