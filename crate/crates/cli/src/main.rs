use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use picox::augment::sentence_negatives;
use picox::corpus::Corpus;
use picox::embedder::{EmbedderConfig, HashedConfig};
use picox::evaluator::{self, Grouping, LengthConvention};
use picox::pipeline::{self, Models, PipelineConfig, TRAINING_LOG_FILE};
use picox::predictions::{self, NegativeSpan, SentenceNegatives};
use picox::{iob2, synth, OptimizerKind};

#[derive(Parser)]
#[command(
    name = "picox",
    version,
    about = "Overlapping span extraction: train, predict, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both heads on a JSONL corpus and write model files to a directory.
    Train(TrainArgs),
    /// Extract spans from a corpus with trained models.
    Predict(PredictArgs),
    /// Score predictions against a gold corpus.
    Evaluate(EvaluateArgs),
    /// Dump the composite-span negatives the classifier would train on.
    Augment(AugmentArgs),
    /// Evaluate over several boundary thresholds.
    Sweep(SweepArgs),
    /// Convert a JSONL corpus to IOB2 (non-overlapping corpora only).
    ExportIob2(ConvertArgs),
    /// Convert an IOB2 file to a JSONL corpus.
    ImportIob2(ConvertArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Paired t-test on per-document F1 of two prediction files.
    Significance(SignificanceArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file mirroring the pipeline configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_augment: bool,
    /// Warm-start both heads (and reuse the embedder) from a model directory.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Learning rate for both heads.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hashed embedder dimension.
    #[arg(long, conflicts_with = "embeddings")]
    dim: Option<usize>,
    /// Precomputed token embeddings (PCXE) instead of the hashed embedder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Sgd,
    Adam,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Require start < end when pairing boundaries.
    #[arg(long)]
    strict_pairs: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    Overlap,
    Length,
    /// Length buckets, with false positives assigned to the nearest gold entity.
    LengthNearest,
}

impl From<Group> for Grouping {
    fn from(g: Group) -> Self {
        match g {
            Group::Overlap => Grouping::Overlap,
            Group::Length => Grouping::Length(LengthConvention::Split),
            Group::LengthNearest => Grouping::Length(LengthConvention::NearestGold),
        }
    }
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum)]
    group: Option<Group>,
    /// JSON report; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AugmentArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.25,0.3,0.4,0.5")]
    thresholds: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(clap::Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Nested,
    Distractor,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "nested")]
    kind: SynthKind,
    #[arg(long, default_value_t = 50)]
    sentences: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SignificanceArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    gold: PathBuf,
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Corpus::parse_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = serde_json::from_str(&text)
        .map_err(|e| picox::Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    Ok(config)
}

fn load_models(dir: &Path) -> Result<Models> {
    Models::load(dir).with_context(|| format!("loading models from {}", dir.display()))
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if args.no_augment {
        config.augment = false;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    for head in [&mut config.localizer, &mut config.classifier] {
        if let Some(lr) = args.lr {
            head.lr = lr;
        }
        if let Some(epochs) = args.epochs {
            head.epochs = epochs;
        }
        if let Some(batch_size) = args.batch_size {
            head.batch_size = batch_size;
        }
        match args.optimizer {
            Some(Optimizer::Sgd) => head.optimizer = OptimizerKind::Sgd,
            Some(Optimizer::Adam) => head.optimizer = OptimizerKind::Adam,
            None => {}
        }
    }
    if let Some(dim) = args.dim {
        let base = match config.embedder {
            EmbedderConfig::Hashed(c) => c,
            EmbedderConfig::File { .. } => HashedConfig::default(),
        };
        config.embedder = EmbedderConfig::Hashed(HashedConfig { dim, ..base });
    }
    if let Some(path) = args.embeddings {
        config.embedder = EmbedderConfig::File { path };
    }
    config.validate()?;

    let corpus = read_corpus(&args.corpus)?;
    let init = args.init_from.as_deref().map(load_models).transpose()?;
    let (models, log) = pipeline::train_all(&corpus, &config, init.as_ref())?;
    models.save(&args.out)?;
    write_text(
        &args.out.join(TRAINING_LOG_FILE),
        &(serde_json::to_string_pretty(&log)? + "\n"),
    )?;
    eprintln!(
        "trained on {} sentences ({} span examples), final losses {:.4} / {:.4}",
        corpus.sentence_count(),
        log.classifier_examples,
        log.localizer
            .epoch_losses
            .last()
            .copied()
            .unwrap_or(f64::NAN),
        log.classifier
            .epoch_losses
            .last()
            .copied()
            .unwrap_or(f64::NAN),
    );
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    if let Some(tau) = args.tau {
        config.tau = tau;
    }
    if args.strict_pairs {
        config.strict_pairs = true;
    }
    config.validate()?;
    let corpus = read_corpus(&args.corpus)?;
    let models = load_models(&args.models)?;
    let preds = pipeline::predict_corpus(&corpus, &models, &config)?;
    let mut w = create(&args.out)?;
    predictions::write_jsonl(&mut w, &preds)?;
    w.flush()?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<predictions::SentencePrediction>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    predictions::read_jsonl(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let preds = read_predictions(&args.pred)?;
    let gold = read_corpus(&args.gold)?;
    let report = evaluator::evaluate(&preds, &gold, args.group.map(Grouping::from))?;
    let json = report.to_json() + "\n";
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => print!("{json}"),
    }
    if let Some(path) = &args.csv {
        let mut w = create(path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    let m = report.overall.micro;
    eprintln!(
        "micro P {:.4} R {:.4} F1 {:.4}",
        m.precision, m.recall, m.f1
    );
    Ok(())
}

fn augment(args: AugmentArgs) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let mut w = create(&args.out)?;
    for s in corpus.sentences() {
        let record = SentenceNegatives {
            uid: s.uid().to_string(),
            spans: sentence_negatives(s)
                .into_iter()
                .map(|c| NegativeSpan {
                    start: c.start,
                    end: c.end,
                    category: "NONE".into(),
                    score: 0.0,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(tau) = args.tau {
        config.tau = tau;
    }
    let corpus = read_corpus(&args.corpus)?;
    let models = load_models(&args.models)?;
    let rows = pipeline::sweep_threshold(&corpus, &models, &args.thresholds, &config)?;
    let mut w = create(&args.out)?;
    pipeline::write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn export_iob2(args: ConvertArgs) -> Result<()> {
    let corpus = read_corpus(&args.input)?;
    write_text(&args.out, &iob2::export_iob2(&corpus)?)
}

fn import_iob2(args: ConvertArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let corpus = iob2::import_iob2(&text)?;
    write_text(&args.out, &corpus.to_jsonl())
}

fn synth(args: SynthArgs) -> Result<()> {
    let corpus = match args.kind {
        SynthKind::Nested => synth::nested_corpus(args.sentences, args.seed),
        SynthKind::Distractor => synth::distractor_corpus(args.sentences, args.seed),
    };
    write_text(&args.out, &corpus.to_jsonl())
}

fn significance(args: SignificanceArgs) -> Result<()> {
    let gold = read_corpus(&args.gold)?;
    let a = evaluator::per_document_f1(&read_predictions(&args.a)?, &gold)?;
    let b = evaluator::per_document_f1(&read_predictions(&args.b)?, &gold)?;
    let fa: Vec<f64> = a.iter().map(|(_, f)| *f).collect();
    let fb: Vec<f64> = b.iter().map(|(_, f)| *f).collect();
    let result = evaluator::paired_test(&fa, &fb)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Augment(a) => augment(a),
        Command::Sweep(a) => sweep(a),
        Command::ExportIob2(a) => export_iob2(a),
        Command::ImportIob2(a) => import_iob2(a),
        Command::Synth(a) => synth(a),
        Command::Significance(a) => significance(a),
    }
}

/// 2 for filesystem/stream failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<picox::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<serde_json::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
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
