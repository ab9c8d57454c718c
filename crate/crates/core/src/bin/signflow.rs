use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::json;

use signflow::dataset::{
    build_label_map, load_tensors, scan_dataset, split_indices, synth_gestures, write_corpus,
    DatasetError, DatasetIndex, LabelMap, SplitConfig, SynthConfig, LABELS_FILE,
};
use signflow::infer::{InferError, Recognizer, TranscriptConfig};
use signflow::landmarks::{decode_sequence, FrameReadError, FrameReader, SequenceDecodeError};
use signflow::nn::{
    decode_model, encode_model, init_params, param_count, predict_probs, Checkpoint,
    ModelCodecError, ModelSpec, NnError,
};
use signflow::optim::AdamaxHyper;
use signflow::train::{evaluate, fit_with, format_percent, TrainConfig, TrainError};

#[derive(Parser)]
#[command(
    name = "signflow",
    version,
    about = "Continuous sign-language recognition from landmark streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus management
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model on a corpus directory
    Train(TrainArgs),
    /// Evaluate a model on the held-out split of a corpus
    Eval(EvalArgs),
    /// Classify one LMK1 sequence file
    Predict(PredictArgs),
    /// Recognize a live frame-record stream from stdin or TCP
    Stream(StreamArgs),
    /// Print checkpoint metadata and parameter count
    Inspect(InspectArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Index a corpus and report per-label counts
    Scan {
        #[arg(long)]
        root: PathBuf,
        /// Videos expected per label
        #[arg(long, default_value_t = 30)]
        videos: usize,
    },
    /// Write a synthetic corpus
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 30)]
        videos: usize,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 1662)]
        dims: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f32,
        #[command(flatten)]
        seed: SeedArg,
    },
}

#[derive(Args)]
struct SeedArg {
    /// Random seed
    #[arg(long, env = "SIGNFLOW_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus root (`<root>/<label>/<index>.lmk`)
    #[arg(long)]
    data: PathBuf,
    /// Label map JSON; defaults to `<root>/labels.json`, else sorted directory names
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 0.05)]
    test_fraction: f64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Checkpoint output path
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-7)]
    eps: f64,
    /// Clip gradients to this global L2 norm
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Keep sample order fixed across epochs
    #[arg(long)]
    no_shuffle: bool,
    /// Reproducible output (wall-clock timings are zeroed in the log)
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    deterministic: bool,
    /// Also append the JSON-lines log to this file
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    model: PathBuf,
    /// Evaluate every sample instead of the test split
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// LMK1 sequence file
    file: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    model: PathBuf,
    /// Accept one TCP connection on HOST:PORT instead of reading stdin
    #[arg(long)]
    listen: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 10)]
    stability: usize,
    /// Also print every per-frame prediction
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    DatasetError,
    SequenceDecodeError,
    ModelCodecError,
    NnError,
    InferError,
    FrameReadError
);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Diverged { .. } | TrainError::Optim(_) => CliError::Runtime(e.to_string()),
            TrainError::DataShape(_) | TrainError::Nn(_) => CliError::Data(e.to_string()),
        }
    }
}

fn io_data(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn io_runtime(e: io::Error) -> CliError {
    CliError::Runtime(e.to_string())
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Dataset(DatasetCommand::Scan { root, videos }) => {
            let index = scan_dataset(&root)?;
            print_json(&json!(index.stats_expecting(videos)))
        }
        Command::Dataset(DatasetCommand::Synth {
            out,
            classes,
            videos,
            frames,
            dims,
            noise,
            seed,
        }) => {
            let data = synth_gestures(SynthConfig {
                classes,
                videos,
                frames,
                dims,
                noise_sd: noise,
                seed: seed.seed,
            })?;
            let labels = build_label_map((0..classes).map(|c| format!("class{c:02}")))?;
            write_corpus(&out, &data, &labels)?;
            print_json(&json!({
                "root": out,
                "classes": classes,
                "videos": videos,
                "frames": frames,
                "dims": dims,
                "files": data.len(),
            }))
        }
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Predict(args) => predict(args),
        Command::Stream(args) => stream(args),
        Command::Inspect(args) => {
            let ckpt = load_checkpoint(&args.model)?;
            print_json(&json!({
                "spec": ckpt.params.spec(),
                "labels": ckpt.labels.to_json(),
                "seed": ckpt.seed,
                "param_count": param_count(ckpt.params.spec()),
            }))
        }
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out).map_err(io_runtime)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(io_data(path))?;
    Ok(decode_model(&bytes)?)
}

fn resolve_labels(corpus: &CorpusArgs, index: &DatasetIndex) -> Result<LabelMap, CliError> {
    if let Some(path) = &corpus.labels {
        return Ok(LabelMap::load(path)?);
    }
    let default = corpus.data.join(LABELS_FILE);
    if default.is_file() {
        return Ok(LabelMap::load(&default)?);
    }
    Ok(build_label_map(index.labels())?)
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let seed = args.corpus.seed.seed;
    let index = scan_dataset(&args.corpus.data)?;
    let labels = resolve_labels(&args.corpus, &index)?;
    let data = load_tensors(&index, &labels, args.corpus.frames)?;
    if data.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no sequences found",
            args.corpus.data.display()
        )));
    }
    let (train_rows, test_rows) = split_indices(
        data.len(),
        SplitConfig {
            test_fraction: args.corpus.test_fraction,
            seed,
        },
    )?;
    let (train_set, test_set) = (data.select(&train_rows), data.select(&test_rows));
    eprintln!(
        "{} train / {} test sequences, {} classes, {}×{} features",
        train_set.len(),
        test_set.len(),
        labels.len(),
        data.frames(),
        data.dims()
    );

    let spec = ModelSpec::standard(data.frames(), data.dims(), labels.len());
    let mut params = init_params(&spec, seed)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed,
        shuffle: !args.no_shuffle,
        clip_norm: args.clip_norm,
        deterministic: args.deterministic,
    };
    let hyper = AdamaxHyper {
        lr: args.lr,
        beta1: args.beta1,
        beta2: args.beta2,
        eps: args.eps,
    };
    hyper
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut log_file = match &args.log {
        Some(path) => Some(BufWriter::new(
            fs::File::create(path).map_err(io_data(path))?,
        )),
        None => None,
    };
    let mut stdout = io::stdout().lock();
    let mut write_err = None;
    let history = fit_with(&mut params, &train_set, &cfg, &hyper, |m| {
        let line = m.to_log_line(cfg.deterministic);
        let result = writeln!(stdout, "{line}")
            .and_then(|_| stdout.flush())
            .and_then(|_| match log_file.as_mut() {
                Some(f) => writeln!(f, "{line}"),
                None => Ok(()),
            });
        if let Err(e) = result {
            write_err.get_or_insert(e);
        }
        if !cfg.deterministic {
            eprintln!(
                "epoch {}/{}: {}/{} steps, loss {:.4}, accuracy {:.4}, {:.1}s",
                m.epoch, cfg.epochs, m.steps, m.steps, m.loss, m.categorical_accuracy, m.seconds
            );
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_runtime(e));
    }
    if let Some(mut f) = log_file {
        f.flush().map_err(io_runtime)?;
    }

    let ckpt = Checkpoint::new(params, labels, seed)?;
    fs::write(&args.model, encode_model(&ckpt)).map_err(io_data(&args.model))?;
    if let Some(last) = history.last() {
        eprintln!(
            "final epoch: loss {:.4}, accuracy {}",
            last.loss,
            format_percent(last.categorical_accuracy)
        );
    }
    let test = evaluate(&ckpt.params, &test_set)?;
    eprintln!(
        "test accuracy {} ({} samples), loss {:.4}; model written to {}",
        format_percent(test.accuracy),
        test_set.len(),
        test.loss,
        args.model.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.model)?;
    let index = scan_dataset(&args.corpus.data)?;
    let data = load_tensors(&index, &ckpt.labels, args.corpus.frames)?;
    let subset = if args.all {
        data
    } else {
        let (_, test_rows) = split_indices(
            data.len(),
            SplitConfig {
                test_fraction: args.corpus.test_fraction,
                seed: args.corpus.seed.seed,
            },
        )?;
        data.select(&test_rows)
    };
    let result = evaluate(&ckpt.params, &subset)?;
    print_json(&json!({
        "samples": subset.len(),
        "accuracy": result.accuracy,
        "accuracy_percent": format_percent(result.accuracy),
        "loss": result.loss,
        "labels": ckpt.labels.labels(),
        "confusion": result.confusion.rows(),
    }))
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.model)?;
    let spec = ckpt.params.spec();
    let bytes = fs::read(&args.file).map_err(io_data(&args.file))?;
    let seq = decode_sequence(&bytes)?;
    if seq.len() != spec.frames {
        return Err(CliError::Data(format!(
            "{}: {} frames, model expects {}",
            args.file.display(),
            seq.len(),
            spec.frames
        )));
    }
    if seq.dim() != spec.dims {
        return Err(CliError::Data(format!(
            "{}: feature dim {}, model expects {}",
            args.file.display(),
            seq.dim(),
            spec.dims
        )));
    }
    let x: Vec<f64> = seq
        .frames()
        .iter()
        .flat_map(|f| f.values().iter().map(|&v| v as f64))
        .collect();
    let probs = predict_probs(&ckpt.params, &x, 1)?;
    let pred = signflow::infer::Prediction::from_probs(probs, &ckpt.labels);
    print_json(&json!({
        "label": pred.label,
        "class_id": pred.class_id,
        "p": pred.probability,
        "probs": pred.probs,
    }))
}

fn stream(args: StreamArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.model)?;
    let dims = ckpt.params.spec().dims;
    let config = TranscriptConfig {
        threshold: args.threshold,
        stability: args.stability,
    };
    if args.stability == 0 {
        return Err(CliError::Usage("--stability must be at least 1".into()));
    }
    let recognizer = Recognizer::from_checkpoint(ckpt, config)?;
    match &args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr)
                .map_err(|e| CliError::Runtime(format!("cannot listen on {addr}: {e}")))?;
            let local = listener.local_addr().map_err(io_runtime)?;
            eprintln!("listening on {local}");
            let (conn, peer) = listener.accept().map_err(io_runtime)?;
            eprintln!("connection from {peer}");
            run_stream(recognizer, BufReader::new(conn), dims, args.verbose)
        }
        None => run_stream(recognizer, io::stdin().lock(), dims, args.verbose),
    }
}

fn run_stream<R: Read>(
    mut recognizer: Recognizer,
    input: R,
    dims: usize,
    verbose: bool,
) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    for frame in FrameReader::with_dim(input, dims) {
        let frame = frame?;
        let outcome = recognizer.process_frame(frame.values())?;
        if verbose {
            if let Some(p) = &outcome.prediction {
                let line = json!({"t": outcome.t, "label": p.label, "p": p.probability});
                writeln!(out, "{line}").map_err(io_runtime)?;
            }
        }
        if let Some(e) = &outcome.emission {
            let line = json!({"t": e.t, "word": e.word, "p": e.p});
            writeln!(out, "{line}").map_err(io_runtime)?;
            out.flush().map_err(io_runtime)?;
        }
    }
    out.flush().map_err(io_runtime)?;
    eprintln!("transcript: {}", recognizer.transcript().sentence());
    Ok(())
}
