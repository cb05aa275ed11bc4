use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pqz::classify::{impact_study, Classifier, StudyOptions};
use pqz::eval::{max_error, run_experiment, Grid};
use pqz::pipeline::{compress, decompress_bytes, ModelStore, PipelineConfig, UNCOMPRESSED_BYTES};
use pqz::siggen::{generate_dataset, read_dataset, write_dataset, DatasetSpec, DisturbanceClass, Signal};

/// Error-bounded compression of power-quality disturbance waveforms.
#[derive(Parser)]
#[command(name = "pqz", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus as DIR/train.pqds and DIR/eval.pqds.
    Gen(GenArgs),
    /// Fit the linear autoencoder models on a corpus' training split.
    Train(TrainArgs),
    /// Compress every signal of a dataset into DIR/NNNNNN.pqz plus a manifest.
    Compress(CompressArgs),
    /// Rebuild a dataset file from a directory written by `compress`.
    Decompress(DecompressArgs),
    /// Sweep a configuration grid over a corpus and write the CSV report.
    Eval(EvalArgs),
    /// Train the disturbance classifier or run the compression-impact study.
    Classify {
        #[command(subcommand)]
        command: ClassifyCommand,
    },
}

#[derive(Args)]
struct GenArgs {
    /// `all` or a comma-separated list of class names.
    #[arg(long, default_value = "all")]
    classes: String,
    #[arg(long)]
    per_class: usize,
    /// `none` or an SNR in dB.
    #[arg(long, default_value = "none")]
    snr: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training fraction; the rest is the evaluation split.
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory (uses train.pqds) or a dataset file.
    #[arg(long)]
    corpus: PathBuf,
    /// Use at most this many training signals per class.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory with linear_ae8.pqs / linear_ae16.pqs.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset file, or a corpus directory (uses eval.pqds).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Decompress every block again and fail if any sample is off by more than the bound.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory written by `compress`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Dataset file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Dataset file, or a corpus directory (uses eval.pqds).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ClassifyCommand {
    /// Fit centroids on the training split and report clean accuracy on the evaluation split.
    Train(ClassifyTrainArgs),
    /// Compress, reconstruct and re-classify the evaluation split under each grid config.
    Study(StudyArgs),
}

#[derive(Args)]
struct ClassifyTrainArgs {
    /// Corpus directory with train.pqds (and optionally eval.pqds).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    per_class: Option<usize>,
    /// Classifier CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// Corpus directory with train.pqds and eval.pqds.
    #[arg(long)]
    corpus: PathBuf,
    /// Grid file; only the stage and bound axes are used.
    #[arg(long)]
    configs: PathBuf,
    #[arg(long)]
    models: Option<PathBuf>,
    /// Classifier CSV from `classify train`; trained on the corpus when absent.
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Signals kept per class in the balanced pool.
    #[arg(long, default_value_t = StudyOptions::default().per_class_cap)]
    cap: usize,
    #[arg(long, default_value_t = StudyOptions::default().seed)]
    seed: u64,
    /// Accuracy summary; confusion matrices go next to it as *_confusion.csv.
    #[arg(long)]
    out: PathBuf,
}

/// One line per block in `manifest.csv`, carrying what the container does not.
#[derive(Serialize, Deserialize)]
struct ManifestRow {
    file: String,
    class: DisturbanceClass,
    snr_db: Option<f64>,
    seed: u64,
}

const MANIFEST: &str = "manifest.csv";

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Compress(a) => compress_cmd(a),
        Command::Decompress(a) => decompress_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Classify { command } => match command {
            ClassifyCommand::Train(a) => classify_train(a),
            ClassifyCommand::Study(a) => study(a),
        },
    }
}

fn split_path(path: &Path, split: &str) -> PathBuf {
    if path.is_dir() {
        path.join(format!("{split}.pqds"))
    } else {
        path.to_path_buf()
    }
}

fn load(path: &Path) -> Result<Vec<Signal>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn save(path: &Path, signals: &[Signal]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_dataset(BufWriter::new(file), signals).with_context(|| format!("writing {}", path.display()))
}

fn models(dir: Option<&Path>) -> Result<ModelStore> {
    match dir {
        Some(d) => ModelStore::load_dir(d).with_context(|| format!("loading models from {}", d.display())),
        None => Ok(ModelStore::new()),
    }
}

/// First `limit` signals of each class, in corpus order.
fn take_per_class(signals: Vec<Signal>, limit: Option<usize>) -> Vec<Signal> {
    let Some(limit) = limit else { return signals };
    let mut seen = [0usize; DisturbanceClass::COUNT];
    signals
        .into_iter()
        .filter(|s| {
            seen[s.label.index()] += 1;
            seen[s.label.index()] <= limit
        })
        .collect()
}

fn gen(a: GenArgs) -> Result<()> {
    let mut spec = DatasetSpec::new(a.per_class, a.seed);
    spec.split = (a.train_fraction, 1.0 - a.train_fraction);
    if a.classes != "all" {
        spec.classes = a
            .classes
            .split(',')
            .map(|c| c.trim().parse::<DisturbanceClass>())
            .collect::<pqz::Result<_>>()?;
    }
    spec.snr_db = match a.snr.as_str() {
        "none" => None,
        s => Some(s.parse().with_context(|| format!("--snr {s:?} is neither `none` nor a number"))?),
    };
    let (train, eval) = generate_dataset(&spec)?;
    fs::create_dir_all(&a.out)?;
    save(&a.out.join("train.pqds"), &train)?;
    save(&a.out.join("eval.pqds"), &eval)?;
    println!("wrote {} training and {} evaluation signals to {}", train.len(), eval.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let signals = take_per_class(load(&split_path(&a.corpus, "train"))?, a.per_class);
    let samples: Vec<&[f64]> = signals.iter().map(|s| s.samples.as_slice()).collect();
    let store = ModelStore::train(&samples)?;
    store.save_dir(&a.out)?;
    println!("trained linear autoencoders on {} signals into {}", signals.len(), a.out.display());
    Ok(())
}

fn compress_cmd(a: CompressArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg = PipelineConfig::from_toml(&text)?;
    let store = models(a.model.as_deref())?;
    let signals = load(&split_path(&a.input, "eval"))?;
    fs::create_dir_all(&a.out)?;
    let mut manifest = csv::Writer::from_path(a.out.join(MANIFEST))?;
    let (mut total, mut violations) = (0usize, 0usize);
    for (i, s) in signals.iter().enumerate() {
        let file = format!("{i:06}.pqz");
        let bytes = compress(&s.samples, &cfg, &store)
            .with_context(|| format!("compressing signal {i}"))?
            .serialize();
        if a.verify {
            let x_hat = decompress_bytes(&bytes, &store)?;
            let err = max_error(&s.samples, &x_hat)?;
            if err > cfg.e_bound {
                eprintln!("bound violation in signal {i}: {err} > {}", cfg.e_bound);
                violations += 1;
            }
        }
        fs::write(a.out.join(&file), &bytes)?;
        manifest.serialize(ManifestRow {
            file,
            class: s.label,
            snr_db: s.snr_db,
            seed: s.seed,
        })?;
        total += bytes.len();
    }
    manifest.flush()?;
    let rate = (UNCOMPRESSED_BYTES * signals.len()) as f64 / total.max(1) as f64;
    println!("{}: {} signals, {total} bytes, rate {rate:.2}", cfg.name(), signals.len());
    if violations > 0 {
        bail!("{violations} bound violations");
    }
    Ok(())
}

fn decompress_cmd(a: DecompressArgs) -> Result<()> {
    let store = models(a.model.as_deref())?;
    let manifest = a.input.join(MANIFEST);
    let mut reader = csv::Reader::from_path(&manifest).with_context(|| format!("opening {}", manifest.display()))?;
    let mut signals = Vec::new();
    for row in reader.deserialize() {
        let row: ManifestRow = row?;
        let bytes = fs::read(a.input.join(&row.file)).with_context(|| format!("reading {}", row.file))?;
        let samples = decompress_bytes(&bytes, &store).with_context(|| format!("decoding {}", row.file))?;
        signals.push(Signal {
            samples,
            label: row.class,
            snr_db: row.snr_db,
            seed: row.seed,
        });
    }
    save(&a.out, &signals)?;
    println!("decoded {} blocks into {}", signals.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let grid = Grid::from_toml(&fs::read_to_string(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?)?;
    let corpus = load(&split_path(&a.corpus, "eval"))?;
    let store = models(a.models.as_deref())?;
    let report = run_experiment(&grid, &corpus, &store)?;
    report.write_csv(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?)?;
    let failed = report.signal_rows().filter(|r| !r.bound_ok).count();
    println!("{} rows written to {}, {failed} bound failures", report.rows.len(), a.out.display());
    if failed > 0 {
        bail!("{failed} rows violated the bound or failed");
    }
    Ok(())
}

fn classify_train(a: ClassifyTrainArgs) -> Result<()> {
    let train = take_per_class(load(&split_path(&a.corpus, "train"))?, a.per_class);
    let clf = Classifier::train(&train)?;
    clf.write_csv(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?)?;
    println!("training accuracy {:.3}", clf.accuracy(&train)?);
    let eval_path = split_path(&a.corpus, "eval");
    if a.corpus.is_dir() && eval_path.exists() {
        println!("evaluation accuracy {:.3}", clf.accuracy(&load(&eval_path)?)?);
    }
    Ok(())
}

fn study(a: StudyArgs) -> Result<()> {
    let grid = Grid::from_toml(&fs::read_to_string(&a.configs).with_context(|| format!("reading {}", a.configs.display()))?)?;
    let store = models(a.models.as_deref())?;
    let classifier = match &a.classifier {
        Some(p) => Classifier::read_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?,
        None => Classifier::train(&take_per_class(load(&split_path(&a.corpus, "train"))?, a.per_class))?,
    };
    let eval = load(&split_path(&a.corpus, "eval"))?;
    let opts = StudyOptions {
        per_class_cap: a.cap,
        seed: a.seed,
    };
    let result = impact_study(&classifier, &eval, &grid.configs()?, &store, &opts)?;
    result.write_summary_csv(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?)?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("study");
    let confusion = a.out.with_file_name(format!("{stem}_confusion.csv"));
    result.write_confusion_csv(File::create(&confusion)?)?;
    for i in &result.impacts {
        println!("{:<24} e {:<6} accuracy {:.4} drop {:.4}", i.config.name(), i.config.e_bound, i.accuracy, i.drop);
    }
    println!("pool {} per class; summary {}, confusion {}", result.per_class, a.out.display(), confusion.display());
    Ok(())
}
