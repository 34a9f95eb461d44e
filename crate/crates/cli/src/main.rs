//! `dsan`: train, evaluate, encode with and inspect the self-attention
//! sentence-pair model.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numeric
//! failure. Progress goes to standard error (verbosity via `RUST_LOG`);
//! results go to files only.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use dsan::introspect::ExportFormat;

use crate::commands::{EvalRun, TrainRun};
use crate::error::CliError;
use crate::settings::{load_file, ModelFlags, Paths, TrainFlags};

const DEFAULT_SENTENCE: &str = "A lady stands outside of a Mexican market.";

#[derive(Debug, Parser)]
#[command(name = "dsan", version, about = "Directional self-attention sentence encoder for natural language inference")]
struct Cli {
    /// TOML file with optional [model], [train] and [paths] tables; flags
    /// take precedence over it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Evaluate batches on one thread (results are identical either way)
    #[arg(long, global = true)]
    single_threaded: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train on an NLI corpus, writing metrics.csv and best.ckpt to --out
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a checkpoint on a corpus
    Eval(EvalArgs),
    /// Accuracy bucketed by the average sentence length of each pair
    EvalByLength(LengthArgs),
    /// Write one tab-separated sentence vector per input line
    Encode(EncodeArgs),
    /// Export attention, gate, FFN and pooling statistics for one sentence
    Inspect(InspectArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::EvalByLength(_) => "eval-by-length",
            Command::Encode(_) => "encode",
            Command::Inspect(_) => "inspect",
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Word vectors, one `token v1 ... vd` line each
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Training pairs (SNLI-style JSON lines)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation pairs used to pick the best epoch
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Test pairs scored with the best checkpoint after training
    #[arg(long)]
    test: Option<PathBuf>,
    /// Run directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train_flags: TrainFlags,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    /// Model written by `dsan train`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Replace the checkpoint's distance-mask weight (0 disables the mask)
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CheckpointArgs,
    /// Pairs to score (SNLI-style JSON lines)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for eval.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LengthArgs {
    #[command(flatten)]
    common: CheckpointArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for length_buckets.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Increasing bucket boundaries; a bucket starting at 0 is added when
    /// the first edge is positive and the last bucket is open-ended
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30")]
    edges: Vec<f64>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[command(flatten)]
    common: CheckpointArgs,
    /// One sentence per line
    #[arg(long)]
    sentences: Option<PathBuf>,
    /// Output file of tab-separated vectors
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Svg,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Model written by `dsan train`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Replace the checkpoint's distance-mask weight (0 disables the mask)
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value = DEFAULT_SENTENCE)]
    sentence: String,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,svg")]
    format: Vec<FormatArg>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_file(cli.config.as_deref())?;
    let parallel = !cli.single_threaded;
    match cli.command {
        Command::Train(a) => commands::train(TrainRun {
            model: a.model.apply(file.model),
            train: a.train_flags.apply(file.train),
            paths: Paths {
                embeddings: a.embeddings,
                train: a.train,
                valid: a.valid,
                test: a.test,
                out: a.out,
                ..Paths::default()
            }
            .or(file.paths),
            parallel_eval: parallel,
        }),
        Command::Eval(a) => commands::eval(EvalRun {
            paths: Paths {
                checkpoint: a.common.checkpoint,
                data: a.data,
                out: a.out,
                ..Paths::default()
            }
            .or(file.paths),
            alpha: a.common.alpha,
            batch_size: a.common.batch_size,
            parallel,
        }),
        Command::EvalByLength(a) => commands::eval_by_length(
            EvalRun {
                paths: Paths {
                    checkpoint: a.common.checkpoint,
                    data: a.data,
                    out: a.out,
                    ..Paths::default()
                }
                .or(file.paths),
                alpha: a.common.alpha,
                batch_size: a.common.batch_size,
                parallel,
            },
            &a.edges,
        ),
        Command::Encode(a) => {
            let paths = Paths {
                checkpoint: a.common.checkpoint,
                sentences: a.sentences,
                out: a.out,
                ..Paths::default()
            }
            .or(file.paths);
            commands::encode(&paths, a.common.alpha, a.common.batch_size)
        }
        Command::Inspect(a) => {
            let paths = Paths {
                checkpoint: a.checkpoint,
                out: a.out,
                ..Paths::default()
            }
            .or(file.paths);
            let formats: Vec<ExportFormat> = a
                .format
                .iter()
                .map(|f| match f {
                    FormatArg::Csv => ExportFormat::Csv,
                    FormatArg::Svg => ExportFormat::Svg,
                })
                .collect();
            commands::inspect(&paths, a.alpha, &a.sentence, &formats)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => {
                    let mut cmd = Cli::command();
                    cmd.build();
                    let sub = cmd.find_subcommand_mut(name).expect("subcommand exists");
                    let _ = sub.error(ErrorKind::MissingRequiredArgument, msg).print();
                }
                other => log::error!("{other}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
