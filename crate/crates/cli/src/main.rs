use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use openintent_cli::ablate::ModelKind;
use openintent_cli::commands::{self, Baseline, EvalArgs, PredictArgs, PredictFormat, TrainArgs};
use openintent_cli::{CliError, CliResult, Log, RunConfig};
use openintent_core::model::Variant;

#[derive(Parser)]
#[command(name = "openintent", version, about = "Open-set intersection intention prediction")]
struct Cli {
    /// Per-epoch and per-model progress on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Worker threads for evaluation; training is always single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Overrides the generator and training seeds (and OPENINTENT_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its weights.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// full, goal_only, lane_only, l_gl, gl_l or stl.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// History CSV path (default: <out>.history.csv).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate weights, a baseline or the label oracle on a split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Map ids counted as seen, one per line (default: the training maps).
        #[arg(long)]
        seen: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "baseline")]
        oracle: bool,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        /// Verify the report's counters before writing it.
        #[arg(long)]
        self_check: bool,
        /// Add step latency to the report (makes the output machine-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Per-frame predictions for one trajectory.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        /// Which trajectory of a multi-record file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
        format: FormatArg,
    },
    /// Step latency on a reference map and its scaling with lane count.
    Latency {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [4, 12, 24, 48])]
        lanes: Vec<usize>,
    },
    /// Train and compare several models on one dataset.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated subset (default: all six variants, mlp and knn).
        #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
        models: Vec<ModelKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Knn,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}"))
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown model {s:?}"))
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path.map(PathBuf::as_path))?;
    cfg.resolve_seed(seed)?;
    Ok(cfg)
}

fn emit(out: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| openintent_core::Error::io(p, e).into()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| openintent_core::Error::io("<stdout>", e).into())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let log = Log { verbose: cli.verbose };
    openintent_core::heap::retain_freed_memory();
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            emit(None, &commands::cmd_gen(&cfg, &out, log)?)
        }
        Command::Train {
            config,
            data,
            out,
            variant,
            epochs,
            batch_size,
            history,
        } => {
            let mut cfg = load_config(config.as_ref(), cli.seed)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            cfg.validate()?;
            let args = TrainArgs {
                data: &data,
                out: &out,
                history: history.as_deref(),
                variant,
            };
            commands::cmd_train(&cfg, &args, log)?;
            Ok(())
        }
        Command::Eval {
            config,
            data,
            weights,
            split,
            seen,
            out,
            oracle,
            baseline,
            self_check,
            timing,
        } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let args = EvalArgs {
                data: &data,
                weights: weights.as_deref(),
                check_config: config.is_some(),
                split: &split,
                seen: seen.as_deref(),
                oracle,
                baseline: baseline.map(|b| match b {
                    BaselineArg::Knn => Baseline::Knn,
                    BaselineArg::Mlp => Baseline::Mlp,
                }),
                self_check,
                timing,
                threads: cli.threads,
            };
            let report = commands::cmd_eval(&cfg, &args, log)?;
            emit(out.as_ref(), &commands::report_json(&report))
        }
        Command::Predict {
            weights,
            map,
            trajectory,
            index,
            format,
        } => {
            let args = PredictArgs {
                weights: &weights,
                map: &map,
                trajectory: &trajectory,
                index,
                format: match format {
                    FormatArg::Jsonl => PredictFormat::Jsonl,
                    FormatArg::Csv => PredictFormat::Csv,
                },
            };
            emit(None, &commands::cmd_predict(&args)?)
        }
        Command::Latency {
            weights,
            config,
            repeats,
            lanes,
        } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            if repeats == 0 {
                return Err(CliError::Usage("--repeats must be positive".into()));
            }
            let model = commands::latency_model(weights.as_deref(), &cfg.model, cfg.train.seed)?;
            let r = commands::cmd_latency(&model, &lanes, repeats, cfg.train.seed)?;
            emit(None, &commands::latency_json(&r))
        }
        Command::Ablate {
            config,
            data,
            models,
            out,
        } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let kinds = if models.is_empty() { ModelKind::all() } else { models };
            let json = commands::cmd_ablate(&cfg, &data, &kinds, cli.threads, log)?;
            emit(out.as_ref(), &json)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
