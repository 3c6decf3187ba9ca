use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use relevancy_core::eval::ReportFormat;
use relevancy_core::pipeline::{
    built_datasets, cmd_build, cmd_eval, cmd_report, cmd_validate, EvalOptions, PipelineError, ProjectConfig,
};
use relevancy_core::prompt::SelectionMode;

#[derive(Parser)]
#[command(name = "relevancy", version, about = "Build and evaluate image-text relevancy benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build datasets from the configured source corpora.
    Build {
        #[arg(short, long)]
        config: PathBuf,
        /// Only build these tasks.
        #[arg(short, long = "task")]
        tasks: Vec<String>,
    },
    /// Evaluate built datasets and write predictions and reports.
    Eval {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long = "task")]
        tasks: Vec<String>,
        /// Shot counts, e.g. `--shots 0,2,4`.
        #[arg(short, long, value_delimiter = ',')]
        shots: Vec<usize>,
        #[arg(short, long)]
        mode: Option<Mode>,
    },
    /// Render stored predictions; with two files, also the accuracy deltas.
    Report {
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
        #[arg(short, long, default_value = "markdown")]
        format: Format,
    },
    /// Check dataset files. Without paths, checks the built datasets of a config.
    Validate {
        #[arg(short, long)]
        config: Option<PathBuf>,
        datasets: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Random,
    Semantic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
    Json,
}

fn load(config: &PathBuf) -> Result<ProjectConfig, PipelineError> {
    Ok(ProjectConfig::load(config)?)
}

/// `SOURCE_DATE_EPOCH` when set, else the current time.
fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Build { config, tasks } => {
            let cfg = load(&config)?;
            let manifest = cmd_build(&cfg, &tasks)?;
            for t in &manifest.tasks {
                println!(
                    "{}: {} positives, {} negatives ({} train, {} test) -> {}",
                    t.task, t.positives, t.negatives, t.train, t.test, t.file
                );
            }
        }
        Command::Eval { config, tasks, shots, mode } => {
            let cfg = load(&config)?;
            let opts = EvalOptions {
                tasks: (!tasks.is_empty()).then_some(tasks),
                shots: (!shots.is_empty()).then_some(shots),
                mode: mode.map(|m| match m {
                    Mode::Random => SelectionMode::BalancedRandom,
                    Mode::Semantic => SelectionMode::SemanticRelated,
                }),
                timestamp: timestamp(),
            };
            let outcome = cmd_eval(&cfg, &opts)?;
            tracing::info!(dir = %outcome.run_dir.display(), "reports written");
            print!("{}", outcome.markdown);
        }
        Command::Report { predictions, format } => {
            let format = match format {
                Format::Markdown => ReportFormat::Markdown,
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            print!("{}", cmd_report(&predictions, format)?);
        }
        Command::Validate { config, mut datasets } => {
            if let Some(config) = config {
                datasets.extend(built_datasets(&load(&config)?)?);
            }
            if datasets.is_empty() {
                return Err(PipelineError::Config(relevancy_core::pipeline::ConfigError::Parse {
                    path: PathBuf::from("-"),
                    message: "no dataset files given".into(),
                }));
            }
            for s in cmd_validate(&datasets)? {
                println!("{}: {} samples", s.path.display(), s.samples);
                for (key, n) in &s.counts {
                    println!("  {key}: {n}");
                }
                if s.overlapping_records > 0 {
                    println!("  warning: {} source records appear in both train and test", s.overlapping_records);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("RELEVANCY_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
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
            tracing::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
