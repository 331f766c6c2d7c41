use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segunc_core::aggregation::Strategy;
use segunc_core::study::Task;
use segunc_core::toygen::ScenarioId;
use segunc_core::{Error, Measure, ModelFamily};

mod commands;

/// Exit status for inputs that fail validation.
const EXIT_VALIDATION: u8 = 2;
/// Exit status for unreadable, unwritable or malformed files.
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "segunc", version, about = "Evaluate pixel-level uncertainty in segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy scenario as NPY volumes plus a manifest
    Toygen(ToygenArgs),
    /// Simulate prediction stacks for every case of a manifest
    Simulate(SimulateArgs),
    /// Compute uncertainty maps from one prediction stack
    Uncertainty(UncertaintyArgs),
    /// Reduce uncertainty maps to image-level scores
    Aggregate(AggregateArgs),
    /// Evaluate downstream tasks on a manifest
    Evaluate(EvaluateArgs),
    /// Run one of the configured studies
    #[command(subcommand)]
    Study(StudyCommand),
    /// Re-render a report from its CSV or JSON form
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum StudyCommand {
    /// NCC on rater ambiguity and AUROC on shifted cases for every measure
    Separation(StudyArgs),
    /// Shift detection, failure detection, AL, calibration and ambiguity
    Downstream(StudyArgs),
}

#[derive(Args)]
struct ToygenArgs {
    #[arg(long)]
    scenario: ScenarioId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Toy parameters are read from this run config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    volume_edge: Option<usize>,
    /// Extra validation cases
    #[arg(long, default_value_t = 0)]
    n_val: usize,
    /// Extra unlabeled pool cases (half shifted)
    #[arg(long, default_value_t = 0)]
    n_pool: usize,
    /// Skip writing the input images
    #[arg(long)]
    no_images: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    family: ModelFamily,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulator settings for the family are read from this run config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UncertaintyArgs {
    /// NPY stack shaped [S, C, dims..]
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    family: ModelFamily,
    #[arg(long)]
    out: PathBuf,
    /// Also export display-normalized heatmaps
    #[arg(long)]
    heatmaps: bool,
}

#[derive(Args)]
struct AggregateArgs {
    /// NPY uncertainty maps
    #[arg(long = "map", required = true)]
    maps: Vec<PathBuf>,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value_t = segunc_core::aggregation::DEFAULT_WINDOW_EDGE)]
    window_edge: usize,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = Measure::Pe)]
    measure: Measure,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Family whose semantics apply to stored stacks
    #[arg(long)]
    family: Option<ModelFamily>,
    /// Comma-separated tasks; defaults to every task the data supports
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<Task>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the data seed of the config
    #[arg(long)]
    seed: Option<u64>,
    /// Root for the run directory; defaults to the config's output_dir
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.csv or report.json
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("VALUES_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::ConfigInvalid(format!("VALUES_THREADS must be a positive integer, got '{raw}'")))?;
    // a pool already built by an earlier call is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    configure_threads()?;
    match cli.command {
        Command::Toygen(a) => commands::toygen(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Uncertainty(a) => commands::uncertainty(a),
        Command::Aggregate(a) => commands::aggregate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Study(StudyCommand::Separation(a)) => commands::study(a, false),
        Command::Study(StudyCommand::Downstream(a)) => commands::study(a, true),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            // a closed stdout (e.g. piped into `head`) is not a failure
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let diag = serde_json::json!({ "error": e.code(), "message": e.to_string() });
            eprintln!("{diag}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}
