//! `alqa`: headless driver for every pipeline stage.
//!
//! Exit codes: 0 on success, 1 when a command fails its contract (bad
//! inputs, suspended runs, I/O), 2 on usage errors.

mod analysis;
mod data;
mod experiment;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use alqa_core::data_model::PerspectiveId;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "alqa", version, about = "Active-learning quality assurance for synthetic vehicle renders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset directory with a manifest.
    GenerateData(GenerateArgs),
    /// Train on the entire train universe to get the full-data upper bound.
    TrainFull(TrainFullArgs),
    /// Run an active-learning experiment and write its learning curves.
    Run(RunArgs),
    /// Smallest random-baseline round within epsilon of the full-data F2.
    BaselineRounds(BaselineArgs),
    /// Touchpoints, savings, significance tests and labeling economics.
    Compare(CompareArgs),
    /// Seed means and standard deviations per round.
    Report(ReportArgs),
    /// Start the labeling and defect-triage HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub defect_fraction: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Perspectives to render; all four when omitted.
    #[arg(long = "perspective")]
    pub perspectives: Vec<PerspectiveId>,
    #[arg(long, default_value_t = alqa_core::synth::RENDER_SIZE)]
    pub resolution: usize,
    /// Part catalog JSON; the bundled catalog when omitted.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainFullArgs {
    /// Experiment config; its perspective, data split and model are used.
    #[arg(long)]
    pub config: PathBuf,
    /// Seed for the model; the config's first seed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; `<run root>/full-<perspective>-<hash>` by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    Simulated,
    Human,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's oracle binding.
    #[arg(long, value_enum)]
    pub oracle: Option<OracleKind>,
    /// Base URL of a running service; required for the human oracle.
    #[arg(long)]
    pub service: Option<String>,
    /// Number of seed worker processes.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Explicit run id instead of the one derived from the config.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Internal: run a single seed inside a worker process.
    #[arg(long, hide = true)]
    pub worker_seed: Option<u64>,
}

#[derive(Args)]
pub struct BaselineArgs {
    /// Run directory of the random-acquisition experiment.
    #[arg(long)]
    pub random: PathBuf,
    #[arg(long)]
    pub full_f2: f64,
    #[arg(long, default_value_t = analysis::DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Args)]
pub struct CompareArgs {
    /// AL run directory; repeat once per perspective.
    #[arg(long = "al", required = true)]
    pub al: Vec<PathBuf>,
    /// Baseline run directory, paired with `--al` by position.
    #[arg(long = "baseline", required = true)]
    pub baseline: Vec<PathBuf>,
    /// Full-data F2: one value for all pairs or one per pair.
    #[arg(long = "full-f2", required = true)]
    pub full_f2: Vec<f64>,
    #[arg(long, default_value_t = analysis::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = alqa_core::stats::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 31.0)]
    pub label_seconds: f64,
    #[arg(long, default_value_t = 8.0)]
    pub workday_hours: f64,
    #[arg(long, default_value_t = 18.0)]
    pub models: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directories to summarize.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Write the summary CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write learning-curve plots as SVG.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Service root; the run root when omitted.
    #[arg(long)]
    pub root: Option<PathBuf>,
}

/// `$ALQA_HOME/runs`, or `./runs` when the variable is unset.
pub fn run_root() -> PathBuf {
    match std::env::var_os("ALQA_HOME") {
        Some(home) if !home.is_empty() => PathBuf::from(home).join("runs"),
        _ => PathBuf::from("runs"),
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenerateData(a) => data::generate(&a),
        Command::TrainFull(a) => data::train_full(&a),
        Command::Run(a) => experiment::run(&a),
        Command::BaselineRounds(a) => analysis::baseline_rounds(&a),
        Command::Compare(a) => analysis::compare(&a),
        Command::Report(a) => analysis::report(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let root = args.root.clone().unwrap_or_else(run_root);
    let service = std::sync::Arc::new(alqa_service::Service::open(&root)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(alqa_service::http::serve(service, args.addr))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
