use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qreadout::analysis::MixtureModel;
use qreadout::config::Objective;

mod fit;
mod output;
mod run;

#[derive(Parser)]
#[command(
    name = "qreadout",
    version,
    about = "Quadrupole fluorescence readout: rates, master-equation simulation, scans and fits"
)]
struct Cli {
    /// Worker threads for scans (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Constants file; overrides $QREADOUT_CONSTANTS and the embedded table.
    #[arg(long, global = true)]
    constants: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Saturation intensities, depumping rate, photon and detection budgets.
    Rates(run::RatesArgs),
    /// Cycling-to-Raman ratio for the D2 and quadrupole-cascade pathways.
    Ngamma(run::NgammaArgs),
    /// Integrate one readout from a run config.
    Simulate(run::SimulateArgs),
    /// Run the scan grid of a run config.
    Scan(run::ScanArgs),
    /// Pick the best point of a finished scan.
    FindOptimum(run::OptimumArgs),
    /// Two-component mixture fit of a count histogram.
    FitHistogram(HistogramArgs),
    /// Exponential survival fit.
    FitLifetime(LifetimeArgs),
    /// Time-of-flight temperature fit.
    FitTof(TofArgs),
    /// Ramsey contrast and T2* fit.
    FitRamsey(FitArgs),
    /// Parse and check a run config; prints the canonical form.
    ValidateConfig(run::ValidateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV.
    input: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct HistogramArgs {
    #[command(flatten)]
    io: FitArgs,
    #[arg(long, value_enum, default_value_t = Model::Gaussian)]
    model: Model,
    /// Bin width when the input holds raw per-shot counts.
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
}

#[derive(Args)]
struct LifetimeArgs {
    #[command(flatten)]
    io: FitArgs,
    /// Report the loss over this window, s.
    #[arg(long)]
    window_s: Option<f64>,
}

#[derive(Args)]
struct TofArgs {
    #[command(flatten)]
    io: FitArgs,
    /// Atomic mass in u; defaults to the species mass from the constants file.
    #[arg(long)]
    mass_amu: Option<f64>,
    #[arg(long, default_value = "cs")]
    species: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Gaussian,
    Poisson,
}

impl From<Model> for MixtureModel {
    fn from(m: Model) -> Self {
        match m {
            Model::Gaussian => MixtureModel::Gaussian,
            Model::Poisson => MixtureModel::Poisson,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    MinInfidelity,
    MinTimeAtInfidelityCap,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::MinInfidelity => Objective::MinInfidelity,
            ObjectiveArg::MinTimeAtInfidelityCap => Objective::MinTimeAtInfidelityCap,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let constants = cli.constants.as_deref();
    let result = match cli.command {
        Command::Rates(a) => run::rates(&a, constants),
        Command::Ngamma(a) => run::ngamma(&a, constants),
        Command::Simulate(a) => run::simulate(&a),
        Command::Scan(a) => run::scan(&a, workers),
        Command::FindOptimum(a) => run::find_optimum(&a),
        Command::ValidateConfig(a) => run::validate(&a),
        Command::FitHistogram(a) => fit::histogram(&a.io.input, a.io.output.as_deref(), a.model.into(), a.bin_width),
        Command::FitLifetime(a) => fit::lifetime(&a.io.input, a.io.output.as_deref(), a.window_s),
        Command::FitTof(a) => fit::tof(&a.io.input, a.io.output.as_deref(), a.mass_amu, &a.species, constants),
        Command::FitRamsey(a) => fit::ramsey(&a.input, a.output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
