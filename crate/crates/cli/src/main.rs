//! `geocal`: simulate measurements, calibrate a measurement file, and run
//! the benchmark grids.
//!
//! Exit codes: 0 success, 1 error (bad input, I/O), 2 calibration did not
//! converge.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geocal::experiment::{
    emit_plot_data, run_grid, run_single, ConfigOverrides, ExperimentKind, InitMode, OutputOverrides,
    SolverOverrides, TrialProblem,
};
use geocal::{CostKind, ExperimentConfig, ExperimentReport, MeasurementSet, SceneGeometry};

#[derive(Parser)]
#[command(name = "geocal", version, about = "Relative geometry of distributed arrays from DoA measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a scene and write its noisy measurements (and optionally the truth).
    Simulate(SimulateArgs),
    /// Estimate the geometry from a measurement file.
    Calibrate(CalibrateArgs),
    /// Run a Monte-Carlo experiment grid.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Convert a report to tidy CSV.
    PlotData(PlotDataArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Success ratio over a grid of node and event counts.
    SuccessRatio(BenchArgs),
    /// Error RMSE over a sweep of DoA noise levels.
    Rmse(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Random,
    GroundTruth,
}

impl From<Init> for InitMode {
    fn from(i: Init) -> Self {
        match i {
            Init::Random => InitMode::Random,
            Init::GroundTruth => InitMode::GroundTruth,
        }
    }
}

/// Options shared by every subcommand that builds an experiment config.
/// Flags override the config file.
#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed (overrides the config file).
    #[arg(long, env = "GEOCAL_SEED")]
    seed: Option<u64>,
    /// Room extents in meters; two values for a planar setup.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    room: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    costs: Option<Vec<CostKind>>,
    /// Also run the ray cost refined by the angular ML cost.
    #[arg(long)]
    refine: bool,
    #[arg(long, value_enum)]
    init: Option<Init>,
    /// Arrival-time noise in seconds.
    #[arg(long)]
    sigma_tdoa: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Lower bound on ray distances.
    #[arg(long)]
    lambda: Option<f64>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<ConfigOverrides> {
        let room = self
            .room
            .as_deref()
            .map(geocal::RoomSpec::new)
            .transpose()?;
        let solver = (self.max_iterations.is_some() || self.grad_tol.is_some() || self.lambda.is_some()).then(|| {
            SolverOverrides {
                max_iterations: self.max_iterations,
                grad_tol: self.grad_tol,
                lambda: self.lambda,
                ..Default::default()
            }
        });
        Ok(ConfigOverrides {
            seed: self.seed,
            room,
            costs: self.costs.clone(),
            refine: self.refine.then_some(true),
            init: self.init.map(Into::into),
            sigma_tdoa: self.sigma_tdoa,
            solver,
            ..Default::default()
        })
    }

    /// File values, then `extra`, then these flags.
    fn resolve(&self, kind: ExperimentKind, extra: ConfigOverrides) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => ConfigOverrides::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
            None => ConfigOverrides::default(),
        };
        let forced = ConfigOverrides { experiment: Some(kind), ..Default::default() };
        Ok(file.merge(extra).merge(self.overrides()?).merge(forced).resolve(kind)?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    #[arg(long, default_value_t = 10)]
    events: usize,
    /// DoA noise in radians.
    #[arg(long, default_value_t = 0.0)]
    sigma_doa: f64,
    /// Measurement file; stdout when omitted.
    #[arg(short, long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Where to write the true scene.
    #[arg(long, value_name = "PATH")]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Measurement JSON as written by `simulate`.
    measurements: PathBuf,
    /// True scene; enables scoring and ground-truth starts.
    #[arg(long, value_name = "PATH")]
    truth: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    nodes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    events: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sigma_doa: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Report JSON; stdout when no output path is configured.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    trials_csv: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct PlotDataArgs {
    report: PathBuf,
    /// CSV file; stdout when omitted.
    #[arg(short, long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let extra = ConfigOverrides {
        node_counts: Some(vec![args.nodes]),
        event_counts: Some(vec![args.events]),
        sigma_doa: Some(vec![args.sigma_doa]),
        ..Default::default()
    };
    let config = args.config.resolve(ExperimentKind::SingleRun, extra)?;
    let problem = TrialProblem::generate(&config, args.nodes, args.events, args.sigma_doa, 0)?;
    write_text(args.out.as_deref(), &(serde_json::to_string_pretty(&problem.measurements)? + "\n"))?;
    if let Some(p) = &args.truth_out {
        write_text(Some(p), &(serde_json::to_string_pretty(&problem.truth)? + "\n"))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let meas: MeasurementSet = read_json(&args.measurements, "measurements")?;
    let truth: Option<SceneGeometry> = args.truth.as_deref().map(|p| read_json(p, "truth scene")).transpose()?;
    let mut config = args.config.resolve(ExperimentKind::SingleRun, ConfigOverrides::default())?;
    if config.room.dim() != meas.dim() {
        // planar measurements with the default 3-D room
        if args.config.room.is_some() {
            bail!("room is {}-D but the measurements are {}-D", config.room.dim().value(), meas.dim().value());
        }
        config.room = geocal::RoomSpec::new(&vec![10.0; meas.dim().value()])?;
    }
    let run = run_single(&config, &meas, truth.as_ref())?;
    write_text(None, &(serde_json::to_string_pretty(&run)? + "\n"))?;
    Ok(if run.result.converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn bench(kind: ExperimentKind, args: BenchArgs) -> Result<ExitCode> {
    let output = (args.report.is_some() || args.trials_csv.is_some() || args.plot_data.is_some()).then(|| {
        OutputOverrides { report: args.report.clone(), trials_csv: args.trials_csv.clone(), plot_data: args.plot_data.clone() }
    });
    let extra = ConfigOverrides {
        node_counts: args.nodes,
        event_counts: args.events,
        sigma_doa: args.sigma_doa,
        trials: args.trials,
        output,
        ..Default::default()
    };
    let config = args.config.resolve(kind, extra)?;
    let report = run_grid(&config)?;
    geocal::experiment::write_outputs(&report)?;
    if config.output.report.is_none() {
        write_text(None, &(report.to_json()? + "\n"))?;
    }
    for c in &report.cells {
        eprintln!(
            "{:<14} N={:<3} S={:<3} sigma={:<6} success={:.2} rmse(b,n,s)=({:.4}, {:.4}, {:.4})",
            c.cost,
            c.n_nodes,
            c.n_events,
            c.sigma_doa,
            c.summary.success_ratio,
            c.summary.rmse_orientations,
            c.summary.rmse_nodes,
            c.summary.rmse_events
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn plot_data(args: PlotDataArgs) -> Result<ExitCode> {
    let report: ExperimentReport = read_json(&args.report, "report")?;
    let mut buf = Vec::new();
    emit_plot_data(&report, &mut buf)?;
    write_text(args.out.as_deref(), std::str::from_utf8(&buf)?)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Bench(BenchCommand::SuccessRatio(a)) => bench(ExperimentKind::SuccessRatio, a),
        Command::Bench(BenchCommand::Rmse(a)) => bench(ExperimentKind::RmseSweep, a),
        Command::PlotData(a) => plot_data(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
