//! Seeded Monte-Carlo experiments over grids of scene sizes, noise levels
//! and estimators.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeocalError, Result};
use crate::estimators::CostKind;
use crate::evaluation::{aggregate, compare_in_gauge, Summary, TrialOutcome};
use crate::geometry::SceneGeometry;
use crate::solver::{minimize, random_init, refine, scene_init, CalibrationResult, SolverConfig, REFINE_COST};
use crate::synth::{sample_scene, synthesize, MeasurementSet, RoomSpec};

pub const SUCCESS_HEADER: [&str; 6] = ["cost", "n_nodes", "n_events", "sigma_doa", "trials", "success_ratio"];
pub const RMSE_HEADER: [&str; 4] = ["cost", "sigma_doa", "set", "rmse"];
pub const TRIAL_HEADER: [&str; 11] = [
    "seed", "cost_kind", "N", "S", "sigma_doa", "eps_b", "eps_n", "eps_s", "success", "final_cost", "iterations",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SuccessRatio,
    RmseSweep,
    SingleRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    GroundTruth,
    Random,
}

/// One way of producing an estimate: a single cost, or the ray cost
/// followed by refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Single(CostKind),
    Refined,
}

impl Estimator {
    pub fn label(&self) -> String {
        match self {
            Estimator::Single(k) => k.name().to_string(),
            Estimator::Refined => format!("{}+{}", CostKind::RayLs, REFINE_COST),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Estimator {
    type Err = GeocalError;

    fn from_str(s: &str) -> Result<Self> {
        if s == Estimator::Refined.label() {
            Ok(Estimator::Refined)
        } else {
            s.parse().map(Estimator::Single)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub room: RoomSpec,
    pub node_counts: Vec<usize>,
    pub event_counts: Vec<usize>,
    /// DoA noise levels (radians).
    pub sigma_doa: Vec<f64>,
    /// Arrival-time noise (seconds).
    pub sigma_tdoa: f64,
    pub trials: usize,
    pub costs: Vec<CostKind>,
    /// Also report the ray cost refined by the angular ML cost.
    pub refine: bool,
    pub init: InitMode,
    pub seed: u64,
    pub speed_of_sound: f64,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

/// Partial configuration as read from a file or command-line flags. Unset
/// fields fall back to the defaults of the experiment kind.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub experiment: Option<ExperimentKind>,
    pub room: Option<RoomSpec>,
    pub node_counts: Option<Vec<usize>>,
    pub event_counts: Option<Vec<usize>>,
    pub sigma_doa: Option<Vec<f64>>,
    pub sigma_tdoa: Option<f64>,
    pub trials: Option<usize>,
    pub costs: Option<Vec<CostKind>>,
    pub refine: Option<bool>,
    pub init: Option<InitMode>,
    pub seed: Option<u64>,
    pub speed_of_sound: Option<f64>,
    pub solver: Option<SolverOverrides>,
    pub output: Option<OutputOverrides>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub max_iterations: Option<usize>,
    pub grad_tol: Option<f64>,
    pub lbfgs_memory: Option<usize>,
    pub wolfe_c1: Option<f64>,
    pub wolfe_c2: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOverrides {
    pub report: Option<PathBuf>,
    pub trials_csv: Option<PathBuf>,
    pub plot_data: Option<PathBuf>,
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `other` replace those set here.
    pub fn merge(mut self, other: ConfigOverrides) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(experiment, room, node_counts, event_counts, sigma_doa, sigma_tdoa, trials, costs, refine, init, seed, speed_of_sound);
        if let Some(o) = other.solver {
            let s = self.solver.get_or_insert_with(Default::default);
            macro_rules! take_solver {
                ($($f:ident),*) => { $( if o.$f.is_some() { s.$f = o.$f; } )* };
            }
            take_solver!(max_iterations, grad_tol, lbfgs_memory, wolfe_c1, wolfe_c2, lambda);
        }
        if let Some(o) = other.output {
            let out = self.output.get_or_insert_with(Default::default);
            if o.report.is_some() {
                out.report = o.report;
            }
            if o.trials_csv.is_some() {
                out.trials_csv = o.trials_csv;
            }
            if o.plot_data.is_some() {
                out.plot_data = o.plot_data;
            }
        }
        self
    }

    /// Resolve against the defaults of the chosen kind (`fallback` when the
    /// overrides do not name one).
    pub fn resolve(self, fallback: ExperimentKind) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::defaults(self.experiment.unwrap_or(fallback));
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(room, node_counts, event_counts, sigma_doa, sigma_tdoa, trials, costs, refine, init, seed, speed_of_sound);
        if let Some(s) = self.solver {
            macro_rules! set_solver {
                ($($f:ident),*) => { $( if let Some(v) = s.$f { c.solver.$f = v; } )* };
            }
            set_solver!(max_iterations, grad_tol, lbfgs_memory, wolfe_c1, wolfe_c2, lambda);
        }
        if let Some(o) = self.output {
            c.output = OutputPaths { report: o.report, trials_csv: o.trials_csv, plot_data: o.plot_data };
        }
        c.validate()?;
        Ok(c)
    }
}

impl ExperimentConfig {
    /// Defaults sized for a desktop run of each experiment.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            room: RoomSpec::default(),
            node_counts: vec![3, 5, 7],
            event_counts: vec![5, 10, 20],
            sigma_doa: vec![0.0],
            sigma_tdoa: 0.0,
            trials: 100,
            costs: CostKind::ALL.to_vec(),
            refine: false,
            init: InitMode::Random,
            seed: 1,
            speed_of_sound: crate::synth::SPEED_OF_SOUND,
            solver: SolverConfig::default(),
            output: OutputPaths::default(),
        };
        match kind {
            ExperimentKind::SuccessRatio => base,
            ExperimentKind::RmseSweep => Self {
                node_counts: vec![5],
                event_counts: vec![10],
                sigma_doa: vec![0.0, 0.01, 0.02, 0.05, 0.1],
                init: InitMode::GroundTruth,
                ..base
            },
            ExperimentKind::SingleRun => Self {
                node_counts: vec![5],
                event_counts: vec![10],
                trials: 1,
                costs: vec![CostKind::RayLs],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.node_counts.is_empty() || self.event_counts.is_empty() || self.sigma_doa.is_empty() {
            return Err(invalid("node_counts, event_counts and sigma_doa must be non-empty"));
        }
        if self.costs.is_empty() && !self.refine {
            return Err(invalid("no estimators selected"));
        }
        if self.node_counts.iter().any(|&n| n < 2) || self.event_counts.iter().any(|&s| s < 1) {
            return Err(invalid("need at least 2 nodes and 1 event"));
        }
        if self.sigma_doa.iter().chain([&self.sigma_tdoa]).any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("noise levels must be finite and nonnegative"));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(invalid("speed_of_sound must be positive"));
        }
        self.solver.validate()
    }

    pub fn estimators(&self) -> Vec<Estimator> {
        let mut e: Vec<Estimator> = self.costs.iter().map(|&k| Estimator::Single(k)).collect();
        if self.refine {
            e.push(Estimator::Refined);
        }
        e.sort();
        e.dedup();
        e
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(format!("cannot serialize config: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cost: String,
    pub n_nodes: usize,
    pub n_events: usize,
    pub sigma_doa: f64,
    pub trial: usize,
    #[serde(flatten)]
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cost: String,
    pub n_nodes: usize,
    pub n_events: usize,
    pub sigma_doa: f64,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentReport {
    pub fn cell(&self, cost: &str, n_nodes: usize, n_events: usize, sigma_doa: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.cost == cost && c.n_nodes == n_nodes && c.n_events == n_events && c.sigma_doa == sigma_doa)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// One row per trial and estimator.
    pub fn write_trials_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRIAL_HEADER)?;
        for t in &self.trials {
            let o = &t.outcome;
            out.write_record([
                o.seed.to_string(),
                t.cost.clone(),
                t.n_nodes.to_string(),
                t.n_events.to_string(),
                t.sigma_doa.to_string(),
                o.eps_orientations.to_string(),
                o.eps_nodes.to_string(),
                o.eps_events.to_string(),
                o.success.to_string(),
                o.final_cost.to_string(),
                o.iterations.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Seed of one trial. The estimator is deliberately not mixed in, so every
/// estimator in a cell sees the same scenes, measurements and random starts.
pub fn trial_seed(base: u64, n_nodes: usize, n_events: usize, sigma_doa: f64, trial: usize) -> u64 {
    let mut h = base;
    for word in [n_nodes as u64, n_events as u64, sigma_doa.to_bits(), trial as u64] {
        h = splitmix64(h ^ splitmix64(word));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
struct Job {
    n_nodes: usize,
    n_events: usize,
    sigma_doa: f64,
    trial: usize,
}

/// Everything one seeded trial needs, shared by all estimators.
pub struct TrialProblem {
    pub seed: u64,
    pub truth: SceneGeometry,
    pub measurements: MeasurementSet,
    /// Random start shared by all estimators, drawn after the measurements.
    pub random_start: Option<SceneGeometry>,
}

impl TrialProblem {
    pub fn generate(config: &ExperimentConfig, n_nodes: usize, n_events: usize, sigma_doa: f64, trial: usize) -> Result<Self> {
        let seed = trial_seed(config.seed, n_nodes, n_events, sigma_doa, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = sample_scene(&config.room, n_nodes, n_events, &mut rng)?;
        let mut measurements = synthesize(&truth, sigma_doa, config.sigma_tdoa, &mut rng)?;
        measurements.speed_of_sound = config.speed_of_sound;
        measurements.seed = seed;
        let random_start = match config.init {
            InitMode::Random => Some(sample_scene(&config.room, n_nodes, n_events, &mut rng)?),
            InitMode::GroundTruth => None,
        };
        Ok(Self { seed, truth, measurements, random_start })
    }

    fn start(&self) -> &SceneGeometry {
        self.random_start.as_ref().unwrap_or(&self.truth)
    }

    /// Runs one estimator from this trial's start.
    pub fn solve(&self, estimator: Estimator, solver: &SolverConfig) -> Result<CalibrationResult> {
        let kind = match estimator {
            Estimator::Single(k) => k,
            Estimator::Refined => CostKind::RayLs,
        };
        let init = scene_init(self.start(), &solver.model(kind));
        let stage1 = minimize(kind, &self.measurements, &init, solver)?;
        match estimator {
            Estimator::Single(_) => Ok(stage1),
            Estimator::Refined => refine(&stage1, &self.measurements, solver),
        }
    }

    pub fn evaluate(&self, result: &CalibrationResult) -> Result<TrialOutcome> {
        let mut o = compare_in_gauge(
            &self.truth,
            result,
            self.measurements.arrival_times(),
            self.measurements.speed_of_sound,
        )?;
        o.seed = self.seed;
        Ok(o)
    }
}

fn run_job(config: &ExperimentConfig, estimators: &[Estimator], job: Job) -> Vec<TrialRecord> {
    let record = |e: &Estimator, outcome| TrialRecord {
        cost: e.label(),
        n_nodes: job.n_nodes,
        n_events: job.n_events,
        sigma_doa: job.sigma_doa,
        trial: job.trial,
        outcome,
    };
    let problem = match TrialProblem::generate(config, job.n_nodes, job.n_events, job.sigma_doa, job.trial) {
        Ok(p) => p,
        Err(_) => {
            let seed = trial_seed(config.seed, job.n_nodes, job.n_events, job.sigma_doa, job.trial);
            return estimators.iter().map(|e| record(e, TrialOutcome::failed(seed, f64::NAN, 0, false))).collect();
        }
    };
    estimators
        .iter()
        .map(|e| {
            let outcome = match problem.solve(*e, &config.solver) {
                Ok(r) => problem
                    .evaluate(&r)
                    .unwrap_or_else(|_| TrialOutcome::failed(problem.seed, r.final_cost, r.iterations, r.converged)),
                Err(_) => TrialOutcome::failed(problem.seed, f64::NAN, 0, false),
            };
            record(e, outcome)
        })
        .collect()
}

/// Runs every (estimator, N, S, σ) cell of the grid. Per-trial failures are
/// recorded, never fatal.
pub fn run_grid(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let estimators = config.estimators();
    let mut jobs = Vec::new();
    for &n_nodes in &config.node_counts {
        for &n_events in &config.event_counts {
            for &sigma_doa in &config.sigma_doa {
                for trial in 0..config.trials {
                    jobs.push(Job { n_nodes, n_events, sigma_doa, trial });
                }
            }
        }
    }
    let mut trials: Vec<TrialRecord> = jobs
        .into_par_iter()
        .flat_map_iter(|job| run_job(config, &estimators, job))
        .collect();
    let order = |t: &TrialRecord| {
        let e: Estimator = t.cost.parse().expect("labels come from estimators");
        (e, t.n_nodes, t.n_events, t.sigma_doa.to_bits(), t.trial)
    };
    trials.sort_by_key(order);

    let mut cells = Vec::new();
    for chunk in trials.chunk_by(|a, b| order(a).0 == order(b).0 && (a.n_nodes, a.n_events, a.sigma_doa.to_bits()) == (b.n_nodes, b.n_events, b.sigma_doa.to_bits())) {
        let outcomes: Vec<TrialOutcome> = chunk.iter().map(|t| t.outcome.clone()).collect();
        let first = &chunk[0];
        cells.push(CellSummary {
            cost: first.cost.clone(),
            n_nodes: first.n_nodes,
            n_events: first.n_events,
            sigma_doa: first.sigma_doa,
            summary: aggregate(&outcomes)?,
        });
    }
    Ok(ExperimentReport { version: env!("CARGO_PKG_VERSION").to_string(), config: config.clone(), cells, trials })
}

/// Success-ratio grid: noiseless by default, random starts.
pub fn run_success_ratio(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut c = config.clone();
    c.experiment = ExperimentKind::SuccessRatio;
    run_grid(&c)
}

/// RMSE sweep over DoA noise levels.
pub fn run_rmse_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut c = config.clone();
    c.experiment = ExperimentKind::RmseSweep;
    run_grid(&c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleRun {
    pub estimator: String,
    pub result: CalibrationResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TrialOutcome>,
}

/// Calibrates one measurement set with the first configured estimator.
/// The start is drawn from the room with the configured seed, or taken
/// from `truth` for ground-truth starts. With `truth` the result is also
/// scored.
pub fn run_single(config: &ExperimentConfig, meas: &MeasurementSet, truth: Option<&SceneGeometry>) -> Result<SingleRun> {
    config.validate()?;
    let estimator = *config
        .estimators()
        .first()
        .ok_or_else(|| invalid("no estimators selected"))?;
    let kind = match estimator {
        Estimator::Single(k) => k,
        Estimator::Refined => CostKind::RayLs,
    };
    let model = config.solver.model(kind);
    let init = match (config.init, truth) {
        (InitMode::GroundTruth, Some(t)) => scene_init(t, &model),
        (InitMode::GroundTruth, None) => return Err(invalid("ground-truth start needs a truth scene")),
        (InitMode::Random, _) => random_init(meas, &config.room, &model, &mut ChaCha8Rng::seed_from_u64(config.seed))?,
    };
    let mut result = minimize(kind, meas, &init, &config.solver)?;
    if estimator == Estimator::Refined {
        result = refine(&result, meas, &config.solver)?;
    }
    let outcome = truth
        .map(|t| {
            compare_in_gauge(t, &result, meas.arrival_times(), meas.speed_of_sound).map(|mut o| {
                o.seed = config.seed;
                o
            })
        })
        .transpose()?;
    Ok(SingleRun { estimator: estimator.label(), result, outcome })
}

/// Tidy CSV of the report's aggregates: success ratios per cell for a
/// success-ratio report, RMSE per set for an RMSE sweep.
pub fn emit_plot_data<W: Write>(report: &ExperimentReport, w: W) -> Result<()> {
    if report.cells.is_empty() {
        return Err(invalid("report has no cells"));
    }
    let mut out = csv::Writer::from_writer(w);
    match report.config.experiment {
        ExperimentKind::SuccessRatio => {
            out.write_record(SUCCESS_HEADER)?;
            for c in &report.cells {
                out.write_record([
                    c.cost.clone(),
                    c.n_nodes.to_string(),
                    c.n_events.to_string(),
                    c.sigma_doa.to_string(),
                    c.summary.trials.to_string(),
                    c.summary.success_ratio.to_string(),
                ])?;
            }
        }
        ExperimentKind::RmseSweep => {
            out.write_record(RMSE_HEADER)?;
            for c in &report.cells {
                for (set, v) in [
                    ("orientations", c.summary.rmse_orientations),
                    ("nodes", c.summary.rmse_nodes),
                    ("events", c.summary.rmse_events),
                ] {
                    out.write_record([c.cost.clone(), c.sigma_doa.to_string(), set.to_string(), v.to_string()])?;
                }
            }
        }
        ExperimentKind::SingleRun => return Err(invalid("single runs have no plot data")),
    }
    out.flush()?;
    Ok(())
}

pub fn emit_plot_data_file(report: &ExperimentReport, path: &Path) -> Result<()> {
    emit_plot_data(report, File::create(path)?)
}

/// Writes whichever outputs the config names.
pub fn write_outputs(report: &ExperimentReport) -> Result<()> {
    let out = &report.config.output;
    if let Some(p) = &out.report {
        report.write_json(p)?;
    }
    if let Some(p) = &out.trials_csv {
        report.write_trials_csv(File::create(p)?)?;
    }
    if let Some(p) = &out.plot_data {
        emit_plot_data_file(report, p)?;
    }
    Ok(())
}
