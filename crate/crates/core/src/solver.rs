//! Minimization of the estimator costs, random initialization and the
//! two-stage ray-then-angular refinement.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeocalError, Result};
use crate::estimators::{CostKind, CostModel, ParamVector, DEFAULT_LAMBDA};
use crate::lbfgs::{lbfgs, lbfgs_bounded, LbfgsOptions, Termination};
use crate::synth::{sample_scene, MeasurementSet, RoomSpec};
use crate::geometry::SceneGeometry;

/// Cost used to polish a ray-cost estimate.
pub const REFINE_COST: CostKind = CostKind::Wozniak19;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Tolerance on the max-abs gradient entry.
    pub grad_tol: f64,
    pub lbfgs_memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Lower bound on ray distances.
    pub lambda: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            grad_tol: 1e-8,
            lbfgs_memory: 10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(invalid("line-search constants must satisfy 0 < c1 < c2 < 1"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(invalid("grad_tol must be nonnegative"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda must be positive"));
        }
        Ok(())
    }

    pub fn model(&self, kind: CostKind) -> CostModel {
        CostModel { kind, lambda: self.lambda }
    }

    fn options(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iterations: self.max_iterations,
            grad_tol: self.grad_tol,
            memory: self.lbfgs_memory,
            c1: self.wolfe_c1,
            c2: self.wolfe_c2,
            ..LbfgsOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub cost_kind: CostKind,
    /// Gauge-fixed estimate; ray-cost events are the mean of the ray points.
    pub scene_estimate: SceneGeometry,
    #[serde(with = "optional_matrix", default, skip_serializing_if = "Option::is_none")]
    pub psi_estimate: Option<DMatrix<f64>>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    pub cost_history: Vec<f64>,
}

mod optional_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|rows| {
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(serde::de::Error::custom("ragged distance matrix"));
            }
            Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
        })
        .transpose()
    }
}

/// Minimizes `kind` from `init` with L-BFGS.
///
/// Never fails on a numerical stall: a line-search breakdown returns the
/// best iterate with `converged = false`.
pub fn minimize(
    kind: CostKind,
    meas: &MeasurementSet,
    init: &ParamVector,
    config: &SolverConfig,
) -> Result<CalibrationResult> {
    config.validate()?;
    let model = config.model(kind);
    let initial = model.evaluate(init, meas)?;
    let layout = *init.layout();
    let objective = |x: &[f64], g: &mut [f64]| model.evaluate_raw(&layout, x, meas, g);
    let out = match layout.lower_bounds() {
        Some(lower) => lbfgs_bounded(objective, init.values(), &lower, &config.options()),
        None => lbfgs(objective, init.values(), &config.options()),
    };
    let params = init.with_values(out.x);
    let scene_estimate = params.to_scene(meas)?;
    Ok(CalibrationResult {
        cost_kind: kind,
        scene_estimate,
        psi_estimate: params.psi_matrix(),
        initial_cost: initial.value,
        final_cost: out.value,
        iterations: out.iterations,
        converged: !matches!(out.termination, Termination::MaxIterations | Termination::LineSearchFailed),
        cost_history: out.history,
    })
}

/// Packing of a random scene drawn in `room`: node positions, orientations
/// and events uniform, ray distances implied by that scene.
pub fn random_init<R: Rng + ?Sized>(
    meas: &MeasurementSet,
    room: &RoomSpec,
    model: &CostModel,
    rng: &mut R,
) -> Result<ParamVector> {
    if room.dim() != meas.dim() {
        return Err(invalid("room and measurements have different dimensions"));
    }
    let scene = sample_scene(room, meas.n_nodes(), meas.n_events(), rng)?;
    Ok(ParamVector::from_scene(&scene, model))
}

/// Packing of a known scene, e.g. the ground truth.
pub fn scene_init(scene: &SceneGeometry, model: &CostModel) -> ParamVector {
    ParamVector::from_scene(scene, model)
}

/// Polishes a stage-one estimate with the angular ML cost.
pub fn refine(stage1: &CalibrationResult, meas: &MeasurementSet, config: &SolverConfig) -> Result<CalibrationResult> {
    let init = ParamVector::from_scene(&stage1.scene_estimate, &config.model(REFINE_COST));
    minimize(REFINE_COST, meas, &init, config).map_err(|e| stage("refine", e))
}

/// Ray cost from a random start followed by [`refine`]; returns the
/// refined result.
pub fn calibrate_refined<R: Rng + ?Sized>(
    meas: &MeasurementSet,
    room: &RoomSpec,
    config: &SolverConfig,
    rng: &mut R,
) -> Result<CalibrationResult> {
    let model = config.model(CostKind::RayLs);
    let stage1 = random_init(meas, room, &model, rng)
        .and_then(|init| minimize(CostKind::RayLs, meas, &init, config))
        .map_err(|e| stage("ray", e))?;
    refine(&stage1, meas, config)
}

fn stage(stage: &'static str, source: GeocalError) -> GeocalError {
    GeocalError::Stage { stage, source: Box::new(source) }
}
