//! Error metric, comparison against ground truth and trial aggregation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeocalError, Result};
use crate::geometry::{gauge_fix, SceneGeometry};
use crate::scale::{apply_scale, estimate_scale};
use crate::solver::CalibrationResult;

/// Largest relative error in each set for a trial to count as a success.
pub const SUCCESS_THRESHOLD: f64 = 0.01;

/// `Σ‖x̂ᵢ − xᵢ‖_F / Σ‖xᵢ‖_F` over two equally shaped sets. Each member is
/// given as its flattened entries.
pub fn relative_error<T: AsRef<[f64]>>(truth: &[T], estimate: &[T]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(invalid(format!("set sizes differ: {} vs {}", truth.len(), estimate.len())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in truth.iter().zip(estimate) {
        let (x, y) = (x.as_ref(), y.as_ref());
        if x.len() != y.len() {
            return Err(invalid("set members differ in shape"));
        }
        num += x.iter().zip(y).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        den += x.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    if den == 0.0 {
        return Err(GeocalError::UndefinedDenominator);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    #[serde(with = "nan_as_null")]
    pub eps_orientations: f64,
    #[serde(with = "nan_as_null")]
    pub eps_nodes: f64,
    #[serde(with = "nan_as_null")]
    pub eps_events: f64,
    pub success: bool,
    #[serde(with = "nan_as_null")]
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TrialOutcome {
    /// A trial whose errors could not be computed.
    pub fn failed(seed: u64, final_cost: f64, iterations: usize, converged: bool) -> Self {
        Self {
            seed,
            eps_orientations: f64::NAN,
            eps_nodes: f64::NAN,
            eps_events: f64::NAN,
            success: false,
            final_cost,
            iterations,
            converged,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.eps_orientations.is_nan() || self.eps_nodes.is_nan() || self.eps_events.is_nan()
    }
}

/// Errors of a calibration result against the truth. Both scenes are
/// expressed in the frame of node 0, and the estimate is brought to absolute
/// scale from the arrival times before comparing.
pub fn compare_in_gauge(
    truth: &SceneGeometry,
    result: &CalibrationResult,
    arrival_times: &DMatrix<f64>,
    c: f64,
) -> Result<TrialOutcome> {
    let est = &result.scene_estimate;
    if est.dim() != truth.dim() || est.n_nodes() != truth.n_nodes() || est.n_events() != truth.n_events() {
        return Err(invalid("estimate and truth have different shapes"));
    }
    let truth = gauge_fix(truth);
    let est = gauge_fix(est);
    let gamma = estimate_scale(&est, arrival_times, c)?.gamma;
    let est = apply_scale(&est, gamma)?;
    let (eps_orientations, eps_nodes, eps_events) = scene_errors(&truth, &est)?;
    Ok(TrialOutcome {
        seed: 0,
        eps_orientations,
        eps_nodes,
        eps_events,
        success: [eps_orientations, eps_nodes, eps_events].iter().all(|e| *e <= SUCCESS_THRESHOLD),
        final_cost: result.final_cost,
        iterations: result.iterations,
        converged: result.converged,
    })
}

/// Relative errors of orientations, node positions and event positions,
/// with no gauge or scale handling.
pub fn scene_errors(truth: &SceneGeometry, est: &SceneGeometry) -> Result<(f64, f64, f64)> {
    let dim = truth.dim();
    let rotations = |s: &SceneGeometry| -> Vec<Vec<f64>> {
        (0..s.n_nodes()).map(|i| s.rotation(i).to_rows().concat()).collect()
    };
    let nodes = |s: &SceneGeometry| -> Vec<Vec<f64>> { s.nodes().iter().map(|n| dim.truncate(&n.position)).collect() };
    let events = |s: &SceneGeometry| -> Vec<Vec<f64>> { s.events().iter().map(|e| dim.truncate(e)).collect() };
    Ok((
        relative_error(&rotations(truth), &rotations(est))?,
        relative_error(&nodes(truth), &nodes(est))?,
        relative_error(&events(truth), &events(est))?,
    ))
}

/// Success ratio and per-set RMSE over a batch of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub successes: usize,
    /// Trials whose errors could not be computed (e.g. unidentifiable scale).
    pub failed: usize,
    pub success_ratio: f64,
    #[serde(with = "nan_as_null")]
    pub rmse_orientations: f64,
    #[serde(with = "nan_as_null")]
    pub rmse_nodes: f64,
    #[serde(with = "nan_as_null")]
    pub rmse_events: f64,
}

/// RMSE is `sqrt(mean ε²)` over trials with computable errors; failed
/// trials count against the success ratio only.
pub fn aggregate(outcomes: &[TrialOutcome]) -> Result<Summary> {
    if outcomes.is_empty() {
        return Err(invalid("cannot aggregate zero trials"));
    }
    let ok: Vec<&TrialOutcome> = outcomes.iter().filter(|o| !o.is_failed()).collect();
    let rmse = |f: fn(&TrialOutcome) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            (ok.iter().map(|o| f(o).powi(2)).sum::<f64>() / ok.len() as f64).sqrt()
        }
    };
    let successes = outcomes.iter().filter(|o| o.success).count();
    Ok(Summary {
        trials: outcomes.len(),
        successes,
        failed: outcomes.len() - ok.len(),
        success_ratio: successes as f64 / outcomes.len() as f64,
        rmse_orientations: rmse(|o| o.eps_orientations),
        rmse_nodes: rmse(|o| o.eps_nodes),
        rmse_events: rmse(|o| o.eps_events),
    })
}

/// JSON has no NaN; write it as `null` and read `null` back as NaN.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
