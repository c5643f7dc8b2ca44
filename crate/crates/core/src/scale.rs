//! Absolute scale from arrival times.
//!
//! Arrival times follow `t_ij = o_j + γ ρ_ij / c`, where `ρ_ij` are distances
//! in the relative geometry and `o_j` are unknown emission times. The model
//! is linear in `(γ, o_1, …, o_S)`; centering each event's column removes
//! the onsets and leaves a one-parameter least-squares problem in `γ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeocalError, Result};
use crate::geometry::SceneGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub gamma: f64,
    pub onset_times: Vec<f64>,
    /// RMS of the arrival-time residuals (seconds).
    pub residual_rms: f64,
}

pub fn estimate_scale(relative: &SceneGeometry, arrival_times: &DMatrix<f64>, c: f64) -> Result<ScaleEstimate> {
    let (n, s) = (relative.n_nodes(), relative.n_events());
    if arrival_times.shape() != (n, s) {
        return Err(invalid(format!(
            "arrival times are {}x{}, scene has {n} nodes and {s} events",
            arrival_times.nrows(),
            arrival_times.ncols()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("speed of sound must be positive, got {c}")));
    }
    let rho = DMatrix::from_fn(n, s, |i, j| relative.distance(i, j));
    let mut num = 0.0;
    let mut den = 0.0;
    let mut scale = 0.0;
    for j in 0..s {
        let rho_mean = rho.column(j).mean();
        let t_mean = arrival_times.column(j).mean();
        for i in 0..n {
            let dr = rho[(i, j)] - rho_mean;
            num += (arrival_times[(i, j)] - t_mean) * dr;
            den += dr * dr;
            scale += rho[(i, j)] * rho[(i, j)];
        }
    }
    if !(den > 1e-12 * scale) {
        return Err(GeocalError::UnidentifiableScale);
    }
    let gamma = c * num / den;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(GeocalError::UnidentifiableScale);
    }
    let onset_times: Vec<f64> = (0..s)
        .map(|j| arrival_times.column(j).mean() - gamma * rho.column(j).mean() / c)
        .collect();
    let sq: f64 = (0..s)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .map(|(i, j)| (arrival_times[(i, j)] - onset_times[j] - gamma * rho[(i, j)] / c).powi(2))
        .sum();
    Ok(ScaleEstimate { gamma, onset_times, residual_rms: (sq / (n * s) as f64).sqrt() })
}

/// Multiplies every position by `gamma`; orientations are unchanged.
pub fn apply_scale(relative: &SceneGeometry, gamma: f64) -> Result<SceneGeometry> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("scale must be positive, got {gamma}")));
    }
    Ok(relative.map_positions(|p| p * gamma))
}
