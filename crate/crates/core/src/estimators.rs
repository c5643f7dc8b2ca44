//! Cost functions for relative geometry estimation and their gradients.
//!
//! Five costs are built on the cosine `J_ij` between the measured DoA and
//! the DoA implied by the current node pose and event position. The ray
//! cost instead places each event along the measured ray of every node at
//! a free distance `ψ_ij ≥ λ` and penalizes the spread of those points
//! around their mean.
//!
//! Node 0 is held at the origin with identity orientation and is not part
//! of the parameter vector. Every cost is minimized.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeocalError, Result};
use crate::geometry::{
    gauge_fix, orientation, orientation_with_jacobian, Dim, NodePose, SceneGeometry, DEFAULT_MIN_SEPARATION,
};
use crate::synth::MeasurementSet;

/// Default lower bound on ray distances (meters).
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Cost added for each (node, event) pair closer than the minimum
/// separation, in units of that cost's per-term scale.
pub const DEGENERATE_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "&'static str", try_from = "String")]
pub enum CostKind {
    /// `N·S − Σ J`: maximum likelihood under vMF noise with unit concentration.
    VmfMl,
    /// `Σ ψ² (1 − J²)`.
    Schmalen11,
    /// `Σ ψ² (1 − J)²`.
    Jacob12,
    /// `Σ ψ (1 − J)`.
    Jacob13,
    /// `Σ (1 − J) / 2`.
    Wozniak19,
    /// Ray-based least squares with `ψ ≥ λ`.
    RayLs,
}

impl CostKind {
    pub const ALL: [CostKind; 6] = [
        CostKind::VmfMl,
        CostKind::Schmalen11,
        CostKind::Jacob12,
        CostKind::Jacob13,
        CostKind::Wozniak19,
        CostKind::RayLs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::VmfMl => "vmf-ml",
            CostKind::Schmalen11 => "schmalen11",
            CostKind::Jacob12 => "jacob12",
            CostKind::Jacob13 => "jacob13",
            CostKind::Wozniak19 => "wozniak19",
            CostKind::RayLs => "ray",
        }
    }

    pub fn is_ray(self) -> bool {
        self == CostKind::RayLs
    }

    fn penalty(self) -> f64 {
        match self {
            CostKind::Wozniak19 => 0.5 * DEGENERATE_PENALTY,
            _ => DEGENERATE_PENALTY,
        }
    }

    /// Per-pair term `h(J, ψ)` with its partials `(h, ∂h/∂J, ∂h/∂ψ)`.
    fn term(self, j: f64, psi: f64) -> (f64, f64, f64) {
        match self {
            CostKind::VmfMl => (1.0 - j, -1.0, 0.0),
            CostKind::Wozniak19 => (0.5 * (1.0 - j), -0.5, 0.0),
            CostKind::Schmalen11 => {
                let s = 1.0 - j * j;
                (psi * psi * s, -2.0 * psi * psi * j, 2.0 * psi * s)
            }
            CostKind::Jacob12 => {
                let e = 1.0 - j;
                (psi * psi * e * e, -2.0 * psi * psi * e, 2.0 * psi * e * e)
            }
            CostKind::Jacob13 => (psi * (1.0 - j), -psi, 1.0 - j),
            CostKind::RayLs => unreachable!("ray cost has no angular term"),
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = GeocalError;

    fn from_str(s: &str) -> Result<Self> {
        CostKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown cost kind '{s}'")))
    }
}

impl From<CostKind> for &'static str {
    fn from(k: CostKind) -> Self {
        k.name()
    }
}

impl TryFrom<String> for CostKind {
    type Error = GeocalError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A cost kind together with its ray bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub kind: CostKind,
    pub lambda: f64,
}

impl CostModel {
    pub fn new(kind: CostKind) -> Self {
        Self { kind, lambda: DEFAULT_LAMBDA }
    }

    pub fn with_lambda(kind: CostKind, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { kind, lambda })
    }

    pub fn layout(&self, dim: Dim, n_nodes: usize, n_events: usize) -> ParamLayout {
        ParamLayout {
            dim,
            n_nodes,
            n_events,
            ray_lambda: self.kind.is_ray().then_some(self.lambda),
        }
    }

    /// Value and gradient at `params`.
    pub fn evaluate(&self, params: &ParamVector, meas: &MeasurementSet) -> Result<CostEval> {
        self.check(&params.layout, meas)?;
        let mut gradient = vec![0.0; params.values.len()];
        let value = self.evaluate_raw(&params.layout, &params.values, meas, &mut gradient);
        Ok(CostEval { value, gradient })
    }

    fn check(&self, layout: &ParamLayout, meas: &MeasurementSet) -> Result<()> {
        if layout.ray_lambda.is_some() != self.kind.is_ray() {
            return Err(invalid(format!("parameter packing does not match cost '{}'", self.kind)));
        }
        if let Some(l) = layout.ray_lambda {
            if l != self.lambda {
                return Err(invalid("parameter packing was built for a different lambda"));
            }
        }
        if layout.dim != meas.dim() || layout.n_nodes != meas.n_nodes() || layout.n_events != meas.n_events() {
            return Err(invalid("parameter packing does not match the measurement set"));
        }
        Ok(())
    }

    /// Core evaluation on a raw slice; writes the gradient into `grad`.
    pub(crate) fn evaluate_raw(&self, layout: &ParamLayout, x: &[f64], meas: &MeasurementSet, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let poses = layout.poses_with_jacobian(x);
        let mut rot_grad = vec![Matrix3::<f64>::zeros(); layout.n_nodes];
        let value = if self.kind.is_ray() {
            self.ray_value_and_grad(layout, x, &poses, meas, grad, &mut rot_grad)
        } else {
            self.angular_value_and_grad(layout, x, &poses, meas, grad, &mut rot_grad)
        };
        for i in 1..layout.n_nodes {
            let off = layout.theta_offset(i);
            for k in 0..layout.dim.generator_len() {
                grad[off + k] = rot_grad[i].component_mul(&poses[i].jacobian[k]).sum();
            }
        }
        value
    }

    fn angular_value_and_grad(
        &self,
        layout: &ParamLayout,
        x: &[f64],
        poses: &[Pose],
        meas: &MeasurementSet,
        grad: &mut [f64],
        rot_grad: &mut [Matrix3<f64>],
    ) -> f64 {
        let kind = self.kind;
        let mut value = 0.0;
        for (i, pose) in poses.iter().enumerate() {
            for j in 0..layout.n_events {
                let event = layout.event(x, j);
                let v = event - pose.position;
                let r = v.norm();
                if r < DEFAULT_MIN_SEPARATION {
                    value += kind.penalty();
                    continue;
                }
                let measured = meas.doa(i, j);
                let w = pose.rotation.transpose() * measured;
                let cos = v.dot(&w) / r;
                let (h, h_j, h_r) = kind.term(cos, r);
                value += h;
                let dv = (w - v * (cos / r)) * (h_j / r) + v * (h_r / r);
                layout.add_event_grad(grad, j, &dv);
                if i > 0 {
                    layout.add_position_grad(grad, i, &(-dv));
                    rot_grad[i] += measured * v.transpose() * (h_j / r);
                }
            }
        }
        value
    }

    fn ray_value_and_grad(
        &self,
        layout: &ParamLayout,
        x: &[f64],
        poses: &[Pose],
        meas: &MeasurementSet,
        grad: &mut [f64],
        rot_grad: &mut [Matrix3<f64>],
    ) -> f64 {
        let n = layout.n_nodes;
        let mut value = 0.0;
        let mut points = vec![Vector3::zeros(); n];
        let mut dirs = vec![Vector3::zeros(); n];
        for j in 0..layout.n_events {
            let mut mean = Vector3::zeros();
            for (i, pose) in poses.iter().enumerate() {
                dirs[i] = pose.rotation.transpose() * meas.doa(i, j);
                points[i] = dirs[i] * x[layout.psi_offset(i, j)] + pose.position;
                mean += points[i];
            }
            mean /= n as f64;
            for i in 0..n {
                let e = points[i] - mean;
                value += e.norm_squared();
                // the mean's own dependence cancels because Σᵢ eᵢ = 0
                let g = e * 2.0;
                let off = layout.psi_offset(i, j);
                grad[off] = g.dot(&dirs[i]);
                if i > 0 {
                    layout.add_position_grad(grad, i, &g);
                    rot_grad[i] += meas.doa(i, j) * g.transpose() * x[off];
                }
            }
        }
        value
    }
}

/// Value and gradient of a cost at one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Offsets of the free unknowns in the flat parameter vector.
///
/// Order: generators of nodes 1..N, positions of nodes 1..N, then either
/// event positions (angular costs) or ray distances `ψ_ij ≥ λ` in row-major
/// node×event order (ray cost).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamLayout {
    dim: Dim,
    n_nodes: usize,
    n_events: usize,
    ray_lambda: Option<f64>,
}

struct Pose {
    rotation: Matrix3<f64>,
    jacobian: [Matrix3<f64>; 3],
    position: Vector3<f64>,
}

impl ParamLayout {
    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn is_ray(&self) -> bool {
        self.ray_lambda.is_some()
    }

    fn free_nodes(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn theta_offset(&self, node: usize) -> usize {
        debug_assert!(node >= 1);
        (node - 1) * self.dim.generator_len()
    }

    pub fn position_offset(&self, node: usize) -> usize {
        debug_assert!(node >= 1);
        self.free_nodes() * self.dim.generator_len() + (node - 1) * self.dim.value()
    }

    fn tail_offset(&self) -> usize {
        self.free_nodes() * (self.dim.generator_len() + self.dim.value())
    }

    pub fn event_offset(&self, event: usize) -> usize {
        self.tail_offset() + event * self.dim.value()
    }

    pub fn psi_offset(&self, node: usize, event: usize) -> usize {
        self.tail_offset() + node * self.n_events + event
    }

    pub fn len(&self) -> usize {
        let tail = if self.is_ray() {
            self.n_nodes * self.n_events
        } else {
            self.n_events * self.dim.value()
        };
        self.tail_offset() + tail
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read(&self, x: &[f64], off: usize) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        for k in 0..self.dim.value() {
            v[k] = x[off + k];
        }
        v
    }

    fn write(&self, x: &mut [f64], off: usize, v: &Vector3<f64>) {
        x[off..off + self.dim.value()].copy_from_slice(&v.as_slice()[..self.dim.value()]);
    }

    fn add(&self, x: &mut [f64], off: usize, v: &Vector3<f64>) {
        for k in 0..self.dim.value() {
            x[off + k] += v[k];
        }
    }

    fn generator(&self, x: &[f64], node: usize) -> Vector3<f64> {
        if node == 0 {
            return Vector3::zeros();
        }
        let off = self.theta_offset(node);
        match self.dim {
            Dim::Two => Vector3::new(0.0, 0.0, x[off]),
            Dim::Three => Vector3::new(x[off], x[off + 1], x[off + 2]),
        }
    }

    fn position(&self, x: &[f64], node: usize) -> Vector3<f64> {
        if node == 0 {
            Vector3::zeros()
        } else {
            self.read(x, self.position_offset(node))
        }
    }

    fn event(&self, x: &[f64], event: usize) -> Vector3<f64> {
        self.read(x, self.event_offset(event))
    }

    fn add_event_grad(&self, g: &mut [f64], event: usize, v: &Vector3<f64>) {
        self.add(g, self.event_offset(event), v);
    }

    fn add_position_grad(&self, g: &mut [f64], node: usize, v: &Vector3<f64>) {
        self.add(g, self.position_offset(node), v);
    }

    fn poses_with_jacobian(&self, x: &[f64]) -> Vec<Pose> {
        (0..self.n_nodes)
            .map(|i| {
                let (rotation, jacobian) = orientation_with_jacobian(&self.generator(x, i), self.dim);
                Pose { rotation, jacobian, position: self.position(x, i) }
            })
            .collect()
    }

    fn psi(&self, x: &[f64], node: usize, event: usize) -> Option<f64> {
        self.ray_lambda.map(|_| x[self.psi_offset(node, event)])
    }

    /// Per-entry lower bounds: `λ` on ray distances, `−∞` elsewhere. `None`
    /// for angular packings, which are unconstrained.
    pub fn lower_bounds(&self) -> Option<Vec<f64>> {
        self.ray_lambda.map(|lambda| {
            let mut lower = vec![f64::NEG_INFINITY; self.len()];
            lower[self.tail_offset()..].iter_mut().for_each(|l| *l = lambda);
            lower
        })
    }
}

/// Flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(invalid(format!(
                "parameter vector has length {}, layout expects {}",
                values.len(),
                layout.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameter vector has non-finite entries"));
        }
        if let Some(lower) = layout.lower_bounds() {
            if values.iter().zip(&lower).any(|(v, l)| v < l) {
                return Err(invalid("ray distance below lambda"));
            }
        }
        Ok(Self { layout, values })
    }

    /// Pack a scene for the given cost. The scene is gauge-fixed first; for
    /// the ray cost the distances come from the scene, raised to `λ` where
    /// shorter.
    pub fn from_scene(scene: &SceneGeometry, model: &CostModel) -> Self {
        let scene = gauge_fix(scene);
        let layout = model.layout(scene.dim(), scene.n_nodes(), scene.n_events());
        let mut x = vec![0.0; layout.len()];
        for (i, node) in scene.nodes().iter().enumerate().skip(1) {
            let off = layout.theta_offset(i);
            match layout.dim {
                Dim::Two => x[off] = node.theta.z,
                Dim::Three => x[off..off + 3].copy_from_slice(node.theta.as_slice()),
            }
            layout.write(&mut x, layout.position_offset(i), &node.position);
        }
        if let Some(lambda) = layout.ray_lambda {
            for i in 0..scene.n_nodes() {
                for j in 0..scene.n_events() {
                    x[layout.psi_offset(i, j)] = scene.distance(i, j).max(lambda);
                }
            }
        } else {
            for (j, event) in scene.events().iter().enumerate() {
                layout.write(&mut x, layout.event_offset(j), event);
            }
        }
        Self { layout, values: x }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        Self { layout: self.layout, values }
    }

    pub fn generator(&self, node: usize) -> Vector3<f64> {
        self.layout.generator(&self.values, node)
    }

    pub fn node_position(&self, node: usize) -> Vector3<f64> {
        self.layout.position(&self.values, node)
    }

    /// Ray distance `ψ_ij`, or `None` for angular packings.
    pub fn psi(&self, node: usize, event: usize) -> Option<f64> {
        self.layout.psi(&self.values, node, event)
    }

    /// All ray distances as an N×S matrix.
    pub fn psi_matrix(&self) -> Option<DMatrix<f64>> {
        let l = &self.layout;
        l.is_ray().then(|| {
            DMatrix::from_fn(l.n_nodes, l.n_events, |i, j| l.psi(&self.values, i, j).unwrap_or_default())
        })
    }

    /// The scene these parameters describe. Ray packings reconstruct events
    /// as the mean of the per-node ray points.
    pub fn to_scene(&self, meas: &MeasurementSet) -> Result<SceneGeometry> {
        let l = &self.layout;
        let nodes = (0..l.n_nodes)
            .map(|i| NodePose::new(self.node_position(i), self.generator(i)))
            .collect();
        let events = (0..l.n_events)
            .map(|j| {
                if l.is_ray() {
                    event_average(self, meas, j)
                } else {
                    Ok(l.event(&self.values, j))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        SceneGeometry::new(l.dim, nodes, events)
    }
}

/// Cosine between the measured DoA and the DoA implied by a node pose and
/// an event position.
pub fn cosine_distance(
    dim: Dim,
    theta: &Vector3<f64>,
    node: &Vector3<f64>,
    event: &Vector3<f64>,
    measured: &Vector3<f64>,
) -> Result<f64> {
    let v = event - node;
    let r = v.norm();
    if r < DEFAULT_MIN_SEPARATION {
        return Err(GeocalError::DegenerateGeometry { node: 0, event: 0, separation: r });
    }
    Ok(measured.dot(&(orientation(theta, dim) * v)) / r)
}

/// Point at distance `psi` from the node along the world-frame ray of the
/// measured DoA: `ψ R(θ)ᵀ d̂ + n`.
pub fn ray_point(
    dim: Dim,
    theta: &Vector3<f64>,
    node: &Vector3<f64>,
    measured: &Vector3<f64>,
    psi: f64,
) -> Result<Vector3<f64>> {
    if !(psi >= 0.0) {
        return Err(invalid(format!("ray distance must be nonnegative, got {psi}")));
    }
    Ok(orientation(theta, dim).transpose() * measured * psi + node)
}

/// Mean over nodes of the ray points of event `j`.
pub fn event_average(params: &ParamVector, meas: &MeasurementSet, j: usize) -> Result<Vector3<f64>> {
    let l = params.layout();
    if !l.is_ray() {
        return Err(invalid("event averaging needs a ray packing"));
    }
    if j >= l.n_events {
        return Err(invalid(format!("event index {j} out of range")));
    }
    let mut sum = Vector3::zeros();
    for i in 0..l.n_nodes {
        let psi = params.psi(i, j).unwrap_or_default();
        sum += ray_point(l.dim, &params.generator(i), &params.node_position(i), meas.doa(i, j), psi)?;
    }
    Ok(sum / l.n_nodes as f64)
}

fn evaluate_kind(kind: CostKind, lambda: f64, params: &ParamVector, meas: &MeasurementSet) -> Result<CostEval> {
    CostModel::with_lambda(kind, lambda)?.evaluate(params, meas)
}

fn packing_lambda(params: &ParamVector) -> f64 {
    params.layout.ray_lambda.unwrap_or(DEFAULT_LAMBDA)
}

pub fn cost_vmf_ml(params: &ParamVector, meas: &MeasurementSet) -> Result<CostEval> {
    evaluate_kind(CostKind::VmfMl, DEFAULT_LAMBDA, params, meas)
}

pub fn cost_schmalen11(params: &ParamVector, meas: &MeasurementSet) -> Result<CostEval> {
    evaluate_kind(CostKind::Schmalen11, DEFAULT_LAMBDA, params, meas)
}

pub fn cost_jacob12(params: &ParamVector, meas: &MeasurementSet) -> Result<CostEval> {
    evaluate_kind(CostKind::Jacob12, DEFAULT_LAMBDA, params, meas)
}

pub fn cost_jacob13(params: &ParamVector, meas: &MeasurementSet) -> Result<CostEval> {
    evaluate_kind(CostKind::Jacob13, DEFAULT_LAMBDA, params, meas)
}

pub fn cost_wozniak19(params: &ParamVector, meas: &MeasurementSet) -> Result<CostEval> {
    evaluate_kind(CostKind::Wozniak19, DEFAULT_LAMBDA, params, meas)
}

/// Ray cost; `lambda` must match the one the parameters were packed with.
pub fn cost_ray(params: &ParamVector, meas: &MeasurementSet, lambda: f64) -> Result<CostEval> {
    evaluate_kind(CostKind::RayLs, lambda, params, meas)
}

pub fn gradient(kind: CostKind, params: &ParamVector, meas: &MeasurementSet) -> Result<Vec<f64>> {
    Ok(evaluate_kind(kind, packing_lambda(params), params, meas)?.gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::doa_vector;
    use crate::synth::{sample_scene, synthesize, RoomSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    const ANGULAR: [CostKind; 5] = [
        CostKind::VmfMl,
        CostKind::Schmalen11,
        CostKind::Jacob12,
        CostKind::Jacob13,
        CostKind::Wozniak19,
    ];

    fn problem(seed: u64, n: usize, s: usize, sigma: f64) -> (SceneGeometry, MeasurementSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = sample_scene(&RoomSpec::default(), n, s, &mut rng).unwrap();
        let meas = synthesize(&scene, sigma, 0.0, &mut rng).unwrap();
        (scene, meas)
    }

    /// Parameters near the truth, perturbed so every cost is away from zero.
    fn perturbed(scene: &SceneGeometry, model: &CostModel, seed: u64, scale: f64) -> ParamVector {
        let p = ParamVector::from_scene(scene, model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = p.values().iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
        p.with_values(values)
    }

    /// Straightforward double loop over the scene, independent of the packing.
    fn naive_angular(kind: CostKind, scene: &SceneGeometry, meas: &MeasurementSet) -> f64 {
        let mut total = 0.0;
        for i in 0..scene.n_nodes() {
            for j in 0..scene.n_events() {
                let d = doa_vector(scene, i, j).unwrap();
                let cos = d.dot(meas.doa(i, j));
                let psi = scene.distance(i, j);
                total += match kind {
                    CostKind::VmfMl => 1.0 - cos,
                    CostKind::Schmalen11 => psi * psi * (1.0 - cos * cos),
                    CostKind::Jacob12 => psi * psi * (1.0 - cos).powi(2),
                    CostKind::Jacob13 => psi * (1.0 - cos),
                    CostKind::Wozniak19 => (1.0 - cos) / 2.0,
                    CostKind::RayLs => unreachable!(),
                };
            }
        }
        total
    }

    /// The expanded form of the ray cost, written out term by term.
    fn naive_ray_expanded(params: &ParamVector, meas: &MeasurementSet) -> f64 {
        let l = params.layout();
        let (n, s) = (l.n_nodes(), l.n_events());
        let rot = |i: usize| orientation(&params.generator(i), l.dim());
        let mut total = 0.0;
        for j in 0..s {
            let mean_dir: Vector3<f64> = (0..n)
                .map(|k| rot(k).transpose() * meas.doa(k, j) * params.psi(k, j).unwrap())
                .sum::<Vector3<f64>>()
                / n as f64;
            let mean_pos: Vector3<f64> = (0..n).map(|k| params.node_position(k)).sum::<Vector3<f64>>() / n as f64;
            for i in 0..n {
                let a = rot(i).transpose() * meas.doa(i, j) * params.psi(i, j).unwrap() - mean_dir;
                let b = params.node_position(i) - mean_pos;
                total += (a + b).norm_squared();
            }
        }
        total
    }

    fn central_difference(model: &CostModel, p: &ParamVector, meas: &MeasurementSet) -> Vec<f64> {
        let h = 1e-6;
        (0..p.values().len())
            .map(|k| {
                let mut plus = p.values().to_vec();
                let mut minus = p.values().to_vec();
                plus[k] += h;
                minus[k] -= h;
                let fp = model.evaluate(&p.with_values(plus), meas).unwrap().value;
                let fm = model.evaluate(&p.with_values(minus), meas).unwrap().value;
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn cost_kind_names_round_trip() {
        for k in CostKind::ALL {
            assert_eq!(k.name().parse::<CostKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("ransac".parse::<CostKind>().is_err());
    }

    #[test]
    fn cosine_distance_examples() {
        let h = FRAC_1_SQRT_2;
        let theta = Vector3::new(0.0, 0.0, FRAC_PI_2);
        let j = cosine_distance(Dim::Two, &theta, &Vector3::zeros(), &Vector3::new(1.0, 1.0, 0.0), &Vector3::x()).unwrap();
        assert_relative_eq!(j, h, epsilon = 1e-15);
        let truth = Vector3::new(h, -h, 0.0);
        let j = cosine_distance(Dim::Two, &theta, &Vector3::zeros(), &Vector3::new(1.0, 1.0, 0.0), &truth).unwrap();
        assert_relative_eq!(j, 1.0, epsilon = 1e-12);
        let ortho = Vector3::new(h, h, 0.0);
        let j = cosine_distance(Dim::Two, &theta, &Vector3::zeros(), &Vector3::new(1.0, 1.0, 0.0), &ortho).unwrap();
        assert_relative_eq!(j, 0.0, epsilon = 1e-12);
        assert!(cosine_distance(Dim::Two, &theta, &Vector3::zeros(), &Vector3::zeros(), &ortho).is_err());
    }

    #[test]
    fn ray_point_examples() {
        let p = ray_point(Dim::Two, &Vector3::zeros(), &Vector3::zeros(), &Vector3::x(), 2.0).unwrap();
        assert_eq!(p, Vector3::new(2.0, 0.0, 0.0));
        let n = Vector3::new(1.0, 1.0, 0.0);
        assert_eq!(ray_point(Dim::Two, &Vector3::new(0.0, 0.0, 0.7), &n, &Vector3::y(), 0.0).unwrap(), n);
        // matrix oracle: rows of R(π/2) are (0, 1) and (−1, 0), so Rᵀ e₁ = (0, 1)
        let theta = Vector3::new(0.0, 0.0, FRAC_PI_2);
        let r = nalgebra::Matrix2::new(0.0, 1.0, -1.0, 0.0);
        let expected = r.transpose() * nalgebra::Vector2::new(1.0, 0.0) + nalgebra::Vector2::new(1.0, 1.0);
        let p = ray_point(Dim::Two, &theta, &n, &Vector3::x(), 1.0).unwrap();
        assert_relative_eq!(p, Vector3::new(expected.x, expected.y, 0.0), epsilon = 1e-15);
        assert!(ray_point(Dim::Two, &theta, &n, &Vector3::x(), -1.0).is_err());
    }

    fn planar_two_node(doa: [[f64; 2]; 2], times: [f64; 2]) -> MeasurementSet {
        let rows = doa.iter().map(|d| vec![Vector3::new(d[0], d[1], 0.0)]).collect();
        MeasurementSet::new(Dim::Two, rows, DMatrix::from_column_slice(2, 1, &times), 343.0).unwrap()
    }

    #[test]
    fn two_point_ray_spread() {
        // node 0 at origin, node 1 at (2, 0); both look along +y with ψ = 1
        let model = CostModel::with_lambda(CostKind::RayLs, 0.5).unwrap();
        let meas = planar_two_node([[0.0, 1.0], [0.0, 1.0]], [0.0, 0.0]);
        let layout = model.layout(Dim::Two, 2, 1);
        let mut x = vec![0.0; layout.len()];
        x[layout.position_offset(1)] = 2.0;
        x[layout.psi_offset(0, 0)] = 1.0;
        x[layout.psi_offset(1, 0)] = 1.0;
        let p = ParamVector::new(layout, x).unwrap();
        // points (0, 1) and (2, 1), mean (1, 1)
        assert_relative_eq!(event_average(&p, &meas, 0).unwrap(), Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(cost_ray(&p, &meas, 0.5).unwrap().value, 2.0, epsilon = 1e-12);
        assert!(cost_ray(&p, &meas, 0.1).is_err());
        let mut short = p.values().to_vec();
        short[layout.psi_offset(0, 0)] = 0.4;
        assert!(ParamVector::new(layout, short).is_err());
    }

    #[test]
    fn antipodal_node_contributes_two() {
        // single event on the x axis; node 1 rotated by π sees it behind itself
        let meas = planar_two_node([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0]);
        let truth = SceneGeometry::from_slices(2, &[(&[0.0, 0.0], &[0.0]), (&[-3.0, 0.0], &[PI])], &[&[4.0, 0.0]]).unwrap();
        let flipped = SceneGeometry::from_slices(2, &[(&[0.0, 0.0], &[0.0]), (&[-3.0, 0.0], &[0.0])], &[&[4.0, 0.0]]).unwrap();
        let model = CostModel::new(CostKind::VmfMl);
        let at_truth = model.evaluate(&ParamVector::from_scene(&truth, &model), &meas).unwrap().value;
        let at_flip = model.evaluate(&ParamVector::from_scene(&flipped, &model), &meas).unwrap().value;
        assert_relative_eq!(at_truth, 0.0, epsilon = 1e-12);
        assert_relative_eq!(at_flip, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn all_costs_vanish_at_noiseless_truth() {
        for (seed, n, s) in [(1, 3, 4), (2, 5, 10), (3, 7, 20)] {
            let (scene, meas) = problem(seed, n, s, 0.0);
            for kind in CostKind::ALL {
                let model = CostModel::new(kind);
                let e = model.evaluate(&ParamVector::from_scene(&scene, &model), &meas).unwrap();
                assert!(e.value.abs() < 1e-9, "{kind}: {}", e.value);
                assert!(e.value >= -1e-12);
            }
        }
    }

    #[test]
    fn ray_gradient_vanishes_at_noiseless_truth() {
        let (scene, meas) = problem(4, 5, 10, 0.0);
        let model = CostModel::new(CostKind::RayLs);
        let e = model.evaluate(&ParamVector::from_scene(&scene, &model), &meas).unwrap();
        let norm = e.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn angular_costs_match_naive_double_loop() {
        for seed in 0..10 {
            let (scene, meas) = problem(100 + seed, 3, 4, 0.05);
            for kind in ANGULAR {
                let model = CostModel::new(kind);
                let p = perturbed(&scene, &model, seed, 0.3);
                let est = p.to_scene(&meas).unwrap();
                let value = model.evaluate(&p, &meas).unwrap().value;
                assert_relative_eq!(value, naive_angular(kind, &est, &meas), epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn ray_cost_matches_expanded_form() {
        for seed in 0..10 {
            let (scene, meas) = problem(200 + seed, 4, 6, 0.05);
            let model = CostModel::new(CostKind::RayLs);
            let p = perturbed(&scene, &model, seed, 0.5);
            let value = model.evaluate(&p, &meas).unwrap().value;
            assert_relative_eq!(value, naive_ray_expanded(&p, &meas), epsilon = 1e-12, max_relative = 1e-12);
            // compact form: spread around the event average
            let compact: f64 = (0..6)
                .map(|j| {
                    let mean = event_average(&p, &meas, j).unwrap();
                    (0..4)
                        .map(|i| {
                            let q = ray_point(Dim::Three, &p.generator(i), &p.node_position(i), meas.doa(i, j), p.psi(i, j).unwrap()).unwrap();
                            (q - mean).norm_squared()
                        })
                        .sum::<f64>()
                })
                .sum();
            assert_relative_eq!(value, compact, max_relative = 1e-12);
        }
    }

    #[test]
    fn event_average_of_concurrent_rays_is_the_event() {
        let (scene, meas) = problem(5, 4, 3, 0.0);
        let model = CostModel::new(CostKind::RayLs);
        let p = ParamVector::from_scene(&scene, &model);
        let fixed = gauge_fix(&scene);
        for j in 0..3 {
            assert_relative_eq!(event_average(&p, &meas, j).unwrap(), fixed.events()[j], epsilon = 1e-12);
        }
        let angular = ParamVector::from_scene(&scene, &CostModel::new(CostKind::VmfMl));
        assert!(event_average(&angular, &meas, 0).is_err());
    }

    #[test]
    fn wozniak_is_half_vmf_everywhere() {
        for seed in 0..20 {
            let (scene, meas) = problem(300 + seed, 4, 5, 0.1);
            let vmf = CostModel::new(CostKind::VmfMl);
            let p = perturbed(&scene, &vmf, seed, 1.0);
            let a = cost_vmf_ml(&p, &meas).unwrap();
            let b = cost_wozniak19(&p, &meas).unwrap();
            assert_eq!(b.value, a.value / 2.0);
            for (ga, gb) in a.gradient.iter().zip(&b.gradient) {
                assert_eq!(*gb, ga / 2.0);
            }
        }
    }

    #[test]
    fn schmalen_invariant_to_half_turns() {
        let room = RoomSpec::new(&[10.0, 10.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scene = sample_scene(&room, 4, 6, &mut rng).unwrap();
        let meas = synthesize(&scene, 0.1, 0.0, &mut rng).unwrap();
        let model = CostModel::new(CostKind::Schmalen11);
        let p = perturbed(&scene, &model, 1, 0.5);
        let base = cost_schmalen11(&p, &meas).unwrap().value;
        for node in 1..4 {
            let mut x = p.values().to_vec();
            x[p.layout().theta_offset(node)] += PI;
            let turned = cost_schmalen11(&p.with_values(x), &meas).unwrap().value;
            assert_relative_eq!(turned, base, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn squared_sine_identity() {
        let (scene, meas) = problem(11, 4, 5, 0.2);
        for i in 0..4 {
            for j in 0..5 {
                let d = doa_vector(&scene, i, j).unwrap();
                let m = meas.doa(i, j);
                let cos = d.dot(m);
                let angle = d.cross(m).norm().atan2(cos);
                let psi = scene.distance(i, j);
                assert_relative_eq!(psi * psi * (1.0 - cos * cos), (psi * angle.sin()).powi(2), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn scaling_scene_scales_ray_cost_quadratically() {
        let (scene, meas) = problem(12, 4, 5, 0.05);
        let model = CostModel::with_lambda(CostKind::RayLs, 0.01).unwrap();
        let base = ParamVector::from_scene(&scene, &model);
        let base_cost = model.evaluate(&base, &meas).unwrap().value;
        for gamma in [0.5, 2.0, 3.7] {
            let scaled = scene.map_positions(|p| p * gamma);
            let p = ParamVector::from_scene(&scaled, &model);
            let cost = model.evaluate(&p, &meas).unwrap().value;
            // truth is exact only up to noise, so the cost is nonzero and scales with γ²
            assert!(base_cost > 1e-6);
            assert_relative_eq!(cost, gamma * gamma * base_cost, max_relative = 1e-9);
            let fixed = gauge_fix(&scene);
            let fixed_scaled = gauge_fix(&scaled);
            for i in 0..4 {
                for j in 0..5 {
                    assert_relative_eq!(
                        doa_vector(&fixed, i, j).unwrap(),
                        doa_vector(&fixed_scaled, i, j).unwrap(),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn distance_weighted_costs_collapse_with_scale() {
        let (scene, meas) = problem(13, 4, 5, 0.05);
        for (kind, power) in [(CostKind::Schmalen11, 2), (CostKind::Jacob12, 2), (CostKind::Jacob13, 1)] {
            let model = CostModel::new(kind);
            let base = model.evaluate(&ParamVector::from_scene(&scene, &model), &meas).unwrap().value;
            for gamma in [0.1, 0.01] {
                let shrunk = scene.map_positions(|p| p * gamma);
                let v = model.evaluate(&ParamVector::from_scene(&shrunk, &model), &meas).unwrap().value;
                assert_relative_eq!(v, base * gamma.powi(power), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_pairs_are_penalized_not_nan() {
        let (scene, meas) = problem(14, 3, 2, 0.0);
        let model = CostModel::new(CostKind::VmfMl);
        let mut p = ParamVector::from_scene(&scene, &model).into_values();
        let layout = model.layout(Dim::Three, 3, 2);
        // put event 0 on node 0
        p[layout.event_offset(0)..layout.event_offset(0) + 3].copy_from_slice(&[0.0, 0.0, 0.0]);
        let e = model.evaluate(&ParamVector::new(layout, p).unwrap(), &meas).unwrap();
        assert!(e.value >= DEGENERATE_PENALTY);
        assert!(e.value.is_finite() && e.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn packing_round_trips() {
        let (scene, meas) = problem(15, 4, 3, 0.0);
        for kind in [CostKind::VmfMl, CostKind::RayLs] {
            let model = CostModel::new(kind);
            let p = ParamVector::from_scene(&scene, &model);
            assert_eq!(p.values().len(), p.layout().len());
            let back = p.to_scene(&meas).unwrap();
            let fixed = gauge_fix(&scene);
            for (a, b) in back.nodes().iter().zip(fixed.nodes()) {
                assert_relative_eq!(a.position, b.position, epsilon = 1e-12);
                assert_relative_eq!(a.theta, b.theta, epsilon = 1e-12);
            }
            for (a, b) in back.events().iter().zip(fixed.events()) {
                assert_relative_eq!(a, b, epsilon = 1e-9);
            }
            for (a, b) in ParamVector::from_scene(&back, &model).values().iter().zip(p.values()) {
                assert_relative_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5u64 {
            for dims in [vec![10.0, 10.0, 3.0], vec![10.0, 10.0]] {
                let room = RoomSpec::new(&dims).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
                let scene = sample_scene(&room, 4, 5, &mut rng).unwrap();
                let meas = synthesize(&scene, 0.1, 0.0, &mut rng).unwrap();
                for kind in CostKind::ALL {
                    let model = CostModel::new(kind);
                    let p = perturbed(&scene, &model, seed, 0.3);
                    let analytic = model.evaluate(&p, &meas).unwrap().gradient;
                    let fd = central_difference(&model, &p, &meas);
                    let scale = analytic.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
                    for (k, (a, f)) in analytic.iter().zip(&fd).enumerate() {
                        let err = (a - f).abs() / a.abs().max(f.abs()).max(1e-3 * scale);
                        assert!(err < 1e-5, "{kind} D={} component {k}: analytic {a}, fd {f}", dims.len());
                    }
                }
            }
        }
    }
}
