//! Random scenes and noisy DoA / arrival-time measurements for Monte-Carlo runs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeocalError, Result};
use crate::geometry::{doa_vector, Dim, NodePose, SceneGeometry, VmfParams};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Minimum node-node and node-event separation of sampled scenes (meters).
pub const DEFAULT_SCENE_SEPARATION: f64 = 0.5;

const MAX_SCENE_ATTEMPTS: usize = 10_000;

/// Axis-aligned room `[0, e_1] × … × [0, e_D]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RoomWire", into = "RoomWire")]
pub struct RoomSpec {
    dim: Dim,
    extents: Vector3<f64>,
    min_separation: f64,
}

impl RoomSpec {
    pub fn new(extents: &[f64]) -> Result<Self> {
        let dim = Dim::try_from(extents.len()).map_err(invalid)?;
        if extents.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(invalid(format!("room extents must be positive, got {extents:?}")));
        }
        Ok(Self {
            dim,
            extents: dim.embed(extents)?,
            min_separation: DEFAULT_SCENE_SEPARATION,
        })
    }

    pub fn with_min_separation(mut self, min_separation: f64) -> Result<Self> {
        if !(min_separation >= 0.0) {
            return Err(invalid("minimum separation must be nonnegative"));
        }
        self.min_separation = min_separation;
        Ok(self)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn extents(&self) -> &Vector3<f64> {
        &self.extents
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    pub(crate) fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let mut p = Vector3::zeros();
        for k in 0..self.dim.value() {
            p[k] = rng.random::<f64>() * self.extents[k];
        }
        p
    }
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self::new(&[10.0, 10.0, 3.0]).expect("default room is valid")
    }
}

#[derive(Serialize, Deserialize)]
struct RoomWire {
    extents: Vec<f64>,
    #[serde(default = "default_separation")]
    min_separation: f64,
}

fn default_separation() -> f64 {
    DEFAULT_SCENE_SEPARATION
}

impl TryFrom<RoomWire> for RoomSpec {
    type Error = GeocalError;

    fn try_from(w: RoomWire) -> Result<Self> {
        RoomSpec::new(&w.extents)?.with_min_separation(w.min_separation)
    }
}

impl From<RoomSpec> for RoomWire {
    fn from(r: RoomSpec) -> Self {
        RoomWire {
            extents: r.dim.truncate(&r.extents),
            min_separation: r.min_separation,
        }
    }
}

/// Measured DoAs (node frame) and arrival times for every (node, event) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasurementWire", into = "MeasurementWire")]
pub struct MeasurementSet {
    dim: Dim,
    n_nodes: usize,
    n_events: usize,
    /// Row-major N×S.
    doa: Vec<Vector3<f64>>,
    arrival_times: DMatrix<f64>,
    pub speed_of_sound: f64,
    pub sigma_doa: f64,
    pub sigma_tdoa: f64,
    pub seed: u64,
}

impl MeasurementSet {
    /// Build from per-node lists of unit DoA vectors and an N×S arrival time matrix.
    pub fn new(
        dim: Dim,
        doa: Vec<Vec<Vector3<f64>>>,
        arrival_times: DMatrix<f64>,
        speed_of_sound: f64,
    ) -> Result<Self> {
        let n_nodes = doa.len();
        let n_events = doa.first().map_or(0, Vec::len);
        if n_nodes < 2 || n_events < 1 {
            return Err(invalid(format!("need at least 2 nodes and 1 event, got {n_nodes}×{n_events}")));
        }
        if doa.iter().any(|row| row.len() != n_events) {
            return Err(invalid("DoA rows have unequal lengths"));
        }
        if arrival_times.shape() != (n_nodes, n_events) {
            return Err(invalid(format!(
                "arrival times are {:?}, expected ({n_nodes}, {n_events})",
                arrival_times.shape()
            )));
        }
        if arrival_times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("arrival times must be finite"));
        }
        if !(speed_of_sound > 0.0) {
            return Err(invalid("speed of sound must be positive"));
        }
        let doa: Vec<Vector3<f64>> = doa.into_iter().flatten().collect();
        for (k, d) in doa.iter().enumerate() {
            if (d.norm() - 1.0).abs() > 1e-12 || (dim == Dim::Two && d.z != 0.0) {
                return Err(invalid(format!(
                    "DoA ({}, {}) is not a unit vector of the scene dimension",
                    k / n_events,
                    k % n_events
                )));
            }
        }
        Ok(Self {
            dim,
            n_nodes,
            n_events,
            doa,
            arrival_times,
            speed_of_sound,
            sigma_doa: 0.0,
            sigma_tdoa: 0.0,
            seed: 0,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn doa(&self, i: usize, j: usize) -> &Vector3<f64> {
        &self.doa[i * self.n_events + j]
    }

    pub fn arrival_times(&self) -> &DMatrix<f64> {
        &self.arrival_times
    }
}

#[derive(Serialize, Deserialize)]
struct MeasurementWire {
    dim: usize,
    doa: Vec<Vec<Vec<f64>>>,
    arrival_times: Vec<Vec<f64>>,
    speed_of_sound: f64,
    sigma_doa: f64,
    sigma_tdoa: f64,
    seed: u64,
}

impl TryFrom<MeasurementWire> for MeasurementSet {
    type Error = GeocalError;

    fn try_from(w: MeasurementWire) -> Result<Self> {
        let dim = Dim::try_from(w.dim).map_err(invalid)?;
        let doa = w
            .doa
            .iter()
            .map(|row| row.iter().map(|d| dim.embed(d)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let n = w.arrival_times.len();
        let s = w.arrival_times.first().map_or(0, Vec::len);
        if w.arrival_times.iter().any(|r| r.len() != s) {
            return Err(invalid("arrival time rows have unequal lengths"));
        }
        let times = DMatrix::from_fn(n, s, |i, j| w.arrival_times[i][j]);
        let mut m = MeasurementSet::new(dim, doa, times, w.speed_of_sound)?;
        m.sigma_doa = w.sigma_doa;
        m.sigma_tdoa = w.sigma_tdoa;
        m.seed = w.seed;
        Ok(m)
    }
}

impl From<MeasurementSet> for MeasurementWire {
    fn from(m: MeasurementSet) -> Self {
        let d = m.dim;
        MeasurementWire {
            dim: d.value(),
            doa: m
                .doa
                .chunks(m.n_events)
                .map(|row| row.iter().map(|v| d.truncate(v)).collect())
                .collect(),
            arrival_times: (0..m.n_nodes)
                .map(|i| m.arrival_times.row(i).iter().copied().collect())
                .collect(),
            speed_of_sound: m.speed_of_sound,
            sigma_doa: m.sigma_doa,
            sigma_tdoa: m.sigma_tdoa,
            seed: m.seed,
        }
    }
}

/// Concentration used for a DoA standard deviation `sigma` (radians).
pub fn kappa_for_sigma(sigma: f64) -> f64 {
    1.0 / (sigma * sigma)
}

/// Uniformly distributed rotation generator.
pub(crate) fn sample_generator<R: Rng + ?Sized>(dim: Dim, rng: &mut R) -> Vector3<f64> {
    match dim {
        Dim::Two => Vector3::new(0.0, 0.0, rng.random_range(-PI..PI)),
        Dim::Three => {
            // Shoemake's uniform unit quaternion
            let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
            let xyz = Vector3::new(a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos(), b * (2.0 * PI * u3).sin());
            let mut w = b * (2.0 * PI * u3).cos();
            let mut xyz = xyz;
            if w < 0.0 {
                w = -w;
                xyz = -xyz;
            }
            let s = xyz.norm();
            if s == 0.0 {
                return Vector3::zeros();
            }
            xyz * (2.0 * s.atan2(w) / s)
        }
    }
}

/// Scene with positions uniform in the room and orientations uniform on SO(D),
/// resampled until all node-node and node-event separations reach the room's
/// minimum separation.
pub fn sample_scene<R: Rng + ?Sized>(
    room: &RoomSpec,
    n_nodes: usize,
    n_events: usize,
    rng: &mut R,
) -> Result<SceneGeometry> {
    if n_nodes < 2 {
        return Err(invalid(format!("need at least 2 nodes, got {n_nodes}")));
    }
    if n_events < 1 {
        return Err(invalid("need at least 1 event"));
    }
    let min_sep = room.min_separation;
    for _ in 0..MAX_SCENE_ATTEMPTS {
        let nodes: Vec<NodePose> = (0..n_nodes)
            .map(|_| NodePose::new(room.sample_point(rng), sample_generator(room.dim, rng)))
            .collect();
        let events: Vec<Vector3<f64>> = (0..n_events).map(|_| room.sample_point(rng)).collect();
        let spaced = nodes.iter().enumerate().all(|(i, a)| {
            nodes[i + 1..]
                .iter()
                .all(|b| (a.position - b.position).norm() >= min_sep)
                && events.iter().all(|e| (a.position - e).norm() >= min_sep)
        });
        if spaced {
            return SceneGeometry::new(room.dim, nodes, events);
        }
    }
    Err(GeocalError::InfeasibleRoom { attempts: MAX_SCENE_ATTEMPTS })
}

/// Orthonormal pair spanning the plane orthogonal to a unit vector.
fn tangent_basis(mean: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if mean.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - mean * mean.dot(&helper)).normalize();
    let e2 = mean.cross(&e1);
    (e1, e2)
}

/// Draw one unit vector from a von Mises–Fisher distribution.
///
/// D = 3 inverts the CDF of `w = meanᵀx` exactly; D = 2 uses Best–Fisher
/// rejection, switching to the wrapped-normal limit for κ > 1e6 where the
/// rejection constants lose precision.
pub fn sample_vmf<R: Rng + ?Sized>(params: &VmfParams, rng: &mut R) -> Vector3<f64> {
    let kappa = params.kappa();
    let mean = params.mean();
    match params.dim() {
        Dim::Three => {
            let u = 1.0 - rng.random::<f64>(); // (0, 1]
            let one_minus_w = if kappa < 1e-12 {
                2.0 * (1.0 - u)
            } else {
                -(u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa
            }
            .clamp(0.0, 2.0);
            let w = 1.0 - one_minus_w;
            let radial = (one_minus_w * (2.0 - one_minus_w)).sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            let (e1, e2) = tangent_basis(mean);
            (mean * w + (e1 * phi.cos() + e2 * phi.sin()) * radial).normalize()
        }
        Dim::Two => {
            let angle = sample_von_mises_angle(kappa, rng);
            let perp = Vector3::new(-mean.y, mean.x, 0.0);
            let x = mean * angle.cos() + perp * angle.sin();
            Vector3::new(x.x, x.y, 0.0).normalize()
        }
    }
}

fn sample_von_mises_angle<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    if kappa < 1e-12 {
        return rng.random_range(-PI..PI);
    }
    if kappa > 1e6 {
        let z: f64 = rng.sample(StandardNormal);
        return z / kappa.sqrt();
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = 1.0 - rng.random::<f64>();
        let u3: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let angle = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { angle } else { -angle };
        }
    }
}

/// Noisy measurements of a scene.
///
/// Each measured DoA is drawn from a vMF centered on the true DoA with
/// `κ = 1/σ²`. Events are emitted at times uniform in `[0, 1]` s and arrival
/// times carry additive Gaussian noise of standard deviation `sigma_tdoa`.
/// Zero sigmas give exact measurements.
pub fn synthesize<R: Rng + ?Sized>(
    scene: &SceneGeometry,
    sigma_doa: f64,
    sigma_tdoa: f64,
    rng: &mut R,
) -> Result<MeasurementSet> {
    if !(sigma_doa >= 0.0 && sigma_tdoa >= 0.0) {
        return Err(invalid("noise levels must be nonnegative"));
    }
    let (n, s) = (scene.n_nodes(), scene.n_events());
    let emission: Vec<f64> = (0..s).map(|_| rng.random::<f64>()).collect();

    let mut doa = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(s);
        for j in 0..s {
            let truth = doa_vector(scene, i, j)?;
            row.push(if sigma_doa == 0.0 {
                truth
            } else {
                let params = VmfParams::new(scene.dim(), kappa_for_sigma(sigma_doa), truth)?;
                sample_vmf(&params, rng)
            });
        }
        doa.push(row);
    }

    let mut times = DMatrix::zeros(n, s);
    for i in 0..n {
        for j in 0..s {
            let mut t = emission[j] + scene.distance(i, j) / SPEED_OF_SOUND;
            if sigma_tdoa > 0.0 {
                t += sigma_tdoa * rng.sample::<f64, _>(StandardNormal);
            }
            times[(i, j)] = t;
        }
    }

    let mut set = MeasurementSet::new(scene.dim(), doa, times, SPEED_OF_SOUND)?;
    set.sigma_doa = sigma_doa;
    set.sigma_tdoa = sigma_tdoa;
    Ok(set)
}
