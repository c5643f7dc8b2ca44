//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use geocal::estimators::CostModel;
use geocal::geometry::{doa_vector, rotation_matrix};
use geocal::synth::{sample_scene, synthesize};
use geocal::{CostKind, Dim, MeasurementSet, NodePose, ParamVector, RoomSpec, SceneGeometry};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn room(dim: Dim) -> RoomSpec {
    match dim {
        Dim::Two => RoomSpec::new(&[10.0, 10.0]).unwrap(),
        Dim::Three => RoomSpec::default(),
    }
}

pub fn problem(seed: u64, dim: Dim, n: usize, s: usize, sigma: f64) -> (SceneGeometry, MeasurementSet) {
    let mut r = rng(seed);
    let scene = sample_scene(&room(dim), n, s, &mut r).unwrap();
    let meas = synthesize(&scene, sigma, 0.0, &mut r).unwrap();
    (scene, meas)
}

pub fn random_generator(dim: Dim, r: &mut ChaCha8Rng) -> Vec<f64> {
    match dim {
        Dim::Two => vec![r.random_range(-3.0..3.0)],
        Dim::Three => (0..3).map(|_| r.random_range(-1.8..1.8)).collect(),
    }
}

/// Parameters of `scene` with every entry jittered by up to `scale`; ray
/// distances stay feasible.
pub fn jittered(scene: &SceneGeometry, model: &CostModel, r: &mut ChaCha8Rng, scale: f64) -> ParamVector {
    let p = ParamVector::from_scene(scene, model);
    let lower = p.layout().lower_bounds();
    let values = p
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let x = v + scale * r.random_range(-1.0..1.0);
            lower.as_ref().map_or(x, |l| x.max(l[k]))
        })
        .collect();
    ParamVector::new(*p.layout(), values).unwrap()
}

/// Largest relative disagreement between the analytic gradient and central
/// differences with step 1e-6, ignoring components below 1e-3 of the
/// largest one.
pub fn gradient_error(model: &CostModel, p: &ParamVector, meas: &MeasurementSet) -> f64 {
    let analytic = model.evaluate(p, meas).unwrap().gradient;
    let h = 1e-6;
    let scale = analytic.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0_f64;
    for k in 0..analytic.len() {
        let mut plus = p.values().to_vec();
        let mut minus = p.values().to_vec();
        plus[k] += h;
        minus[k] -= h;
        // steps that cross a ray bound are skipped
        let f = |v: Vec<f64>| {
            ParamVector::new(*p.layout(), v)
                .map(|q| model.evaluate(&q, meas).unwrap().value)
                .unwrap_or(f64::NAN)
        };
        let (fp, fm) = (f(plus), f(minus));
        if fp.is_nan() || fm.is_nan() {
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic[k];
        if a.abs().max(fd.abs()) < 1e-3 * scale {
            continue;
        }
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()));
    }
    worst
}

/// Per-pair cost terms summed in a plain double loop over the scene.
pub fn naive_angular_cost(kind: CostKind, scene: &SceneGeometry, meas: &MeasurementSet) -> f64 {
    let mut total = 0.0;
    for i in 0..scene.n_nodes() {
        for j in 0..scene.n_events() {
            let cos = doa_vector(scene, i, j).unwrap().dot(meas.doa(i, j));
            let psi = scene.distance(i, j);
            total += match kind {
                CostKind::VmfMl => 1.0 - cos,
                CostKind::Schmalen11 => psi * psi * (1.0 - cos * cos),
                CostKind::Jacob12 => psi * psi * (1.0 - cos) * (1.0 - cos),
                CostKind::Jacob13 => psi * (1.0 - cos),
                CostKind::Wozniak19 => 0.5 * (1.0 - cos),
                CostKind::RayLs => panic!("not an angular cost"),
            };
        }
    }
    total
}

/// Applies `x ↦ Rᵀx + t` to the whole scene and rotates every node frame
/// with it, so all DoAs are unchanged.
pub fn move_rigidly(scene: &SceneGeometry, r: &mut ChaCha8Rng) -> SceneGeometry {
    let dim = scene.dim();
    let rot = rotation_matrix(&random_generator(dim, r), dim.value()).unwrap();
    let m: Matrix3<f64> = *rot.matrix();
    let mut t = Vector3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
    if dim == Dim::Two {
        t.z = 0.0;
    }
    let nodes = scene
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| NodePose::new(m.transpose() * n.position + t, (scene.rotation(i) * rot).generator()))
        .collect();
    let events = scene.events().iter().map(|e| m.transpose() * e + t).collect();
    SceneGeometry::new(dim, nodes, events).unwrap()
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value of `√n·D` at α = 0.01.
pub const KS_CRITICAL_001: f64 = 1.628;

/// Spearman rank correlation; ties get their average rank.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut k = 0;
        while k < idx.len() {
            let mut end = k;
            while end + 1 < idx.len() && v[idx[end + 1]] == v[idx[k]] {
                end += 1;
            }
            let avg = (k + end) as f64 / 2.0 + 1.0;
            for &i in &idx[k..=end] {
                r[i] = avg;
            }
            k = end + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Residual of the arrival-time model at a fixed scale, onsets solved per event.
pub fn scale_residual(scene: &SceneGeometry, times: &nalgebra::DMatrix<f64>, c: f64, gamma: f64) -> f64 {
    let n = scene.n_nodes();
    (0..scene.n_events())
        .map(|j| {
            let pred: Vec<f64> = (0..n).map(|i| gamma * scene.distance(i, j) / c).collect();
            let onset = (0..n).map(|i| times[(i, j)] - pred[i]).sum::<f64>() / n as f64;
            (0..n).map(|i| (times[(i, j)] - onset - pred[i]).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Dense scan of `scale_residual` followed by golden-section polishing.
pub fn scan_scale(scene: &SceneGeometry, times: &nalgebra::DMatrix<f64>, c: f64, lo: f64, hi: f64) -> f64 {
    let steps = 2000;
    let grid: Vec<f64> = (0..=steps).map(|k| lo * (hi / lo).powf(k as f64 / steps as f64)).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| scale_residual(scene, times, c, grid[a]).total_cmp(&scale_residual(scene, times, c, grid[b])))
        .unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(steps)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x = b - g * (b - a);
        let y = a + g * (b - a);
        if scale_residual(scene, times, c, x) < scale_residual(scene, times, c, y) {
            b = y;
        } else {
            a = x;
        }
    }
    0.5 * (a + b)
}
