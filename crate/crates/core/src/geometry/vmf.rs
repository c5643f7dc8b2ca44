//! von Mises–Fisher density on the circle and the 2-sphere.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::rotation::Dim;
use crate::error::{invalid, Result};

const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmfParams {
    dim: Dim,
    kappa: f64,
    mean: Vector3<f64>,
}

impl VmfParams {
    pub fn new(dim: Dim, kappa: f64, mean: Vector3<f64>) -> Result<Self> {
        if !(kappa >= 0.0) {
            return Err(invalid(format!("concentration must be nonnegative, got {kappa}")));
        }
        check_unit(dim, &mean, "mean")?;
        Ok(Self { dim, kappa, mean })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mean(&self) -> &Vector3<f64> {
        &self.mean
    }
}

fn check_unit(dim: Dim, x: &Vector3<f64>, what: &str) -> Result<()> {
    if (x.norm() - 1.0).abs() > UNIT_TOLERANCE {
        return Err(invalid(format!("{what} must be a unit vector, norm is {}", x.norm())));
    }
    if dim == Dim::Two && x.z != 0.0 {
        return Err(invalid(format!("{what} leaves the plane of a 2-D density")));
    }
    Ok(())
}

/// `log I₀(κ)` by its power series, summed in the log domain so large
/// concentrations do not overflow. Terminates once the remaining tail is
/// below 1e-15 of the partial sum.
pub fn log_bessel_i0(kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    let log_half = (0.5 * kappa).ln();
    let mut log_term = 0.0_f64; // k = 0
    let mut log_sum = 0.0_f64;
    let mut k = 0.0_f64;
    loop {
        k += 1.0;
        log_term += 2.0 * (log_half - k.ln());
        log_sum = log_add(log_sum, log_term);
        // ratio of successive terms; tail is geometric once it drops below 1
        let ratio = (0.5 * kappa / (k + 1.0)).powi(2);
        if ratio < 1.0 {
            let log_tail = log_term + (ratio / (1.0 - ratio)).ln();
            if log_tail - log_sum < (1e-15_f64).ln() {
                return log_sum;
            }
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Z(κ)`: the log normalizer of the density.
pub fn vmf_log_normalizer(dim: Dim, kappa: f64) -> f64 {
    match dim {
        Dim::Two => -(2.0 * PI).ln() - log_bessel_i0(kappa),
        Dim::Three => {
            if kappa < 1e-8 {
                // κ / sinh κ → 1
                -(4.0 * PI).ln() - kappa * kappa / 6.0
            } else {
                // log sinh κ = κ + log((1 − e^{−2κ}) / 2)
                let log_sinh = kappa + (-(-2.0 * kappa).exp_m1()).ln() - 2f64.ln();
                kappa.ln() - (4.0 * PI).ln() - log_sinh
            }
        }
    }
}

/// Log density of a unit vector `x` under the given distribution.
pub fn vmf_log_density(x: &Vector3<f64>, params: &VmfParams) -> Result<f64> {
    check_unit(params.dim, x, "argument")?;
    Ok(vmf_log_normalizer(params.dim, params.kappa) + params.kappa * params.mean.dot(x))
}
