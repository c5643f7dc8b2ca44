//! Rotations on SO(2) and SO(3) parameterized by their generators.
//!
//! A node's orientation matrix has the node's local basis vectors as rows, so
//! it maps world coordinates into the node frame. For a generator `θ` this is
//! `R(θ) = exp([θ]×)ᵀ`. Planar rotations are embedded in 3-D as rotations
//! about the z axis, with generator `(0, 0, θ)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Ambient dimension of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn value(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Number of free components in a rotation generator.
    pub fn generator_len(self) -> usize {
        match self {
            Dim::Two => 1,
            Dim::Three => 3,
        }
    }

    /// Embed a length-D slice into a 3-vector (z = 0 for planar data).
    pub fn embed(self, v: &[f64]) -> Result<Vector3<f64>> {
        if v.len() != self.value() {
            return Err(invalid(format!(
                "expected a length-{} vector, got length {}",
                self.value(),
                v.len()
            )));
        }
        Ok(match self {
            Dim::Two => Vector3::new(v[0], v[1], 0.0),
            Dim::Three => Vector3::new(v[0], v[1], v[2]),
        })
    }

    /// Embed a generator slice (length 1 or 3) into a rotation vector.
    pub fn embed_generator(self, theta: &[f64]) -> Result<Vector3<f64>> {
        if theta.len() != self.generator_len() {
            return Err(invalid(format!(
                "a {}-D rotation generator has {} component(s), got {}",
                self.value(),
                self.generator_len(),
                theta.len()
            )));
        }
        Ok(match self {
            Dim::Two => Vector3::new(0.0, 0.0, theta[0]),
            Dim::Three => Vector3::new(theta[0], theta[1], theta[2]),
        })
    }

    pub fn truncate(self, v: &Vector3<f64>) -> Vec<f64> {
        v.as_slice()[..self.value()].to_vec()
    }

    pub fn truncate_generator(self, theta: &Vector3<f64>) -> Vec<f64> {
        match self {
            Dim::Two => vec![theta.z],
            Dim::Three => theta.as_slice().to_vec(),
        }
    }
}

impl TryFrom<usize> for Dim {
    type Error = String;

    fn try_from(d: usize) -> std::result::Result<Self, Self::Error> {
        match d {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            other => Err(format!("dimension must be 2 or 3, got {other}")),
        }
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.value()
    }
}

/// A node orientation matrix `B` (rows = local basis vectors).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    dim: Dim,
    matrix: Matrix3<f64>,
}

impl RotationMatrix {
    pub fn identity(dim: Dim) -> Self {
        Self {
            dim,
            matrix: Matrix3::identity(),
        }
    }

    pub(crate) fn from_matrix(dim: Dim, matrix: Matrix3<f64>) -> Self {
        Self { dim, matrix }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    /// The embedded 3×3 matrix. Planar rotations act trivially on z.
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Row-major entries of the D×D block.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let d = self.dim.value();
        (0..d)
            .map(|r| (0..d).map(|c| self.matrix[(r, c)]).collect())
            .collect()
    }

    /// Frobenius norm of `self − other` over the D×D block.
    pub fn frobenius_distance(&self, other: &RotationMatrix) -> f64 {
        let d = self.dim.value();
        let diff = self.matrix - other.matrix;
        diff.view((0, 0), (d, d)).norm()
    }

    /// Frobenius norm over the D×D block (√D for any rotation).
    pub fn frobenius_norm(&self) -> f64 {
        let d = self.dim.value();
        self.matrix.view((0, 0), (d, d)).norm()
    }

    /// `‖BᵀB − I‖_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.matrix.transpose() * self.matrix - Matrix3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }

    pub fn transpose(&self) -> Self {
        Self {
            dim: self.dim,
            matrix: self.matrix.transpose(),
        }
    }

    /// Recover the generator `θ` with `R(θ) = self`; angles lie in `[0, π]`
    /// (3-D) or `(−π, π]` (2-D).
    pub fn generator(&self) -> Vector3<f64> {
        match self.dim {
            Dim::Two => Vector3::new(0.0, 0.0, self.matrix[(0, 1)].atan2(self.matrix[(0, 0)])),
            Dim::Three => so3_log(&self.matrix.transpose()),
        }
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix {
            dim: self.dim,
            matrix: self.matrix * rhs.matrix,
        }
    }
}

/// Map a generator (length 1 for D = 2, length 3 for D = 3) to its rotation matrix.
pub fn rotation_matrix(theta: &[f64], dim: usize) -> Result<RotationMatrix> {
    let dim = Dim::try_from(dim).map_err(invalid)?;
    let generator = dim.embed_generator(theta)?;
    Ok(RotationMatrix::from_matrix(dim, orientation(&generator, dim)))
}

/// `R(θ)` for an embedded generator.
pub(crate) fn orientation(theta: &Vector3<f64>, dim: Dim) -> Matrix3<f64> {
    match dim {
        Dim::Two => {
            let (s, c) = theta.z.sin_cos();
            Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
        }
        Dim::Three => so3_exp(theta).transpose(),
    }
}

/// `R(θ)` together with `∂R/∂θ_k` for each free generator component.
///
/// For D = 2 only the first derivative slot is meaningful.
pub(crate) fn orientation_with_jacobian(
    theta: &Vector3<f64>,
    dim: Dim,
) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    match dim {
        Dim::Two => {
            let (s, c) = theta.z.sin_cos();
            let r = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
            let dr = Matrix3::new(-s, c, 0.0, -c, -s, 0.0, 0.0, 0.0, 0.0);
            (r, [dr, Matrix3::zeros(), Matrix3::zeros()])
        }
        Dim::Three => {
            let (exp, d_exp) = so3_exp_with_jacobian(theta);
            (
                exp.transpose(),
                [
                    d_exp[0].transpose(),
                    d_exp[1].transpose(),
                    d_exp[2].transpose(),
                ],
            )
        }
    }
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues coefficients `a = sin t / t`, `b = (1 − cos t) / t²` and their
/// derivatives divided by `t`.
struct RodriguesCoefficients {
    a: f64,
    b: f64,
    da_over_t: f64,
    db_over_t: f64,
}

impl RodriguesCoefficients {
    fn new(t: f64) -> Self {
        if t < 1e-2 {
            let t2 = t * t;
            let t4 = t2 * t2;
            let t6 = t4 * t2;
            Self {
                a: 1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
                b: 0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
                da_over_t: -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0,
                db_over_t: -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0,
            }
        } else {
            let (s, c) = t.sin_cos();
            let t2 = t * t;
            Self {
                a: s / t,
                b: (1.0 - c) / t2,
                da_over_t: (t * c - s) / (t2 * t),
                db_over_t: (t * s - 2.0 * (1.0 - c)) / (t2 * t2),
            }
        }
    }
}

pub(crate) fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let k = RodriguesCoefficients::new(w.norm());
    let hw = hat(w);
    Matrix3::identity() + hw * k.a + hw * hw * k.b
}

fn so3_exp_with_jacobian(w: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let k = RodriguesCoefficients::new(w.norm());
    let hw = hat(w);
    let hw2 = hw * hw;
    let exp = Matrix3::identity() + hw * k.a + hw2 * k.b;
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    let jac = std::array::from_fn(|axis| {
        let e = hat(&basis[axis]);
        let wk = w[axis];
        hw * (k.da_over_t * wk) + e * k.a + hw2 * (k.db_over_t * wk) + (e * hw + hw * e) * k.b
    });
    (exp, jac)
}

/// Inverse of `so3_exp`, returning a rotation vector with angle in `[0, π]`.
pub(crate) fn so3_log(m: &Matrix3<f64>) -> Vector3<f64> {
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_t = skew.norm();
    let t = sin_t.atan2(cos_t);
    if t < 1e-6 {
        // exp(w) ≈ I + [w]× to second order
        return skew * (1.0 + t * t / 6.0);
    }
    if PI - t > 1e-3 {
        return skew * (t / sin_t);
    }
    // Near π the skew part vanishes; read the axis off the symmetric part.
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_t;
    let col = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(col).into_owned();
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_generator_is_identity() {
        for (theta, d) in [(vec![0.0], 2), (vec![0.0, 0.0, 0.0], 3)] {
            let r = rotation_matrix(&theta, d).unwrap();
            assert_eq!(r.to_rows().len(), d);
            assert_eq!(*r.matrix(), Matrix3::identity());
        }
    }

    #[test]
    fn quarter_turn_planar_rows() {
        let r = rotation_matrix(&[FRAC_PI_2], 2).unwrap();
        let rows = r.to_rows();
        assert_relative_eq!(rows[0][0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(rows[0][1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(rows[1][0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(rows[1][1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_about_z_maps_e1_to_minus_e2() {
        let r = rotation_matrix(&[0.0, 0.0, FRAC_PI_2], 3).unwrap();
        // Rodrigues oracle: exp([w]x) = cos t I + sin t [u]x + (1 - cos t) u u^T
        let u = Vector3::z();
        let t = FRAC_PI_2;
        let oracle = Matrix3::identity() * t.cos() + hat(&u) * t.sin() + u * u.transpose() * (1.0 - t.cos());
        assert_relative_eq!(*r.matrix(), oracle.transpose(), epsilon = 1e-15);
        assert_relative_eq!(r.matrix() * Vector3::x(), -Vector3::y(), epsilon = 1e-15);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        assert!(r.orthogonality_defect() < 1e-12);
    }

    #[test]
    fn wrong_generator_length_is_rejected() {
        assert!(rotation_matrix(&[0.1, 0.2], 3).is_err());
        assert!(rotation_matrix(&[0.1, 0.2, 0.3], 2).is_err());
        assert!(rotation_matrix(&[0.1], 4).is_err());
    }

    #[test]
    fn log_inverts_exp_including_near_pi() {
        let cases = [
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(1e-9, 2e-9, -1e-9),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 2.0, -0.5).normalize() * (PI - 1e-5),
            Vector3::new(0.0, 1.0, 0.0) * PI,
            Vector3::new(-0.4, 0.1, 0.2).normalize() * 3.0,
        ];
        for w in cases {
            let m = so3_exp(&w);
            let back = so3_exp(&so3_log(&m));
            assert_relative_eq!(back, m, epsilon = 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let h = 1e-6;
        for w in [
            Vector3::new(0.3, -1.2, 0.7),
            Vector3::new(1e-3, 2e-3, -4e-3),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 1.0, 2.0),
        ] {
            let (_, jac) = orientation_with_jacobian(&w, Dim::Three);
            for axis in 0..3 {
                let mut wp = w;
                let mut wm = w;
                wp[axis] += h;
                wm[axis] -= h;
                let fd = (orientation(&wp, Dim::Three) - orientation(&wm, Dim::Three)) / (2.0 * h);
                assert_relative_eq!(jac[axis], fd, epsilon = 1e-8);
            }
        }
    }
}
