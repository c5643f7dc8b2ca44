//! Geometric primitives shared by synthesis, estimation and evaluation.

mod rotation;
mod scene;
mod vmf;

pub use rotation::{rotation_matrix, Dim, RotationMatrix};
pub(crate) use rotation::{orientation, orientation_with_jacobian};
pub use scene::{doa_vector, gauge_fix, relative_vector, NodePose, SceneGeometry, DEFAULT_MIN_SEPARATION};
pub use vmf::{log_bessel_i0, vmf_log_density, vmf_log_normalizer, VmfParams};
