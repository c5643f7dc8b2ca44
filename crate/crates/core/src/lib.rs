//! Relative geometry calibration of distributed sensor arrays.
//!
//! Given direction-of-arrival (DoA) measurements of acoustic events at a set
//! of sensor nodes, the estimators in this crate recover node orientations,
//! node positions and event positions up to a global scale. Arrival times
//! then fix the scale.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod experiment;
pub mod geometry;
pub mod lbfgs;
pub mod scale;
pub mod solver;
pub mod synth;

pub use error::{GeocalError, Result};
pub use estimators::{CostEval, CostKind, CostModel, ParamLayout, ParamVector};
pub use evaluation::{Summary, TrialOutcome};
pub use experiment::{ExperimentConfig, ExperimentKind, ExperimentReport};
pub use geometry::{Dim, NodePose, RotationMatrix, SceneGeometry, VmfParams};
pub use scale::ScaleEstimate;
pub use solver::{CalibrationResult, SolverConfig};
pub use synth::{MeasurementSet, RoomSpec};
