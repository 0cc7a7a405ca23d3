//! Evolving surface finite elements for advection-diffusion equations with
//! random coefficients on moving curves and surfaces.
//!
//! P1 elements live on a simplicial mesh whose vertices follow the surface
//! flow. Each sample path is advanced with backward Euler and the expected
//! solution is estimated by Monte-Carlo averaging. The two preset
//! [`Experiment`]s use manufactured solutions so that discretization errors
//! can be measured exactly.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod linalg;
pub mod manufactured;
pub mod mc;
pub mod mesh;
pub mod stepper;
pub mod stochastic;

pub use error::{Error, Result};
pub use fem::{AssembledLevel, FemSpace, LevelGeometry};
pub use geometry::{EvolvingSurface, SurfaceKind};
pub use linalg::{pcg_solve, CgStats, SparseMatrix, Vector};
pub use manufactured::Experiment;
pub use mc::{convergence_study, eoc, mc_error, ConvergenceRow, ReplicateResult, StudyConfig};
pub use mesh::{Positions, SurfaceMesh};
pub use stepper::{simulate_path, PathTrajectory, SolveStats, TimeGrid};
pub use stochastic::{RandomCoefficient, Sample, Sampler, SeedSpec, SeededSampler};
