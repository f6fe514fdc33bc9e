//! Estimation of conduction-velocity tensors and fiber orientation on triangle
//! surface meshes from sparse activation-time measurements.
//!
//! The pipeline: generate or load a surface mesh ([`mesh`]), compute a
//! Laplace-Beltrami spectral embedding ([`spectral`]), simulate ground-truth
//! activation maps with an anisotropic eikonal solver and sample noisy
//! measurements ([`eikonal`], [`dataset`]), train an ensemble of
//! physics-informed networks with randomized priors ([`train`], [`nn`]),
//! aggregate the per-member tensor predictions into one fiber field with an
//! uncertainty estimate ([`select`]), and report metrics ([`metrics`],
//! [`harness`]).
//!
//! All floating point work is f64. Every stage is deterministic for a fixed
//! seed; parallelism (the `parallel` feature, on by default) never changes
//! results, only wall time.

pub mod adam;
pub mod dataset;
pub mod eikonal;
pub mod error;
pub mod export;
pub mod gemm;
pub mod harness;
pub mod hash;
pub mod mesh;
pub mod mesh_io;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod select;
pub mod sparse;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use mesh::{ElementFrame, TriangleSurfaceMesh};
pub use spectral::SpectralBasis;

/// 3D vector in global coordinates (cm).
pub type Vec3 = nalgebra::Vector3<f64>;
/// 2D vector in a tangent-plane basis.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 3x3 matrix in global coordinates.
pub type Mat3 = nalgebra::Matrix3<f64>;
/// 2x2 matrix in a tangent-plane basis.
pub type Mat2 = nalgebra::Matrix2<f64>;
