//! Surface reconstruction from oriented points with closed-form Hermite RBF
//! quasi-interpolation.
//!
//! The pipeline normalizes an oriented point cloud into `[-1, 1]^3`, tunes
//! per-center support radii and the regularization weight so that the
//! quasi-solution stays within a provable distance of the exact regularized
//! HRBF solution, and extracts the zero level set of the closed-form implicit
//! function with a dual-contouring variant that only meshes supported regions.
//!
//! An exact block-sparse solver ([`exact`]) is kept alongside the closed form
//! as an oracle for verifying the error bound on small inputs.

pub mod cover;
pub mod distance;
pub mod error;
pub mod exact;
pub mod io;
pub mod isosurface;
pub mod kernel;
pub mod mesh;
pub mod noise;
pub mod normals;
pub mod octree;
pub mod pipeline;
pub mod points;
pub mod quasi;
pub mod synth;

pub use error::{Error, Result};
pub use mesh::{Face, QuadMesh};
pub use points::{Aabb, HermitePointSet, Similarity};

/// Re-export of the linear algebra crate used in the public API.
pub use nalgebra;

/// 3-vector used for positions, normals and gradients throughout the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
