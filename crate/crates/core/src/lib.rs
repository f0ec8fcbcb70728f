//! Biharmonic solver on simplicial meshes built from a reconstructed
//! high-order space.
//!
//! Degrees of freedom are the values of a continuous piecewise-linear
//! function at interior mesh nodes. A per-element constrained least-squares
//! fit lifts those values into a discontinuous degree-`m` polynomial space,
//! on which a symmetric interior penalty DG form for `Δ²u = f` is assembled.
//! Because the system size never depends on `m`, the low-order penalty matrix
//! `A_L` on continuous linears serves as a preconditioner for every degree;
//! it is applied approximately by one of two W-cycle multigrid methods.
//!
//! Module map:
//! - [`mesh`]: structured triangle/tetrahedron meshes, faces, red refinement.
//! - [`polyspace`]: simplex quadrature and element-orthonormal bases.
//! - [`patch`]: element patches feeding the least-squares fits.
//! - [`recon`]: the reconstruction operator and its stability constants.
//! - [`assemble`]: IPDG matrices, mass, loads, energy norms.
//! - [`solver`]: CG/PCG, multigrid preconditioners, eigenvalue estimates.
//! - [`experiments`]: manufactured solutions and convergence studies.
//! - [`io`]: mesh text format, Matrix Market and CSV output.

pub mod assemble;
pub mod error;
pub mod experiments;
pub mod io;
pub mod mesh;
pub mod patch;
pub mod polyspace;
pub mod recon;
pub mod solver;
pub mod sparse;

pub use assemble::{DgSystem, NormKind, Penalties};
pub use error::{Error, Result};
pub use mesh::{Face, Mesh, MeshHierarchy};
pub use patch::ElementPatch;
pub use polyspace::{LocalBasis, QuadratureRule};
pub use recon::{LocalRecon, ReconOperator, ReconStats};
pub use solver::{MgHierarchy, MgVariant, SolveReport};
pub use sparse::CsrMatrix;
