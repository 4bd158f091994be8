//! Multiscale finite element solver for high-contrast diffusion on the
//! unit square.
//!
//! The library builds a coarse solution space from local generalized
//! eigenproblems, localizes the basis by a fixed number of conjugate
//! gradient steps on a substructured kernel representation, and certifies
//! the resulting Galerkin error a priori. See the `examples/` directory
//! for runnable walkthroughs of each stage.

pub mod assembly;
pub mod auxiliary;
pub mod basis_io;
pub mod coefficient;
pub mod corrector;
pub mod dense;
pub mod dual;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod mesh;
pub mod solver;
pub mod sparse;

pub use error::{LodError, Result};
pub use mesh::MeshHierarchy;
