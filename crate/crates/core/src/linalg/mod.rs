//! Sparse matrices and iterative solvers.

pub mod cg;
pub mod csr;
pub mod multigrid;

pub use cg::{pcg, CgOptions, CgOutcome, Identity, Jacobi, Preconditioner};
pub use csr::CsrMatrix;
pub use multigrid::Multigrid;
