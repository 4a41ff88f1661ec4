//! Cubical cochain complex on uniform grids.

pub mod assembly;
pub mod cochain;
pub mod dump;
pub mod field;
pub mod grid;
pub mod poly;

pub use assembly::{assemble_energy, assemble_mass, cell_load, Coefficients};
pub use cochain::{coboundary_matrix, Cochain};
pub use field::{CellField, Region};
pub use grid::{boundary_mask, BoundaryMask, FaceLayout, Grid};
pub use poly::{affine_potential, interpolate, interpolate_with_spacing, PolyForm, Polynomial};
