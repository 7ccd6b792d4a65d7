//! Rectangular Morley nonconforming finite elements for `-Δu = f` with
//! homogeneous Dirichlet data on d-dimensional tensor-product box meshes.

pub mod analysis;
pub mod cli;
pub mod element;
pub mod error;
pub mod field;
pub mod lemmas;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod space;

pub use error::{Error, Result};
