//! Spectral shape optimization on polygons: P1 eigenpairs of the Dirichlet
//! Laplacian, exact discrete shape derivatives, Hessian spectra on regular
//! polygons and certified a posteriori bounds.

pub mod bounds;
pub mod certify;
pub mod cli;
pub mod descent;
pub mod error;
pub mod fem;
pub mod hessian;
pub mod meshgen;
pub mod polygeom;
pub mod report;
pub mod stability;
pub mod torsion;

pub use error::{Error, Result};
