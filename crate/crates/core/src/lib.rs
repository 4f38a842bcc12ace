//! Spectral analysis of Dirichlet Laplacians on thin deformed tubes.
//!
//! A tube is carried by a curve with curvature `k(s)`, torsion `tau(s)` and
//! cross-section rotation `alpha(s)`; its cross section `eps * S` is scaled
//! along the curve by a deformation profile `h(s)` with a single quadratic
//! maximum `M` at `s = 0`. As the diameter goes to zero the low eigenvalues,
//! after removal of the diverging transverse energy, are governed by a 1D
//! harmonic-oscillator operator that is independent of curvature and
//! twisting. This crate computes every piece of that picture numerically:
//!
//! - [`numerics`]: tridiagonal and sparse symmetric eigensolvers, rate fits;
//! - [`geometry`]: tube data, deformation validation, Jacobian of the
//!   straightening map;
//! - [`cross_section`]: 2D section modes, geometric constants, perturbed
//!   section problem;
//! - [`effective1d`]: effective potential and 1D operators, oscillator
//!   spectra;
//! - [`tube3d`]: straightened 3D quadratic forms and resolvent-difference
//!   convergence checks;
//! - [`harness`]: end-to-end convergence studies and report emission.

pub mod cross_section;
pub mod effective1d;
pub mod error;
pub mod fmt;
pub mod geometry;
pub mod harness;
pub mod numerics;
pub mod tube3d;

pub use error::{Error, Result};
pub use numerics::{EigenPair, RateFit, SparseSymmetric, TridiagonalMatrix};
