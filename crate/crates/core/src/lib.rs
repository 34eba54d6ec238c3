//! Numerical laboratory for the bulk-edge correspondence of 2D periodic
//! divergence-form operators `L = -div(A grad)` with complex Hermitian
//! coefficients.
//!
//! The crate is organised bottom-up:
//!
//! - [`coeff`]: periodic coefficient fields `A(x)`.
//! - [`sparse`] and [`grid`]: flux-form finite-difference assembly of the
//!   Bloch, Dirichlet and supercell operators, plus the position and
//!   velocity observables.
//! - [`eig`]: dense Hermitian eigensolver, skyline factorizations with
//!   inertia, and shift-invert Lanczos for spectral windows.
//! - [`bulk`]: band structures, gap detection and two Chern number routes.
//! - [`edge`]: the mollifier, the edge index and the convergence sweep.
//! - [`hs`]: almost-analytic extensions, Helffer-Sjöstrand quadrature,
//!   Green-function representation checks and decay probes.

pub mod bulk;
pub mod coeff;
pub mod edge;
pub mod eig;
pub mod error;
pub mod grid;
pub mod hs;
pub mod sparse;
pub mod stats;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
