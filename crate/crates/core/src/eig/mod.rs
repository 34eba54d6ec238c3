//! Hermitian eigensolvers: dense decomposition for small problems and
//! shift-invert Lanczos for spectral windows of large sparse operators.

mod factor;
mod lanczos;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

pub use factor::{
    factorize_general, factorize_hermitian, inertia_count, sparse_factorize, sparse_factorize_complex, Profile,
    SparseFactor, SOLVE_TOL,
};
pub use lanczos::lanczos_shift_invert;

use crate::sparse::CsrMatrix;
use crate::{Error, Result, C64};

/// Largest dimension accepted by the dense solver.
pub const DENSE_GUARD: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Dense,
    LowestK,
    Window,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSolveSpec {
    pub mode: SolveMode,
    /// Shift for `lowest_k`; defaults to a Gershgorin lower bound.
    pub sigma: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub k: usize,
    /// Residual tolerance relative to `||M||_1`.
    pub tol: f64,
    /// Cap on Lanczos steps per pass.
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenSolveSpec {
    fn default() -> Self {
        EigenSolveSpec {
            mode: SolveMode::Dense,
            sigma: None,
            window: None,
            k: 0,
            tol: 1e-10,
            max_iter: 2000,
            seed: 0x5eed,
        }
    }
}

/// User-facing knobs shared by every iterative solve of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = EigenSolveSpec::default();
        SolverSettings {
            tol: d.tol,
            max_iter: d.max_iter,
            seed: d.seed,
        }
    }
}

impl EigenSolveSpec {
    pub fn with_settings(self, s: &SolverSettings) -> Self {
        EigenSolveSpec {
            tol: s.tol,
            max_iter: s.max_iter,
            seed: s.seed,
            ..self
        }
    }

    pub fn window(lo: f64, hi: f64) -> Self {
        EigenSolveSpec {
            mode: SolveMode::Window,
            window: Some((lo, hi)),
            ..Default::default()
        }
    }

    pub fn lowest_k(k: usize) -> Self {
        EigenSolveSpec {
            mode: SolveMode::LowestK,
            k,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tol".into(),
                reason: format!("must be positive, got {}", self.tol),
            });
        }
        if self.mode == SolveMode::Window {
            match self.window {
                Some((lo, hi)) if lo < hi => {}
                Some((lo, hi)) => {
                    return Err(Error::InvalidParameter {
                        name: "window".into(),
                        reason: format!("need lo < hi, got ({lo}, {hi})"),
                    })
                }
                None => {
                    return Err(Error::InvalidParameter {
                        name: "window".into(),
                        reason: "window mode needs a window".into(),
                    })
                }
            }
        }
        Ok(())
    }
}

/// Eigenpairs in ascending order with per-pair residuals.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub eigenvectors: Mat<C64>,
    /// `||M v - lambda v||_2` per pair.
    pub residuals: Vec<f64>,
    /// Eigenvalue counts below the window ends, when certified.
    pub inertia: Option<(usize, usize)>,
}

impl Spectrum {
    pub fn empty(dim: usize) -> Self {
        Spectrum {
            eigenvalues: Vec::new(),
            eigenvectors: Mat::zeros(dim, 0),
            residuals: Vec::new(),
            inertia: None,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vector(&self, k: usize) -> Vec<C64> {
        (0..self.eigenvectors.nrows()).map(|i| self.eigenvectors[(i, k)]).collect()
    }

    /// Max entry of `|V^H V - I|`.
    pub fn orthonormality_deviation(&self) -> f64 {
        let v = &self.eigenvectors;
        let g = v.adjoint() * v;
        let mut dev = 0.0_f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((g[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        dev
    }

    /// Largest imaginary entry over all eigenvectors.
    pub fn max_imaginary(&self) -> f64 {
        let v = &self.eigenvectors;
        let mut m = 0.0_f64;
        for j in 0..v.ncols() {
            for i in 0..v.nrows() {
                m = m.max(v[(i, j)].im.abs());
            }
        }
        m
    }
}

fn dense_hermiticity_residual(m: &Mat<C64>) -> f64 {
    let n = m.nrows();
    let mut r = 0.0_f64;
    for j in 0..n {
        for i in 0..=j {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

/// Full eigendecomposition of a dense Hermitian matrix. Real input takes a
/// real path so the eigenvectors come out exactly real.
pub fn dense_herm_eig(m: &Mat<C64>) -> Result<Spectrum> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Invalid(format!("matrix is {}x{}, not square", n, m.ncols())));
    }
    if n > DENSE_GUARD {
        return Err(Error::DimensionGuard { dim: n, max: DENSE_GUARD });
    }
    let mut scale = 0.0_f64;
    let mut real = true;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(m[(i, j)].norm());
            real &= m[(i, j)].im == 0.0;
        }
    }
    let residual = dense_hermiticity_residual(m);
    if residual > 1e-12 * scale.max(1.0) {
        return Err(Error::NotHermitian { residual });
    }
    let (vals, vecs): (Vec<f64>, Mat<C64>) = if real {
        let re = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)].re);
        let e = re
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::NoConvergence(format!("dense eigensolver: {e:?}")))?;
        let s = e.S().column_vector();
        let u = e.U();
        (
            (0..n).map(|k| s[k]).collect(),
            Mat::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0)),
        )
    } else {
        let e = m
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::NoConvergence(format!("dense eigensolver: {e:?}")))?;
        let s = e.S().column_vector();
        ((0..n).map(|k| s[k].re).collect(), e.U().to_owned())
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| vals[k]).collect();
    let eigenvectors = Mat::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    let mv = m * &eigenvectors;
    let residuals = (0..n)
        .map(|k| {
            (0..n)
                .map(|i| (mv[(i, k)] - eigenvectors[(i, k)] * eigenvalues[k]).norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        residuals,
        inertia: None,
    })
}

/// Gershgorin bounds `(lower, upper)` on the spectrum of a Hermitian
/// matrix.
pub fn gershgorin_bounds(m: &CsrMatrix) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m.dim() {
        let (cols, vals) = m.row(i);
        let mut centre = 0.0;
        let mut radius = 0.0;
        for (&j, v) in cols.iter().zip(vals) {
            if j == i {
                centre = v.re;
            } else {
                radius += v.norm();
            }
        }
        lo = lo.min(centre - radius);
        hi = hi.max(centre + radius);
    }
    if m.dim() == 0 {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Dispatches on `spec.mode`.
pub fn solve(matrix: &CsrMatrix, spec: &EigenSolveSpec) -> Result<Spectrum> {
    spec.validate()?;
    match spec.mode {
        SolveMode::Dense => dense_herm_eig(&matrix.to_dense()),
        SolveMode::LowestK | SolveMode::Window => lanczos_shift_invert(matrix, spec),
    }
}
