//! Helffer-Sjöstrand functional calculus, Green-function representations of
//! the edge index, and resolvent decay probes.
//!
//! Plane integrals use the Lebesgue measure with midpoint weights
//! `dx dy`, so the scalar identity reads
//! `g(t) = (1/pi) sum w dbar(g~)(z) / (t - z)` and
//! `g'(M) = -(1/pi) sum w dbar(g~)(z) (M - z)^-2`.

use std::f64::consts::PI;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edge::{edge_index, Mollifier};
use crate::eig::{dense_herm_eig, inertia_count, sparse_factorize_complex, Profile};
use crate::grid::{position_velocity_ops, BlochOperator, DirichletOperator};
use crate::sparse::CsrMatrix;
use crate::stats::linear_fit;
use crate::{Error, Result, C64};

/// Highest derivative of the mollifier that is continuous enough to use.
const AVAILABLE_DERIVATIVES: usize = 4;

/// Dense resolvent work is refused above this dimension.
pub const HS_DENSE_MAX: usize = 1500;

/// Residual bound for Green-function column solves.
pub const GREEN_TOL: f64 = 1e-10;

/// Minimum distance shells for a decay fit.
pub const MIN_SHELLS: usize = 5;

const SHELL_WIDTH: f64 = 0.5;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Finite-order almost-analytic extension of a mollifier,
/// `g~(x + iy) = chi(y) sum_{k <= N} G^(k)(x) (iy)^k / k!`.
///
/// `G = g * phi` where `phi` switches on from 0 to 1 over
/// `[cutoff_lo, cutoff_hi]`; `G = g` on the spectrum as long as the
/// spectrum lies above `cutoff_hi`, and `G` has compact support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlmostAnalytic {
    pub moll: Mollifier,
    pub order: usize,
    pub y_max: f64,
    pub cutoff_lo: f64,
    pub cutoff_hi: f64,
}

/// Extension of order `order` with `chi` supported in `|y| <= y_max`; the
/// lower cutoff sits below `spectrum_min` by `y_max` and is `2 y_max` wide.
pub fn almost_analytic(moll: Mollifier, order: usize, y_max: f64, spectrum_min: f64) -> Result<AlmostAnalytic> {
    if order + 1 > AVAILABLE_DERIVATIVES {
        return Err(Error::OrderTooHigh {
            order,
            needed: order + 1,
            available: AVAILABLE_DERIVATIVES,
        });
    }
    if !(y_max > 0.0) {
        return Err(Error::InvalidParameter {
            name: "y_max".into(),
            reason: format!("must be positive, got {y_max}"),
        });
    }
    let cutoff_hi = spectrum_min.min(moll.a) - y_max;
    Ok(AlmostAnalytic {
        moll,
        order,
        y_max,
        cutoff_lo: cutoff_hi - 2.0 * y_max,
        cutoff_hi,
    })
}

impl AlmostAnalytic {
    fn cutoff(&self) -> Mollifier {
        Mollifier {
            a: self.cutoff_lo,
            b: self.cutoff_hi,
        }
    }

    fn plateau(&self) -> Mollifier {
        Mollifier {
            a: 0.5 * self.y_max,
            b: self.y_max,
        }
    }

    /// `G^(k)(x)` by the Leibniz rule.
    pub fn base_derivative(&self, k: usize, x: f64) -> f64 {
        let c = self.cutoff();
        (0..=k)
            .map(|j| {
                let phi = if k == j { 1.0 - c.g(x) } else { -c.derivative(k - j, x) };
                binomial(k, j) * self.moll.derivative(j, x) * phi
            })
            .sum()
    }

    pub fn chi(&self, y: f64) -> f64 {
        self.plateau().g(y.abs())
    }

    pub fn chi_prime(&self, y: f64) -> f64 {
        self.plateau().gprime(y.abs()) * y.signum()
    }

    fn taylor(&self, x: f64, y: f64) -> C64 {
        let iy = C64::new(0.0, y);
        let mut term = C64::new(1.0, 0.0);
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=self.order {
            acc += term * self.base_derivative(k, x);
            term = term * iy / (k + 1) as f64;
        }
        acc
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.taylor(z.re, z.im) * self.chi(z.im)
    }

    /// `dbar g~ = chi G^(N+1) (iy)^N / (2 N!) + (i/2) chi' sum G^(k) (iy)^k / k!`.
    pub fn dbar(&self, z: C64) -> C64 {
        let (x, y) = (z.re, z.im);
        let n = self.order;
        let iy_n = C64::new(0.0, y).powi(n as i32);
        let first = iy_n * (self.chi(y) * self.base_derivative(n + 1, x) / (2.0 * factorial(n)));
        let cp = self.chi_prime(y);
        let second = if cp == 0.0 {
            C64::new(0.0, 0.0)
        } else {
            C64::new(0.0, 0.5 * cp) * self.taylor(x, y)
        };
        first + second
    }

    /// Composite midpoint grid over the support of `g~` with cell edges on
    /// every breakpoint of `G^(4)`. The gap transition gets `nx` cells; the
    /// flat and cutoff stretches use spacing `10 y_max / nx`.
    pub fn quadrature(&self, nx: usize, ny: usize) -> Result<ZQuadrature> {
        let breaks = vec![self.cutoff_lo, self.cutoff_hi, self.moll.a, self.moll.b];
        let outer = 10.0 * self.y_max / nx.max(1) as f64;
        let count = |len: f64| ((len / outer).ceil() as usize).max(2);
        let counts = vec![
            count(self.cutoff_hi - self.cutoff_lo),
            count(self.moll.a - self.cutoff_hi),
            nx.max(2),
        ];
        ZQuadrature::composite(breaks, counts, self.y_max, ny)
    }

    /// The eigenvalues of the operator must lie above the cutoff.
    fn check_spectrum(&self, lowest: f64) -> Result<()> {
        if lowest < self.cutoff_hi {
            return Err(Error::InvalidParameter {
                name: "spectrum_min".into(),
                reason: format!("eigenvalue {lowest} lies below the extension cutoff {}", self.cutoff_hi),
            });
        }
        Ok(())
    }
}

/// Composite midpoint rule on `[x_0, x_m] x [-y_max, y_max]`: segment
/// `[x_i, x_{i+1}]` carries `counts[i]` uniform cells, and `ny` is even so
/// no node lies on the real axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZQuadrature {
    pub breaks: Vec<f64>,
    pub counts: Vec<usize>,
    pub y_max: f64,
    pub ny: usize,
}

impl ZQuadrature {
    /// Single uniform segment.
    pub fn new(x_lo: f64, x_hi: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::composite(vec![x_lo, x_hi], vec![nx], y_max, ny)
    }

    pub fn composite(breaks: Vec<f64>, counts: Vec<usize>, y_max: f64, ny: usize) -> Result<Self> {
        let bad = |reason: String| {
            Err(Error::InvalidParameter {
                name: "quadrature".into(),
                reason,
            })
        };
        if breaks.len() < 2 || counts.len() + 1 != breaks.len() {
            return bad(format!("{} breakpoints for {} segments", breaks.len(), counts.len()));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || counts.contains(&0) {
            return bad(format!("segments must be ascending and nonempty: {breaks:?} / {counts:?}"));
        }
        if !(y_max > 0.0) || ny == 0 || ny % 2 != 0 {
            return bad(format!("need y_max > 0 and even ny > 0, got {y_max} and {ny}"));
        }
        Ok(ZQuadrature {
            breaks,
            counts,
            y_max,
            ny,
        })
    }

    pub fn nx(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nodes with their cell areas.
    pub fn nodes(&self) -> Vec<(C64, f64)> {
        let dy = 2.0 * self.y_max / self.ny as f64;
        let xs: Vec<(f64, f64)> = self
            .breaks
            .windows(2)
            .zip(&self.counts)
            .flat_map(|(w, &n)| {
                let dx = (w[1] - w[0]) / n as f64;
                (0..n).map(move |i| (w[0] + (i as f64 + 0.5) * dx, dx))
            })
            .collect();
        (0..self.ny)
            .flat_map(|j| xs.iter().map(move |&(x, dx)| (C64::new(x, -self.y_max + (j as f64 + 0.5) * dy), dx * dy)))
            .collect()
    }

    /// Nodes with nonzero weight `w dbar g~(z)`, paired with that weight.
    pub fn weighted_nodes(&self, aa: &AlmostAnalytic) -> Vec<(C64, C64)> {
        self.nodes()
            .into_iter()
            .filter_map(|(z, w)| {
                let d = aa.dbar(z);
                (d != C64::new(0.0, 0.0)).then_some((z, d * w))
            })
            .collect()
    }
}

/// `(1/pi) sum w dbar(g~)(z) / (lambda - z)`, which reproduces `g(lambda)`.
pub fn scalar_residue_check(aa: &AlmostAnalytic, quad: &ZQuadrature, lambda: f64) -> f64 {
    let sum: C64 = quad
        .weighted_nodes(aa)
        .iter()
        .map(|&(z, c)| c / (C64::new(lambda, 0.0) - z))
        .sum();
    sum.re / PI
}

/// `-(1/pi) sum w dbar(g~)(z) (lambda - z)^-2`, the scalar `g'(lambda)`.
fn gprime_kernel(nodes: &[(C64, C64)], lambda: f64) -> C64 {
    let sum: C64 = nodes
        .iter()
        .map(|&(z, c)| {
            let r = (C64::new(lambda, 0.0) - z).inv();
            c * r * r
        })
        .sum();
    -sum / PI
}

#[derive(Clone, Debug)]
pub struct GPrimeApprox {
    pub matrix: Mat<C64>,
    /// Frobenius distance to `sum g'(lambda_k) P_k`.
    pub frobenius_error: f64,
}

fn dense_guard(dim: usize) -> Result<()> {
    if dim > HS_DENSE_MAX {
        return Err(Error::DimensionGuard { dim, max: HS_DENSE_MAX });
    }
    Ok(())
}

/// `g'(M)` from the resolvent-squared plane integral. Resolvents are
/// applied through one dense eigendecomposition of `M`.
pub fn hs_apply_gprime(matrix: &Mat<C64>, aa: &AlmostAnalytic, quad: &ZQuadrature) -> Result<GPrimeApprox> {
    let n = matrix.nrows();
    dense_guard(n)?;
    let s = dense_herm_eig(matrix)?;
    if let Some(&lowest) = s.eigenvalues.first() {
        aa.check_spectrum(lowest)?;
    }
    let nodes = quad.weighted_nodes(aa);
    let approx: Vec<C64> = s.eigenvalues.par_iter().map(|&l| gprime_kernel(&nodes, l)).collect();
    let u = &s.eigenvectors;
    let scaled = Mat::from_fn(n, n, |i, k| u[(i, k)] * approx[k]);
    let out = &scaled * u.adjoint();
    let diff = Mat::from_fn(n, n, |i, k| u[(i, k)] * (approx[k] - aa.moll.gprime(s.eigenvalues[k])));
    let err = &diff * u.adjoint();
    let frobenius_error = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| err[(i, j)].norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(GPrimeApprox {
        matrix: out,
        frobenius_error,
    })
}

/// Seeded test matrix with entries `(a + a^H) / 2`, `a` uniform in the
/// unit square of the complex plane.
pub fn random_hermitian(n: usize, seed: u64) -> Mat<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Mat::<C64>::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// Three evaluations of the edge index of one truncated operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationCheck {
    pub dim: usize,
    pub n_modes: usize,
    /// Spectral trace over in-gap eigenpairs.
    pub ei_spec: f64,
    /// `i Tr[(V2 X1 - V1 X2) g'(M)]` with `g'(M)` from the plane integral.
    pub ei_hs: f64,
    /// The same trace rewritten as `-sum eps_ij Tr[V_i R V_j R^2]`.
    pub ei_green: f64,
    /// Largest imaginary part left in the two quadrature sums.
    pub imaginary_residue: f64,
}

impl RepresentationCheck {
    fn pair(a: f64, b: f64) -> (f64, f64) {
        let abs = (a - b).abs();
        (abs / a.abs().max(b.abs()).max(f64::MIN_POSITIVE), abs)
    }

    /// `(relative, absolute)` differences: hs vs spec, green vs spec,
    /// hs vs green.
    pub fn pairwise(&self) -> [(f64, f64); 3] {
        [
            Self::pair(self.ei_hs, self.ei_spec),
            Self::pair(self.ei_green, self.ei_spec),
            Self::pair(self.ei_hs, self.ei_green),
        ]
    }

    /// Every pair within `rel` relative or `abs` absolute.
    pub fn agrees(&self, rel: f64, abs: f64) -> bool {
        self.pairwise().iter().all(|&(r, a)| r < rel || a < abs)
    }
}

/// Nodes per block of the resolvent-trace contraction.
const NODE_BLOCK: usize = 512;

pub fn verify_representation(op: &DirichletOperator, aa: &AlmostAnalytic, quad: &ZQuadrature) -> Result<RepresentationCheck> {
    let n = op.dim();
    dense_guard(n)?;
    let report = edge_index(op, &aa.moll)?;
    let s = dense_herm_eig(&op.matrix.to_dense())?;
    let lam = &s.eigenvalues;
    if let Some(&lowest) = lam.first() {
        aa.check_spectrum(lowest)?;
    }
    let u = &s.eigenvectors;
    let ops = position_velocity_ops(op);
    let v1 = u.adjoint() * ops.v1.to_dense() * u;
    let v2 = u.adjoint() * ops.v2.to_dense() * u;
    let c = u.adjoint() * ops.circulation_operator().to_dense() * u;
    // Tr[V1 R V2 R^2] - Tr[V2 R V1 R^2] = sum_kl s_k W_kl r_l
    let w = Mat::from_fn(n, n, |k, l| v1[(k, l)] * v2[(l, k)] - v2[(k, l)] * v1[(l, k)]);
    let nodes = quad.weighted_nodes(aa);
    let (hs_sum, green_sum) = nodes
        .par_chunks(NODE_BLOCK)
        .map(|block| {
            let m = block.len();
            let r = Mat::from_fn(m, n, |j, l| (C64::new(lam[l], 0.0) - block[j].0).inv());
            let sq = Mat::from_fn(m, n, |j, k| r[(j, k)] * r[(j, k)]);
            let t = &sq * &w;
            let mut hs = C64::new(0.0, 0.0);
            let mut green = C64::new(0.0, 0.0);
            for (j, &(_, cw)) in block.iter().enumerate() {
                let mut tr_c = C64::new(0.0, 0.0);
                let mut tr_g = C64::new(0.0, 0.0);
                for k in 0..n {
                    tr_c += c[(k, k)] * sq[(j, k)];
                    tr_g += t[(j, k)] * r[(j, k)];
                }
                hs += cw * tr_c;
                green += cw * tr_g;
            }
            (hs, green)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((C64::new(0.0, 0.0), C64::new(0.0, 0.0)), |a, b| (a.0 + b.0, a.1 + b.1));
    let i = C64::new(0.0, 1.0);
    // EI = i Tr[C g'(M)], g'(M) = -(1/pi) sum w dbar R^2, and
    // sum eps_ij Tr[V_i R V_j R^2] = -Tr[C R^2]
    let ei_hs = -i * hs_sum / PI;
    let ei_green = i * green_sum / PI;
    Ok(RepresentationCheck {
        dim: n,
        n_modes: report.modes.len(),
        ei_spec: report.ei,
        ei_hs: ei_hs.re,
        ei_green: ei_green.re,
        imaginary_residue: ei_hs.im.abs().max(ei_green.im.abs()),
    })
}

/// One column of the discrete Green function.
#[derive(Clone, Debug)]
pub struct GreenColumn {
    pub z: C64,
    pub src: usize,
    pub values: Vec<C64>,
    /// `||(M - z) g - b|| / ||b||`.
    pub residual: f64,
}

/// Solves `(M - z) g = e_src / h^2`.
pub fn green_column(matrix: &CsrMatrix, h: f64, z: C64, src: usize) -> Result<GreenColumn> {
    let n = matrix.dim();
    if src >= n {
        return Err(Error::InvalidParameter {
            name: "src".into(),
            reason: format!("node {src} outside dimension {n}"),
        });
    }
    let factor = sparse_factorize_complex(matrix, z)?;
    let mut b = vec![C64::new(0.0, 0.0); n];
    b[src] = C64::new(1.0 / (h * h), 0.0);
    let values = factor.solve(&b)?;
    let shifted = matrix.shifted(z);
    let r = shifted.apply(&values);
    let residual = r
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / (1.0 / (h * h));
    if !(residual < GREEN_TOL) {
        return Err(Error::SolveResidual {
            residual,
            tol: GREEN_TOL,
        });
    }
    Ok(GreenColumn {
        z,
        src,
        values,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub z_re: f64,
    pub z_im: f64,
    /// `(shell centre distance, ln max |G| on the shell)`.
    pub samples: Vec<(f64, f64)>,
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

impl DecayFit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance,log_abs_green\n");
        for (r, g) in &self.samples {
            out.push_str(&format!("{r:.6},{g:.12e}\n"));
        }
        out
    }
}

/// Fits `ln max|G| + (1/2) ln r ~ ln C - rate * r` over distance shells of
/// width 1/2 between 1/2 and half the period. The `(1/2) ln r` term removes
/// the algebraic prefactor of two-dimensional resolvent kernels.
pub fn fit_decay(distances: &[f64], values: &[C64], r_max: f64, z: C64) -> Result<DecayFit> {
    let n_shells = ((r_max - SHELL_WIDTH) / SHELL_WIDTH).floor().max(0.0) as usize;
    let mut peak = vec![0.0_f64; n_shells];
    for (&r, v) in distances.iter().zip(values) {
        if r < SHELL_WIDTH || r >= SHELL_WIDTH * (n_shells + 1) as f64 {
            continue;
        }
        let s = ((r - SHELL_WIDTH) / SHELL_WIDTH) as usize;
        peak[s] = peak[s].max(v.norm());
    }
    let samples: Vec<(f64, f64)> = peak
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| {
            let r = SHELL_WIDTH * (s as f64 + 1.5);
            (r, p.ln())
        })
        .collect();
    if samples.len() < MIN_SHELLS {
        return Err(Error::TooFewShells {
            found: samples.len(),
            min: MIN_SHELLS,
        });
    }
    let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1 + 0.5 * s.0.ln()).collect();
    let fit = linear_fit(&x, &y).ok_or_else(|| Error::Invalid("degenerate decay fit".into()))?;
    Ok(DecayFit {
        z_re: z.re,
        z_im: z.im,
        samples,
        rate: -fit.slope,
        prefactor: fit.intercept.exp(),
        r_squared: fit.r_squared,
    })
}

/// Resolvent decay away from node `src` of a periodic supercell, one fit
/// per probe energy. Distances are minimum-image distances in cell units.
pub fn decay_probe(op: &BlochOperator, z_list: &[C64], src: usize) -> Result<Vec<DecayFit>> {
    let coords = op.coords();
    if src >= coords.len() {
        return Err(Error::InvalidParameter {
            name: "src".into(),
            reason: format!("node {src} outside dimension {}", coords.len()),
        });
    }
    let period = op.cells as f64;
    let x0 = coords[src];
    let wrap = |d: f64| d - period * (d / period).round();
    let distances: Vec<f64> = coords.iter().map(|x| wrap(x[0] - x0[0]).hypot(wrap(x[1] - x0[1]))).collect();
    let profile = Profile::analyze(&op.matrix);
    z_list
        .iter()
        .map(|&z| {
            if z.im == 0.0 {
                let eps = 1e-6;
                let below = inertia_count(&op.matrix, &profile, z.re - eps)?;
                let above = inertia_count(&op.matrix, &profile, z.re + eps)?;
                if below != above {
                    return Err(Error::InvalidParameter {
                        name: "z".into(),
                        reason: format!("probe energy {} is within {eps} of the supercell spectrum", z.re),
                    });
                }
            }
            let g = green_column(&op.matrix, op.grid.h(), z, src)?;
            fit_decay(&distances, &g.values, 0.5 * period, z)
        })
        .collect()
}

/// Decay fit of a Dirichlet Green column around `src`, for contrast with
/// the periodic probe; distances are plain Euclidean.
pub fn decay_probe_dirichlet(op: &DirichletOperator, z: C64, src: usize) -> Result<DecayFit> {
    let coords = &op.mask.coords;
    if src >= coords.len() {
        return Err(Error::InvalidParameter {
            name: "src".into(),
            reason: format!("node {src} outside dimension {}", coords.len()),
        });
    }
    let x0 = coords[src];
    let distances: Vec<f64> = coords.iter().map(|x| (x[0] - x0[0]).hypot(x[1] - x0[1])).collect();
    let g = green_column(&op.matrix, op.mask.h, z, src)?;
    let r_max = distances.iter().cloned().fold(0.0, f64::max);
    fit_decay(&distances, &g.values, r_max, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{gyro_rods, CoefficientField, GyroRodsParams};
    use crate::grid::{assemble_dirichlet, domain_mask, DomainShape};
    use faer::linalg::solvers::Solve;

    fn extension(order: usize) -> AlmostAnalytic {
        let m = Mollifier::new(1.0, 2.0).unwrap();
        almost_analytic(m, order, 1.0, 0.0).unwrap()
    }

    #[test]
    fn extension_restricts_to_g() {
        let aa = extension(3);
        for x in [-0.5, 0.5, 1.2, 1.7, 2.5] {
            assert!((aa.eval(C64::new(x, 0.0)).re - aa.moll.g(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn dbar_is_cubic_near_axis() {
        let aa = extension(3);
        let x = 1.37;
        let y = aa.y_max / 4.0;
        let ratio = aa.dbar(C64::new(x, y)).norm() / aa.dbar(C64::new(x, y / 2.0)).norm();
        assert!((ratio - 8.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn dbar_vanishes_off_transition_on_plateau() {
        let aa = extension(3);
        for x in [0.2, 0.9, 2.1, 3.0] {
            assert_eq!(aa.dbar(C64::new(x, 0.3)), C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn dbar_matches_finite_differences() {
        let aa = extension(3);
        let e = 1e-6;
        for z in [C64::new(1.3, 0.7), C64::new(0.4, -0.8), C64::new(1.8, 0.2)] {
            let dx = (aa.eval(z + e) - aa.eval(z - e)) / (2.0 * e);
            let dy = (aa.eval(z + C64::new(0.0, e)) - aa.eval(z - C64::new(0.0, e))) / (2.0 * e);
            let fd = (dx + C64::new(0.0, 1.0) * dy) * 0.5;
            assert!((fd - aa.dbar(z)).norm() < 1e-6, "{z}");
        }
    }

    #[test]
    fn order_is_limited() {
        let m = Mollifier::new(0.0, 1.0).unwrap();
        assert!(matches!(almost_analytic(m, 4, 1.0, 0.0), Err(Error::OrderTooHigh { .. })));
    }

    #[test]
    fn scalar_residue_reproduces_g() {
        let aa = extension(3);
        let q = aa.quadrature(200, 100).unwrap();
        for lambda in [0.3, 1.4, 1.5, 2.7] {
            let got = scalar_residue_check(&aa, &q, lambda);
            assert!((got - aa.moll.g(lambda)).abs() < 1e-3, "{lambda}: {got}");
        }
    }

    #[test]
    fn scalar_residue_refines() {
        let aa = extension(3);
        let err = |nx, ny| {
            let q = aa.quadrature(nx, ny).unwrap();
            (scalar_residue_check(&aa, &q, 1.4) - aa.moll.g(1.4)).abs()
        };
        assert!(err(200, 100) < err(100, 50));
    }

    #[test]
    fn gprime_of_diagonal_matrices() {
        let aa = extension(3);
        let q = aa.quadrature(200, 100).unwrap();
        let off = Mat::from_fn(3, 3, |i, j| if i == j { C64::new([0.2, 2.5, 3.0][i], 0.0) } else { C64::new(0.0, 0.0) });
        let r = hs_apply_gprime(&off, &aa, &q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(r.matrix[(i, j)].norm() < 1e-3);
            }
        }
        let one = Mat::from_fn(3, 3, |i, j| if i == j { C64::new([0.2, 1.5, 3.0][i], 0.0) } else { C64::new(0.0, 0.0) });
        let r = hs_apply_gprime(&one, &aa, &q).unwrap();
        assert!((r.matrix[(1, 1)].re - aa.moll.gprime(1.5)).abs() < 1e-3);
        assert!(r.matrix[(0, 0)].norm() < 1e-3);
    }

    #[test]
    fn gprime_of_random_hermitian() {
        let m = random_hermitian(50, 3);
        let moll = Mollifier::new(-0.5, 1.0).unwrap();
        let s = dense_herm_eig(&m).unwrap();
        let aa = almost_analytic(moll, 3, moll.width(), s.eigenvalues[0]).unwrap();
        let q = aa.quadrature(200, 100).unwrap();
        let r = hs_apply_gprime(&m, &aa, &q).unwrap();
        assert!(r.frobenius_error < 1e-3, "{}", r.frobenius_error);
    }

    #[test]
    fn gprime_error_is_second_order_in_the_grid() {
        let m = random_hermitian(50, 3);
        let moll = Mollifier::new(-0.5, 1.0).unwrap();
        let lowest = dense_herm_eig(&m).unwrap().eigenvalues[0];
        for order in [2, 3] {
            let aa = almost_analytic(moll, order, moll.width(), lowest).unwrap();
            let err = |nx, ny| hs_apply_gprime(&m, &aa, &aa.quadrature(nx, ny).unwrap()).unwrap().frobenius_error;
            let ratio = err(200, 100) / err(400, 200);
            assert!(ratio > 3.5, "order {order}: {ratio}");
        }
    }

    fn small_op(gamma0: f64) -> DirichletOperator {
        let f = gyro_rods(GyroRodsParams {
            a_bg: 1.0,
            a_rod: -0.9,
            gamma0,
            r0: 0.3,
            w: 0.1,
        })
        .unwrap();
        assemble_dirichlet(&f, &domain_mask(DomainShape::Disk, 1.5, 6).unwrap()).unwrap()
    }

    #[test]
    fn representations_agree_on_small_disk() {
        let op = small_op(0.095);
        let s = dense_herm_eig(&op.matrix.to_dense()).unwrap();
        let k = s.len() / 3;
        let moll = Mollifier::new(
            0.5 * (s.eigenvalues[k] + s.eigenvalues[k + 1]),
            0.5 * (s.eigenvalues[k + 6] + s.eigenvalues[k + 7]),
        )
        .unwrap();
        let aa = almost_analytic(moll, 3, moll.width(), s.eigenvalues[0]).unwrap();
        let r = verify_representation(&op, &aa, &aa.quadrature(200, 100).unwrap()).unwrap();
        assert_eq!(r.n_modes, 6);
        assert!(r.agrees(0.02, 1e-2), "{r:?}");
        // the two resolvent forms are algebraically the same trace
        assert!((r.ei_hs - r.ei_green).abs() < 1e-8 * r.ei_hs.abs().max(1.0));
    }

    #[test]
    fn representations_vanish_without_modes() {
        let op = small_op(0.095);
        let s = dense_herm_eig(&op.matrix.to_dense()).unwrap();
        let bottom = s.eigenvalues[0];
        let moll = Mollifier::new(0.25 * bottom, 0.75 * bottom).unwrap();
        let aa = almost_analytic(moll, 3, moll.width(), bottom).unwrap();
        let r = verify_representation(&op, &aa, &aa.quadrature(800, 100).unwrap()).unwrap();
        assert_eq!(r.n_modes, 0);
        for v in [r.ei_spec, r.ei_hs, r.ei_green] {
            assert!(v.abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn resolvent_trace_is_cyclic() {
        let op = small_op(0.095);
        let ops = position_velocity_ops(&op);
        let n = op.dim();
        let z = C64::new(3.0, 0.4);
        let shifted = Mat::from_fn(n, n, |i, j| op.matrix.get(i, j) - if i == j { z } else { C64::new(0.0, 0.0) });
        let r = shifted.full_piv_lu().solve(Mat::<C64>::identity(n, n));
        let r2 = &r * &r;
        let (v1, v2) = (ops.v1.to_dense(), ops.v2.to_dense());
        let a = &v1 * &r * &v2 * &r2;
        let b = &r2 * &v1 * &r * &v2;
        let (mut ta, mut tb) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for i in 0..n {
            ta += a[(i, i)];
            tb += b[(i, i)];
        }
        assert!((ta - tb).norm() < 1e-10 * ta.norm().max(1.0));
    }

    #[test]
    fn dimension_guard() {
        let m = Mat::<C64>::identity(HS_DENSE_MAX + 1, HS_DENSE_MAX + 1);
        let aa = extension(3);
        let q = aa.quadrature(4, 2).unwrap();
        assert!(matches!(hs_apply_gprime(&m, &aa, &q), Err(Error::DimensionGuard { .. })));
    }

    #[test]
    fn quadrature_avoids_real_axis() {
        assert!(ZQuadrature::new(0.0, 1.0, 1.0, 10, 5).is_err());
        let q = ZQuadrature::new(0.0, 1.0, 1.0, 10, 6).unwrap();
        assert!(q.nodes().iter().all(|(z, _)| z.im != 0.0));
        let total: f64 = q.nodes().iter().map(|n| n.1).sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_green_column_is_source() {
        let m = CsrMatrix::identity(7);
        let g = green_column(&m, 1.0, C64::new(0.0, 0.0), 3).unwrap();
        for (k, v) in g.values.iter().enumerate() {
            let want = if k == 3 { 1.0 } else { 0.0 };
            assert!((v - want).norm() < 1e-14);
        }
    }

    #[test]
    fn green_function_is_conjugate_symmetric_below_spectrum() {
        let op = small_op(0.095);
        let z = C64::new(-1.0, 0.0);
        let h = op.mask.h;
        let (p, q) = (4, op.dim() - 9);
        let gp = green_column(&op.matrix, h, z, p).unwrap();
        let gq = green_column(&op.matrix, h, z, q).unwrap();
        assert!((gp.values[q] - gq.values[p].conj()).norm() < 1e-10 * gp.values[q].norm().max(1e-3));
        assert!(gp.residual < GREEN_TOL);
    }

    #[test]
    fn free_resolvent_decays_at_unit_rate() {
        let op = crate::grid::assemble_supercell(&CoefficientField::Identity, 24, 4).unwrap();
        let src = op.index(0, 0);
        let fits = decay_probe(&op, &[C64::new(-1.0, 0.0)], src).unwrap();
        assert!((fits[0].rate - 1.0).abs() < 0.15, "{:?}", fits[0].rate);
        assert!(fits[0].r_squared > 0.9);
    }

    #[test]
    fn too_few_shells_are_refused() {
        let d = vec![0.6, 1.1, 1.6];
        let v = vec![C64::new(1.0, 0.0); 3];
        assert!(matches!(fit_decay(&d, &v, 2.0, C64::new(0.0, 0.0)), Err(Error::TooFewShells { .. })));
    }
}
