//! Band structures over the Brillouin zone, spectral gaps and the gap
//! Chern number by two independent discrete methods.
//!
//! Overlaps are taken between periodic parts `u = exp(-i kappa.x) v` of the
//! Bloch vectors. The eigenvectors are Euclidean-normalized, which equals
//! the `h^2`-weighted cell inner product up to a common factor, so frame
//! overlaps are unitary in the limit of fine `kappa` grids.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fmt::Write as _;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientField;
use crate::eig::{dense_herm_eig, solve, EigenSolveSpec, Spectrum};
use crate::grid::{assemble_bloch, UnitCellGrid};
use crate::{Error, Result, C64};

/// Uniform `N x N` grid of Bloch momenta `2 pi (i, j) / N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BZGrid {
    n_kappa: usize,
}

impl BZGrid {
    pub const MIN_N: usize = 4;

    pub fn new(n_kappa: usize) -> Result<Self> {
        if n_kappa < Self::MIN_N {
            return Err(Error::InvalidParameter {
                name: "N_kappa".into(),
                reason: format!("need at least {} points per side, got {n_kappa}", Self::MIN_N),
            });
        }
        Ok(BZGrid { n_kappa })
    }

    pub fn n_kappa(&self) -> usize {
        self.n_kappa
    }

    pub fn len(&self) -> usize {
        self.n_kappa * self.n_kappa
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of `(i, j)`, `i` fastest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        (i % self.n_kappa) + self.n_kappa * (j % self.n_kappa)
    }

    pub fn kappa(&self, i: usize, j: usize) -> [f64; 2] {
        let d = self.step();
        [d * i as f64, d * j as f64]
    }

    pub fn step(&self) -> f64 {
        2.0 * PI / self.n_kappa as f64
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        let n = self.n_kappa;
        (0..n * n).map(|k| self.kappa(k % n, k / n)).collect()
    }
}

/// Lowest `n_bands` Bloch eigenpairs at every point of a [`BZGrid`].
#[derive(Clone, Debug)]
pub struct BandStructure {
    pub bz: BZGrid,
    pub grid: UnitCellGrid,
    pub n_bands: usize,
    /// One spectrum per grid point in [`BZGrid::index`] order.
    pub spectra: Vec<Spectrum>,
    pub field: CoefficientField,
}

impl BandStructure {
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// `lambda_band(kappa_k)`, `band` zero-based.
    pub fn eigenvalue(&self, k: usize, band: usize) -> f64 {
        self.spectra[k].eigenvalues[band]
    }

    /// Largest eigenvalue change between grid neighbours, any band.
    pub fn max_neighbor_jump(&self) -> f64 {
        let n = self.bz.n_kappa();
        let mut jump = 0.0_f64;
        for j in 0..n {
            for i in 0..n {
                let k = self.bz.index(i, j);
                for nb in [self.bz.index(i + 1, j), self.bz.index(i, j + 1)] {
                    for b in 0..self.n_bands {
                        jump = jump.max((self.eigenvalue(k, b) - self.eigenvalue(nb, b)).abs());
                    }
                }
            }
        }
        jump
    }

    /// Fails when a band jumps by more than `guard` between neighbours.
    pub fn check_continuity(&self, guard: f64) -> Result<()> {
        let jump = self.max_neighbor_jump();
        if jump > guard {
            return Err(Error::Invalid(format!(
                "band jump {jump} between neighbouring kappa exceeds the guard {guard}; refine N_kappa"
            )));
        }
        Ok(())
    }

    /// CSV table `kappa1,kappa2,lambda_1,...,lambda_m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kappa1,kappa2");
        for b in 1..=self.n_bands {
            let _ = write!(out, ",lambda_{b}");
        }
        out.push('\n');
        let n = self.bz.n_kappa();
        for k in 0..self.bz.len() {
            let kap = self.bz.kappa(k % n, k / n);
            let _ = write!(out, "{:.12e},{:.12e}", kap[0], kap[1]);
            for b in 0..self.n_bands {
                let _ = write!(out, ",{:.12e}", self.eigenvalue(k, b));
            }
            out.push('\n');
        }
        out
    }
}

/// Unit cells up to this many nodes are diagonalized densely.
const DENSE_BLOCH_MAX: usize = 256;

fn lowest_bands(field: &CoefficientField, n: usize, kappa: [f64; 2], n_bands: usize) -> Result<Spectrum> {
    let op = assemble_bloch(field, n, kappa)?;
    if n * n <= DENSE_BLOCH_MAX {
        let full = dense_herm_eig(&op.matrix.to_dense())?;
        return Ok(truncate(full, n_bands));
    }
    let s = solve(&op.matrix, &EigenSolveSpec::lowest_k(n_bands))?;
    Ok(truncate(s, n_bands))
}

fn truncate(s: Spectrum, k: usize) -> Spectrum {
    Spectrum {
        eigenvalues: s.eigenvalues[..k].to_vec(),
        eigenvectors: s.eigenvectors.subcols(0, k).to_owned(),
        residuals: s.residuals[..k].to_vec(),
        inertia: None,
    }
}

/// Bloch solves over the whole grid, parallel over `kappa`.
pub fn compute_bands(field: &CoefficientField, n: usize, n_kappa: usize, n_bands: usize) -> Result<BandStructure> {
    let grid = UnitCellGrid::new(n)?;
    let bz = BZGrid::new(n_kappa)?;
    if n_bands == 0 || n_bands > n * n / 2 {
        return Err(Error::InvalidParameter {
            name: "n_bands".into(),
            reason: format!("need 1 <= n_bands <= n^2/2 = {}, got {n_bands}", n * n / 2),
        });
    }
    let spectra = bz
        .points()
        .into_par_iter()
        .map(|kappa| lowest_bands(field, n, kappa, n_bands))
        .collect::<Result<Vec<_>>>()?;
    Ok(BandStructure {
        bz,
        grid,
        n_bands,
        spectra,
        field: field.clone(),
    })
}

/// One sample of a band diagram along a polyline in the zone.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathSample {
    /// Arc length along the path.
    pub s: f64,
    pub kappa: [f64; 2],
    pub eigenvalues: Vec<f64>,
}

/// Standard square-lattice path `Gamma -> X -> M -> Gamma`.
pub fn high_symmetry_path() -> Vec<(&'static str, [f64; 2])> {
    vec![("G", [0.0, 0.0]), ("X", [PI, 0.0]), ("M", [PI, PI]), ("G", [0.0, 0.0])]
}

pub fn bands_along_path(
    field: &CoefficientField,
    n: usize,
    corners: &[[f64; 2]],
    per_segment: usize,
    n_bands: usize,
) -> Result<Vec<PathSample>> {
    UnitCellGrid::new(n)?;
    let mut points = Vec::new();
    let mut s = 0.0;
    for w in corners.windows(2) {
        let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        for k in 0..per_segment {
            let t = k as f64 / per_segment as f64;
            points.push((s + t * len, [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])]));
        }
        s += len;
    }
    if let Some(last) = corners.last() {
        points.push((s, *last));
    }
    points
        .into_par_iter()
        .map(|(s, kappa)| {
            let sp = lowest_bands(field, n, kappa, n_bands)?;
            Ok(PathSample {
                s,
                kappa,
                eigenvalues: sp.eigenvalues,
            })
        })
        .collect()
}

/// Relative width below which band edges count as touching; eigenvalue
/// roundoff at a degeneracy is not a gap.
pub const GAP_FLOOR: f64 = 1e-9;

/// Spectral gap above the first `n_filled` bands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapInfo {
    pub n_filled: usize,
    pub lambda_low: f64,
    pub lambda_upp: f64,
    pub width: f64,
}

impl GapInfo {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lambda_low + self.lambda_upp)
    }
}

pub fn find_gap(bands: &BandStructure, n_filled: usize) -> Result<GapInfo> {
    if n_filled == 0 || n_filled >= bands.n_bands {
        return Err(Error::InvalidParameter {
            name: "n_F".into(),
            reason: format!("need 1 <= n_F < n_bands = {}, got {n_filled}", bands.n_bands),
        });
    }
    let low = (0..bands.bz.len())
        .map(|k| bands.eigenvalue(k, n_filled - 1))
        .fold(f64::NEG_INFINITY, f64::max);
    let upp = (0..bands.bz.len())
        .map(|k| bands.eigenvalue(k, n_filled))
        .fold(f64::INFINITY, f64::min);
    let width = upp - low;
    if !(width > GAP_FLOOR * upp.abs().max(1.0)) {
        return Err(Error::NoGap {
            n_filled,
            overlap: -width,
        });
    }
    Ok(GapInfo {
        n_filled,
        lambda_low: low,
        lambda_upp: upp,
        width,
    })
}

/// Every gap above bands `1..n_bands-1` wider than `min_width`.
pub fn find_gaps(bands: &BandStructure, min_width: f64) -> Vec<GapInfo> {
    (1..bands.n_bands)
        .filter_map(|nf| find_gap(bands, nf).ok())
        .filter(|g| g.width > min_width)
        .collect()
}

fn cell_coords(grid: &UnitCellGrid) -> Vec<[f64; 2]> {
    let (n, h) = (grid.n(), grid.h());
    (0..n * n).map(|k| [(k % n) as f64 * h, (k / n) as f64 * h]).collect()
}

/// Periodic parts of the filled eigenvectors at every grid point.
#[derive(Clone, Debug)]
pub struct FilledFrames {
    pub bz: BZGrid,
    pub n_filled: usize,
    /// Node coordinates `(i h, j h)` of the unit cell.
    coords: Vec<[f64; 2]>,
    /// `dim x n_filled` per grid point.
    frames: Vec<Mat<C64>>,
}

impl FilledFrames {
    pub fn new(bands: &BandStructure, gap: &GapInfo) -> Result<Self> {
        let nf = gap.n_filled;
        if nf == 0 || nf >= bands.n_bands {
            return Err(Error::InvalidParameter {
                name: "n_F".into(),
                reason: format!("gap n_F = {nf} incompatible with {} bands", bands.n_bands),
            });
        }
        let n = bands.n();
        let coords = cell_coords(&bands.grid);
        let nk = bands.bz.n_kappa();
        let frames = (0..bands.bz.len())
            .map(|k| {
                let kap = bands.bz.kappa(k % nk, k / nk);
                let v = &bands.spectra[k].eigenvectors;
                Mat::from_fn(n * n, nf, |p, b| {
                    let x = coords[p];
                    C64::from_polar(1.0, -(kap[0] * x[0] + kap[1] * x[1])) * v[(p, b)]
                })
            })
            .collect();
        Ok(FilledFrames {
            bz: bands.bz,
            n_filled: nf,
            coords,
            frames,
        })
    }

    /// Frames given directly, one `dim x n_filled` matrix per grid point,
    /// with the node coordinates used for the zone wrap.
    pub fn from_parts(bz: BZGrid, coords: Vec<[f64; 2]>, frames: Vec<Mat<C64>>) -> Result<Self> {
        let n_filled = frames.first().map_or(0, |f| f.ncols());
        if frames.len() != bz.len() || frames.iter().any(|f| f.nrows() != coords.len() || f.ncols() != n_filled) {
            return Err(Error::Invalid("frame table does not match the zone grid".into()));
        }
        Ok(FilledFrames {
            bz,
            n_filled,
            coords,
            frames,
        })
    }

    /// Replaces each frame by `frame * W_k` with a random unitary `W_k`.
    pub fn remix(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nf = self.n_filled;
        for f in &mut self.frames {
            let g = Mat::<C64>::from_fn(nf, nf, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let q = g.qr().compute_Q();
            *f = &*f * &q;
        }
    }

    /// Frame at integer grid coordinates, outside the fundamental range
    /// through `u(kappa + 2 pi w) = exp(-2 pi i w.x) u(kappa)`.
    fn frame(&self, i: isize, j: isize) -> Cow<'_, Mat<C64>> {
        let n = self.bz.n_kappa() as isize;
        let (wi, wj) = (i.div_euclid(n), j.div_euclid(n));
        let stored = &self.frames[self.bz.index(i.rem_euclid(n) as usize, j.rem_euclid(n) as usize)];
        if wi == 0 && wj == 0 {
            return Cow::Borrowed(stored);
        }
        Cow::Owned(Mat::from_fn(stored.nrows(), stored.ncols(), |p, c| {
            let x = self.coords[p];
            C64::from_polar(1.0, -2.0 * PI * (wi as f64 * x[0] + wj as f64 * x[1])) * stored[(p, c)]
        }))
    }

    /// `U_a^H U_b` between grid coordinates `a` and `b`.
    fn overlap(&self, a: (isize, isize), b: (isize, isize)) -> Mat<C64> {
        self.frame(a.0, a.1).adjoint() * self.frame(b.0, b.1).as_ref()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChernMethod {
    Fhs,
    Projector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChernResult {
    pub value: f64,
    pub rounded: i64,
    pub method: ChernMethod,
    /// Per-plaquette flux (FHS) or curvature times cell area (projector),
    /// in [`BZGrid::index`] order.
    pub plaquette_fluxes: Vec<f64>,
    pub quantization_error: f64,
}

impl ChernResult {
    fn from_fluxes(method: ChernMethod, fluxes: Vec<f64>) -> Self {
        let value = fluxes.iter().sum::<f64>() / (2.0 * PI);
        let rounded = value.round() as i64;
        ChernResult {
            value,
            rounded,
            method,
            quantization_error: (value - rounded as f64).abs(),
            plaquette_fluxes: fluxes,
        }
    }
}

/// Link-variable plaquette Chern number of the filled frames.
pub fn chern_fhs(bands: &BandStructure, gap: &GapInfo) -> Result<ChernResult> {
    chern_fhs_frames(&FilledFrames::new(bands, gap)?)
}

pub fn chern_fhs_frames(frames: &FilledFrames) -> Result<ChernResult> {
    let n = frames.bz.n_kappa();
    // unit links U_mu(k) for mu = 1, 2
    let mut links = vec![[C64::new(0.0, 0.0); 2]; n * n];
    for j in 0..n {
        for i in 0..n {
            for (mu, (di, dj)) in [(1isize, 0isize), (0, 1)].into_iter().enumerate() {
                let (i, j) = (i as isize, j as isize);
                let det = frames.overlap((i, j), (i + di, j + dj)).determinant();
                if det.norm() < 1e-8 {
                    return Err(Error::CoarseLinks {
                        det: det.norm(),
                        i: i as usize,
                        j: j as usize,
                    });
                }
                links[frames.bz.index(i as usize, j as usize)][mu] = det / det.norm();
            }
        }
    }
    let mut fluxes = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let k = frames.bz.index(i, j);
            let u1 = links[k][0];
            let u2_right = links[frames.bz.index(i + 1, j)][1];
            let u1_top = links[frames.bz.index(i, j + 1)][0];
            let u2 = links[k][1];
            let loop_product = u1 * u2_right * u1_top.conj() * u2.conj();
            // -Im log of the counterclockwise product
            let mut phi = -loop_product.arg();
            if phi <= -PI {
                phi += 2.0 * PI;
            }
            fluxes.push(phi);
        }
    }
    Ok(ChernResult::from_fluxes(ChernMethod::Fhs, fluxes))
}

/// How the projector curvature differentiates in `kappa`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureStencil {
    /// Centred differences of step `eta` around each plaquette centre, from
    /// extra Bloch solves at `kappa +- eta e_j`.
    Local { eta: f64 },
    /// Centred differences of the given order using neighbouring grid
    /// points only.
    Grid { order: usize },
}

impl Default for CurvatureStencil {
    fn default() -> Self {
        CurvatureStencil::Local { eta: 1e-4 }
    }
}

/// Half-stencil weights of centred first differences:
/// `f'(0) ~ (1/d) sum_a w_a (f(a d) - f(-a d))`.
fn centred_weights(order: usize) -> Result<&'static [f64]> {
    match order {
        2 => Ok(&[0.5]),
        4 => Ok(&[2.0 / 3.0, -1.0 / 12.0]),
        6 => Ok(&[3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0]),
        8 => Ok(&[4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0]),
        _ => Err(Error::InvalidParameter {
            name: "fd_order".into(),
            reason: format!("centred difference order must be 2, 4, 6 or 8, got {order}"),
        }),
    }
}

/// Signed stencil `(offset, weight)` from half weights.
fn full_stencil(half: &[f64]) -> Vec<(isize, f64)> {
    half.iter()
        .enumerate()
        .flat_map(|(a, &w)| [(a as isize + 1, w), (-(a as isize) - 1, -w)])
        .collect()
}

/// `-2 Im sum_{a,b} w_a w_b Tr[O_{0,1a} O_{1a,2b} O_{2b,0}]`, which is
/// `i Tr(P [d1 P, d2 P])` times the squared difference step.
fn curvature_sum<F>(stencil: &[(isize, f64)], n_filled: usize, overlap: F) -> f64
where
    F: Fn((isize, isize), (isize, isize)) -> Mat<C64>,
{
    let o = (0, 0);
    let mut acc = 0.0;
    for &(a, wa) in stencil {
        let p1 = (a, 0);
        let o01 = overlap(o, p1);
        for &(b, wb) in stencil {
            let p2 = (0, b);
            let prod = &o01 * overlap(p1, p2) * overlap(p2, o);
            let mut tr = C64::new(0.0, 0.0);
            for d in 0..n_filled {
                tr += prod[(d, d)];
            }
            acc += wa * wb * tr.im;
        }
    }
    -2.0 * acc
}

/// Projector-curvature Chern number `F = i Tr(P [d1 P, d2 P])`,
/// integrated by the midpoint rule over the zone grid.
pub fn chern_projector(bands: &BandStructure, gap: &GapInfo) -> Result<ChernResult> {
    chern_projector_with(bands, gap, CurvatureStencil::default())
}

pub fn chern_projector_with(bands: &BandStructure, gap: &GapInfo, stencil: CurvatureStencil) -> Result<ChernResult> {
    match stencil {
        CurvatureStencil::Grid { order } => chern_projector_frames(&FilledFrames::new(bands, gap)?, order),
        CurvatureStencil::Local { eta } => {
            let nf = gap.n_filled;
            if nf == 0 || nf >= bands.n_bands {
                return Err(Error::InvalidParameter {
                    name: "n_F".into(),
                    reason: format!("gap n_F = {nf} incompatible with {} bands", bands.n_bands),
                });
            }
            let n = bands.n();
            let field = &bands.field;
            let coords = &cell_coords(&bands.grid);
            chern_projector_local(bands.bz, eta, |kappa| {
                let sp = lowest_bands(field, n, kappa, nf)?;
                Ok(Mat::from_fn(n * n, nf, |p, b| {
                    let x = coords[p];
                    C64::from_polar(1.0, -(kappa[0] * x[0] + kappa[1] * x[1])) * sp.eigenvectors[(p, b)]
                }))
            })
        }
    }
}

/// Local-difference projector curvature with filled frames supplied by
/// `source(kappa)` (periodic parts, orthonormal columns). The curvature is
/// sampled at plaquette centres, so flux `k` covers the same plaquette as
/// the FHS flux `k`.
pub fn chern_projector_local<F>(bz: BZGrid, eta: f64, source: F) -> Result<ChernResult>
where
    F: Fn([f64; 2]) -> Result<Mat<C64>> + Sync,
{
    if !(eta > 0.0 && eta < 0.5 * bz.step()) {
        return Err(Error::InvalidParameter {
            name: "eta".into(),
            reason: format!("difference step must lie in (0, delta/2), got {eta}"),
        });
    }
    let stencil = full_stencil(centred_weights(2)?);
    let area = bz.step() * bz.step() / (eta * eta);
    let n = bz.n_kappa();
    let fluxes = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let corner = bz.kappa(k % n, k / n);
            let kap = [corner[0] + 0.5 * bz.step(), corner[1] + 0.5 * bz.step()];
            let at = |(a, b): (isize, isize)| source([kap[0] + a as f64 * eta, kap[1] + b as f64 * eta]);
            let mut cache: Vec<((isize, isize), Mat<C64>)> = Vec::with_capacity(5);
            for p in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                cache.push((p, at(p)?));
            }
            let n_filled = cache[0].1.ncols();
            let get = |p: (isize, isize)| &cache.iter().find(|(q, _)| *q == p).unwrap().1;
            let sum = curvature_sum(&stencil, n_filled, |a, b| get(a).adjoint() * get(b));
            Ok(area * sum)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ChernResult::from_fluxes(ChernMethod::Projector, fluxes))
}

/// Grid-stencil projector curvature: derivatives from neighbouring grid
/// frames with centred differences of order `fd_order`.
pub fn chern_projector_frames(frames: &FilledFrames, fd_order: usize) -> Result<ChernResult> {
    let half = centred_weights(fd_order)?;
    let n = frames.bz.n_kappa();
    if 2 * half.len() >= n {
        return Err(Error::InvalidParameter {
            name: "fd_order".into(),
            reason: format!("stencil of order {fd_order} does not fit a {n}-point zone grid"),
        });
    }
    let stencil = full_stencil(half);
    let fluxes = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let o = ((k % n) as isize, (k / n) as isize);
            curvature_sum(&stencil, frames.n_filled, |a, b| {
                frames.overlap((o.0 + a.0, o.1 + a.1), (o.0 + b.0, o.1 + b.1))
            })
        })
        .collect();
    Ok(ChernResult::from_fluxes(ChernMethod::Projector, fluxes))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lower-band frames of the two-band lattice model
    /// `sin k1 s1 + sin k2 s2 + (m + cos k1 + cos k2) s3`.
    fn two_band_frames(n_kappa: usize, m: f64) -> FilledFrames {
        let bz = BZGrid::new(n_kappa).unwrap();
        let frames = bz
            .points()
            .into_iter()
            .map(|k| {
                let d = [k[0].sin(), k[1].sin(), m + k[0].cos() + k[1].cos()];
                let h = Mat::from_fn(2, 2, |i, j| match (i, j) {
                    (0, 0) => C64::new(d[2], 0.0),
                    (1, 1) => C64::new(-d[2], 0.0),
                    (0, 1) => C64::new(d[0], -d[1]),
                    _ => C64::new(d[0], d[1]),
                });
                let s = dense_herm_eig(&h).unwrap();
                s.eigenvectors.subcols(0, 1).to_owned()
            })
            .collect();
        FilledFrames::from_parts(bz, vec![[0.0, 0.0]; 2], frames).unwrap()
    }

    /// Same model with analytic frames at arbitrary `kappa`.
    fn two_band_frame(k: [f64; 2], m: f64) -> Mat<C64> {
        let d = [k[0].sin(), k[1].sin(), m + k[0].cos() + k[1].cos()];
        let h = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => C64::new(d[2], 0.0),
            (1, 1) => C64::new(-d[2], 0.0),
            (0, 1) => C64::new(d[0], -d[1]),
            _ => C64::new(d[0], d[1]),
        });
        dense_herm_eig(&h).unwrap().eigenvectors.subcols(0, 1).to_owned()
    }

    #[test]
    fn two_band_model_methods_agree() {
        let f = two_band_frames(16, 1.0);
        let fhs = chern_fhs_frames(&f).unwrap();
        assert_eq!(fhs.rounded.abs(), 1);
        assert!(fhs.quantization_error < 1e-12);
        let local = chern_projector_local(f.bz, 1e-4, |k| Ok(two_band_frame(k, 1.0))).unwrap();
        assert!((local.value - fhs.value).abs() < 1e-2, "{} {}", local.value, fhs.value);
        let grid = chern_projector_frames(&f, 8).unwrap();
        assert!((grid.value - fhs.value).abs() < 1e-2, "{} {}", grid.value, fhs.value);
        let trivial = chern_fhs_frames(&two_band_frames(16, 3.0)).unwrap();
        assert_eq!(trivial.rounded, 0);
    }

    #[test]
    fn grid_stencil_rejects_bad_orders() {
        let f = two_band_frames(8, 1.0);
        assert!(chern_projector_frames(&f, 3).is_err());
        assert!(chern_projector_frames(&f, 8).is_err());
        assert!(chern_projector_local(f.bz, 1.0, |k| Ok(two_band_frame(k, 1.0))).is_err());
    }

    #[test]
    fn gauge_remix_leaves_flux_unchanged() {
        let mut f = two_band_frames(12, -1.0);
        let before = chern_fhs_frames(&f).unwrap();
        f.remix(7);
        let after = chern_fhs_frames(&f).unwrap();
        for (a, b) in before.plaquette_fluxes.iter().zip(&after.plaquette_fluxes) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn free_bands_match_symbol() {
        let b = compute_bands(&CoefficientField::Identity, 8, 4, 6).unwrap();
        let h = b.grid.h();
        let sym = |k: f64| (2.0 - 2.0 * (k * h).cos()) / (h * h);
        for j in 0..4 {
            for i in 0..4 {
                let kap = b.bz.kappa(i, j);
                let mut expect: Vec<f64> = Vec::new();
                for p in -3i32..=3 {
                    for q in -3i32..=3 {
                        let k1 = kap[0] + 2.0 * PI * p as f64;
                        let k2 = kap[1] + 2.0 * PI * q as f64;
                        expect.push(sym(k1) + sym(k2));
                    }
                }
                expect.sort_by(f64::total_cmp);
                let got = &b.spectra[b.bz.index(i, j)].eigenvalues;
                for (g, e) in got.iter().zip(&expect) {
                    assert!((g - e).abs() < 1e-8 * e.max(1.0), "{g} {e}");
                }
            }
        }
        assert!(b.eigenvalue(0, 0).abs() < 1e-8);
    }

    #[test]
    fn free_bands_have_no_first_gap() {
        let b = compute_bands(&CoefficientField::Identity, 8, 4, 4).unwrap();
        assert!(matches!(find_gap(&b, 1), Err(Error::NoGap { .. })));
    }

    fn rods(gamma0: f64) -> CoefficientField {
        crate::coeff::gyro_rods(crate::coeff::GyroRodsParams {
            a_bg: 1.0,
            a_rod: 10.0,
            gamma0,
            r0: 0.4,
            w: 0.05,
        })
        .unwrap()
    }

    #[test]
    fn time_reversal_symmetric_bands_are_even() {
        let b = compute_bands(&rods(0.0), 8, 4, 4).unwrap();
        let n = 4;
        for j in 0..n {
            for i in 0..n {
                let a = &b.spectra[b.bz.index(i, j)].eigenvalues;
                let c = &b.spectra[b.bz.index((n - i) % n, (n - j) % n)].eigenvalues;
                for (x, y) in a.iter().zip(c) {
                    assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn time_reversal_symmetric_gap_is_trivial() {
        let b = compute_bands(&rods(0.0), 8, 6, 3).unwrap();
        let gap = find_gap(&b, 1).unwrap();
        let fhs = chern_fhs(&b, &gap).unwrap();
        assert_eq!(fhs.rounded, 0);
        assert!(fhs.value.abs() < 1e-10);
        let proj = chern_projector(&b, &gap).unwrap();
        assert!(proj.value.abs() < 1e-6, "{}", proj.value);
    }

    #[test]
    fn find_gap_reports_exact_endpoints() {
        let bz = BZGrid::new(4).unwrap();
        let spectra = (0..bz.len())
            .map(|k| {
                let t = k as f64 / 16.0;
                Spectrum {
                    eigenvalues: vec![t, 0.5 + t, 3.0 - t],
                    eigenvectors: Mat::zeros(16, 3),
                    residuals: vec![0.0; 3],
                    inertia: None,
                }
            })
            .collect();
        let b = BandStructure {
            bz,
            grid: UnitCellGrid::new(4).unwrap(),
            n_bands: 3,
            spectra,
            field: CoefficientField::Identity,
        };
        let g = find_gap(&b, 2).unwrap();
        assert_eq!(g.lambda_low, 0.5 + 15.0 / 16.0);
        assert_eq!(g.lambda_upp, 3.0 - 15.0 / 16.0);
        assert_eq!(g.width, g.lambda_upp - g.lambda_low);
        assert!(matches!(find_gap(&b, 1), Err(Error::NoGap { .. })));
    }

    #[test]
    fn conjugate_medium_flips_chern() {
        let field = |g: f64| {
            crate::coeff::gyro_rods(crate::coeff::GyroRodsParams {
                a_bg: 1.0,
                a_rod: -0.9,
                gamma0: g,
                r0: 0.3,
                w: 0.1,
            })
            .unwrap()
        };
        let plus = compute_bands(&field(0.095), 12, 8, 3).unwrap();
        let minus = compute_bands(&field(-0.095), 12, 8, 3).unwrap();
        let cp = chern_fhs(&plus, &find_gap(&plus, 2).unwrap()).unwrap();
        let cm = chern_fhs(&minus, &find_gap(&minus, 2).unwrap()).unwrap();
        assert_eq!(cp.rounded, 1);
        assert!((cp.value + cm.value).abs() < 1e-3);
    }

    #[test]
    fn band_count_is_validated() {
        assert!(compute_bands(&CoefficientField::Identity, 4, 4, 9).is_err());
        assert!(compute_bands(&CoefficientField::Identity, 4, 4, 0).is_err());
    }
}
