//! Flux-form finite-difference discretizations of `L = -div(A grad)`.
//!
//! All operators share one stencil: `L_h = sum_ij D_i^H M_ij D_j`, where the
//! diagonal blocks use forward differences sampled at edge midpoints and the
//! off-diagonal blocks use differences averaged to cell centres, with
//! `M_21 = conj(M_12)` taken from the same sample. The stencil lives on the
//! global lattice `h Z^2` so the unit cell, the supercell and the finite
//! domain all see the same medium samples.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::coeff::{verify_field, CoefficientField};
use crate::sparse::{CsrMatrix, Triplets};
use crate::{Error, Result, C64};

/// Nodes `(i h, j h)` of the unit cell, `h = 1 / n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitCellGrid {
    n: usize,
    h: f64,
}

impl UnitCellGrid {
    pub const MIN_N: usize = 4;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_N {
            return Err(Error::GridTooSmall { n, min: Self::MIN_N });
        }
        Ok(UnitCellGrid { n, h: 1.0 / n as f64 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// Periodic operator on `cells x cells` unit cells with quasi-periodic
/// boundary conditions `v(x + e_j) = exp(i kappa_j) v(x)` across the block.
///
/// `cells = 1` is the Bloch operator `L(kappa)`; larger blocks are
/// supercells.
#[derive(Clone, Debug)]
pub struct BlochOperator {
    pub kappa: [f64; 2],
    pub matrix: CsrMatrix,
    pub grid: UnitCellGrid,
    pub cells: usize,
}

impl BlochOperator {
    /// Nodes per side of the periodic block.
    pub fn side(&self) -> usize {
        self.cells * self.grid.n
    }

    /// Node index of lattice site `(i, j)`, `0 <= i, j < side`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.side() * j
    }

    /// Node coordinates in cell units, ordered by index.
    pub fn coords(&self) -> Vec<[f64; 2]> {
        let m = self.side();
        let h = self.grid.h;
        (0..m * m)
            .map(|k| [(k % m) as f64 * h, (k / m) as f64 * h])
            .collect()
    }
}

/// Shape of the reference domain `Omega` (containing the origin).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainShape {
    /// Unit disk.
    Disk,
    /// Polar radius `1 + 0.3 cos(3 theta)`.
    SmoothBlob,
    /// Square of side 2. Its corners are not smooth; kept for diagnostics.
    Square,
}

impl DomainShape {
    pub fn name(&self) -> &'static str {
        match self {
            DomainShape::Disk => "disk",
            DomainShape::SmoothBlob => "smooth_blob",
            DomainShape::Square => "square",
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, DomainShape::Square)
    }

    /// Strict interior test for `L * Omega`.
    pub fn contains(&self, scale: f64, x: [f64; 2]) -> bool {
        match self {
            DomainShape::Disk => x[0].hypot(x[1]) < scale,
            DomainShape::SmoothBlob => {
                let r = x[0].hypot(x[1]);
                let theta = x[1].atan2(x[0]);
                r < scale * (1.0 + 0.3 * (3.0 * theta).cos())
            }
            DomainShape::Square => x[0].abs() < scale && x[1].abs() < scale,
        }
    }

    /// Continuum area of `L * Omega`.
    pub fn area(&self, scale: f64) -> f64 {
        match self {
            DomainShape::Disk => PI * scale * scale,
            // (1/2) int (1 + 0.3 cos 3t)^2 dt = pi (1 + 0.045)
            DomainShape::SmoothBlob => PI * (1.0 + 0.045) * scale * scale,
            DomainShape::Square => 4.0 * scale * scale,
        }
    }

    /// Circumradius of `Omega`.
    fn extent(&self) -> f64 {
        match self {
            DomainShape::Disk => 1.0,
            DomainShape::SmoothBlob => 1.3,
            DomainShape::Square => std::f64::consts::SQRT_2,
        }
    }
}

impl std::str::FromStr for DomainShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(DomainShape::Disk),
            "smooth_blob" => Ok(DomainShape::SmoothBlob),
            "square" => Ok(DomainShape::Square),
            other => Err(Error::Invalid(format!("unknown domain shape `{other}`"))),
        }
    }
}

/// Interior lattice nodes of `L * Omega` on the grid `h Z^2`, origin
/// centred.
#[derive(Clone, Debug)]
pub struct DomainMask {
    pub shape: DomainShape,
    pub scale: f64,
    pub n: usize,
    pub h: f64,
    /// Lattice coordinates of interior nodes, row-major (`j` slow).
    pub nodes: Vec<(i64, i64)>,
    /// Node positions in cell units.
    pub coords: Vec<[f64; 2]>,
    /// Number of interior nodes times `h^2`.
    pub area: f64,
    /// Distance (cell units) to the nearest non-interior lattice node
    /// adjacent to the interior.
    pub boundary_distance: Vec<f64>,
    lookup: HashMap<(i64, i64), usize>,
}

impl DomainMask {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, i: i64, j: i64) -> Option<usize> {
        self.lookup.get(&(i, j)).copied()
    }
}

pub fn domain_mask(shape: DomainShape, scale: f64, n: usize) -> Result<DomainMask> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter {
            name: "L".into(),
            reason: format!("scale must be positive, got {scale}"),
        });
    }
    let grid = UnitCellGrid::new(n)?;
    let h = grid.h;
    let reach = (shape.extent() * scale / h).ceil() as i64 + 1;
    let mut nodes = Vec::new();
    let mut coords = Vec::new();
    let mut lookup = HashMap::new();
    for j in -reach..=reach {
        for i in -reach..=reach {
            let x = [i as f64 * h, j as f64 * h];
            if shape.contains(scale, x) {
                lookup.insert((i, j), nodes.len());
                nodes.push((i, j));
                coords.push(x);
            }
        }
    }
    if nodes.is_empty() {
        return Err(Error::EmptyDomain {
            shape: shape.name().into(),
            scale,
            n,
        });
    }
    let mut boundary: Vec<[f64; 2]> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &(i, j) in &nodes {
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let q = (i + di, j + dj);
            if !lookup.contains_key(&q) && seen.insert(q) {
                boundary.push([q.0 as f64 * h, q.1 as f64 * h]);
            }
        }
    }
    let boundary_distance = coords
        .iter()
        .map(|x| {
            boundary
                .iter()
                .map(|b| (x[0] - b[0]).hypot(x[1] - b[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let area = nodes.len() as f64 * h * h;
    Ok(DomainMask {
        shape,
        scale,
        n,
        h,
        nodes,
        coords,
        area,
        boundary_distance,
        lookup,
    })
}

/// `L` restricted to the interior nodes of a mask; exterior values are 0.
#[derive(Clone, Debug)]
pub struct DirichletOperator {
    pub matrix: CsrMatrix,
    pub mask: DomainMask,
    pub field: CoefficientField,
}

impl DirichletOperator {
    pub fn dim(&self) -> usize {
        self.mask.len()
    }
}

fn check_field(field: &CoefficientField, n: usize) -> Result<()> {
    let report = verify_field(field, (2 * n).max(16), 1e-12)?;
    if !report.passed {
        return Err(Error::FieldVerification(report.failures.join("; ")));
    }
    Ok(())
}

/// Shared stencil loop. `cells` lists the lower-left lattice corners whose
/// two edges and one cell centre are visited; `node` maps a lattice site to
/// its unknown and phase, or `None` for a zero exterior value.
fn assemble_stencil<I, F>(
    field: &CoefficientField,
    h: f64,
    dim: usize,
    cells: I,
    node: F,
) -> CsrMatrix
where
    I: IntoIterator<Item = (i64, i64)>,
    F: Fn(i64, i64) -> Option<(usize, C64)>,
{
    let mut t = Triplets::with_capacity(dim * 25);
    let inv_h = 1.0 / h;
    let half_inv_h = 0.5 / h;
    let mut add_form = |left: &[(usize, C64)], coef: C64, right: &[(usize, C64)]| {
        for &(p, rp) in left {
            for &(q, rq) in right {
                t.push(p, q, rp.conj() * coef * rq);
            }
        }
    };
    let mut d1: Vec<(usize, C64)> = Vec::with_capacity(4);
    let mut d2: Vec<(usize, C64)> = Vec::with_capacity(4);
    for (i, j) in cells {
        let ll = node(i, j);
        let lr = node(i + 1, j);
        let ul = node(i, j + 1);
        let ur = node(i + 1, j + 1);
        if ll.is_none() && lr.is_none() && ul.is_none() && ur.is_none() {
            continue;
        }
        let (xi, xj) = (i as f64 * h, j as f64 * h);

        // x-edge (i, j) -> (i + 1, j)
        let diff: Vec<(usize, C64)> = [(ll, -inv_h), (lr, inv_h)]
            .into_iter()
            .filter_map(|(nd, w)| nd.map(|(p, ph)| (p, ph * w)))
            .collect();
        if !diff.is_empty() {
            let a = field.sample([xi + 0.5 * h, xj]);
            add_form(&diff, C64::new(a.a11, 0.0), &diff);
        }
        // y-edge (i, j) -> (i, j + 1)
        let diff: Vec<(usize, C64)> = [(ll, -inv_h), (ul, inv_h)]
            .into_iter()
            .filter_map(|(nd, w)| nd.map(|(p, ph)| (p, ph * w)))
            .collect();
        if !diff.is_empty() {
            let a = field.sample([xi, xj + 0.5 * h]);
            add_form(&diff, C64::new(a.a22, 0.0), &diff);
        }
        // cell centre: cross terms
        let a = field.sample([xi + 0.5 * h, xj + 0.5 * h]);
        if a.a12 != C64::new(0.0, 0.0) {
            d1.clear();
            d2.clear();
            for (nd, w1, w2) in [
                (ll, -half_inv_h, -half_inv_h),
                (lr, half_inv_h, -half_inv_h),
                (ul, -half_inv_h, half_inv_h),
                (ur, half_inv_h, half_inv_h),
            ] {
                if let Some((p, ph)) = nd {
                    d1.push((p, ph * w1));
                    d2.push((p, ph * w2));
                }
            }
            add_form(&d1, a.a12, &d2);
            add_form(&d2, a.a21(), &d1);
        }
    }
    let mut m = t.into_csr(dim);
    m.symmetrize_hermitian();
    m
}

fn periodic_block(
    field: &CoefficientField,
    grid: UnitCellGrid,
    cells: usize,
    kappa: [f64; 2],
) -> BlochOperator {
    let m = cells * grid.n;
    let mi = m as i64;
    let phase = [C64::from_polar(1.0, kappa[0]), C64::from_polar(1.0, kappa[1])];
    let node = |i: i64, j: i64| {
        let (wi, ri) = (i.div_euclid(mi), i.rem_euclid(mi));
        let (wj, rj) = (j.div_euclid(mi), j.rem_euclid(mi));
        let ph = phase[0].powi(wi as i32) * phase[1].powi(wj as i32);
        Some((ri as usize + m * rj as usize, ph))
    };
    let corners = (0..mi).flat_map(|j| (0..mi).map(move |i| (i, j)));
    let matrix = assemble_stencil(field, grid.h, m * m, corners, node);
    BlochOperator {
        kappa,
        matrix,
        grid,
        cells,
    }
}

/// Bloch operator `L(kappa)` on the unit cell, quasi-periodic convention.
pub fn assemble_bloch(field: &CoefficientField, n: usize, kappa: [f64; 2]) -> Result<BlochOperator> {
    let grid = UnitCellGrid::new(n)?;
    check_field(field, n)?;
    Ok(periodic_block(field, grid, 1, kappa))
}

/// Periodic operator on an `cells x cells` supercell at `kappa = 0`.
pub fn assemble_supercell(field: &CoefficientField, cells: usize, n: usize) -> Result<BlochOperator> {
    assemble_supercell_at(field, cells, n, [0.0, 0.0])
}

/// Supercell operator with a supercell Bloch phase.
pub fn assemble_supercell_at(
    field: &CoefficientField,
    cells: usize,
    n: usize,
    kappa: [f64; 2],
) -> Result<BlochOperator> {
    if cells == 0 {
        return Err(Error::InvalidParameter {
            name: "L".into(),
            reason: "supercell needs at least one cell".into(),
        });
    }
    let grid = UnitCellGrid::new(n)?;
    check_field(field, n)?;
    Ok(periodic_block(field, grid, cells, kappa))
}

pub fn assemble_dirichlet(field: &CoefficientField, mask: &DomainMask) -> Result<DirichletOperator> {
    if mask.is_empty() {
        return Err(Error::EmptyDomain {
            shape: mask.shape.name().into(),
            scale: mask.scale,
            n: mask.n,
        });
    }
    check_field(field, mask.n)?;
    let (imin, imax) = mask.nodes.iter().fold((i64::MAX, i64::MIN), |(lo, hi), &(i, _)| {
        (lo.min(i), hi.max(i))
    });
    let (jmin, jmax) = mask.nodes.iter().fold((i64::MAX, i64::MIN), |(lo, hi), &(_, j)| {
        (lo.min(j), hi.max(j))
    });
    let one = C64::new(1.0, 0.0);
    let node = |i: i64, j: i64| mask.index_of(i, j).map(|p| (p, one));
    let corners = (jmin - 1..=jmax).flat_map(|j| (imin - 1..=imax).map(move |i| (i, j)));
    let matrix = assemble_stencil(field, mask.h, mask.len(), corners, node);
    Ok(DirichletOperator {
        matrix,
        mask: mask.clone(),
        field: field.clone(),
    })
}

/// Position and velocity observables `X_i`, `V_i = [L, X_i]`.
#[derive(Clone, Debug)]
pub struct CommutatorOps {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub v1: CsrMatrix,
    pub v2: CsrMatrix,
}

impl CommutatorOps {
    /// Commutators of an arbitrary matrix with diagonal positions.
    pub fn from_matrix(matrix: &CsrMatrix, coords: &[[f64; 2]]) -> Self {
        let x1: Vec<f64> = coords.iter().map(|c| c[0]).collect();
        let x2: Vec<f64> = coords.iter().map(|c| c[1]).collect();
        let v1 = matrix.commutator_with_diagonal(&x1);
        let v2 = matrix.commutator_with_diagonal(&x2);
        CommutatorOps { x1, x2, v1, v2 }
    }

    /// `X1 V2 - X2 V1`.
    pub fn circulation_operator(&self) -> CsrMatrix {
        self.v2.mul_diag_left(&self.x1).sub(&self.v1.mul_diag_left(&self.x2))
    }

    /// `V2 X1 - V1 X2`.
    pub fn circulation_operator_right(&self) -> CsrMatrix {
        self.v2.mul_diag_right(&self.x1).sub(&self.v1.mul_diag_right(&self.x2))
    }

    /// Max entry deviation in `X1 V2 - X2 V1 = V2 X1 - V1 X2`.
    pub fn jacobi_residual(&self) -> f64 {
        self.circulation_operator()
            .max_abs_diff(&self.circulation_operator_right())
    }

    /// Max entry of `V_i^H + V_i` over both directions.
    pub fn anti_hermiticity_residual(&self) -> f64 {
        self.v1
            .anti_hermiticity_residual()
            .max(self.v2.anti_hermiticity_residual())
    }
}

pub fn position_velocity_ops(op: &DirichletOperator) -> CommutatorOps {
    CommutatorOps::from_matrix(&op.matrix, &op.mask.coords)
}
