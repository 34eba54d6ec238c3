//! Edge index of a Dirichlet-truncated medium and its diagnostics.
//!
//! The edge index is the trace of `i (X1 V2 - X2 V1) g'(L)` with `g` a
//! smooth switch across the gap. Since `g'` vanishes outside the gap only
//! in-gap eigenpairs contribute, so the trace is a finite spectral sum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bulk::{chern_fhs, compute_bands, find_gap, ChernResult, GapInfo};
use crate::coeff::CoefficientField;
use crate::eig::{solve, EigenSolveSpec, SolverSettings, Spectrum};
use crate::grid::{assemble_dirichlet, domain_mask, position_velocity_ops, CommutatorOps, DirichletOperator, DomainMask, DomainShape};
use crate::stats::{linear_fit, spearman};
use crate::{Error, Result, C64};

/// Coefficients of `S7(s) = 35 s^4 - 84 s^5 + 70 s^6 - 20 s^7`.
const S7: [f64; 8] = [0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0];

/// Boundary band width, in cells, for [`boundary_mass_fraction`].
pub const BOUNDARY_BAND: f64 = 2.0;

pub const DEFAULT_MARGIN: f64 = 0.15;

fn poly_derivative(k: usize, s: f64) -> f64 {
    let mut acc = 0.0;
    for p in (k..S7.len()).rev() {
        let falling: f64 = (p - k + 1..=p).map(|q| q as f64).product();
        acc = acc * s + S7[p] * falling;
    }
    acc
}

/// Smooth switch `g` from 1 below `a` to 0 above `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub a: f64,
    pub b: f64,
}

impl Mollifier {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mollifier".into(),
                reason: format!("need finite a < b, got ({a}, {b})"),
            });
        }
        Ok(Mollifier { a, b })
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    fn s(&self, lambda: f64) -> f64 {
        (lambda - self.a) / self.width()
    }

    pub fn g(&self, lambda: f64) -> f64 {
        self.derivative(0, lambda)
    }

    pub fn gprime(&self, lambda: f64) -> f64 {
        self.derivative(1, lambda)
    }

    /// `g^(k)(lambda)`. The switch is a polynomial on `[a, b]`, so every
    /// order has a closed form; orders up to 3 are continuous at the joins.
    pub fn derivative(&self, k: usize, lambda: f64) -> f64 {
        if lambda <= self.a {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        if lambda >= self.b {
            return 0.0;
        }
        let s = self.s(lambda);
        let p = poly_derivative(k, s) / self.width().powi(k as i32);
        if k == 0 {
            1.0 - p
        } else {
            -p
        }
    }
}

/// Mollifier with its transition placed inside the gap, `margin * width`
/// away from both edges.
pub fn mollifier(gap: &GapInfo, margin: f64) -> Result<Mollifier> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::MarginOutOfRange(margin));
    }
    if !(gap.width > 0.0) {
        return Err(Error::NoGap {
            n_filled: gap.n_filled,
            overlap: -gap.width,
        });
    }
    Mollifier::new(gap.lambda_low + margin * gap.width, gap.lambda_upp - margin * gap.width)
}

/// Eigenpairs of the truncated operator inside the mollifier transition,
/// certified complete by inertia counts.
pub fn in_gap_modes(op: &DirichletOperator, moll: &Mollifier) -> Result<Spectrum> {
    in_gap_modes_with(op, moll, &SolverSettings::default())
}

pub fn in_gap_modes_with(op: &DirichletOperator, moll: &Mollifier, settings: &SolverSettings) -> Result<Spectrum> {
    solve(&op.matrix, &EigenSolveSpec::window(moll.a, moll.b).with_settings(settings))
}

/// `<u, i (X1 V2 - X2 V1) u> / <u, u>`; the observable is Hermitian, so
/// the imaginary part must vanish up to rounding.
pub fn circulation(u: &[C64], ops: &CommutatorOps) -> Result<f64> {
    let v1u = ops.v1.apply(u);
    let v2u = ops.v2.apply(u);
    let mut acc = C64::new(0.0, 0.0);
    let mut scale = 0.0;
    let mut norm = 0.0;
    for (k, ui) in u.iter().enumerate() {
        let w = v2u[k] * ops.x1[k] - v1u[k] * ops.x2[k];
        acc += ui.conj() * w * C64::new(0.0, 1.0);
        scale += ui.norm() * w.norm();
        norm += ui.norm_sqr();
    }
    if norm == 0.0 {
        return Err(Error::Invalid("circulation of a zero vector".into()));
    }
    let bound = 1e-10 * scale.max(f64::MIN_POSITIVE);
    if acc.im.abs() > bound {
        return Err(Error::ImaginaryResidue {
            residue: acc.im.abs(),
            bound,
        });
    }
    Ok(acc.re / norm)
}

/// Share of `|u|^2` on nodes within `d` cells of the boundary.
pub fn boundary_mass_fraction(u: &[C64], mask: &DomainMask, d: f64) -> f64 {
    let (mut near, mut total) = (0.0, 0.0);
    for (ui, &dist) in u.iter().zip(&mask.boundary_distance) {
        let m = ui.norm_sqr();
        total += m;
        if dist <= d {
            near += m;
        }
    }
    if total > 0.0 {
        near / total
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub lambda: f64,
    pub gprime: f64,
    pub circulation: f64,
    pub boundary_mass_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeIndexReport {
    pub ei: f64,
    pub area: f64,
    pub normalized: f64,
    pub modes: Vec<ModeRecord>,
    pub l: f64,
    pub shape: DomainShape,
    pub n: usize,
    pub dim: usize,
    pub mollifier: Mollifier,
    /// Eigenvalue counts below `a` and below `b`.
    pub inertia: Option<(usize, usize)>,
    pub warnings: Vec<String>,
}

impl EdgeIndexReport {
    /// Modes that carry real weight in the trace: `|g'| * width > 0.1`.
    pub fn strong_modes(&self) -> impl Iterator<Item = &ModeRecord> {
        let w = self.mollifier.width();
        self.modes.iter().filter(move |m| m.gprime.abs() * w > 0.1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,gprime,circulation,boundary_mass_fraction\n");
        for m in &self.modes {
            out.push_str(&format!(
                "{:.12e},{:.12e},{:.12e},{:.12e}\n",
                m.lambda, m.gprime, m.circulation, m.boundary_mass_fraction
            ));
        }
        out
    }
}

/// Edge index from the in-gap spectrum of `op`.
pub fn edge_index(op: &DirichletOperator, moll: &Mollifier) -> Result<EdgeIndexReport> {
    edge_index_with(op, moll, &SolverSettings::default())
}

pub fn edge_index_with(op: &DirichletOperator, moll: &Mollifier, settings: &SolverSettings) -> Result<EdgeIndexReport> {
    let modes = in_gap_modes_with(op, moll, settings)?;
    edge_index_from_modes(op, moll, &modes)
}

/// Edge index from an already computed in-gap spectrum.
pub fn edge_index_from_modes(op: &DirichletOperator, moll: &Mollifier, modes: &Spectrum) -> Result<EdgeIndexReport> {
    let ops = position_velocity_ops(op);
    let records = (0..modes.len())
        .into_par_iter()
        .map(|k| {
            let u = modes.vector(k);
            let lambda = modes.eigenvalues[k];
            Ok(ModeRecord {
                lambda,
                gprime: moll.gprime(lambda),
                circulation: circulation(&u, &ops)?,
                boundary_mass_fraction: boundary_mass_fraction(&u, &op.mask, BOUNDARY_BAND),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let near = 1e-6 * moll.width();
    for r in &records {
        if (r.lambda - moll.a).abs() < near || (r.lambda - moll.b).abs() < near {
            let msg = format!("eigenvalue {} sits on a mollifier edge; the index is sensitive to the margin", r.lambda);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let ei: f64 = records.iter().map(|r| r.gprime * r.circulation).sum();
    let area = op.mask.area;
    Ok(EdgeIndexReport {
        ei,
        area,
        normalized: ei / area,
        modes: records,
        l: op.mask.scale,
        shape: op.mask.shape,
        n: op.mask.n,
        dim: op.dim(),
        mollifier: *moll,
        inertia: modes.inertia,
        warnings,
    })
}

/// Truncates `field` to `L * shape` and evaluates the edge index.
pub fn edge_index_at(field: &CoefficientField, shape: DomainShape, l: f64, n: usize, moll: &Mollifier) -> Result<EdgeIndexReport> {
    edge_index_at_with(field, shape, l, n, moll, &SolverSettings::default())
}

pub fn edge_index_at_with(
    field: &CoefficientField,
    shape: DomainShape,
    l: f64,
    n: usize,
    moll: &Mollifier,
    settings: &SolverSettings,
) -> Result<EdgeIndexReport> {
    let mask = domain_mask(shape, l, n)?;
    let op = assemble_dirichlet(field, &mask)?;
    edge_index_with(&op, moll, settings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BecConfig {
    pub shape: DomainShape,
    pub l_list: Vec<f64>,
    pub n: usize,
    pub n_kappa: usize,
    pub n_filled: usize,
    pub margin: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl BecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_list.is_empty() {
            return Err(Error::InvalidParameter {
                name: "L_list".into(),
                reason: "empty".into(),
            });
        }
        if self.l_list.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter {
                name: "L_list".into(),
                reason: format!("must be strictly ascending, got {:?}", self.l_list),
            });
        }
        if !(self.margin > 0.0 && self.margin < 0.5) {
            return Err(Error::MarginOutOfRange(self.margin));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BecRow {
    pub l: f64,
    pub area: f64,
    pub dim: usize,
    pub n_modes: usize,
    pub ei: f64,
    pub normalized: f64,
    pub error: f64,
    pub max_boundary_mass_fraction: Option<f64>,
    pub min_strong_boundary_mass_fraction: Option<f64>,
    /// Eigenvalue counts below `a` and below `b`.
    pub inertia: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BecSweep {
    pub gap: GapInfo,
    pub mollifier: Mollifier,
    pub chern: ChernResult,
    pub rows: Vec<BecRow>,
    /// `sign(EI) = sign(C)` on every row with in-gap modes.
    pub sign_agreement: bool,
    /// Slope of `ln |error|` against `ln L`.
    pub log_error_slope: Option<f64>,
    pub error_spearman: Option<f64>,
}

impl BecSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,area,dim,n_modes,EI,EI_over_area,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.12e},{},{},{:.12e},{:.12e},{:.12e}\n",
                r.l, r.area, r.dim, r.n_modes, r.ei, r.normalized, r.error
            ));
        }
        out
    }
}

/// Bulk gap and Chern number once, then the edge index at every `L`.
pub fn bec_sweep(field: &CoefficientField, config: &BecConfig) -> Result<BecSweep> {
    config.validate()?;
    let bands = compute_bands(field, config.n, config.n_kappa, config.n_filled + 2)?;
    let gap = find_gap(&bands, config.n_filled)?;
    let chern = chern_fhs(&bands, &gap)?;
    let moll = mollifier(&gap, config.margin)?;
    bec_sweep_with(field, config, gap, chern, moll)
}

/// Sweep over `L` against a precomputed bulk reference.
pub fn bec_sweep_with(
    field: &CoefficientField,
    config: &BecConfig,
    gap: GapInfo,
    chern: ChernResult,
    moll: Mollifier,
) -> Result<BecSweep> {
    config.validate()?;
    let c = chern.rounded as f64;
    let rows = config
        .l_list
        .par_iter()
        .map(|&l| {
            let r = edge_index_at_with(field, config.shape, l, config.n, &moll, &config.solver)?;
            log::info!("L = {l}: {} in-gap modes, EI/|Omega| = {:.6}", r.modes.len(), r.normalized);
            let max_bmf = r.modes.iter().map(|m| m.boundary_mass_fraction).reduce(f64::max);
            let min_strong = r.strong_modes().map(|m| m.boundary_mass_fraction).reduce(f64::min);
            Ok(BecRow {
                l,
                area: r.area,
                dim: r.dim,
                n_modes: r.modes.len(),
                ei: r.ei,
                normalized: r.normalized,
                error: (r.normalized - c).abs(),
                max_boundary_mass_fraction: max_bmf,
                min_strong_boundary_mass_fraction: min_strong,
                inertia: r.inertia,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sign_agreement = rows
        .iter()
        .filter(|r| r.n_modes > 0)
        .all(|r| r.ei.signum() == c.signum() && c != 0.0);
    let fit_rows: Vec<&BecRow> = rows.iter().filter(|r| r.error > 0.0).collect();
    let ln_l: Vec<f64> = fit_rows.iter().map(|r| r.l.ln()).collect();
    let ln_err: Vec<f64> = fit_rows.iter().map(|r| r.error.ln()).collect();
    let ls: Vec<f64> = rows.iter().map(|r| r.l).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(BecSweep {
        gap,
        mollifier: moll,
        chern,
        log_error_slope: linear_fit(&ln_l, &ln_err).map(|f| f.slope),
        error_spearman: spearman(&ls, &errs),
        sign_agreement,
        rows,
    })
}

/// Angular moment of the TE Poynting field of one mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoyntingResult {
    /// `w = sqrt(lambda)`.
    pub frequency: f64,
    /// `sum h^2 (x1 S2 - x2 S1)` over interior nodes.
    pub circulation: f64,
}

/// Poynting circulation of the TE field `H = (0, 0, u)`, `E = (i/w) A
/// curl H`, with `A` in the role of the inverse permittivity and `mu = 1`.
/// `u` is normalized in the `h^2`-weighted norm before use.
pub fn poynting_circulation(u: &[C64], lambda: f64, field: &CoefficientField, mask: &DomainMask) -> Result<PoyntingResult> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveEigenvalue(lambda));
    }
    if u.len() != mask.len() {
        return Err(Error::Invalid(format!(
            "mode length {} does not match the mask ({} nodes)",
            u.len(),
            mask.len()
        )));
    }
    let h = mask.h;
    let norm = (u.iter().map(|v| v.norm_sqr()).sum::<f64>() * h * h).sqrt();
    if norm == 0.0 {
        return Err(Error::Invalid("Poynting circulation of a zero mode".into()));
    }
    let w = lambda.sqrt();
    let at = |i: i64, j: i64| mask.index_of(i, j).map_or(C64::new(0.0, 0.0), |k| u[k] / norm);
    let mut total = 0.0;
    for (k, &(i, j)) in mask.nodes.iter().enumerate() {
        let d1 = (at(i + 1, j) - at(i - 1, j)) / (2.0 * h);
        let d2 = (at(i, j + 1) - at(i, j - 1)) / (2.0 * h);
        // curl (0, 0, u) = (d2 u, -d1 u)
        let c = [d2, -d1];
        let a = field.sample(mask.coords[k]);
        let iw = C64::new(0.0, 1.0 / w);
        let e1 = iw * (c[0] * a.a11 + a.a12 * c[1]);
        let e2 = iw * (a.a21() * c[0] + c[1] * a.a22);
        let hz = u[k] / norm;
        // S = Re(E x conj(H)) with H = (0, 0, hz)
        let s1 = (e2 * hz.conj()).re;
        let s2 = -(e1 * hz.conj()).re;
        let x = mask.coords[k];
        total += (x[0] * s2 - x[1] * s1) * h * h;
    }
    Ok(PoyntingResult {
        frequency: w,
        circulation: total,
    })
}
