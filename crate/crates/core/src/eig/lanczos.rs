//! Shift-invert Lanczos with full reorthogonalization, locking restarts and
//! inertia-certified window completeness.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::factor::{factorize_hermitian, inertia_count, norm, Profile, SparseFactor};
use super::{dense_herm_eig, gershgorin_bounds, EigenSolveSpec, SolveMode, Spectrum};
use crate::sparse::CsrMatrix;
use crate::{Error, Result, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Windows expected to hold more eigenvalues than this are bisected.
const MAX_BLOCK: usize = 48;

/// Converged-count must stay unchanged this many steps before a pass ends.
const STALL_STEPS: usize = 20;

/// Eigenpairs of a Hermitian sparse matrix in a window or at the bottom of
/// the spectrum. Window results are certified complete by inertia counts.
pub fn lanczos_shift_invert(matrix: &CsrMatrix, spec: &EigenSolveSpec) -> Result<Spectrum> {
    spec.validate()?;
    let residual = matrix.hermiticity_residual();
    if residual > 0.0 {
        return Err(Error::NotHermitian { residual });
    }
    let profile = Profile::analyze(matrix);
    match spec.mode {
        SolveMode::Window => {
            let (lo, hi) = spec.window.expect("validated");
            window_solve(matrix, &profile, lo, hi, spec)
        }
        SolveMode::LowestK => lowest_k(matrix, &profile, spec),
        SolveMode::Dense => dense_herm_eig(&matrix.to_dense()),
    }
}

fn lowest_k(matrix: &CsrMatrix, profile: &Profile, spec: &EigenSolveSpec) -> Result<Spectrum> {
    let n = matrix.dim();
    let k = spec.k.min(n);
    if k == 0 {
        return Ok(Spectrum::empty(n));
    }
    let (glo, ghi) = gershgorin_bounds(matrix);
    let scale = (ghi - glo).abs().max(1.0);
    let lo = spec.sigma.unwrap_or(glo) - 1e-6 * scale;
    let below_lo = inertia_count(matrix, profile, lo)?;
    let count = |x: f64| -> Result<usize> { Ok(inertia_count(matrix, profile, x)? - below_lo) };
    let mut step = (ghi - lo) * (2.0 * k as f64 / n as f64).min(1.0);
    let mut short = lo;
    let mut hi = lo + step;
    // grow until the window holds at least k, then bisect it down
    for _ in 0..60 {
        if count(hi)? >= k {
            break;
        }
        short = hi;
        hi += step;
        step *= 2.0;
    }
    let slack = k / 2 + 2;
    for _ in 0..40 {
        if count(hi)? <= k + slack {
            break;
        }
        let mid = 0.5 * (short + hi);
        if count(mid)? >= k {
            hi = mid;
        } else {
            short = mid;
        }
    }
    let mut s = window_solve(matrix, profile, lo, hi, spec)?;
    if s.len() < k {
        return Err(Error::NoConvergence(format!(
            "lowest_k found {} of {k} eigenvalues",
            s.len()
        )));
    }
    s.eigenvalues.truncate(k);
    s.residuals.truncate(k);
    s.eigenvectors = s.eigenvectors.subcols(0, k).to_owned();
    s.inertia = None;
    Ok(s)
}

fn window_solve(matrix: &CsrMatrix, profile: &Profile, lo: f64, hi: f64, spec: &EigenSolveSpec) -> Result<Spectrum> {
    let n = matrix.dim();
    let below_lo = inertia_count(matrix, profile, lo)?;
    let below_hi = inertia_count(matrix, profile, hi)?;
    let target = below_hi.saturating_sub(below_lo);
    if target == 0 {
        let mut s = Spectrum::empty(n);
        s.inertia = Some((below_lo, below_hi));
        return Ok(s);
    }
    let mut vectors: Vec<Vec<C64>> = Vec::with_capacity(target);
    let mut block_id = 0u64;
    collect_block(
        matrix,
        profile,
        (lo, below_lo),
        (hi, below_hi),
        spec,
        0,
        &mut block_id,
        &mut vectors,
    )?;
    let mut s = rayleigh_ritz(matrix, &vectors)?;
    let norm1 = matrix.norm1();
    let bad: Vec<f64> = s
        .residuals
        .iter()
        .copied()
        .filter(|&r| !(r <= spec.tol * norm1))
        .collect();
    if !bad.is_empty() || s.len() != target {
        return Err(Error::NoConvergence(format!(
            "window ({lo}, {hi}): {} of {target} pairs, {} above residual tolerance",
            s.len(),
            bad.len()
        )));
    }
    if s.eigenvalues.iter().any(|&l| l < lo || l > hi) {
        return Err(Error::NoConvergence(format!(
            "window ({lo}, {hi}): Rayleigh-Ritz values left the window"
        )));
    }
    s.inertia = Some((below_lo, below_hi));
    Ok(s)
}

#[allow(clippy::too_many_arguments)]
fn collect_block(
    matrix: &CsrMatrix,
    profile: &Profile,
    (lo, below_lo): (f64, usize),
    (hi, below_hi): (f64, usize),
    spec: &EigenSolveSpec,
    depth: usize,
    block_id: &mut u64,
    out: &mut Vec<Vec<C64>>,
) -> Result<()> {
    let target = below_hi - below_lo;
    if target == 0 {
        return Ok(());
    }
    if target > MAX_BLOCK && depth < 40 {
        let mid = 0.5 * (lo + hi);
        let below_mid = inertia_count(matrix, profile, mid)?;
        collect_block(matrix, profile, (lo, below_lo), (mid, below_mid), spec, depth + 1, block_id, out)?;
        return collect_block(matrix, profile, (mid, below_mid), (hi, below_hi), spec, depth + 1, block_id, out);
    }
    *block_id += 1;
    let factor = shifted_factor(matrix, profile, lo, hi)?;
    let found = block_lanczos(matrix, &factor, lo, hi, target, spec, *block_id)?;
    log::debug!("window ({lo:.6}, {hi:.6}): {} eigenpairs", found.len());
    out.extend(found);
    Ok(())
}

fn shifted_factor(matrix: &CsrMatrix, profile: &Profile, lo: f64, hi: f64) -> Result<SparseFactor> {
    let mid = 0.5 * (lo + hi);
    let mut last = None;
    for k in 0..6 {
        let sigma = mid + (k as f64) * 1e-3 * (hi - lo) * if k % 2 == 0 { 1.0 } else { -1.0 };
        match factorize_hermitian(matrix, profile, sigma) {
            Ok(f) => return Ok(f),
            Err(e @ Error::SingularShift { .. }) => {
                log::debug!("shift {sigma} hit the spectrum, perturbing");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

fn dotc(a: &[C64], b: &[C64]) -> C64 {
    // a^H b
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi -= alpha * xi;
    }
}

fn orthogonalize(w: &mut [C64], bases: &[&[Vec<C64>]]) {
    for _ in 0..2 {
        for basis in bases {
            for q in basis.iter() {
                let c = dotc(q, w);
                axpy(c, q, w);
            }
        }
    }
}

/// Eigenvectors with eigenvalues in `(lo, hi)`, `target` of them, from
/// repeated Lanczos passes on `(M - sigma)^{-1}`.
fn block_lanczos(
    matrix: &CsrMatrix,
    factor: &SparseFactor,
    lo: f64,
    hi: f64,
    target: usize,
    spec: &EigenSolveSpec,
    block_id: u64,
) -> Result<Vec<Vec<C64>>> {
    let n = matrix.dim();
    let sigma = factor.shift().re;
    let norm1 = matrix.norm1();
    let mut locked: Vec<Vec<C64>> = Vec::new();
    let max_passes = target + 10;
    for pass in 0..max_passes {
        if locked.len() >= target {
            break;
        }
        let room = n - locked.len();
        let m_max = (3 * target + 40).max(60).min(room).min(spec.max_iter.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (block_id << 32) ^ pass as u64);
        let mut q: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
        orthogonalize(&mut q, &[&locked]);
        let qn = norm(&q);
        if qn == 0.0 {
            break;
        }
        q.iter_mut().for_each(|v| *v /= qn);
        let mut basis: Vec<Vec<C64>> = vec![q];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut last_count = 0;
        let mut last_change = 0;
        let accepted: Vec<(f64, Vec<f64>)>;
        loop {
            let m = basis.len();
            let mut w = factor.solve(&basis[m - 1])?;
            let a = dotc(&basis[m - 1], &w).re;
            axpy(C64::new(a, 0.0), &basis[m - 1], &mut w);
            if m >= 2 {
                axpy(C64::new(beta[m - 2], 0.0), &basis[m - 2], &mut w);
            }
            orthogonalize(&mut w, &[&locked, &basis]);
            let b = norm(&w);
            alpha.push(a);
            beta.push(b);
            let exhausted = b <= 1e-12 * a.abs().max(1.0) || m >= m_max;
            if m % 5 == 0 || exhausted {
                let (theta, s) = tridiagonal_eig(&alpha, &beta[..m - 1]);
                let mut converged = Vec::new();
                let mut pending = 0;
                for (k, &th) in theta.iter().enumerate() {
                    if th == 0.0 {
                        continue;
                    }
                    let lambda = sigma + 1.0 / th;
                    if !(lambda > lo && lambda < hi) {
                        continue;
                    }
                    let est = b * s[(m - 1, k)].abs();
                    // residual in M is at most est * |M - sigma| * |lambda - sigma|
                    let bound = 0.1 * spec.tol * norm1 / ((norm1 + sigma.abs()) * (lambda - sigma).abs());
                    if est <= bound {
                        converged.push((lambda, (0..m).map(|i| s[(i, k)]).collect::<Vec<f64>>()));
                    } else {
                        pending += 1;
                    }
                }
                if converged.len() != last_count {
                    last_count = converged.len();
                    last_change = m;
                }
                let complete = locked.len() + converged.len() >= target;
                let stalled = pending == 0 && m - last_change >= STALL_STEPS;
                if complete || stalled || exhausted {
                    accepted = converged;
                    break;
                }
            }
            w.iter_mut().for_each(|v| *v /= b);
            basis.push(w);
        }
        for (_, y) in &accepted {
            let mut v = vec![ZERO; n];
            for (q, &c) in basis.iter().zip(y) {
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi += qi * c;
                }
            }
            orthogonalize(&mut v, &[&locked]);
            let vn = norm(&v);
            if vn > 0.5 {
                v.iter_mut().for_each(|x| *x /= vn);
                locked.push(v);
            }
        }
        log::trace!("block {block_id} pass {pass}: {} of {target} locked", locked.len());
    }
    if locked.len() != target {
        return Err(Error::NoConvergence(format!(
            "window ({lo}, {hi}) holds {target} eigenvalues, Lanczos locked {}",
            locked.len()
        )));
    }
    Ok(locked)
}

/// Eigenpairs of the symmetric tridiagonal matrix with diagonal `a` and
/// off-diagonal `b`.
fn tridiagonal_eig(a: &[f64], b: &[f64]) -> (Vec<f64>, Mat<f64>) {
    let m = a.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            a[i]
        } else if i == j + 1 {
            b[j]
        } else if j == i + 1 {
            b[i]
        } else {
            0.0
        }
    });
    let e = t.self_adjoint_eigen(Side::Lower).expect("tridiagonal eigensolver");
    let s = e.S().column_vector();
    ((0..m).map(|k| s[k]).collect(), e.U().to_owned())
}

/// Orthonormalizes the found vectors and diagonalizes `M` on their span.
fn rayleigh_ritz(matrix: &CsrMatrix, vectors: &[Vec<C64>]) -> Result<Spectrum> {
    let n = matrix.dim();
    let t = vectors.len();
    if t == 0 {
        return Ok(Spectrum::empty(n));
    }
    let w = Mat::<C64>::from_fn(n, t, |i, j| vectors[j][i]);
    let gram = w.adjoint() * &w;
    let g = dense_herm_eig(&hermitian_part(&gram))?;
    if g.eigenvalues[0] < 1e-8 {
        return Err(Error::NoConvergence(format!(
            "found eigenvectors are linearly dependent (Gram eigenvalue {:e})",
            g.eigenvalues[0]
        )));
    }
    let scale = Mat::<C64>::from_fn(t, t, |i, j| g.eigenvectors[(i, j)] / g.eigenvalues[j].sqrt());
    let wo = &w * &scale;
    let mut mw = Mat::<C64>::zeros(n, t);
    for j in 0..t {
        let col: Vec<C64> = (0..n).map(|i| wo[(i, j)]).collect();
        let y = matrix.apply(&col);
        for i in 0..n {
            mw[(i, j)] = y[i];
        }
    }
    let h = wo.adjoint() * &mw;
    let e = dense_herm_eig(&hermitian_part(&h))?;
    let vecs = &wo * &e.eigenvectors;
    let mv = &mw * &e.eigenvectors;
    let residuals = (0..t)
        .map(|k| {
            (0..n)
                .map(|i| (mv[(i, k)] - vecs[(i, k)] * e.eigenvalues[k]).norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(Spectrum {
        eigenvalues: e.eigenvalues,
        eigenvectors: vecs,
        residuals,
        inertia: None,
    })
}

fn hermitian_part(m: &Mat<C64>) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{gyro_rods, GyroRodsParams};
    use crate::grid::{assemble_dirichlet, domain_mask, DomainShape};
    use crate::sparse::Triplets;

    fn diag_with_coupling(values: &[f64]) -> CsrMatrix {
        // random orthogonal-ish mixing keeps the spectrum but fills the pattern
        let n = values.len();
        let mut t = Triplets::default();
        for (i, &v) in values.iter().enumerate() {
            t.push(i, i, C64::new(v, 0.0));
        }
        let d = t.into_csr(n);
        // Givens rotations between neighbours: G^T D G
        let mut dense = d.to_dense();
        for i in 0..n - 1 {
            let (c, s) = (0.8_f64, 0.6_f64);
            for k in 0..n {
                let (a, b) = (dense[(i, k)], dense[(i + 1, k)]);
                dense[(i, k)] = a * c - b * s;
                dense[(i + 1, k)] = a * s + b * c;
            }
            for k in 0..n {
                let (a, b) = (dense[(k, i)], dense[(k, i + 1)]);
                dense[(k, i)] = a * c - b * s;
                dense[(k, i + 1)] = a * s + b * c;
            }
        }
        let mut m = CsrMatrix::from_dense(&hermitian_part(&dense));
        m.symmetrize_hermitian();
        m
    }

    #[test]
    fn known_spectrum_window() {
        let vals: Vec<f64> = (1..=100).map(|k| k as f64).collect();
        let m = diag_with_coupling(&vals);
        let s = lanczos_shift_invert(&m, &EigenSolveSpec::window(49.5, 52.5)).unwrap();
        assert_eq!(s.len(), 3);
        for (got, want) in s.eigenvalues.iter().zip([50.0, 51.0, 52.0]) {
            assert!((got - want).abs() < 1e-8, "{got}");
        }
        assert_eq!(s.inertia, Some((49, 52)));
    }

    #[test]
    fn empty_window() {
        let vals: Vec<f64> = (1..=30).map(|k| k as f64).collect();
        let m = diag_with_coupling(&vals);
        let s = lanczos_shift_invert(&m, &EigenSolveSpec::window(10.2, 10.8)).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn degenerate_eigenvalues_all_found() {
        let mut vals: Vec<f64> = (1..=60).map(|k| k as f64).collect();
        vals[20] = 20.0;
        vals[21] = 20.0;
        vals[22] = 20.0;
        let m = CsrMatrix::from_diagonal(&vals);
        let s = lanczos_shift_invert(&m, &EigenSolveSpec::window(19.5, 24.5)).unwrap();
        // {20 x 4, 24}
        assert_eq!(s.len(), 5);
        assert!((s.eigenvalues[3] - 20.0).abs() < 1e-10);
        assert!(s.orthonormality_deviation() < 1e-8);
    }

    #[test]
    fn matches_dense_on_dirichlet_operator() {
        let field = gyro_rods(GyroRodsParams {
            a_bg: 1.0,
            a_rod: 3.0,
            gamma0: 0.8,
            r0: 0.35,
            w: 0.08,
        })
        .unwrap();
        let mask = domain_mask(DomainShape::Disk, 1.6, 8).unwrap();
        let op = assemble_dirichlet(&field, &mask).unwrap();
        assert!(op.dim() > 400 && op.dim() < 700, "{}", op.dim());
        let dense = dense_herm_eig(&op.matrix.to_dense()).unwrap().eigenvalues;
        let (lo, hi) = (dense[40] - 1e-3, dense[90] + 1e-3);
        let s = lanczos_shift_invert(&op.matrix, &EigenSolveSpec::window(lo, hi)).unwrap();
        let expected: Vec<f64> = dense.iter().copied().filter(|&l| l > lo && l < hi).collect();
        assert_eq!(s.len(), expected.len());
        for (a, b) in s.eigenvalues.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
        assert!(s.orthonormality_deviation() < 1e-8);
        let norm1 = op.matrix.norm1();
        assert!(s.residuals.iter().all(|&r| r <= 1e-10 * norm1));
    }

    #[test]
    fn lowest_k_matches_dense() {
        let mask = domain_mask(DomainShape::Disk, 1.5, 8).unwrap();
        let op = assemble_dirichlet(&crate::coeff::CoefficientField::Identity, &mask).unwrap();
        let dense = dense_herm_eig(&op.matrix.to_dense()).unwrap().eigenvalues;
        let s = lanczos_shift_invert(&op.matrix, &EigenSolveSpec::lowest_k(7)).unwrap();
        assert_eq!(s.len(), 7);
        for k in 0..7 {
            assert!((s.eigenvalues[k] - dense[k]).abs() < 1e-8);
        }
        // real operator, real vectors
        assert!(s.max_imaginary() < 1e-12);
    }
}
