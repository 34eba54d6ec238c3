//! Profile (skyline) factorizations of shifted sparse matrices.
//!
//! Hermitian matrices with a real shift use `P (M - s) P^T = L D L^H`
//! without pivoting; the signs of `D` give the inertia. Complex shifts use
//! an unpivoted profile LU. Both rely on iterative refinement against the
//! original matrix to reach the requested residual.

use std::collections::VecDeque;

use crate::sparse::CsrMatrix;
use crate::{Error, Result, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Relative backward error a solve must reach.
pub const SOLVE_TOL: f64 = 1e-10;

/// Pivots below this fraction of `||M||_1` count as breakdown.
const PIVOT_TOL: f64 = 1e-13;

/// Ordering and lower profile of a structurally symmetric matrix.
#[derive(Clone, Debug)]
pub struct Profile {
    /// New position to original index.
    perm: Vec<usize>,
    /// Original index to new position.
    inv: Vec<usize>,
    /// First stored column of each (new) row.
    first: Vec<usize>,
    /// Offsets of each row's strictly-lower segment.
    rowptr: Vec<usize>,
}

impl Profile {
    /// Picks the smaller profile of the natural and reverse Cuthill-McKee
    /// orderings.
    pub fn analyze(m: &CsrMatrix) -> Self {
        let natural: Vec<usize> = (0..m.dim()).collect();
        let rcm = reverse_cuthill_mckee(m);
        let a = Profile::with_order(m, natural);
        let b = Profile::with_order(m, rcm);
        if b.len() < a.len() {
            b
        } else {
            a
        }
    }

    pub fn with_order(m: &CsrMatrix, perm: Vec<usize>) -> Self {
        let n = m.dim();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (r, c, _) in m.iter() {
            let (i, j) = (inv[r], inv[c]);
            let (hi, lo) = if i > j { (i, j) } else { (j, i) };
            first[hi] = first[hi].min(lo);
        }
        let mut rowptr = Vec::with_capacity(n + 1);
        rowptr.push(0);
        for i in 0..n {
            rowptr.push(rowptr[i] + (i - first[i]));
        }
        Profile {
            perm,
            inv,
            first,
            rowptr,
        }
    }

    /// Number of stored strictly-lower entries.
    pub fn len(&self) -> usize {
        *self.rowptr.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    fn scatter(&self, m: &CsrMatrix, shift: C64) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let n = self.dim();
        let mut lower = vec![ZERO; self.len()];
        let mut upper = vec![ZERO; self.len()];
        let mut diag = vec![-shift; n];
        for (r, c, v) in m.iter() {
            let (i, j) = (self.inv[r], self.inv[c]);
            if i == j {
                diag[i] += v;
            } else if j < i {
                lower[self.rowptr[i] + j - self.first[i]] += v;
            } else {
                upper[self.rowptr[j] + i - self.first[j]] += v;
            }
        }
        (lower, upper, diag)
    }
}

fn reverse_cuthill_mckee(m: &CsrMatrix) -> Vec<usize> {
    let n = m.dim();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in m.iter() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let bfs_levels = |start: usize, mark: &[bool]| -> Vec<usize> {
        // returns last level of a BFS from start
        let mut seen = mark.to_vec();
        seen[start] = true;
        let mut level = vec![start];
        loop {
            let mut next = Vec::new();
            for &u in &level {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                return level;
            }
            level = next;
        }
    };
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: two sweeps of farthest-min-degree
        let mut start = seed;
        for _ in 0..2 {
            let last = bfs_levels(start, &visited);
            start = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

#[inline]
fn dot(a: &[C64], b: &[C64]) -> C64 {
    let mut acc = ZERO;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    // sum a_k conj(b_k)
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.im * y.re - x.re * y.im;
    }
    C64::new(re, im)
}

#[derive(Clone, Debug)]
enum Factors {
    /// Unit lower `L` rows and real `D`.
    Ldl { l: Vec<C64>, d: Vec<f64> },
    /// Unit lower `L` rows, strictly upper `U` columns and `diag(U)`.
    Lu { l: Vec<C64>, u: Vec<C64>, d: Vec<C64> },
}

/// Solve handle for `M - s I`.
#[derive(Clone, Debug)]
pub struct SparseFactor {
    profile: Profile,
    factors: Factors,
    shifted: CsrMatrix,
    norm1: f64,
    shift: C64,
}

/// LDL^H factorization of a Hermitian `M - sigma I`, `sigma` real.
pub fn sparse_factorize(matrix: &CsrMatrix, sigma: f64) -> Result<SparseFactor> {
    let profile = Profile::analyze(matrix);
    factorize_hermitian(matrix, &profile, sigma)
}

/// LU factorization of `M - z I` for a complex shift.
pub fn sparse_factorize_complex(matrix: &CsrMatrix, z: C64) -> Result<SparseFactor> {
    let profile = Profile::analyze(matrix);
    factorize_general(matrix, &profile, z)
}

pub fn factorize_hermitian(matrix: &CsrMatrix, profile: &Profile, sigma: f64) -> Result<SparseFactor> {
    let residual = matrix.hermiticity_residual();
    if residual > 0.0 {
        return Err(Error::NotHermitian { residual });
    }
    let n = profile.dim();
    let shift = C64::new(sigma, 0.0);
    let shifted = matrix.shifted(shift);
    let norm1 = shifted.norm1().max(f64::MIN_POSITIVE);
    let (mut l, _, diag) = profile.scatter(matrix, shift);
    let mut d = vec![0.0; n];
    let (first, rowptr) = (&profile.first, &profile.rowptr);
    for i in 0..n {
        let fi = first[i];
        let (done, rest) = l.split_at_mut(rowptr[i]);
        let row = &mut rest[..i - fi];
        // row holds w_k = L_ik D_k while it is being built
        for j in fi..i {
            let fj = first[j];
            let start = fi.max(fj);
            let lj = &done[rowptr[j] + start - fj..rowptr[j] + j - fj];
            let s = row[j - fi] - dot_conj(&row[start - fi..j - fi], lj);
            row[j - fi] = s;
        }
        let mut di = diag[i].re;
        for k in fi..i {
            let w = row[k - fi];
            let lik = w / d[k];
            di -= (w * lik.conj()).re;
            row[k - fi] = lik;
        }
        if !(di.abs() > PIVOT_TOL * norm1) {
            return Err(Error::SingularShift {
                shift: sigma,
                pivot: di,
                row: i,
            });
        }
        d[i] = di;
    }
    Ok(SparseFactor {
        profile: profile.clone(),
        factors: Factors::Ldl { l, d },
        shifted,
        norm1,
        shift,
    })
}

pub fn factorize_general(matrix: &CsrMatrix, profile: &Profile, z: C64) -> Result<SparseFactor> {
    let n = profile.dim();
    let shifted = matrix.shifted(z);
    let norm1 = shifted.norm1().max(f64::MIN_POSITIVE);
    let (mut l, mut u, mut d) = profile.scatter(matrix, z);
    let (first, rowptr) = (&profile.first, &profile.rowptr);
    for i in 0..n {
        let fi = first[i];
        {
            let (l_done, l_rest) = l.split_at_mut(rowptr[i]);
            let row = &mut l_rest[..i - fi];
            for j in fi..i {
                let fj = first[j];
                let start = fi.max(fj);
                let ucol = &u[rowptr[j] + start - fj..rowptr[j] + j - fj];
                let s = row[j - fi] - dot(&row[start - fi..j - fi], ucol);
                row[j - fi] = s / d[j];
            }
            let (u_done, u_rest) = u.split_at_mut(rowptr[i]);
            let col = &mut u_rest[..i - fi];
            for j in fi..i {
                let fj = first[j];
                let start = fi.max(fj);
                let lrow = &l_done[rowptr[j] + start - fj..rowptr[j] + j - fj];
                let s = col[j - fi] - dot(lrow, &col[start - fi..j - fi]);
                col[j - fi] = s;
            }
            let _ = u_done;
        }
        let row = &l[rowptr[i]..rowptr[i] + i - fi];
        let col = &u[rowptr[i]..rowptr[i] + i - fi];
        let di = d[i] - dot(row, col);
        if !(di.norm() > PIVOT_TOL * norm1) {
            return Err(Error::SingularShift {
                shift: z.re,
                pivot: di.norm(),
                row: i,
            });
        }
        d[i] = di;
    }
    Ok(SparseFactor {
        profile: profile.clone(),
        factors: Factors::Lu { l, u, d },
        shifted,
        norm1,
        shift: z,
    })
}

impl SparseFactor {
    pub fn dim(&self) -> usize {
        self.profile.dim()
    }

    pub fn shift(&self) -> C64 {
        self.shift
    }

    /// Number of eigenvalues of `M` below the (real) shift, from the signs
    /// of `D`. `None` for complex-shift LU factors.
    pub fn inertia(&self) -> Option<usize> {
        match &self.factors {
            Factors::Ldl { d, .. } => Some(d.iter().filter(|&&x| x < 0.0).count()),
            Factors::Lu { .. } => None,
        }
    }

    fn raw_solve(&self, b: &[C64]) -> Vec<C64> {
        let p = &self.profile;
        let n = p.dim();
        let mut y: Vec<C64> = (0..n).map(|i| b[p.perm[i]]).collect();
        let (first, rowptr) = (&p.first, &p.rowptr);
        let l = match &self.factors {
            Factors::Ldl { l, .. } | Factors::Lu { l, .. } => l,
        };
        for i in 0..n {
            let fi = first[i];
            let s = dot(&l[rowptr[i]..rowptr[i] + i - fi], &y[fi..i]);
            y[i] -= s;
        }
        match &self.factors {
            Factors::Ldl { l, d } => {
                for i in 0..n {
                    y[i] /= d[i];
                }
                for i in (0..n).rev() {
                    let fi = first[i];
                    let xi = y[i];
                    let row = &l[rowptr[i]..rowptr[i] + i - fi];
                    for (yk, lik) in y[fi..i].iter_mut().zip(row) {
                        *yk -= lik.conj() * xi;
                    }
                }
            }
            Factors::Lu { u, d, .. } => {
                for i in (0..n).rev() {
                    let fi = first[i];
                    let xi = y[i] / d[i];
                    y[i] = xi;
                    let col = &u[rowptr[i]..rowptr[i] + i - fi];
                    for (yk, uki) in y[fi..i].iter_mut().zip(col) {
                        *yk -= uki * xi;
                    }
                }
            }
        }
        let mut x = vec![ZERO; n];
        for i in 0..n {
            x[p.perm[i]] = y[i];
        }
        x
    }

    /// Relative backward error `||b - A x|| / (||A||_1 ||x|| + ||b||)`.
    pub fn backward_error(&self, b: &[C64], x: &[C64]) -> f64 {
        let ax = self.shifted.apply(x);
        let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).norm_sqr()).sum::<f64>().sqrt();
        r / (self.norm1 * norm(x) + norm(b)).max(f64::MIN_POSITIVE)
    }

    /// Solves `(M - s I) x = b` with iterative refinement.
    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        assert_eq!(b.len(), self.dim());
        let mut x = self.raw_solve(b);
        let mut err = f64::INFINITY;
        for _ in 0..6 {
            let ax = self.shifted.apply(&x);
            let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            err = norm(&r) / (self.norm1 * norm(&x) + norm(b)).max(f64::MIN_POSITIVE);
            if err <= 1e-3 * SOLVE_TOL || !err.is_finite() {
                break;
            }
            let dx = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        if err.is_finite() && err < SOLVE_TOL {
            Ok(x)
        } else {
            Err(Error::SolveResidual {
                residual: err,
                tol: SOLVE_TOL,
            })
        }
    }
}

pub(crate) fn norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Number of eigenvalues of a Hermitian matrix strictly below `x`. If `x`
/// hits the spectrum the count is taken at a nudged point.
pub fn inertia_count(matrix: &CsrMatrix, profile: &Profile, x: f64) -> Result<usize> {
    let scale = matrix.norm1().max(1.0);
    let mut last = None;
    for attempt in 0..4 {
        let shift = x + attempt as f64 * 1e-11 * scale;
        match factorize_hermitian(matrix, profile, shift) {
            Ok(f) => {
                if attempt > 0 {
                    log::debug!("inertia at {x} taken at nudged shift {shift}");
                }
                return Ok(f.inertia().unwrap());
            }
            Err(e @ Error::SingularShift { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Triplets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(m: usize) -> CsrMatrix {
        let mut t = Triplets::default();
        for i in 0..m {
            t.push(i, i, C64::new(2.0, 0.0));
            if i + 1 < m {
                t.push(i, i + 1, C64::new(-1.0, 0.0));
                t.push(i + 1, i, C64::new(-1.0, 0.0));
            }
        }
        t.into_csr(m)
    }

    fn random_hermitian_sparse(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Triplets::default();
        for i in 0..n {
            t.push(i, i, C64::new(rng.random_range(-1.0..1.0), 0.0));
            for j in [i + 1, i + 3, i + 7] {
                if j < n {
                    let v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    t.push(i, j, v);
                    t.push(j, i, v.conj());
                }
            }
        }
        t.into_csr(n)
    }

    #[test]
    fn identity_solve_returns_input() {
        let id = CsrMatrix::identity(5);
        let f = sparse_factorize(&id, 0.0).unwrap();
        let b: Vec<C64> = (0..5).map(|k| C64::new(k as f64, -1.0)).collect();
        assert_eq!(f.solve(&b).unwrap(), b);
        assert_eq!(f.inertia(), Some(0));
    }

    #[test]
    fn spd_solve_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = laplacian_1d(200);
        let f = sparse_factorize(&m, -0.1).unwrap();
        let b: Vec<C64> = (0..200).map(|_| C64::new(rng.random(), rng.random())).collect();
        let x = f.solve(&b).unwrap();
        assert!(f.backward_error(&b, &x) < 1e-10);
        assert_eq!(f.inertia(), Some(0));
    }

    #[test]
    fn shift_above_spectrum_counts_everything() {
        let m = laplacian_1d(50);
        let f = sparse_factorize(&m, 4.5).unwrap();
        assert_eq!(f.inertia(), Some(50));
    }

    #[test]
    fn inertia_matches_dense_count() {
        let m = random_hermitian_sparse(120, 9);
        let ev = crate::eig::dense_herm_eig(&m.to_dense()).unwrap().eigenvalues;
        let p = Profile::analyze(&m);
        for x in [-2.0, -0.3, 0.0, 0.45, 1.7] {
            let expected = ev.iter().filter(|&&l| l < x).count();
            assert_eq!(inertia_count(&m, &p, x).unwrap(), expected);
        }
    }

    #[test]
    fn indefinite_and_complex_solves() {
        let m = random_hermitian_sparse(150, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b: Vec<C64> = (0..150).map(|_| C64::new(rng.random(), rng.random())).collect();
        let f = sparse_factorize(&m, 0.123).unwrap();
        let x = f.solve(&b).unwrap();
        assert!(f.backward_error(&b, &x) < 1e-10);
        let g = sparse_factorize_complex(&m, C64::new(0.3, 0.2)).unwrap();
        let y = g.solve(&b).unwrap();
        assert!(g.backward_error(&b, &y) < 1e-10);
        assert_eq!(g.inertia(), None);
    }

    #[test]
    fn exact_eigenvalue_shift_breaks_down() {
        let d = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        assert!(matches!(sparse_factorize(&d, 2.0), Err(Error::SingularShift { .. })));
        assert_eq!(inertia_count(&d, &Profile::analyze(&d), 2.0).unwrap(), 2);
    }

    #[test]
    fn rcm_recovers_banded_profile() {
        // 2D grid Laplacian with scrambled numbering
        let m = 12;
        let n = m * m;
        let mut scramble: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in (1..n).rev() {
            scramble.swap(i, rng.random_range(0..=i));
        }
        let mut t = Triplets::default();
        for j in 0..m {
            for i in 0..m {
                let p = scramble[i + m * j];
                t.push(p, p, C64::new(4.0, 0.0));
                for (di, dj) in [(1, 0), (0, 1)] {
                    if i + di < m && j + dj < m {
                        let q = scramble[i + di + m * (j + dj)];
                        t.push(p, q, C64::new(-1.0, 0.0));
                        t.push(q, p, C64::new(-1.0, 0.0));
                    }
                }
            }
        }
        let a = t.into_csr(n);
        let natural = Profile::with_order(&a, (0..n).collect());
        let best = Profile::analyze(&a);
        assert!(best.len() <= 2 * m * n, "{} vs {}", best.len(), natural.len());
        assert!(best.len() < natural.len() / 3);
        let f = factorize_general(&a, &best, C64::new(-1.0, 0.5)).unwrap();
        let b = vec![C64::new(1.0, 0.0); n];
        let x = f.solve(&b).unwrap();
        assert!(f.backward_error(&b, &x) < 1e-12);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut t = Triplets::default();
        t.push(0, 1, C64::new(1.0, 0.0));
        t.push(1, 0, C64::new(2.0, 0.0));
        t.push(0, 0, C64::new(1.0, 0.0));
        t.push(1, 1, C64::new(1.0, 0.0));
        assert!(matches!(sparse_factorize(&t.into_csr(2), 0.0), Err(Error::NotHermitian { .. })));
    }
}
