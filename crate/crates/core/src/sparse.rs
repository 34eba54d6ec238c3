//! Compressed sparse row storage for complex matrices.

use std::io::Write;

use faer::Mat;

use crate::C64;

/// Coordinate-format accumulator. Duplicates are summed in insertion order.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    entries: Vec<(usize, usize, C64)>,
}

impl Triplets {
    pub fn with_capacity(cap: usize) -> Self {
        Triplets {
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: C64) {
        self.entries.push((row, col, value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_csr(mut self, n: usize) -> CsrMatrix {
        // stable sort keeps insertion order within an (r, c) slot
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<C64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for dimension {n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            values,
        }
    }
}

/// Square complex CSR matrix with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![C64::new(1.0, 0.0); n],
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        CsrMatrix {
            n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: d.iter().map(|&x| C64::new(x, 0.0)).collect(),
        }
    }

    pub fn from_dense(m: &Mat<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        let mut t = Triplets::default();
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    t.push(i, j, v);
                }
            }
        }
        t.into_csr(n)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[C64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = C64::new(0.0, 0.0);
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            *yi = acc;
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `u^H A v`.
    pub fn form(&self, u: &[C64], v: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut row = C64::new(0.0, 0.0);
            for (&j, &a) in cols.iter().zip(vals) {
                row += a * v[j];
            }
            acc += u[i].conj() * row;
        }
        acc
    }

    pub fn adjoint(&self) -> CsrMatrix {
        let mut t = Triplets::with_capacity(self.nnz());
        for (i, j, v) in self.iter() {
            t.push(j, i, v.conj());
        }
        t.into_csr(self.n)
    }

    /// Max entrywise `|A_ij - conj(A_ji)|`, diagonal imaginary parts
    /// included.
    pub fn hermiticity_residual(&self) -> f64 {
        self.iter()
            .map(|(i, j, v)| (v - self.get(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Max entrywise `|A_ij + conj(A_ji)|`.
    pub fn anti_hermiticity_residual(&self) -> f64 {
        self.iter()
            .map(|(i, j, v)| (v + self.get(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Replaces `A` by its exact Hermitian part on a structurally symmetric
    /// pattern: upper entries are averaged with the conjugate of their
    /// mirror and copied down, the diagonal is made real.
    pub fn symmetrize_hermitian(&mut self) {
        let n = self.n;
        for i in 0..n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[k];
                if j == i {
                    self.values[k] = C64::new(self.values[k].re, 0.0);
                } else if j > i {
                    let mirror = self.position(j, i).expect("pattern must be symmetric");
                    let avg = (self.values[k] + self.values[mirror].conj()) * 0.5;
                    self.values[k] = avg;
                    self.values[mirror] = avg.conj();
                }
            }
        }
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e].binary_search(&j).ok().map(|k| s + k)
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    /// Max absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut col = vec![0.0; self.n];
        for (_, j, v) in self.iter() {
            col[j] += v.norm();
        }
        col.into_iter().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `A D` for diagonal `D`.
    pub fn mul_diag_right(&self, d: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in out.indptr[i]..out.indptr[i + 1] {
                out.values[k] = out.values[k] * d[out.indices[k]];
            }
        }
        out
    }

    /// `D A` for diagonal `D`.
    pub fn mul_diag_left(&self, d: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in out.indptr[i]..out.indptr[i + 1] {
                out.values[k] = d[i] * out.values[k];
            }
        }
        out
    }

    /// `A - B` on the union pattern.
    pub fn sub(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(self.nnz().max(other.nnz()));
        for i in 0..self.n {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let ja = ca.get(p).copied().unwrap_or(usize::MAX);
                let jb = cb.get(q).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    indices.push(ja);
                    values.push(va[p] - vb[q]);
                    p += 1;
                    q += 1;
                } else if ja < jb {
                    indices.push(ja);
                    values.push(va[p]);
                    p += 1;
                } else {
                    indices.push(jb);
                    values.push(-vb[q]);
                    q += 1;
                }
            }
            indptr[i + 1] = indices.len();
        }
        CsrMatrix {
            n: self.n,
            indptr,
            indices,
            values,
        }
    }

    /// `A X - X A` for diagonal `X`, entry by entry:
    /// `A_ij x_j - x_i A_ij`.
    pub fn commutator_with_diagonal(&self, x: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in out.indptr[i]..out.indptr[i + 1] {
                let j = out.indices[k];
                let a = self.values[k];
                out.values[k] = a * x[j] - x[i] * a;
            }
        }
        out
    }

    /// Max entrywise `|A_ij - B_ij|` over the union pattern.
    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        self.sub(other).max_abs()
    }

    /// `A - s I`.
    pub fn shifted(&self, s: C64) -> CsrMatrix {
        let mut t = Triplets::with_capacity(self.nnz() + self.n);
        for (i, j, v) in self.iter() {
            t.push(i, j, v);
        }
        for i in 0..self.n {
            t.push(i, i, -s);
        }
        t.into_csr(self.n)
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.n, self.n);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    /// Writes `row col re im` lines (0-based) preceded by a size header.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "% {} {} {}", self.n, self.n, self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{i} {j} {:.17e} {:.17e}", v.re, v.im)?;
        }
        Ok(())
    }
}
