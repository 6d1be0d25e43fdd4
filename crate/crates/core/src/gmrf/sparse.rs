//! Compressed sparse row storage: a general matrix and a symmetric wrapper.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// General sparse matrix in CSR form with sorted, duplicate-free rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, trips: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in trips {
            if r >= nrows || c >= ncols {
                return Err(Error::Dimension(format!(
                    "entry ({r},{c}) outside {nrows}x{ncols}"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; trips.len()];
        let mut vals = vec![0.0; trips.len()];
        for &(r, c, v) in trips {
            let k = fill[r];
            cols[k] = c;
            vals[k] = v;
            fill[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(trips.len());
        let mut data = Vec::with_capacity(trips.len());
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (s, e) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(s..e);
            order.sort_by_key(|&k| cols[k]);
            let mut last: Option<usize> = None;
            for &k in &order {
                if last == Some(cols[k]) {
                    *data.last_mut().unwrap() += vals[k];
                } else {
                    indices.push(cols[k]);
                    data.push(vals[k]);
                    last = Some(cols[k]);
                }
            }
            // drop explicit zeros produced by cancellation
            let start = indptr[r];
            let mut w = start;
            for k in start..indices.len() {
                if data[k] != 0.0 {
                    indices[w] = indices[k];
                    data[w] = data[k];
                    w += 1;
                }
            }
            indices.truncate(w);
            data.truncate(w);
            indptr.push(indices.len());
        }
        Ok(Self { nrows, ncols, indptr, indices, data })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn diagonal_matrix(d: &[f64]) -> Self {
        let trips: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &trips).expect("diagonal in range")
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.data[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            out.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, v)));
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension");
        (0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// Aᵀx without forming the transpose.
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "tmatvec dimension");
        let mut out = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * x[r];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut indices = vec![0; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                indices[fill[c]] = r;
                data[fill[c]] = v;
                fill[c] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            data,
        }
    }

    /// Sparse product self · other.
    pub fn matmul(&self, other: &CsrMatrix) -> Result<Self> {
        if self.ncols != other.nrows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut touched = Vec::new();
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for r in 0..self.nrows {
            touched.clear();
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (c2, v2) = other.row(k);
                for (&c, &b) in c2.iter().zip(v2) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                if acc[c] != 0.0 {
                    indices.push(c);
                    data.push(acc[c]);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows: self.nrows, ncols: other.ncols, indptr, indices, data })
    }

    /// a·self + b·other.
    pub fn add_scaled(&self, a: f64, other: &CsrMatrix, b: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Dimension("add of differently shaped matrices".into()));
        }
        let mut indptr = vec![0];
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut data = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let (c, v) = if j >= cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    i += 1;
                    (ca[i - 1], a * va[i - 1])
                } else if i >= ca.len() || cb[j] < ca[i] {
                    j += 1;
                    (cb[j - 1], b * vb[j - 1])
                } else {
                    i += 1;
                    j += 1;
                    (ca[i - 1], a * va[i - 1] + b * vb[j - 1])
                };
                if v != 0.0 {
                    indices.push(c);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows: self.nrows, ncols: self.ncols, indptr, indices, data })
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// diag(l) · self · diag(r).
    pub fn scale_rows_cols(&self, l: &[f64], r: &[f64]) -> Self {
        let mut out = self.clone();
        for row in 0..self.nrows {
            for k in out.indptr[row]..out.indptr[row + 1] {
                out.data[k] *= l[row] * r[out.indices[k]];
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// Stack matrices side by side (equal row counts).
    pub fn hstack(blocks: &[&CsrMatrix]) -> Result<Self> {
        let nrows = blocks.first().map_or(0, |b| b.nrows);
        let mut trips = Vec::new();
        let mut off = 0;
        for b in blocks {
            if b.nrows != nrows {
                return Err(Error::Dimension("hstack row mismatch".into()));
            }
            trips.extend(b.triplets().into_iter().map(|(r, c, v)| (r, c + off, v)));
            off += b.ncols;
        }
        Self::from_triplets(nrows, off, &trips)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trips = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    trips.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trips).expect("dense indices in range")
    }
}

/// Symmetric sparse matrix. Both triangles are stored so row access gives full
/// adjacency; symmetry is exact because values are mirrored from one triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    inner: CsrMatrix,
}

/// Accumulator for the upper triangle of a symmetric matrix.
#[derive(Debug, Clone, Default)]
pub struct SymTriplets {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymTriplets {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self { n, entries: Vec::with_capacity(cap) }
    }

    /// Add `v` at (i, j); the mirrored entry is implied. Do not push both triangles.
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push((r, c, v));
    }

    pub fn extend(&mut self, other: SymTriplets) {
        self.entries.extend(other.entries);
    }

    /// Add a symmetric matrix into the block starting at `offset`.
    pub fn add_block(&mut self, offset: usize, m: &SparseSymmetric, scale: f64) {
        for (r, c, v) in m.upper_triplets() {
            self.entries.push((r + offset, c + offset, scale * v));
        }
    }

    pub fn finalize(self) -> Result<SparseSymmetric> {
        SparseSymmetric::from_upper_triplets(self.n, &self.entries)
    }
}

impl SparseSymmetric {
    /// Build from upper-triangle triplets (row ≤ col); lower entries are rejected.
    pub fn from_upper_triplets(n: usize, trips: &[(usize, usize, f64)]) -> Result<Self> {
        let upper = CsrMatrix::from_triplets(n, n, trips)?;
        if trips.iter().any(|&(r, c, _)| r > c) {
            return Err(Error::Dimension("lower-triangle entry in symmetric triplets".into()));
        }
        Ok(Self::mirror(&upper))
    }

    /// Take the upper triangle of a (numerically) symmetric matrix and mirror it.
    pub fn from_csr_upper(m: &CsrMatrix) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::Dimension("symmetric matrix must be square".into()));
        }
        let trips: Vec<_> = m.triplets().into_iter().filter(|&(r, c, _)| r <= c).collect();
        Self::from_upper_triplets(m.nrows, &trips)
    }

    fn mirror(upper: &CsrMatrix) -> Self {
        let mut trips = Vec::with_capacity(2 * upper.nnz());
        for (r, c, v) in upper.triplets() {
            trips.push((r, c, v));
            if r != c {
                trips.push((c, r, v));
            }
        }
        let inner = CsrMatrix::from_triplets(upper.nrows, upper.ncols, &trips).expect("mirror in range");
        Self { inner }
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: CsrMatrix::identity(n) }
    }

    pub fn diagonal_matrix(d: &[f64]) -> Self {
        Self { inner: CsrMatrix::diagonal_matrix(d) }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.inner
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.inner.get(r, c)
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        self.inner.row(r)
    }

    pub fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        self.inner.triplets().into_iter().filter(|&(r, c, _)| r <= c).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.inner.diagonal()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.inner.matvec(x)
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { inner: self.inner.scale(a) }
    }

    /// a·self + b·other, symmetric by construction.
    pub fn add_scaled(&self, a: f64, other: &SparseSymmetric, b: f64) -> Result<Self> {
        Ok(Self { inner: self.inner.add_scaled(a, &other.inner, b)? })
    }

    /// D·self·D for a diagonal D.
    pub fn congruence_diag(&self, d: &[f64]) -> Self {
        Self { inner: self.inner.scale_rows_cols(d, d) }
    }

    /// Bᵀ·self·B, re-symmetrized from its upper triangle.
    pub fn congruence(&self, b: &CsrMatrix) -> Result<Self> {
        let bt = b.transpose();
        let prod = bt.matmul(&self.inner)?.matmul(b)?;
        Self::from_csr_upper(&prod)
    }

    /// Block-diagonal assembly.
    pub fn block_diag(blocks: &[&SparseSymmetric]) -> Result<Self> {
        let n = blocks.iter().map(|b| b.dim()).sum();
        let mut t = SymTriplets::new(n);
        let mut off = 0;
        for b in blocks {
            t.add_block(off, b, 1.0);
            off += b.dim();
        }
        t.finalize()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.inner.to_dense()
    }

    /// MatrixMarket coordinate dump (symmetric, upper triangle, 1-based).
    pub fn to_matrix_market(&self) -> String {
        let up = self.upper_triplets();
        let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{} {} {}", self.dim(), self.dim(), up.len());
        // symmetric MatrixMarket stores the lower triangle
        for (r, c, v) in up {
            let _ = writeln!(s, "{} {} {:e}", c + 1, r + 1, v);
        }
        s
    }
}

/// AᵀA for a general matrix, returned symmetric.
pub fn gram(a: &CsrMatrix) -> Result<SparseSymmetric> {
    let at = a.transpose();
    SparseSymmetric::from_csr_upper(&at.matmul(a)?)
}
