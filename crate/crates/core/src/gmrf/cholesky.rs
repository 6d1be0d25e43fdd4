//! Envelope (skyline) Cholesky factorization with reverse Cuthill–McKee ordering.
//!
//! High-degree nodes (fixed effects, the latent decay parameter) are held out
//! of the bandwidth-reducing ordering and appended last, so they only cost one
//! dense row each instead of widening the whole envelope.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::sparse::SparseSymmetric;
use crate::error::{Error, Result};

/// Degree above which a node is treated as dense and ordered last.
fn dense_threshold(n: usize) -> usize {
    16usize.max((2.0 * (n as f64).sqrt()) as usize)
}

/// Reverse Cuthill–McKee permutation (`perm[new] = old`), dense nodes appended last.
pub fn rcm_ordering(q: &SparseSymmetric) -> Vec<usize> {
    let n = q.dim();
    let thr = dense_threshold(n);
    let degree: Vec<usize> = (0..n).map(|i| q.row(i).0.iter().filter(|&&j| j != i).count()).collect();
    let dense: Vec<bool> = degree.iter().map(|&d| d > thr).collect();
    let sparse_deg: Vec<usize> = (0..n)
        .map(|i| q.row(i).0.iter().filter(|&&j| j != i && !dense[j]).count())
        .collect();

    let mut visited = dense.clone();
    let mut order = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let start = peripheral_node(q, seed, &dense, &sparse_deg);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(q.row(v).0.iter().copied().filter(|&j| !visited[j]));
            nbrs.sort_by_key(|&j| (sparse_deg[j], j));
            for &j in &nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order.extend((0..n).filter(|&i| dense[i]));
    order
}

/// Pseudo-peripheral node of the component containing `seed` (George–Liu).
fn peripheral_node(q: &SparseSymmetric, seed: usize, dense: &[bool], deg: &[usize]) -> usize {
    let mut root = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(q, root, dense);
        let depth = *levels.iter().filter_map(|l| l.as_ref()).max().unwrap_or(&0);
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        let next = (0..levels.len())
            .filter(|&i| levels[i] == Some(depth))
            .min_by_key(|&i| (deg[i], i))
            .unwrap_or(root);
        if next == root {
            break;
        }
        root = next;
    }
    root
}

fn bfs_levels(q: &SparseSymmetric, root: usize, dense: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; q.dim()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &j in q.row(v).0 {
            if !dense[j] && level[j].is_none() {
                level[j] = Some(lv + 1);
                queue.push_back(j);
            }
        }
    }
    level
}

/// Cholesky factor L of P·Q·Pᵀ stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    ptr: Vec<usize>,
    vals: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factorize with the default ordering and a single jitter retry.
    pub fn factor(q: &SparseSymmetric) -> Result<Self> {
        Self::factor_with_ordering(q, rcm_ordering(q))
    }

    pub fn factor_with_ordering(q: &SparseSymmetric, perm: Vec<usize>) -> Result<Self> {
        let n = q.dim();
        if perm.len() != n {
            return Err(Error::Dimension("ordering length differs from matrix".into()));
        }
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            first[new] = q.row(old).0.iter().map(|&j| inv[j]).filter(|&j| j <= new).min().unwrap_or(new);
        }
        let mut ptr = Vec::with_capacity(n + 1);
        ptr.push(0);
        for i in 0..n {
            ptr.push(ptr[i] + i - first[i] + 1);
        }
        let mut chol = Self { n, perm, first, ptr, vals: Vec::new(), jitter: 0.0 };
        match chol.numeric(q, &inv, 0.0) {
            Ok(()) => Ok(chol),
            Err(_) => {
                let diag = q.diagonal();
                let mean = diag.iter().sum::<f64>() / n.max(1) as f64;
                let jitter = 1e-10 * mean.abs().max(f64::MIN_POSITIVE);
                log::debug!("factorization failed; retrying with jitter {jitter:e}");
                chol.numeric(q, &inv, jitter)?;
                chol.jitter = jitter;
                Ok(chol)
            }
        }
    }

    fn numeric(&mut self, q: &SparseSymmetric, inv: &[usize], jitter: f64) -> Result<()> {
        let n = self.n;
        self.vals.clear();
        self.vals.resize(self.ptr[n], 0.0);
        for new in 0..n {
            let old = self.perm[new];
            let (cols, vals) = q.row(old);
            let base = self.ptr[new] - self.first[new];
            for (&j, &v) in cols.iter().zip(vals) {
                let jn = inv[j];
                if jn <= new {
                    self.vals[base + jn] = v;
                }
            }
            self.vals[base + new] += jitter;
        }
        for i in 0..n {
            let fi = self.first[i];
            let (done, rest) = self.vals.split_at_mut(self.ptr[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let row_j = &done[self.ptr[j]..self.ptr[j + 1]];
                let li = &row_i[k0 - fi..j - fi];
                let lj = &row_j[k0 - fj..j - fj];
                let dot: f64 = li.iter().zip(lj).map(|(a, b)| a * b).sum();
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - dot) / ljj;
            }
            let off = &row_i[..i - fi];
            let d = row_i[i - fi] - off.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Factorization {
                    pivot: self.perm[i],
                    msg: format!("non-positive pivot {d:e}"),
                });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Jitter added to the diagonal (0 unless the first attempt failed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Ordering used, `perm[new] = old`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Number of stored factor entries (envelope size).
    pub fn envelope_size(&self) -> usize {
        self.vals.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.vals[self.ptr[i + 1] - 1]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    fn forward(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.vals[self.ptr[i]..self.ptr[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&x[fi..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - dot) / row[i - fi];
        }
    }

    fn backward(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = &self.vals[self.ptr[i]..self.ptr[i + 1]];
            x[i] /= row[i - fi];
            let xi = x[i];
            for (k, l) in (fi..i).zip(row) {
                x[k] -= l * xi;
            }
        }
    }

    /// Solve Q x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve dimension");
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Map a standard-normal vector to a draw with covariance Q⁻¹.
    pub fn sample_transform(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n, "sample dimension");
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// gᵀQ⁻¹g.
    pub fn inv_quad(&self, g: &[f64]) -> f64 {
        let mut y: Vec<f64> = self.perm.iter().map(|&o| g[o]).collect();
        self.forward(&mut y);
        y.iter().map(|v| v * v).sum()
    }

    /// Entries of the factor as (row, col, value) in permuted indices.
    pub fn factor_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            let fi = self.first[i];
            for (k, &v) in self.vals[self.ptr[i]..self.ptr[i + 1]].iter().enumerate() {
                if v != 0.0 {
                    out.push((i, fi + k, v));
                }
            }
        }
        out
    }

    /// Pᵀ L Lᵀ P as a dense matrix (for verification).
    pub fn reassemble(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.factor_triplets() {
            l[(r, c)] = v;
        }
        let llt = &l * l.transpose();
        let mut out = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(self.perm[i], self.perm[j])] = llt[(i, j)];
            }
        }
        out
    }
}
