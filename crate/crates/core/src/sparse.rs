//! Compressed sparse row matrices and a profile Cholesky factorization.
//!
//! Only what the assembly and the solvers need: triplet assembly with
//! duplicate summation, products, transposes, principal submatrices and a
//! direct solver for SPD systems of moderate size.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
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

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    /// Column indices within a row come out sorted.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[r];
            cols[p] = c;
            vals[p] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (lo, hi) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_by_key(|&p| cols[p]);
            let mut last = usize::MAX;
            for &p in &order {
                if cols[p] == last {
                    *data.last_mut().unwrap() += vals[p];
                } else {
                    indices.push(cols[p]);
                    data.push(vals[p]);
                    last = cols[p];
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn from_dense(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t)
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

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
            let mut s = 0.0;
            for p in lo..hi {
                s += self.data[p] * x[self.indices[p]];
            }
            *yi = s;
        }
    }

    /// `y = Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push((c, i, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Sparse product `self * rhs` (row-wise accumulation with a dense marker).
    pub fn matmul(&self, rhs: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, rhs.nrows);
        let mut acc = vec![0.0; rhs.ncols];
        let mut mark = vec![usize::MAX; rhs.ncols];
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rc, rv) = rhs.row(k);
                for (&j, &b) in rc.iter().zip(rv) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows: self.nrows,
            ncols: rhs.ncols,
            indptr,
            indices,
            data,
        }
    }

    /// `a * self + b * other` for matrices of equal shape.
    pub fn add_scaled(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (c1, v1) = self.row(i);
            t.extend(c1.iter().zip(v1).map(|(&c, &v)| (i, c, a * v)));
            let (c2, v2) = other.row(i);
            t.extend(c2.iter().zip(v2).map(|(&c, &v)| (i, c, b * v)));
        }
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Galerkin triple product `Pᵀ A P`.
    pub fn ptap(&self, p: &CsrMatrix) -> Self {
        p.transpose().matmul(&self.matmul(p))
    }

    /// Keeps rows in `rows` and columns in `cols` (both as index lists),
    /// renumbered by their position in those lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut t = Vec::new();
        for (new_r, &r) in rows.iter().enumerate() {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                if col_map[c] != usize::MAX {
                    t.push((new_r, col_map[c], v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &t)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] += v;
            }
        }
        m
    }

    /// Largest `|a_ij - a_ji|` relative to the largest `|a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let mut max_abs: f64 = 0.0;
        let mut max_diff: f64 = 0.0;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                max_abs = max_abs.max(v.abs());
                max_diff = max_diff.max((v - self.get(c, i)).abs());
            }
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_diff / max_abs
        }
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&self) -> Self {
        self.add_scaled(0.5, &self.transpose(), 0.5)
    }

    /// Drops entries with `|a_ij| <= tol * max|a|`.
    pub fn pruned(&self, tol: f64) -> Self {
        let max_abs = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cut = tol * max_abs;
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if v.abs() > cut || c == i {
                    t.push((i, c, v));
                }
            }
        }
        Self::from_triplets(self.nrows, self.ncols, &t)
    }
}

/// Reverse Cuthill–McKee ordering of the symmetric sparsity graph of `a`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut queue = VecDeque::new();
    let mut nbrs: Vec<usize> = Vec::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(a.row(v).0.iter().copied().filter(|&u| !visited[u]));
            nbrs.sort_by_key(|&u| (degree[u], u));
            for &u in &nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factorization in variable-band (skyline) storage of the lower
/// triangle, after a reverse Cuthill–McKee permutation.
#[derive(Clone, Debug)]
pub struct ProfileCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// first column stored in each row of `L`
    first: Vec<usize>,
    /// offset of row `i` in `values`; row `i` holds columns `first[i]..=i`
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl ProfileCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::InvalidArgument("Cholesky needs a square matrix".into()));
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old_i in 0..n {
            let i = inv[old_i];
            for &old_j in a.row(old_i).0 {
                let j = inv[old_j];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for (i, &f) in first.iter().enumerate() {
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        let mut values = vec![0.0; total];
        for old_i in 0..n {
            let i = inv[old_i];
            let (cols, vals) = a.row(old_i);
            for (&old_j, &v) in cols.iter().zip(vals) {
                let j = inv[old_j];
                if j <= i {
                    values[offset[i] + j - first[i]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let oi = offset[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offset[j];
                let k0 = fi.max(fj);
                let mut s = values[oi + j - fi];
                for k in k0..j {
                    s -= values[oi + k - fi] * values[oj + k - fj];
                }
                values[oi + j - fi] = s / values[oj + j - fj];
            }
            let mut d = values[oi + i - fi];
            for k in fi..i {
                let l = values[oi + k - fi];
                d -= l * l;
            }
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    pivot: perm[i],
                    value: d,
                });
            }
            values[oi + i - fi] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            first,
            offset,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // forward: L y = b
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let row = &self.values[oi..oi + i - fi];
            let s = row.iter().zip(&y[fi..i]).fold(y[i], |s, (l, yk)| s - l * yk);
            y[i] = s / self.values[oi + i - fi];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            y[i] /= self.values[oi + i - fi];
            let yi = y[i];
            for (yk, l) in y[fi..i].iter_mut().zip(&self.values[oi..]) {
                *yk -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.5), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), 3.5);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = laplace_1d(5);
        let p = CsrMatrix::from_triplets(5, 3, &[(0, 0, 1.0), (1, 0, 0.5), (1, 1, 0.5), (2, 1, 1.0), (4, 2, 2.0)]);
        let c = a.ptap(&p).to_dense();
        let d = p.to_dense().transpose() * a.to_dense() * p.to_dense();
        assert!((c - d).norm() < 1e-14);
    }

    #[test]
    fn profile_cholesky_solves() {
        let a = laplace_1d(40);
        let chol = ProfileCholesky::factor(&a).unwrap();
        let x_true: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x_true);
        let x = chol.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn profile_cholesky_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(
            ProfileCholesky::factor(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rcm_is_permutation() {
        let a = laplace_1d(17);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }
}
