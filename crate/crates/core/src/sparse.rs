//! Compressed-sparse-row complex matrices and the sparse × dense kernels
//! used by the master-equation right-hand side.
//!
//! Dense operands are `nalgebra` matrices (column-major), so the kernels
//! walk one dense column at a time and gather the entries selected by each
//! sparse row.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![C64::new(1.0, 0.0); n])
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        Self::from_triplets(
            diag.len(),
            diag.len(),
            diag.iter().enumerate().map(|(i, &v)| (i, i, v)),
        )
    }

    /// Builds a matrix from `(row, col, value)` entries. Duplicates are summed
    /// and exact zeros are dropped.
    ///
    /// Panics if an index is out of range.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); nrows];
        for (i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of range");
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut acc = C64::new(0.0, 0.0);
                while k < row.len() && row[k].0 == j {
                    acc += row[k].1;
                    k += 1;
                }
                if acc != C64::new(0.0, 0.0) {
                    indices.push(j);
                    values.push(acc);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let (nrows, ncols) = m.shape();
        let triplets = (0..nrows)
            .flat_map(|i| (0..ncols).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, m[(i, j)]));
        Self::from_triplets(nrows, ncols, triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.indptr[i]..self.indptr[i + 1]).map(move |k| (i, self.indices[k], self.values[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let row = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.values[self.indptr[i] + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.iter().all(|(i, j, _)| i == j)
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.iter().map(|(i, j, v)| (j, i, v.conj())),
        )
    }

    pub fn scale(&self, s: C64) -> Self {
        if s == C64::new(0.0, 0.0) {
            return Self::zeros(self.nrows, self.ncols);
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Panics on shape mismatch.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(
            (self.nrows, self.ncols),
            (other.nrows, other.ncols),
            "shape mismatch in sparse add"
        );
        Self::from_triplets(self.nrows, self.ncols, self.iter().chain(other.iter()))
    }

    /// Sparse × sparse product. Panics on shape mismatch.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "shape mismatch in sparse matmul");
        let mut triplets = Vec::new();
        let mut acc = vec![C64::new(0.0, 0.0); other.ncols];
        let mut touched = vec![false; other.ncols];
        let mut cols = Vec::new();
        for i in 0..self.nrows {
            for ka in self.indptr[i]..self.indptr[i + 1] {
                let (k, a) = (self.indices[ka], self.values[ka]);
                for kb in other.indptr[k]..other.indptr[k + 1] {
                    let j = other.indices[kb];
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                    acc[j] += a * other.values[kb];
                }
            }
            for &j in &cols {
                triplets.push((i, j, acc[j]));
                acc[j] = C64::new(0.0, 0.0);
                touched[j] = false;
            }
            cols.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, triplets)
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (p, q) = (other.nrows, other.ncols);
        let triplets = self.iter().flat_map(|(i, j, a)| {
            other
                .iter()
                .map(move |(k, l, b)| (i * p + k, j * q + l, a * b))
        });
        Self::from_triplets(self.nrows * p, self.ncols * q, triplets)
    }

    /// `self · dense`. Panics on shape mismatch.
    pub fn mul_dense(&self, dense: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.nrows, dense.ncols());
        self.mul_dense_into(dense.as_slice(), dense.ncols(), out.as_mut_slice());
        out
    }

    /// `out = self · B` with `B` a column-major `ncols × m` block stored in
    /// `b`, and `out` column-major `nrows × m`.
    pub fn mul_dense_into(&self, b: &[C64], m: usize, out: &mut [C64]) {
        assert_eq!(b.len(), self.ncols * m, "dense operand has wrong length");
        assert_eq!(out.len(), self.nrows * m, "output has wrong length");
        for (bcol, ocol) in b.chunks_exact(self.ncols).zip(out.chunks_exact_mut(self.nrows)) {
            for (i, o) in ocol.iter_mut().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for k in self.indptr[i]..self.indptr[i + 1] {
                    acc += self.values[k] * bcol[self.indices[k]];
                }
                *o = acc;
            }
        }
    }

    /// `out += B · selfᴴ` with `B` a column-major `m × ncols` block. Works
    /// column by column on `B`, so no transposes are formed.
    pub fn add_mul_adjoint_right(&self, b: &[C64], m: usize, out: &mut [C64]) {
        assert_eq!(b.len(), self.ncols * m, "dense operand has wrong length");
        assert_eq!(out.len(), self.nrows * m, "output has wrong length");
        for (j, ocol) in out.chunks_exact_mut(m).enumerate() {
            for k in self.indptr[j]..self.indptr[j + 1] {
                let c = self.values[k].conj();
                let bcol = &b[self.indices[k] * m..(self.indices[k] + 1) * m];
                for (o, &x) in ocol.iter_mut().zip(bcol) {
                    *o += c * x;
                }
            }
        }
    }

    /// Sparse matrix-vector product.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.nrows];
        self.mul_dense_into(x, 1, &mut out);
        out
    }

    /// Largest entrywise modulus of `self - selfᴴ`.
    pub fn hermiticity_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.iter()
            .map(|(i, j, v)| (v - self.get(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, c(1.0)), (0, 1, c(2.0)), (1, 0, c(0.0))]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), c(3.0));
        assert_eq!(m.get(1, 0), c(0.0));
    }

    #[test]
    fn dense_round_trip_and_products_agree() {
        let d = DMatrix::from_fn(3, 3, |i, j| C64::new((i * 3 + j) as f64, i as f64 - j as f64));
        let s = CsrMatrix::from_dense(&d);
        assert_eq!(s.to_dense(), d);
        let e = DMatrix::from_fn(3, 2, |i, j| C64::new(1.0 + i as f64, j as f64));
        assert!((s.mul_dense(&e) - &d * &e).norm() < 1e-12);
        assert!((s.matmul(&s).to_dense() - &d * &d).norm() < 1e-12);
        assert!((s.adjoint().to_dense() - d.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn kron_matches_nalgebra() {
        let a = DMatrix::from_fn(2, 3, |i, j| C64::new(i as f64 + 1.0, j as f64));
        let b = DMatrix::from_fn(3, 2, |i, j| C64::new(j as f64, 2.0 - i as f64));
        let k = CsrMatrix::from_dense(&a).kron(&CsrMatrix::from_dense(&b));
        assert!((k.to_dense() - a.kronecker(&b)).norm() < 1e-12);
    }
}
