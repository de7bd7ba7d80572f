//! Truncated Fock-space operators and density matrices.
//!
//! Composite spaces follow the Kronecker convention: the first subsystem in
//! `dims` is the most significant index. Charging uses `[signal, pump]` and
//! discharging uses `[signal, atom]`.
//!
//! Two-level systems use the basis `[|e⟩, |g⟩]`, so that `σ_z = diag(1, −1)`
//! and `σ₋ = |g⟩⟨e|`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Linear operator on a (possibly composite) truncated Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    mat: CsrMatrix,
    dims: Vec<usize>,
}

impl Operator {
    pub fn new(mat: CsrMatrix, dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        let order: usize = dims.iter().product();
        if mat.nrows() != mat.ncols() || mat.nrows() != order {
            return Err(Error::InvalidDimension(format!(
                "matrix is {}x{} but dims {:?} need order {}",
                mat.nrows(),
                mat.ncols(),
                dims,
                order
            )));
        }
        Ok(Self { mat, dims })
    }

    pub fn from_dense(m: &DMatrix<C64>, dims: Vec<usize>) -> Result<Self> {
        Self::new(CsrMatrix::from_dense(m), dims)
    }

    pub fn identity(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.iter().product();
        Self::new(CsrMatrix::identity(n), dims.to_vec())
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.iter().product();
        Self::new(CsrMatrix::zeros(n, n), dims.to_vec())
    }

    pub fn annihilation(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "ladder operators need at least 2 levels, got {n}"
            )));
        }
        let mat = CsrMatrix::from_triplets(
            n,
            n,
            (0..n - 1).map(|m| (m, m + 1, C64::new(((m + 1) as f64).sqrt(), 0.0))),
        );
        Self::new(mat, vec![n])
    }

    pub fn creation(n: usize) -> Result<Self> {
        Ok(Self::annihilation(n)?.dag())
    }

    /// `a†a = diag(0, 1, …, n−1)`.
    pub fn number(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "number operator needs at least 2 levels, got {n}"
            )));
        }
        let diag: Vec<C64> = (0..n).map(|m| C64::new(m as f64, 0.0)).collect();
        Self::new(CsrMatrix::from_diagonal(&diag), vec![n])
    }

    pub fn sigma_z() -> Self {
        let mat = CsrMatrix::from_diagonal(&[ONE, -ONE]);
        Self { mat, dims: vec![2] }
    }

    /// `σ₊ = |e⟩⟨g|`.
    pub fn sigma_plus() -> Self {
        let mat = CsrMatrix::from_triplets(2, 2, [(0, 1, ONE)]);
        Self { mat, dims: vec![2] }
    }

    /// `σ₋ = |g⟩⟨e|`.
    pub fn sigma_minus() -> Self {
        Self::sigma_plus().dag()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.mat
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        self.mat.to_dense()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.mat.get(i, j)
    }

    /// Hermitian conjugate.
    pub fn dag(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
            dims: self.dims.clone(),
        }
    }

    pub fn kron(&self, other: &Self) -> Self {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self {
            mat: self.mat.kron(&other.mat),
            dims,
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Ok(Self {
            mat: self.mat.matmul(&other.mat),
            dims: self.dims.clone(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Ok(Self {
            mat: self.mat.add(&other.mat),
            dims: self.dims.clone(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-ONE))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            mat: self.mat.scale(s),
            dims: self.dims.clone(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.mat.hermiticity_defect()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// Largest entry modulus; zero for the zero operator.
    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|(_, _, v)| v.norm()).fold(0.0, f64::max)
    }

    fn same_space(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::InvalidArgument(format!(
                "operator dims {:?} and {:?} differ",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

pub fn annihilation(n: usize) -> Result<Operator> {
    Operator::annihilation(n)
}

pub fn kron(a: &Operator, b: &Operator) -> Operator {
    a.kron(b)
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidDimension(format!(
            "subsystem dims must be nonempty and ≥ 1, got {dims:?}"
        )));
    }
    Ok(())
}

/// Validation tolerances for density matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub herm: f64,
    pub trace: f64,
    pub pos: f64,
}

impl Tolerances {
    /// Freshly constructed states.
    pub const CONSTRUCTION: Self = Self {
        herm: 1e-12,
        trace: 1e-12,
        pos: 1e-12,
    };

    /// States produced by the integrator.
    pub const EVOLUTION: Self = Self {
        herm: 1e-12,
        trace: 1e-8,
        pos: 1e-10,
    };
}

/// Hermitian, unit-trace, positive-semidefinite state stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    data: DMatrix<C64>,
    dims: Vec<usize>,
}

impl DensityMatrix {
    pub fn new(data: DMatrix<C64>, dims: Vec<usize>, tol: Tolerances) -> Result<Self> {
        let rho = Self::new_unchecked(data, dims)?;
        rho.validate(tol)?;
        Ok(rho)
    }

    /// Shape checks only.
    pub fn new_unchecked(data: DMatrix<C64>, dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        let order: usize = dims.iter().product();
        if data.nrows() != data.ncols() || data.nrows() != order {
            return Err(Error::InvalidDimension(format!(
                "density matrix is {}x{} but dims {:?} need order {}",
                data.nrows(),
                data.ncols(),
                dims,
                order
            )));
        }
        Ok(Self { data, dims })
    }

    /// Pure state `|ψ⟩⟨ψ|`; `psi` must be normalized.
    pub fn from_ket(psi: &DVector<C64>, dims: Vec<usize>) -> Result<Self> {
        Self::new(psi * psi.adjoint(), dims, Tolerances::CONSTRUCTION)
    }

    pub fn validate(&self, tol: Tolerances) -> Result<()> {
        let herm = self.hermiticity_defect();
        if herm > tol.herm {
            return Err(Error::InvalidState(format!(
                "not Hermitian: defect {herm:.3e} > {:.1e}",
                tol.herm
            )));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(Error::InvalidState(format!(
                "trace {tr} differs from 1 by more than {:.1e}",
                tol.trace
            )));
        }
        if !self.is_positive_within(tol.pos) {
            return Err(Error::InvalidState(format!(
                "minimum eigenvalue {:.3e} below −{:.1e}",
                self.min_eigenvalue(),
                tol.pos
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    /// Diagonal entry `⟨i|ρ|i⟩` (real part).
    pub fn population(&self, i: usize) -> f64 {
        self.data[(i, i)].re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.order();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                worst = worst.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = hermitian_part(&self.data);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// True when every eigenvalue is ≥ −tol. Decided by attempting a
    /// Cholesky factorization of `ρ + tol·I`, which is far cheaper than a
    /// full eigendecomposition on large composite states.
    pub fn is_positive_within(&self, tol: f64) -> bool {
        let n = self.order();
        let mut shifted = hermitian_part(&self.data);
        for i in 0..n {
            shifted[(i, i)] += C64::new(tol, 0.0);
        }
        cholesky_in_place(&mut shifted)
    }

    /// `self ⊗ other`.
    pub fn tensor(&self, other: &Self) -> Self {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self {
            data: self.data.kronecker(&other.data),
            dims,
        }
    }

    /// Re-expresses the state on a different truncation of a single mode:
    /// padding with empty levels, or truncating when the discarded levels
    /// carry no more than `max_discard` population.
    pub fn resize_mode(&self, n: usize, max_discard: f64) -> Result<Self> {
        if self.dims.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "resize_mode needs a single-mode state, got dims {:?}",
                self.dims
            )));
        }
        let old = self.order();
        let discarded: f64 = (n.min(old)..old).map(|i| self.population(i)).sum();
        if discarded > max_discard {
            return Err(Error::InvalidArgument(format!(
                "truncating {old} → {n} levels would discard population {discarded:.3e}"
            )));
        }
        let data = DMatrix::from_fn(n, n, |i, j| {
            if i < old && j < old {
                self.data[(i, j)]
            } else {
                ZERO
            }
        });
        Ok(Self {
            data,
            dims: vec![n],
        })
    }
}

/// Right-looking Cholesky factorization of a Hermitian matrix (lower
/// triangle is used and overwritten). Returns false as soon as a pivot is
/// not strictly positive.
fn cholesky_in_place(a: &mut DMatrix<C64>) -> bool {
    let n = a.nrows();
    let data = a.as_mut_slice();
    for j in 0..n {
        let pivot = data[j + j * n].re;
        if !(pivot > 0.0) {
            return false;
        }
        let root = pivot.sqrt();
        data[j + j * n] = C64::new(root, 0.0);
        for i in j + 1..n {
            data[i + j * n] /= root;
        }
        let (left, right) = data.split_at_mut((j + 1) * n);
        let col_j = &left[j * n..];
        for c in j + 1..n {
            let f = col_j[c].conj();
            if f == ZERO {
                continue;
            }
            let col_c = &mut right[(c - j - 1) * n..(c - j) * n];
            for i in c..n {
                col_c[i] -= col_j[i] * f;
            }
        }
    }
    true
}

pub(crate) fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Reduced state over the subsystems listed in `keep`, which are returned in
/// their original order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let dims = rho.dims();
    if keep.is_empty() {
        return Err(Error::InvalidArgument("keep set is empty".into()));
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.len() != keep.len() {
        return Err(Error::InvalidArgument(format!("keep set {keep:?} has duplicates")));
    }
    if let Some(&bad) = kept.iter().find(|&&s| s >= dims.len()) {
        return Err(Error::InvalidArgument(format!(
            "subsystem {bad} out of range for dims {dims:?}"
        )));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|s| !kept.contains(s)).collect();

    let mut strides = vec![1usize; dims.len()];
    for s in (0..dims.len().saturating_sub(1)).rev() {
        strides[s] = strides[s + 1] * dims[s + 1];
    }
    let offsets = |subsystems: &[usize]| -> Vec<usize> {
        let mut out = vec![0usize];
        for &s in subsystems {
            let (d, stride) = (dims[s], strides[s]);
            out = out
                .iter()
                .flat_map(|&base| (0..d).map(move |i| base + i * stride))
                .collect();
        }
        out
    };
    let kept_off = offsets(&kept);
    let traced_off = offsets(&traced);

    let m = rho.matrix();
    let n = kept_off.len();
    let data = DMatrix::from_fn(n, n, |a, b| {
        traced_off
            .iter()
            .map(|&t| m[(kept_off[a] + t, kept_off[b] + t)])
            .sum()
    });
    let new_dims = kept.iter().map(|&s| dims[s]).collect();
    DensityMatrix::new_unchecked(data, new_dims)
}

/// `Tr[ρ·o]`.
pub fn expectation(rho: &DensityMatrix, o: &Operator) -> Result<C64> {
    if rho.order() != o.order() {
        return Err(Error::InvalidArgument(format!(
            "state order {} does not match operator order {}",
            rho.order(),
            o.order()
        )));
    }
    let m = rho.matrix();
    Ok(o.matrix().iter().map(|(k, i, v)| v * m[(i, k)]).sum())
}

pub fn vacuum(n: usize) -> Result<DensityMatrix> {
    fock(n, 0)
}

pub fn fock(n: usize, k: usize) -> Result<DensityMatrix> {
    if n == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "Fock level {k} outside a {n}-level truncation"
        )));
    }
    let mut data = DMatrix::zeros(n, n);
    data[(k, k)] = ONE;
    DensityMatrix::new_unchecked(data, vec![n])
}

/// Largest probability mass a truncated coherent state may lose.
pub const COHERENT_LEAKAGE_LIMIT: f64 = 1e-8;

pub fn coherent(n: usize, alpha: C64) -> Result<DensityMatrix> {
    coherent_with_limit(n, alpha, COHERENT_LEAKAGE_LIMIT)
}

pub fn coherent_with_limit(n: usize, alpha: C64, limit: f64) -> Result<DensityMatrix> {
    let psi = coherent_ket_with_limit(n, alpha, limit)?;
    DensityMatrix::from_ket(&psi, vec![n])
}

/// Normalized truncated coherent ket.
pub fn coherent_ket(n: usize, alpha: C64) -> Result<DVector<C64>> {
    coherent_ket_with_limit(n, alpha, COHERENT_LEAKAGE_LIMIT)
}

pub fn coherent_ket_with_limit(n: usize, alpha: C64, limit: f64) -> Result<DVector<C64>> {
    if n == 0 {
        return Err(Error::InvalidDimension("coherent state needs n ≥ 1".into()));
    }
    let mean = alpha.norm_sqr();
    // Poisson weights built iteratively to stay finite for large n.
    let mut amp = C64::new((-mean / 2.0).exp(), 0.0);
    let mut psi = DVector::zeros(n);
    for m in 0..n {
        psi[m] = amp;
        amp = amp * alpha / ((m + 1) as f64).sqrt();
    }
    // Tail mass Σ_{m≥n} p(m), summed directly to avoid cancellation in 1 − Σ.
    let mut leaked = 0.0;
    let mut m = n;
    let mut w = amp.norm_sqr();
    while w > 0.0 {
        leaked += w;
        m += 1;
        w *= mean / m as f64;
        if m as f64 > mean && w <= leaked * 1e-17 {
            break;
        }
    }
    if leaked > limit {
        return Err(Error::Truncation { leaked, limit });
    }
    let norm = psi.norm();
    Ok(psi / C64::new(norm, 0.0))
}
