//! Ergotropy, passive states and the coherent/incoherent decomposition.
//!
//! For a state `ρ` with eigenvalues `r_0 ≥ r_1 ≥ …` and a Hamiltonian with
//! eigenpairs `(ε_n, |n⟩)`, `ε_0 ≤ ε_1 ≤ …`, the passive state is
//! `ρ̃ = Σ r_n |n⟩⟨n|` and the ergotropy is `Tr[ρh] − Tr[ρ̃h]`.
//!
//! The incoherent part is the ergotropy that survives dephasing in the energy
//! eigenbasis; the coherent part is the remainder:
//!
//! ```text
//! W^i = Tr[hρ] − Tr[h ϱ̃],    W^c = Tr[h ϱ̃] − Tr[h ρ̃],
//! ```
//!
//! with `ϱ̃` the passive state of the dephased `ϱ`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fock::{expectation, hermitian_part, DensityMatrix, Operator};

/// Eigenvalues of ρ in `[−CLAMP_SLACK, 0)` are treated as zero.
pub const CLAMP_SLACK: f64 = 1e-10;

/// Relative spacing below which two energy levels count as degenerate.
const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgotropyBreakdown {
    pub total: f64,
    pub coherent: f64,
    pub incoherent: f64,
}

/// Spectral decomposition of a Hamiltonian, computed once and reused for
/// every state of a trajectory.
#[derive(Debug, Clone)]
pub struct EnergyBasis {
    h: Operator,
    /// Ascending energies.
    energies: Vec<f64>,
    basis: Basis,
    degenerate: bool,
}

#[derive(Debug, Clone)]
enum Basis {
    /// `h` is diagonal; `order[n]` is the Fock index of the n-th lowest level.
    Diagonal { order: Vec<usize> },
    /// Columns are eigenvectors in ascending-energy order.
    General(DMatrix<C64>),
}

impl EnergyBasis {
    pub fn new(h: &Operator) -> Result<Self> {
        let scale = h.max_abs().max(1.0);
        let defect = h.hermiticity_defect();
        if defect > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "energy operator is not Hermitian (defect {defect:.3e})"
            )));
        }
        let (energies, basis): (Vec<f64>, Basis) = if h.matrix().is_diagonal() {
            let diag: Vec<f64> = h.matrix().diagonal().iter().map(|z| z.re).collect();
            let mut order: Vec<usize> = (0..diag.len()).collect();
            order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
            (order.iter().map(|&i| diag[i]).collect(), Basis::Diagonal { order })
        } else {
            let eig = hermitian_part(&h.to_dense()).symmetric_eigen();
            let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
            idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let vectors = DMatrix::from_fn(idx.len(), idx.len(), |i, j| eig.eigenvectors[(i, idx[j])]);
            (idx.iter().map(|&i| eig.eigenvalues[i]).collect(), Basis::General(vectors))
        };
        let span = energies
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()))
            .max(1.0);
        let degenerate = energies
            .windows(2)
            .any(|w| w[1] - w[0] < DEGENERACY_TOL * span);
        Ok(Self {
            h: h.clone(),
            energies,
            basis,
            degenerate,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    fn check(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.order() != self.energies.len() {
            return Err(Error::InvalidArgument(format!(
                "state order {} does not match Hamiltonian order {}",
                rho.order(),
                self.energies.len()
            )));
        }
        Ok(())
    }

    fn require_nondegenerate(&self) -> Result<()> {
        if self.degenerate {
            return Err(Error::Unsupported(
                "dephasing needs a nondegenerate energy spectrum".into(),
            ));
        }
        Ok(())
    }

    pub fn mean_energy(&self, rho: &DensityMatrix) -> Result<f64> {
        self.check(rho)?;
        Ok(expectation(rho, &self.h)?.re)
    }

    /// Energy-basis populations `⟨n|ρ|n⟩`, lowest level first.
    pub fn populations(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        self.check(rho)?;
        Ok(match &self.basis {
            Basis::Diagonal { order } => order.iter().map(|&i| rho.population(i)).collect(),
            Basis::General(v) => {
                let m = v.adjoint() * rho.matrix() * v;
                (0..m.nrows()).map(|i| m[(i, i)].re).collect()
            }
        })
    }

    /// `Σ_n p_n ε_n` after sorting `p` descending.
    fn passive_energy(&self, mut weights: Vec<f64>) -> f64 {
        weights.sort_by(|a, b| b.total_cmp(a));
        weights.iter().zip(&self.energies).map(|(p, e)| p * e).sum()
    }

    fn projector_sum(&self, weights: &[f64]) -> DMatrix<C64> {
        let n = self.energies.len();
        match &self.basis {
            Basis::Diagonal { order } => {
                let mut m = DMatrix::zeros(n, n);
                for (k, &i) in order.iter().enumerate() {
                    m[(i, i)] = C64::new(weights[k], 0.0);
                }
                m
            }
            Basis::General(v) => {
                let scaled = DMatrix::from_fn(n, n, |i, j| v[(i, j)] * weights[j]);
                scaled * v.adjoint()
            }
        }
    }

    pub fn passive_state(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        self.check(rho)?;
        let mut spec = clamped_spectrum(rho)?;
        spec.sort_by(|a, b| b.total_cmp(a));
        DensityMatrix::new_unchecked(self.projector_sum(&spec), rho.dims().to_vec())
    }

    /// Roundoff below zero is reported as zero.
    pub fn ergotropy(&self, rho: &DensityMatrix) -> Result<f64> {
        let mean = self.mean_energy(rho)?;
        Ok((mean - self.passive_energy(clamped_spectrum(rho)?)).max(0.0))
    }

    pub fn dephase(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        self.require_nondegenerate()?;
        let pops = self.populations(rho)?;
        DensityMatrix::new_unchecked(self.projector_sum(&pops), rho.dims().to_vec())
    }

    pub fn split(&self, rho: &DensityMatrix) -> Result<ErgotropyBreakdown> {
        self.require_nondegenerate()?;
        let mean = self.mean_energy(rho)?;
        let passive = self.passive_energy(clamped_spectrum(rho)?);
        let dephased_passive = self.passive_energy(self.populations(rho)?);
        let incoherent = (mean - dephased_passive).max(0.0);
        let coherent = (dephased_passive - passive).max(0.0);
        Ok(ErgotropyBreakdown {
            total: incoherent + coherent,
            coherent,
            incoherent,
        })
    }
}

/// Eigenvalues of ρ with roundoff negatives clamped to zero and rescaled so
/// that their sum equals `Tr ρ`.
fn clamped_spectrum(rho: &DensityMatrix) -> Result<Vec<f64>> {
    let raw = rho.eigenvalues();
    let trace: f64 = raw.iter().sum();
    if let Some(&min) = raw.first() {
        if min < -CLAMP_SLACK {
            return Err(Error::InvalidState(format!(
                "eigenvalue {min:.3e} is below −{CLAMP_SLACK:.0e}"
            )));
        }
    }
    let mut spec: Vec<f64> = raw.iter().map(|&r| r.max(0.0)).collect();
    let sum: f64 = spec.iter().sum();
    if sum > 0.0 && sum != trace {
        let k = trace / sum;
        spec.iter_mut().for_each(|r| *r *= k);
    }
    Ok(spec)
}

pub fn passive_state(rho: &DensityMatrix, h: &Operator) -> Result<DensityMatrix> {
    EnergyBasis::new(h)?.passive_state(rho)
}

pub fn ergotropy(rho: &DensityMatrix, h: &Operator) -> Result<f64> {
    EnergyBasis::new(h)?.ergotropy(rho)
}

pub fn dephase(rho: &DensityMatrix, h: &Operator) -> Result<DensityMatrix> {
    EnergyBasis::new(h)?.dephase(rho)
}

pub fn split(rho: &DensityMatrix, h: &Operator) -> Result<ErgotropyBreakdown> {
    EnergyBasis::new(h)?.split(rho)
}

/// Average charging power `P(t) = W(t)/t`, with `P(0) = 0`.
pub fn avg_power(w: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    if w.len() != t.len() {
        return Err(Error::InvalidArgument(format!(
            "energy series has {} samples but time series has {}",
            w.len(),
            t.len()
        )));
    }
    if let Some(bad) = t.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("time {bad} is negative or not finite")));
    }
    Ok(w.iter()
        .zip(t)
        .map(|(&wk, &tk)| if tk > 0.0 { wk / tk } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent, coherent_with_limit, fock, vacuum, Tolerances};
    use crate::testutil::{random_hermitian, random_state};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_state(p: &[f64]) -> DensityMatrix {
        let d = DVector::from_iterator(p.len(), p.iter().map(|&x| C64::new(x, 0.0)));
        DensityMatrix::new(DMatrix::from_diagonal(&d), vec![p.len()], Tolerances::CONSTRUCTION).unwrap()
    }

    fn diag_op(e: &[f64]) -> Operator {
        let d = DVector::from_iterator(e.len(), e.iter().map(|&x| C64::new(x, 0.0)));
        Operator::from_dense(&DMatrix::from_diagonal(&d), vec![e.len()]).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// min over assignments of ρ's eigenvalues to h's eigenvectors of Tr[σh].
    fn passive_energy_oracle(rho: &DensityMatrix, h: &DMatrix<C64>) -> f64 {
        let r = rho.eigenvalues();
        let e: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
        permutations(r.len())
            .iter()
            .map(|p| p.iter().enumerate().map(|(k, &j)| r[j] * e[k]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn two_level_rearrangement() {
        let out = passive_state(&diag_state(&[0.2, 0.8]), &diag_op(&[0.0, 1.0])).unwrap();
        assert!((out.population(0) - 0.8).abs() < 1e-15);
        assert!((out.population(1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn passive_state_is_a_fixed_point() {
        let rho = diag_state(&[0.5, 0.3, 0.15, 0.05]);
        let h = Operator::number(4).unwrap();
        let out = passive_state(&rho, &h).unwrap();
        assert!((out.matrix() - rho.matrix()).norm() < 1e-12);
        assert!(ergotropy(&out, &h).unwrap().abs() < 1e-12);
    }

    #[test]
    fn passive_state_minimizes_energy_over_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let rho = random_state(5, &mut rng);
            let hd = random_hermitian(5, &mut rng);
            let h = Operator::from_dense(&hd, vec![5]).unwrap();
            let pas = passive_state(&rho, &h).unwrap();
            let e = expectation(&pas, &h).unwrap().re;
            assert!((e - passive_energy_oracle(&rho, &hd)).abs() < 1e-10);
            assert!((pas.trace().re - 1.0).abs() < 1e-12);
            let comm = pas.matrix() * &hd - &hd * pas.matrix();
            assert!(comm.norm() < 1e-10);
            let again = passive_state(&pas, &h).unwrap();
            assert!((again.matrix() - pas.matrix()).norm() < 1e-10);
        }
    }

    #[test]
    fn ergotropy_examples() {
        let h = Operator::number(4).unwrap();
        assert_eq!(ergotropy(&vacuum(4).unwrap(), &h).unwrap(), 0.0);
        assert!((ergotropy(&fock(4, 2).unwrap(), &h).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ergotropy_matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let rho = random_state(6, &mut rng);
            let hd = random_hermitian(6, &mut rng);
            let h = Operator::from_dense(&hd, vec![6]).unwrap();
            let mean = expectation(&rho, &h).unwrap().re;
            let oracle = mean - passive_energy_oracle(&rho, &hd);
            assert!((ergotropy(&rho, &h).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn non_hermitian_energy_operator_is_rejected() {
        let a = crate::fock::annihilation(3).unwrap();
        let rho = vacuum(3).unwrap();
        assert!(matches!(ergotropy(&rho, &a), Err(Error::InvalidArgument(_))));
        assert!(matches!(passive_state(&rho, &a), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dephase_examples() {
        let h = Operator::number(8).unwrap();
        let d = diag_state(&[0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(dephase(&d, &h).unwrap().matrix(), d.matrix());

        // Eight levels cannot hold |α=1⟩ to 1e-8, so the leakage limit is
        // widened for this example.
        let coh = coherent_with_limit(8, C64::new(1.0, 0.0), 1e-4).unwrap();
        let deph = dephase(&coh, &h).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { coh.matrix()[(i, j)] } else { C64::new(0.0, 0.0) };
                assert_eq!(deph.matrix()[(i, j)], want);
            }
        }
    }

    #[test]
    fn dephase_rejects_degenerate_hamiltonian() {
        let h = diag_op(&[0.0, 1.0, 1.0]);
        let rho = vacuum(3).unwrap();
        assert!(matches!(dephase(&rho, &h), Err(Error::Unsupported(_))));
        assert!(matches!(split(&rho, &h), Err(Error::Unsupported(_))));
        assert!(ergotropy(&rho, &h).is_ok());
    }

    #[test]
    fn dephasing_never_increases_ergotropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = diag_op(&[0.0, 0.7, 1.1, 2.0, 3.5]);
        for _ in 0..100 {
            let rho = random_state(5, &mut rng);
            let full = ergotropy(&rho, &h).unwrap();
            let deph = ergotropy(&dephase(&rho, &h).unwrap(), &h).unwrap();
            assert!(deph <= full + 1e-12);
        }
    }

    #[test]
    fn split_of_diagonal_state_is_incoherent() {
        let rho = diag_state(&[0.1, 0.6, 0.3]);
        let h = Operator::number(3).unwrap();
        let b = split(&rho, &h).unwrap();
        assert_eq!(b.coherent, 0.0);
        assert!((b.incoherent - ergotropy(&rho, &h).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn split_of_coherent_state() {
        let n = 16;
        let rho = coherent(n, C64::new(1.0, 0.0)).unwrap();
        let h = Operator::number(n).unwrap();
        let b = split(&rho, &h).unwrap();
        // Poisson(1) diagonal, built independently of the state constructor.
        let mut p = vec![0.0; n];
        p[0] = (-1.0f64).exp();
        for m in 1..n {
            p[m] = p[m - 1] / m as f64;
        }
        let mean: f64 = p.iter().enumerate().map(|(m, x)| m as f64 * x).sum();
        let mut sorted = p.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let passive: f64 = sorted.iter().enumerate().map(|(m, x)| m as f64 * x).sum();
        assert!((b.incoherent - (mean - passive)).abs() < 1e-8);
        // Pure state: its passive state is the vacuum.
        assert!((b.total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn split_is_additive_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Operator::number(5).unwrap();
        for _ in 0..100 {
            let rho = random_state(5, &mut rng);
            let b = split(&rho, &h).unwrap();
            assert!((b.total - b.coherent - b.incoherent).abs() < 1e-10);
            assert!((b.total - ergotropy(&rho, &h).unwrap()).abs() < 1e-10);
            assert!(b.coherent >= -1e-10 && b.incoherent >= -1e-10);
        }
    }

    #[test]
    fn general_basis_agrees_with_diagonal_fast_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = [0.3, -1.0, 2.2, 0.9];
        let diag = diag_op(&e);
        // Same spectrum, written in a rotated basis.
        let q = random_hermitian(4, &mut rng).symmetric_eigen().eigenvectors;
        let d = DMatrix::from_diagonal(&DVector::from_iterator(4, e.iter().map(|&x| C64::new(x, 0.0))));
        let rotated = Operator::from_dense(&(&q * d * q.adjoint()), vec![4]).unwrap();
        let rho = random_state(4, &mut rng);
        let rho_rot = DensityMatrix::new_unchecked(&q * rho.matrix() * q.adjoint(), vec![4]).unwrap();
        let a = split(&rho, &diag).unwrap();
        let b = split(&rho_rot, &rotated).unwrap();
        assert!((a.total - b.total).abs() < 1e-10);
        assert!((a.coherent - b.coherent).abs() < 1e-10);
    }

    #[test]
    fn slightly_negative_eigenvalues_are_clamped() {
        let rho = DensityMatrix::new_unchecked(
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                C64::new(1.0 + 5e-11, 0.0),
                C64::new(-5e-11, 0.0),
            ])),
            vec![2],
        )
        .unwrap();
        let h = Operator::number(2).unwrap();
        assert!(ergotropy(&rho, &h).unwrap() >= -1e-10);
        let bad = DensityMatrix::new_unchecked(
            DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(1.1, 0.0), C64::new(-0.1, 0.0)])),
            vec![2],
        )
        .unwrap();
        assert!(matches!(ergotropy(&bad, &h), Err(Error::InvalidState(_))));
    }

    #[test]
    fn average_power() {
        let t = [0.0, 1.0, 2.0, 4.0];
        let w: Vec<f64> = t.iter().map(|x| 3.0 * x).collect();
        assert_eq!(avg_power(&w, &t).unwrap(), vec![0.0, 3.0, 3.0, 3.0]);
        assert!(avg_power(&[1.0], &[-1.0]).is_err());
        assert!(avg_power(&[1.0, 2.0], &[1.0]).is_err());
    }
}
