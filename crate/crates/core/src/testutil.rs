use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;

use crate::fock::{DensityMatrix, Tolerances};

pub fn random_matrix<R: Rng>(n: usize, rng: &mut R) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn random_hermitian<R: Rng>(n: usize, rng: &mut R) -> DMatrix<C64> {
    let g = random_matrix(n, rng);
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

/// Full-rank random state `GG†/Tr(GG†)`.
pub fn random_state<R: Rng>(n: usize, rng: &mut R) -> DensityMatrix {
    let g = random_matrix(n, rng);
    let m = &g * g.adjoint();
    let m = &m / m.trace();
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    DensityMatrix::new(m, vec![n], Tolerances::CONSTRUCTION).unwrap()
}
