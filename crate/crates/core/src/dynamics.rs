//! Lindblad master equation: generator, right-hand side and time evolution.
//!
//! The right-hand side is evaluated operator-wise on the dense state,
//!
//! ```text
//! dρ/dt = Gρ + (Gρ)† + Σ_j L̃_j (L̃_j ρ)†,   G = −iH − ½ Σ_j γ_j L_j†L_j,   L̃_j = √γ_j L_j,
//! ```
//!
//! which equals `−i[H,ρ] + Σ_j γ_j (L_j ρ L_j† − ½{L_j†L_j, ρ})` for Hermitian
//! `ρ` and needs only sparse × dense products.

use std::cell::RefCell;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::blocks::BlockPlan;
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, Operator, Tolerances};
use crate::ode::{Dopri5, Stats, StepControl};
use crate::sparse::CsrMatrix;

/// Damping channel `γ·D[L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Collapse {
    pub rate: f64,
    pub op: Operator,
}

impl Collapse {
    pub fn new(rate: f64, op: Operator) -> Self {
        Self { rate, op }
    }
}

/// Hamiltonian (ħ = 1, in rate units) plus damping channels.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    hamiltonian: Operator,
    collapses: Vec<Collapse>,
    drift: CsrMatrix,
    jumps: Vec<CsrMatrix>,
}

impl LindbladModel {
    pub fn new(hamiltonian: Operator, collapses: Vec<Collapse>) -> Result<Self> {
        let scale = hamiltonian.max_abs().max(1.0);
        let defect = hamiltonian.hermiticity_defect();
        if defect > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "Hamiltonian is not Hermitian (defect {defect:.3e})"
            )));
        }
        for c in &collapses {
            if !(c.rate >= 0.0) || !c.rate.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "collapse rate {} must be finite and ≥ 0",
                    c.rate
                )));
            }
            if c.op.dims() != hamiltonian.dims() {
                return Err(Error::InvalidArgument(format!(
                    "collapse operator dims {:?} differ from Hamiltonian dims {:?}",
                    c.op.dims(),
                    hamiltonian.dims()
                )));
            }
        }

        let n = hamiltonian.order();
        let mut drift = hamiltonian.matrix().scale(C64::new(0.0, -1.0));
        let mut jumps = Vec::with_capacity(collapses.len());
        for c in collapses.iter().filter(|c| c.rate > 0.0) {
            let l = c.op.matrix();
            let ldl = l.adjoint().matmul(l);
            drift = drift.add(&ldl.scale(C64::new(-0.5 * c.rate, 0.0)));
            jumps.push(l.scale(C64::new(c.rate.sqrt(), 0.0)));
        }
        debug_assert_eq!(drift.nrows(), n);
        Ok(Self {
            hamiltonian,
            collapses,
            drift,
            jumps,
        })
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn collapses(&self) -> &[Collapse] {
        &self.collapses
    }

    pub fn dims(&self) -> &[usize] {
        self.hamiltonian.dims()
    }

    pub fn order(&self) -> usize {
        self.hamiltonian.order()
    }

    fn workspace(&self) -> Workspace {
        let n2 = self.order() * self.order();
        Workspace {
            tmp: vec![C64::new(0.0, 0.0); n2],
        }
    }

    /// `dρ/dt = Gρ + ρG† + Σ L̃ρL̃†` for a column-major Hermitian `n × n` state.
    fn rhs_into(&self, rho: &[C64], out: &mut [C64], ws: &mut Workspace) {
        let n = self.order();
        self.drift.mul_dense_into(rho, n, out);
        self.drift.add_mul_adjoint_right(rho, n, out);
        for l in &self.jumps {
            l.mul_dense_into(rho, n, &mut ws.tmp);
            l.add_mul_adjoint_right(&ws.tmp, n, out);
        }
    }
}

struct Workspace {
    tmp: Vec<C64>,
}

/// Lindblad right-hand side `dρ/dt`.
pub fn rhs(model: &LindbladModel, rho: &DensityMatrix) -> Result<DMatrix<C64>> {
    if rho.order() != model.order() {
        return Err(Error::InvalidArgument(format!(
            "state order {} does not match model order {}",
            rho.order(),
            model.order()
        )));
    }
    let n = model.order();
    let mut out = DMatrix::zeros(n, n);
    let mut ws = model.workspace();
    model.rhs_into(rho.matrix().as_slice(), out.as_mut_slice(), &mut ws);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub control: StepControl,
    /// Validation applied to every sampled state.
    pub tol: Tolerances,
    /// Run the positivity check on every `positivity_stride`-th sample
    /// (0 disables it). Trace and Hermiticity are always checked.
    pub positivity_stride: usize,
    /// Replace ρ by (ρ + ρ†)/2 after every accepted step.
    pub symmetrize: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            control: StepControl::default(),
            tol: Tolerances::EVOLUTION,
            positivity_stride: 1,
            symmetrize: true,
        }
    }
}

/// Sampled states of one evolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

/// Output grid `t_start + k·dt`, always ending exactly at `t_end`.
pub fn sample_times(t_start: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut k = 0usize;
    loop {
        let t = t_start + k as f64 * dt;
        if t >= t_end - dt * 1e-9 {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(t_end);
    times
}

/// Evolves `rho0` over `[0, t_end]`, storing every sampled state.
pub fn evolve(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    t_end: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    evolve_observed(model, rho0, 0.0, t_end, sample_dt, opts, |t, rho| {
        times.push(t);
        states.push(rho.clone());
        Ok(())
    })?;
    Ok(Trajectory { times, states })
}

/// Evolves `rho0` from `t_start` to `t_end`, handing each validated sample
/// (including both end points) to `observe`. Returns the final state and
/// integrator statistics.
pub fn evolve_observed<F>(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    t_start: f64,
    t_end: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
    mut observe: F,
) -> Result<(DensityMatrix, Stats)>
where
    F: FnMut(f64, &DensityMatrix) -> Result<()>,
{
    if !(t_end > t_start) {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} must exceed t_start = {t_start}"
        )));
    }
    if !(sample_dt > 0.0) {
        return Err(Error::InvalidArgument(format!("sample_dt = {sample_dt} must be > 0")));
    }
    if rho0.dims() != model.dims() {
        return Err(Error::InvalidArgument(format!(
            "state dims {:?} do not match model dims {:?}",
            rho0.dims(),
            model.dims()
        )));
    }
    rho0.validate(opts.tol)
        .map_err(|e| Error::InvalidArgument(format!("initial state: {e}")))?;

    let dims = model.dims().to_vec();
    let plan = RefCell::new(BlockPlan::new(&model.drift, &model.jumps, rho0.matrix().as_slice()));
    let mut stepper = Dopri5::new(
        |y: &[C64], dy: &mut [C64]| plan.borrow_mut().rhs(y, dy),
        plan.borrow().packed_len(),
        opts.control,
    );
    let symmetrize_on = opts.symmetrize;
    let mut post = |y: &mut [C64]| {
        if symmetrize_on {
            plan.borrow().symmetrize(y);
        }
    };

    let mut y = plan.borrow().pack(rho0.matrix().as_slice());
    let mut t = t_start;
    let mut last = rho0.clone();
    for (k, &ts) in sample_times(t_start, t_end, sample_dt).iter().enumerate() {
        stepper.advance(&mut t, &mut y, ts, &mut post)?;
        let rho = DensityMatrix::new_unchecked(plan.borrow().unpack(&y), dims.clone())?;
        check_sample(&rho, ts, k, opts)?;
        observe(ts, &rho)?;
        last = rho;
    }
    Ok((last, stepper.stats()))
}

fn check_sample(rho: &DensityMatrix, t: f64, k: usize, opts: &EvolveOptions) -> Result<()> {
    let fail = |reason: String| Err(Error::Integration { time: t, reason });
    let herm = rho.hermiticity_defect();
    if herm > opts.tol.herm {
        return fail(format!("state lost Hermiticity (defect {herm:.3e})"));
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > opts.tol.trace || !tr.re.is_finite() {
        return fail(format!("trace drifted to {}", tr.re));
    }
    if opts.positivity_stride > 0
        && k % opts.positivity_stride == 0
        && !rho.is_positive_within(opts.tol.pos)
    {
        return fail(format!(
            "minimum eigenvalue {:.3e} below −{:.1e}",
            rho.min_eigenvalue(),
            opts.tol.pos
        ));
    }
    Ok(())
}
