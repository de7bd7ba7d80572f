//! The DOPO charger: model construction, mean-field threshold analysis and
//! the charging drivers.
//!
//! Everything is expressed in the frame rotating at half the pump frequency,
//! with rates in units of the signal loss `γ_s`. The composite space is
//! ordered `[signal, pump]`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve_observed, Collapse, EvolveOptions, LindbladModel};
use crate::error::{Error, Result};
use crate::fock::{expectation, partial_trace, vacuum, DensityMatrix, Operator};
use crate::ode::{Dopri5, Stats, StepControl};
use crate::work::{avg_power, EnergyBasis};

/// Top-level Fock population above which a truncation is considered too small.
pub const TRUNCATION_POPULATION_LIMIT: f64 = 1e-4;

/// Mean-field amplitude beyond which a trajectory is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DopoParams {
    /// Nonlinear coupling κ.
    pub kappa: f64,
    /// Signal loss rate γ_s.
    pub gamma_s: f64,
    /// Pump loss rate γ_p.
    pub gamma_p: f64,
    /// Pump drive amplitude F_p (units of √γ_s).
    pub f_p: f64,
    /// Detuning Δ = ω_s − ω_p/2.
    pub delta: f64,
    /// Signal truncation N_s.
    pub n_s: usize,
    /// Pump truncation N_p.
    pub n_p: usize,
}

impl Default for DopoParams {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            gamma_s: 1.0,
            gamma_p: 16.0,
            f_p: 3.0,
            delta: 0.0,
            n_s: 32,
            n_p: 9,
        }
    }
}

impl DopoParams {
    pub fn with_drive(self, f_p: f64) -> Self {
        Self { f_p, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma_s", self.gamma_s), ("gamma_p", self.gamma_p)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be > 0")));
            }
        }
        // κ = 0 is allowed: it switches the down-conversion off.
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("kappa = {} must be ≥ 0", self.kappa)));
        }
        if !(self.f_p >= 0.0 && self.f_p.is_finite()) {
            return Err(Error::InvalidArgument(format!("f_p = {} must be ≥ 0", self.f_p)));
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidArgument("delta must be finite".into()));
        }
        if self.n_s < 2 || self.n_p < 2 {
            return Err(Error::InvalidArgument(format!(
                "truncations must be ≥ 2, got n_s = {}, n_p = {}",
                self.n_s, self.n_p
            )));
        }
        Ok(())
    }
}

/// Ladder operators of the composite `[signal, pump]` space.
struct Modes {
    a_s: Operator,
    a_p: Operator,
}

impl Modes {
    fn new(n_s: usize, n_p: usize) -> Result<Self> {
        let a_s = Operator::annihilation(n_s)?.kron(&Operator::identity(&[n_p])?);
        let a_p = Operator::identity(&[n_s])?.kron(&Operator::annihilation(n_p)?);
        Ok(Self { a_s, a_p })
    }
}

/// `H = Δ a_s†a_s + i(κ/2 a_s†² a_p + √γ_p F_p a_p† − h.c.)` with signal and
/// pump damping at rates `γ_s` and `γ_p`.
pub fn build_model(p: &DopoParams) -> Result<LindbladModel> {
    p.validate()?;
    let Modes { a_s, a_p } = Modes::new(p.n_s, p.n_p)?;
    let a_s_dag = a_s.dag();
    let a_p_dag = a_p.dag();

    let down_conversion = a_s_dag.mul(&a_s_dag)?.mul(&a_p)?.scale_re(p.kappa / 2.0);
    let drive = a_p_dag.scale_re(p.gamma_p.sqrt() * p.f_p);
    let k = down_conversion.add(&drive)?;
    let i = C64::new(0.0, 1.0);
    let mut h = k.scale(i).sub(&k.dag().scale(i))?;
    if p.delta != 0.0 {
        h = h.add(&a_s_dag.mul(&a_s)?.scale_re(p.delta))?;
    }
    LindbladModel::new(
        h,
        vec![Collapse::new(p.gamma_s, a_s), Collapse::new(p.gamma_p, a_p)],
    )
}

/// Pump threshold `F_p^(th) = γ_s √γ_p / (4κ)`; infinite without coupling.
pub fn threshold(p: &DopoParams) -> f64 {
    p.gamma_s * p.gamma_p.sqrt() / (4.0 * p.kappa)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldState {
    pub alpha_s: C64,
    pub alpha_p: C64,
}

impl MeanFieldState {
    pub fn new(alpha_s: C64, alpha_p: C64) -> Self {
        Self { alpha_s, alpha_p }
    }
}

#[derive(Debug, Clone)]
pub struct MeanFieldTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MeanFieldState>,
}

impl MeanFieldTrajectory {
    pub fn last(&self) -> MeanFieldState {
        *self.states.last().expect("trajectory has at least one sample")
    }
}

/// Mean-field equations
/// `α̇_s = −γ_s/2 α_s + κ α_s* α_p`,
/// `α̇_p = −γ_p/2 α_p − κ/2 α_s² + √γ_p F_p`.
pub fn meanfield_rhs(p: &DopoParams, s: MeanFieldState) -> MeanFieldState {
    let a_s = -s.alpha_s * (p.gamma_s / 2.0) + s.alpha_s.conj() * s.alpha_p * p.kappa;
    let a_p = -s.alpha_p * (p.gamma_p / 2.0) - s.alpha_s * s.alpha_s * (p.kappa / 2.0)
        + C64::new(p.gamma_p.sqrt() * p.f_p, 0.0);
    MeanFieldState::new(a_s, a_p)
}

/// Steady state with an empty signal field: `α_p(∞) = 2F_p/√γ_p`.
pub fn below_threshold_fixed_point(p: &DopoParams) -> MeanFieldState {
    MeanFieldState::new(C64::new(0.0, 0.0), C64::new(2.0 * p.f_p / p.gamma_p.sqrt(), 0.0))
}

/// Eigenvalues `λ± = −γ_s/2 ± κ|α_p|` of the linearized signal dynamics
/// around `α_s = 0`.
pub fn stability_eigenvalues(p: &DopoParams, alpha_p: C64) -> (f64, f64) {
    let base = -p.gamma_s / 2.0;
    let spread = p.kappa * alpha_p.norm();
    (base + spread, base - spread)
}

pub fn meanfield_evolve(
    p: &DopoParams,
    s0: MeanFieldState,
    t_end: f64,
    sample_dt: f64,
) -> Result<MeanFieldTrajectory> {
    p.validate()?;
    if !(t_end > 0.0) || !(sample_dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} and sample_dt = {sample_dt} must be > 0"
        )));
    }
    let ctl = StepControl {
        rtol: 1e-10,
        atol: 1e-12,
        ..StepControl::default()
    };
    let params = *p;
    let mut stepper = Dopri5::new(
        move |y: &[C64], dy: &mut [C64]| {
            let d = meanfield_rhs(&params, MeanFieldState::new(y[0], y[1]));
            dy[0] = d.alpha_s;
            dy[1] = d.alpha_p;
        },
        2,
        ctl,
    );
    let mut y = [s0.alpha_s, s0.alpha_p];
    let mut t = 0.0;
    let mut traj = MeanFieldTrajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    for ts in crate::dynamics::sample_times(0.0, t_end, sample_dt) {
        stepper
            .advance(&mut t, &mut y, ts, &mut |_| {})
            .map_err(|e| match e {
                Error::Integration { time, .. } => Error::Instability {
                    time,
                    magnitude: y_magnitude(&y),
                },
                other => other,
            })?;
        let magnitude = y_magnitude(&y);
        if !(magnitude <= DIVERGENCE_LIMIT) {
            return Err(Error::Instability { time: ts, magnitude });
        }
        traj.times.push(ts);
        traj.states.push(MeanFieldState::new(y[0], y[1]));
    }
    Ok(traj)
}

fn y_magnitude(y: &[C64]) -> f64 {
    y.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Sampled charging observables. Energies are in units where `ω_s = 1`.
#[derive(Debug, Clone)]
pub struct ErgotropyTrajectory {
    pub times: Vec<f64>,
    /// Total ergotropy W.
    pub w: Vec<f64>,
    /// Coherent part W^c.
    pub w_c: Vec<f64>,
    /// Incoherent part W^i.
    pub w_i: Vec<f64>,
    /// Average charging power W/t.
    pub power: Vec<f64>,
    /// ⟨a_s†a_s⟩.
    pub n_s: Vec<f64>,
    /// ⟨a_p†a_p⟩.
    pub n_p: Vec<f64>,
    /// ⟨a_s⟩.
    pub alpha_s: Vec<C64>,
    /// ⟨a_p⟩.
    pub alpha_p: Vec<C64>,
    /// Largest population of the top signal / pump Fock level seen.
    pub top_population: (f64, f64),
    /// Reduced signal state at the last sample.
    pub final_signal: DensityMatrix,
    pub stats: Stats,
}

impl ErgotropyTrajectory {
    /// Message when the truncation looks too small for the run.
    pub fn truncation_warning(&self) -> Option<String> {
        let (s, p) = self.top_population;
        if s > TRUNCATION_POPULATION_LIMIT || p > TRUNCATION_POPULATION_LIMIT {
            Some(format!(
                "top Fock level populations reached {s:.2e} (signal) and {p:.2e} (pump), above {TRUNCATION_POPULATION_LIMIT:.0e}"
            ))
        } else {
            None
        }
    }

    fn empty(final_signal: DensityMatrix) -> Self {
        Self {
            times: Vec::new(),
            w: Vec::new(),
            w_c: Vec::new(),
            w_i: Vec::new(),
            power: Vec::new(),
            n_s: Vec::new(),
            n_p: Vec::new(),
            alpha_s: Vec::new(),
            alpha_p: Vec::new(),
            top_population: (0.0, 0.0),
            final_signal,
            stats: Stats::default(),
        }
    }
}

/// Per-sample reduction of the composite state.
struct Recorder {
    basis: EnergyBasis,
    number: Operator,
    a_s: Operator,
    a_p: Operator,
    pump_number: Operator,
    out: ErgotropyTrajectory,
}

impl Recorder {
    fn new(p: &DopoParams) -> Result<Self> {
        let number = Operator::number(p.n_s)?;
        Ok(Self {
            basis: EnergyBasis::new(&number)?,
            number,
            a_s: Operator::annihilation(p.n_s)?,
            a_p: Operator::annihilation(p.n_p)?,
            pump_number: Operator::number(p.n_p)?,
            out: ErgotropyTrajectory::empty(vacuum(p.n_s)?),
        })
    }

    fn record(&mut self, t: f64, rho: &DensityMatrix) -> Result<()> {
        let rho_s = partial_trace(rho, &[0])?;
        let rho_p = partial_trace(rho, &[1])?;
        let split = self.basis.split(&rho_s).map_err(|e| Error::Integration {
            time: t,
            reason: format!("ergotropy of the signal state: {e}"),
        })?;
        let o = &mut self.out;
        o.times.push(t);
        o.w.push(split.total);
        o.w_c.push(split.coherent);
        o.w_i.push(split.incoherent);
        o.n_s.push(expectation(&rho_s, &self.number)?.re);
        o.n_p.push(expectation(&rho_p, &self.pump_number)?.re);
        o.alpha_s.push(expectation(&rho_s, &self.a_s)?);
        o.alpha_p.push(expectation(&rho_p, &self.a_p)?);
        let top_s = rho_s.population(rho_s.order() - 1);
        let top_p = rho_p.population(rho_p.order() - 1);
        o.top_population.0 = o.top_population.0.max(top_s);
        o.top_population.1 = o.top_population.1.max(top_p);
        o.final_signal = rho_s;
        Ok(())
    }

    fn finish(mut self, stats: Stats) -> Result<ErgotropyTrajectory> {
        self.out.power = avg_power(&self.out.w, &self.out.times)?;
        self.out.stats = stats;
        Ok(self.out)
    }
}

fn add_stats(a: Stats, b: Stats) -> Stats {
    Stats {
        accepted: a.accepted + b.accepted,
        rejected: a.rejected + b.rejected,
        rhs_evals: a.rhs_evals + b.rhs_evals,
    }
}

/// Charges from the double vacuum `|0⟩⟨0| ⊗ |0⟩⟨0|` under constant drive.
pub fn charge(
    p: &DopoParams,
    t_end: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<ErgotropyTrajectory> {
    let model = build_model(p)?;
    let rho0 = vacuum(p.n_s)?.tensor(&vacuum(p.n_p)?);
    let mut rec = Recorder::new(p)?;
    let (_, stats) = evolve_observed(&model, &rho0, 0.0, t_end, sample_dt, opts, |t, rho| {
        rec.record(t, rho)
    })?;
    rec.finish(stats)
}

/// Charges until `t_off`, then sets `F_p = 0` and keeps evolving the same
/// state until `t_end`.
pub fn charge_with_switchoff(
    p: &DopoParams,
    t_off: f64,
    t_end: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<ErgotropyTrajectory> {
    if !(t_off > 0.0 && t_off < t_end) {
        return Err(Error::InvalidArgument(format!(
            "switch-off time {t_off} must lie in (0, {t_end})"
        )));
    }
    let on = build_model(p)?;
    let off = build_model(&p.with_drive(0.0))?;
    let rho0 = vacuum(p.n_s)?.tensor(&vacuum(p.n_p)?);
    let mut rec = Recorder::new(p)?;
    let (rho_off, first) =
        evolve_observed(&on, &rho0, 0.0, t_off, sample_dt, opts, |t, rho| rec.record(t, rho))?;
    let (_, second) = evolve_observed(&off, &rho_off, t_off, t_end, sample_dt, opts, |t, rho| {
        if t > t_off {
            rec.record(t, rho)
        } else {
            Ok(())
        }
    })?;
    rec.finish(add_stats(first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rhs;
    use crate::testutil::random_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(f_p: f64) -> DopoParams {
        DopoParams {
            f_p,
            n_s: 6,
            n_p: 3,
            ..DopoParams::default()
        }
    }

    #[test]
    fn undriven_uncoupled_model_has_zero_hamiltonian() {
        let p = DopoParams {
            kappa: 0.0,
            ..small(0.0)
        };
        let model = build_model(&p).unwrap();
        assert_eq!(model.hamiltonian().max_abs(), 0.0);
        assert!(threshold(&p).is_infinite());
    }

    #[test]
    fn down_conversion_matrix_element() {
        let p = small(0.0);
        let h = build_model(&p).unwrap().hamiltonian().clone();
        // |2_s, 0_p⟩ ↔ |0_s, 1_p⟩ with index = n_s·N_p + n_p.
        let row = 2 * p.n_p;
        let col = 1;
        let want = C64::new(0.0, p.kappa * 2f64.sqrt() / 2.0);
        assert!((h.get(row, col) - want).norm() < 1e-15);
        assert!((h.get(col, row) - want.conj()).norm() < 1e-15);
    }

    #[test]
    fn default_model_is_hermitian_with_exact_rates() {
        let p = DopoParams::default();
        let model = build_model(&p).unwrap();
        assert!(model.hamiltonian().hermiticity_defect() <= 1e-12);
        let rates: Vec<f64> = model.collapses().iter().map(|c| c.rate).collect();
        assert_eq!(rates, vec![p.gamma_s, p.gamma_p]);

        // ⟨ψ|H|ψ⟩ is real for random vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        use rand::Rng;
        let n = p.n_s * p.n_p;
        for _ in 0..5 {
            let psi: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let h_psi = model.hamiltonian().matrix().mul_vec(&psi);
            let val: C64 = psi.iter().zip(&h_psi).map(|(a, b)| a.conj() * b).sum();
            assert!(val.im.abs() < 1e-10 * val.norm().max(1.0));
        }
    }

    #[test]
    fn detuning_adds_signal_energy() {
        let p = DopoParams { delta: 0.3, ..small(0.0) };
        let h = build_model(&p).unwrap().hamiltonian().clone();
        let idx = 3 * p.n_p; // |3_s, 0_p⟩
        assert!((h.get(idx, idx) - C64::new(0.9, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn invalid_params_are_rejected() {
        for p in [
            DopoParams { gamma_s: 0.0, ..small(1.0) },
            DopoParams { gamma_p: -1.0, ..small(1.0) },
            DopoParams { f_p: -0.1, ..small(1.0) },
            DopoParams { n_s: 1, ..small(1.0) },
        ] {
            assert!(matches!(build_model(&p), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn threshold_formula() {
        let p = DopoParams::default();
        assert!((threshold(&p) - 2.0).abs() < 1e-12);
        let doubled_kappa = DopoParams { kappa: 1.0, ..p };
        assert!((threshold(&doubled_kappa) - 1.0).abs() < 1e-12);
        let quad_gamma = DopoParams { gamma_p: 64.0, ..p };
        assert!((threshold(&quad_gamma) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn undriven_signal_decays_at_half_the_loss_rate() {
        let p = DopoParams { kappa: 0.0, ..DopoParams::default().with_drive(0.0) };
        let s0 = MeanFieldState::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        let traj = meanfield_evolve(&p, s0, 10.0, 0.5).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!((s.alpha_s - C64::new((-p.gamma_s * t / 2.0).exp(), 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn below_threshold_pump_saturates() {
        let p = DopoParams::default().with_drive(1.0);
        let s0 = MeanFieldState::new(C64::new(1e-3, 0.0), C64::new(0.0, 0.0));
        let end = meanfield_evolve(&p, s0, 200.0, 1.0).unwrap().last();
        assert!((end.alpha_p - C64::new(0.5, 0.0)).norm() < 1e-6);
        assert!(end.alpha_s.norm() < 1e-6);
        assert_eq!(below_threshold_fixed_point(&p).alpha_p, C64::new(0.5, 0.0));
        let (plus, minus) = stability_eigenvalues(&p, end.alpha_p);
        assert!((plus + 0.25).abs() < 1e-6);
        assert!((minus + 0.75).abs() < 1e-6);
    }

    #[test]
    fn threshold_separates_stable_and_unstable_signal() {
        let p = DopoParams::default();
        let th = threshold(&p);
        for (scale, stable) in [(0.99, true), (1.01, false)] {
            let q = p.with_drive(th * scale);
            let (plus, _) = stability_eigenvalues(&q, below_threshold_fixed_point(&q).alpha_p);
            assert_eq!(plus < 0.0, stable);
        }
    }

    #[test]
    fn above_threshold_signal_grows_to_macroscopic_amplitude() {
        let p = DopoParams::default();
        let s0 = MeanFieldState::new(C64::new(1e-3, 0.0), C64::new(0.0, 0.0));
        let end = meanfield_evolve(&p, s0, 100.0, 1.0).unwrap().last();
        // Fixed point: κ|α_p| = γ_s/2 and κ/2 α_s² = √γ_p F_p − γ_p/2 α_p.
        assert!((end.alpha_p.norm() - 1.0).abs() < 1e-6);
        assert!((end.alpha_s.norm_sqr() - 16.0).abs() < 1e-5);
    }

    #[test]
    fn meanfield_argument_errors() {
        let p = DopoParams::default();
        let s0 = MeanFieldState::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        assert!(meanfield_evolve(&p, s0, 0.0, 0.1).is_err());
    }

    #[test]
    fn undriven_charge_stays_empty() {
        let traj = charge(&small(0.0), 2.0, 0.5, &EvolveOptions::default()).unwrap();
        assert!(traj.w.iter().all(|&w| w == 0.0));
        assert!(traj.power.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn small_charge_run_is_consistent() {
        let traj = charge(&small(1.5), 4.0, 0.25, &EvolveOptions::default()).unwrap();
        assert_eq!(traj.times.len(), 17);
        for k in 0..traj.times.len() {
            assert!(traj.w[k] >= -1e-10);
            assert!((traj.w[k] - traj.w_c[k] - traj.w_i[k]).abs() < 1e-10);
        }
        assert!(traj.n_s.last().unwrap() > &0.0);
        // Signal parity is conserved from the vacuum, so ⟨a_s⟩ stays zero.
        assert!(traj.alpha_s.iter().all(|a| a.norm() < 1e-12));
    }

    #[test]
    fn switchoff_with_zero_drive_matches_plain_charge() {
        let opts = EvolveOptions::default();
        let plain = charge(&small(0.0), 2.0, 0.5, &opts).unwrap();
        let off = charge_with_switchoff(&small(0.0), 1.0, 2.0, 0.5, &opts).unwrap();
        assert_eq!(plain.times, off.times);
        assert_eq!(plain.w, off.w);
    }

    #[test]
    fn switchoff_continues_from_the_charged_state() {
        let opts = EvolveOptions::default();
        let p = small(2.5);
        let on = charge(&p, 2.0, 0.25, &opts).unwrap();
        let off = charge_with_switchoff(&p, 2.0, 4.0, 0.25, &opts).unwrap();
        assert_eq!(&off.times[..on.times.len()], &on.times[..]);
        assert_eq!(&off.w[..on.w.len()], &on.w[..]);
        assert!(off.n_s.last().unwrap() < on.n_s.last().unwrap());
        assert!(charge_with_switchoff(&p, 3.0, 2.0, 0.25, &opts).is_err());
    }

    #[test]
    fn lindblad_rhs_preserves_trace_on_random_states() {
        let p = small(2.0);
        let model = build_model(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_state(p.n_s * p.n_p, &mut rng);
        let r = DensityMatrix::new_unchecked(r.into_matrix(), vec![p.n_s, p.n_p]).unwrap();
        let d = rhs(&model, &r).unwrap();
        assert!(d.trace().norm() < 1e-12);
    }
}
