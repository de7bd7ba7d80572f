//! Discharge of the charged signal mode into a two-level load.
//!
//! The composite space is ordered `[signal, atom]` and the atom basis is
//! `[|e⟩, |g⟩]`. Rates and frequencies are in units of the signal loss
//! during discharge, `γ_s'`.

use serde::{Deserialize, Serialize};

use crate::dopo::{charge, DopoParams};
use crate::dynamics::{evolve_observed, Collapse, EvolveOptions, LindbladModel};
use crate::error::{Error, Result};
use crate::fit::first_peak_above;
use crate::fock::{fock, partial_trace, DensityMatrix, Operator};
use crate::ode::Stats;
use crate::work::EnergyBasis;

/// Maxima of `κ_a` at or below this level are roundoff, not transfer.
pub const PEAK_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// The Hamiltonian as written, including the free terms.
    #[default]
    Lab,
    /// Rotating at `ω_a` for both subsystems; only the detuning
    /// `(ω_s − ω_a) a†a` and the coupling remain.
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DischargeParams {
    pub omega_s: f64,
    pub omega_a: f64,
    /// Signal–atom coupling g.
    pub g: f64,
    /// Signal loss γ_s' (the unit of this stage).
    pub gamma_s2: f64,
    /// Atomic relaxation γ_a.
    pub gamma_a: f64,
    pub n_s: usize,
    pub frame: Frame,
}

impl Default for DischargeParams {
    fn default() -> Self {
        Self {
            omega_s: 1000.0,
            omega_a: 1000.0,
            g: 10.0,
            gamma_s2: 1.0,
            gamma_a: 1.0,
            n_s: 32,
            frame: Frame::Lab,
        }
    }
}

impl DischargeParams {
    pub fn with_coupling(self, g: f64) -> Self {
        Self { g, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("omega_s", self.omega_s),
            ("omega_a", self.omega_a),
            ("g", self.g),
            ("gamma_s2", self.gamma_s2),
            ("gamma_a", self.gamma_a),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be > 0")));
            }
        }
        if self.n_s < 2 {
            return Err(Error::InvalidArgument(format!("n_s = {} must be ≥ 2", self.n_s)));
        }
        Ok(())
    }
}

struct Ops {
    a: Operator,
    sigma_minus: Operator,
    number: Operator,
    half_sigma_z: Operator,
}

impl Ops {
    fn new(n_s: usize) -> Result<Self> {
        Ok(Self {
            a: Operator::annihilation(n_s)?,
            sigma_minus: Operator::sigma_minus(),
            number: Operator::number(n_s)?,
            half_sigma_z: Operator::sigma_z().scale_re(0.5),
        })
    }
}

/// Assembles the model without checking the rates, so that lossless
/// configurations can be built for testing.
fn assemble(p: &DischargeParams) -> Result<LindbladModel> {
    let o = Ops::new(p.n_s)?;
    let id_s = Operator::identity(&[p.n_s])?;
    let id_a = Operator::identity(&[2])?;
    let a = o.a.kron(&id_a);
    let sm = id_s.kron(&o.sigma_minus);

    let coupling = a.mul(&sm.dag())?.add(&a.dag().mul(&sm)?)?.scale_re(p.g);
    let free = match p.frame {
        Frame::Lab => o
            .number
            .scale_re(p.omega_s)
            .kron(&id_a)
            .add(&id_s.kron(&o.half_sigma_z.scale_re(p.omega_a)))?,
        Frame::Interaction => o.number.scale_re(p.omega_s - p.omega_a).kron(&id_a),
    };
    LindbladModel::new(
        free.add(&coupling)?,
        vec![Collapse::new(p.gamma_s2, a), Collapse::new(p.gamma_a, sm)],
    )
}

/// `H' = ω_s a†a ⊗ I + (ω_a/2) I ⊗ σ_z + g(a ⊗ σ₊ + a† ⊗ σ₋)` with signal
/// and atomic decay (in the frame selected by `p.frame`).
pub fn build_discharge_model(p: &DischargeParams) -> Result<LindbladModel> {
    p.validate()?;
    assemble(p)
}

#[derive(Debug, Clone)]
pub struct DischargeResult {
    pub times: Vec<f64>,
    /// `W_s / ω_s`.
    pub kappa_s: Vec<f64>,
    /// `W_a / ω_a`.
    pub kappa_a: Vec<f64>,
    /// First local maximum of `κ_a` as `(time, value)`.
    pub peak_kappa_a: (f64, f64),
    /// No interior maximum was found; `peak_kappa_a` is the global maximum.
    pub peak_is_boundary: bool,
    pub stats: Stats,
}

fn run(
    model: &LindbladModel,
    rho_s_t0: &DensityMatrix,
    n_s: usize,
    t_end: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<DischargeResult> {
    if rho_s_t0.dims() != [n_s] {
        return Err(Error::InvalidArgument(format!(
            "signal state has dims {:?}, discharge truncation is {n_s}",
            rho_s_t0.dims()
        )));
    }
    let o = Ops::new(n_s)?;
    let signal = EnergyBasis::new(&o.number)?;
    let atom = EnergyBasis::new(&o.half_sigma_z)?;
    let rho0 = rho_s_t0.tensor(&fock(2, 1)?);

    let (mut times, mut kappa_s, mut kappa_a) = (Vec::new(), Vec::new(), Vec::new());
    let (_, stats) = evolve_observed(model, &rho0, 0.0, t_end, sample_dt, opts, |t, rho| {
        let rho_s = partial_trace(rho, &[0])?;
        let rho_a = partial_trace(rho, &[1])?;
        times.push(t);
        kappa_s.push(signal.ergotropy(&rho_s)?);
        kappa_a.push(atom.ergotropy(&rho_a)?);
        Ok(())
    })?;
    let first = first_peak_above(&times, &kappa_a, PEAK_FLOOR)?;
    Ok(DischargeResult {
        times,
        kappa_s,
        kappa_a,
        peak_kappa_a: (first.x, first.y),
        peak_is_boundary: first.is_boundary,
        stats,
    })
}

/// Evolves `ρ_s(t0) ⊗ |g⟩⟨g|` and records the normalized ergotropies of
/// both subsystems.
pub fn discharge(
    rho_s_t0: &DensityMatrix,
    p: &DischargeParams,
    t_end: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<DischargeResult> {
    let model = build_discharge_model(p)?;
    run(&model, rho_s_t0, p.n_s, t_end, sample_dt, opts)
}

/// Charges from vacuum until `t0` (in charging units), then hands the
/// reduced signal state to [`discharge`].
pub fn charge_then_discharge(
    cp: &DopoParams,
    t0: f64,
    dp: &DischargeParams,
    t_end: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<DischargeResult> {
    if !(t0 > 0.0) {
        return Err(Error::InvalidArgument(format!("t0 = {t0} must be > 0")));
    }
    if cp.n_s != dp.n_s {
        return Err(Error::InvalidArgument(format!(
            "charging truncation {} differs from discharge truncation {}",
            cp.n_s, dp.n_s
        )));
    }
    let charged = charge(cp, t0, t0, opts)?;
    discharge(&charged.final_signal, dp, t_end, sample_dt, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve;
    use crate::fit::local_maxima;
    use crate::fock::{coherent_with_limit, expectation, vacuum};

    fn small(frame: Frame) -> DischargeParams {
        DischargeParams {
            omega_s: 20.0,
            omega_a: 20.0,
            g: 3.0,
            n_s: 6,
            frame,
            ..DischargeParams::default()
        }
    }

    fn excitation_number(n_s: usize) -> Operator {
        let id_a = Operator::identity(&[2]).unwrap();
        let sp_sm = Operator::sigma_plus().mul(&Operator::sigma_minus()).unwrap();
        Operator::number(n_s)
            .unwrap()
            .kron(&id_a)
            .add(&Operator::identity(&[n_s]).unwrap().kron(&sp_sm))
            .unwrap()
    }

    #[test]
    fn coupling_matrix_element() {
        let p = DischargeParams { n_s: 4, ..DischargeParams::default() };
        let h = build_discharge_model(&p).unwrap().hamiltonian().clone();
        // |0,e⟩ is index 0, |1,g⟩ is index 3.
        assert_eq!(h.get(0, 3), crate::C64::new(p.g, 0.0));
        assert_eq!(h.get(3, 0), crate::C64::new(p.g, 0.0));
        assert_eq!(h.get(0, 0).re, p.omega_a / 2.0);
        assert_eq!(h.get(3, 3).re, p.omega_s - p.omega_a / 2.0);
    }

    #[test]
    fn excitation_number_commutes_with_hamiltonian() {
        for frame in [Frame::Lab, Frame::Interaction] {
            let p = DischargeParams { n_s: 8, frame, ..DischargeParams::default() };
            let h = build_discharge_model(&p).unwrap().hamiltonian().clone();
            let c = excitation_number(8).commutator(&h).unwrap();
            assert!(c.max_abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coupling_decouples() {
        let p = DischargeParams { g: 0.0, n_s: 4, ..DischargeParams::default() };
        assert!(build_discharge_model(&p).is_err());
        let h = assemble(&p).unwrap().hamiltonian().clone();
        assert!(h.matrix().is_diagonal());
    }

    #[test]
    fn validation() {
        assert!(DischargeParams::default().validate().is_ok());
        for bad in [
            DischargeParams { gamma_a: 0.0, ..Default::default() },
            DischargeParams { omega_s: -1.0, ..Default::default() },
            DischargeParams { n_s: 1, ..Default::default() },
        ] {
            assert!(build_discharge_model(&bad).is_err());
        }
    }

    #[test]
    fn lossless_energy_is_conserved() {
        let p = DischargeParams {
            gamma_s2: 0.0,
            gamma_a: 0.0,
            ..small(Frame::Lab)
        };
        let model = assemble(&p).unwrap();
        let rho0 = coherent_with_limit(6, crate::C64::new(0.4, 0.1), 1e-6)
            .unwrap()
            .tensor(&fock(2, 1).unwrap());
        let e0 = expectation(&rho0, model.hamiltonian()).unwrap().re;
        // A pure state under unitary motion has no damping to absorb
        // integration error in its null space, so tighten the tolerance.
        let mut opts = EvolveOptions::default();
        opts.control.rtol = 1e-11;
        let traj = evolve(&model, &rho0, 2.0, 0.1, &opts).unwrap();
        for s in &traj.states {
            let e = expectation(s, model.hamiltonian()).unwrap().re;
            assert!((e - e0).abs() < 1e-8, "{e} vs {e0}");
        }
    }

    #[test]
    fn excitations_never_increase_with_losses() {
        let p = small(Frame::Lab);
        let model = build_discharge_model(&p).unwrap();
        let rho0 = coherent_with_limit(6, crate::C64::new(1.0, 0.0), 1e-2)
            .unwrap()
            .tensor(&fock(2, 1).unwrap());
        let n = excitation_number(6);
        let traj = evolve(&model, &rho0, 2.0, 0.05, &EvolveOptions::default()).unwrap();
        let values: Vec<f64> = traj
            .states
            .iter()
            .map(|s| expectation(s, &n).unwrap().re)
            .collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn vacuum_transfers_nothing() {
        let r = discharge(&vacuum(6).unwrap(), &small(Frame::Lab), 1.0, 0.05, &EvolveOptions::default()).unwrap();
        assert!(r.kappa_a.iter().chain(&r.kappa_s).all(|&k| k.abs() < 1e-12));
    }

    #[test]
    fn frames_agree_on_normalized_ergotropy() {
        let rho_s = coherent_with_limit(6, crate::C64::new(1.0, 0.5), 1e-2).unwrap();
        let opts = EvolveOptions::default();
        let lab = discharge(&rho_s, &small(Frame::Lab), 1.0, 0.02, &opts).unwrap();
        let rot = discharge(&rho_s, &small(Frame::Interaction), 1.0, 0.02, &opts).unwrap();
        for i in 0..lab.times.len() {
            assert!((lab.kappa_a[i] - rot.kappa_a[i]).abs() < 1e-6);
            assert!((lab.kappa_s[i] - rot.kappa_s[i]).abs() < 1e-6);
        }
        assert!(lab.kappa_a.iter().all(|&k| (0.0..=1.0).contains(&k)));
    }

    #[test]
    fn first_peak_dominates() {
        let rho_s = fock(6, 3).unwrap();
        let p = DischargeParams { g: 12.0, ..small(Frame::Interaction) };
        let r = discharge(&rho_s, &p, 2.0, 0.002, &EvolveOptions::default()).unwrap();
        assert!(!r.peak_is_boundary);
        let maxima: Vec<usize> = local_maxima(&r.kappa_a)
            .into_iter()
            .filter(|&i| r.kappa_a[i] > PEAK_FLOOR)
            .collect();
        assert!(maxima.len() > 1);
        assert_eq!(r.times[maxima[0]], r.peak_kappa_a.0);
        assert!(maxima[1..].iter().all(|&i| r.kappa_a[i] < r.peak_kappa_a.1));
    }

    #[test]
    fn undriven_charge_transfers_nothing() {
        let cp = DopoParams { f_p: 0.0, n_s: 6, n_p: 3, ..DopoParams::default() };
        let dp = small(Frame::Interaction);
        let r = charge_then_discharge(&cp, 1.0, &dp, 0.5, 0.05, &EvolveOptions::default()).unwrap();
        assert!(r.kappa_a.iter().all(|&k| k == 0.0));
        let mismatched = DischargeParams { n_s: 8, ..dp };
        assert!(charge_then_discharge(&cp, 1.0, &mismatched, 0.5, 0.05, &EvolveOptions::default()).is_err());
    }
}
