//! Named experiments: configuration, execution, acceptance checks and file
//! output. The command-line front end is a thin layer over [`execute`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dopo::{charge, charge_with_switchoff, DopoParams, ErgotropyTrajectory};
use crate::dynamics::EvolveOptions;
use crate::error::{Error, Result};
use crate::fit::{derivative, linear_fit, log_linear_fit, logistic_fit, peak, steady_value, FitResult};
use crate::load::{discharge, DischargeParams, DischargeResult};
use crate::ode::StepControl;

/// Overrides `output_dir` from the configuration file.
pub const OUTPUT_DIR_ENV: &str = "DOPO_QB_OUTPUT_DIR";

pub const CHARGING_HEADER: &str = "t,W,W_c,W_i,P,n_s,n_p,re_alpha_s,im_alpha_s";
pub const DISCHARGE_HEADER: &str = "t,kappa_s,kappa_a";

/// Truncations at which the steady ergotropy has converged.
pub const CONVERGED_N_S: usize = 32;
pub const CONVERGED_N_P: usize = 9;
/// Largest drive, in units of √γ_s, inside the studied regime.
pub const MAX_DRIVE: f64 = 3.0;

pub const FIG2A_N_S: [usize; 4] = [24, 28, 32, 36];
pub const FIG2B_N_P: [usize; 4] = [3, 5, 7, 9];
pub const FIG3_DRIVES: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
pub const FIG6_DRIVES: [f64; 5] = [2.2, 2.4, 2.6, 2.8, 3.0];
pub const FIG8_COUPLINGS: [f64; 5] = [3.0, 6.5, 10.0, 13.5, 17.0];

/// `2.0, 2.1, …, 3.5`.
pub fn fig7_drives() -> Vec<f64> {
    (20..=35).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Fig2a,
    Fig2b,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Custom,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Fig2a,
        Experiment::Fig2b,
        Experiment::Fig3,
        Experiment::Fig4,
        Experiment::Fig5,
        Experiment::Fig6,
        Experiment::Fig7,
        Experiment::Fig8,
        Experiment::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig2a => "fig2a",
            Experiment::Fig2b => "fig2b",
            Experiment::Fig3 => "fig3",
            Experiment::Fig4 => "fig4",
            Experiment::Fig5 => "fig5",
            Experiment::Fig6 => "fig6",
            Experiment::Fig7 => "fig7",
            Experiment::Fig8 => "fig8",
            Experiment::Custom => "custom",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::Fig2a => "W(t) and steady W for N_s in {24, 28, 32, 36} at N_p = 9",
            Experiment::Fig2b => "W(t) and steady W for N_p in {3, 5, 7, 9} at N_s = 32",
            Experiment::Fig3 => "steady W vs F_p in {1.0 .. 3.0}, fit of ln W_ss",
            Experiment::Fig4 => "coherent and incoherent ergotropy during charging",
            Experiment::Fig5 => "decay after switch-off, log-linear fits of W_c and W_i",
            Experiment::Fig6 => "charging power P(t) for F_p in {2.2 .. 3.0}, fit of ln P_max",
            Experiment::Fig7 => "steady W_c vs F_p in [2.0, 3.5], logistic fit and derivative",
            Experiment::Fig8 => "discharge into a two-level load for g in {3.0 .. 17.0}",
            Experiment::Custom => "single run or F_p sweep with the configured parameters",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Output spacing of charging runs.
    pub sample_dt: f64,
    /// Output spacing of discharge runs.
    pub discharge_dt: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let ctl = StepControl::default();
        Self {
            rtol: ctl.rtol,
            atol: ctl.atol,
            sample_dt: 0.1,
            discharge_dt: 0.001,
        }
    }
}

impl IntegratorConfig {
    pub fn options(&self) -> EvolveOptions {
        EvolveOptions {
            control: StepControl {
                rtol: self.rtol,
                atol: self.atol,
                ..StepControl::default()
            },
            ..EvolveOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Trailing window used for steady values.
    pub steady_window: f64,
    /// Largest relative spread accepted inside that window.
    pub steady_tol: f64,
    /// Time window of the post-switch-off log-linear fits.
    pub decay_window: [f64; 2],
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steady_window: 10.0,
            steady_tol: 0.02,
            decay_window: [41.0, 45.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Charging horizon (units 1/γ_s).
    pub t_charge: f64,
    /// Switch-off time of the decay experiment.
    pub t_off: f64,
    /// End of the decay experiment.
    pub t_decay_end: f64,
    /// Charging time before the discharge starts.
    pub t0: f64,
    /// Discharge horizon (units 1/γ_s').
    pub t_discharge: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_charge: 40.0,
            t_off: 40.0,
            t_decay_end: 50.0,
            t0: 10.0,
            t_discharge: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CustomConfig {
    /// Drives to sweep; empty runs once at `dopo.f_p`.
    pub f_p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub dopo: DopoParams,
    pub discharge: DischargeParams,
    pub integrator: IntegratorConfig,
    pub fit: FitConfig,
    pub schedule: ScheduleConfig,
    pub custom: CustomConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            output_dir: PathBuf::from("out"),
            threads: 1,
            dopo: DopoParams::default(),
            discharge: DischargeParams::default(),
            integrator: IntegratorConfig::default(),
            fit: FitConfig::default(),
            schedule: ScheduleConfig::default(),
            custom: CustomConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// Structural checks; physics lints live in [`lint`].
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.dopo.validate().map_err(cfg)?;
        self.discharge.validate().map_err(cfg)?;
        if self.threads == 0 {
            return Err(Error::Config("threads must be ≥ 1".into()));
        }
        let i = &self.integrator;
        for (name, v) in [
            ("integrator.rtol", i.rtol),
            ("integrator.atol", i.atol),
            ("integrator.sample_dt", i.sample_dt),
            ("integrator.discharge_dt", i.discharge_dt),
            ("fit.steady_window", self.fit.steady_window),
            ("fit.steady_tol", self.fit.steady_tol),
            ("schedule.t_charge", self.schedule.t_charge),
            ("schedule.t_off", self.schedule.t_off),
            ("schedule.t0", self.schedule.t0),
            ("schedule.t_discharge", self.schedule.t_discharge),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be > 0")));
            }
        }
        let [w0, w1] = self.fit.decay_window;
        let s = &self.schedule;
        if !(s.t_off < w0 && w0 < w1 && w1 <= s.t_decay_end) {
            return Err(Error::Config(format!(
                "decay window [{w0}, {w1}] must lie in (t_off = {}, t_decay_end = {}]",
                s.t_off, s.t_decay_end
            )));
        }
        if self.custom.f_p.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(Error::Config("custom.f_p entries must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Physics diagnostics for a structurally valid configuration.
pub fn lint(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    let drives = std::iter::once(cfg.dopo.f_p).chain(cfg.custom.f_p.iter().copied());
    for f in drives {
        let x = f / cfg.dopo.gamma_s.sqrt();
        if x > MAX_DRIVE + 1e-12 {
            out.push(format!(
                "F_p/√γ_s = {x} is above {MAX_DRIVE}, outside the studied drive regime"
            ));
        }
    }
    if cfg.dopo.n_s < CONVERGED_N_S || cfg.dopo.n_p < CONVERGED_N_P {
        out.push(format!(
            "truncation N_s = {}, N_p = {} is below the converged N_s = {CONVERGED_N_S}, N_p = {CONVERGED_N_P}",
            cfg.dopo.n_s, cfg.dopo.n_p
        ));
    }
    if cfg.discharge.n_s < CONVERGED_N_S {
        out.push(format!(
            "discharge truncation N_s = {} is below the converged N_s = {CONVERGED_N_S}",
            cfg.discharge.n_s
        ));
    }
    out
}

/// Process exit status for an error: 1 configuration, 2 integration,
/// 3 fit.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Integration { .. }
        | Error::Instability { .. }
        | Error::Truncation { .. }
        | Error::InvalidState(_) => 2,
        Error::FitFailure { .. } | Error::NotConverged { .. } => 3,
        _ => 1,
    }
}

/// Shares identical charging runs between experiments.
#[derive(Default)]
pub struct RunCache {
    runs: Mutex<HashMap<String, Arc<ErgotropyTrajectory>>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or<F>(&self, key: String, make: F) -> Result<Arc<ErgotropyTrajectory>>
    where
        F: FnOnce() -> Result<ErgotropyTrajectory>,
    {
        if let Some(hit) = self.runs.lock().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let run = Arc::new(make()?);
        self.runs.lock().unwrap().insert(key, Arc::clone(&run));
        Ok(run)
    }

    pub fn charge(
        &self,
        p: &DopoParams,
        t_end: f64,
        sample_dt: f64,
        opts: &EvolveOptions,
    ) -> Result<Arc<ErgotropyTrajectory>> {
        let key = format!("charge|{p:?}|{t_end:?}|{sample_dt:?}|{opts:?}");
        self.get_or(key, || charge(p, t_end, sample_dt, opts))
    }

    pub fn switchoff(
        &self,
        p: &DopoParams,
        t_off: f64,
        t_end: f64,
        sample_dt: f64,
        opts: &EvolveOptions,
    ) -> Result<Arc<ErgotropyTrajectory>> {
        let key = format!("switchoff|{p:?}|{t_off:?}|{t_end:?}|{sample_dt:?}|{opts:?}");
        self.get_or(key, || charge_with_switchoff(p, t_off, t_end, sample_dt, opts))
    }
}

/// Runs `f` over `items` on the configured worker count, keeping order.
fn par_map<T, U, F>(threads: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

fn steady(cfg: &ExperimentConfig, t: &[f64], y: &[f64]) -> Result<f64> {
    steady_value(t, y, cfg.fit.steady_window, cfg.fit.steady_tol)
}

/// Trailing-window mean of a series and whether it passed the steady test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyPoint {
    pub value: f64,
    pub converged: bool,
}

/// Like [`steady`] but keeps the trailing mean of a series that has not
/// settled, so a sweep can still be tabulated and judged.
fn steady_point(cfg: &ExperimentConfig, t: &[f64], y: &[f64]) -> Result<SteadyPoint> {
    match steady(cfg, t, y) {
        Ok(value) => Ok(SteadyPoint { value, converged: true }),
        Err(Error::NotConverged { .. }) => {
            let value = steady_value(t, y, cfg.fit.steady_window, f64::INFINITY)?;
            Ok(SteadyPoint { value, converged: false })
        }
        Err(e) => Err(e),
    }
}

fn steady_points(cfg: &ExperimentConfig, runs: &[Arc<ErgotropyTrajectory>], pick: fn(&ErgotropyTrajectory) -> &[f64]) -> Result<Vec<SteadyPoint>> {
    runs.iter().map(|r| steady_point(cfg, &r.times, pick(r))).collect()
}

fn values(points: &[SteadyPoint]) -> Vec<f64> {
    points.iter().map(|p| p.value).collect()
}

fn all_converged(points: &[SteadyPoint]) -> bool {
    points.iter().all(|p| p.converged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Signal,
    Pump,
}

#[derive(Debug, Clone)]
pub struct TruncationSweep {
    pub axis: Truncation,
    pub levels: Vec<usize>,
    pub w_ss: Vec<SteadyPoint>,
    pub runs: Vec<Arc<ErgotropyTrajectory>>,
}

pub fn truncation_sweep(cfg: &ExperimentConfig, cache: &RunCache, axis: Truncation) -> Result<TruncationSweep> {
    let levels: Vec<usize> = match axis {
        Truncation::Signal => FIG2A_N_S.to_vec(),
        Truncation::Pump => FIG2B_N_P.to_vec(),
    };
    let opts = cfg.integrator.options();
    let runs = par_map(cfg.threads, &levels, |&n| {
        let p = match axis {
            Truncation::Signal => DopoParams { n_s: n, ..cfg.dopo },
            Truncation::Pump => DopoParams { n_p: n, ..cfg.dopo },
        };
        cache.charge(&p, cfg.schedule.t_charge, cfg.integrator.sample_dt, &opts)
    })?;
    let w_ss = steady_points(cfg, &runs, |r| &r.w)?;
    Ok(TruncationSweep { axis, levels, w_ss, runs })
}

/// Steady values of one charging run per drive.
#[derive(Debug, Clone)]
pub struct DriveSweep {
    pub f_p: Vec<f64>,
    pub runs: Vec<Arc<ErgotropyTrajectory>>,
}

pub fn drive_sweep(cfg: &ExperimentConfig, cache: &RunCache, drives: &[f64]) -> Result<DriveSweep> {
    let opts = cfg.integrator.options();
    let runs = par_map(cfg.threads, drives, |&f| {
        cache.charge(&cfg.dopo.with_drive(f), cfg.schedule.t_charge, cfg.integrator.sample_dt, &opts)
    })?;
    Ok(DriveSweep { f_p: drives.to_vec(), runs })
}

/// Drive in units of √γ_s.
fn scaled(cfg: &ExperimentConfig, f: f64) -> f64 {
    f / cfg.dopo.gamma_s.sqrt()
}

#[derive(Debug, Clone)]
pub struct SteadyLaw {
    pub sweep: DriveSweep,
    pub w_ss: Vec<SteadyPoint>,
    /// `ln W_ss` against `F_p/√γ_s`.
    pub fit: FitResult,
}

pub fn steady_law(cfg: &ExperimentConfig, cache: &RunCache) -> Result<SteadyLaw> {
    let sweep = drive_sweep(cfg, cache, &FIG3_DRIVES)?;
    let w_ss = steady_points(cfg, &sweep.runs, |r| &r.w)?;
    let x: Vec<f64> = sweep.f_p.iter().map(|&f| scaled(cfg, f)).collect();
    let fit = log_linear_fit(&x, &values(&w_ss))?;
    Ok(SteadyLaw { sweep, w_ss, fit })
}

pub fn components(cfg: &ExperimentConfig, cache: &RunCache) -> Result<Arc<ErgotropyTrajectory>> {
    cache.charge(&cfg.dopo, cfg.schedule.t_charge, cfg.integrator.sample_dt, &cfg.integrator.options())
}

#[derive(Debug, Clone)]
pub struct DecayFits {
    pub run: Arc<ErgotropyTrajectory>,
    pub coherent: FitResult,
    pub incoherent: FitResult,
    /// `|slope_i / slope_c|`.
    pub ratio: f64,
}

pub fn decay(cfg: &ExperimentConfig, cache: &RunCache) -> Result<DecayFits> {
    let s = &cfg.schedule;
    let run = cache.switchoff(&cfg.dopo, s.t_off, s.t_decay_end, cfg.integrator.sample_dt, &cfg.integrator.options())?;
    let [w0, w1] = cfg.fit.decay_window;
    let pick = |y: &[f64]| -> (Vec<f64>, Vec<f64>) {
        run.times
            .iter()
            .zip(y)
            .filter(|(&t, _)| t >= w0 - 1e-9 && t <= w1 + 1e-9)
            .map(|(&t, &v)| (t, v))
            .unzip()
    };
    let (tc, wc) = pick(&run.w_c);
    let (ti, wi) = pick(&run.w_i);
    let coherent = log_linear_fit(&tc, &wc)?;
    let incoherent = log_linear_fit(&ti, &wi)?;
    let ratio = (incoherent.slope() / coherent.slope()).abs();
    Ok(DecayFits { run, coherent, incoherent, ratio })
}

#[derive(Debug, Clone)]
pub struct PowerLaw {
    pub sweep: DriveSweep,
    pub p_max: Vec<f64>,
    pub t_max: Vec<f64>,
    /// `ln P_max` against `F_p/√γ_s`.
    pub fit: FitResult,
}

pub fn power_law(cfg: &ExperimentConfig, cache: &RunCache) -> Result<PowerLaw> {
    let sweep = drive_sweep(cfg, cache, &FIG6_DRIVES)?;
    let mut p_max = Vec::new();
    let mut t_max = Vec::new();
    for r in &sweep.runs {
        let pk = peak(&r.times, &r.power)?;
        p_max.push(pk.y);
        t_max.push(pk.x);
    }
    let x: Vec<f64> = sweep.f_p.iter().map(|&f| scaled(cfg, f)).collect();
    let fit = log_linear_fit(&x, &p_max)?;
    Ok(PowerLaw { sweep, p_max, t_max, fit })
}

#[derive(Debug, Clone)]
pub struct Saturation {
    pub sweep: DriveSweep,
    pub w_ss: Vec<SteadyPoint>,
    pub w_c_ss: Vec<SteadyPoint>,
    pub w_i_ss: Vec<SteadyPoint>,
    /// `dW_c^ss / d(F_p/√γ_s)`.
    pub slope: Vec<f64>,
    /// Drive at which `slope` is largest.
    pub slope_peak: f64,
    pub fit: FitResult,
}

pub fn saturation(cfg: &ExperimentConfig, cache: &RunCache) -> Result<Saturation> {
    let sweep = drive_sweep(cfg, cache, &fig7_drives())?;
    let w_ss = steady_points(cfg, &sweep.runs, |r| &r.w)?;
    let w_c_ss = steady_points(cfg, &sweep.runs, |r| &r.w_c)?;
    let w_i_ss = steady_points(cfg, &sweep.runs, |r| &r.w_i)?;
    let x: Vec<f64> = sweep.f_p.iter().map(|&f| scaled(cfg, f)).collect();
    let fit = logistic_fit(&x, &values(&w_c_ss))?;
    let slope = derivative(&x, &values(&w_c_ss))?;
    let i_max = (0..slope.len()).fold(0, |b, i| if slope[i] > slope[b] { i } else { b });
    Ok(Saturation {
        slope_peak: x[i_max],
        sweep,
        w_ss,
        w_c_ss,
        w_i_ss,
        slope,
        fit,
    })
}

#[derive(Debug, Clone)]
pub struct DischargeSweep {
    pub charged: Arc<ErgotropyTrajectory>,
    pub g: Vec<f64>,
    pub results: Vec<DischargeResult>,
}

pub fn discharge_sweep(cfg: &ExperimentConfig, cache: &RunCache) -> Result<DischargeSweep> {
    if cfg.dopo.n_s != cfg.discharge.n_s {
        return Err(Error::Config(format!(
            "dopo.n_s = {} and discharge.n_s = {} must agree",
            cfg.dopo.n_s, cfg.discharge.n_s
        )));
    }
    let opts = cfg.integrator.options();
    let t0 = cfg.schedule.t0;
    let charged = cache.charge(&cfg.dopo, t0, t0, &opts)?;
    let results = par_map(cfg.threads, &FIG8_COUPLINGS, |&g| {
        discharge(
            &charged.final_signal,
            &cfg.discharge.with_coupling(g),
            cfg.schedule.t_discharge,
            cfg.integrator.discharge_dt,
            &opts,
        )
    })?;
    Ok(DischargeSweep { charged, g: FIG8_COUPLINGS.to_vec(), results })
}

/// One pass/fail verdict against an acceptance target.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

impl Check {
    fn within(name: &str, value: f64, center: f64, rel: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: format!("{center} ± {}%", rel * 100.0),
            pass: (value - center).abs() <= rel * center.abs(),
        }
    }

    fn near(name: &str, value: f64, center: f64, abs: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: format!("{center} ± {abs}"),
            pass: (value - center).abs() <= abs,
        }
    }

    fn range(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: format!("[{lo}, {hi}]"),
            pass: value >= lo && value <= hi,
        }
    }

    fn at_least(name: &str, value: f64, lo: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: format!("≥ {lo}"),
            pass: value >= lo,
        }
    }

    fn flag(name: &str, pass: bool, target: &str) -> Self {
        Self {
            name: name.into(),
            value: if pass { 1.0 } else { 0.0 },
            target: target.into(),
            pass,
        }
    }
}

pub fn truncation_checks(s: &TruncationSweep) -> Vec<Check> {
    let w = values(&s.w_ss);
    let increasing = w.windows(2).all(|w| w[1] > w[0]);
    let last = *w.last().unwrap();
    let (lo, hi) = match s.axis {
        Truncation::Signal => (13.5, 15.5),
        Truncation::Pump => (13.0, 15.0),
    };
    vec![
        Check::flag("steady_converged", all_converged(&s.w_ss), "every steady W settled"),
        Check::flag("monotone", increasing, "steady W strictly increasing"),
        Check::range("w_ss_largest", last, lo, hi),
    ]
}

pub fn steady_law_checks(s: &SteadyLaw) -> Vec<Check> {
    vec![
        Check::flag("steady_converged", all_converged(&s.w_ss), "every steady W settled"),
        Check::within("slope", s.fit.slope(), 2.742, 0.10),
        Check::at_least("r", s.fit.r, 0.99),
    ]
}

pub fn component_checks(run: &ErgotropyTrajectory) -> Result<Vec<Check>> {
    let max_wc = run.w_c.iter().cloned().fold(0.0, f64::max);
    let early_wi = run
        .times
        .iter()
        .zip(&run.w_i)
        .filter(|(&t, _)| t < 8.0)
        .map(|(_, &w)| w)
        .fold(0.0, f64::max);
    let first = peak(&run.times, &run.w_c)?;
    Ok(vec![
        Check {
            name: "early_incoherent_fraction".into(),
            value: early_wi / max_wc,
            target: "< 0.05".into(),
            pass: early_wi < 0.05 * max_wc,
        },
        Check::range("coherent_peak_time", first.x, 8.0, 12.0),
    ])
}

pub fn decay_checks(d: &DecayFits) -> Vec<Check> {
    vec![
        Check::within("coherent_slope", d.coherent.slope(), -1.127, 0.15),
        Check::within("incoherent_slope", d.incoherent.slope(), -2.082, 0.15),
        Check::range("slope_ratio", d.ratio, 1.6, 2.1),
    ]
}

pub fn power_law_checks(p: &PowerLaw) -> Vec<Check> {
    vec![
        Check::within("slope", p.fit.slope(), 2.049, 0.10),
        Check::at_least("r", p.fit.r, 0.99),
    ]
}

pub fn saturation_checks(s: &Saturation) -> Vec<Check> {
    vec![
        Check::flag("steady_converged", all_converged(&s.w_c_ss), "every steady W_c settled"),
        Check::within("A", s.fit.params[0], 8.2016, 0.10),
        Check::within("k", s.fit.params[1], 5.4097, 0.15),
        Check::within("x0", s.fit.params[2], 2.3605, 0.05),
        Check::range("derivative_peak", s.slope_peak, 2.3, 2.5),
    ]
}

pub fn discharge_checks(d: &DischargeSweep) -> Vec<Check> {
    let peaks: Vec<f64> = d.results.iter().map(|r| r.peak_kappa_a.1).collect();
    let mut checks = vec![Check::flag(
        "monotone",
        peaks.windows(2).all(|w| w[1] >= w[0]),
        "first-peak kappa_a non-decreasing in g",
    )];
    for (g, k) in d.g.iter().zip(&peaks).filter(|(&g, _)| g >= 10.0) {
        checks.push(Check::near(&format!("peak_kappa_a_g{g:?}"), *k, 0.43, 0.05));
    }
    checks
}

/// Everything [`execute`] produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: Experiment,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Fixed 17-significant-digit rendering used in every output file.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn file(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    fn table(&mut self, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<()> {
        let mut body = String::from(header);
        body.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
            body.push_str(&cells.join(","));
            body.push('\n');
        }
        self.file(name, &body)
    }

    fn charging(&mut self, name: &str, r: &ErgotropyTrajectory) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..r.times.len())
            .map(|i| {
                vec![
                    r.times[i],
                    r.w[i],
                    r.w_c[i],
                    r.w_i[i],
                    r.power[i],
                    r.n_s[i],
                    r.n_p[i],
                    r.alpha_s[i].re,
                    r.alpha_s[i].im,
                ]
            })
            .collect();
        self.table(name, CHARGING_HEADER, &rows)
    }

    fn discharge(&mut self, name: &str, r: &DischargeResult) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..r.times.len())
            .map(|i| vec![r.times[i], r.kappa_s[i], r.kappa_a[i]])
            .collect();
        self.table(name, DISCHARGE_HEADER, &rows)
    }

    fn fit(&mut self, name: &str, fits: &[(&str, &FitResult)]) -> Result<()> {
        let mut body = String::from("fit,kind,p0,p1,p2,r,residual_rms,degenerate,dropped\n");
        for (label, f) in fits {
            let p = |i: usize| f.params.get(i).map(|&v| fmt_num(v)).unwrap_or_default();
            let kind = match f.kind {
                crate::fit::FitKind::Linear => "linear",
                crate::fit::FitKind::Logistic => "logistic",
            };
            writeln!(
                body,
                "{label},{kind},{},{},{},{},{},{},{}",
                p(0),
                p(1),
                p(2),
                fmt_num(f.r),
                fmt_num(f.residual_rms),
                f.degenerate,
                f.dropped
            )
            .unwrap();
        }
        self.file(name, &body)
    }
}

fn label(v: f64) -> String {
    format!("{v:?}")
}

fn flag(p: &SteadyPoint) -> f64 {
    if p.converged {
        1.0
    } else {
        0.0
    }
}

fn unsettled_warnings(what: &str, points: &[SteadyPoint], labels: &[String]) -> Vec<String> {
    points
        .iter()
        .zip(labels)
        .filter(|(p, _)| !p.converged)
        .map(|(_, l)| format!("{l}: {what} has not settled within the steady window; trailing mean reported"))
        .collect()
}

fn truncation_warnings(runs: &[Arc<ErgotropyTrajectory>], labels: &[String]) -> Vec<String> {
    runs.iter()
        .zip(labels)
        .filter_map(|(r, l)| r.truncation_warning().map(|w| format!("{l}: {w}")))
        .collect()
}

/// Runs `experiment` and writes its files to `<cfg.output_dir>/<name>/`.
pub fn execute(cfg: &ExperimentConfig, experiment: Experiment, cache: &RunCache) -> Result<Outcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.join(experiment.name());
    fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut w = Writer { dir: dir.clone(), files: Vec::new() };
    let name = experiment.name();
    let mut summary: Vec<(String, String)> = Vec::new();
    let mut warnings = lint(cfg);

    let checks = match experiment {
        Experiment::Fig2a | Experiment::Fig2b => {
            let (axis, key) = if experiment == Experiment::Fig2a {
                (Truncation::Signal, "n_s")
            } else {
                (Truncation::Pump, "n_p")
            };
            let s = truncation_sweep(cfg, cache, axis)?;
            let labels: Vec<String> = s.levels.iter().map(|n| format!("{key}{n}")).collect();
            for (l, r) in labels.iter().zip(&s.runs) {
                w.charging(&format!("{name}_{l}.csv"), r)?;
            }
            let rows: Vec<Vec<f64>> = s
                .levels
                .iter()
                .zip(&s.w_ss)
                .map(|(&n, v)| vec![n as f64, v.value, flag(v)])
                .collect();
            w.table(&format!("{name}.csv"), &format!("{key},W_ss,converged"), &rows)?;
            for (n, v) in s.levels.iter().zip(&s.w_ss) {
                summary.push((format!("w_ss.{key}{n}"), fmt_num(v.value)));
            }
            warnings.extend(unsettled_warnings("W", &s.w_ss, &labels));
            warnings.extend(truncation_warnings(&s.runs, &labels));
            truncation_checks(&s)
        }
        Experiment::Fig3 => {
            let s = steady_law(cfg, cache)?;
            let labels: Vec<String> = s.sweep.f_p.iter().map(|&f| format!("fp{}", label(f))).collect();
            for (l, r) in labels.iter().zip(&s.sweep.runs) {
                w.charging(&format!("{name}_{l}.csv"), r)?;
            }
            let rows: Vec<Vec<f64>> = s
                .sweep
                .f_p
                .iter()
                .zip(&s.w_ss)
                .map(|(&f, v)| vec![scaled(cfg, f), v.value, flag(v)])
                .collect();
            w.table(&format!("{name}.csv"), "F_p,W_ss,converged", &rows)?;
            warnings.extend(unsettled_warnings("W", &s.w_ss, &labels));
            w.fit(&format!("{name}_fit.csv"), &[("ln_W_ss", &s.fit)])?;
            summary.push(("slope".into(), fmt_num(s.fit.slope())));
            summary.push(("intercept".into(), fmt_num(s.fit.intercept())));
            summary.push(("r".into(), fmt_num(s.fit.r)));
            warnings.extend(truncation_warnings(&s.sweep.runs, &labels));
            steady_law_checks(&s)
        }
        Experiment::Fig4 => {
            let run = components(cfg, cache)?;
            w.charging(&format!("{name}.csv"), &run)?;
            let first = peak(&run.times, &run.w_c)?;
            summary.push(("coherent_peak_time".into(), fmt_num(first.x)));
            summary.push(("coherent_peak".into(), fmt_num(first.y)));
            warnings.extend(truncation_warnings(&[Arc::clone(&run)], &["run".into()]));
            component_checks(&run)?
        }
        Experiment::Fig5 => {
            let d = decay(cfg, cache)?;
            w.charging(&format!("{name}.csv"), &d.run)?;
            w.fit(&format!("{name}_fit.csv"), &[("ln_W_c", &d.coherent), ("ln_W_i", &d.incoherent)])?;
            summary.push(("coherent_slope".into(), fmt_num(d.coherent.slope())));
            summary.push(("coherent_intercept".into(), fmt_num(d.coherent.intercept())));
            summary.push(("incoherent_slope".into(), fmt_num(d.incoherent.slope())));
            summary.push(("incoherent_intercept".into(), fmt_num(d.incoherent.intercept())));
            summary.push(("slope_ratio".into(), fmt_num(d.ratio)));
            warnings.extend(truncation_warnings(&[Arc::clone(&d.run)], &["run".into()]));
            decay_checks(&d)
        }
        Experiment::Fig6 => {
            let p = power_law(cfg, cache)?;
            let labels: Vec<String> = p.sweep.f_p.iter().map(|&f| format!("fp{}", label(f))).collect();
            for (l, r) in labels.iter().zip(&p.sweep.runs) {
                w.charging(&format!("{name}_{l}.csv"), r)?;
            }
            let rows: Vec<Vec<f64>> = (0..p.p_max.len())
                .map(|i| vec![scaled(cfg, p.sweep.f_p[i]), p.p_max[i], p.t_max[i]])
                .collect();
            w.table(&format!("{name}.csv"), "F_p,P_max,t_max", &rows)?;
            w.fit(&format!("{name}_fit.csv"), &[("ln_P_max", &p.fit)])?;
            summary.push(("slope".into(), fmt_num(p.fit.slope())));
            summary.push(("intercept".into(), fmt_num(p.fit.intercept())));
            summary.push(("r".into(), fmt_num(p.fit.r)));
            warnings.extend(truncation_warnings(&p.sweep.runs, &labels));
            power_law_checks(&p)
        }
        Experiment::Fig7 => {
            let s = saturation(cfg, cache)?;
            let rows: Vec<Vec<f64>> = (0..s.w_ss.len())
                .map(|i| {
                    vec![
                        scaled(cfg, s.sweep.f_p[i]),
                        s.w_ss[i].value,
                        s.w_c_ss[i].value,
                        s.w_i_ss[i].value,
                        s.slope[i],
                        flag(&s.w_c_ss[i]),
                    ]
                })
                .collect();
            w.table(&format!("{name}.csv"), "F_p,W_ss,W_c_ss,W_i_ss,dW_c_dF,converged", &rows)?;
            w.fit(&format!("{name}_fit.csv"), &[("W_c_ss", &s.fit)])?;
            summary.push(("A".into(), fmt_num(s.fit.params[0])));
            summary.push(("k".into(), fmt_num(s.fit.params[1])));
            summary.push(("x0".into(), fmt_num(s.fit.params[2])));
            summary.push(("derivative_peak".into(), fmt_num(s.slope_peak)));
            let labels: Vec<String> = s.sweep.f_p.iter().map(|&f| format!("fp{}", label(f))).collect();
            warnings.extend(unsettled_warnings("W_c", &s.w_c_ss, &labels));
            warnings.extend(truncation_warnings(&s.sweep.runs, &labels));
            saturation_checks(&s)
        }
        Experiment::Fig8 => {
            let d = discharge_sweep(cfg, cache)?;
            for (g, r) in d.g.iter().zip(&d.results) {
                w.discharge(&format!("{name}_g{}.csv", label(*g)), r)?;
            }
            let rows: Vec<Vec<f64>> = d
                .g
                .iter()
                .zip(&d.results)
                .map(|(&g, r)| vec![g, r.peak_kappa_a.0, r.peak_kappa_a.1])
                .collect();
            w.table(&format!("{name}.csv"), "g,t_peak,kappa_a_peak", &rows)?;
            for (g, r) in d.g.iter().zip(&d.results) {
                summary.push((format!("peak_kappa_a.g{}", label(*g)), fmt_num(r.peak_kappa_a.1)));
                if r.peak_is_boundary {
                    warnings.push(format!("g = {g}: no interior kappa_a maximum within the horizon"));
                }
            }
            discharge_checks(&d)
        }
        Experiment::Custom => {
            run_custom(cfg, cache, &mut w, &mut summary, &mut warnings)?;
            Vec::new()
        }
    };

    let mut text = String::new();
    writeln!(text, "experiment={name}").unwrap();
    writeln!(text, "version={}", env!("CARGO_PKG_VERSION")).unwrap();
    for (k, v) in &summary {
        writeln!(text, "{k}={v}").unwrap();
    }
    for c in &checks {
        writeln!(text, "check.{}={}", c.name, if c.pass { "pass" } else { "fail" }).unwrap();
        writeln!(text, "check.{}.value={}", c.name, fmt_num(c.value)).unwrap();
        writeln!(text, "check.{}.target={}", c.name, c.target).unwrap();
    }
    let verdict = if checks.is_empty() {
        "none"
    } else if checks.iter().all(|c| c.pass) {
        "pass"
    } else {
        "fail"
    };
    writeln!(text, "verdict={verdict}").unwrap();
    writeln!(text, "warnings={}", warnings.len()).unwrap();
    for (i, msg) in warnings.iter().enumerate() {
        writeln!(text, "warning.{i}={msg}").unwrap();
    }
    w.file("summary.txt", &text)?;

    let resolved = ExperimentConfig {
        experiment: Some(experiment),
        ..cfg.clone()
    };
    let manifest = format!(
        "# dopo-qb {}\n{}",
        env!("CARGO_PKG_VERSION"),
        resolved.to_toml()
    );
    w.file("manifest.toml", &manifest)?;

    Ok(Outcome {
        experiment,
        dir,
        files: w.files,
        checks,
        warnings,
    })
}

fn run_custom(
    cfg: &ExperimentConfig,
    cache: &RunCache,
    w: &mut Writer,
    summary: &mut Vec<(String, String)>,
    warnings: &mut Vec<String>,
) -> Result<()> {
    if cfg.custom.f_p.is_empty() {
        let run = components(cfg, cache)?;
        w.charging("custom.csv", &run)?;
        summary.push(("w_final".into(), fmt_num(*run.w.last().unwrap())));
        warnings.extend(truncation_warnings(&[run], &["run".into()]));
        return Ok(());
    }
    let sweep = drive_sweep(cfg, cache, &cfg.custom.f_p)?;
    let labels: Vec<String> = sweep.f_p.iter().map(|&f| format!("fp{}", label(f))).collect();
    let w_ss = steady_points(cfg, &sweep.runs, |r| &r.w)?;
    let w_c_ss = steady_points(cfg, &sweep.runs, |r| &r.w_c)?;
    let w_i_ss = steady_points(cfg, &sweep.runs, |r| &r.w_i)?;
    let mut rows = Vec::new();
    for (i, (l, r)) in labels.iter().zip(&sweep.runs).enumerate() {
        w.charging(&format!("custom_{l}.csv"), r)?;
        rows.push(vec![
            scaled(cfg, sweep.f_p[i]),
            w_ss[i].value,
            w_c_ss[i].value,
            w_i_ss[i].value,
            peak(&r.times, &r.power)?.y,
            flag(&w_ss[i]),
        ]);
    }
    w.table("custom.csv", "F_p,W_ss,W_c_ss,W_i_ss,P_max,converged", &rows)?;
    warnings.extend(unsettled_warnings("W", &w_ss, &labels));
    let x: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let usable = rows.iter().filter(|r| r[1] > crate::fit::LOG_FLOOR).count();
    if usable >= 3 {
        let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let fit = log_linear_fit(&x, &y)?;
        w.fit("custom_fit.csv", &[("ln_W_ss", &fit)])?;
        summary.push(("slope".into(), fmt_num(fit.slope())));
        summary.push(("r".into(), fmt_num(fit.r)));
    } else if x.len() >= 3 {
        let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let fit = linear_fit(&x, &y)?;
        w.fit("custom_fit.csv", &[("W_ss", &fit)])?;
    }
    warnings.extend(truncation_warnings(&sweep.runs, &labels));
    Ok(())
}
