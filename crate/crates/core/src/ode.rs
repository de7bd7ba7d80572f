//! Dormand–Prince 5(4) integrator for autonomous complex ODE systems.
//!
//! Error control is per entry: a step is accepted when
//! `max_i |err_i| / (atol + rtol·max(|y_i|, |y_new_i|)) ≤ 1`.
//! Steps are shortened so that every requested output time is hit exactly.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const TABLEAU: [&[f64]; 6] = [
    &[A21],
    &[A31, A32],
    &[A41, A42, A43],
    &[A51, A52, A53, A54],
    &[A61, A62, A63, A64, A65],
    &[A71, 0.0, A73, A74, A75, A76],
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
            h_init: None,
            h_min: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Stateful stepper; keeps the step-size proposal across calls to
/// [`Dopri5::advance`] so that output sampling does not reset the controller.
pub struct Dopri5<F> {
    rhs: F,
    ctl: StepControl,
    k: [Vec<C64>; 7],
    stage: Vec<C64>,
    y_new: Vec<C64>,
    h: Option<f64>,
    fsal_valid: bool,
    stats: Stats,
}

impl<F> Dopri5<F>
where
    F: FnMut(&[C64], &mut [C64]),
{
    pub fn new(rhs: F, len: usize, ctl: StepControl) -> Self {
        let z = || vec![C64::new(0.0, 0.0); len];
        Self {
            rhs,
            ctl,
            k: [z(), z(), z(), z(), z(), z(), z()],
            stage: z(),
            y_new: z(),
            h: ctl.h_init,
            fsal_valid: false,
            stats: Stats::default(),
        }
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    /// Forget the cached derivative at the current state, e.g. after the
    /// caller modified `y` outside of [`Dopri5::advance`].
    pub fn invalidate(&mut self) {
        self.fsal_valid = false;
    }

    /// Integrates `y` from `*t` to `t_target`. `post_step` runs on every
    /// accepted state and may project it (its change must stay at roundoff
    /// level, since the stored derivative is reused).
    pub fn advance<P>(&mut self, t: &mut f64, y: &mut [C64], t_target: f64, post_step: &mut P) -> Result<()>
    where
        P: FnMut(&mut [C64]),
    {
        let n = y.len();
        assert_eq!(n, self.stage.len(), "state length changed");
        if !(t_target > *t) {
            return Ok(());
        }
        if !self.fsal_valid {
            (self.rhs)(y, &mut self.k[0]);
            self.stats.rhs_evals += 1;
            self.fsal_valid = true;
        }
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(y),
        };

        let span = t_target - *t;
        let mut steps = 0usize;
        loop {
            let remaining = t_target - *t;
            if remaining <= span * 1e-14 {
                *t = t_target;
                return Ok(());
            }
            let clamped = h >= remaining;
            let h_try = if clamped { remaining } else { h.min(self.ctl.h_max) };
            if !clamped && h_try < self.ctl.h_min {
                return Err(Error::Integration {
                    time: *t,
                    reason: format!("step size {h_try:.3e} fell below {:.1e}", self.ctl.h_min),
                });
            }

            let err = self.try_step(y, h_try);
            steps += 1;
            if steps > self.ctl.max_steps {
                return Err(Error::Integration {
                    time: *t,
                    reason: format!("exceeded {} steps", self.ctl.max_steps),
                });
            }

            if err <= 1.0 {
                *t = if clamped { t_target } else { *t + h_try };
                y.copy_from_slice(&self.y_new);
                post_step(y);
                self.k.swap(0, 6);
                self.stats.accepted += 1;
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                let h_next = (h_try * factor).min(self.ctl.h_max);
                // A clamped step says nothing about the natural step size.
                h = if clamped { h.max(h_next) } else { h_next };
                self.h = Some(h);
                if *t >= t_target {
                    return Ok(());
                }
            } else {
                self.stats.rejected += 1;
                let factor = if err.is_finite() {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
                } else {
                    MIN_FACTOR
                };
                h = h_try * factor;
                self.h = Some(h);
                if h < self.ctl.h_min {
                    return Err(Error::Integration {
                        time: *t,
                        reason: format!("step size {h:.3e} fell below {:.1e}", self.ctl.h_min),
                    });
                }
            }
        }
    }

    /// One trial step of size `h`; fills `y_new` and `k[6]` and returns the
    /// scaled error norm.
    fn try_step(&mut self, y: &[C64], h: f64) -> f64 {
        for (s, coeffs) in TABLEAU.iter().enumerate() {
            let target = if s == 5 { &mut self.y_new } else { &mut self.stage };
            for (i, out) in target.iter_mut().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (j, &a) in coeffs.iter().enumerate() {
                    if a != 0.0 {
                        acc += self.k[j][i] * a;
                    }
                }
                *out = y[i] + acc * h;
            }
            let input: &[C64] = if s == 5 { &self.y_new } else { &self.stage };
            (self.rhs)(input, &mut self.k[s + 1]);
            self.stats.rhs_evals += 1;
        }

        let mut err = 0.0f64;
        for i in 0..y.len() {
            let e = (self.k[0][i] * E1
                + self.k[2][i] * E3
                + self.k[3][i] * E4
                + self.k[4][i] * E5
                + self.k[5][i] * E6
                + self.k[6][i] * E7)
                * h;
            let scale = self.ctl.atol + self.ctl.rtol * y[i].norm().max(self.y_new[i].norm());
            let r = e.norm() / scale;
            if r.is_nan() {
                return f64::INFINITY;
            }
            err = err.max(r);
        }
        err
    }

    fn initial_step(&mut self, y: &[C64]) -> f64 {
        // Hairer–Wanner heuristic based on |y| and |f(y)|.
        let scale = |v: C64, yi: C64| v.norm() / (self.ctl.atol + self.ctl.rtol * yi.norm());
        let d0 = y.iter().map(|&v| scale(v, v)).fold(0.0, f64::max);
        let d1 = self.k[0]
            .iter()
            .zip(y)
            .map(|(&f, &yi)| scale(f, yi))
            .fold(0.0, f64::max);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.ctl.h_max);
        for i in 0..y.len() {
            self.stage[i] = y[i] + self.k[0][i] * h0;
        }
        let (head, tail) = self.k.split_at_mut(1);
        (self.rhs)(&self.stage, &mut tail[0]);
        self.stats.rhs_evals += 1;
        let d2 = head[0]
            .iter()
            .zip(tail[0].iter())
            .zip(y)
            .map(|((&f0, &f1), &yi)| scale(f1 - f0, yi))
            .fold(0.0, f64::max)
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.ctl.h_max)
    }
}
