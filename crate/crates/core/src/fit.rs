//! Regression and series analysis: straight-line and logistic fits, first
//! peaks, finite-difference derivatives and steady-state extraction.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

/// Points at or below this value are dropped before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

const LOGISTIC_MAX_ITER: usize = 200;
const LOGISTIC_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub kind: FitKind,
    /// `[slope, intercept]` or `[A, k, x0]`.
    pub params: Vec<f64>,
    /// Magnitude of the Pearson correlation (data vs. `x` for linear fits,
    /// data vs. model for logistic ones). Zero when undefined.
    pub r: f64,
    pub residual_rms: f64,
    /// Set when `r` is undefined because the data has no spread.
    pub degenerate: bool,
    /// Points excluded before fitting (log fits only).
    pub dropped: usize,
}

impl FitResult {
    pub fn slope(&self) -> f64 {
        debug_assert_eq!(self.kind, FitKind::Linear);
        self.params[0]
    }

    pub fn intercept(&self) -> f64 {
        debug_assert_eq!(self.kind, FitKind::Linear);
        self.params[1]
    }
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "x and y lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_len} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("series contains non-finite values".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(|r|, degenerate)` for two equally long series.
fn pearson(a: &[f64], b: &[f64]) -> (f64, bool) {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&u, &v) in a.iter().zip(b) {
        sab += (u - ma) * (v - mb);
        saa += (u - ma) * (u - ma);
        sbb += (v - mb) * (v - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        (0.0, true)
    } else {
        ((sab / (saa * sbb).sqrt()).abs().min(1.0), false)
    }
}

fn rms(residuals: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for r in residuals {
        s += r * r;
        n += 1;
    }
    (s / n as f64).sqrt()
}

/// Least-squares line `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_pair(x, y, 3)?;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let scale: f64 = x.iter().map(|v| v * v).sum();
    if sxx <= f64::EPSILON * scale || sxx == 0.0 {
        return Err(Error::InvalidArgument("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (r, degenerate) = pearson(x, y);
    Ok(FitResult {
        kind: FitKind::Linear,
        params: vec![slope, intercept],
        r,
        residual_rms: rms(x.iter().zip(y).map(|(u, v)| v - slope * u - intercept)),
        degenerate,
        dropped: 0,
    })
}

/// Straight line through `(x, ln y)`, skipping points with `y ≤ 1e-12`.
pub fn log_linear_fit(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_pair(x, y, 0)?;
    let (xs, ls): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > LOG_FLOOR)
        .map(|(&u, &v)| (u, v.ln()))
        .unzip();
    let mut fit = linear_fit(&xs, &ls)?;
    fit.dropped = x.len() - xs.len();
    Ok(fit)
}

/// `A / (1 + exp[−k(x − x0)])`.
pub fn logistic(x: f64, a: f64, k: f64, x0: f64) -> f64 {
    a * sigmoid(k * (x - x0))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Best amplitude for fixed `(k, x0)` and the resulting residual sum.
fn best_amplitude(x: &[f64], y: &[f64], k: f64, x0: f64) -> (f64, f64) {
    let (mut sy, mut ss) = (0.0, 0.0);
    for (&u, &v) in x.iter().zip(y) {
        let s = sigmoid(k * (u - x0));
        sy += s * v;
        ss += s * s;
    }
    let a = if ss > 0.0 { sy / ss } else { 0.0 };
    (a, rss(x, y, [a, k, x0]))
}

fn rss(x: &[f64], y: &[f64], p: [f64; 3]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&u, &v)| {
            let r = v - logistic(u, p[0], p[1], p[2]);
            r * r
        })
        .sum()
}

/// Fits `y = A / (1 + exp[−k(x − x0)])`. A grid over `(k, x0)` with the
/// amplitude solved in closed form seeds a damped Gauss–Newton refinement.
///
/// Decreasing data comes back with `k < 0`.
pub fn logistic_fit(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_pair(x, y, 5)?;
    if y.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("logistic fit needs nonnegative y".into()));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument("x values are all equal".into()));
    }

    let mut best = [0.0, 1.0, lo];
    let mut best_rss = f64::INFINITY;
    for ik in 0..41 {
        let magnitude = 0.1 / span * 10f64.powf(ik as f64 * 0.1);
        for sign in [1.0, -1.0] {
            let k = sign * magnitude;
            for ix in 0..=60 {
                let x0 = lo - span + 3.0 * span * ix as f64 / 60.0;
                let (a, r) = best_amplitude(x, y, k, x0);
                if r < best_rss {
                    best_rss = r;
                    best = [a, k, x0];
                }
            }
        }
    }

    let mut p = best;
    let mut current = best_rss;
    let mut converged = false;
    for _ in 0..LOGISTIC_MAX_ITER {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (&u, &v) in x.iter().zip(y) {
            let s = sigmoid(p[1] * (u - p[2]));
            let ds = p[0] * s * (1.0 - s);
            let j = Vector3::new(s, ds * (u - p[2]), -ds * p[1]);
            jtj += j * j.transpose();
            jtr += j * (v - p[0] * s);
        }
        let Some(step) = jtj.lu().solve(&jtr) else {
            return Err(Error::FitFailure {
                reason: "singular normal equations".into(),
                best: p.to_vec(),
            });
        };

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial = [
                p[0] + lambda * step[0],
                p[1] + lambda * step[1],
                p[2] + lambda * step[2],
            ];
            let r = rss(x, y, trial);
            if r <= current {
                accepted = Some((trial, r));
                break;
            }
            lambda *= 0.5;
        }
        let Some((trial, r)) = accepted else {
            // No decrease along the Gauss–Newton direction: stationary to
            // working precision.
            converged = true;
            break;
        };
        let change = (0..3)
            .map(|i| (trial[i] - p[i]).abs() / p[i].abs().max(1e-300))
            .fold(0.0, f64::max);
        p = trial;
        current = r;
        if change < LOGISTIC_REL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure {
            reason: format!("no convergence after {LOGISTIC_MAX_ITER} iterations"),
            best: p.to_vec(),
        });
    }

    let model: Vec<f64> = x.iter().map(|&u| logistic(u, p[0], p[1], p[2])).collect();
    let (r, degenerate) = pearson(y, &model);
    Ok(FitResult {
        kind: FitKind::Logistic,
        params: p.to_vec(),
        r,
        residual_rms: (current / x.len() as f64).sqrt(),
        degenerate,
        dropped: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    /// No strict local maximum exists; this is the global maximum instead.
    pub is_boundary: bool,
}

/// First index with `y[i−1] < y[i] ≥ y[i+1]`, falling back to the (first)
/// global maximum.
pub fn peak(x: &[f64], y: &[f64]) -> Result<Peak> {
    first_peak_above(x, y, f64::NEG_INFINITY)
}

/// Like [`peak`], but local maxima with `y[i] ≤ floor` are skipped. Used on
/// series that sit at roundoff level before the signal arrives.
pub fn first_peak_above(x: &[f64], y: &[f64], floor: f64) -> Result<Peak> {
    check_pair(x, y, 3)?;
    let at = |index, is_boundary| Peak {
        index,
        x: x[index],
        y: y[index],
        is_boundary,
    };
    if let Some(i) =
        (1..y.len() - 1).find(|&i| y[i] > floor && y[i - 1] < y[i] && y[i] >= y[i + 1])
    {
        return Ok(at(i, false));
    }
    let mut i_max = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[i_max] {
            i_max = i;
        }
    }
    Ok(at(i_max, true))
}

/// All strict local maxima in order.
pub fn local_maxima(y: &[f64]) -> Vec<usize> {
    if y.len() < 3 {
        return Vec::new();
    }
    (1..y.len() - 1)
        .filter(|&i| y[i - 1] < y[i] && y[i] >= y[i + 1])
        .collect()
}

/// Central differences inside, one-sided differences at the ends.
pub fn derivative(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_pair(x, y, 3)?;
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("x must be strictly increasing".into()));
    }
    let n = x.len();
    let mut d = Vec::with_capacity(n);
    d.push((y[1] - y[0]) / (x[1] - x[0]));
    for i in 1..n - 1 {
        d.push((y[i + 1] - y[i - 1]) / (x[i + 1] - x[i - 1]));
    }
    d.push((y[n - 1] - y[n - 2]) / (x[n - 1] - x[n - 2]));
    Ok(d)
}

/// Mean of `y` over the trailing `window` of `t`, provided the relative
/// spread `(max − min)/|mean|` there is below `tol`.
pub fn steady_value(t: &[f64], y: &[f64], window: f64, tol: f64) -> Result<f64> {
    check_pair(t, y, 2)?;
    if !(window > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "window = {window} and tol = {tol} must be > 0"
        )));
    }
    let t_end = t[t.len() - 1];
    if t_end - t[0] < 2.0 * window * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "series spans {} but needs at least twice the window {window}",
            t_end - t[0]
        )));
    }
    let tail: Vec<f64> = t
        .iter()
        .zip(y)
        .filter(|(&s, _)| s >= t_end - window * (1.0 + 1e-12))
        .map(|(_, &v)| v)
        .collect();
    let m = mean(&tail);
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let variation = if hi == lo { 0.0 } else { (hi - lo) / m.abs() };
    if variation < tol {
        Ok(m)
    } else {
        Err(Error::NotConverged { variation, tol })
    }
}
