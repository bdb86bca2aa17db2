//! Bandwidth selection: cross-validation, MISE approximation, a two-stage
//! plug-in rule, and the shared grid-plus-Brent minimizer.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::distributions::{factorial, ErrorModel, SymmetricBase};
use crate::gss::GssModel;
use crate::optimize::brent;
use crate::quadrature::{integrate_composite, logspace};
use crate::spectral::{
    empirical_cf, error_cf_checked, sin_sums, FrequencyGrid, SmoothingKernel, DEFAULT_KAPPA,
};
use crate::stats::sample_variance;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthMethod {
    Cv,
    Mise,
    Plugin,
}

impl FromStr for BandwidthMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cv" => Ok(BandwidthMethod::Cv),
            "mise" => Ok(BandwidthMethod::Mise),
            "plugin" | "pi" => Ok(BandwidthMethod::Plugin),
            other => Err(Error::Config(format!(
                "unknown bandwidth method '{other}' (expected cv, mise or plugin)"
            ))),
        }
    }
}

impl fmt::Display for BandwidthMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandwidthMethod::Cv => "cv",
            BandwidthMethod::Mise => "mise",
            BandwidthMethod::Plugin => "plugin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSearch {
    pub h_min: f64,
    pub h_max: f64,
    pub grid_size: usize,
    pub tolerance: f64,
}

impl Default for BandwidthSearch {
    fn default() -> Self {
        BandwidthSearch {
            h_min: 0.02,
            h_max: 3.0,
            grid_size: 40,
            tolerance: 1e-4,
        }
    }
}

impl BandwidthSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_min > 0.0 && self.h_min < self.h_max && self.h_max.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth search needs 0 < h_min < h_max, got [{}, {}]",
                self.h_min, self.h_max
            )));
        }
        if self.grid_size < 20 {
            return Err(Error::Config(format!(
                "bandwidth grid needs at least 20 points, got {}",
                self.grid_size
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("bandwidth tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        logspace(self.h_min, self.h_max, self.grid_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthChoice {
    pub h: f64,
    pub value: f64,
    pub at_boundary: bool,
    pub flat: bool,
}

/// Which grid minimum seeds the refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridRule {
    Global,
    /// The local minimum with the largest `h`; falls back to the global
    /// minimum when the grid values are monotone.
    LargestLocal,
}

/// Grid scan followed by Brent refinement between the neighbours of the best
/// grid point. Errors and non-finite values count as `+inf`.
pub fn minimize_bandwidth<F>(objective: F, search: &BandwidthSearch) -> Result<BandwidthChoice>
where
    F: FnMut(f64) -> Result<f64>,
{
    minimize_bandwidth_with(objective, search, GridRule::Global)
}

fn largest_local_minimum(values: &[f64]) -> Option<usize> {
    let m = values.len();
    (1..m.saturating_sub(1))
        .rev()
        .find(|&i| values[i].is_finite() && values[i] <= values[i - 1] && values[i] <= values[i + 1])
}

pub fn minimize_bandwidth_with<F>(mut objective: F, search: &BandwidthSearch, rule: GridRule) -> Result<BandwidthChoice>
where
    F: FnMut(f64) -> Result<f64>,
{
    search.validate()?;
    let mut eval = |h: f64| match objective(h) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    };
    let grid = search.grid();
    let values: Vec<f64> = grid.iter().map(|&h| eval(h)).collect();
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Estimation(
            "bandwidth objective is not finite anywhere on the search grid".into(),
        ));
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if finite.len() == values.len() && hi - lo <= 1e-14 * lo.abs().max(1e-300) {
        let mid = grid[grid.len() / 2];
        log::warn!("bandwidth objective is flat; returning grid midpoint h = {mid}");
        return Ok(BandwidthChoice {
            h: mid,
            value: values[grid.len() / 2],
            at_boundary: false,
            flat: true,
        });
    }
    // first index attaining the minimum
    let global = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < values[b] { i } else { b });
    let best = match rule {
        GridRule::Global => global,
        GridRule::LargestLocal => largest_local_minimum(&values).unwrap_or(global),
    };
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    let (mut h, mut value) = (grid[best], values[best]);
    let (hb, vb) = brent(&mut eval, a, b, search.tolerance, 200);
    if vb < value {
        h = hb;
        value = vb;
    }
    let at_boundary = h == grid[0] || h == grid[grid.len() - 1];
    if at_boundary {
        log::warn!("bandwidth minimizer hit the search boundary at h = {h}");
    }
    Ok(BandwidthChoice {
        h,
        value,
        at_boundary,
        flat: false,
    })
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn check_n(wstar: &[f64]) -> Result<f64> {
    if wstar.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: wstar.len(),
        });
    }
    Ok(wstar.len() as f64)
}

/// Cross-validation score.
pub fn cv_score(h: f64, wstar: &[f64], model: &ErrorModel, omega: f64) -> Result<f64> {
    let n = check_n(wstar)?;
    check_positive(h, omega)?;
    let kernel = SmoothingKernel;
    let grid = FrequencyGrid::adaptive(1.0 / h, max_abs(wstar))?;
    let (pos, pw) = grid.positive_half();
    let mut total = 0.0;
    for (&t, &w) in pos.iter().zip(pw) {
        let k = kernel.cf(h * t);
        if k == 0.0 {
            continue;
        }
        let psi = error_cf_checked(model, t, omega)?;
        let (s, q) = sin_sums(t, wstar);
        let mean = s / n;
        total += w * k / (psi * psi) * (k * mean * mean - 2.0 * (s * s - q) / (n * (n - 1.0)));
    }
    finite(2.0 * total)
}

/// Approximate MISE criterion, up to a constant not depending on `h`.
pub fn mise_approx(h: f64, wstar: &[f64], model: &ErrorModel, omega: f64, kappa: f64) -> Result<f64> {
    let n = check_n(wstar)?;
    check_positive(h, omega)?;
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let kernel = SmoothingKernel;
    let base = SymmetricBase::StandardNormal;
    // variance part on u in [0, 1/h]
    let grid = FrequencyGrid::for_bandwidth(h)?;
    let (pos, pw) = grid.positive_half();
    let mut variance = 0.0;
    for (&u, &w) in pos.iter().zip(pw) {
        let k = kernel.cf(h * u);
        if k == 0.0 {
            continue;
        }
        let psi = error_cf_checked(model, u, omega)?;
        let psi2 = model.cf(2.0 * u / omega);
        variance += w * k * k / (n * psi * psi) * 0.5 * (1.0 - psi2 * base.cf(2.0 * u));
    }
    // signal part on u in [0, min(kappa, 1/h)]
    let upper = kappa.min(1.0 / h);
    let grid = FrequencyGrid::adaptive(upper, max_abs(wstar))?;
    let (pos, pw) = grid.positive_half();
    let mut signal = 0.0;
    for (&u, &w) in pos.iter().zip(pw) {
        let k = kernel.cf(h * u);
        let psi = error_cf_checked(model, u, omega)?;
        let (s, q) = sin_sums(u, wstar);
        let s2 = ((s * s - q) / (n * (n - 1.0) * psi * psi)).max(0.0);
        signal += w * ((n - 1.0) / n * k - 2.0) * k * s2;
    }
    finite(2.0 * (variance + signal))
}

/// Exact MISE of the unclipped density estimate of the standardized
/// variable `Z`, for a known truth and sample size `n`.
pub fn mise_exact(h: f64, truth: &GssModel, model: &ErrorModel, n: usize) -> Result<f64> {
    check_positive(h, truth.omega)?;
    let kernel = SmoothingKernel;
    let base = truth.base;
    let omega = truth.omega;
    let nf = n as f64;
    let t_var = 1.0 / h;
    let var = integrate_composite(0.0, t_var, 32, 16, |t| {
        let k = kernel.cf(h * t);
        let psi = model.cf(t / omega);
        let s0 = truth.s0(t);
        k * k / nf * ((1.0 - base.cf(2.0 * t) * model.cf(2.0 * t / omega)) / (2.0 * psi * psi) - s0 * s0)
    });
    // the bias term lives on the whole line; s0 decays like the base cf
    let t_far = 40.0f64.max(t_var);
    let bias = integrate_composite(0.0, t_far, 256, 16, |t| {
        let s0 = truth.s0(t);
        (kernel.cf(h * t) - 1.0).powi(2) * s0 * s0
    });
    finite((var + bias) / PI)
}

fn check_positive(h: f64, omega: f64) -> Result<()> {
    if h > 0.0 && omega > 0.0 && h.is_finite() && omega.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "bandwidth and scale must be positive, got h = {h}, omega = {omega}"
        )))
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Quadrature(format!("criterion evaluated to {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PluginBandwidth {
    pub h: f64,
    /// Normal-reference rule used because a stage failed.
    pub fallback: bool,
}

/// Two-stage plug-in bandwidth for data `w` with error `model` on the same
/// scale. Returns the bandwidth alone; see [`plugin_bandwidth_detailed`].
pub fn plugin_bandwidth(w: &[f64], model: &ErrorModel) -> Result<f64> {
    Ok(plugin_bandwidth_detailed(w, model)?.h)
}

pub fn plugin_bandwidth_detailed(w: &[f64], model: &ErrorModel) -> Result<PluginBandwidth> {
    if w.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: w.len(),
        });
    }
    let n = w.len() as f64;
    let s2 = sample_variance(w);
    // signal scale with a floor when the error swamps the sample variance
    let sigma = (s2 - model.variance).max(0.05 * s2).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::Estimation("plug-in bandwidth needs non-constant data".into()));
    }
    let range = w.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - w.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let stages = || -> Result<f64> {
        let theta4 = normal_reference_theta(4, sigma);
        let g3 = pilot_bandwidth(3, theta4, n, model, sigma)?;
        let theta3 = theta_hat(3, g3, w, model, range)?;
        let g2 = pilot_bandwidth(2, theta3, n, model, sigma)?;
        let theta2 = theta_hat(2, g2, w, model, range)?;
        amise_bandwidth(theta2, n, model, sigma)
    };
    match stages() {
        Ok(h) if h.is_finite() && h > 0.0 => Ok(PluginBandwidth { h, fallback: false }),
        other => {
            let reason = match other {
                Err(e) => e.to_string(),
                Ok(h) => format!("stage produced h = {h}"),
            };
            let theta2 = normal_reference_theta(2, sigma);
            let h = amise_bandwidth(theta2, n, model, sigma)?;
            log::warn!("plug-in stages failed ({reason}); using normal reference h = {h}");
            Ok(PluginBandwidth { h, fallback: true })
        }
    }
}

/// `int (f^{(r)})^2` for a `N(0, sigma^2)` density.
pub fn normal_reference_theta(r: u32, sigma: f64) -> f64 {
    let r = r as usize;
    factorial(2 * r) / ((2.0 * sigma).powi(2 * r as i32 + 1) * factorial(r) * PI.sqrt())
}

// (1/(2 pi n g^{2r+1})) int s^{2r} psi_K^2(s) / psi_U^2(s/g) ds
fn deconv_variance(r: u32, g: f64, n: f64, model: &ErrorModel) -> f64 {
    let kernel = SmoothingKernel;
    let v = integrate_composite(0.0, 1.0, 8, 16, |s| {
        let k = kernel.cf(s);
        let psi = model.cf(s / g);
        s.powi(2 * r as i32) * k * k / (psi * psi)
    });
    2.0 * v / (2.0 * PI * n * g.powi(2 * r as i32 + 1))
}

// Pilot bandwidth balancing the leading smoothing bias against the
// deconvolution variance bias of the functional estimate.
fn pilot_bandwidth(r: u32, theta_next: f64, n: f64, model: &ErrorModel, sigma: f64) -> Result<f64> {
    if !(theta_next > 0.0 && theta_next.is_finite()) {
        return Err(Error::Estimation(format!(
            "curvature functional of order {} is not positive",
            r + 1
        )));
    }
    let mu2 = SmoothingKernel::SECOND_MOMENT;
    let gap = |lg: f64| {
        let g = lg.exp();
        let v = deconv_variance(r, g, n, model);
        if !v.is_finite() {
            return f64::INFINITY;
        }
        (v / (mu2 * g * g * theta_next)).ln()
    };
    let (mut a, mut b) = ((sigma * 1e-3).ln(), (sigma * 20.0).ln());
    let (fa, fb) = (gap(a), gap(b));
    if !(fa > 0.0 && fb < 0.0) {
        return Err(Error::Estimation(format!("pilot bandwidth of order {r} not bracketed")));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if gap(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-12 {
            break;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Deconvolution estimate of `int (f^{(r)})^2` with pilot bandwidth `g`,
/// integrated in `s = g t` so the rule is scale equivariant.
fn theta_hat(r: u32, g: f64, w: &[f64], model: &ErrorModel, range: f64) -> Result<f64> {
    let kernel = SmoothingKernel;
    let grid = FrequencyGrid::adaptive(1.0, range / g)?;
    let (pos, pw) = grid.positive_half();
    let mut total = 0.0;
    for (&s, &wt) in pos.iter().zip(pw) {
        let t = s / g;
        let k = kernel.cf(s);
        let psi = error_cf_checked(model, t, 1.0)?;
        let ecf = empirical_cf(t, w).norm_sqr();
        total += wt * s.powi(2 * r as i32) * ecf * k * k / (psi * psi);
    }
    let v = 2.0 * total / (2.0 * PI * g.powi(2 * r as i32 + 1));
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Estimation(format!("curvature estimate of order {r} is {v}")))
    }
}

fn amise_bandwidth(theta2: f64, n: f64, model: &ErrorModel, sigma: f64) -> Result<f64> {
    let mu2 = SmoothingKernel::SECOND_MOMENT;
    let amise = |lh: f64| {
        let h = lh.exp();
        let v = deconv_variance(0, h, n, model);
        v + 0.25 * h.powi(4) * mu2 * mu2 * theta2
    };
    let (lo, hi) = ((sigma * 1e-3).ln(), (sigma * 10.0).ln());
    // coarse scan guards against the flat overflow region at small h
    let grid: Vec<f64> = (0..=60).map(|i| lo + (hi - lo) * i as f64 / 60.0).collect();
    let vals: Vec<f64> = grid
        .iter()
        .map(|&x| amise(x))
        .map(|v| if v.is_finite() { v } else { f64::INFINITY })
        .collect();
    let best = vals
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < vals[b] { i } else { b });
    if !vals[best].is_finite() {
        return Err(Error::Estimation("asymptotic MISE is not finite".into()));
    }
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    let (x, _) = brent(amise, a, b, 1e-10, 200);
    Ok(x.exp())
}

/// Selects a bandwidth for the GSS estimator on standardized data.
pub fn select_bandwidth(
    method: BandwidthMethod,
    wstar: &[f64],
    model: &ErrorModel,
    omega: f64,
    kappa: f64,
    search: &BandwidthSearch,
) -> Result<BandwidthChoice> {
    match method {
        // the CV score is very noisy at small h, where spurious deep dips
        // appear; the largest-h local minimum is the stable choice
        BandwidthMethod::Cv => minimize_bandwidth_with(
            |h| cv_score(h, wstar, model, omega),
            search,
            GridRule::LargestLocal,
        ),
        BandwidthMethod::Mise => {
            minimize_bandwidth(|h| mise_approx(h, wstar, model, omega, kappa), search)
        }
        BandwidthMethod::Plugin => {
            let h = plugin_bandwidth(wstar, &model.scaled(1.0 / omega))?;
            Ok(BandwidthChoice {
                h,
                value: f64::NAN,
                at_boundary: false,
                flat: false,
            })
        }
    }
}

pub fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
