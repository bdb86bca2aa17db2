//! The GSS deconvolution density estimator, the classical nonparametric
//! deconvolution estimator, and integrated squared error.

use serde::Serialize;
use std::f64::consts::PI;

use crate::distributions::{ErrorModel, SymmetricBase};
use crate::gss::{GssModel, SkewingFunction, TabulatedSkew, MODEL_WINDOW};
use crate::quadrature::{self, integrate_composite};
use crate::selection::SelectionRecord;
use crate::spectral::{error_cf_checked, FrequencyGrid, SmoothingKernel, PSI_FLOOR};
use crate::{Error, Result};

/// Uniform grid on `[0, z_max]` on which the skewing function is tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct ZGrid {
    pub z_max: f64,
    pub points: usize,
}

impl Default for ZGrid {
    fn default() -> Self {
        ZGrid {
            z_max: 6.0,
            points: 401,
        }
    }
}

impl ZGrid {
    pub fn values(&self) -> Vec<f64> {
        quadrature::linspace(0.0, self.z_max, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Gss,
    Nonparametric,
}

/// A fitted GSS density `x -> (2/omega) f0((x-xi)/omega) pi~((x-xi)/omega)`.
#[derive(Debug, Clone, Serialize)]
pub struct DeconvFit {
    /// Model with the tabulated, range-corrected skewing function.
    pub model: GssModel,
    pub h: f64,
    pub kind: EstimatorKind,
    pub xi: f64,
    pub omega: f64,
    pub selection: Option<SelectionRecord>,
}

impl DeconvFit {
    pub fn density(&self, x: f64) -> f64 {
        self.model.pdf(x)
    }

    pub fn skew(&self, z: f64) -> f64 {
        self.model.skew.eval(z)
    }

    /// `points` equally spaced abscissae over `[xi - half_width*omega, xi + half_width*omega]`.
    pub fn default_xgrid(&self, half_width: f64, points: usize) -> Vec<f64> {
        quadrature::linspace(
            self.xi - half_width * self.omega,
            self.xi + half_width * self.omega,
            points,
        )
    }
}

/// Precomputed `s0_hat` on the positive half of a frequency grid; evaluates
/// the raw skewing-function estimate
/// `pi_hat(z) = 1/2 + (4 pi f0(z))^-1 * int sin(tz) s0_hat(t) dt`.
#[derive(Debug, Clone)]
pub struct SkewEstimator {
    base: SymmetricBase,
    nodes: Vec<f64>,
    weighted_s0: Vec<f64>,
}

impl SkewEstimator {
    pub fn new(wstar: &[f64], model: &ErrorModel, omega: f64, h: f64) -> Result<Self> {
        Self::with_grid(wstar, model, omega, h, &FrequencyGrid::for_bandwidth(h)?)
    }

    pub fn with_grid(
        wstar: &[f64],
        model: &ErrorModel,
        omega: f64,
        h: f64,
        grid: &FrequencyGrid,
    ) -> Result<Self> {
        if wstar.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if !(h > 0.0 && omega > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth and scale must be positive, got h = {h}, omega = {omega}"
            )));
        }
        let kernel = SmoothingKernel;
        let n = wstar.len() as f64;
        let (pos, pw) = grid.positive_half();
        let mut nodes = Vec::with_capacity(pos.len());
        let mut weighted_s0 = Vec::with_capacity(pos.len());
        for (&t, &w) in pos.iter().zip(pw) {
            let k = kernel.cf(h * t);
            if k == 0.0 {
                continue;
            }
            let psi = error_cf_checked(model, t, omega)?;
            let s: f64 = wstar.iter().map(|x| (t * x).sin()).sum();
            nodes.push(t);
            weighted_s0.push(w * k * s / (n * psi));
        }
        Ok(SkewEstimator {
            base: SymmetricBase::StandardNormal,
            nodes,
            weighted_s0,
        })
    }

    /// `int_{-inf}^{inf} sin(tz) s0_hat(t) dt`.
    pub fn sine_transform(&self, z: f64) -> f64 {
        // integrand is even in t
        2.0 * self
            .nodes
            .iter()
            .zip(&self.weighted_s0)
            .map(|(t, ws)| (t * z).sin() * ws)
            .sum::<f64>()
    }

    /// Raw estimate; satisfies `pi_hat(z) + pi_hat(-z) = 1` but may leave
    /// `[0, 1]`.
    pub fn pi_hat(&self, z: f64) -> Result<f64> {
        let f0 = self.base.pdf(z);
        if f0 < PSI_FLOOR {
            return Err(Error::TailUndefined(z));
        }
        Ok(0.5 + self.sine_transform(z) / (4.0 * PI * f0))
    }

    /// Range-corrected estimate, computed on `|z|` and reflected.
    pub fn pi_tilde(&self, z: f64) -> Result<f64> {
        let v = clip_unit(self.pi_hat(z.abs())?);
        Ok(if z < 0.0 { 1.0 - v } else { v })
    }
}

#[inline]
pub fn clip_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Raw skewing-function estimate at `z` from standardized data.
pub fn skew_hat(z: f64, wstar: &[f64], model: &ErrorModel, omega: f64, h: f64) -> Result<f64> {
    SkewEstimator::new(wstar, model, omega, h)?.pi_hat(z)
}

/// Range-corrected skewing-function estimate at `z`.
pub fn skew_corrected(
    z: f64,
    wstar: &[f64],
    model: &ErrorModel,
    omega: f64,
    h: f64,
) -> Result<f64> {
    SkewEstimator::new(wstar, model, omega, h)?.pi_tilde(z)
}

/// Standardizes raw data with a location/scale pair.
pub fn standardize(w: &[f64], xi: f64, omega: f64) -> Vec<f64> {
    w.iter().map(|x| (x - xi) / omega).collect()
}

/// Tabulates the corrected skewing function on `zgrid`, freezing it at the
/// last computable value where `f0` underflows.
pub fn tabulate_skew(est: &SkewEstimator, zgrid: &ZGrid) -> Result<TabulatedSkew> {
    let mut values = Vec::with_capacity(zgrid.points);
    let mut last = 0.5;
    for z in zgrid.values() {
        let v = match est.pi_hat(z) {
            Ok(v) => clip_unit(v),
            Err(Error::TailUndefined(_)) => last,
            Err(e) => return Err(e),
        };
        last = v;
        values.push(v);
    }
    TabulatedSkew::new(zgrid.z_max, values)
}

/// GSS deconvolution fit at a given location, scale and bandwidth.
pub fn gss_fit(
    w: &[f64],
    xi: f64,
    omega: f64,
    model: &ErrorModel,
    h: f64,
    zgrid: &ZGrid,
) -> Result<DeconvFit> {
    let wstar = standardize(w, xi, omega);
    let est = SkewEstimator::new(&wstar, model, omega, h)?;
    fit_from_estimator(&est, xi, omega, h, zgrid)
}

pub(crate) fn fit_from_estimator(
    est: &SkewEstimator,
    xi: f64,
    omega: f64,
    h: f64,
    zgrid: &ZGrid,
) -> Result<DeconvFit> {
    let skew = SkewingFunction::Tabulated(tabulate_skew(est, zgrid)?);
    Ok(DeconvFit {
        model: GssModel::new(skew, xi, omega)?,
        h,
        kind: EstimatorKind::Gss,
        xi,
        omega,
        selection: None,
    })
}

/// Classical deconvolution kernel density estimate on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct NonparFit {
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub h: f64,
    /// Whether any negative values were cut off before rescaling.
    pub truncated: bool,
}

impl NonparFit {
    /// Linear interpolation; zero outside the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 0 || x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let i = self.xs.partition_point(|&v| v <= x).clamp(1, n - 1);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let frac = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        self.density[i - 1] + frac * (self.density[i] - self.density[i - 1])
    }
}

/// `(1/2pi) int e^{-itx} psi_K(ht) ecf_W(t) / psi_U(t) dt` on `xs`, before
/// any truncation.
pub fn np_density_raw(w: &[f64], model: &ErrorModel, h: f64, xs: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
    }
    let kernel = SmoothingKernel;
    let (wmin, wmax) = min_max(w);
    let (xmin, xmax) = min_max(xs);
    let spread = (xmax - wmin).abs().max((wmax - xmin).abs());
    let grid = FrequencyGrid::adaptive(1.0 / h, spread)?;
    let (pos, pw) = grid.positive_half();
    let n = w.len() as f64;
    // (node, weight * psi_K / psi_U * C/n, ... * S/n)
    let mut terms = Vec::with_capacity(pos.len());
    for (&t, &wt) in pos.iter().zip(pw) {
        let k = kernel.cf(h * t);
        if k == 0.0 {
            continue;
        }
        let psi = error_cf_checked(model, t, 1.0)?;
        let (mut c, mut s) = (0.0, 0.0);
        for &x in w {
            let (sn, cs) = (t * x).sin_cos();
            c += cs;
            s += sn;
        }
        let scale = wt * k / (psi * n);
        terms.push((t, scale * c, scale * s));
    }
    Ok(xs
        .iter()
        .map(|&x| {
            terms
                .iter()
                .map(|&(t, c, s)| {
                    let (sn, cs) = (t * x).sin_cos();
                    c * cs + s * sn
                })
                .sum::<f64>()
                / PI
        })
        .collect())
}

/// Nonparametric deconvolution estimate, negatives truncated and the rest
/// rescaled to unit mass on `xgrid`.
pub fn np_fit(w: &[f64], model: &ErrorModel, h: f64, xgrid: &[f64]) -> Result<NonparFit> {
    if xgrid.len() < 2 {
        return Err(Error::InvalidParameter("x grid needs at least two points".into()));
    }
    let raw = np_density_raw(w, model, h, xgrid)?;
    let truncated = raw.iter().any(|&v| v < 0.0);
    let mut density: Vec<f64> = raw.into_iter().map(|v| v.max(0.0)).collect();
    let mass = quadrature::trapezoid(xgrid, &density);
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Estimation(format!(
            "nonparametric estimate has no positive mass (h = {h})"
        )));
    }
    density.iter_mut().for_each(|v| *v /= mass);
    Ok(NonparFit {
        xs: xgrid.to_vec(),
        density,
        h,
        truncated,
    })
}

/// Default evaluation grid for the nonparametric estimator: `points` values
/// over the data range padded by three standard deviations.
pub fn np_default_grid(w: &[f64], points: usize) -> Vec<f64> {
    let (lo, hi) = min_max(w);
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    quadrature::linspace(lo - 3.0 * sd, hi + 3.0 * sd, points)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// ISE of a grid-valued estimate against a known GSS density: trapezoid
/// over the grid plus the squared truth mass the grid does not cover.
pub fn ise_on_grid(xs: &[f64], values: &[f64], truth: &GssModel) -> Result<f64> {
    if xs.len() != values.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter("ISE grid and values must match".into()));
    }
    let sq: Vec<f64> = xs
        .iter()
        .zip(values)
        .map(|(&x, &v)| (v - truth.pdf(x)).powi(2))
        .collect();
    let inside = quadrature::trapezoid(xs, &sq);
    let lo = truth.xi - 2.0 * MODEL_WINDOW * truth.omega;
    let hi = truth.xi + 2.0 * MODEL_WINDOW * truth.omega;
    let mut tail = 0.0;
    if xs[0] > lo {
        tail += integrate_composite(lo, xs[0], 32, 16, |x| truth.pdf(x).powi(2));
    }
    let last = xs[xs.len() - 1];
    if last < hi {
        tail += integrate_composite(last, hi, 32, 16, |x| truth.pdf(x).powi(2));
    }
    let v = inside + tail;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Quadrature(format!("ISE is {v}")))
    }
}

/// ISE between two densities given as functions, integrated over the union
/// of both effective supports.
pub fn ise_fn<F: Fn(f64) -> f64>(f: F, support: (f64, f64), truth: &GssModel) -> Result<f64> {
    let lo = support.0.min(truth.xi - MODEL_WINDOW * truth.omega);
    let hi = support.1.max(truth.xi + MODEL_WINDOW * truth.omega);
    let v = integrate_composite(lo, hi, 256, 16, |x| (f(x) - truth.pdf(x)).powi(2));
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Quadrature(format!("ISE is {v}")))
    }
}

/// ISE of a GSS fit against the truth.
pub fn ise(fit: &DeconvFit, truth: &GssModel) -> Result<f64> {
    ise_fn(
        |x| fit.density(x),
        (fit.xi - MODEL_WINDOW * fit.omega, fit.xi + MODEL_WINDOW * fit.omega),
        truth,
    )
}
