//! Method-of-moments estimation of location and scale from even moments of
//! the contaminated data.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{binomial, ErrorModel, SymmetricBase, MAX_MOMENT_INDEX};
use crate::optimize::NelderMead;
use crate::stats::{quantile, sample_variance, sorted};
use crate::{Error, Result};

pub const MIN_MOMENTS: usize = 2;
pub const MAX_MOMENTS: usize = 5;
pub const DEFAULT_MOMENTS: usize = 5;
const CONDITION_LIMIT: f64 = 1e12;
const DEDUP_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSpec {
    pub m: usize,
    pub base: SymmetricBase,
    pub error: ErrorModel,
}

impl MomentSpec {
    pub fn new(m: usize, error: ErrorModel) -> Result<Self> {
        if !(MIN_MOMENTS..=MAX_MOMENTS).contains(&m) {
            return Err(Error::UnsupportedOrder {
                order: m,
                max: MAX_MOMENTS,
            });
        }
        debug_assert!(2 * m <= MAX_MOMENT_INDEX);
        Ok(MomentSpec {
            m,
            base: SymmetricBase::StandardNormal,
            error,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GmmSolution {
    pub xi: f64,
    pub omega: f64,
    pub d: f64,
    pub converged: bool,
    /// Index of the start that produced this solution.
    pub basin: usize,
    /// Number of starts that landed here.
    pub hits: usize,
}

/// `T_k = n^-1 sum ((w - xi) / omega)^(2k)`.
pub fn t_stat(k: usize, w: &[f64], xi: f64, omega: f64) -> f64 {
    w.iter()
        .map(|x| ((x - xi) / omega).powi(2 * k as i32))
        .sum::<f64>()
        / w.len() as f64
}

/// `(T_1, ..., T_m)` in one pass.
pub fn t_stats(m: usize, w: &[f64], xi: f64, omega: f64) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for x in w {
        let z2 = ((x - xi) / omega).powi(2);
        let mut p = 1.0;
        for o in out.iter_mut() {
            p *= z2;
            *o += p;
        }
    }
    let n = w.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Exact `E[T_k]` under scale `omega`.
pub fn t_mean(k: usize, spec: &MomentSpec, omega: f64) -> Result<f64> {
    if k > MAX_MOMENT_INDEX {
        return Err(Error::UnsupportedOrder {
            order: k,
            max: MAX_MOMENT_INDEX,
        });
    }
    let inv2 = omega.powi(-2);
    let mut total = 0.0;
    for j in 0..=k {
        let e = spec.error.even_moment(k - j)?;
        if e == 0.0 {
            continue;
        }
        total += binomial(2 * k, 2 * j) * inv2.powi((k - j) as i32) * spec.base.even_moment(j)? * e;
    }
    Ok(total)
}

/// Covariance matrix of `(T_1, ..., T_m)` for a sample of size `n`.
pub fn sigma_matrix(spec: &MomentSpec, omega: f64, n: usize) -> Result<DMatrix<f64>> {
    let means: Vec<f64> = (0..=2 * spec.m)
        .map(|k| t_mean(k, spec, omega))
        .collect::<Result<_>>()?;
    let m = spec.m;
    let nf = n as f64;
    Ok(DMatrix::from_fn(m, m, |i, j| {
        let (a, b) = (i + 1, j + 1);
        (means[a + b] - means[a] * means[b]) / nf
    }))
}

/// Quadratic form `r' Sigma^-1 r` with `r_k = T_k - E[T_k]`, on the
/// chi-square scale (Sigma already carries the `1/n`).
pub fn d_objective(xi: f64, omega: f64, w: &[f64], spec: &MomentSpec) -> Result<f64> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {omega}")));
    }
    if w.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let t = t_stats(spec.m, w, xi, omega);
    let sigma = sigma_matrix(spec, omega, w.len())?;
    let resid = DVector::from_fn(spec.m, |k, _| t[k] - t_mean(k + 1, spec, omega).unwrap_or(f64::NAN));
    quadratic_form(&sigma, &resid)
}

fn quadratic_form(sigma: &DMatrix<f64>, r: &DVector<f64>) -> Result<f64> {
    let m = r.len();
    // standardize by the diagonal
    let scale: Vec<f64> = (0..m).map(|i| sigma[(i, i)].sqrt()).collect();
    if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Estimation("moment covariance has a zero diagonal".into()));
    }
    let mut c = DMatrix::from_fn(m, m, |i, j| sigma[(i, j)] / (scale[i] * scale[j]));
    let z = DVector::from_fn(m, |i, _| r[i] / scale[i]);
    let eig = c.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if !(min > 0.0) || max / min > CONDITION_LIMIT {
        let bump = 1e-10 * c.trace() / m as f64;
        for i in 0..m {
            c[(i, i)] += bump;
        }
    }
    let v = match c.clone().cholesky() {
        Some(ch) => z.dot(&ch.solve(&z)),
        None => {
            let pinv = c
                .pseudo_inverse(1e-14)
                .map_err(|e| Error::Estimation(format!("moment covariance not invertible: {e}")))?;
            z.dot(&(pinv * &z))
        }
    };
    if v.is_finite() {
        Ok(v.max(0.0))
    } else {
        Err(Error::Estimation(format!("moment objective is {v}")))
    }
}

/// Default start grid: nine deciles of `w` crossed with four scales around
/// the moment estimate of the signal standard deviation.
pub fn default_starts(w: &[f64], error_variance: f64) -> Vec<(f64, f64)> {
    let s = sorted(w);
    let s2 = sample_variance(w);
    let sigma = (s2 - error_variance).max(0.05 * s2).sqrt();
    let mut out = Vec::with_capacity(36);
    for q in 1..=9 {
        let xi = quantile(&s, q as f64 / 10.0);
        for f in [0.25, 0.5, 1.0, 2.0] {
            out.push((xi, f * sigma));
        }
    }
    out
}

/// Multi-start minimization of [`d_objective`]; returns the distinct local
/// minima sorted by objective value.
pub fn gmm_solve(w: &[f64], spec: &MomentSpec, starts: &[(f64, f64)]) -> Result<Vec<GmmSolution>> {
    if w.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: w.len(),
        });
    }
    if starts.is_empty() || starts.iter().any(|s| !(s.1 > 0.0) || !s.0.is_finite()) {
        return Err(Error::InvalidParameter(
            "GMM starts must be nonempty with positive scales".into(),
        ));
    }
    // optimize in units of a data scale so tolerances are scale free
    let unit = sample_variance(w).sqrt().max(f64::MIN_POSITIVE);
    let nm = NelderMead {
        f_tol: 1e-8,
        x_tol: 1e-7,
        max_iter: 500,
        initial_step: 0.1,
    };
    let runs: Vec<Option<GmmSolution>> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, &(xi0, om0))| {
            let f = |p: &[f64]| {
                d_objective(xi0 + p[0] * unit, om0 * p[1].exp(), w, spec).unwrap_or(f64::INFINITY)
            };
            let res = nm.minimize_scaled(f, &[0.0, 0.0], &[0.1, 0.1]);
            if !res.converged || !res.value.is_finite() {
                return None;
            }
            let (mut xi, mut omega, mut d) = (xi0 + res.x[0] * unit, om0 * res.x[1].exp(), res.value);
            if spec.m == MIN_MOMENTS {
                if let Some((x, o)) = polish_root(w, spec, xi, omega, unit) {
                    if let Ok(v) = d_objective(x, o, w, spec) {
                        if v <= d {
                            (xi, omega, d) = (x, o, v);
                        }
                    }
                }
            }
            Some(GmmSolution {
                xi,
                omega,
                d,
                converged: true,
                basin: idx,
                hits: 1,
            })
        })
        .collect();
    let mut found: Vec<GmmSolution> = runs.into_iter().flatten().collect();
    if found.is_empty() {
        return Err(Error::Estimation("no GMM start converged".into()));
    }
    found.sort_by(|a, b| a.d.total_cmp(&b.d).then(a.basin.cmp(&b.basin)));
    let mut out: Vec<GmmSolution> = Vec::new();
    for s in found {
        match out
            .iter_mut()
            .find(|o| (o.xi - s.xi).abs() <= DEDUP_TOL && (o.omega - s.omega).abs() <= DEDUP_TOL)
        {
            Some(o) => o.hits += 1,
            None => out.push(s),
        }
    }
    Ok(out)
}

fn residuals(w: &[f64], spec: &MomentSpec, xi: f64, omega: f64) -> Option<[f64; 2]> {
    let t = t_stats(2, w, xi, omega);
    let r1 = t[0] - t_mean(1, spec, omega).ok()?;
    let r2 = t[1] - t_mean(2, spec, omega).ok()?;
    (r1.is_finite() && r2.is_finite()).then_some([r1, r2])
}

/// With two moments the minimum is a root of two equations in two
/// unknowns; Newton steps in `(xi / unit, log omega)` drive the residuals to
/// roundoff, which the simplex alone does not.
fn polish_root(w: &[f64], spec: &MomentSpec, xi: f64, omega: f64, unit: f64) -> Option<(f64, f64)> {
    let norm = |r: &[f64; 2]| r[0].abs().max(r[1].abs());
    let (mut a, mut b) = (xi / unit, omega.ln());
    let mut r = residuals(w, spec, a * unit, b.exp())?;
    const STEP: f64 = 1e-6;
    for _ in 0..30 {
        if norm(&r) < 1e-13 {
            break;
        }
        let ra = residuals(w, spec, (a + STEP) * unit, b.exp())?;
        let rb = residuals(w, spec, a * unit, (b + STEP).exp())?;
        let ra2 = residuals(w, spec, (a - STEP) * unit, b.exp())?;
        let rb2 = residuals(w, spec, a * unit, (b - STEP).exp())?;
        let j = [
            [(ra[0] - ra2[0]) / (2.0 * STEP), (rb[0] - rb2[0]) / (2.0 * STEP)],
            [(ra[1] - ra2[1]) / (2.0 * STEP), (rb[1] - rb2[1]) / (2.0 * STEP)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !(det.abs() > 0.0 && det.is_finite()) {
            return None;
        }
        let da = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let db = (j[0][0] * r[1] - j[1][0] * r[0]) / det;
        // halve until the residual shrinks
        let mut lambda = 1.0;
        loop {
            let (na, nb) = (a - lambda * da, b - lambda * db);
            if let Some(nr) = residuals(w, spec, na * unit, nb.exp()) {
                if norm(&nr) < norm(&r) {
                    (a, b, r) = (na, nb, nr);
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-4 {
                return Some((a * unit, b.exp()));
            }
        }
    }
    Some((a * unit, b.exp()))
}
