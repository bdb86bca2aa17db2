//! Frequency-domain building blocks: the smoothed estimator of the imaginary
//! part of the standardized characteristic function, the estimator of its
//! square, the empirical phase function and the frequency grid all `dt`
//! integrals are evaluated on.

use num_complex::Complex64;
use serde::Serialize;

use crate::distributions::ErrorModel;
use crate::quadrature::{self, GaussLegendre};
use crate::{Error, Result};

/// Smallest error characteristic function value we are willing to divide by.
pub const PSI_FLOOR: f64 = 1e-300;
/// Below this modulus the empirical phase is treated as undefined.
pub const PHASE_FLOOR: f64 = 1e-12;
/// Default truncation of the squared-imaginary estimator.
pub const DEFAULT_KAPPA: f64 = 4.0;
/// Default number of Gauss–Legendre nodes on `[-1/h, 1/h]`.
pub const DEFAULT_GRID_NODES: usize = 1024;

/// Fourier transform of the smoothing kernel, `psi_K(t) = (1 - t^2)^3` on
/// `[-1, 1]` and zero outside.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SmoothingKernel;

impl SmoothingKernel {
    /// `c_K` in the leading `h^2` bias term: `1 - psi_K(t) = c_K t^2 + O(t^4)`.
    pub const CURVATURE: f64 = 3.0;
    /// Second moment of the kernel in the space domain, `-psi_K''(0)`.
    pub const SECOND_MOMENT: f64 = 6.0;

    #[inline]
    pub fn cf(&self, t: f64) -> f64 {
        let u = 1.0 - t * t;
        if u <= 0.0 {
            0.0
        } else {
            u * u * u
        }
    }
}

/// Symmetric quadrature grid over `[-t_max, t_max]`.
///
/// Nodes are sorted and exactly mirrored around zero, with no node at zero,
/// so integrands can be evaluated on the positive half and reflected.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencyGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    t_max: f64,
}

impl FrequencyGrid {
    /// A single `n`-node Gauss–Legendre rule; `n` must be even.
    pub fn gauss_legendre(t_max: f64, n: usize) -> Result<Self> {
        check_t_max(t_max)?;
        if n < 2 || n % 2 == 1 {
            return Err(Error::InvalidParameter(format!(
                "frequency grid needs an even node count, got {n}"
            )));
        }
        let rule = GaussLegendre::cached(n);
        let nodes = rule.nodes().iter().map(|x| x * t_max).collect();
        let weights = rule.weights().iter().map(|w| w * t_max).collect();
        Ok(FrequencyGrid { nodes, weights, t_max })
    }

    /// Composite Gauss–Legendre with `panels_per_side` panels on each half.
    pub fn composite(t_max: f64, panels_per_side: usize, order: usize) -> Result<Self> {
        check_t_max(t_max)?;
        if panels_per_side == 0 {
            return Err(Error::InvalidParameter("need at least one panel".into()));
        }
        let (pos, pw) = quadrature::composite(0.0, t_max, panels_per_side, order);
        let mut nodes: Vec<f64> = pos.iter().rev().map(|t| -t).collect();
        let mut weights: Vec<f64> = pw.iter().rev().copied().collect();
        nodes.extend_from_slice(&pos);
        weights.extend_from_slice(&pw);
        Ok(FrequencyGrid { nodes, weights, t_max })
    }

    /// The default grid for bandwidth `h`: the support of `psi_K(h t)`.
    pub fn for_bandwidth(h: f64) -> Result<Self> {
        Self::gauss_legendre(1.0 / h, DEFAULT_GRID_NODES)
    }

    /// Composite grid fine enough for integrands oscillating at angular
    /// frequency up to `max_freq`: every 16-node panel spans at most four
    /// radians of phase.
    pub fn adaptive(t_max: f64, max_freq: f64) -> Result<Self> {
        let panels = ((t_max * max_freq.max(1.0) / 4.0).ceil() as usize).clamp(2, 256);
        Self::composite(t_max, panels, 16)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights with `t > 0`.
    pub fn positive_half(&self) -> (&[f64], &[f64]) {
        let m = self.nodes.len() / 2;
        (&self.nodes[m..], &self.weights[m..])
    }
}

fn check_t_max(t_max: f64) -> Result<()> {
    if t_max > 0.0 && t_max.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("t_max must be positive, got {t_max}")))
    }
}

/// Weighted sum of `f` over the grid nodes.
pub fn quad_integrate<F: FnMut(f64) -> f64>(mut f: F, grid: &FrequencyGrid) -> Result<f64> {
    let mut total = 0.0;
    for (&t, &w) in grid.nodes.iter().zip(&grid.weights) {
        let v = f(t);
        if !v.is_finite() {
            return Err(Error::Quadrature(format!("integrand is {v} at t = {t}")));
        }
        total += w * v;
    }
    Ok(total)
}

/// `(S, Q) = (sum sin(t w_j), sum sin^2(t w_j))`.
#[inline]
pub fn sin_sums(t: f64, data: &[f64]) -> (f64, f64) {
    let mut s = 0.0;
    let mut q = 0.0;
    for &w in data {
        let v = (t * w).sin();
        s += v;
        q += v * v;
    }
    (s, q)
}

#[inline]
pub(crate) fn error_cf_checked(model: &ErrorModel, t: f64, omega: f64) -> Result<f64> {
    let psi = model.cf(t / omega);
    if psi < PSI_FLOOR {
        Err(Error::Degenerate { t, value: psi })
    } else {
        Ok(psi)
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if omega > 0.0 && omega.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("scale must be positive, got {omega}")))
    }
}

/// Unbiased empirical estimate of `s0(t)` from standardized data.
pub fn s0_empirical(t: f64, wstar: &[f64], model: &ErrorModel, omega: f64) -> Result<f64> {
    if wstar.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    check_omega(omega)?;
    let psi = error_cf_checked(model, t, omega)?;
    let (s, _) = sin_sums(t, wstar);
    Ok(s / (wstar.len() as f64 * psi))
}

/// Kernel-smoothed estimate `psi_K(h t) * s0_empirical(t)`; zero for
/// `|t| >= 1/h`.
pub fn s0_smoothed(
    t: f64,
    wstar: &[f64],
    model: &ErrorModel,
    omega: f64,
    h: f64,
    kernel: &SmoothingKernel,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
    }
    let k = kernel.cf(h * t);
    if k == 0.0 {
        if wstar.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        return Ok(0.0);
    }
    Ok(k * s0_empirical(t, wstar, model, omega)?)
}

/// Truncated, positively clipped U-statistic estimate of `s0(t)^2`.
pub fn s2_hat(t: f64, wstar: &[f64], model: &ErrorModel, omega: f64, kappa: f64) -> Result<f64> {
    let n = wstar.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    check_omega(omega)?;
    if t.abs() > kappa {
        return Ok(0.0);
    }
    let psi = error_cf_checked(model, t, omega)?;
    let (s, q) = sin_sums(t, wstar);
    let nf = n as f64;
    Ok(((s * s - q) / (nf * (nf - 1.0) * psi * psi)).max(0.0))
}

/// Empirical characteristic function of raw data.
pub fn empirical_cf(t: f64, w: &[f64]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for &x in w {
        let (s, c) = (t * x).sin_cos();
        re += c;
        im += s;
    }
    let n = w.len() as f64;
    Complex64::new(re / n, im / n)
}

/// Unit-modulus empirical phase function of the raw data.
pub fn phase_empirical(t: f64, w: &[f64]) -> Result<Complex64> {
    if w.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let c = empirical_cf(t, w);
    let modulus = c.norm();
    if modulus < PHASE_FLOOR {
        return Err(Error::PhaseUndefined { t, modulus });
    }
    Ok(c / modulus)
}

/// Tabulated `s0_hat` and `s2_hat` on a frequency grid.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralEstimate {
    pub grid: FrequencyGrid,
    pub s0: Vec<f64>,
    pub s2: Vec<f64>,
    pub h: f64,
    pub omega: f64,
    pub kappa: f64,
}

impl SpectralEstimate {
    /// Evaluates both estimators on the positive half of `grid` and mirrors
    /// them, so `s0` is exactly odd and `s2` exactly even.
    pub fn compute(
        wstar: &[f64],
        model: &ErrorModel,
        omega: f64,
        h: f64,
        kappa: f64,
        grid: FrequencyGrid,
    ) -> Result<Self> {
        let n = wstar.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        check_omega(omega)?;
        if !(h > 0.0 && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth and kappa must be positive, got h = {h}, kappa = {kappa}"
            )));
        }
        let kernel = SmoothingKernel;
        let nf = n as f64;
        let (pos, _) = grid.positive_half();
        let mut s0_pos = Vec::with_capacity(pos.len());
        let mut s2_pos = Vec::with_capacity(pos.len());
        for &t in pos {
            let k = kernel.cf(h * t);
            let in_s2 = t <= kappa;
            if k == 0.0 && !in_s2 {
                s0_pos.push(0.0);
                s2_pos.push(0.0);
                continue;
            }
            let psi = error_cf_checked(model, t, omega)?;
            let (s, q) = sin_sums(t, wstar);
            s0_pos.push(k * s / (nf * psi));
            s2_pos.push(if in_s2 {
                ((s * s - q) / (nf * (nf - 1.0) * psi * psi)).max(0.0)
            } else {
                0.0
            });
        }
        let mut s0: Vec<f64> = s0_pos.iter().rev().map(|v| -v).collect();
        s0.extend_from_slice(&s0_pos);
        let mut s2: Vec<f64> = s2_pos.iter().rev().copied().collect();
        s2.extend_from_slice(&s2_pos);
        Ok(SpectralEstimate {
            grid,
            s0,
            s2,
            h,
            omega,
            kappa,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn normal1() -> ErrorModel {
        ErrorModel::normal(1.0).unwrap()
    }

    #[test]
    fn kernel_shape() {
        let k = SmoothingKernel;
        assert_eq!(k.cf(0.0), 1.0);
        assert_eq!(k.cf(1.0), 0.0);
        assert_eq!(k.cf(-1.3), 0.0);
        assert_eq!(k.cf(0.4), k.cf(-0.4));
        assert_abs_diff_eq!(k.cf(0.5), 0.421_875, epsilon = 1e-15);
    }

    #[test]
    fn empirical_estimator_examples() {
        let m = normal1();
        assert_eq!(s0_empirical(0.0, &[0.3, 1.2, -2.0], &m, 1.0).unwrap(), 0.0);
        for t in [0.1, 0.7, 3.0] {
            assert_eq!(s0_empirical(t, &[1.3, -1.3], &m, 1.0).unwrap(), 0.0);
        }
        let v = s0_empirical(1.0, &[1.0], &m, 1.0).unwrap();
        assert_abs_diff_eq!(v, 1f64.sin() / (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 1.387_362, epsilon = 5e-4);
    }

    #[test]
    fn empirical_estimator_degenerates_when_cf_underflows() {
        let m = ErrorModel::normal(1.0).unwrap();
        assert!(matches!(
            s0_empirical(60.0, &[1.0], &m, 1.0),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn smoothed_estimator_examples() {
        let m = normal1();
        let k = SmoothingKernel;
        assert_eq!(s0_smoothed(2.5, &[1.0, 0.2], &m, 1.0, 0.5, &k).unwrap(), 0.0);
        let v = s0_smoothed(1.0, &[1.0], &m, 1.0, 0.5, &k).unwrap();
        assert_abs_diff_eq!(v, 0.75f64.powi(3) * 1f64.sin() / (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.585_293, epsilon = 5e-4);
        let emp = s0_empirical(0.8, &[1.0, 2.0], &m, 1.0).unwrap();
        let tiny = s0_smoothed(0.8, &[1.0, 2.0], &m, 1.0, 1e-6, &k).unwrap();
        assert_abs_diff_eq!(tiny, emp, epsilon = 1e-10);
    }

    #[test]
    fn s2_examples() {
        let m = normal1();
        assert_eq!(s2_hat(4.5, &[1.0, 2.0], &m, 1.0, 4.0).unwrap(), 0.0);
        assert_eq!(s2_hat(1.0, &[0.7, -0.7], &m, 1.0, 4.0).unwrap(), 0.0);
        let v = s2_hat(1.0, &[1.0, 2.0], &m, 1.0, 4.0).unwrap();
        let expected = 1f64.sin() * 2f64.sin() * std::f64::consts::E;
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 2.080_083, epsilon = 5e-4);
        assert!(matches!(
            s2_hat(1.0, &[1.0], &m, 1.0, 4.0),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn s2_linear_identity_matches_double_sum() {
        let data = [0.3, -1.1, 2.4, 0.05, 1.7, -0.4];
        let m = ErrorModel::laplace(0.3).unwrap();
        for t in [0.2f64, 1.1, 2.9] {
            let mut dbl = 0.0f64;
            for (j, a) in data.iter().enumerate() {
                for (k, b) in data.iter().enumerate() {
                    if j != k {
                        dbl += (t * a).sin() * (t * b).sin();
                    }
                }
            }
            let n = data.len() as f64;
            let psi = m.cf(t / 1.3);
            let literal = (dbl / (n * (n - 1.0) * psi * psi)).max(0.0);
            assert_abs_diff_eq!(s2_hat(t, &data, &m, 1.3, 4.0).unwrap(), literal, epsilon = 1e-12);
        }
    }

    #[test]
    fn phase_examples() {
        let p = phase_empirical(0.0, &[0.4, 3.0]).unwrap();
        assert_eq!(p, Complex64::new(1.0, 0.0));
        let p = phase_empirical(0.9, &[0.5, -0.5, 1.5, -1.5]).unwrap();
        assert_abs_diff_eq!(p.im, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.re.abs(), 1.0, epsilon = 1e-15);
        // cos(pi/2) = 0 to rounding: |cf| ~ 6e-17
        let w = [1.0];
        assert!(phase_empirical(1.0, &w).is_ok());
        let err = phase_empirical(std::f64::consts::PI, &[0.5, -0.5]);
        assert!(matches!(err, Err(Error::PhaseUndefined { .. })));
    }

    #[test]
    fn quadrature_examples() {
        let g = FrequencyGrid::gauss_legendre(1.0, 64).unwrap();
        assert_abs_diff_eq!(quad_integrate(|_| 1.0, &g).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(quad_integrate(|t| t, &g).unwrap(), 0.0, epsilon = 1e-12);
        let g = FrequencyGrid::gauss_legendre(8.0, DEFAULT_GRID_NODES).unwrap();
        let v = quad_integrate(|t| (-0.5 * t * t).exp(), &g).unwrap();
        assert_abs_diff_eq!(v, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-8);
        assert!(quad_integrate(|t| if t > 0.5 { f64::NAN } else { 0.0 }, &g).is_err());
    }

    #[test]
    fn grids_are_mirrored() {
        for g in [
            FrequencyGrid::gauss_legendre(3.0, 128).unwrap(),
            FrequencyGrid::composite(5.0, 7, 16).unwrap(),
            FrequencyGrid::adaptive(50.0, 9.0).unwrap(),
        ] {
            let n = g.len();
            for i in 0..n {
                assert_eq!(g.nodes()[i], -g.nodes()[n - 1 - i]);
                assert_eq!(g.weights()[i], g.weights()[n - 1 - i]);
            }
            assert!(g.positive_half().0.iter().all(|&t| t > 0.0));
            assert!(g.weights().iter().all(|&w| w > 0.0));
            assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 2.0 * g.t_max(), epsilon = 1e-9);
        }
        assert!(FrequencyGrid::gauss_legendre(1.0, 7).is_err());
    }

    #[test]
    fn spectral_estimate_matches_pointwise_estimators() {
        let data = [0.3, -1.1, 2.4, 0.05, 1.7, -0.4, 0.9];
        let m = ErrorModel::normal(0.2).unwrap();
        let grid = FrequencyGrid::gauss_legendre(1.0 / 0.4, 32).unwrap();
        let est = SpectralEstimate::compute(&data, &m, 0.9, 0.4, 2.0, grid).unwrap();
        for (i, &t) in est.grid.nodes().iter().enumerate() {
            let s0 = s0_smoothed(t, &data, &m, 0.9, 0.4, &SmoothingKernel).unwrap();
            let s2 = s2_hat(t, &data, &m, 0.9, 2.0).unwrap();
            assert_abs_diff_eq!(est.s0[i], s0, epsilon = 1e-13);
            assert_abs_diff_eq!(est.s2[i], s2, epsilon = 1e-13);
            assert!(est.s2[i] >= 0.0);
            if t.abs() > 2.0 {
                assert_eq!(est.s2[i], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn smoothed_estimator_is_exactly_odd(
            data in proptest::collection::vec(-5.0f64..5.0, 2..40),
            t in 0.0f64..6.0,
            h in 0.05f64..1.5,
            omega in 0.3f64..3.0,
        ) {
            let m = ErrorModel::laplace(0.4).unwrap();
            let k = SmoothingKernel;
            let a = s0_smoothed(t, &data, &m, omega, h, &k).unwrap();
            let b = s0_smoothed(-t, &data, &m, omega, h, &k).unwrap();
            prop_assert_eq!(a, -b);
        }
    }
}
