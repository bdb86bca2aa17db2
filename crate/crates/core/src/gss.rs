//! Generalized skew-symmetric (GSS) models: `X = xi + omega * Z` with `Z`
//! having density `2 f0(z) pi(z)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{normal_cdf, SymmetricBase};
use crate::estimator::DeconvFit;
use crate::quadrature;
use crate::{Error, Result};

/// Probit slope of the strongly skewed simulation model.
pub const PI1_SLOPE: f64 = 9.9625;

/// Half-width, in units of `omega`, of the integration window for model
/// moments and characteristic functions.
pub const MODEL_WINDOW: f64 = 8.0;
const MODEL_PANELS: usize = 32;
const MODEL_ORDER: usize = 16;

/// A skewing function `pi` with `0 <= pi(z) = 1 - pi(-z) <= 1`.
///
/// Every variant is evaluated on `z >= 0` and reflected for negative
/// arguments, so the complement identity holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkewingFunction {
    /// `pi(z) = 1/2`: the symmetric base itself.
    Constant,
    /// `pi(z) = Phi(slope * z)`: the skew-normal family.
    ProbitScaled { slope: f64 },
    /// `pi(z) = Phi(z^3 - 2z)`: a bimodal member.
    ProbitCubic,
    Tabulated(TabulatedSkew),
}

impl SkewingFunction {
    pub fn symmetric() -> Self {
        SkewingFunction::Constant
    }

    pub fn skew_normal(slope: f64) -> Self {
        SkewingFunction::ProbitScaled { slope }
    }

    pub fn bimodal() -> Self {
        SkewingFunction::ProbitCubic
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        if z < 0.0 {
            1.0 - self.eval_nonneg(-z)
        } else {
            self.eval_nonneg(z)
        }
    }

    #[inline]
    fn eval_nonneg(&self, z: f64) -> f64 {
        match self {
            SkewingFunction::Constant => 0.5,
            SkewingFunction::ProbitScaled { slope } => normal_cdf(slope * z),
            SkewingFunction::ProbitCubic => normal_cdf(z * z * z - 2.0 * z),
            SkewingFunction::Tabulated(t) => t.eval_nonneg(z),
        }
    }
}

/// Skewing function tabulated on a uniform grid over `[0, z_max]`, linearly
/// interpolated, and held constant beyond `z_max`. The value at `z = 0` is
/// forced to 1/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedSkew {
    z_max: f64,
    values: Vec<f64>,
}

impl TabulatedSkew {
    pub fn new(z_max: f64, mut values: Vec<f64>) -> Result<Self> {
        if !(z_max > 0.0 && z_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("z_max must be positive, got {z_max}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidParameter(
                "a tabulated skewing function needs at least two grid values".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "skewing function value {v} outside [0, 1]"
            )));
        }
        values[0] = 0.5;
        Ok(TabulatedSkew { z_max, values })
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Grid abscissae matching [`values`](Self::values).
    pub fn grid(&self) -> Vec<f64> {
        quadrature::linspace(0.0, self.z_max, self.values.len())
    }

    #[inline]
    fn eval_nonneg(&self, z: f64) -> f64 {
        let last = self.values.len() - 1;
        if z >= self.z_max {
            return self.values[last];
        }
        let pos = z / self.z_max * last as f64;
        let i = (pos as usize).min(last - 1);
        let frac = pos - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }
}

/// A GSS law for `X = xi + omega * Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GssModel {
    pub base: SymmetricBase,
    pub skew: SkewingFunction,
    pub xi: f64,
    pub omega: f64,
}

impl GssModel {
    pub fn new(skew: SkewingFunction, xi: f64, omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {omega}")));
        }
        if !xi.is_finite() {
            return Err(Error::InvalidParameter(format!("location must be finite, got {xi}")));
        }
        Ok(GssModel {
            base: SymmetricBase::StandardNormal,
            skew,
            xi,
            omega,
        })
    }

    /// Standardized model (`xi = 0`, `omega = 1`).
    pub fn standard(skew: SkewingFunction) -> Self {
        GssModel {
            base: SymmetricBase::StandardNormal,
            skew,
            xi: 0.0,
            omega: 1.0,
        }
    }

    /// Density of the standardized variable `Z`.
    #[inline]
    pub fn pdf_standard(&self, z: f64) -> f64 {
        2.0 * self.base.pdf(z) * self.skew.eval(z)
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        self.pdf_standard((x - self.xi) / self.omega) / self.omega
    }

    /// Draws `Z0 ~ f0` and `V ~ U(0,1)` and keeps `Z0` when `V <= pi(Z0)`,
    /// else `-Z0`. The result has density `2 f0 pi` exactly.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z0 = self.base.sample(rng);
        let v: f64 = rng.random();
        let z = if v <= self.skew.eval(z0) { z0 } else { -z0 };
        self.xi + self.omega * z
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// `n` draws from a generator seeded with `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    /// Quadrature nodes in `x` together with `weight * density` products.
    pub fn quadrature(&self) -> ModelQuadrature {
        let (zs, ws) = quadrature::composite(-MODEL_WINDOW, MODEL_WINDOW, MODEL_PANELS, MODEL_ORDER);
        let mut xs = Vec::with_capacity(zs.len());
        let mut mass = Vec::with_capacity(zs.len());
        for (z, w) in zs.into_iter().zip(ws) {
            xs.push(self.xi + self.omega * z);
            mass.push(w * self.pdf_standard(z));
        }
        ModelQuadrature { xs, mass }
    }

    pub fn moment(&self, k: u32) -> Result<f64> {
        self.quadrature().moment(k)
    }

    pub fn cf(&self, t: f64) -> Result<Complex64> {
        self.quadrature().cf(t)
    }

    pub fn mean(&self) -> Result<f64> {
        self.moment(1)
    }

    pub fn variance(&self) -> Result<f64> {
        let q = self.quadrature();
        let m1 = q.moment(1)?;
        Ok(q.central_moment(2, m1))
    }

    pub fn skewness(&self) -> Result<f64> {
        self.quadrature().skewness()
    }

    /// Imaginary part of the characteristic function of the standardized
    /// variable `Z`, `s0(t) = E[sin(tZ)]`.
    pub fn s0(&self, t: f64) -> f64 {
        // pi(z) - 1/2 is odd, so only z > 0 contributes.
        4.0 * quadrature::integrate_composite(0.0, MODEL_WINDOW, MODEL_PANELS, MODEL_ORDER, |z| {
            (t * z).sin() * self.base.pdf(z) * (self.skew.eval(z) - 0.5)
        })
    }
}

/// Model density pre-multiplied by quadrature weights.
#[derive(Debug, Clone)]
pub struct ModelQuadrature {
    xs: Vec<f64>,
    mass: Vec<f64>,
}

impl ModelQuadrature {
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn moment(&self, k: u32) -> Result<f64> {
        let m = self
            .xs
            .iter()
            .zip(&self.mass)
            .map(|(x, w)| w * x.powi(k as i32))
            .sum::<f64>();
        if m.is_finite() {
            Ok(m)
        } else {
            Err(Error::Quadrature(format!("moment of order {k} is {m}")))
        }
    }

    fn central_moment(&self, k: i32, mean: f64) -> f64 {
        self.xs
            .iter()
            .zip(&self.mass)
            .map(|(x, w)| w * (x - mean).powi(k))
            .sum()
    }

    pub fn skewness(&self) -> Result<f64> {
        let m1 = self.moment(1)?;
        let m2 = self.central_moment(2, m1);
        let m3 = self.central_moment(3, m1);
        if !(m2 > 0.0) {
            return Err(Error::Quadrature(format!("implied variance {m2} is not positive")));
        }
        Ok(m3 / m2.powf(1.5))
    }

    pub fn cf(&self, t: f64) -> Result<Complex64> {
        let (mut re, mut im) = (0.0, 0.0);
        for (x, w) in self.xs.iter().zip(&self.mass) {
            let (s, c) = (t * x).sin_cos();
            re += w * c;
            im += w * s;
        }
        let v = Complex64::new(re, im);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Quadrature(format!("characteristic function at t = {t} is {v}")))
        }
    }
}

/// `k`-th raw moment of a fitted density.
pub fn implied_moments(fit: &DeconvFit, k: u32) -> Result<f64> {
    fit.model.moment(k)
}

/// Fourier transform of a fitted density at `t`.
pub fn implied_cf(fit: &DeconvFit, t: f64) -> Result<Complex64> {
    fit.model.cf(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::normal_pdf;
    use approx::assert_abs_diff_eq;

    fn pi1() -> GssModel {
        GssModel::standard(SkewingFunction::skew_normal(PI1_SLOPE))
    }

    #[test]
    fn pdf_values() {
        let m0 = GssModel::standard(SkewingFunction::symmetric());
        assert_abs_diff_eq!(m0.pdf(0.0), 0.398_942, epsilon = 1e-6);
        assert_abs_diff_eq!(pi1().pdf(0.0), 0.398_942, epsilon = 1e-6);
        let m2 = GssModel::standard(SkewingFunction::bimodal());
        let expected = 2.0 * normal_pdf(1.0) * normal_cdf(-1.0);
        assert_abs_diff_eq!(m2.pdf(1.0), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(m2.pdf(1.0), 0.076_780, epsilon = 1e-6);
    }

    #[test]
    fn complement_identity_on_paired_points() {
        let tab = TabulatedSkew::new(6.0, (0..101).map(|i| (i as f64 / 100.0).min(1.0)).collect())
            .unwrap();
        for skew in [
            SkewingFunction::symmetric(),
            SkewingFunction::skew_normal(PI1_SLOPE),
            SkewingFunction::bimodal(),
            SkewingFunction::Tabulated(tab),
        ] {
            for i in 0..200 {
                let z = -7.0 + 0.07 * i as f64;
                let s = skew.eval(z) + skew.eval(-z);
                assert!((s - 1.0).abs() < 1e-12, "{skew:?} at {z}");
                assert!((0.0..=1.0).contains(&skew.eval(z)));
            }
        }
    }

    #[test]
    fn tabulated_interpolates_and_clamps() {
        let tab = TabulatedSkew::new(2.0, vec![0.9, 0.6, 1.0]).unwrap();
        assert_eq!(tab.values()[0], 0.5);
        let s = SkewingFunction::Tabulated(tab);
        assert_abs_diff_eq!(s.eval(0.5), 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(s.eval(1.5), 0.8, epsilon = 1e-15);
        assert_eq!(s.eval(5.0), 1.0);
        assert_eq!(s.eval(-5.0), 0.0);
        assert!(TabulatedSkew::new(2.0, vec![0.5, 1.2]).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        for skew in [
            SkewingFunction::symmetric(),
            SkewingFunction::skew_normal(PI1_SLOPE),
            SkewingFunction::bimodal(),
        ] {
            let m = GssModel::new(skew, 0.3, 1.7).unwrap();
            assert_abs_diff_eq!(m.quadrature().total_mass(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn moments_of_reference_models() {
        let m0 = GssModel::standard(SkewingFunction::symmetric());
        assert_abs_diff_eq!(m0.moment(1).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m0.moment(2).unwrap(), 1.0, epsilon = 1e-10);
        let delta = PI1_SLOPE / (1.0 + PI1_SLOPE * PI1_SLOPE).sqrt();
        let mean = delta * (2.0 / std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(pi1().moment(1).unwrap(), mean, epsilon = 1e-9);
        assert_abs_diff_eq!(pi1().moment(1).unwrap(), 0.7939, epsilon = 1e-4);
    }

    #[test]
    fn cf_of_symmetric_model_is_gaussian() {
        let m0 = GssModel::standard(SkewingFunction::symmetric());
        let c = m0.cf(1.0).unwrap();
        assert_abs_diff_eq!(c.re, (-0.5f64).exp(), epsilon = 1e-10);
        assert_abs_diff_eq!(c.im, 0.0, epsilon = 1e-12);
        let c0 = pi1().cf(0.0).unwrap();
        assert_abs_diff_eq!(c0.re, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c0.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn s0_matches_imaginary_part_of_cf() {
        let m = GssModel::standard(SkewingFunction::bimodal());
        for t in [0.3, 1.0, 2.2] {
            assert_abs_diff_eq!(m.s0(t), m.cf(t).unwrap().im, epsilon = 1e-10);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = pi1().sample(100, 9);
        let b = pi1().sample(100, 9);
        assert_eq!(a, b);
        assert_ne!(a, pi1().sample(100, 10));
    }

    #[test]
    fn invalid_scale_rejected() {
        assert!(GssModel::new(SkewingFunction::symmetric(), 0.0, 0.0).is_err());
        assert!(GssModel::new(SkewingFunction::symmetric(), f64::NAN, 1.0).is_err());
    }
}
