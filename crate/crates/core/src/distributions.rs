//! Symmetric base densities and measurement-error laws.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::{Error, Result};

/// Highest even-moment index `k` (moment `2k`) tabulated for the base and
/// error laws. The GMM covariance with five moment conditions needs moments
/// up to order 20.
pub const MAX_MOMENT_INDEX: usize = 10;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `(2k-1)!!`, with `(-1)!! = 1`.
pub fn double_factorial_odd(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, j| acc * (2 * j - 1) as f64)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, j| acc * j as f64)
}

/// Binomial coefficient as a float; exact for the small arguments used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// The known symmetric component `f0` of the skew-symmetric model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetricBase {
    #[default]
    StandardNormal,
}

impl SymmetricBase {
    pub fn pdf(&self, z: f64) -> f64 {
        match self {
            SymmetricBase::StandardNormal => normal_pdf(z),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            SymmetricBase::StandardNormal => normal_cdf(z),
        }
    }

    /// Characteristic function `c0(t)`; real because `f0` is symmetric.
    pub fn cf(&self, t: f64) -> f64 {
        match self {
            SymmetricBase::StandardNormal => (-0.5 * t * t).exp(),
        }
    }

    /// `E[Z0^(2j)]`.
    pub fn even_moment(&self, j: usize) -> Result<f64> {
        if j > MAX_MOMENT_INDEX {
            return Err(Error::UnsupportedOrder {
                order: j,
                max: MAX_MOMENT_INDEX,
            });
        }
        Ok(match self {
            SymmetricBase::StandardNormal => double_factorial_odd(j),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SymmetricBase::StandardNormal => rng.sample(StandardNormal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorFamily {
    Normal,
    Laplace,
}

impl std::str::FromStr for ErrorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "n" | "gaussian" => Ok(ErrorFamily::Normal),
            "laplace" | "l" => Ok(ErrorFamily::Laplace),
            other => Err(Error::Config(format!(
                "unknown error family '{other}' (expected normal or laplace)"
            ))),
        }
    }
}

impl std::fmt::Display for ErrorFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrorFamily::Normal => f.write_str("normal"),
            ErrorFamily::Laplace => f.write_str("laplace"),
        }
    }
}

/// Known law of the additive measurement error `U`, parameterized by its
/// variance for both families. A zero variance is accepted and means no
/// measurement error at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub family: ErrorFamily,
    pub variance: f64,
}

impl ErrorModel {
    pub fn new(family: ErrorFamily, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "error variance must be finite and non-negative, got {variance}"
            )));
        }
        Ok(ErrorModel { family, variance })
    }

    pub fn normal(variance: f64) -> Result<Self> {
        Self::new(ErrorFamily::Normal, variance)
    }

    pub fn laplace(variance: f64) -> Result<Self> {
        Self::new(ErrorFamily::Laplace, variance)
    }

    pub fn is_degenerate(&self) -> bool {
        self.variance == 0.0
    }

    /// Law of `c * U`.
    pub fn scaled(&self, c: f64) -> Self {
        ErrorModel {
            family: self.family,
            variance: self.variance * c * c,
        }
    }

    /// Laplace scale `b` with `Var = 2 b^2`.
    fn laplace_scale(&self) -> f64 {
        (0.5 * self.variance).sqrt()
    }

    pub fn pdf(&self, u: f64) -> f64 {
        if self.is_degenerate() {
            return if u == 0.0 { f64::INFINITY } else { 0.0 };
        }
        match self.family {
            ErrorFamily::Normal => {
                let s = self.variance.sqrt();
                normal_pdf(u / s) / s
            }
            ErrorFamily::Laplace => {
                let b = self.laplace_scale();
                (-u.abs() / b).exp() / (2.0 * b)
            }
        }
    }

    /// Characteristic function `psi_U(t)`; real, even and strictly positive.
    #[inline]
    pub fn cf(&self, t: f64) -> f64 {
        match self.family {
            ErrorFamily::Normal => (-0.5 * self.variance * t * t).exp(),
            ErrorFamily::Laplace => 1.0 / (1.0 + 0.5 * self.variance * t * t),
        }
    }

    /// `E[U^(2k)]`.
    pub fn even_moment(&self, k: usize) -> Result<f64> {
        if k > MAX_MOMENT_INDEX {
            return Err(Error::UnsupportedOrder {
                order: k,
                max: MAX_MOMENT_INDEX,
            });
        }
        Ok(match self.family {
            ErrorFamily::Normal => self.variance.powi(k as i32) * double_factorial_odd(k),
            ErrorFamily::Laplace => factorial(2 * k) * (0.5 * self.variance).powi(k as i32),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        match self.family {
            ErrorFamily::Normal => self.variance.sqrt() * rng.sample::<f64, _>(StandardNormal),
            ErrorFamily::Laplace => {
                let e1: f64 = rng.sample(Exp1);
                let e2: f64 = rng.sample(Exp1);
                self.laplace_scale() * (e1 - e2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    // Inverse Fourier transform of a real, even characteristic function.
    fn invert_real_cf<F: Fn(f64) -> f64>(cf: F, x: f64, t_max: f64) -> f64 {
        crate::quadrature::integrate_composite(0.0, t_max, 64, 16, |t| (t * x).cos() * cf(t)) / PI
    }

    #[test]
    fn base_cf_closed_form() {
        let base = SymmetricBase::StandardNormal;
        assert_eq!(base.cf(0.0), 1.0);
        assert_abs_diff_eq!(base.cf(1.0), 0.606_531, epsilon = 1e-6);
        assert_abs_diff_eq!(base.cf(2.0), 0.135_335, epsilon = 1e-6);
        assert_eq!(base.cf(1.7), base.cf(-1.7));
    }

    #[test]
    fn error_cf_closed_form() {
        assert_eq!(ErrorModel::normal(1.0).unwrap().cf(0.0), 1.0);
        assert_abs_diff_eq!(ErrorModel::laplace(2.0).unwrap().cf(1.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            ErrorModel::normal(0.2).unwrap().cf(2.0),
            0.670_320,
            epsilon = 1e-6
        );
    }

    #[test]
    fn even_moments() {
        assert_eq!(ErrorModel::normal(1.0).unwrap().even_moment(2).unwrap(), 3.0);
        assert_eq!(ErrorModel::laplace(1.0).unwrap().even_moment(2).unwrap(), 6.0);
        for m in [ErrorModel::normal(0.7).unwrap(), ErrorModel::laplace(0.3).unwrap()] {
            assert_eq!(m.even_moment(0).unwrap(), 1.0);
            assert_abs_diff_eq!(m.even_moment(1).unwrap(), m.variance, epsilon = 1e-15);
        }
        assert!(matches!(
            ErrorModel::normal(1.0).unwrap().even_moment(11),
            Err(Error::UnsupportedOrder { .. })
        ));
        // 19!! and 20! stay finite
        assert_eq!(double_factorial_odd(10), 654_729_075.0);
        assert!(ErrorModel::laplace(4.0).unwrap().even_moment(10).unwrap().is_finite());
    }

    #[test]
    fn base_moments() {
        let base = SymmetricBase::StandardNormal;
        assert_eq!(base.even_moment(1).unwrap(), 1.0);
        assert_eq!(base.even_moment(2).unwrap(), 3.0);
        assert_eq!(base.even_moment(3).unwrap(), 15.0);
        assert!(base.even_moment(11).is_err());
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(ErrorModel::normal(-0.1).is_err());
        assert!(ErrorModel::laplace(f64::NAN).is_err());
    }

    #[test]
    fn laplace_pdf_integrates_to_one() {
        let m = ErrorModel::laplace(0.5).unwrap();
        let mass = crate::quadrature::integrate_composite(-20.0, 20.0, 400, 16, |u| m.pdf(u));
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn cf_and_pdf_are_a_fourier_pair() {
        let base = SymmetricBase::StandardNormal;
        for i in 0..21 {
            let x = -4.0 + 0.4 * i as f64;
            let inv = invert_real_cf(|t| base.cf(t), x, 12.0);
            assert_abs_diff_eq!(inv, base.pdf(x), epsilon = 1e-6);
        }
    }

    #[test]
    fn family_parsing() {
        assert_eq!("Laplace".parse::<ErrorFamily>().unwrap(), ErrorFamily::Laplace);
        assert!("cauchy".parse::<ErrorFamily>().is_err());
    }

    // Monte Carlo agreement of sampled moments and the empirical cf with the
    // closed forms. Large draws, so one seed per family.
    #[test]
    fn sampled_moments_and_cf_match_closed_forms() {
        let draws = 1_000_000;
        for (i, model) in [ErrorModel::normal(0.8).unwrap(), ErrorModel::laplace(0.8).unwrap()]
            .into_iter()
            .enumerate()
        {
            let mut rng = ChaCha8Rng::seed_from_u64(11 + i as u64);
            let xs: Vec<f64> = (0..draws).map(|_| model.sample(&mut rng)).collect();
            for k in 1..=3 {
                let vals: Vec<f64> = xs.iter().map(|x| x.powi(2 * k as i32)).collect();
                let mean = vals.iter().sum::<f64>() / draws as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
                let se = (var / draws as f64).sqrt();
                let exact = model.even_moment(k).unwrap();
                assert!(
                    (mean - exact).abs() < 3.0 * se,
                    "{:?} k={k}: mc {mean} exact {exact} se {se}",
                    model.family
                );
            }
            for j in 0..100 {
                let t = -3.0 + 6.0 * j as f64 / 99.0;
                let ecf = xs.iter().map(|x| (t * x).cos()).sum::<f64>() / draws as f64;
                assert!((ecf - model.cf(t)).abs() < 0.01);
            }
        }
    }
}
