//! Choosing among GMM solutions, and the end-to-end fitting pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::bandwidth::{select_bandwidth, BandwidthChoice, BandwidthMethod, BandwidthSearch};
use crate::distributions::ErrorModel;
use crate::estimator::{self, DeconvFit, SkewEstimator, ZGrid};
use crate::gmm::{default_starts, gmm_solve, GmmSolution, MomentSpec, DEFAULT_MOMENTS};
use crate::gss::GssModel;
use crate::quadrature::{linspace, trapezoid};
use crate::spectral::{empirical_cf, phase_empirical, DEFAULT_KAPPA};
use crate::stats::{sample_skewness, sample_variance};
use crate::{Error, Result};

pub const WEIGHT_EXPONENT: i32 = 3;
pub const PHASE_NODES: usize = 201;
pub const T_STAR_CAP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Skewness,
    Phase,
    Random,
    MinIse,
}

impl FromStr for SelectionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "skewness" | "skw" => Ok(SelectionMethod::Skewness),
            "phase" | "phs" => Ok(SelectionMethod::Phase),
            "random" | "rnd" => Ok(SelectionMethod::Random),
            "minise" | "min" => Ok(SelectionMethod::MinIse),
            other => Err(Error::Config(format!(
                "unknown selection method '{other}' (expected skewness, phase, random or minise)"
            ))),
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Skewness => "skewness",
            SelectionMethod::Phase => "phase",
            SelectionMethod::Random => "random",
            SelectionMethod::MinIse => "minise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRecord {
    pub criterion: SelectionMethod,
    pub scores: Vec<f64>,
    pub chosen: usize,
    pub t_star: Option<f64>,
    pub weight_exponent: Option<i32>,
}

impl SelectionRecord {
    fn from_scores(criterion: SelectionMethod, scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Estimation("no candidates to select from".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Estimation(format!("selection score is {bad}")));
        }
        Ok(SelectionRecord {
            criterion,
            chosen: argmin(&scores),
            scores,
            t_star: None,
            weight_exponent: None,
        })
    }
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |b, (i, &x)| if x < v[b] { i } else { b })
}

/// Skewness of `X` implied by the sample skewness of `W = X + U`.
pub fn empirical_skewness_x(w: &[f64], error_variance: f64) -> Result<f64> {
    let s2 = sample_variance(w);
    if s2 <= error_variance {
        return Err(Error::NegativeSignalVariance {
            observed: s2,
            error: error_variance,
        });
    }
    Ok(s2.powf(1.5) / (s2 - error_variance).powf(1.5) * sample_skewness(w)?)
}

/// Standardized third central moment of a fitted density.
pub fn implied_skewness(fit: &DeconvFit) -> Result<f64> {
    model_skewness(&fit.model)
}

fn model_skewness(model: &GssModel) -> Result<f64> {
    let q = model.quadrature();
    let m1 = q.moment(1)?;
    let m2 = q.moment(2)?;
    let m3 = q.moment(3)?;
    let var = m2 - m1 * m1;
    if !(var > 0.0) {
        return Err(Error::Estimation(format!("implied variance is {var}")));
    }
    Ok((m3 - 3.0 * m2 * m1 + 2.0 * m1.powi(3)) / var.powf(1.5))
}

pub fn skewness_select(candidates: &[DeconvFit], w: &[f64], error_variance: f64) -> Result<SelectionRecord> {
    let target = empirical_skewness_x(w, error_variance)?;
    let scores = candidates
        .iter()
        .map(|f| implied_skewness(f).map(|g| (target - g).abs()))
        .collect::<Result<Vec<_>>>()?;
    SelectionRecord::from_scores(SelectionMethod::Skewness, scores)
}

/// Default phase window: the grid frequency just before the empirical cf
/// modulus first drops below `n^{-1/4}`, capped at 3.
pub fn default_t_star(w: &[f64]) -> Result<f64> {
    if w.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: w.len(),
        });
    }
    let sd = sample_variance(w).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Estimation("data have zero variance".into()));
    }
    let threshold = (w.len() as f64).powf(-0.25);
    let step = 0.01 / sd;
    let mut t_star = step;
    let mut t = step;
    while t <= T_STAR_CAP {
        if empirical_cf(t, w).norm() < threshold {
            break;
        }
        t_star = t;
        t += step;
    }
    Ok(t_star.min(T_STAR_CAP))
}

/// Weighted L1 distance between empirical and fitted phase functions on
/// `[-t_star, t_star]`.
pub fn phase_distance(fit: &DeconvFit, w: &[f64], t_star: f64) -> Result<f64> {
    phase_distance_model(&fit.model, w, t_star)
}

pub fn phase_distance_model(model: &GssModel, w: &[f64], t_star: f64) -> Result<f64> {
    if !(t_star > 0.0 && t_star.is_finite()) {
        return Err(Error::InvalidParameter(format!("t* must be positive, got {t_star}")));
    }
    let q = model.quadrature();
    let ts = linspace(-t_star, t_star, PHASE_NODES);
    let mut vals = Vec::with_capacity(ts.len());
    for &t in &ts {
        let rho = phase_empirical(t, w)?;
        let c = q.cf(t)?;
        let m = c.norm();
        if m < crate::spectral::PHASE_FLOOR {
            return Err(Error::PhaseUndefined { t, modulus: m });
        }
        let weight = (1.0 - (t / t_star).powi(2)).powi(WEIGHT_EXPONENT);
        vals.push((rho - c / m).norm() * weight);
    }
    Ok(trapezoid(&ts, &vals))
}

pub fn phase_select(candidates: &[DeconvFit], w: &[f64], t_star: f64) -> Result<SelectionRecord> {
    let mut t = t_star;
    for _ in 0..30 {
        let scores: Result<Vec<f64>> = candidates.iter().map(|f| phase_distance(f, w, t)).collect();
        match scores {
            Ok(s) => {
                let mut rec = SelectionRecord::from_scores(SelectionMethod::Phase, s)?;
                rec.t_star = Some(t);
                rec.weight_exponent = Some(WEIGHT_EXPONENT);
                return Ok(rec);
            }
            Err(Error::PhaseUndefined { t: at, .. }) => {
                let shrunk = 0.8 * t;
                log::warn!("phase undefined at t = {at}; shrinking t* from {t} to {shrunk}");
                t = shrunk;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Estimation("phase window collapsed".into()))
}

pub fn random_select(n_candidates: usize, seed: u64) -> Result<SelectionRecord> {
    if n_candidates == 0 {
        return Err(Error::Estimation("no candidates to select from".into()));
    }
    let pick = ChaCha8Rng::seed_from_u64(seed).random_range(0..n_candidates);
    let scores = (0..n_candidates).map(|i| if i == pick { 0.0 } else { 1.0 }).collect();
    SelectionRecord::from_scores(SelectionMethod::Random, scores)
}

pub fn min_ise_select(candidates: &[DeconvFit], truth: &GssModel) -> Result<SelectionRecord> {
    let scores = candidates
        .iter()
        .map(|f| estimator::ise(f, truth))
        .collect::<Result<Vec<_>>>()?;
    SelectionRecord::from_scores(SelectionMethod::MinIse, scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub moments: usize,
    pub bandwidth: BandwidthMethod,
    pub selection: SelectionMethod,
    pub kappa: f64,
    /// `None` selects the data-driven default.
    pub t_star: Option<f64>,
    pub search: BandwidthSearch,
    pub zgrid: ZGrid,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            moments: DEFAULT_MOMENTS,
            bandwidth: BandwidthMethod::Mise,
            selection: SelectionMethod::Phase,
            kappa: DEFAULT_KAPPA,
            t_star: None,
            search: BandwidthSearch::default(),
            zgrid: ZGrid::default(),
            seed: 0,
        }
    }
}

/// One GMM solution carried through bandwidth selection and fitting.
#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub solution: GmmSolution,
    pub bandwidth: BandwidthChoice,
    pub fit: DeconvFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub solutions: Vec<GmmSolution>,
    pub candidates: Vec<Candidate>,
    pub fit: DeconvFit,
}

/// Standardizes the data at each solution, selects a bandwidth and fits
/// the skewing function. Candidates whose fit fails are dropped.
pub fn fit_candidates(
    w: &[f64],
    model: &ErrorModel,
    solutions: &[GmmSolution],
    method: BandwidthMethod,
    config: &PipelineConfig,
) -> Result<Vec<Candidate>> {
    let mut out = Vec::with_capacity(solutions.len());
    let mut last_err = None;
    for s in solutions {
        let attempt = || -> Result<Candidate> {
            let wstar = estimator::standardize(w, s.xi, s.omega);
            let bw = select_bandwidth(method, &wstar, model, s.omega, config.kappa, &config.search)?;
            let est = SkewEstimator::new(&wstar, model, s.omega, bw.h)?;
            let fit = estimator::fit_from_estimator(&est, s.xi, s.omega, bw.h, &config.zgrid)?;
            Ok(Candidate {
                solution: *s,
                bandwidth: bw,
                fit,
            })
        };
        match attempt() {
            Ok(c) => out.push(c),
            Err(e) => {
                log::warn!("dropping solution ({}, {}): {e}", s.xi, s.omega);
                last_err = Some(e);
            }
        }
    }
    if out.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Estimation("no GMM solutions".into())));
    }
    Ok(out)
}

/// Applies a selection rule to fitted candidates.
pub fn select(
    candidates: &[Candidate],
    w: &[f64],
    model: &ErrorModel,
    method: SelectionMethod,
    t_star: Option<f64>,
    seed: u64,
    truth: Option<&GssModel>,
) -> Result<SelectionRecord> {
    let fits: Vec<DeconvFit> = candidates.iter().map(|c| c.fit.clone()).collect();
    if fits.len() == 1 && method != SelectionMethod::MinIse {
        return SelectionRecord::from_scores(method, vec![0.0]);
    }
    match method {
        SelectionMethod::Skewness => skewness_select(&fits, w, model.variance),
        SelectionMethod::Phase => {
            let t = match t_star {
                Some(t) => t,
                None => default_t_star(w)?,
            };
            phase_select(&fits, w, t)
        }
        SelectionMethod::Random => random_select(fits.len(), seed),
        SelectionMethod::MinIse => match truth {
            Some(truth) => min_ise_select(&fits, truth),
            None => Err(Error::Config("minimum-ISE selection needs a known truth".into())),
        },
    }
}

/// Moment estimation, per-solution bandwidth selection and fitting, then
/// selection of a single fit.
pub fn run_pipeline(
    w: &[f64],
    model: &ErrorModel,
    config: &PipelineConfig,
    truth: Option<&GssModel>,
) -> Result<PipelineOutcome> {
    if w.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: w.len(),
        });
    }
    if !(config.kappa > 0.0) {
        return Err(Error::Config(format!("kappa must be positive, got {}", config.kappa)));
    }
    config.search.validate()?;
    let spec = MomentSpec::new(config.moments, *model)?;
    let solutions = gmm_solve(w, &spec, &default_starts(w, model.variance))?;
    let candidates = fit_candidates(w, model, &solutions, config.bandwidth, config)?;
    let record = select(&candidates, w, model, config.selection, config.t_star, config.seed, truth)?;
    let mut fit = candidates[record.chosen].fit.clone();
    fit.selection = Some(record);
    Ok(PipelineOutcome {
        solutions,
        candidates,
        fit,
    })
}
