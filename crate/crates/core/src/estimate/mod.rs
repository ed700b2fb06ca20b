//! Maximum likelihood driver shared by the three models, starting values for
//! the stochastic volatility parameters, and the SVARE fit.

pub mod bfgs;
pub mod transform;

use serde::{Deserialize, Serialize};

use crate::baseline::{fit_are, AreParams, FeParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::quadrature::{
    build_grid_with, default_point_counts_with, QuadGrid, DEFAULT_WIDTH_MULTIPLIER,
};
use crate::svcore::{self, StateEstimates, SvareParams};

pub use bfgs::{BfgsOptions, Status};
pub use transform::{Link, Report, TransformedParams};

/// Correction for `E(log eps^2) = -1.27` when `eps ~ N(0, 1)`.
pub const LOG_CHI2_MEAN_CORRECTION: f64 = 1.27;
/// Lower bound for standard-deviation parameters during optimization.
pub const SD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Fe,
    Are,
    Svare,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Fe => "fe",
            Model::Are => "are",
            Model::Svare => "svare",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fe" => Ok(Model::Fe),
            "are" => Ok(Model::Are),
            "svare" => Ok(Model::Svare),
            _ => Err(Error::InvalidArgument(format!("unknown model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Fe(FeParams),
    Are(AreParams),
    Svare(SvareParams),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamEstimate {
    pub name: String,
    pub value: f64,
    /// `NaN` when the Hessian was not positive definite.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub status: Status,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub params: ModelParams,
    /// Reported parameters (variances for scale parameters) with standard errors.
    pub estimates: Vec<ParamEstimate>,
    pub se_available: bool,
    pub loglik: f64,
    pub loglik_start: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub convergence: Convergence,
    /// Latent-state summaries; `None` for the fixed-effects model.
    pub states: Option<StateEstimates>,
    /// Raw level-1 residuals per period.
    pub level1_residuals: Vec<Vec<f64>>,
    pub times: Vec<String>,
    /// Grid point counts used by an SVARE fit.
    pub grid_points: Option<(usize, usize)>,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.convergence.status.converged()
    }

    pub fn estimate(&self, name: &str) -> Option<&ParamEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    /// Period intercepts `beta0_t`: `beta0 + u_t` (smoothed) for the random-effects
    /// models, the time dummies for fixed effects.
    pub fn period_intercepts(&self) -> Vec<f64> {
        match &self.params {
            ModelParams::Fe(p) => p.beta0_t.clone(),
            ModelParams::Are(AreParams { beta0, .. })
            | ModelParams::Svare(SvareParams { beta0, .. }) => self
                .states
                .as_ref()
                .map(|s| s.smoothed_u.iter().map(|u| beta0 + u).collect())
                .unwrap_or_default(),
        }
    }

    pub fn slopes(&self) -> &[f64] {
        match &self.params {
            ModelParams::Fe(p) => &p.beta,
            ModelParams::Are(p) => &p.beta,
            ModelParams::Svare(p) => &p.beta,
        }
    }

    /// Intercept for the period after the sample: `beta0` plus the one-step-ahead
    /// random effect, or the last time dummy for fixed effects.
    pub fn forecast_intercept(&self) -> Result<f64> {
        match &self.params {
            ModelParams::Fe(p) => p
                .beta0_t
                .last()
                .copied()
                .ok_or_else(|| Error::Dataset("no time periods".into())),
            ModelParams::Are(AreParams { beta0, .. })
            | ModelParams::Svare(SvareParams { beta0, .. }) => {
                let s = self
                    .states
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("fit has no latent states".into()))?;
                Ok(beta0 + s.predicted_u[s.predicted_u.len() - 1])
            }
        }
    }

    /// Predicted log prices of new items sold in an observed period.
    pub fn predict(&self, period: &str, x: &nalgebra::DMatrix<f64>) -> Result<Vec<f64>> {
        let t = self.times.iter().position(|l| l == period).ok_or_else(|| {
            Error::InvalidArgument(format!("period '{period}' is not in the fitted sample"))
        })?;
        let intercepts = self.period_intercepts();
        svcore::predict_prices(x, 0.0, intercepts[t], self.slopes())
    }

    /// Forecast log prices of items sold in the period after the sample.
    pub fn forecast(&self, x: &nalgebra::DMatrix<f64>) -> Result<Vec<f64>> {
        svcore::predict_prices(x, 0.0, self.forecast_intercept()?, self.slopes())
    }
}

/// `(aic, bic)` for a log-likelihood, parameter count and sample size.
pub fn information_criteria(loglik: f64, n_params: usize, n_obs: usize) -> (f64, f64) {
    let k = n_params as f64;
    (
        -2.0 * loglik + 2.0 * k,
        -2.0 * loglik + k * (n_obs as f64).ln(),
    )
}

pub(crate) type Objective<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// Unconstrained maximum likelihood problem: negative log-likelihood in `z`
/// plus how each coordinate maps to its reported parameter.
pub(crate) struct MlProblem<'a> {
    pub names: Vec<String>,
    pub links: Vec<Link>,
    pub reports: Vec<Report>,
    pub negloglik: Objective<'a>,
}

pub(crate) struct MlOutcome {
    pub z: Vec<f64>,
    pub loglik_start: f64,
    pub estimates: Vec<ParamEstimate>,
    pub se_available: bool,
    pub convergence: Convergence,
}

/// Relative step for the Hessian used for standard errors.
const HESSIAN_STEP: f64 = 1e-4;

impl MlProblem<'_> {
    pub fn reported(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.links)
            .zip(&self.reports)
            .map(|((&z, l), r)| r.apply(l.apply(z)))
            .collect()
    }

    /// Standard errors of the reported parameters by the delta method from the
    /// inverse Hessian in `z`.
    pub fn standard_errors(&self, z: &[f64]) -> Option<Vec<f64>> {
        let h = bfgs::hessian(&self.negloglik, z, HESSIAN_STEP);
        if h.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let cov = h.cholesky()?.inverse();
        let ses = z
            .iter()
            .enumerate()
            .map(|(i, &zi)| {
                let c = self.links[i].apply(zi);
                let jac = self.reports[i].derivative(c) * self.links[i].derivative(zi);
                jac.abs() * cov[(i, i)].max(0.0).sqrt()
            })
            .collect::<Vec<_>>();
        ses.iter().all(|s| s.is_finite()).then_some(ses)
    }

    pub fn solve(&self, z0: &[f64], opts: &BfgsOptions) -> MlOutcome {
        let m = bfgs::minimize(&self.negloglik, z0, opts);
        let values = self.reported(&m.x);
        let ses = self.standard_errors(&m.x);
        let se_available = ses.is_some();
        if !se_available {
            log::warn!(
                "Hessian is not positive definite at the optimum; standard errors unavailable"
            );
        }
        let ses = ses.unwrap_or_else(|| vec![f64::NAN; values.len()]);
        let estimates = self
            .names
            .iter()
            .zip(values)
            .zip(ses)
            .map(|((name, value), se)| ParamEstimate {
                name: name.clone(),
                value,
                se,
            })
            .collect();
        MlOutcome {
            loglik_start: -m.f_start,
            convergence: Convergence {
                iterations: m.iterations,
                evaluations: m.evaluations,
                gradient_norm: m.grad_norm(),
                status: m.status,
            },
            z: m.x,
            estimates,
            se_available,
        }
    }
}

/// Maps an unconstrained SD coordinate to a usable SD and a penalty that pulls
/// the optimizer back above [`SD_FLOOR`].
pub(crate) fn floored_sd(z: f64) -> (f64, f64) {
    let floor = SD_FLOOR.ln();
    if z < floor {
        (SD_FLOOR, 1e4 * (floor - z) * (floor - z))
    } else {
        (z.exp(), 0.0)
    }
}

pub(crate) fn beta_names(d: &Dataset) -> Vec<String> {
    d.covariate_names()
        .iter()
        .map(|c| format!("beta[{c}]"))
        .collect()
}

/// Names of the reported SVARE parameters, in order.
pub fn svare_param_names(d: &Dataset) -> Vec<String> {
    let mut names = vec!["beta0".to_string()];
    names.extend(beta_names(d));
    names.extend(
        ["rho", "sigma2_eta", "alpha", "delta", "sigma2_nu"]
            .iter()
            .map(|s| s.to_string()),
    );
    names
}

fn svare_links(k: usize) -> (Vec<Link>, Vec<Report>) {
    let mut links = vec![Link::Identity; 1 + k];
    links.extend([Link::Tanh, Link::Exp, Link::Identity, Link::Tanh, Link::Exp]);
    let mut reports = vec![Report::AsIs; 1 + k];
    reports.extend([
        Report::AsIs,
        Report::Square,
        Report::AsIs,
        Report::AsIs,
        Report::Square,
    ]);
    (links, reports)
}

pub fn svare_to_z(p: &SvareParams) -> Result<Vec<f64>> {
    let mut v = vec![p.beta0];
    v.extend(&p.beta);
    v.extend([p.rho, p.sigma_eta, p.alpha, p.delta, p.sigma_nu]);
    Ok(TransformedParams::from_constrained(&v, &svare_links(p.beta.len()).0)?.z)
}

/// Inverse of [`svare_to_z`] with the SD floor applied; returns the penalty too.
pub(crate) fn svare_from_z(z: &[f64]) -> (SvareParams, f64) {
    let k = z.len() - 6;
    let (sigma_eta, pen_eta) = floored_sd(z[k + 2]);
    let (sigma_nu, pen_nu) = floored_sd(z[k + 5]);
    (
        SvareParams {
            beta0: z[0],
            beta: z[1..=k].to_vec(),
            rho: z[k + 1].tanh(),
            sigma_eta,
            alpha: z[k + 3],
            delta: z[k + 4].tanh(),
            sigma_nu,
        },
        pen_eta + pen_nu,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvareFitOptions {
    /// Fixed point counts; `None` applies the spacing rule.
    pub n_u: Option<usize>,
    pub n_h: Option<usize>,
    pub grid_multiplier: f64,
    pub bfgs: BfgsOptions,
    pub ma_window: usize,
    /// Refits when the spacing rule at the optimum asks for more points than
    /// were used (only when counts are not fixed).
    pub max_grid_refinements: usize,
}

impl Default for SvareFitOptions {
    fn default() -> Self {
        Self {
            n_u: None,
            n_h: None,
            grid_multiplier: DEFAULT_WIDTH_MULTIPLIER,
            bfgs: BfgsOptions::default(),
            ma_window: 3,
            max_grid_refinements: 2,
        }
    }
}

impl SvareFitOptions {
    pub fn with_points(n_u: usize, n_h: usize) -> Self {
        Self {
            n_u: Some(n_u),
            n_h: Some(n_h),
            ..Self::default()
        }
    }

    fn counts_at(&self, p: &SvareParams) -> (usize, usize) {
        let (du, dh) = default_point_counts_with(p, self.grid_multiplier);
        (self.n_u.unwrap_or(du), self.n_h.unwrap_or(dh))
    }

    pub fn grid(&self, p: &SvareParams, counts: (usize, usize)) -> Result<QuadGrid> {
        build_grid_with(p, counts.0, counts.1, self.grid_multiplier)
    }
}

/// Centered moving average of odd width; windows shrink at the ends.
pub fn centered_moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(x.len() - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Per-period log-variance proxy `mean_i log(e_it^2) + 1.27` from level-1 residuals.
pub fn log_variance_proxy(level1_residuals: &[Vec<f64>]) -> Vec<f64> {
    let mut clamped = 0usize;
    let out = level1_residuals
        .iter()
        .map(|r| {
            r.iter()
                .map(|e| {
                    let e2 = e * e;
                    if e2 < 1e-12 {
                        clamped += 1;
                    }
                    e2.max(1e-12).ln()
                })
                .sum::<f64>()
                / r.len() as f64
                + LOG_CHI2_MEAN_CORRECTION
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} level-1 residuals were (near) zero; squared values clamped at 1e-12");
    }
    out
}

/// Starting values for the SVARE fit: mean parameters from an ARE fit and
/// `(alpha, delta, sigma_nu)` from an AR(1) regression of the smoothed
/// log-variance proxy on its lag.
pub fn sv_starting_values(
    d: &Dataset,
    are_fit: &FitResult,
    ma_window: usize,
) -> Result<SvareParams> {
    if ma_window == 0 || ma_window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "moving-average window must be odd, got {ma_window}"
        )));
    }
    let are = match &are_fit.params {
        ModelParams::Are(p) => p,
        _ => {
            return Err(Error::InvalidArgument(
                "starting values need an ARE fit".into(),
            ))
        }
    };
    if are_fit.level1_residuals.len() != d.n_periods() {
        return Err(Error::InvalidArgument(
            "ARE fit does not match the dataset".into(),
        ));
    }
    let hstar = centered_moving_average(&log_variance_proxy(&are_fit.level1_residuals), ma_window);
    let (alpha, delta, sigma_nu) = ar1_regression(&hstar);
    Ok(SvareParams {
        beta0: are.beta0,
        beta: are.beta.clone(),
        rho: are.rho.clamp(-0.98, 0.98),
        sigma_eta: are.sigma2_eta.sqrt().max(1e-3),
        alpha,
        delta,
        sigma_nu,
    })
}

/// OLS of `x_t` on `x_{t-1}`: `(intercept, slope, residual sd)`, with the slope
/// clamped into `[-0.95, 0.95]` and the sd floored at 0.05.
fn ar1_regression(x: &[f64]) -> (f64, f64, f64) {
    let mean_all = x.iter().sum::<f64>() / x.len() as f64;
    if x.len() < 4 {
        return (mean_all, 0.0, 0.1);
    }
    let prev = &x[..x.len() - 1];
    let next = &x[1..];
    let n = prev.len() as f64;
    let mp = prev.iter().sum::<f64>() / n;
    let mn = next.iter().sum::<f64>() / n;
    let sxx: f64 = prev.iter().map(|a| (a - mp) * (a - mp)).sum();
    let sxy: f64 = prev
        .iter()
        .zip(next)
        .map(|(a, b)| (a - mp) * (b - mn))
        .sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let slope = slope.clamp(-0.95, 0.95);
    let intercept = mn - slope * mp;
    let rss: f64 = prev
        .iter()
        .zip(next)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let sd = (rss / (n - 2.0).max(1.0)).sqrt().max(0.05);
    (intercept, slope, sd)
}

fn svare_problem<'a>(
    d: &'a Dataset,
    opts: &'a SvareFitOptions,
    counts: (usize, usize),
) -> MlProblem<'a> {
    let (links, reports) = svare_links(d.n_covariates());
    MlProblem {
        names: svare_param_names(d),
        links,
        reports,
        negloglik: Box::new(move |z: &[f64]| {
            let (p, penalty) = svare_from_z(z);
            let ll = opts
                .grid(&p, counts)
                .and_then(|g| svcore::loglik(d, &p, &g));
            match ll {
                Ok(ll) if ll.is_finite() => -ll + penalty,
                _ => f64::INFINITY,
            }
        }),
    }
}

/// Approximate log-likelihood of the SVARE model at `p` with grids built per `opts`.
pub fn svare_loglik(d: &Dataset, p: &SvareParams, opts: &SvareFitOptions) -> Result<f64> {
    let counts = opts.counts_at(p);
    svcore::loglik(d, p, &opts.grid(p, counts)?)
}

/// Maximum likelihood fit of the SVARE model.
pub fn fit_svare(
    d: &Dataset,
    start: Option<SvareParams>,
    opts: &SvareFitOptions,
) -> Result<FitResult> {
    d.require_periods(2)?;
    let start = match start {
        Some(s) => s,
        None => {
            let are = fit_are(d, None, &opts.bfgs)?;
            sv_starting_values(d, &are, opts.ma_window)?
        }
    };
    start.check_stationary()?;
    if start.beta.len() != d.n_covariates() {
        return Err(Error::InvalidArgument(
            "starting slopes do not match covariates".into(),
        ));
    }
    let mut z = svare_to_z(&start)?;
    let mut counts = opts.counts_at(&start);
    let mut refinements = 0;
    let (outcome, counts) = loop {
        let problem = svare_problem(d, opts, counts);
        if !(problem.negloglik)(&z).is_finite() {
            return Err(Error::Optimizer(
                "log-likelihood is not finite at the starting values".into(),
            ));
        }
        let out = problem.solve(&z, &opts.bfgs);
        let (p_hat, _) = svare_from_z(&out.z);
        let wanted = opts.counts_at(&p_hat);
        if refinements < opts.max_grid_refinements && (wanted.0 > counts.0 || wanted.1 > counts.1) {
            log::info!(
                "spacing rule at the optimum asks for {wanted:?} points (used {counts:?}); refitting"
            );
            refinements += 1;
            counts = (wanted.0.max(counts.0), wanted.1.max(counts.1));
            z = out.z;
            continue;
        }
        break (out, counts);
    };

    let (params, _) = svare_from_z(&outcome.z);
    let grid = opts.grid(&params, counts)?;
    let (loglik, states) = svcore::estimate_states(d, &params, &grid)?;
    let level1_residuals = svcore::residuals(d, params.beta0, &params.beta)
        .iter()
        .zip(&states.smoothed_u)
        .map(|(r, u)| r.iter().map(|v| v - u).collect())
        .collect();
    let n_params = d.n_covariates() + 6;
    let (aic, bic) = information_criteria(loglik, n_params, d.n_total());
    Ok(FitResult {
        model: Model::Svare,
        params: ModelParams::Svare(params),
        estimates: outcome.estimates,
        se_available: outcome.se_available,
        loglik,
        loglik_start: outcome.loglik_start,
        aic,
        bic,
        n_params,
        n_obs: d.n_total(),
        convergence: outcome.convergence,
        states: Some(states),
        level1_residuals,
        times: d.times().to_vec(),
        grid_points: Some(counts),
    })
}

/// Names accepted by [`profile_check`]: any reported SVARE parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePoint {
    pub value: f64,
    pub loglik: f64,
}

/// Log-likelihood along one reported parameter (others held at the MLE) on
/// `points` equally spaced values spanning `estimate +- span_se * se`.
pub fn profile_check(
    d: &Dataset,
    fit: &FitResult,
    param: &str,
    span_se: f64,
    points: usize,
    opts: &SvareFitOptions,
) -> Result<Vec<ProfilePoint>> {
    let p = match &fit.params {
        ModelParams::Svare(p) => p,
        _ => {
            return Err(Error::InvalidArgument(
                "profile_check needs an SVARE fit".into(),
            ))
        }
    };
    let names = svare_param_names(d);
    let idx = names
        .iter()
        .position(|n| n == param)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{param}'")))?;
    let est = &fit.estimates[idx];
    if !(est.se.is_finite() && est.se > 0.0) || points < 3 {
        return Err(Error::InvalidArgument(
            "profile needs a finite positive standard error and at least 3 points".into(),
        ));
    }
    let counts = fit.grid_points.unwrap_or_else(|| opts.counts_at(p));
    let k = d.n_covariates();
    (0..points)
        .map(|s| {
            let value = est.value + span_se * est.se * (2.0 * s as f64 / (points - 1) as f64 - 1.0);
            let mut q = p.clone();
            match idx {
                0 => q.beta0 = value,
                i if i <= k => q.beta[i - 1] = value,
                i => match i - k {
                    1 => q.rho = value,
                    2 => q.sigma_eta = value.max(0.0).sqrt(),
                    3 => q.alpha = value,
                    4 => q.delta = value,
                    _ => q.sigma_nu = value.max(0.0).sqrt(),
                },
            }
            let loglik = opts
                .grid(&q, counts)
                .and_then(|g| svcore::loglik(d, &q, &g))
                .unwrap_or(f64::NEG_INFINITY);
            Ok(ProfilePoint { value, loglik })
        })
        .collect()
}
