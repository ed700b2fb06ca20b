//! Fixed-effects hedonic regression and the multilevel model with AR(1)
//! random time effects.
//!
//! The random-effects likelihood is exact: each period collapses to the
//! precision-weighted mean of its residuals plus the within sum of squares, and
//! a scalar Kalman filter runs over the period means.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{
    beta_names, floored_sd, information_criteria, BfgsOptions, Convergence, FitResult, Link,
    MlProblem, Model, ModelParams, ParamEstimate, Report, Status, TransformedParams,
};
use crate::svcore::{period_stats, residuals, PeriodStats, StateEstimates};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct FeParams {
    pub beta0_t: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

/// Ordinary least squares with time dummies in place of an intercept.
pub fn fit_fe(d: &Dataset) -> Result<FitResult> {
    d.require_periods(1)?;
    let t_len = d.n_periods();
    let k = d.n_covariates();
    let n = d.n_total();
    let p = t_len + k;
    if n <= p {
        return Err(Error::Dataset(format!(
            "{n} observations for {p} regression coefficients"
        )));
    }
    let mut z = DMatrix::zeros(n, p);
    let mut row = 0;
    for (t, g) in d.groups().iter().enumerate() {
        for i in 0..g.len() {
            z[(row + i, t)] = 1.0;
        }
        z.view_mut((row, t_len), (g.len(), k)).copy_from(&g.x);
        row += g.len();
    }
    let y = d.stacked_y();
    let mut names: Vec<String> = d.times().iter().map(|l| format!("beta0[{l}]")).collect();
    names.extend(beta_names(d));
    check_rank(&z, &names)?;

    let xtx = z.transpose() * &z;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(names.clone()))?;
    let coef = chol.solve(&(z.transpose() * &y));
    let fitted = &z * &coef;
    let resid = &y - fitted;
    let rss = resid.dot(&resid);
    let sigma2 = rss / n as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate(
            "perfect fit: residual variance is zero".into(),
        ));
    }
    let nf = n as f64;
    let loglik = -0.5 * nf * (LN_2PI + sigma2.ln() + 1.0);
    let inv = chol.inverse();

    let mut estimates: Vec<ParamEstimate> = names
        .iter()
        .enumerate()
        .map(|(i, name)| ParamEstimate {
            name: name.clone(),
            value: coef[i],
            se: (inv[(i, i)] * sigma2).sqrt(),
        })
        .collect();
    estimates.push(ParamEstimate {
        name: "sigma2".into(),
        value: sigma2,
        se: sigma2 * (2.0 / nf).sqrt(),
    });
    let n_params = p + 1;
    let (aic, bic) = information_criteria(loglik, n_params, n);

    let mut level1_residuals = Vec::with_capacity(t_len);
    let mut row = 0;
    for g in d.groups() {
        level1_residuals.push(resid.rows(row, g.len()).iter().copied().collect());
        row += g.len();
    }
    Ok(FitResult {
        model: Model::Fe,
        params: ModelParams::Fe(FeParams {
            beta0_t: coef.rows(0, t_len).iter().copied().collect(),
            beta: coef.rows(t_len, k).iter().copied().collect(),
            sigma2,
        }),
        estimates,
        se_available: true,
        loglik,
        loglik_start: loglik,
        aic,
        bic,
        n_params,
        n_obs: n,
        convergence: Convergence {
            iterations: 0,
            evaluations: 0,
            gradient_norm: 0.0,
            status: Status::ClosedForm,
        },
        states: None,
        level1_residuals,
        times: d.times().to_vec(),
        grid_points: None,
    })
}

/// Modified Gram-Schmidt pass; reports columns lying in the span of earlier ones.
fn check_rank(z: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let mut v = z.column(j).into_owned();
        let norm0 = v.norm();
        for q in &basis {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            bad.push(name.clone());
        } else {
            basis.push(v / norm);
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient(bad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreParams {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub rho: f64,
    pub sigma2_eta: f64,
    pub sigma2: f64,
}

impl AreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidParams(format!(
                "|rho| = {} >= 1",
                self.rho.abs()
            )));
        }
        if !(self.sigma2_eta >= 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "sigma2_eta = {}, sigma2 = {}",
                self.sigma2_eta, self.sigma2
            )));
        }
        if !self.beta0.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParams(
                "non-finite regression coefficient".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFilterOutput {
    pub loglik: f64,
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    pub smoothed_mean: Vec<f64>,
    pub smoothed_var: Vec<f64>,
    /// `E(u_t | Y_{t-1})` for `t = 1..T+1`.
    pub predicted_mean: Vec<f64>,
    pub predicted_var: Vec<f64>,
    /// `y_it - beta0 - u_t - x'beta` with smoothed `u_t`, per period.
    pub level1_residuals: Vec<Vec<f64>>,
    /// `u_t - rho u_{t-1}` for `t = 2..T` from smoothed means.
    pub level2_residuals: Vec<f64>,
}

struct FilterPass {
    loglik: f64,
    filt_m: Vec<f64>,
    filt_p: Vec<f64>,
    pred_m: Vec<f64>,
    pred_p: Vec<f64>,
}

fn kalman(stats: &[PeriodStats], rho: f64, sigma2_eta: f64, sigma2: f64) -> FilterPass {
    let t_len = stats.len();
    let mut out = FilterPass {
        loglik: 0.0,
        filt_m: Vec::with_capacity(t_len),
        filt_p: Vec::with_capacity(t_len),
        pred_m: Vec::with_capacity(t_len + 1),
        pred_p: Vec::with_capacity(t_len + 1),
    };
    let mut m = 0.0;
    let mut p = sigma2_eta / (1.0 - rho * rho);
    for s in stats {
        out.pred_m.push(m);
        out.pred_p.push(p);
        // Within-period part of the likelihood.
        out.loglik +=
            -0.5 * (s.n - 1.0) * (LN_2PI + sigma2.ln()) - 0.5 * s.n.ln() - 0.5 * s.ssw / sigma2;
        let f = p + sigma2 / s.n;
        let v = s.mean - m;
        out.loglik += -0.5 * (LN_2PI + f.ln() + v * v / f);
        let gain = p / f;
        m += gain * v;
        p *= 1.0 - gain;
        out.filt_m.push(m);
        out.filt_p.push(p);
        m *= rho;
        p = rho * rho * p + sigma2_eta;
    }
    out.pred_m.push(m);
    out.pred_p.push(p);
    out
}

fn are_loglik_stats(stats: &[PeriodStats], p: &AreParams) -> f64 {
    kalman(stats, p.rho, p.sigma2_eta, p.sigma2).loglik
}

/// Exact log-likelihood, filtered/smoothed random effects and residuals.
pub fn are_loglik(d: &Dataset, p: &AreParams) -> Result<GaussianFilterOutput> {
    p.validate()?;
    d.require_periods(1)?;
    if p.beta.len() != d.n_covariates() {
        return Err(Error::InvalidArgument(format!(
            "{} slopes for {} covariates",
            p.beta.len(),
            d.n_covariates()
        )));
    }
    let stats = period_stats(d, p.beta0, &p.beta);
    let pass = kalman(&stats, p.rho, p.sigma2_eta, p.sigma2);
    let t_len = stats.len();

    // Rauch-Tung-Striebel smoother.
    let mut sm = pass.filt_m.clone();
    let mut sp = pass.filt_p.clone();
    for t in (0..t_len.saturating_sub(1)).rev() {
        let pp = pass.pred_p[t + 1];
        let j = if pp > 0.0 {
            pass.filt_p[t] * p.rho / pp
        } else {
            0.0
        };
        sm[t] = pass.filt_m[t] + j * (sm[t + 1] - pass.pred_m[t + 1]);
        sp[t] = (pass.filt_p[t] + j * j * (sp[t + 1] - pp)).max(0.0);
    }

    let level1_residuals = residuals(d, p.beta0, &p.beta)
        .iter()
        .zip(&sm)
        .map(|(r, u)| r.iter().map(|v| v - u).collect())
        .collect();
    let level2_residuals = sm.windows(2).map(|w| w[1] - p.rho * w[0]).collect();
    Ok(GaussianFilterOutput {
        loglik: pass.loglik,
        filtered_mean: pass.filt_m,
        filtered_var: pass.filt_p,
        smoothed_mean: sm,
        smoothed_var: sp,
        predicted_mean: pass.pred_m,
        predicted_var: pass.pred_p,
        level1_residuals,
        level2_residuals,
    })
}

fn are_from_z(z: &[f64]) -> (AreParams, f64) {
    let k = z.len() - 4;
    let (s_eta, pen_eta) = floored_sd(z[k + 2]);
    let (s, pen) = floored_sd(z[k + 3]);
    (
        AreParams {
            beta0: z[0],
            beta: z[1..=k].to_vec(),
            rho: z[k + 1].tanh(),
            sigma2_eta: s_eta * s_eta,
            sigma2: s * s,
        },
        pen_eta + pen,
    )
}

fn are_links(k: usize) -> (Vec<Link>, Vec<Report>) {
    let mut links = vec![Link::Identity; 1 + k];
    links.extend([Link::Tanh, Link::Exp, Link::Exp]);
    let mut reports = vec![Report::AsIs; 1 + k];
    reports.extend([Report::AsIs, Report::Square, Report::Square]);
    (links, reports)
}

/// Names of the reported ARE parameters, in order.
pub fn are_param_names(d: &Dataset) -> Vec<String> {
    let mut names = vec!["beta0".to_string()];
    names.extend(beta_names(d));
    names.extend(
        ["rho", "sigma2_eta", "sigma2"]
            .iter()
            .map(|s| s.to_string()),
    );
    names
}

/// Moment-based starting values from the fixed-effects fit.
pub fn are_starting_values(d: &Dataset) -> Result<AreParams> {
    let fe = fit_fe(d)?;
    let ModelParams::Fe(fe) = fe.params else {
        unreachable!("fit_fe returns fixed-effects parameters")
    };
    let t_len = fe.beta0_t.len() as f64;
    let beta0 = fe.beta0_t.iter().sum::<f64>() / t_len;
    let dev: Vec<f64> = fe.beta0_t.iter().map(|b| b - beta0).collect();
    let var_u = dev.iter().map(|v| v * v).sum::<f64>() / t_len;
    let rho = if dev.len() >= 3 && var_u > 0.0 {
        let c1 = dev.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / t_len;
        (c1 / var_u).clamp(-0.9, 0.9)
    } else {
        0.5
    };
    Ok(AreParams {
        beta0,
        beta: fe.beta,
        rho,
        sigma2_eta: (var_u * (1.0 - rho * rho)).max(1e-4 * fe.sigma2),
        sigma2: fe.sigma2,
    })
}

/// Direct maximum likelihood fit of the ARE model.
pub fn fit_are(d: &Dataset, start: Option<AreParams>, opts: &BfgsOptions) -> Result<FitResult> {
    d.require_periods(2)?;
    let start = match start {
        Some(s) => s,
        None => are_starting_values(d)?,
    };
    start.validate()?;
    if start.beta.len() != d.n_covariates() {
        return Err(Error::InvalidArgument(
            "starting slopes do not match covariates".into(),
        ));
    }
    let k = d.n_covariates();
    let (links, reports) = are_links(k);
    let mut v = vec![start.beta0];
    v.extend(&start.beta);
    v.extend([
        start.rho,
        start.sigma2_eta.sqrt().max(crate::estimate::SD_FLOOR),
        start.sigma2.sqrt(),
    ]);
    let z0 = TransformedParams::from_constrained(&v, &links)?.z;

    let problem = MlProblem {
        names: are_param_names(d),
        links,
        reports,
        negloglik: Box::new(|z: &[f64]| {
            let (p, penalty) = are_from_z(z);
            if p.rho.abs() >= 1.0 {
                return f64::INFINITY;
            }
            let stats = period_stats(d, p.beta0, &p.beta);
            let ll = are_loglik_stats(&stats, &p);
            if ll.is_finite() {
                -ll + penalty
            } else {
                f64::INFINITY
            }
        }),
    };
    let out = problem.solve(&z0, opts);
    let (params, _) = are_from_z(&out.z);
    let filt = are_loglik(d, &params)?;
    let states = are_states(&params, &filt);
    let n_params = k + 4;
    let (aic, bic) = information_criteria(filt.loglik, n_params, d.n_total());
    Ok(FitResult {
        model: Model::Are,
        params: ModelParams::Are(params),
        estimates: out.estimates,
        se_available: out.se_available,
        loglik: filt.loglik,
        loglik_start: out.loglik_start,
        aic,
        bic,
        n_params,
        n_obs: d.n_total(),
        convergence: out.convergence,
        states: Some(states),
        level1_residuals: filt.level1_residuals,
        times: d.times().to_vec(),
        grid_points: None,
    })
}

/// ARE states in the common layout; the log-variance is the constant `ln sigma2`.
pub fn are_states(p: &AreParams, f: &GaussianFilterOutput) -> StateEstimates {
    let t_len = f.filtered_mean.len();
    let h = p.sigma2.ln();
    let sd = p.sigma2.sqrt();
    StateEstimates {
        filtered_u: f.filtered_mean.clone(),
        filtered_h: vec![h; t_len],
        smoothed_u: f.smoothed_mean.clone(),
        smoothed_h: vec![h; t_len],
        predicted_u: f.predicted_mean.clone(),
        predicted_h: vec![h; t_len + 1],
        level1_std_residuals: f
            .level1_residuals
            .iter()
            .map(|r| r.iter().map(|e| e / sd).collect())
            .collect(),
        level2_eta: f.level2_residuals.clone(),
        level2_nu: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Group;

    fn dataset(groups: Vec<(Vec<f64>, Vec<Vec<f64>>)>, k: usize) -> Dataset {
        let times = (0..groups.len()).map(|t| format!("{}", t + 1)).collect();
        let groups = groups
            .into_iter()
            .map(|(y, x)| Group {
                x: DMatrix::from_fn(y.len(), k, |i, j| x[i][j]),
                y: DVector::from_vec(y),
            })
            .collect();
        Dataset::new(times, groups, (0..k).map(|j| format!("x{j}")).collect()).unwrap()
    }

    #[test]
    fn intercept_only_fe() {
        let d = dataset(vec![(vec![1.0, 2.0, 4.0, 5.0], vec![vec![]; 4])], 0);
        let fit = fit_fe(&d).unwrap();
        let ModelParams::Fe(p) = &fit.params else {
            panic!()
        };
        assert!((p.beta0_t[0] - 3.0).abs() < 1e-14);
        assert!((p.sigma2 - 2.5).abs() < 1e-14);
        assert_eq!(fit.n_params, 2);
    }

    #[test]
    fn fe_rank_deficiency_names_columns() {
        // x1 = 2 * x0.
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let d = dataset(vec![(vec![1.0, 2.0, 0.5, 3.0, 1.0], rows)], 2);
        match fit_fe(&d) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["beta[x1]".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    fn mvn_loglik(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let n = y.len() as f64;
        let chol = cov.clone().cholesky().unwrap();
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let q = y.dot(&chol.solve(y));
        -0.5 * (n * LN_2PI + logdet + q)
    }

    #[test]
    fn bivariate_closed_form() {
        let p = AreParams {
            beta0: 0.3,
            beta: vec![],
            rho: 0.6,
            sigma2_eta: 0.5,
            sigma2: 0.8,
        };
        let d = dataset(
            vec![(vec![1.1], vec![vec![]]), (vec![-0.4], vec![vec![]])],
            0,
        );
        let got = are_loglik(&d, &p).unwrap().loglik;
        let su = p.sigma2_eta / (1.0 - p.rho * p.rho);
        let cov = DMatrix::from_row_slice(
            2,
            2,
            &[su + p.sigma2, su * p.rho, su * p.rho, su + p.sigma2],
        );
        let y = DVector::from_vec(vec![1.1 - 0.3, -0.4 - 0.3]);
        assert!((got - mvn_loglik(&y, &cov)).abs() < 1e-10);
    }

    #[test]
    fn degenerate_random_effect_is_pooled_regression() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        let d = dataset(
            vec![
                (vec![1.0, 2.0, 0.5], rows.clone()),
                (vec![0.2, 1.5, 2.5], rows),
            ],
            1,
        );
        let p = AreParams {
            beta0: 0.4,
            beta: vec![0.3],
            rho: 0.0,
            sigma2_eta: 0.0,
            sigma2: 0.7,
        };
        let got = are_loglik(&d, &p).unwrap().loglik;
        let pooled: f64 = d
            .groups()
            .iter()
            .flat_map(|g| (0..g.len()).map(move |i| (g.y[i], g.x[(i, 0)])))
            .map(|(y, x)| crate::svcore::normal_logpdf(y, 0.4 + 0.3 * x, 0.7f64.sqrt()))
            .sum();
        assert!((got - pooled).abs() < 1e-10);
    }

    #[test]
    fn smoothed_variance_below_filtered() {
        let groups = (0..6)
            .map(|t| (vec![0.1 * t as f64, 0.5, -0.2 * t as f64], vec![vec![]; 3]))
            .collect();
        let d = dataset(groups, 0);
        let p = AreParams {
            beta0: 0.0,
            beta: vec![],
            rho: 0.8,
            sigma2_eta: 0.3,
            sigma2: 0.5,
        };
        let out = are_loglik(&d, &p).unwrap();
        for t in 0..6 {
            assert!(out.smoothed_var[t] <= out.filtered_var[t] + 1e-15);
            assert!(out.smoothed_var[t] >= 0.0);
        }
        assert_eq!(out.smoothed_mean[5], out.filtered_mean[5]);
        assert_eq!(out.level2_residuals.len(), 5);
    }

    #[test]
    fn invalid_params() {
        let d = dataset(
            vec![(vec![1.0], vec![vec![]]), (vec![1.0], vec![vec![]])],
            0,
        );
        let mut p = AreParams {
            beta0: 0.0,
            beta: vec![],
            rho: 1.0,
            sigma2_eta: 0.3,
            sigma2: 0.5,
        };
        assert!(are_loglik(&d, &p).is_err());
        p.rho = 0.5;
        p.sigma2 = 0.0;
        assert!(are_loglik(&d, &p).is_err());
    }
}
