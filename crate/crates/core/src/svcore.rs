//! Quadrature filter for the multilevel model with AR(1) random effects and
//! stochastic volatility:
//!
//! ```text
//! y_it = beta0 + u_t + x_it' beta + exp(h_t / 2) eps_it,   eps_it ~ N(0, 1)
//! u_t  = rho u_{t-1} + eta_t,                               eta_t ~ N(0, sigma_eta^2)
//! h_t  = alpha + delta h_{t-1} + sigma_nu nu_t,             nu_t  ~ N(0, 1)
//! ```
//!
//! Both latent processes start from their stationary distributions. The
//! likelihood is approximated on a Gauss-Legendre tensor grid (see
//! [`crate::quadrature`]). Grid vectors are stored as `n_u x n_h` column-major
//! matrices, so the flattened index is `i + n_u * j` with u fastest.
//!
//! The propagation operator is the Kronecker product `A_h (x) A_u` where
//! `A_u[i, i'] = w_u[i] N(u_i; rho u_i', sigma_eta^2)` and likewise for `h`.
//! It is applied as `A_u L A_h'` and never formed.
//!
//! Every forward vector `l_t` is stored normalized to unit sum; its log
//! magnitude is carried in a running scale. Backward vectors are normalized the
//! same way.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::quadrature::QuadGrid;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

#[inline]
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    normal_logpdf(x, mean, sd).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvareParams {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub rho: f64,
    pub sigma_eta: f64,
    pub alpha: f64,
    pub delta: f64,
    pub sigma_nu: f64,
}

impl SvareParams {
    pub fn check_stationary(&self) -> Result<()> {
        let finite = [
            self.beta0,
            self.rho,
            self.sigma_eta,
            self.alpha,
            self.delta,
            self.sigma_nu,
        ]
        .iter()
        .chain(&self.beta)
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "|rho| = {} >= 1",
                self.rho.abs()
            )));
        }
        if self.delta.abs() >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "|delta| = {} >= 1",
                self.delta.abs()
            )));
        }
        if self.sigma_eta <= 0.0 || self.sigma_nu <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "sigma_eta = {}, sigma_nu = {}; both must be positive",
                self.sigma_eta, self.sigma_nu
            )));
        }
        Ok(())
    }

    pub fn stationary_sd_u(&self) -> f64 {
        self.sigma_eta / (1.0 - self.rho * self.rho).sqrt()
    }

    pub fn stationary_sd_h(&self) -> f64 {
        self.sigma_nu / (1.0 - self.delta * self.delta).sqrt()
    }

    pub fn stationary_mean_h(&self) -> f64 {
        self.alpha / (1.0 - self.delta)
    }

    fn check_dims(&self, d: &Dataset) -> Result<()> {
        if self.beta.len() != d.n_covariates() {
            return Err(Error::InvalidArgument(format!(
                "{} slopes for {} covariates",
                self.beta.len(),
                d.n_covariates()
            )));
        }
        Ok(())
    }
}

/// Sufficient statistics of the level-1 residuals `r = y - beta0 - x'beta`
/// of one period: count, mean and within sum of squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodStats {
    pub n: f64,
    pub mean: f64,
    pub ssw: f64,
}

pub(crate) fn residuals(d: &Dataset, beta0: f64, beta: &[f64]) -> Vec<DVector<f64>> {
    let b = DVector::from_column_slice(beta);
    d.groups()
        .iter()
        .map(|g| {
            let mut r = &g.y - &g.x * &b;
            r.add_scalar_mut(-beta0);
            r
        })
        .collect()
}

pub(crate) fn period_stats(d: &Dataset, beta0: f64, beta: &[f64]) -> Vec<PeriodStats> {
    residuals(d, beta0, beta)
        .iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.mean();
            let ssw = r.iter().map(|v| (v - mean) * (v - mean)).sum();
            PeriodStats { n, mean, ssw }
        })
        .collect()
}

fn fill_obs_logdensity(s: &PeriodStats, g: &QuadGrid, out: &mut [f64]) {
    let n_u = g.n_u();
    for (j, &h) in g.h.points.iter().enumerate() {
        let c = -0.5 * s.n * (LN_2PI + h);
        let k = 0.5 * (-h).exp();
        let col = &mut out[j * n_u..(j + 1) * n_u];
        for (o, &u) in col.iter_mut().zip(&g.u.points) {
            let dm = s.mean - u;
            *o = c - k * (s.ssw + s.n * dm * dm);
        }
    }
}

/// `log f(y_t | u_i, h_j)` on every grid cell (index `i + n_u * j`); `t` is 0-based.
pub fn obs_logdensity_grid(
    d: &Dataset,
    t: usize,
    p: &SvareParams,
    g: &QuadGrid,
) -> Result<Vec<f64>> {
    p.check_dims(d)?;
    if t >= d.n_periods() {
        return Err(Error::InvalidArgument(format!(
            "period index {t} out of range"
        )));
    }
    let stats = period_stats(d, p.beta0, &p.beta);
    let mut out = vec![0.0; g.n_cells()];
    fill_obs_logdensity(&stats[t], g, &mut out);
    Ok(out)
}

/// Weighted transition matrices `A_u` and `A_h` and the weighted initial vector.
#[derive(Debug, Clone)]
pub struct Transition {
    pub a_u: DMatrix<f64>,
    pub a_h: DMatrix<f64>,
    /// `(w_h o f_h1) (x) (w_u o f_u1)` as an `n_u x n_h` matrix.
    pub initial: DMatrix<f64>,
    a_u_t: DMatrix<f64>,
    a_h_t: DMatrix<f64>,
}

impl Transition {
    pub fn new(p: &SvareParams, g: &QuadGrid) -> Self {
        let a_u = DMatrix::from_fn(g.n_u(), g.n_u(), |i, ip| {
            g.u.weights[i] * normal_pdf(g.u.points[i], p.rho * g.u.points[ip], p.sigma_eta)
        });
        let a_h = DMatrix::from_fn(g.n_h(), g.n_h(), |j, jp| {
            g.h.weights[j]
                * normal_pdf(
                    g.h.points[j],
                    p.alpha + p.delta * g.h.points[jp],
                    p.sigma_nu,
                )
        });
        let (sd_u, sd_h, mu_h) = (
            p.stationary_sd_u(),
            p.stationary_sd_h(),
            p.stationary_mean_h(),
        );
        let initial = DMatrix::from_fn(g.n_u(), g.n_h(), |i, j| {
            g.u.weights[i]
                * normal_pdf(g.u.points[i], 0.0, sd_u)
                * g.h.weights[j]
                * normal_pdf(g.h.points[j], mu_h, sd_h)
        });
        let (a_u_t, a_h_t) = (a_u.transpose(), a_h.transpose());
        Self {
            a_u,
            a_h,
            initial,
            a_u_t,
            a_h_t,
        }
    }

    /// `A_u X A_h'`: one application of the Kronecker-structured operator.
    fn propagate(&self, x: &DMatrix<f64>, tmp: &mut DMatrix<f64>, out: &mut DMatrix<f64>) {
        tmp.gemm(1.0, &self.a_u, x, 0.0);
        out.gemm(1.0, tmp, &self.a_h_t, 0.0);
    }

    /// `A_u' X A_h`: the transposed operator used by the backward pass.
    fn propagate_transposed(
        &self,
        x: &DMatrix<f64>,
        tmp: &mut DMatrix<f64>,
        out: &mut DMatrix<f64>,
    ) {
        tmp.gemm(1.0, x, &self.a_h, 0.0);
        out.gemm(1.0, &self.a_u_t, tmp, 0.0);
    }
}

/// Forward (and optionally backward) recursion output.
#[derive(Debug, Clone)]
pub struct RecursionState {
    pub grid: QuadGrid,
    pub transition: Transition,
    /// Normalized forward vectors `l_t`, each summing to one.
    pub l: Vec<DMatrix<f64>>,
    /// Per-step log scale factors `c_t`; the unscaled `l_t` is `l[t] * exp(c_1 + ... + c_t)`.
    pub log_scale: Vec<f64>,
    /// Normalized backward vectors, once [`backward`] has run.
    pub b: Option<Vec<DMatrix<f64>>>,
    /// Cumulative backward log scale: unscaled `b_t` is `b[t] * exp(b_log_scale[t])`.
    pub b_log_scale: Option<Vec<f64>>,
    obs: Vec<PeriodStats>,
}

impl RecursionState {
    pub fn n_periods(&self) -> usize {
        self.l.len()
    }

    pub fn loglik(&self) -> f64 {
        self.log_scale.iter().sum()
    }

    /// `log sum_ij l_tij b_tij` in unscaled terms; equals the log-likelihood at every `t`.
    pub fn log_forward_backward_total(&self, t: usize) -> Option<f64> {
        let b = self.b.as_ref()?;
        let bs = self.b_log_scale.as_ref()?;
        let dot = self.l[t].dot(&b[t]);
        let c: f64 = self.log_scale[..=t].iter().sum();
        Some(dot.ln() + c + bs[t])
    }
}

/// How the forward pass rescales each `l_t`. `Unit` normalizes to sum one;
/// `Targets` normalizes step `t` to sum `targets[t]` (used to check that the
/// choice of scaling is immaterial).
#[derive(Debug, Clone, Copy)]
pub enum Scaling<'a> {
    Unit,
    Targets(&'a [f64]),
}

struct Workspace {
    logf: Vec<f64>,
    tmp: DMatrix<f64>,
    pred: DMatrix<f64>,
}

impl Workspace {
    fn new(g: &QuadGrid) -> Self {
        Self {
            logf: vec![0.0; g.n_cells()],
            tmp: DMatrix::zeros(g.n_u(), g.n_h()),
            pred: DMatrix::zeros(g.n_u(), g.n_h()),
        }
    }
}

/// Multiplies `pred` in place by `J exp(logf - max)`, rescales it and returns the
/// step's log scale factor.
fn absorb(t: usize, ws: &mut Workspace, jac: f64, target: f64) -> Result<f64> {
    let m = ws.logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::GridStarvation { t: t + 1 });
    }
    let mut s = 0.0;
    for (v, &lf) in ws.pred.as_mut_slice().iter_mut().zip(&ws.logf) {
        *v *= jac * (lf - m).exp();
        s += *v;
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::GridStarvation { t: t + 1 });
    }
    ws.pred.scale_mut(target / s);
    Ok(m + (s / target).ln())
}

fn run_forward(
    d: &Dataset,
    p: &SvareParams,
    g: &QuadGrid,
    scaling: Scaling<'_>,
    store: bool,
) -> Result<(f64, Option<RecursionState>)> {
    p.check_stationary()?;
    p.check_dims(d)?;
    if d.n_periods() == 0 {
        return Err(Error::Dataset("no time periods".into()));
    }
    if let Scaling::Targets(ts) = scaling {
        if ts.len() != d.n_periods() || ts.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(
                "one positive scaling target per period required".into(),
            ));
        }
    }
    let obs = period_stats(d, p.beta0, &p.beta);
    let transition = Transition::new(p, g);
    let jac = g.jacobian();
    let mut ws = Workspace::new(g);
    let mut prev = DMatrix::zeros(g.n_u(), g.n_h());
    let mut ls = Vec::with_capacity(if store { d.n_periods() } else { 0 });
    let mut scales = Vec::with_capacity(d.n_periods());

    for (t, s) in obs.iter().enumerate() {
        fill_obs_logdensity(s, g, &mut ws.logf);
        if t == 0 {
            ws.pred.copy_from(&transition.initial);
        } else {
            transition.propagate(&prev, &mut ws.tmp, &mut ws.pred);
        }
        let target = match scaling {
            Scaling::Unit => 1.0,
            Scaling::Targets(ts) => ts[t],
        };
        scales.push(absorb(t, &mut ws, jac, target)?);
        std::mem::swap(&mut prev, &mut ws.pred);
        if store {
            ls.push(prev.clone());
        }
    }
    let loglik = scales.iter().sum();
    let state = store.then(|| RecursionState {
        grid: g.clone(),
        transition,
        l: ls,
        log_scale: scales,
        b: None,
        b_log_scale: None,
        obs,
    });
    Ok((loglik, state))
}

/// Approximate log-likelihood without storing the recursion.
pub fn loglik(d: &Dataset, p: &SvareParams, g: &QuadGrid) -> Result<f64> {
    run_forward(d, p, g, Scaling::Unit, false).map(|(ll, _)| ll)
}

pub fn forward(d: &Dataset, p: &SvareParams, g: &QuadGrid) -> Result<(f64, RecursionState)> {
    forward_scaled(d, p, g, Scaling::Unit)
}

pub fn forward_scaled(
    d: &Dataset,
    p: &SvareParams,
    g: &QuadGrid,
    scaling: Scaling<'_>,
) -> Result<(f64, RecursionState)> {
    let (ll, st) = run_forward(d, p, g, scaling, true)?;
    Ok((ll, st.expect("stored state")))
}

/// Backward recursion `b_T = 1`, `b_t = J A' (f_{t+1} o b_{t+1})` with `A = A_h (x) A_u`.
pub fn backward(mut st: RecursionState) -> Result<RecursionState> {
    let g = &st.grid;
    let t_len = st.n_periods();
    let jac = g.jacobian();
    let mut ws = Workspace::new(g);
    let mut b = vec![DMatrix::zeros(g.n_u(), g.n_h()); t_len];
    let mut bs = vec![0.0; t_len];
    b[t_len - 1].fill(1.0);

    for t in (0..t_len - 1).rev() {
        fill_obs_logdensity(&st.obs[t + 1], g, &mut ws.logf);
        let m = ws.logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::GridStarvation { t: t + 2 });
        }
        for ((v, &lf), &bn) in ws
            .pred
            .as_mut_slice()
            .iter_mut()
            .zip(&ws.logf)
            .zip(b[t + 1].as_slice())
        {
            *v = jac * (lf - m).exp() * bn;
        }
        let (src, tmp) = (ws.pred.clone(), &mut ws.tmp);
        st.transition.propagate_transposed(&src, tmp, &mut b[t]);
        let s = b[t].sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::GridStarvation { t: t + 1 });
        }
        b[t].scale_mut(1.0 / s);
        bs[t] = bs[t + 1] + m + s.ln();
    }
    st.b = Some(b);
    st.b_log_scale = Some(bs);
    Ok(st)
}

fn marginal_means(w: &DMatrix<f64>, g: &QuadGrid) -> (f64, f64) {
    let total = w.sum();
    let mut mu = 0.0;
    let mut mh = 0.0;
    for j in 0..g.n_h() {
        for i in 0..g.n_u() {
            let v = w[(i, j)];
            mu += g.u.points[i] * v;
            mh += g.h.points[j] * v;
        }
    }
    (mu / total, mh / total)
}

/// Filtered means `E(u_t | Y_t)` and `E(h_t | Y_t)`.
pub fn filter_states(st: &RecursionState) -> (Vec<f64>, Vec<f64>) {
    st.l.iter().map(|l| marginal_means(l, &st.grid)).unzip()
}

/// Smoothed means `E(u_t | Y_T)` and `E(h_t | Y_T)`; needs [`backward`].
pub fn smooth_states(st: &RecursionState) -> Result<(Vec<f64>, Vec<f64>)> {
    let b =
        st.b.as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward pass has not been run".into()))?;
    Ok(st
        .l
        .iter()
        .zip(b)
        .map(|(l, b)| marginal_means(&l.component_mul(b), &st.grid))
        .unzip())
}

/// One-step-ahead means `(E(u_t | Y_{t-1}), E(h_t | Y_{t-1}))` for 1-based
/// `t` in `2..=T+1`, from the propagated forward vector `A l_{t-1}`.
pub fn predict_states(st: &RecursionState, t: usize) -> Result<(f64, f64)> {
    if t < 2 || t > st.n_periods() + 1 {
        return Err(Error::InvalidArgument(format!(
            "prediction target t={t} outside 2..={}",
            st.n_periods() + 1
        )));
    }
    let g = &st.grid;
    let mut tmp = DMatrix::zeros(g.n_u(), g.n_h());
    let mut pred = DMatrix::zeros(g.n_u(), g.n_h());
    st.transition.propagate(&st.l[t - 2], &mut tmp, &mut pred);
    Ok(marginal_means(&pred, g))
}

/// Latent-state summaries and residuals at a parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimates {
    pub filtered_u: Vec<f64>,
    pub filtered_h: Vec<f64>,
    pub smoothed_u: Vec<f64>,
    pub smoothed_h: Vec<f64>,
    /// Length `T + 1`: entry `t` (0-based) is `E(u_{t+1} | Y_t)`; entry 0 is the
    /// prior mean and entry `T` the forecast for the next period.
    pub predicted_u: Vec<f64>,
    pub predicted_h: Vec<f64>,
    /// `(y_it - beta0 - u_t - x'beta) / exp(h_t / 2)` with smoothed states, per period.
    pub level1_std_residuals: Vec<Vec<f64>>,
    /// `u_t - rho u_{t-1}` for `t = 2..T`.
    pub level2_eta: Vec<f64>,
    /// `(h_t - alpha - delta h_{t-1}) / sigma_nu` for `t = 2..T`; empty for models
    /// without stochastic volatility.
    pub level2_nu: Vec<f64>,
}

/// Runs both passes and collects all state summaries.
pub fn estimate_states(
    d: &Dataset,
    p: &SvareParams,
    g: &QuadGrid,
) -> Result<(f64, StateEstimates)> {
    let (ll, st) = forward(d, p, g)?;
    let st = backward(st)?;
    let (filtered_u, filtered_h) = filter_states(&st);
    let (smoothed_u, smoothed_h) = smooth_states(&st)?;
    let (prior_u, prior_h) = marginal_means(&st.transition.initial, g);
    let mut predicted_u = vec![prior_u];
    let mut predicted_h = vec![prior_h];
    for t in 2..=d.n_periods() + 1 {
        let (u, h) = predict_states(&st, t)?;
        predicted_u.push(u);
        predicted_h.push(h);
    }
    let resid = residuals(d, p.beta0, &p.beta);
    let level1_std_residuals = resid
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let scale = (-0.5 * smoothed_h[t]).exp();
            r.iter().map(|v| (v - smoothed_u[t]) * scale).collect()
        })
        .collect();
    let level2_eta = smoothed_u.windows(2).map(|w| w[1] - p.rho * w[0]).collect();
    let level2_nu = smoothed_h
        .windows(2)
        .map(|w| (w[1] - p.alpha - p.delta * w[0]) / p.sigma_nu)
        .collect();
    Ok((
        ll,
        StateEstimates {
            filtered_u,
            filtered_h,
            smoothed_u,
            smoothed_h,
            predicted_u,
            predicted_h,
            level1_std_residuals,
            level2_eta,
            level2_nu,
        },
    ))
}

/// Point predictions `beta0 + u + x'beta` on the response scale for the rows of `x`.
pub fn predict_prices(x: &DMatrix<f64>, u_hat: f64, beta0: f64, beta: &[f64]) -> Result<Vec<f64>> {
    if x.ncols() != beta.len() {
        return Err(Error::InvalidArgument(format!(
            "new rows have {} covariates, model has {}",
            x.ncols(),
            beta.len()
        )));
    }
    let b = DVector::from_column_slice(beta);
    Ok((x * b).iter().map(|v| beta0 + u_hat + v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Group;
    use crate::quadrature::build_grid;

    fn params() -> SvareParams {
        SvareParams {
            beta0: 0.4,
            beta: vec![0.3, -0.2],
            rho: 0.7,
            sigma_eta: 0.3,
            alpha: -0.2,
            delta: 0.6,
            sigma_nu: 0.4,
        }
    }

    fn dataset(rows: &[&[(f64, f64, f64)]]) -> Dataset {
        let groups = rows
            .iter()
            .map(|g| Group {
                y: DVector::from_iterator(g.len(), g.iter().map(|r| r.0)),
                x: DMatrix::from_fn(g.len(), 2, |i, j| if j == 0 { g[i].1 } else { g[i].2 }),
            })
            .collect();
        let times = (0..rows.len()).map(|t| t.to_string()).collect();
        Dataset::new(times, groups, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let mut p = params();
        p.alpha = 0.0;
        let g = build_grid(&p, 5, 5).unwrap();
        // Centre node of each axis: u = 0, h = 0.
        let (i, j) = (2, 2);
        assert_eq!(g.u.points[i], 0.0);
        assert_eq!(g.h.points[j], 0.0);
        let y = p.beta0 + g.u.points[i] + 1.0 * 0.3 + 2.0 * -0.2;
        let d = dataset(&[&[(y, 1.0, 2.0)]]);
        let v = obs_logdensity_grid(&d, 0, &p, &g).unwrap();
        assert!((v[i + 5 * j] + 0.918_938_533_204_672_7).abs() < 1e-14);
    }

    #[test]
    fn duplicated_rows_double_the_density() {
        let p = params();
        let g = build_grid(&p, 5, 7).unwrap();
        let one = dataset(&[&[(0.9, 0.5, 1.0), (0.1, -1.0, 0.0)]]);
        let two = dataset(&[&[
            (0.9, 0.5, 1.0),
            (0.1, -1.0, 0.0),
            (0.9, 0.5, 1.0),
            (0.1, -1.0, 0.0),
        ]]);
        let a = obs_logdensity_grid(&one, 0, &p, &g).unwrap();
        let b = obs_logdensity_grid(&two, 0, &p, &g).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn sufficient_statistics_match_per_item_sum() {
        let p = params();
        let g = build_grid(&p, 7, 5).unwrap();
        let rows = [(0.9, 0.5, 1.0), (0.1, -1.0, 0.0), (1.7, 2.0, -0.5)];
        let d = dataset(&[&rows]);
        let v = obs_logdensity_grid(&d, 0, &p, &g).unwrap();
        for j in 0..g.n_h() {
            for i in 0..g.n_u() {
                let sd = (0.5 * g.h.points[j]).exp();
                let direct: f64 = rows
                    .iter()
                    .map(|&(y, a, b)| {
                        normal_logpdf(y, p.beta0 + g.u.points[i] + 0.3 * a - 0.2 * b, sd)
                    })
                    .sum();
                assert!((direct - v[i + 7 * j]).abs() < 1e-12 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn smoothed_equals_filtered_at_last_period() {
        let p = params();
        let g = build_grid(&p, 9, 9).unwrap();
        let d = dataset(&[
            &[(0.9, 0.5, 1.0)],
            &[(0.1, -1.0, 0.0), (0.5, 0.0, 0.0)],
            &[(1.2, 0.3, 0.3)],
        ]);
        let (_, est) = estimate_states(&d, &p, &g).unwrap();
        assert_eq!(est.smoothed_u[2].to_bits(), est.filtered_u[2].to_bits());
        assert_eq!(est.smoothed_h[2].to_bits(), est.filtered_h[2].to_bits());
        assert_eq!(est.predicted_u.len(), 4);
        assert_eq!(est.level2_eta.len(), 2);
        assert_eq!(est.level1_std_residuals[1].len(), 2);
    }

    #[test]
    fn forward_backward_identity() {
        let p = params();
        let g = build_grid(&p, 11, 13).unwrap();
        let d = dataset(&[
            &[(0.9, 0.5, 1.0)],
            &[(0.1, -1.0, 0.0), (0.5, 0.0, 0.0)],
            &[(1.2, 0.3, 0.3)],
            &[(0.0, 0.3, 0.3), (0.7, 1.0, 1.0), (0.2, -1.0, 0.5)],
        ]);
        let (ll, st) = forward(&d, &p, &g).unwrap();
        let st = backward(st).unwrap();
        for t in 0..4 {
            let tot = st.log_forward_backward_total(t).unwrap();
            assert!((tot - ll).abs() < 1e-8 * ll.abs(), "t={t}: {tot} vs {ll}");
        }
    }

    #[test]
    fn backward_constant_density_is_column_sums() {
        // With f_{t+1} constant, b_t = c J A' b_{t+1}, i.e. column sums of A scaled.
        let p = SvareParams {
            beta0: 0.0,
            beta: vec![0.0, 0.0],
            ..params()
        };
        let g = build_grid(&p, 5, 7).unwrap();
        let d = dataset(&[&[(0.3, 0.0, 0.0)], &[(0.3, 0.0, 0.0)]]);
        let (_, st) = forward(&d, &p, &g).unwrap();
        let tr = st.transition.clone();
        let st = backward(st).unwrap();
        let b = &st.b.as_ref().unwrap()[0];
        // Reference for constant f: outer product of column sums.
        let cu: Vec<f64> = (0..5).map(|i| tr.a_u.column(i).sum()).collect();
        let ch: Vec<f64> = (0..7).map(|j| tr.a_h.column(j).sum()).collect();
        let stats = period_stats(&d, 0.0, &[0.0, 0.0]);
        let mut logf = vec![0.0; 35];
        fill_obs_logdensity(&stats[1], &g, &mut logf);
        // Here f is not constant, so instead compare against the direct double loop.
        let mut direct = DMatrix::zeros(5, 7);
        for i in 0..5 {
            for j in 0..7 {
                let mut s = 0.0;
                for i2 in 0..5 {
                    for j2 in 0..7 {
                        s += tr.a_u[(i2, i)] * tr.a_h[(j2, j)] * logf[i2 + 5 * j2].exp();
                    }
                }
                direct[(i, j)] = g.jacobian() * s;
            }
        }
        let scale = direct.sum();
        for i in 0..5 {
            for j in 0..7 {
                assert!((b[(i, j)] - direct[(i, j)] / scale).abs() < 1e-12);
            }
        }
        // Constant-density separable case.
        let mut sep = DMatrix::from_fn(5, 7, |i, j| cu[i] * ch[j]);
        sep /= sep.sum();
        let ones = DMatrix::from_element(5, 7, 1.0);
        let mut tmp = DMatrix::zeros(5, 7);
        let mut out = DMatrix::zeros(5, 7);
        tr.propagate_transposed(&ones, &mut tmp, &mut out);
        out /= out.sum();
        assert!((out - sep).abs().max() < 1e-14);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut p = params();
        let g = build_grid(&p, 5, 5).unwrap();
        let d = dataset(&[&[(0.9, 0.5, 1.0)]]);
        p.rho = 1.0;
        assert!(loglik(&d, &p, &g).is_err());
        let mut p = params();
        p.beta.push(1.0);
        assert!(loglik(&d, &p, &g).is_err());
        let (_, st) = forward(&d, &params(), &g).unwrap();
        assert!(predict_states(&st, 1).is_err());
        assert!(predict_states(&st, 3).is_err());
        assert!(predict_states(&st, 2).is_ok());
        assert!(smooth_states(&st).is_err());
    }

    #[test]
    fn grid_starvation_is_reported() {
        // Nearly diagonal u-transitions and a tiny level-1 variance: all mass sits on
        // the top u-node after t=1 and the second observation sits on the bottom one.
        let p = SvareParams {
            beta0: 0.0,
            beta: vec![0.0, 0.0],
            rho: 0.999_999,
            sigma_eta: 0.001,
            alpha: -10.0,
            delta: 0.0,
            sigma_nu: 0.01,
        };
        let g = build_grid(&p, 5, 5).unwrap();
        let top = g.u.points[4];
        let d = dataset(&[&[(top, 0.0, 0.0)], &[(-top, 0.0, 0.0)]]);
        assert!(matches!(
            loglik(&d, &p, &g),
            Err(Error::GridStarvation { t: 2 })
        ));
    }

    #[test]
    fn price_prediction() {
        let x = DMatrix::zeros(2, 2);
        let y = predict_prices(&x, 0.25, 1.0, &[0.3, 0.1]).unwrap();
        assert_eq!(y, vec![1.25, 1.25]);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!((predict_prices(&x, 0.0, 1.0, &[0.3, 0.1]).unwrap()[0] - 1.5).abs() < 1e-15);
        assert!(predict_prices(&x, 0.0, 1.0, &[0.3]).is_err());
    }
}
