//! Synthetic repeated cross-sections from the three data-generating processes,
//! and brute-force likelihood oracles for small instances.
//!
//! Random streams: every draw comes from a ChaCha8 generator seeded with the
//! configured seed. Stream 0 drives `u_t`, stream 1 drives `h_t`, and period `t`
//! (0-based) uses stream `2 + 2t` for its level-1 noise and `3 + 2t` for its
//! covariates. Changing the covariate design never perturbs the latent paths.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{AreParams, FeParams};
use crate::data::{Dataset, Group};
use crate::error::{Error, Result};
use crate::quadrature::QuadGrid;
use crate::svcore::{normal_logpdf, period_stats, PeriodStats, SvareParams};

#[derive(Debug, Clone, PartialEq)]
pub enum SimModel {
    Fe(FeParams),
    Are(AreParams),
    Svare(SvareParams),
}

impl SimModel {
    fn n_covariates(&self) -> usize {
        match self {
            SimModel::Fe(p) => p.beta.len(),
            SimModel::Are(p) => p.beta.len(),
            SimModel::Svare(p) => p.beta.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum CovariateDist {
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// 0/1 dummy.
    Bernoulli {
        p: f64,
    },
}

impl CovariateDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CovariateDist::Normal { mean, sd } => mean.is_finite() && sd >= 0.0 && sd.is_finite(),
            CovariateDist::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low < high
            }
            CovariateDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid covariate distribution {self:?}"
            )))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CovariateDist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            CovariateDist::Uniform { low, high } => rng.random_range(low..high),
            CovariateDist::Bernoulli { p } => {
                if Bernoulli::new(p).expect("validated").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: SimModel,
    /// Items per period; its length is `T`.
    pub group_sizes: Vec<usize>,
    /// One distribution per covariate column, matching the slope count.
    pub covariates: Vec<CovariateDist>,
    pub seed: u64,
}

impl SimConfig {
    pub fn balanced(
        model: SimModel,
        periods: usize,
        n: usize,
        covariates: Vec<CovariateDist>,
        seed: u64,
    ) -> Self {
        Self {
            model,
            group_sizes: vec![n; periods],
            covariates,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "every period needs at least one item".into(),
            ));
        }
        if self.covariates.len() != self.model.n_covariates() {
            return Err(Error::InvalidArgument(format!(
                "{} covariate distributions for {} slopes",
                self.covariates.len(),
                self.model.n_covariates()
            )));
        }
        for c in &self.covariates {
            c.validate()?;
        }
        match &self.model {
            SimModel::Fe(p) => {
                if p.beta0_t.len() != self.group_sizes.len() {
                    return Err(Error::InvalidArgument(
                        "one intercept per period required".into(),
                    ));
                }
                if !(p.sigma2 > 0.0) {
                    return Err(Error::InvalidParams("sigma2 must be positive".into()));
                }
            }
            SimModel::Are(p) => p.validate()?,
            SimModel::Svare(p) => p.check_stationary()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: Dataset,
    /// True random effects (zero for the fixed-effects process).
    pub u: Vec<f64>,
    /// True log-variances (constant `ln sigma2` without stochastic volatility).
    pub h: Vec<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn ar1_path(rng: &mut ChaCha8Rng, len: usize, mean: f64, phi: f64, sd: f64) -> Vec<f64> {
    let c = mean * (1.0 - phi);
    let mut x = Vec::with_capacity(len);
    let z: f64 = rng.sample(StandardNormal);
    x.push(mean + sd / (1.0 - phi * phi).sqrt() * z);
    for t in 1..len {
        let z: f64 = rng.sample(StandardNormal);
        x.push(c + phi * x[t - 1] + sd * z);
    }
    x
}

/// Period labels `1..=T`.
pub fn period_labels(periods: usize) -> Vec<String> {
    (1..=periods).map(|t| t.to_string()).collect()
}

pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let t_len = cfg.group_sizes.len();
    let k = cfg.covariates.len();
    let (beta0, beta, u, h) = match &cfg.model {
        SimModel::Fe(p) => (
            0.0,
            p.beta.clone(),
            p.beta0_t.clone(),
            vec![p.sigma2.ln(); t_len],
        ),
        SimModel::Are(p) => {
            let u = ar1_path(
                &mut stream(cfg.seed, 0),
                t_len,
                0.0,
                p.rho,
                p.sigma2_eta.sqrt(),
            );
            (p.beta0, p.beta.clone(), u, vec![p.sigma2.ln(); t_len])
        }
        SimModel::Svare(p) => {
            let u = ar1_path(&mut stream(cfg.seed, 0), t_len, 0.0, p.rho, p.sigma_eta);
            let h = ar1_path(
                &mut stream(cfg.seed, 1),
                t_len,
                p.stationary_mean_h(),
                p.delta,
                p.sigma_nu,
            );
            (p.beta0, p.beta.clone(), u, h)
        }
    };
    let groups = cfg
        .group_sizes
        .iter()
        .enumerate()
        .map(|(t, &n)| {
            let mut noise = stream(cfg.seed, 2 + 2 * t as u64);
            let mut cov = stream(cfg.seed, 3 + 2 * t as u64);
            let x = DMatrix::from_fn(n, k, |_, j| cfg.covariates[j].draw(&mut cov));
            let sd = (0.5 * h[t]).exp();
            let y = DVector::from_fn(n, |i, _| {
                let eps: f64 = noise.sample(StandardNormal);
                let xb: f64 = (0..k).map(|j| x[(i, j)] * beta[j]).sum();
                beta0 + u[t] + xb + sd * eps
            });
            Group { y, x }
        })
        .collect();
    let names = (1..=k).map(|j| format!("x{j}")).collect();
    let dataset = Dataset::new(period_labels(t_len), groups, names)?;
    let u = match cfg.model {
        SimModel::Fe(_) => vec![0.0; t_len],
        _ => u,
    };
    Ok(SimOutput { dataset, u, h })
}

pub const ORACLE_MAX_PERIODS: usize = 3;
pub const ORACLE_MAX_POINTS: usize = 9;

/// Posterior means from brute-force enumeration of every node path.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePosterior {
    pub loglik: f64,
    pub filtered_u: Vec<f64>,
    pub filtered_h: Vec<f64>,
    pub smoothed_u: Vec<f64>,
    pub smoothed_h: Vec<f64>,
    /// `E(. | y_1..y_{t-1})` for `t = 1..=T+1`.
    pub predicted_u: Vec<f64>,
    pub predicted_h: Vec<f64>,
}

/// Running log-sum-exp of path weights with weighted sums of the states on
/// the path, all held relative to the current maximum.
struct PathSums {
    max: f64,
    total: f64,
    u: Vec<f64>,
    h: Vec<f64>,
}

impl PathSums {
    fn new(len: usize) -> Self {
        Self {
            max: f64::NEG_INFINITY,
            total: 0.0,
            u: vec![0.0; len],
            h: vec![0.0; len],
        }
    }

    fn add(&mut self, lw: f64, us: &[f64], hs: &[f64]) {
        if lw == f64::NEG_INFINITY {
            return;
        }
        if lw > self.max {
            let r = (self.max - lw).exp();
            self.total *= r;
            self.u
                .iter_mut()
                .chain(self.h.iter_mut())
                .for_each(|v| *v *= r);
            self.max = lw;
        }
        let w = (lw - self.max).exp();
        self.total += w;
        for (a, b) in self.u.iter_mut().zip(us) {
            *a += w * b;
        }
        for (a, b) in self.h.iter_mut().zip(hs) {
            *a += w * b;
        }
    }

    fn log_total(&self) -> f64 {
        self.max + self.total.ln()
    }

    fn mean_u(&self, s: usize) -> f64 {
        self.u[s] / self.total
    }

    fn mean_h(&self, s: usize) -> f64 {
        self.h[s] / self.total
    }
}

struct OracleTables<'a> {
    g: &'a QuadGrid,
    /// Log of `J w_u w_h` times the stationary density, per cell.
    init: Vec<f64>,
    /// `trans[c_prev * cells + c]`: log of `J w_u w_h` times the transition density.
    trans: Vec<f64>,
    /// `obs[t][c]`.
    obs: Vec<Vec<f64>>,
}

impl OracleTables<'_> {
    fn cell(&self, c: usize) -> (f64, f64) {
        let n_u = self.g.n_u();
        (self.g.u.points[c % n_u], self.g.h.points[c / n_u])
    }

    /// Sums over all paths of length `len`; observation densities enter for
    /// the first `observed` steps only.
    fn enumerate(&self, len: usize, observed: usize) -> PathSums {
        let cells = self.g.n_cells();
        let mut sums = PathSums::new(len);
        let mut path = vec![0usize; len];
        let mut us = vec![0.0; len];
        let mut hs = vec![0.0; len];
        let mut lw = vec![0.0; len];
        let mut depth = 0;
        path[0] = 0;
        // Iterative depth-first traversal; path[depth] is the next cell to try.
        loop {
            if path[depth] == cells {
                if depth == 0 {
                    break;
                }
                depth -= 1;
                path[depth] += 1;
                continue;
            }
            let c = path[depth];
            let base = if depth == 0 {
                self.init[c]
            } else {
                lw[depth - 1] + self.trans[path[depth - 1] * cells + c]
            };
            lw[depth] = base
                + if depth < observed {
                    self.obs[depth][c]
                } else {
                    0.0
                };
            let (u, h) = self.cell(c);
            us[depth] = u;
            hs[depth] = h;
            if depth + 1 == len {
                sums.add(lw[depth], &us, &hs);
                path[depth] += 1;
            } else {
                depth += 1;
                path[depth] = 0;
            }
        }
        sums
    }
}

fn oracle_tables<'a>(d: &Dataset, p: &SvareParams, g: &'a QuadGrid) -> Result<OracleTables<'a>> {
    p.check_stationary()?;
    if p.beta.len() != d.n_covariates() {
        return Err(Error::InvalidArgument(
            "slope count does not match covariates".into(),
        ));
    }
    let t_len = d.n_periods();
    if t_len == 0
        || t_len > ORACLE_MAX_PERIODS
        || g.n_u() > ORACLE_MAX_POINTS
        || g.n_h() > ORACLE_MAX_POINTS
    {
        return Err(Error::OracleTooLarge(format!(
            "T = {t_len}, n_u = {}, n_h = {} (limits T <= {ORACLE_MAX_PERIODS}, n <= {ORACLE_MAX_POINTS})",
            g.n_u(),
            g.n_h()
        )));
    }
    let cells = g.n_cells();
    let n_u = g.n_u();
    let ljac = g.jacobian().ln();
    let lw = |c: usize| ljac + g.u.weights[c % n_u].ln() + g.h.weights[c / n_u].ln();
    let (sd_u, sd_h, mu_h) = (
        p.stationary_sd_u(),
        p.stationary_sd_h(),
        p.stationary_mean_h(),
    );
    let pt = |c: usize| (g.u.points[c % n_u], g.h.points[c / n_u]);
    let init = (0..cells)
        .map(|c| {
            let (u, h) = pt(c);
            lw(c) + normal_logpdf(u, 0.0, sd_u) + normal_logpdf(h, mu_h, sd_h)
        })
        .collect();
    let mut trans = vec![0.0; cells * cells];
    for a in 0..cells {
        let (u0, h0) = pt(a);
        for b in 0..cells {
            let (u, h) = pt(b);
            trans[a * cells + b] = lw(b)
                + normal_logpdf(u, p.rho * u0, p.sigma_eta)
                + normal_logpdf(h, p.alpha + p.delta * h0, p.sigma_nu);
        }
    }
    // Observation densities item by item, independent of the sufficient statistics.
    let b = DVector::from_column_slice(&p.beta);
    let obs = d
        .groups()
        .iter()
        .map(|gr| {
            let mean = &gr.x * &b;
            (0..cells)
                .map(|c| {
                    let (u, h) = pt(c);
                    let sd = (0.5 * h).exp();
                    (0..gr.len())
                        .map(|i| normal_logpdf(gr.y[i], p.beta0 + mean[i] + u, sd))
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(OracleTables {
        g,
        init,
        trans,
        obs,
    })
}

/// Log-likelihood by direct summation over all `(n_u n_h)^T` node paths.
pub fn oracle_loglik_tensor(d: &Dataset, p: &SvareParams, g: &QuadGrid) -> Result<f64> {
    let tab = oracle_tables(d, p, g)?;
    let t_len = d.n_periods();
    Ok(tab.enumerate(t_len, t_len).log_total())
}

/// Filtered, smoothed and one-step-ahead means by direct summation.
pub fn oracle_posterior(d: &Dataset, p: &SvareParams, g: &QuadGrid) -> Result<OraclePosterior> {
    let tab = oracle_tables(d, p, g)?;
    let t_len = d.n_periods();
    let full = tab.enumerate(t_len, t_len);
    let mut out = OraclePosterior {
        loglik: full.log_total(),
        filtered_u: Vec::with_capacity(t_len),
        filtered_h: Vec::with_capacity(t_len),
        smoothed_u: (0..t_len).map(|s| full.mean_u(s)).collect(),
        smoothed_h: (0..t_len).map(|s| full.mean_h(s)).collect(),
        predicted_u: Vec::with_capacity(t_len + 1),
        predicted_h: Vec::with_capacity(t_len + 1),
    };
    for len in 1..=t_len {
        let f = tab.enumerate(len, len);
        out.filtered_u.push(f.mean_u(len - 1));
        out.filtered_h.push(f.mean_h(len - 1));
    }
    for len in 1..=t_len + 1 {
        let f = tab.enumerate(len, len - 1);
        out.predicted_u.push(f.mean_u(len - 1));
        out.predicted_h.push(f.mean_h(len - 1));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub loglik: f64,
    /// Standard error of `loglik` by batch means and the delta method.
    pub se: f64,
    pub paths: usize,
}

pub const MC_BATCHES: usize = 100;

fn period_loglik(s: &PeriodStats, u: f64, h: f64) -> f64 {
    let dm = s.mean - u;
    -0.5 * s.n * (std::f64::consts::TAU.ln() + h) - 0.5 * (-h).exp() * (s.ssw + s.n * dm * dm)
}

/// Log-likelihood by averaging the data density over latent paths drawn from
/// the prior. Batch `b` of [`MC_BATCHES`] uses ChaCha stream `b`.
pub fn oracle_loglik_mc(
    d: &Dataset,
    p: &SvareParams,
    paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    p.check_stationary()?;
    if p.beta.len() != d.n_covariates() {
        return Err(Error::InvalidArgument(
            "slope count does not match covariates".into(),
        ));
    }
    if paths < 2 * MC_BATCHES {
        return Err(Error::InvalidArgument(format!(
            "at least {} paths required",
            2 * MC_BATCHES
        )));
    }
    let stats = period_stats(d, p.beta0, &p.beta);
    let (sd_u, sd_h, mu_h) = (
        p.stationary_sd_u(),
        p.stationary_sd_h(),
        p.stationary_mean_h(),
    );
    let batch_log_means: Vec<f64> = (0..MC_BATCHES)
        .into_par_iter()
        .map(|b| {
            let size = paths / MC_BATCHES + usize::from(b < paths % MC_BATCHES);
            let mut rng = stream(seed, b as u64);
            let mut lws = Vec::with_capacity(size);
            for _ in 0..size {
                let mut u = sd_u * rng.sample::<f64, _>(StandardNormal);
                let mut h = mu_h + sd_h * rng.sample::<f64, _>(StandardNormal);
                let mut lw = 0.0;
                for (t, s) in stats.iter().enumerate() {
                    if t > 0 {
                        u = p.rho * u + p.sigma_eta * rng.sample::<f64, _>(StandardNormal);
                        h = p.alpha
                            + p.delta * h
                            + p.sigma_nu * rng.sample::<f64, _>(StandardNormal);
                    }
                    lw += period_loglik(s, u, h);
                }
                lws.push(lw);
            }
            log_mean_exp(&lws)
        })
        .collect();
    let loglik = log_mean_exp(&batch_log_means);
    let r: Vec<f64> = batch_log_means.iter().map(|l| (l - loglik).exp()).collect();
    let nb = r.len() as f64;
    let mean = r.iter().sum::<f64>() / nb;
    let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nb - 1.0);
    Ok(McEstimate {
        loglik,
        se: (var / nb).sqrt() / mean,
        paths,
    })
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{acf, moments};
    use crate::quadrature::build_grid;
    use crate::svcore;

    fn reference_svare(k: usize) -> SvareParams {
        SvareParams {
            beta0: 1.0,
            beta: vec![0.5; k],
            rho: 0.848,
            sigma_eta: 0.021f64.sqrt(),
            alpha: -0.142,
            delta: 0.931,
            sigma_nu: 0.158f64.sqrt(),
        }
    }

    #[test]
    fn seeded_determinism() {
        let cfg = SimConfig::balanced(
            SimModel::Svare(reference_svare(2)),
            5,
            4,
            vec![
                CovariateDist::Normal { mean: 0.0, sd: 1.0 },
                CovariateDist::Bernoulli { p: 0.3 },
            ],
            42,
        );
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.h, b.h);
        let c = simulate(&SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.u, c.u);
    }

    #[test]
    fn covariates_do_not_perturb_latent_paths() {
        let mut p = reference_svare(0);
        let a = simulate(&SimConfig::balanced(
            SimModel::Svare(p.clone()),
            6,
            3,
            vec![],
            7,
        ))
        .unwrap();
        p.beta = vec![1.0];
        let b = simulate(&SimConfig::balanced(
            SimModel::Svare(p),
            6,
            3,
            vec![CovariateDist::Uniform {
                low: 0.0,
                high: 1.0,
            }],
            7,
        ))
        .unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.h, b.h);
    }

    #[test]
    fn degenerate_volatility_recovers_sigma() {
        let sigma: f64 = 0.7;
        let p = SvareParams {
            beta0: 0.0,
            beta: vec![],
            rho: 0.5,
            sigma_eta: 0.3,
            alpha: 2.0 * sigma.ln(),
            delta: 0.0,
            sigma_nu: 1e-6,
        };
        let out = simulate(&SimConfig::balanced(
            SimModel::Svare(p),
            100,
            1000,
            vec![],
            3,
        ))
        .unwrap();
        let resid: Vec<f64> = out
            .dataset
            .groups()
            .iter()
            .zip(&out.u)
            .flat_map(|(g, u)| g.y.iter().map(move |y| y - u).collect::<Vec<_>>())
            .collect();
        let n = resid.len() as f64;
        let m = resid.iter().sum::<f64>() / n;
        let var = resid.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn independent_effects_have_small_lag_one_acf() {
        let p = AreParams {
            beta0: 0.0,
            beta: vec![],
            rho: 0.0,
            sigma2_eta: 1.0,
            sigma2: 1.0,
        };
        let out = simulate(&SimConfig::balanced(SimModel::Are(p), 400, 1, vec![], 8)).unwrap();
        let r = acf(&out.u, 1).unwrap();
        assert!(r[1].abs() < 2.0 / 20.0, "{}", r[1]);
    }

    #[test]
    fn stationary_initial_variance() {
        let p = reference_svare(0);
        let target = p.sigma_eta.powi(2) / (1.0 - p.rho * p.rho);
        let u1: Vec<f64> = (0..1000)
            .map(|s| {
                simulate(&SimConfig::balanced(
                    SimModel::Svare(p.clone()),
                    1,
                    1,
                    vec![],
                    s,
                ))
                .unwrap()
                .u[0]
            })
            .collect();
        let var = u1.iter().map(|v| v * v).sum::<f64>() / 1000.0;
        assert!((var / target - 1.0).abs() < 0.1, "{var} vs {target}");
    }

    #[test]
    fn sv_mixture_is_leptokurtic() {
        let p = reference_svare(0);
        let out = simulate(&SimConfig::balanced(SimModel::Svare(p), 200, 50, vec![], 5)).unwrap();
        let raw: Vec<f64> = out
            .dataset
            .groups()
            .iter()
            .zip(&out.u)
            .flat_map(|(g, u)| g.y.iter().map(move |y| y - 1.0 - u).collect::<Vec<_>>())
            .collect();
        assert!(moments(&raw).unwrap().kurtosis > 0.0);
    }

    #[test]
    fn fe_process_uses_period_intercepts() {
        let p = FeParams {
            beta0_t: vec![1.0, 5.0],
            beta: vec![],
            sigma2: 1e-10,
        };
        let out = simulate(&SimConfig::balanced(SimModel::Fe(p), 2, 3, vec![], 1)).unwrap();
        assert!((out.dataset.group(1).y[0] - 5.0).abs() < 1e-3);
        assert_eq!(out.u, vec![0.0, 0.0]);
    }

    #[test]
    fn invalid_configs() {
        let p = reference_svare(1);
        assert!(simulate(&SimConfig::balanced(
            SimModel::Svare(p.clone()),
            3,
            2,
            vec![],
            1
        ))
        .is_err());
        assert!(simulate(&SimConfig::balanced(
            SimModel::Svare(p),
            3,
            0,
            vec![CovariateDist::Bernoulli { p: 0.5 }],
            1
        ))
        .is_err());
    }

    fn small_instance(periods: usize, n: usize, seed: u64) -> (Dataset, SvareParams) {
        let p = SvareParams {
            beta0: 0.2,
            beta: vec![0.4],
            rho: 0.6,
            sigma_eta: 0.5,
            alpha: -0.3,
            delta: 0.7,
            sigma_nu: 0.4,
        };
        let out = simulate(&SimConfig::balanced(
            SimModel::Svare(p.clone()),
            periods,
            n,
            vec![CovariateDist::Normal { mean: 0.0, sd: 1.0 }],
            seed,
        ))
        .unwrap();
        (out.dataset, p)
    }

    #[test]
    fn tensor_matches_forward_for_one_period() {
        let (d, p) = small_instance(1, 3, 1);
        let g = build_grid(&p, 7, 5).unwrap();
        let a = oracle_loglik_tensor(&d, &p, &g).unwrap();
        let b = svcore::loglik(&d, &p, &g).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} {b}");
    }

    #[test]
    fn tensor_matches_forward_for_three_periods() {
        let (d, p) = small_instance(3, 2, 2);
        let g = build_grid(&p, 5, 7).unwrap();
        let a = oracle_loglik_tensor(&d, &p, &g).unwrap();
        let b = svcore::loglik(&d, &p, &g).unwrap();
        assert!(((a - b) / b).abs() < 1e-10, "{a} {b}");
    }

    #[test]
    fn tensor_guard() {
        let (d, p) = small_instance(4, 1, 3);
        let g = build_grid(&p, 5, 5).unwrap();
        assert!(matches!(
            oracle_loglik_tensor(&d, &p, &g),
            Err(Error::OracleTooLarge(_))
        ));
        let (d, p) = small_instance(2, 1, 3);
        let g = build_grid(&p, 11, 5).unwrap();
        assert!(matches!(
            oracle_posterior(&d, &p, &g),
            Err(Error::OracleTooLarge(_))
        ));
    }

    #[test]
    fn mc_matches_one_dimensional_reference() {
        // T = 1, one item: y ~ N(beta0, sd_u^2 + e^h) mixed over h ~ N(mu_h, sd_h^2).
        let p = SvareParams {
            beta0: 0.1,
            beta: vec![],
            rho: 0.5,
            sigma_eta: 0.4,
            alpha: -0.2,
            delta: 0.5,
            sigma_nu: 0.5,
        };
        let y = 0.9;
        let d = Dataset::new(
            vec!["1".into()],
            vec![Group {
                y: DVector::from_vec(vec![y]),
                x: DMatrix::zeros(1, 0),
            }],
            vec![],
        )
        .unwrap();
        let (sd_u, sd_h, mu_h) = (
            p.stationary_sd_u(),
            p.stationary_sd_h(),
            p.stationary_mean_h(),
        );
        let rule = crate::quadrature::gl_rule(200).unwrap();
        let reference = rule
            .integrate(mu_h - 12.0 * sd_h, mu_h + 12.0 * sd_h, |h| {
                svcore::normal_pdf(h, mu_h, sd_h)
                    * svcore::normal_pdf(y, p.beta0, (sd_u * sd_u + h.exp()).sqrt())
            })
            .ln();
        let est = oracle_loglik_mc(&d, &p, 1_000_000, 9).unwrap();
        assert!(
            (est.loglik - reference).abs() < 3.0 * est.se,
            "{est:?} vs {reference}"
        );
        let half = oracle_loglik_mc(&d, &p, 250_000, 9).unwrap();
        let ratio = half.se / est.se;
        assert!((ratio - 2.0).abs() < 0.5, "{ratio}");
    }
}
