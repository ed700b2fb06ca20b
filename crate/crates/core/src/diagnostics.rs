//! Residual diagnostics, forecast accuracy and the hedonic price index.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimate::FitResult;

/// Skewness and excess kurtosis in the `b1`/`b2` convention of Joanes and Gill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// `(g1, g2)`: moment-ratio skewness and excess kurtosis without bias adjustment.
pub fn moment_ratios(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if !(m2 > 0.0) {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

pub fn moments(x: &[f64]) -> Result<Moments> {
    if x.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "moments need at least 4 values, got {}",
            x.len()
        )));
    }
    let (g1, g2) = moment_ratios(x)?;
    let n = x.len() as f64;
    let shrink = (n - 1.0) / n;
    Ok(Moments {
        n: x.len(),
        skewness: g1 * shrink.powf(1.5),
        kurtosis: (g2 + 3.0) * shrink * shrink - 3.0,
    })
}

/// Per-period standard deviations with denominator `n_t - 1`.
pub fn period_sds(groups: &[Vec<f64>]) -> Result<Vec<f64>> {
    groups
        .iter()
        .enumerate()
        .map(|(t, g)| {
            if g.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "period {} has {} residuals; at least 2 needed",
                    t + 1,
                    g.len()
                )));
            }
            let n = g.len() as f64;
            let mean = g.iter().sum::<f64>() / n;
            Ok((g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlogram {
    /// Autocorrelations at lags `1..=L`.
    pub acf: Vec<f64>,
    /// Partial autocorrelations at lags `1..=L`.
    pub pacf: Vec<f64>,
    /// Half-width `1.96 / sqrt(T)` of the white-noise band.
    pub band: f64,
}

/// Sample autocorrelations at lags `0..=max_lag` with the biased (`1/T`) normalization.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag == 0 || x.len() <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= max lag < length, got lag {max_lag} for length {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let c = |k: usize| -> f64 {
        x.iter()
            .zip(&x[k..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n
    };
    let c0 = c(0);
    if !(c0 > 0.0) {
        return Err(Error::Degenerate("constant series".into()));
    }
    let mut out = vec![1.0];
    out.extend((1..=max_lag).map(|k| c(k) / c0));
    Ok(out)
}

/// Durbin-Levinson recursion on autocorrelations `r[0..=L]`.
pub fn pacf_from_acf(r: &[f64]) -> Vec<f64> {
    let max_lag = r.len() - 1;
    let mut phi = vec![0.0; max_lag + 1];
    let mut prev = vec![0.0; max_lag + 1];
    let mut out = Vec::with_capacity(max_lag);
    let mut v = 1.0;
    for k in 1..=max_lag {
        let num = r[k] - (1..k).map(|j| prev[j] * r[k - j]).sum::<f64>();
        let a = if v > 0.0 { num / v } else { 0.0 };
        phi[k] = a;
        for j in 1..k {
            phi[j] = prev[j] - a * prev[k - j];
        }
        v *= 1.0 - a * a;
        out.push(a);
        prev[..=k].copy_from_slice(&phi[..=k]);
    }
    out
}

pub fn acf_pacf(x: &[f64], max_lag: usize) -> Result<Correlogram> {
    let r = acf(x, max_lag)?;
    Ok(Correlogram {
        pacf: pacf_from_acf(&r),
        acf: r[1..].to_vec(),
        band: 1.96 / (x.len() as f64).sqrt(),
    })
}

/// Settings for the kernel estimate of the metric entropy `S_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyOptions {
    /// Points per axis of the integration grid.
    pub grid_points: usize,
    /// The grid spans the data range extended by this many bandwidths.
    pub range_bandwidths: f64,
    pub permutations: usize,
    pub seed: u64,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self {
            grid_points: 101,
            range_bandwidths: 3.0,
            permutations: 199,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyDiag {
    pub lags: Vec<usize>,
    pub s: Vec<f64>,
    pub band90: Vec<f64>,
    pub band95: Vec<f64>,
}

/// Silverman's rule of thumb `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Kernel weights `K_h(g - x_t)` as a `len(x) x len(grid)` matrix plus the
/// marginal density on the grid.
struct AxisKde {
    grid: Vec<f64>,
    weights: Vec<f64>,
    kernel: DMatrix<f64>,
    density: Vec<f64>,
}

impl AxisKde {
    fn new(x: &[f64], opts: &EntropyOptions) -> Result<Self> {
        let bw = silverman_bandwidth(x);
        if !(bw > 0.0 && bw.is_finite()) {
            return Err(Error::Degenerate("constant series".into()));
        }
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min) - opts.range_bandwidths * bw;
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) + opts.range_bandwidths * bw;
        let m = opts.grid_points;
        let step = (hi - lo) / (m - 1) as f64;
        let grid: Vec<f64> = (0..m).map(|i| lo + step * i as f64).collect();
        let mut weights = vec![step; m];
        weights[0] *= 0.5;
        weights[m - 1] *= 0.5;
        let norm = 1.0 / (bw * (2.0 * std::f64::consts::PI).sqrt());
        let kernel = DMatrix::from_fn(x.len(), m, |t, i| {
            let z = (grid[i] - x[t]) / bw;
            norm * (-0.5 * z * z).exp()
        });
        let n = x.len() as f64;
        let density = (0..m).map(|i| kernel.column(i).sum() / n).collect();
        Ok(Self {
            grid,
            weights,
            kernel,
            density,
        })
    }
}

/// `S_k` for one lag: half the squared Hellinger distance between the kernel
/// estimates of the joint density of `(x_t, x_{t+k})` and the product of the
/// marginals, integrated by the trapezoid rule.
pub fn entropy_sk(x: &[f64], lag: usize, opts: &EntropyOptions) -> Result<f64> {
    if lag == 0 || x.len() < lag + 3 {
        return Err(Error::InvalidArgument(format!(
            "lag {lag} too large for {} values",
            x.len()
        )));
    }
    if opts.grid_points < 3 {
        return Err(Error::InvalidArgument(
            "entropy grid needs at least 3 points".into(),
        ));
    }
    let a = AxisKde::new(&x[..x.len() - lag], opts)?;
    let b = AxisKde::new(&x[lag..], opts)?;
    let m = (x.len() - lag) as f64;
    let joint = a.kernel.transpose() * &b.kernel / m;
    let mut s = 0.0;
    for j in 0..b.grid.len() {
        for i in 0..a.grid.len() {
            let d = joint[(i, j)].sqrt() - (a.density[i] * b.density[j]).sqrt();
            s += a.weights[i] * b.weights[j] * d * d;
        }
    }
    Ok((0.5 * s).clamp(0.0, 1.0))
}

fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// `S_k` at lags `1..=max_lag` with permutation bands (90th and 95th
/// percentiles under serial independence). Permutation `b` uses stream `b` of
/// a ChaCha generator seeded by `opts.seed`.
pub fn entropy_test(x: &[f64], max_lag: usize, opts: &EntropyOptions) -> Result<EntropyDiag> {
    if max_lag == 0 || x.len() <= max_lag + 10 {
        return Err(Error::InvalidArgument(format!(
            "entropy test needs more than {} values for {max_lag} lags",
            max_lag + 10
        )));
    }
    if opts.permutations < 99 {
        return Err(Error::InvalidArgument(format!(
            "at least 99 permutations required, got {}",
            opts.permutations
        )));
    }
    let lags: Vec<usize> = (1..=max_lag).collect();
    let s = lags
        .iter()
        .map(|&k| entropy_sk(x, k, opts))
        .collect::<Result<Vec<_>>>()?;
    let null: Vec<Vec<f64>> = (0..opts.permutations)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let mut perm = x.to_vec();
            perm.shuffle(&mut rng);
            lags.iter().map(|&k| entropy_sk(&perm, k, opts)).collect()
        })
        .collect::<Result<_>>()?;
    let column = |k: usize| null.iter().map(|r| r[k]).collect::<Vec<_>>();
    Ok(EntropyDiag {
        band90: (0..max_lag).map(|k| quantile(column(k), 0.90)).collect(),
        band95: (0..max_lag).map(|k| quantile(column(k), 0.95)).collect(),
        lags,
        s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeveneTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Midranks (1-based) of `v` and the tie correction term `sum(t^3 - t)`.
/// Values within a relative `1e-12` count as tied, so the two central
/// deviations of an even-sized group tie despite rounding in the median.
fn midranks(v: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        let first = v[idx[i]];
        while j < idx.len() && v[idx[j]] - first <= 1e-12 * first.abs() {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// Rank-based Levene test: Kruskal-Wallis on absolute deviations from each
/// group's median, chi-square reference with `groups - 1` degrees of freedom.
pub fn rank_levene(groups: &[Vec<f64>]) -> Result<LeveneTest> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::InvalidArgument(
            "rank Levene test needs at least 2 groups of at least 2 values".into(),
        ));
    }
    let dev: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g);
            g.iter().map(|v| (v - m).abs()).collect()
        })
        .collect();
    let pooled: Vec<f64> = dev.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let correction = 1.0 - ties / (n * n * n - n);
    if !(correction > 0.0) {
        return Err(Error::Degenerate("all absolute deviations are tied".into()));
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in &dev {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let statistic = h.max(0.0);
    let df = groups.len() - 1;
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(LeveneTest {
        statistic,
        df,
        p_value: chi.sf(statistic),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionMetrics {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
}

pub fn prediction_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<PredictionMetrics> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "prediction metrics need equal nonzero lengths, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (a, b) in y_true.iter().zip(y_pred) {
        let e = a - b;
        abs += e.abs();
        sq += e * e;
    }
    Ok(PredictionMetrics {
        n: y_true.len(),
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexBase {
    /// `exp(beta0_t - beta0_b)`.
    #[default]
    Natural,
    /// `10^(beta0_t - beta0_b)`, matching a base-10 log response.
    Ten,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceIndex {
    pub base: String,
    pub times: Vec<String>,
    pub intercepts: Vec<f64>,
    pub index: Vec<f64>,
}

pub fn index_from_intercepts(
    times: &[String],
    intercepts: &[f64],
    base: &str,
    exponent: IndexBase,
) -> Result<PriceIndex> {
    if times.len() != intercepts.len() {
        return Err(Error::InvalidArgument(
            "one intercept per period required".into(),
        ));
    }
    let b = times
        .iter()
        .position(|t| t == base)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown base period '{base}'")))?;
    let index = intercepts
        .iter()
        .enumerate()
        .map(|(t, v)| {
            if t == b {
                return 100.0;
            }
            let d = v - intercepts[b];
            100.0
                * match exponent {
                    IndexBase::Natural => d.exp(),
                    IndexBase::Ten => 10f64.powf(d),
                }
        })
        .collect();
    Ok(PriceIndex {
        base: base.to_string(),
        times: times.to_vec(),
        intercepts: intercepts.to_vec(),
        index,
    })
}

/// Index from the period intercepts of a fit (`beta0 + u_t` smoothed for the
/// random-effects models).
pub fn price_index(fit: &FitResult, base: &str, exponent: IndexBase) -> Result<PriceIndex> {
    let intercepts = fit.period_intercepts();
    if intercepts.is_empty() {
        return Err(Error::InvalidArgument(
            "fit has no smoothed random effects".into(),
        ));
    }
    index_from_intercepts(&fit.times, &intercepts, base, exponent)
}
