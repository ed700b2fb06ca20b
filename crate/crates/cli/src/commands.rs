use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use svare::baseline::{fit_are, fit_fe};
use svare::data::{read_table, split_holdout, CodingPlan, CsvSpec};
use svare::diagnostics::{
    acf_pacf, entropy_test, index_from_intercepts, moments, period_sds, prediction_metrics,
    rank_levene, EntropyOptions, IndexBase,
};
use svare::estimate::{BfgsOptions, FitResult, ModelParams, SvareFitOptions};
use svare::{load_csv, Dataset, Model};

use crate::config::{self, Config};
use crate::Flags;

pub enum Outcome {
    Done,
    NotConverged,
}

const FIT_ECHO: &str = "config.resolved.toml";

/// Loads the config (from `--config`, else the echo of an earlier fit) and
/// applies flag overrides.
pub fn resolve(flags: &Flags) -> Result<Config> {
    let mut cfg = match (&flags.config, &flags.fit) {
        (Some(path), _) => config::load(Some(path))?,
        (None, Some(dir)) if dir.join(FIT_ECHO).exists() => {
            config::load(Some(&dir.join(FIT_ECHO)))?
        }
        _ => Config::default(),
    };
    if let Some(p) = &flags.data {
        cfg.data.path = Some(p.clone());
    }
    if let Some(m) = flags.model {
        cfg.fit.model = m;
        cfg.simulate.model = m;
    }
    if let Some(s) = flags.seed {
        cfg.fit.seed = s;
        cfg.diagnose.seed = s;
        cfg.simulate.seed = s;
    }
    if flags.threads.is_some() {
        cfg.fit.threads = flags.threads;
    }
    if flags.nu.is_some() {
        cfg.fit.nu = flags.nu;
    }
    if flags.nh.is_some() {
        cfg.fit.nh = flags.nh;
    }
    if let Some(b) = &flags.base {
        cfg.diagnose.base = Some(b.clone());
    }
    if let Some(h) = &flags.holdout {
        cfg.fit.holdout = Some(h.clone());
    }
    if let Some(dir) = &flags.fit {
        cfg.fit.artifacts = Some(dir.clone());
    }
    if let Some(p) = &cfg.data.path {
        if let Ok(abs) = std::fs::canonicalize(p) {
            cfg.data.path = Some(abs);
        }
    }
    if let Some(p) = &cfg.fit.artifacts {
        if let Ok(abs) = std::fs::canonicalize(p) {
            cfg.fit.artifacts = Some(abs);
        }
    }
    Ok(cfg)
}

/// Summary written to `fit.json`; also the input of forecast, diagnose and index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: Model,
    pub loglik: f64,
    pub loglik_start: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub convergence: ConvergenceSummary,
    pub se_available: bool,
    pub grid_points: Option<(usize, usize)>,
    pub covariate_names: Vec<String>,
    pub times: Vec<String>,
    pub period_intercepts: Vec<f64>,
    pub forecast_intercept: f64,
    pub slopes: Vec<f64>,
    pub estimates: Vec<EstimateRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub converged: bool,
    pub status: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRow {
    pub parameter: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_headers(path: &Path) -> Result<Vec<String>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect())
}

fn data_path(cfg: &Config) -> Result<&Path> {
    cfg.data
        .path
        .as_deref()
        .context("no input data: pass --data or set [data] path")
}

fn artifacts_dir(cfg: &Config) -> Result<&Path> {
    cfg.fit
        .artifacts
        .as_deref()
        .context("no fit artifacts: pass --fit or set [fit] artifacts")
}

/// The configured coding plan, or every column other than time and response
/// passed through as numeric.
fn coding_plan(cfg: &Config, path: &Path) -> Result<CodingPlan> {
    if !cfg.coding.variables.is_empty() {
        return Ok(cfg.coding.clone());
    }
    let headers = read_headers(path)?;
    let names: Vec<&String> = headers
        .iter()
        .filter(|h| **h != cfg.data.time && **h != cfg.data.response)
        .collect();
    Ok(CodingPlan::numeric(&names))
}

fn load_dataset(cfg: &Config) -> Result<Dataset> {
    let path = data_path(cfg)?;
    let plan = coding_plan(cfg, path)?;
    load_csv(
        path,
        &plan,
        &cfg.data.time,
        &cfg.data.response,
        cfg.data.log10,
    )
    .with_context(|| format!("loading {}", path.display()))
}

fn summarize(fit: &FitResult, covariate_names: &[String]) -> Result<FitSummary> {
    Ok(FitSummary {
        model: fit.model,
        loglik: fit.loglik,
        loglik_start: fit.loglik_start,
        aic: fit.aic,
        bic: fit.bic,
        n_params: fit.n_params,
        n_obs: fit.n_obs,
        convergence: ConvergenceSummary {
            converged: fit.converged(),
            status: fit.convergence.status.as_str().to_string(),
            iterations: fit.convergence.iterations,
            evaluations: fit.convergence.evaluations,
            gradient_norm: fit.convergence.gradient_norm,
        },
        se_available: fit.se_available,
        grid_points: fit.grid_points,
        covariate_names: covariate_names.to_vec(),
        times: fit.times.clone(),
        period_intercepts: fit.period_intercepts(),
        forecast_intercept: fit.forecast_intercept()?,
        slopes: fit.slopes().to_vec(),
        estimates: fit
            .estimates
            .iter()
            .map(|e| EstimateRow {
                parameter: e.name.clone(),
                estimate: e.value,
                se: (fit.se_available && e.se.is_finite()).then_some(e.se),
            })
            .collect(),
    })
}

fn write_estimates(path: &Path, summary: &FitSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["parameter", "estimate", "se"])?;
    for e in &summary.estimates {
        w.write_record([e.parameter.clone(), fmt(e.estimate), fmt_opt(e.se)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_states(path: &Path, fit: &FitResult) -> Result<()> {
    let Some(s) = &fit.states else {
        return Ok(());
    };
    let mut w = csv_writer(path)?;
    w.write_record([
        "t",
        "filtered_u",
        "filtered_h",
        "smoothed_u",
        "smoothed_h",
        "predicted_u",
        "predicted_h",
        "eta",
        "nu",
    ])?;
    for (t, label) in fit.times.iter().enumerate() {
        let lag = t.checked_sub(1);
        w.write_record([
            label.clone(),
            fmt(s.filtered_u[t]),
            fmt(s.filtered_h[t]),
            fmt(s.smoothed_u[t]),
            fmt(s.smoothed_h[t]),
            fmt(s.predicted_u[t]),
            fmt(s.predicted_h[t]),
            fmt_opt(lag.and_then(|i| s.level2_eta.get(i).copied())),
            fmt_opt(lag.and_then(|i| s.level2_nu.get(i).copied())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_residuals(path: &Path, fit: &FitResult) -> Result<()> {
    let fe_scale = match &fit.params {
        ModelParams::Fe(p) => Some(p.sigma2.sqrt()),
        _ => None,
    };
    let mut w = csv_writer(path)?;
    w.write_record(["time", "residual", "standardized"])?;
    for (t, label) in fit.times.iter().enumerate() {
        for (i, r) in fit.level1_residuals[t].iter().enumerate() {
            let z = match (&fit.states, fe_scale) {
                (Some(s), _) => s.level1_std_residuals[t][i],
                (None, Some(sd)) => r / sd,
                (None, None) => f64::NAN,
            };
            w.write_record([label.clone(), fmt(*r), fmt(z)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn fit(cfg: Config, out: &Path) -> Result<Outcome> {
    let full = load_dataset(&cfg)?;
    let (train, test) = match &cfg.fit.holdout {
        Some(h) => {
            let (train, test) = split_holdout(&full, config::parse_holdout(h, cfg.fit.seed)?)?;
            (train, Some(test))
        }
        None => (full, None),
    };
    info!(
        "fitting {} on {} periods, {} rows",
        cfg.fit.model.as_str(),
        train.n_periods(),
        train.n_total()
    );
    let bfgs = BfgsOptions {
        max_iter: cfg.fit.max_iter,
        grad_tol: cfg.fit.grad_tol,
        rel_tol: cfg.fit.rel_tol,
        ..BfgsOptions::default()
    };
    let result = match cfg.fit.model {
        Model::Fe => fit_fe(&train)?,
        Model::Are => fit_are(&train, None, &bfgs)?,
        Model::Svare => {
            let opts = SvareFitOptions {
                n_u: cfg.fit.nu,
                n_h: cfg.fit.nh,
                grid_multiplier: cfg.fit.grid_multiplier,
                bfgs,
                ..SvareFitOptions::default()
            };
            svare::fit_svare(&train, None, &opts)?
        }
    };
    let summary = summarize(&result, train.covariate_names())?;
    write_estimates(&out.join("estimates.csv"), &summary)?;
    write_json(&out.join("fit.json"), &summary)?;
    write_states(&out.join("states.csv"), &result)?;
    write_residuals(&out.join("residuals.csv"), &result)?;
    if let Some(test) = test.filter(|t| t.n_periods() > 0) {
        test.write_csv_path(out.join("holdout.csv"))?;
    }
    config::echo(&cfg, &out.join(FIT_ECHO))?;
    Ok(if result.converged() {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn read_summary(dir: &Path) -> Result<FitSummary> {
    let path = dir.join("fit.json");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct ForecastMetrics {
    n: usize,
    mae: f64,
    rmse: f64,
    n_forecast: usize,
    n_in_sample: usize,
}

/// New rows may be either raw (coded with the fit's plan) or already coded
/// with the fitted column names, as in `holdout.csv`.
pub fn forecast(cfg: Config, out: &Path) -> Result<Outcome> {
    let dir = artifacts_dir(&cfg)?.to_path_buf();
    let summary = read_summary(&dir)?;
    let fit_cfg = config::load(Some(&dir.join(FIT_ECHO)))?;
    let path = data_path(&cfg)?;
    let headers = read_headers(path)?;
    if headers.iter().all(|h| h.is_empty()) {
        bail!("{} is empty", path.display());
    }
    let coded = summary.covariate_names.iter().all(|n| headers.contains(n))
        && headers.iter().any(|h| h == "time");
    let (plan, time_col, response_col, log10) = if coded {
        (
            CodingPlan::numeric(&summary.covariate_names),
            "time",
            "response",
            false,
        )
    } else {
        (
            coding_plan(&fit_cfg, path)?,
            fit_cfg.data.time.as_str(),
            fit_cfg.data.response.as_str(),
            fit_cfg.data.log10,
        )
    };
    if plan.column_names() != summary.covariate_names {
        bail!(
            "covariate columns {:?} do not match the fitted columns {:?}",
            plan.column_names(),
            summary.covariate_names
        );
    }
    let has_truth = headers.iter().any(|h| h == response_col);
    let spec = CsvSpec {
        plan: &plan,
        time_col,
        response_col: has_truth.then_some(response_col),
        log_transform: log10,
    };
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let table = read_table(std::io::BufReader::new(file), &spec)
        .with_context(|| format!("loading {}", path.display()))?;
    if table.n_rows() == 0 {
        bail!("{} has no rows", path.display());
    }

    let mut w = csv_writer(&out.join("forecasts.csv"))?;
    let mut header = vec!["row", "time", "kind", "predicted"];
    if has_truth {
        header.extend(["observed", "error"]);
    }
    w.write_record(&header)?;
    let mut predicted = Vec::with_capacity(table.n_rows());
    let mut n_forecast = 0;
    for i in 0..table.n_rows() {
        let label = &table.times[i];
        let (kind, intercept) = match summary.times.iter().position(|t| t == label) {
            Some(t) => ("in_sample", summary.period_intercepts[t]),
            None => {
                n_forecast += 1;
                ("forecast", summary.forecast_intercept)
            }
        };
        let y_hat = intercept
            + summary
                .slopes
                .iter()
                .enumerate()
                .map(|(j, b)| b * table.x[(i, j)])
                .sum::<f64>();
        predicted.push(y_hat);
        let mut rec = vec![
            (i + 1).to_string(),
            label.clone(),
            kind.to_string(),
            fmt(y_hat),
        ];
        if let Some(y) = &table.response {
            rec.push(fmt(y[i]));
            rec.push(fmt(y[i] - y_hat));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let metrics_path = out.join("metrics.json");
    if let Some(y) = &table.response {
        let m = prediction_metrics(y, &predicted)?;
        write_json(
            &metrics_path,
            &ForecastMetrics {
                n: m.n,
                mae: m.mae,
                rmse: m.rmse,
                n_forecast,
                n_in_sample: m.n - n_forecast,
            },
        )?;
    } else if metrics_path.exists() {
        std::fs::remove_file(&metrics_path)?;
    }
    config::echo(&cfg, &out.join("forecast.resolved.toml"))?;
    Ok(Outcome::Done)
}

#[derive(Debug, Deserialize)]
struct ResidualRow {
    time: String,
    #[allow(dead_code)]
    residual: Option<f64>,
    standardized: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct StateRow {
    eta: Option<f64>,
    nu: Option<f64>,
}

/// Standardized level-1 residuals grouped by period, in fit order.
fn read_residual_groups(dir: &Path, times: &[String]) -> Result<Vec<Vec<f64>>> {
    let path = dir.join("residuals.csv");
    let mut rdr =
        csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut groups = vec![Vec::new(); times.len()];
    for row in rdr.deserialize() {
        let row: ResidualRow = row.with_context(|| format!("reading {}", path.display()))?;
        let t = times
            .iter()
            .position(|l| *l == row.time)
            .with_context(|| format!("unknown period '{}' in {}", row.time, path.display()))?;
        let z = row
            .standardized
            .with_context(|| format!("missing standardized residual in {}", path.display()))?;
        groups[t].push(z);
    }
    Ok(groups)
}

fn read_level2(dir: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let path = dir.join("states.csv");
    if !path.exists() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut rdr =
        csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    let (mut eta, mut nu) = (Vec::new(), Vec::new());
    for row in rdr.deserialize() {
        let row: StateRow = row.with_context(|| format!("reading {}", path.display()))?;
        eta.extend(row.eta);
        nu.extend(row.nu);
    }
    Ok((eta, nu))
}

pub fn diagnose(cfg: Config, out: &Path) -> Result<Outcome> {
    let dir = artifacts_dir(&cfg)?.to_path_buf();
    let summary = read_summary(&dir)?;
    let groups = read_residual_groups(&dir, &summary.times)?;
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let (eta, nu) = read_level2(&dir)?;
    let mut series: Vec<(&str, &[f64])> = vec![("level1", &pooled)];
    if !eta.is_empty() {
        series.push(("eta", &eta));
    }
    if !nu.is_empty() {
        series.push(("nu", &nu));
    }

    let mut w = csv_writer(&out.join("moments.csv"))?;
    w.write_record(["series", "n", "skewness", "kurtosis"])?;
    for (name, x) in &series {
        match moments(x) {
            Ok(m) => w.write_record([
                name.to_string(),
                m.n.to_string(),
                fmt(m.skewness),
                fmt(m.kurtosis),
            ])?,
            Err(e) => warn!("skipping moments of {name}: {e}"),
        }
    }
    w.flush()?;

    let mut w = csv_writer(&out.join("period_sd.csv"))?;
    w.write_record(["time", "n", "sd"])?;
    let sds = period_sds(&groups)?;
    for ((label, g), sd) in summary.times.iter().zip(&groups).zip(&sds) {
        w.write_record([label.clone(), g.len().to_string(), fmt(*sd)])?;
    }
    w.flush()?;

    let lags = cfg.diagnose.lags;
    let mut wc = csv_writer(&out.join("correlogram.csv"))?;
    wc.write_record(["series", "lag", "acf", "pacf", "band"])?;
    let mut we = csv_writer(&out.join("entropy.csv"))?;
    we.write_record(["series", "lag", "s", "band90", "band95"])?;
    let opts = EntropyOptions {
        grid_points: cfg.diagnose.grid_points,
        permutations: cfg.diagnose.permutations,
        seed: cfg.diagnose.seed,
        ..EntropyOptions::default()
    };
    for (name, x) in series.iter().skip(1) {
        match acf_pacf(x, lags) {
            Ok(c) => {
                for l in 0..c.acf.len() {
                    wc.write_record([
                        name.to_string(),
                        (l + 1).to_string(),
                        fmt(c.acf[l]),
                        fmt(c.pacf[l]),
                        fmt(c.band),
                    ])?;
                }
            }
            Err(e) => warn!("skipping correlogram of {name}: {e}"),
        }
        match entropy_test(x, lags, &opts) {
            Ok(d) => {
                for i in 0..d.lags.len() {
                    we.write_record([
                        name.to_string(),
                        d.lags[i].to_string(),
                        fmt(d.s[i]),
                        fmt(d.band90[i]),
                        fmt(d.band95[i]),
                    ])?;
                }
            }
            Err(e) => warn!("skipping entropy test of {name}: {e}"),
        }
    }
    wc.flush()?;
    we.flush()?;

    let levene = rank_levene(&groups)?;
    write_json(&out.join("levene.json"), &levene)?;
    config::echo(&cfg, &out.join("diagnose.resolved.toml"))?;
    Ok(Outcome::Done)
}

pub fn index(cfg: Config, out: &Path) -> Result<Outcome> {
    let dir = artifacts_dir(&cfg)?.to_path_buf();
    let summary = read_summary(&dir)?;
    let base = match &cfg.diagnose.base {
        Some(b) => b.clone(),
        None => summary
            .times
            .first()
            .cloned()
            .context("fit has no periods")?,
    };
    let exponent = cfg.diagnose.exponent.unwrap_or(if cfg.data.log10 {
        IndexBase::Ten
    } else {
        IndexBase::Natural
    });
    let idx = index_from_intercepts(&summary.times, &summary.period_intercepts, &base, exponent)?;
    let mut w = csv_writer(&out.join("index.csv"))?;
    w.write_record(["time", "intercept", "index"])?;
    for i in 0..idx.times.len() {
        w.write_record([
            idx.times[i].clone(),
            fmt(idx.intercepts[i]),
            fmt(idx.index[i]),
        ])?;
    }
    w.flush()?;
    config::echo(&cfg, &out.join("index.resolved.toml"))?;
    Ok(Outcome::Done)
}

pub fn simulate(cfg: Config, out: &Path) -> Result<Outcome> {
    let sim = svare::simulate::simulate(&cfg.simulate.to_sim_config()?)?;
    sim.dataset.write_csv_path(out.join("data.csv"))?;
    let mut w = csv_writer(&out.join("latent.csv"))?;
    w.write_record(["time", "u", "h"])?;
    for (t, label) in sim.dataset.times().iter().enumerate() {
        w.write_record([label.clone(), fmt(sim.u[t]), fmt(sim.h[t])])?;
    }
    w.flush()?;
    config::echo(&cfg, &out.join("simulate.resolved.toml"))?;
    Ok(Outcome::Done)
}
