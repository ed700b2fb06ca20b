use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use svare::baseline::{AreParams, FeParams};
use svare::data::{CodingPlan, HoldoutMode};
use svare::diagnostics::IndexBase;
use svare::simulate::{CovariateDist, SimConfig, SimModel};
use svare::svcore::SvareParams;
use svare::Model;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub coding: CodingPlan,
    pub fit: FitSection,
    pub diagnose: DiagnoseSection,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub time: String,
    pub response: String,
    /// Model `log10(response)`.
    pub log10: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            time: "time".into(),
            response: "response".into(),
            log10: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub model: Model,
    pub nu: Option<usize>,
    pub nh: Option<usize>,
    pub grid_multiplier: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// `last` or `random:N`.
    pub holdout: Option<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Output directory of an earlier fit, read by forecast, diagnose and index.
    pub artifacts: Option<PathBuf>,
}

impl Default for FitSection {
    fn default() -> Self {
        let b = svare::estimate::BfgsOptions::default();
        Self {
            model: Model::Svare,
            nu: None,
            nh: None,
            grid_multiplier: svare::quadrature::DEFAULT_WIDTH_MULTIPLIER,
            max_iter: b.max_iter,
            grad_tol: b.grad_tol,
            rel_tol: b.rel_tol,
            holdout: None,
            seed: 1,
            threads: None,
            artifacts: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub lags: usize,
    pub permutations: usize,
    pub grid_points: usize,
    pub seed: u64,
    /// Base period of the price index; the first period when absent.
    pub base: Option<String>,
    /// Defaults to `ten` when the response was modelled on the log10 scale.
    pub exponent: Option<IndexBase>,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            lags: 10,
            permutations: 199,
            grid_points: 101,
            seed: 1,
            base: None,
            exponent: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub model: Model,
    pub periods: usize,
    /// Items per period when `group_sizes` is absent.
    pub n: usize,
    pub group_sizes: Option<Vec<usize>>,
    pub seed: u64,
    pub params: SimParams,
    pub covariates: Vec<CovariateDist>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            model: Model::Svare,
            periods: 28,
            n: 30,
            group_sizes: None,
            seed: 1,
            params: SimParams::default(),
            covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub beta0: f64,
    /// Fixed-effects intercepts, one per period.
    pub beta0_t: Option<Vec<f64>>,
    pub beta: Vec<f64>,
    pub rho: f64,
    pub sigma2_eta: f64,
    pub sigma2: f64,
    pub alpha: f64,
    pub delta: f64,
    pub sigma2_nu: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            beta0_t: None,
            beta: Vec::new(),
            rho: 0.848,
            sigma2_eta: 0.021,
            sigma2: 0.226,
            alpha: -0.142,
            delta: 0.931,
            sigma2_nu: 0.158,
        }
    }
}

impl SimulateSection {
    pub fn to_sim_config(&self) -> Result<SimConfig> {
        let p = &self.params;
        let sizes = match &self.group_sizes {
            Some(s) => s.clone(),
            None => vec![self.n; self.periods],
        };
        let model = match self.model {
            Model::Fe => SimModel::Fe(FeParams {
                beta0_t: p
                    .beta0_t
                    .clone()
                    .unwrap_or_else(|| vec![p.beta0; sizes.len()]),
                beta: p.beta.clone(),
                sigma2: p.sigma2,
            }),
            Model::Are => SimModel::Are(AreParams {
                beta0: p.beta0,
                beta: p.beta.clone(),
                rho: p.rho,
                sigma2_eta: p.sigma2_eta,
                sigma2: p.sigma2,
            }),
            Model::Svare => {
                if p.sigma2_eta < 0.0 || p.sigma2_nu < 0.0 {
                    bail!("variances must be nonnegative");
                }
                SimModel::Svare(SvareParams {
                    beta0: p.beta0,
                    beta: p.beta.clone(),
                    rho: p.rho,
                    sigma_eta: p.sigma2_eta.sqrt(),
                    alpha: p.alpha,
                    delta: p.delta,
                    sigma_nu: p.sigma2_nu.sqrt(),
                })
            }
        };
        let cfg = SimConfig {
            model,
            group_sizes: sizes,
            covariates: self.covariates.clone(),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_holdout(s: &str, seed: u64) -> Result<HoldoutMode> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("last") {
        return Ok(HoldoutMode::LastPeriod);
    }
    if let Some(n) = s.strip_prefix("random:") {
        let count = n
            .trim()
            .parse()
            .with_context(|| format!("invalid holdout count in '{s}'"))?;
        return Ok(HoldoutMode::RandomRows { count, seed });
    }
    bail!("holdout must be 'last' or 'random:N', got '{s}'")
}

pub fn load(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: Config =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    // Relative data paths are relative to the config file.
    if let (Some(data), Some(dir)) = (&cfg.data.path, path.parent()) {
        if data.is_relative() {
            cfg.data.path = Some(dir.join(data));
        }
    }
    Ok(cfg)
}

/// Writes the resolved configuration next to the artifacts.
pub fn echo(cfg: &Config, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg).context("serializing resolved config")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back.fit.model, Model::Svare);
        assert_eq!(back.diagnose.lags, 10);
    }

    #[test]
    fn parses_sections() {
        let cfg: Config = toml::from_str(
            r#"
            [data]
            path = "sales.csv"
            response = "price"
            log10 = true

            [[coding.variables]]
            name = "continent"
            type = "categorical"
            categories = ["Africa", "America"]
            baseline = "Africa"

            [fit]
            model = "are"
            holdout = "random:10"

            [simulate]
            model = "svare"
            periods = 5
            covariates = [{ dist = "bernoulli", p = 0.5 }]
            params = { beta = [0.1] }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.coding.column_names(), vec!["continent[America]"]);
        assert_eq!(cfg.fit.model, Model::Are);
        assert!(cfg.simulate.to_sim_config().is_ok());
        assert!(toml::from_str::<Config>("[fit]\nunknown = 1").is_err());
    }

    #[test]
    fn holdout_syntax() {
        assert_eq!(parse_holdout("last", 1).unwrap(), HoldoutMode::LastPeriod);
        assert_eq!(
            parse_holdout("random:100", 4).unwrap(),
            HoldoutMode::RandomRows {
                count: 100,
                seed: 4
            }
        );
        assert!(parse_holdout("random:x", 1).is_err());
        assert!(parse_holdout("first", 1).is_err());
    }
}
