//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{default_split_date, CsvSchema, VxoUnit};
use crate::error::{Error, Result};
use crate::fit::LikelihoodConfig;
use crate::forecast::{ForecastConfig, HorizonGrid, RollingConfig, Window};
use crate::model::{ModelFamily, Params, DEFAULT_DAMPING, DEFAULT_RATE, HOURS_PER_DAY};

/// Which drift models a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSelection {
    LN,
    NL,
    Both,
}

impl ModelSelection {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LN" => Ok(ModelSelection::LN),
            "NL" => Ok(ModelSelection::NL),
            "BOTH" => Ok(ModelSelection::Both),
            other => Err(Error::Config(format!("model must be LN, NL or both, got `{other}`"))),
        }
    }

    pub fn families(self) -> Vec<ModelFamily> {
        match self {
            ModelSelection::LN => vec![ModelFamily::Linear],
            ModelSelection::NL => vec![ModelFamily::Nonlinear],
            ModelSelection::Both => vec![ModelFamily::Linear, ModelFamily::Nonlinear],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub vxo_unit: Option<VxoUnit>,
    pub price_is_log: Option<bool>,
    pub rate: f64,
    pub m: usize,
    pub s: usize,
    pub n_bridges: usize,
    pub paths: usize,
    pub dt_hours: f64,
    pub seed: u64,
    pub split_date: NaiveDate,
    pub model: ModelSelection,
    pub horizons: Option<Vec<usize>>,
    pub max_evals: usize,
    pub restarts: usize,
    pub refit_every: usize,
    pub window: Option<usize>,
    pub damping: f64,
    /// Simulation-only settings.
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub family: ModelFamily,
    pub params: Params,
    pub n_obs: usize,
    pub v0: f64,
    pub x0: f64,
    pub start_date: NaiveDate,
    /// Euler steps per simulated trading day.
    pub steps_per_day: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = LikelihoodConfig::default();
        RunConfig {
            vxo_unit: None,
            price_is_log: None,
            rate: DEFAULT_RATE,
            m: fit.m,
            s: fit.s,
            n_bridges: fit.n_bridges,
            paths: 20_000,
            dt_hours: 1.0,
            seed: fit.seed,
            split_date: default_split_date(),
            model: ModelSelection::Both,
            horizons: None,
            max_evals: fit.max_evals,
            restarts: fit.restarts,
            refit_every: 1,
            window: None,
            damping: DEFAULT_DAMPING,
            simulate: SimulateConfig {
                family: ModelFamily::Nonlinear,
                params: Params::table_nonlinear(),
                n_obs: 2500,
                v0: 0.036,
                x0: 6.0,
                start_date: NaiveDate::from_ymd_opt(1990, 1, 2).expect("valid date"),
                steps_per_day: 8,
            },
        }
    }
}

/// Parses `key = value` lines into an ordered map, rejecting duplicates.
pub fn parse_pairs(text: &str, origin: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: origin.to_string(), line: i + 1, message };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(err(format!("duplicate key `{key}`")));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut p = c.simulate.params;
        for (key, (line, value)) in parse_pairs(text, origin)? {
            let err = |message: String| Error::Parse { path: origin.to_string(), line, message };
            let num = || value.parse::<f64>().map_err(|_| err(format!("`{key}` expects a number, got `{value}`")));
            let int = || value.parse::<usize>().map_err(|_| err(format!("`{key}` expects a non-negative integer, got `{value}`")));
            let date = || {
                NaiveDate::parse_from_str(&value, "%Y-%m-%d").map_err(|_| err(format!("`{key}` expects YYYY-MM-DD, got `{value}`")))
            };
            match key.as_str() {
                "vxo_unit" => c.vxo_unit = Some(VxoUnit::parse(&value).map_err(|e| err(e.to_string()))?),
                "price_is_log" => {
                    c.price_is_log = Some(match value.to_ascii_lowercase().as_str() {
                        "true" | "yes" | "1" => true,
                        "false" | "no" | "0" => false,
                        _ => return Err(err(format!("`price_is_log` expects true or false, got `{value}`"))),
                    })
                }
                "rate" => c.rate = num()?,
                "M" => c.m = int()?,
                "S" => c.s = int()?,
                "bridges" => c.n_bridges = int()?,
                "paths" => c.paths = int()?,
                "dt_hours" => c.dt_hours = num()?,
                "seed" => c.seed = value.parse().map_err(|_| err(format!("`seed` expects an unsigned integer, got `{value}`")))?,
                "split_date" => c.split_date = date()?,
                "model" => c.model = ModelSelection::parse(&value).map_err(|e| err(e.to_string()))?,
                "horizons" => {
                    let hs: std::result::Result<Vec<usize>, _> =
                        value.split(',').map(|h| h.trim().parse::<usize>()).collect();
                    c.horizons = Some(hs.map_err(|_| err(format!("`horizons` expects a comma-separated list, got `{value}`")))?);
                }
                "max_evals" => c.max_evals = int()?,
                "restarts" => c.restarts = int()?,
                "refit_every" => c.refit_every = int()?,
                "window" => c.window = Some(int()?),
                "damping" => c.damping = num()?,
                "n_obs" => c.simulate.n_obs = int()?,
                "v0" => c.simulate.v0 = num()?,
                "x0" => c.simulate.x0 = num()?,
                "start_date" => c.simulate.start_date = date()?,
                "sim_steps_per_day" => c.simulate.steps_per_day = int()?,
                "sim_model" => {
                    c.simulate.family = match ModelFamily::parse(&value).map_err(|e| err(e.to_string()))? {
                        ModelFamily::RandomWalk => return Err(err("`sim_model` must be LN or NL".into())),
                        f => f,
                    }
                }
                "params" => {
                    p = match value.to_ascii_uppercase().as_str() {
                        "TABLE_LN" => Params::table_linear(),
                        "TABLE_NL" => Params::table_nonlinear(),
                        _ => return Err(err(format!("`params` expects table_ln or table_nl, got `{value}`"))),
                    };
                }
                "sigma" | "rho" | "b0_q" | "b1_q" | "a0" | "a1" | "b0" | "b1" | "b2" | "b3" => {}
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        // explicit parameter values override a table preset
        for (key, (line, value)) in parse_pairs(text, origin)? {
            if matches!(key.as_str(), "sigma" | "rho" | "b0_q" | "b1_q" | "a0" | "a1" | "b0" | "b1" | "b2" | "b3") {
                let v: f64 = value.parse().map_err(|_| Error::Parse {
                    path: origin.to_string(),
                    line,
                    message: format!("`{key}` expects a number, got `{value}`"),
                })?;
                p.set(&key, v)?;
            }
        }
        p.rate = c.rate;
        p.damping = c.damping;
        c.simulate.params = p;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.s == 0 || self.n_bridges == 0 || self.paths == 0 {
            return Err(Error::Config("M, S, bridges and paths must be positive".into()));
        }
        self.steps_per_day()?;
        if let Some(h) = &self.horizons {
            if h.is_empty() {
                return Err(Error::Config("horizons must not be empty".into()));
            }
        }
        Ok(())
    }

    /// Forecast Euler steps per trading day from `dt_hours`.
    pub fn steps_per_day(&self) -> Result<usize> {
        let k = HOURS_PER_DAY / self.dt_hours;
        if !(self.dt_hours > 0.0) || (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
            return Err(Error::Config(format!(
                "dt_hours must divide an {HOURS_PER_DAY}-hour trading day, got {}",
                self.dt_hours
            )));
        }
        Ok(k.round() as usize)
    }

    /// Input schema; both flags must be set explicitly.
    pub fn csv_schema(&self) -> Result<CsvSchema> {
        match (self.vxo_unit, self.price_is_log) {
            (Some(vxo_unit), Some(price_is_log)) => Ok(CsvSchema { vxo_unit, price_is_log }),
            _ => Err(Error::Config("`vxo_unit` and `price_is_log` must both be set".into())),
        }
    }

    pub fn likelihood(&self) -> LikelihoodConfig {
        LikelihoodConfig {
            m: self.m,
            s: self.s,
            n_bridges: self.n_bridges,
            max_evals: self.max_evals,
            restarts: self.restarts,
            seed: self.seed,
            ..LikelihoodConfig::default()
        }
    }

    pub fn horizon_grid(&self) -> HorizonGrid {
        match &self.horizons {
            Some(h) => HorizonGrid::uniform(h),
            None => HorizonGrid::default(),
        }
    }

    pub fn forecast(&self) -> Result<ForecastConfig> {
        Ok(ForecastConfig {
            n_paths: self.paths,
            steps_per_day: self.steps_per_day()?,
            horizons: self.horizon_grid(),
            seed: self.seed,
            ..ForecastConfig::default()
        })
    }

    pub fn rolling(&self) -> Result<RollingConfig> {
        Ok(RollingConfig {
            fit: self.likelihood(),
            forecast: self.forecast()?,
            window: match self.window {
                Some(w) => Window::Fixed(w),
                None => Window::Expanding,
            },
            refit_every: self.refit_every,
        })
    }

    /// Starting values carrying the configured rate and dampening constant.
    pub fn base_params(&self) -> Params {
        Params { rate: self.rate, damping: self.damping, ..Params::default() }
    }
}
