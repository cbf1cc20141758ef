//! Forecasts of log price, implied variance and realized variance, their
//! evaluation metrics, Clark–West comparisons and the rolling protocol.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::ObservedSeries;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fit::{fit_with, FitResult, LikelihoodConfig};
use crate::model::{
    daily_step, market_price_of_risk, ModelFamily, Params, State, SwapCoefficients, HOURS_PER_DAY,
    TRADING_DAYS,
};
use crate::rng::{purpose, RngStream};
use crate::simulation::{simulate_paths, Dynamics, Innovations, Measure, XY};

/// Forecast horizons in trading days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonGrid {
    /// Horizons for log price and implied variance.
    pub levels: Vec<usize>,
    /// Horizons for realized variance.
    pub rv: Vec<usize>,
}

impl Default for HorizonGrid {
    fn default() -> Self {
        HorizonGrid { levels: vec![1, 5, 22, 66, 131], rv: vec![5, 22, 66, 131] }
    }
}

impl HorizonGrid {
    /// Same horizons for every target; RV drops horizons below 2 days.
    pub fn uniform(horizons: &[usize]) -> Self {
        HorizonGrid { levels: horizons.to_vec(), rv: horizons.iter().copied().filter(|&h| h > 1).collect() }
    }

    pub fn max(&self) -> usize {
        self.levels.iter().chain(&self.rv).copied().max().unwrap_or(0)
    }

    pub fn horizons(&self, target: Target) -> &[usize] {
        match target {
            Target::RV => &self.rv,
            _ => &self.levels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    RV,
    IV,
    X,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::RV, Target::IV, Target::X];

    pub fn label(self) -> &'static str {
        match self {
            Target::RV => "RV",
            Target::IV => "IV",
            Target::X => "X",
        }
    }
}

/// `(262/N) sum_{j=i-N+1}^{i} (x_j - x_{j-1})^2`.
pub fn realized_variance(x: &[f64], i: usize, n_days: usize) -> Result<f64> {
    if n_days == 0 || i < n_days || i >= x.len() {
        return Err(Error::InsufficientData { needed: n_days + 1, got: i.min(x.len().saturating_sub(1)) + 1 });
    }
    let ss: f64 = (i + 1 - n_days..=i).map(|j| (x[j] - x[j - 1]).powi(2)).sum();
    Ok(TRADING_DAYS / n_days as f64 * ss)
}

/// `(1/N) sum_{j=i-N+1}^{i} V_j`.
pub fn model_realized_variance(v: &[f64], i: usize, n_days: usize) -> Result<f64> {
    if n_days == 0 || i < n_days || i >= v.len() {
        return Err(Error::InsufficientData { needed: n_days + 1, got: i.min(v.len().saturating_sub(1)) + 1 });
    }
    Ok(v[i + 1 - n_days..=i].iter().sum::<f64>() / n_days as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub n_paths: usize,
    /// Euler steps per trading day.
    pub steps_per_day: usize,
    pub horizons: HorizonGrid,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            n_paths: 20_000,
            steps_per_day: HOURS_PER_DAY as usize,
            horizons: HorizonGrid::default(),
            seed: 20_061_229,
            exec: Execution::default(),
        }
    }
}

/// Conditional expectations of `X_{t+j}` and `V_{t+j}` for `j = 0..=H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPath {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl ExpectedPath {
    /// Model RV forecast: mean of `E[V_{t+j}]`, `j = 1..=h`.
    pub fn rv(&self, h: usize) -> f64 {
        if h == 0 {
            return self.v[0];
        }
        self.v[1..=h].iter().sum::<f64>() / h as f64
    }
}

/// Monte Carlo expectations under the physical measure from `state`.
pub fn expected_path(
    state: &State,
    params: &Params,
    family: ModelFamily,
    days: usize,
    config: &ForecastConfig,
    rng: RngStream,
) -> Result<ExpectedPath> {
    let dynamics = Dynamics::new(*params, family, Measure::Physical)?;
    let spd = config.steps_per_day.max(1);
    let ens = simulate_paths(
        XY::from_state(state, params.sigma),
        &dynamics,
        daily_step() / spd as f64,
        days * spd,
        spd,
        config.n_paths,
        Innovations::Gaussian(rng),
        config.exec,
    )?;
    let n = ens.paths.len() as f64;
    let mut x = vec![0.0; days + 1];
    let mut v = vec![0.0; days + 1];
    for path in &ens.paths {
        for (j, u) in path.iter().enumerate() {
            x[j] += u.x;
            v[j] += u.v(params.sigma);
        }
    }
    x.iter_mut().for_each(|a| *a /= n);
    v.iter_mut().for_each(|a| *a /= n);
    x[0] = state.x;
    v[0] = state.v;
    Ok(ExpectedPath { x, v })
}

/// Forecasts per target, aligned with the horizons of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetForecasts {
    pub x: Vec<f64>,
    pub iv: Vec<f64>,
    pub rv: Vec<f64>,
}

impl TargetForecasts {
    pub fn get(&self, target: Target) -> &[f64] {
        match target {
            Target::RV => &self.rv,
            Target::IV => &self.iv,
            Target::X => &self.x,
        }
    }
}

/// Forecasts from the current `(x, IV)` observation. The random walk repeats
/// the current values and uses the current IV as its variance forecast; the
/// drift models run Monte Carlo on the stream `rng`, so models sharing `rng`
/// share innovations.
pub fn forecast_targets(
    x_now: f64,
    iv_now: f64,
    family: ModelFamily,
    params: &Params,
    config: &ForecastConfig,
    rng: RngStream,
) -> Result<TargetForecasts> {
    let grid = &config.horizons;
    if family == ModelFamily::RandomWalk {
        return Ok(TargetForecasts {
            x: vec![x_now; grid.levels.len()],
            iv: vec![iv_now; grid.levels.len()],
            rv: vec![iv_now; grid.rv.len()],
        });
    }
    let swap = SwapCoefficients::for_params(params)?;
    let v_now = swap.iv_to_v(iv_now)?;
    let path = expected_path(&State::new(x_now, v_now)?, params, family, grid.max(), config, rng)?;
    Ok(TargetForecasts {
        x: grid.levels.iter().map(|&h| path.x[h]).collect(),
        iv: grid.levels.iter().map(|&h| swap.v_to_iv(path.v[h])).collect(),
        rv: grid.rv.iter().map(|&h| path.rv(h)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the realized values have no variation.
    pub nmse: Option<f64>,
    pub dir: f64,
    pub n: usize,
}

/// Error metrics of `forecast` against `realized`; directions are measured
/// from `current`. A forecast of no change counts as correct only if the
/// realized change is exactly zero.
pub fn metrics(forecast: &[f64], realized: &[f64], current: &[f64]) -> Result<Metrics> {
    let n = forecast.len();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if realized.len() != n || current.len() != n {
        return Err(Error::Malformed("forecast, realized and current lengths differ".into()));
    }
    let nf = n as f64;
    let e: Vec<f64> = realized.iter().zip(forecast).map(|(r, f)| r - f).collect();
    let mae = e.iter().map(|v| v.abs()).sum::<f64>() / nf;
    let sse = e.iter().map(|v| v * v).sum::<f64>();
    let mean = realized.iter().sum::<f64>() / nf;
    let sst = realized.iter().map(|r| (r - mean).powi(2)).sum::<f64>();
    let hits = (0..n)
        .filter(|&i| {
            let pf = forecast[i] - current[i];
            let pr = realized[i] - current[i];
            if pf == 0.0 { pr == 0.0 } else { pf.signum() == pr.signum() && pr != 0.0 }
        })
        .count();
    Ok(Metrics {
        mae,
        rmse: (sse / nf).sqrt(),
        nmse: if sst > 0.0 { Some(sse / sst) } else { None },
        dir: hits as f64 / nf,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClarkWest {
    pub statistic: f64,
    pub p_value: f64,
    /// The adjusted loss differential was identically zero.
    pub degenerate: bool,
}

/// MSPE-adjusted comparison of a nested (small) model against the nesting
/// (big) one. Residuals are `realized - forecast`. The long-run variance uses
/// a Bartlett kernel with `horizon_days - 1` lags; the p-value is upper-tail.
pub fn clark_west(
    e_small: &[f64],
    e_big: &[f64],
    yhat_small: &[f64],
    yhat_big: &[f64],
    horizon_days: usize,
) -> Result<ClarkWest> {
    let n = e_small.len();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if e_big.len() != n || yhat_small.len() != n || yhat_big.len() != n {
        return Err(Error::Malformed("Clark-West inputs are not aligned".into()));
    }
    let f: Vec<f64> = (0..n)
        .map(|i| e_small[i].powi(2) - e_big[i].powi(2) + (yhat_small[i] - yhat_big[i]).powi(2))
        .collect();
    if f.iter().all(|v| *v == 0.0) {
        return Ok(ClarkWest { statistic: 0.0, p_value: 1.0, degenerate: true });
    }
    let nf = n as f64;
    let mean = f.iter().sum::<f64>() / nf;
    let d: Vec<f64> = f.iter().map(|v| v - mean).collect();
    let gamma = |l: usize| d[l..].iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / nf;
    let lags = horizon_days.saturating_sub(1).min(n - 1);
    let mut lrv = gamma(0);
    for l in 1..=lags {
        lrv += 2.0 * (1.0 - l as f64 / (lags + 1) as f64) * gamma(l);
    }
    if !(lrv > 0.0) {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        let statistic = if mean > 0.0 { f64::MAX } else { 0.0 };
        return Ok(ClarkWest { statistic, p_value: p, degenerate: false });
    }
    let t = mean / (lrv / nf).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(ClarkWest { statistic: t, p_value: 1.0 - normal.cdf(t), degenerate: false })
}

/// Forecasts of every model at one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginForecasts {
    pub origin: usize,
    pub models: Vec<(ModelFamily, TargetForecasts)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSeries {
    pub family: ModelFamily,
    pub forecast: Vec<f64>,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwEntry {
    pub small: ModelFamily,
    pub big: ModelFamily,
    pub result: Option<ClarkWest>,
}

/// All forecasts of one target at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub target: Target,
    pub horizon: usize,
    pub origins: Vec<usize>,
    pub realized: Vec<f64>,
    pub current: Vec<f64>,
    pub models: Vec<ModelSeries>,
    pub clark_west: Vec<CwEntry>,
}

impl Block {
    pub fn model(&self, family: ModelFamily) -> Option<&ModelSeries> {
        self.models.iter().find(|m| m.family == family)
    }

    pub fn cw(&self, small: ModelFamily, big: ModelFamily) -> Option<&ClarkWest> {
        self.clark_west.iter().find(|c| c.small == small && c.big == big)?.result.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sample {
    InSample,
    OutOfSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedOrigin {
    pub origin: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub sample: Sample,
    pub blocks: Vec<Block>,
    pub skipped: Vec<SkippedOrigin>,
}

impl ForecastReport {
    pub fn block(&self, target: Target, horizon: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.target == target && b.horizon == horizon)
    }
}

/// Nested pairs compared by Clark–West, as `(small, big)`.
pub const CW_PAIRS: [(ModelFamily, ModelFamily); 3] = [
    (ModelFamily::RandomWalk, ModelFamily::Linear),
    (ModelFamily::RandomWalk, ModelFamily::Nonlinear),
    (ModelFamily::Linear, ModelFamily::Nonlinear),
];

fn realized_at(series: &ObservedSeries, target: Target, t: usize, h: usize) -> Result<f64> {
    Ok(match target {
        Target::X => series.x[t + h],
        Target::IV => series.iv[t + h],
        Target::RV => realized_variance(&series.x, t + h, h)?,
    })
}

/// Collects per-origin forecasts into per-target, per-horizon blocks with
/// metrics and Clark–West p-values. An origin enters a block when its
/// realized value exists and, for RV, when the trailing RV is defined.
pub fn assemble_report(
    series: &ObservedSeries,
    grid: &HorizonGrid,
    forecasts: &[OriginForecasts],
    sample: Sample,
    skipped: Vec<SkippedOrigin>,
) -> Result<ForecastReport> {
    let families: Vec<ModelFamily> = forecasts.first().map(|o| o.models.iter().map(|m| m.0).collect()).unwrap_or_default();
    let last = series.len().saturating_sub(1);
    let mut blocks = Vec::new();
    for target in Target::ALL {
        for (k, &h) in grid.horizons(target).iter().enumerate() {
            let mut b = Block {
                target,
                horizon: h,
                origins: Vec::new(),
                realized: Vec::new(),
                current: Vec::new(),
                models: families.iter().map(|&f| ModelSeries { family: f, forecast: Vec::new(), metrics: None }).collect(),
                clark_west: Vec::new(),
            };
            for of in forecasts {
                let t = of.origin;
                if t + h > last || (target == Target::RV && t < h) {
                    continue;
                }
                b.origins.push(t);
                b.realized.push(realized_at(series, target, t, h)?);
                b.current.push(match target {
                    Target::X => series.x[t],
                    Target::IV => series.iv[t],
                    Target::RV => realized_variance(&series.x, t, h)?,
                });
                for (ms, (_, tf)) in b.models.iter_mut().zip(&of.models) {
                    ms.forecast.push(tf.get(target)[k]);
                }
            }
            if !b.origins.is_empty() {
                for ms in &mut b.models {
                    ms.metrics = Some(metrics(&ms.forecast, &b.realized, &b.current)?);
                }
                for (small, big) in CW_PAIRS {
                    let (Some(s), Some(g)) = (b.model(small), b.model(big)) else { continue };
                    let es: Vec<f64> = b.realized.iter().zip(&s.forecast).map(|(r, f)| r - f).collect();
                    let eb: Vec<f64> = b.realized.iter().zip(&g.forecast).map(|(r, f)| r - f).collect();
                    let result = clark_west(&es, &eb, &s.forecast, &g.forecast, h).ok();
                    b.clark_west.push(CwEntry { small, big, result });
                }
            }
            blocks.push(b);
        }
    }
    Ok(ForecastReport { sample, blocks, skipped })
}

fn origin_forecasts(
    series: &ObservedSeries,
    t: usize,
    models: &[(ModelFamily, Params)],
    config: &ForecastConfig,
) -> Result<OriginForecasts> {
    let rng = RngStream::new(config.seed, 0).derive(purpose::FORECAST, t as u64);
    let mut out = Vec::with_capacity(models.len());
    for (family, params) in models {
        out.push((*family, forecast_targets(series.x[t], series.iv[t], *family, params, config, rng)?));
    }
    Ok(OriginForecasts { origin: t, models: out })
}

/// In-sample evaluation with fixed parameters at every origin of `origins`.
pub fn evaluate_fixed(
    series: &ObservedSeries,
    models: &[(ModelFamily, Params)],
    origins: std::ops::Range<usize>,
    config: &ForecastConfig,
    sample: Sample,
) -> Result<ForecastReport> {
    let mut all = Vec::new();
    let mut skipped = Vec::new();
    for t in origins {
        match origin_forecasts(series, t, models, config) {
            Ok(of) => all.push(of),
            Err(e) => skipped.push(SkippedOrigin { origin: t, reason: e.to_string() }),
        }
    }
    assemble_report(series, &config.horizons, &all, sample, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    /// Anchored at the first observation.
    Expanding,
    /// The most recent `n` observations.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    pub fit: LikelihoodConfig,
    pub forecast: ForecastConfig,
    pub window: Window,
    /// Re-estimate every this many origins (1 = every new observation).
    pub refit_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPathEntry {
    pub date: NaiveDate,
    pub origin: usize,
    pub family: ModelFamily,
    pub params: Params,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingOutput {
    pub report: ForecastReport,
    pub parameter_paths: Vec<ParamPathEntry>,
}

/// Out-of-sample evaluation: origins run from the last in-sample row to the
/// second-to-last row; at each origin the drift models are re-fitted on the
/// window ending there, warm-started from the previous estimate.
pub fn rolling_evaluation(
    series: &ObservedSeries,
    n_in: usize,
    families: &[ModelFamily],
    initial: &[(ModelFamily, Params)],
    config: &RollingConfig,
) -> Result<RollingOutput> {
    if n_in == 0 || n_in > series.len() {
        return Err(Error::Config(format!("in-sample size {n_in} outside 1..={}", series.len())));
    }
    let mut current: Vec<(ModelFamily, Params)> = families
        .iter()
        .map(|&f| {
            let p = initial.iter().find(|(g, _)| *g == f).map(|(_, p)| *p).unwrap_or_default();
            (f, p)
        })
        .collect();
    let fit_cfg = LikelihoodConfig { restarts: 0, ..config.fit };
    let mut all = Vec::new();
    let mut skipped = Vec::new();
    let mut paths = Vec::new();
    let every = config.refit_every.max(1);
    let end = series.len().saturating_sub(1);
    for (k, t) in (n_in - 1..end).enumerate() {
        let start = match config.window {
            Window::Expanding => 0,
            Window::Fixed(w) => (t + 1).saturating_sub(w),
        };
        let window = series.slice(start..t + 1);
        let mut failure = None;
        if k % every == 0 {
            for (family, params) in current.iter_mut() {
                if *family == ModelFamily::RandomWalk {
                    continue;
                }
                match fit_with(&window, *family, &fit_cfg, Some(params), false) {
                    Ok(FitResult { params: p, loglik, .. }) => {
                        *params = p;
                        paths.push(ParamPathEntry { date: series.dates[t], origin: t, family: *family, params: p, loglik });
                    }
                    Err(e) => failure = Some(format!("{family} fit failed: {e}")),
                }
            }
        }
        if let Some(reason) = failure {
            skipped.push(SkippedOrigin { origin: t, reason });
            continue;
        }
        match origin_forecasts(series, t, &current, &config.forecast) {
            Ok(of) => all.push(of),
            Err(e) => skipped.push(SkippedOrigin { origin: t, reason: e.to_string() }),
        }
    }
    let report = assemble_report(series, &config.forecast.horizons, &all, Sample::OutOfSample, skipped)?;
    Ok(RollingOutput { report, parameter_paths: paths })
}

/// Variance risk premium (second component of the market price of risk)
/// along the variance path implied by the observed IV.
pub fn risk_premium_series(
    series: &ObservedSeries,
    params: &Params,
    family: ModelFamily,
    apply_dampening: bool,
) -> Result<Vec<f64>> {
    let swap = SwapCoefficients::for_params(params)?;
    series
        .x
        .iter()
        .zip(&series.iv)
        .map(|(&x, &iv)| {
            let s = State::new(x, swap.iv_to_v(iv)?)?;
            Ok(market_price_of_risk(&s, params, family, apply_dampening)?[1])
        })
        .collect()
}
