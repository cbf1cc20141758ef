//! Nested maximum likelihood: an outer simplex search over
//! `(sigma, rho, b0_q, b1_q)` with the drift parameters filled in by EML at
//! every trial point, followed by sandwich standard errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ObservedSeries;
use crate::eml::{estimate_drifts, EmlConfig, DEFAULT_CONDITION_THRESHOLD};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::likelihood::{loglik_raw, transform_series, Loglik, SmlConfig};
use crate::model::{daily_step, swap_coefficients, swap_horizon, ModelFamily, Params, TRADING_DAYS};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::{purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    /// Sub-steps per observation interval.
    pub m: usize,
    /// Importance draws per transition density.
    pub s: usize,
    /// Bridge draws per EML expectation.
    pub n_bridges: usize,
    /// Objective evaluations per simplex run.
    pub max_evals: usize,
    /// Simplex runs after the first, each from a jittered copy of the best point.
    pub restarts: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub seed: u64,
    pub min_obs: usize,
    pub condition_threshold: f64,
    pub exec: Execution,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            m: 24,
            s: 576,
            n_bridges: 576,
            max_evals: 400,
            restarts: 3,
            f_tol: 1e-6,
            x_tol: 1e-5,
            seed: 20_061_229,
            min_obs: 200,
            condition_threshold: DEFAULT_CONDITION_THRESHOLD,
            exec: Execution::default(),
        }
    }
}

impl LikelihoodConfig {
    pub fn sml(&self) -> SmlConfig {
        SmlConfig { m: self.m, s: self.s }
    }

    pub fn eml(&self) -> EmlConfig {
        EmlConfig { m: self.m, n_bridges: self.n_bridges, condition_threshold: self.condition_threshold }
    }

    pub fn rng(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.s == 0 || self.n_bridges == 0 || self.max_evals == 0 {
            return Err(Error::Config("M, S, bridge count and evaluation budget must be positive".into()));
        }
        Ok(())
    }
}

/// Outer coordinates `(ln sigma, atanh rho, ln b0_q, b1_q)`.
pub fn outer_coordinates(p: &Params) -> [f64; 4] {
    [p.sigma.ln(), p.rho.atanh(), p.b0_q.ln(), p.b1_q]
}

pub fn from_outer(phi: &[f64], base: &Params) -> Params {
    Params { sigma: phi[0].exp(), rho: phi[1].tanh(), b0_q: phi[2].exp(), b1_q: phi[3], ..*base }
}

/// Drift parameters by EML at fixed `(sigma, rho, b0_q, b1_q)`, then the
/// simulated log-likelihood at the completed parameter vector.
pub fn profile(
    series: &ObservedSeries,
    outer: &Params,
    family: ModelFamily,
    config: &LikelihoodConfig,
) -> Result<(Params, Loglik)> {
    outer.validate()?;
    let states = transform_series(&series.x, &series.iv, outer)?;
    let theta = estimate_drifts(&states, outer, family, daily_step(), &config.eml(), config.rng(), config.exec)?;
    let ll = loglik_raw(&series.x, &series.iv, &theta, family, &config.sml(), config.rng(), config.exec)?;
    Ok((theta, ll))
}

/// Moment-matched starting point.
///
/// `sigma` from the annualized volatility of log IV, `rho` from the return/log
/// IV correlation, `b1_q` so that `B` equals mean IV over mean realized
/// variance, and `b0_q` from the first-order autocorrelation of IV.
pub fn moment_init(series: &ObservedSeries) -> Result<Params> {
    let n = series.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    let dx: Vec<f64> = series.x.windows(2).map(|w| w[1] - w[0]).collect();
    let dl: Vec<f64> = series.iv.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, ml) = (mean(&dx), mean(&dl));
    let sxx = dx.iter().map(|d| (d - mx).powi(2)).sum::<f64>();
    let sll = dl.iter().map(|d| (d - ml).powi(2)).sum::<f64>();
    let sxl = dx.iter().zip(&dl).map(|(a, b)| (a - mx) * (b - ml)).sum::<f64>();

    let v_bar = TRADING_DAYS * dx.iter().map(|d| d * d).sum::<f64>() / dx.len() as f64;
    let sigma = (sll / (dl.len() as f64 - 1.0)).sqrt() * TRADING_DAYS.sqrt();
    let rho = if sxx > 0.0 && sll > 0.0 { (sxl / (sxx * sll).sqrt()).clamp(-0.95, 0.95) } else { 0.0 };

    let iv_bar = mean(&series.iv);
    let ratio = if v_bar > 0.0 { iv_bar / v_bar } else { 1.0 };
    let tau = swap_horizon();
    let bfun = |z: f64| if z.abs() < 1e-8 { 1.0 } else { z.exp_m1() / z };
    let (mut lo, mut hi) = (-200.0, 50.0);
    if ratio <= bfun(lo) {
        hi = lo;
    } else if ratio >= bfun(hi) {
        lo = hi;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bfun(mid) < ratio {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let b1_q = 0.5 * (lo + hi) / tau;

    let ivm = iv_bar;
    let num = series.iv.windows(2).map(|w| (w[0] - ivm) * (w[1] - ivm)).sum::<f64>();
    let den = series.iv.iter().map(|v| (v - ivm).powi(2)).sum::<f64>();
    let ac1 = if den > 0.0 { num / den } else { 0.0 };
    let kappa = if ac1 > 0.0 && ac1 < 1.0 { -ac1.ln() * TRADING_DAYS } else { 5.0 };
    let b0_q = (kappa * v_bar.max(1e-4)).max(1e-4);

    let mut p = Params { sigma: sigma.max(0.05), rho, b0_q, b1_q, ..Params::default() };
    // keep every implied variance above the swap intercept
    let a = swap_coefficients(p.b0_q, p.b1_q, tau)?.a;
    let iv_min = series.iv.iter().copied().fold(f64::INFINITY, f64::min);
    if a >= iv_min {
        p.b0_q *= 0.5 * iv_min / a;
    }
    p.b0 = p.b0_q;
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub evaluations: usize,
    pub converged: bool,
    pub runs: usize,
    /// Failure note for the standard errors, if any.
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: ModelFamily,
    pub params: Params,
    pub loglik: f64,
    pub n_obs: usize,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub std_errors: Option<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
    pub config: LikelihoodConfig,
}

impl FitResult {
    pub fn std_error(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.std_errors.as_ref().map(|s| s[i])
    }
}

/// Maximizes the simulated likelihood over the outer parameters. `init`
/// defaults to [`moment_init`]; its drift fields are ignored.
pub fn fit(
    series: &ObservedSeries,
    family: ModelFamily,
    config: &LikelihoodConfig,
    init: Option<&Params>,
) -> Result<FitResult> {
    fit_with(series, family, config, init, true)
}

/// As [`fit`], optionally skipping the standard errors.
pub fn fit_with(
    series: &ObservedSeries,
    family: ModelFamily,
    config: &LikelihoodConfig,
    init: Option<&Params>,
    standard_errors: bool,
) -> Result<FitResult> {
    if family == ModelFamily::RandomWalk {
        return Err(Error::RandomWalkHasNoDrift);
    }
    config.validate()?;
    if series.len() < config.min_obs {
        return Err(Error::InsufficientData { needed: config.min_obs, got: series.len() });
    }
    let base = match init {
        Some(p) => *p,
        None => moment_init(series)?,
    };
    let objective = |phi: &[f64]| -> f64 {
        let p = from_outer(phi, &base);
        match profile(series, &p, family, config) {
            Ok((_, ll)) if ll.total.is_finite() => -ll.total,
            _ => f64::INFINITY,
        }
    };
    let opts = NelderMeadOptions { max_evals: config.max_evals, f_tol: config.f_tol, x_tol: config.x_tol };
    let steps = [0.1, 0.1, 0.2, 1.0];
    let mut best = nelder_mead(objective, &outer_coordinates(&base), &steps, &opts);
    let mut evaluations = best.evals;
    let mut runs = 1;
    for r in 0..config.restarts {
        let mut normals = config.rng().derive(purpose::RESTART, r as u64).normals();
        let start: Vec<f64> = best.x.iter().zip(&steps).map(|(x, s)| x + 0.5 * s * normals.next()).collect();
        let next = nelder_mead(objective, &start, &steps, &opts);
        evaluations += next.evals;
        runs += 1;
        if next.f < best.f {
            best = next;
        }
    }
    if !best.f.is_finite() {
        return Err(Error::Domain("no feasible parameter point found by the outer search".into()));
    }
    let outer = from_outer(&best.x, &base);
    let (params, ll) = profile(series, &outer, family, config)?;
    let names: Vec<String> = Params::estimated_names(family).iter().map(|s| s.to_string()).collect();
    let estimates = Params::estimated_names(family).iter().map(|n| params.get(n).unwrap_or(f64::NAN)).collect();
    let mut result = FitResult {
        family,
        params,
        loglik: ll.total,
        n_obs: series.len(),
        names,
        estimates,
        covariance: None,
        std_errors: None,
        diagnostics: FitDiagnostics { evaluations, converged: best.converged, runs, message: None },
        config: *config,
    };
    if standard_errors {
        match sandwich_errors(series, &params, family, config) {
            Ok(sw) => {
                result.covariance = Some(sw.covariance);
                result.std_errors = Some(sw.std_errors);
            }
            Err(e) => result.diagnostics.message = Some(e.to_string()),
        }
    }
    Ok(result)
}

/// Covariance in natural coordinates with its square-root diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub names: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
}

fn to_transformed(p: &Params, names: &[&str]) -> Vec<f64> {
    names
        .iter()
        .map(|n| match *n {
            "sigma" => p.sigma.ln(),
            "rho" => p.rho.atanh(),
            "b0_q" => p.b0_q.ln(),
            other => p.get(other).expect("known name"),
        })
        .collect()
}

fn from_transformed(phi: &[f64], names: &[&str], base: &Params, family: ModelFamily) -> Params {
    let mut p = *base;
    for (n, v) in names.iter().zip(phi) {
        match *n {
            "sigma" => p.sigma = v.exp(),
            "rho" => p.rho = v.tanh(),
            "b0_q" => p.b0_q = v.exp(),
            other => p.set(other, *v).expect("known name"),
        }
    }
    if family != ModelFamily::Nonlinear {
        p.b0 = p.b0_q;
    }
    p
}

/// `d theta / d phi` for each transformed coordinate.
fn jacobian_diag(p: &Params, names: &[&str]) -> Vec<f64> {
    names
        .iter()
        .map(|n| match *n {
            "sigma" => p.sigma,
            "rho" => 1.0 - p.rho * p.rho,
            "b0_q" => p.b0_q,
            _ => 1.0,
        })
        .collect()
}

/// Sandwich covariance `H^{-1} OPG H^{-1}` of all estimated parameters.
///
/// Scores are per-observation central differences in transformed
/// coordinates; the Hessian uses second differences with steps scaled to the
/// OPG diagonal.
pub fn sandwich_errors(
    series: &ObservedSeries,
    theta: &Params,
    family: ModelFamily,
    config: &LikelihoodConfig,
) -> Result<Sandwich> {
    let names = Params::estimated_names(family);
    let k = names.len();
    let phi0 = to_transformed(theta, &names);
    let contributions = |phi: &[f64]| -> Result<Vec<f64>> {
        let p = from_transformed(phi, &names, theta, family);
        let ll = loglik_raw(&series.x, &series.iv, &p, family, &config.sml(), config.rng(), config.exec)?;
        if !ll.is_finite() {
            return Err(Error::SingularHessian(format!(
                "likelihood not finite near the optimum ({} failing intervals)",
                ll.failed
            )));
        }
        Ok(ll.contributions)
    };
    let total = |phi: &[f64]| -> Result<f64> { Ok(contributions(phi)?.iter().sum()) };
    let shifted = |moves: &[(usize, f64)]| {
        let mut phi = phi0.clone();
        for &(j, d) in moves {
            phi[j] += d;
        }
        phi
    };

    let h = 1e-5;
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let up = contributions(&shifted(&[(j, h)]))?;
        let dn = contributions(&shifted(&[(j, -h)]))?;
        scores.push(up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h)).collect());
    }
    let n = scores[0].len();
    let mut opg = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        for a in 0..k {
            for b in a..k {
                opg[(a, b)] += scores[a][i] * scores[b][i];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            opg[(a, b)] = opg[(b, a)];
        }
    }

    let steps: Vec<f64> = (0..k)
        .map(|j| {
            let d = opg[(j, j)];
            if d > 0.0 && d.is_finite() { 0.1 / d.sqrt() } else { 1e-3 }
        })
        .collect();
    let f0 = total(&phi0)?;
    let mut hess = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        let ha = steps[a];
        let fp = total(&shifted(&[(a, ha)]))?;
        let fm = total(&shifted(&[(a, -ha)]))?;
        hess[(a, a)] = (fp - 2.0 * f0 + fm) / (ha * ha);
        for b in 0..a {
            let hb = steps[b];
            let fpp = total(&shifted(&[(a, ha), (b, hb)]))?;
            let fpm = total(&shifted(&[(a, ha), (b, -hb)]))?;
            let fmp = total(&shifted(&[(a, -ha), (b, hb)]))?;
            let fmm = total(&shifted(&[(a, -ha), (b, -hb)]))?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * ha * hb);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    let hinv = hess
        .clone()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::SingularHessian("numerical Hessian is not invertible".into()))?;
    let cov_phi = &hinv * &opg * &hinv;
    let jac = jacobian_diag(theta, &names);
    let mut cov = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            let v = 0.5 * (cov_phi[(a, b)] + cov_phi[(b, a)]);
            cov[a][b] = jac[a] * v * jac[b];
        }
    }
    let std_errors: Vec<f64> = (0..k).map(|j| cov[j][j].max(0.0).sqrt()).collect();
    if std_errors.iter().any(|s| !s.is_finite()) {
        return Err(Error::SingularHessian("non-finite standard error".into()));
    }
    Ok(Sandwich { names: names.iter().map(|s| s.to_string()).collect(), covariance: cov, std_errors })
}
