//! Simulated transition densities and the observed-data log-likelihood.
//!
//! Transition densities of `(X, Y)` are estimated with the Durham–Gallant
//! importance sampler: each interval is split into `M` Euler sub-steps, the
//! interior points are drawn from the modified bridge, and the density is the
//! average of `prod p^E / prod q` over `S` draws.

use serde::{Deserialize, Serialize};

use crate::data::ObservedSeries;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{daily_step, ModelFamily, Params, SwapCoefficients};
use crate::rng::{purpose, NormalSource, RngStream};
use crate::simulation::{bridge_fill_with, xy_diffusion, Dynamics, Measure, XY};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Drift and noise loading of a two-dimensional diffusion in `(x, y)`.
pub trait TransitionModel: Sync {
    fn drift(&self, u: &XY) -> [f64; 2];
    /// `G(u)` with covariance `G G^T dt` per step.
    fn loading(&self, u: &XY) -> [[f64; 2]; 2];
}

impl TransitionModel for Dynamics {
    #[inline]
    fn drift(&self, u: &XY) -> [f64; 2] {
        let v = u.v(self.params.sigma);
        [self.x_drift(v), self.y_drift(u.y)]
    }

    #[inline]
    fn loading(&self, u: &XY) -> [[f64; 2]; 2] {
        xy_diffusion(u, self.params.sigma, self.params.rho)
    }
}

/// Standard two-dimensional Brownian motion.
#[derive(Debug, Clone, Copy, Default)]
pub struct BrownianMotion;

impl TransitionModel for BrownianMotion {
    fn drift(&self, _u: &XY) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn loading(&self, _u: &XY) -> [[f64; 2]; 2] {
        [[1.0, 0.0], [0.0, 1.0]]
    }
}

/// Log of the bivariate normal density `N(0, scale G G^T)` at `d`.
#[inline]
pub fn gaussian_logdensity(d: [f64; 2], g: [[f64; 2]; 2], scale: f64) -> f64 {
    let c00 = scale * (g[0][0] * g[0][0] + g[0][1] * g[0][1]);
    let c01 = scale * (g[0][0] * g[1][0] + g[0][1] * g[1][1]);
    let c11 = scale * (g[1][0] * g[1][0] + g[1][1] * g[1][1]);
    let det = c00 * c11 - c01 * c01;
    if !(det > 0.0) || !det.is_finite() {
        return f64::NEG_INFINITY;
    }
    let quad = (c11 * d[0] * d[0] - 2.0 * c01 * d[0] * d[1] + c00 * d[1] * d[1]) / det;
    -LN_2PI - 0.5 * det.ln() - 0.5 * quad
}

/// Euler log-density of `next` given `curr` after a step of length `dt`.
#[inline]
pub fn euler_logdensity<T: TransitionModel + ?Sized>(model: &T, next: &XY, curr: &XY, dt: f64) -> f64 {
    let mu = model.drift(curr);
    let d = [next.x - curr.x - mu[0] * dt, next.y - curr.y - mu[1] * dt];
    gaussian_logdensity(d, model.loading(curr), dt)
}

/// Log-density of the bridge proposal for sub-step `m -> m+1` pinned at `end`
/// after `m_count` sub-steps of length `dt`.
pub fn proposal_logdensity<T: TransitionModel + ?Sized>(
    model: &T,
    next: &XY,
    curr: &XY,
    end: &XY,
    m: usize,
    m_count: usize,
    dt: f64,
) -> Result<f64> {
    if m + 1 >= m_count {
        return Err(Error::Domain(format!(
            "proposal density undefined at sub-step {m} of {m_count}: the last point is pinned"
        )));
    }
    Ok(proposal_logdensity_unchecked(model, next, curr, end, m, m_count, dt))
}

#[inline]
fn proposal_logdensity_unchecked<T: TransitionModel + ?Sized>(
    model: &T,
    next: &XY,
    curr: &XY,
    end: &XY,
    m: usize,
    m_count: usize,
    dt: f64,
) -> f64 {
    let left = (m_count - m) as f64;
    let d = [
        next.x - curr.x - (end.x - curr.x) / left,
        next.y - curr.y - (end.y - curr.y) / left,
    ];
    gaussian_logdensity(d, model.loading(curr), (left - 1.0) / left * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmlConfig {
    /// Sub-steps per observation interval.
    pub m: usize,
    /// Importance draws per transition.
    pub s: usize,
}

impl Default for SmlConfig {
    fn default() -> Self {
        SmlConfig { m: 24, s: 576 }
    }
}

/// Simulated log transition density with the relative Monte Carlo standard
/// error of the density estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimate {
    pub log_density: f64,
    pub relative_se: f64,
}

/// Importance-sampled transition density from `from` to `to` over `delta`.
/// Draws are consumed from `normals`; `interval` only labels errors.
pub fn sml_transition<T: TransitionModel + ?Sized>(
    model: &T,
    from: &XY,
    to: &XY,
    delta: f64,
    config: &SmlConfig,
    normals: &mut NormalSource,
    interval: usize,
) -> Result<TransitionEstimate> {
    let m = config.m.max(1);
    let dt = delta / m as f64;
    if m == 1 {
        let lp = euler_logdensity(model, to, from, dt);
        if !lp.is_finite() {
            return Err(Error::WeightUnderflow { interval, draws: 1 });
        }
        return Ok(TransitionEstimate { log_density: lp, relative_se: 0.0 });
    }
    let draws = config.s.max(1);
    let mut fill = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(draws);
    for _ in 0..draws {
        bridge_fill_with(*from, *to, m, dt, normals, |u| model.loading(u), &mut fill);
        let mut lw = 0.0;
        let mut prev = *from;
        for (k, u) in fill.iter().enumerate() {
            lw += euler_logdensity(model, u, &prev, dt);
            lw -= proposal_logdensity_unchecked(model, u, &prev, to, k, m, dt);
            prev = *u;
        }
        lw += euler_logdensity(model, to, &prev, dt);
        w.push(if lw.is_nan() { f64::NEG_INFINITY } else { lw });
    }
    let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::WeightUnderflow { interval, draws });
    }
    let n = draws as f64;
    let scaled: Vec<f64> = w.iter().map(|l| (l - top).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n;
    let relative_se = if draws > 1 {
        let var = scaled.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt() / mean
    } else {
        0.0
    };
    Ok(TransitionEstimate { log_density: top + mean.ln(), relative_se })
}

/// Transition estimates for every consecutive pair of `states`. Interval `i`
/// draws from the substream `(SML, i)`.
pub fn transition_logdensities<T: TransitionModel + ?Sized>(
    model: &T,
    states: &[XY],
    delta: f64,
    config: &SmlConfig,
    rng: RngStream,
    exec: Execution,
) -> Vec<Result<TransitionEstimate>> {
    let n = states.len().saturating_sub(1);
    exec.map(n, |i| {
        let mut normals = rng.derive(purpose::SML, i as u64).normals();
        sml_transition(model, &states[i], &states[i + 1], delta, config, &mut normals, i)
    })
}

/// Maps `(x, IV)` observations to `(x, y)` states at `params`. Fails if any
/// implied variance falls below the swap intercept.
pub fn transform_series(x: &[f64], iv: &[f64], params: &Params) -> Result<Vec<XY>> {
    let swap = SwapCoefficients::for_params(params)?;
    let mut bad = 0usize;
    let mut first = None;
    let mut out = Vec::with_capacity(x.len());
    for (i, (&xi, &ivi)) in x.iter().zip(iv).enumerate() {
        match swap.iv_to_v(ivi) {
            Ok(v) => out.push(XY::new(xi, v.ln() / params.sigma)),
            Err(_) => {
                bad += 1;
                first.get_or_insert(i);
            }
        }
    }
    match first {
        None => Ok(out),
        Some(i) => Err(Error::Domain(format!(
            "{bad} implied variances map to non-positive variance (first at row {i})"
        ))),
    }
}

/// Log-likelihood with its per-observation contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loglik {
    pub total: f64,
    pub contributions: Vec<f64>,
    /// Intervals (or rows) whose density could not be evaluated.
    pub failed: usize,
    /// Monte Carlo standard error of `total`.
    pub mc_std_error: f64,
}

impl Loglik {
    fn infeasible(failed: usize) -> Self {
        Loglik { total: f64::NEG_INFINITY, contributions: Vec::new(), failed, mc_std_error: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// `sum_i [log p_i - sigma Y_i] - N (log B + log sigma)`, the density of the
/// observed `(X, IV)` pairs given the `(X, Y)` transition log-densities.
pub fn y_form_loglik(log_p: &[f64], y_next: &[f64], sigma: f64, b: f64) -> f64 {
    let n = log_p.len() as f64;
    log_p.iter().zip(y_next).map(|(lp, y)| lp - sigma * y).sum::<f64>() - n * (b.ln() + sigma.ln())
}

/// Same quantity assembled from `(X, V)` densities `log p_i - log(sigma V_i)`.
pub fn v_form_loglik(log_p: &[f64], v_next: &[f64], sigma: f64, b: f64) -> f64 {
    let n = log_p.len() as f64;
    log_p.iter().zip(v_next).map(|(lp, v)| lp - (sigma * v).ln()).sum::<f64>() - n * b.ln()
}

/// Observed-data log-likelihood of `(x, IV)` under the physical dynamics at
/// `params` (drift parameters included).
pub fn loglik_raw(
    x: &[f64],
    iv: &[f64],
    params: &Params,
    family: ModelFamily,
    config: &SmlConfig,
    rng: RngStream,
    exec: Execution,
) -> Result<Loglik> {
    let dynamics = Dynamics::new(*params, family, Measure::Physical)?;
    let swap = SwapCoefficients::for_params(params)?;
    let bad = iv.iter().filter(|&&v| swap.iv_to_v(v).is_err()).count();
    if bad > 0 {
        return Ok(Loglik::infeasible(bad));
    }
    let states = transform_series(x, iv, params)?;
    let est = transition_logdensities(&dynamics, &states, daily_step(), config, rng, exec);
    let failed = est.iter().filter(|e| e.is_err()).count();
    if failed > 0 {
        return Ok(Loglik::infeasible(failed));
    }
    let jac = swap.b.ln() + params.sigma.ln();
    let mut contributions = Vec::with_capacity(est.len());
    let mut var = 0.0;
    for (i, e) in est.iter().enumerate() {
        let e = e.as_ref().expect("checked above");
        contributions.push(e.log_density - params.sigma * states[i + 1].y - jac);
        var += e.relative_se * e.relative_se;
    }
    let total = contributions.iter().sum::<f64>();
    if !total.is_finite() {
        return Ok(Loglik::infeasible(contributions.iter().filter(|c| !c.is_finite()).count()));
    }
    Ok(Loglik { total, contributions, failed: 0, mc_std_error: var.sqrt() })
}

pub fn total_loglik(
    series: &ObservedSeries,
    params: &Params,
    family: ModelFamily,
    config: &SmlConfig,
    rng: RngStream,
    exec: Execution,
) -> Result<Loglik> {
    loglik_raw(&series.x, &series.iv, params, family, config, rng, exec)
}
