//! Limited-information expected maximum likelihood (EML) for the drift
//! parameters.
//!
//! Both difference equations have the form
//! `g(U_{k+1}, U_k) = sum_l c_l f_l(U_k) delta + eps_{k+1}`, so for fixed
//! diffusion and pricing parameters the optimal coefficients solve the normal
//! equations `Xi c = varpi` with
//!
//! ```text
//! Xi    = delta * sum_n sum_m E[f(U_{n,m}) f(U_{n,m})^T]
//! varpi =         sum_n sum_m E[g(U_{n,m+1}, U_{n,m}) f(U_{n,m})]
//! ```
//!
//! where the expectations run over bridges pinned at consecutive observations.
//! The variance equation is solved first; the stock equation then uses the
//! variance residuals `eps^V` implied by the fitted variance drift.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{ModelFamily, Params};
use crate::rng::{purpose, RngStream};
use crate::simulation::{bridge_fill_with, xy_diffusion, Dynamics, Measure, IDENTITY, XY};

pub const DEFAULT_CONDITION_THRESHOLD: f64 = 1e12;

/// Basis functions `f_l` and offset function `g` of one difference equation.
pub trait Basis: Sync {
    fn len(&self) -> usize;
    /// Writes `f_0(u)..f_L(u)` into `out`.
    fn eval(&self, u: &XY, out: &mut [f64]);
    /// `g(next, curr)` for a step of length `dt`.
    fn offset(&self, next: &XY, curr: &XY, dt: f64) -> f64;
    /// Noise loading of the bridge used for the expectations.
    fn bridge_loading(&self, _u: &XY) -> [[f64; 2]; 2] {
        IDENTITY
    }
}

/// Variance-equation table. The linear model keeps only `f_1 = 1/sigma`; its
/// known `b0_q / (sigma e^{sigma y})` term moves into the offset.
#[derive(Debug, Clone, Copy)]
pub struct VarianceBasis {
    pub family: ModelFamily,
    pub sigma: f64,
    pub b0_q: f64,
}

impl Basis for VarianceBasis {
    fn len(&self) -> usize {
        match self.family {
            ModelFamily::Nonlinear => 4,
            _ => 1,
        }
    }

    #[inline]
    fn eval(&self, u: &XY, out: &mut [f64]) {
        let s = self.sigma;
        match self.family {
            ModelFamily::Nonlinear => {
                let v = (s * u.y).exp();
                out[0] = 1.0 / (s * v);
                out[1] = 1.0 / s;
                out[2] = v / s;
                out[3] = 1.0 / (s * v * v);
            }
            _ => out[0] = 1.0 / s,
        }
    }

    #[inline]
    fn offset(&self, next: &XY, curr: &XY, dt: f64) -> f64 {
        let base = next.y - curr.y + 0.5 * self.sigma * dt;
        match self.family {
            ModelFamily::Nonlinear => base,
            _ => base - self.b0_q * dt / (self.sigma * (self.sigma * curr.y).exp()),
        }
    }
}

/// Stock-equation table: `f_0 = 1/(sqrt(1-rho^2) sqrt(V))`, `f_1 = sqrt(V)/sqrt(1-rho^2)`,
/// `g = (dx - rho sqrt(V) eps^V) / (sqrt(1-rho^2) sqrt(V))`.
#[derive(Debug, Clone, Copy)]
pub struct StockBasis {
    /// Physical dynamics carrying the fitted variance drift.
    pub variance: Dynamics,
}

impl Basis for StockBasis {
    fn len(&self) -> usize {
        2
    }

    #[inline]
    fn eval(&self, u: &XY, out: &mut [f64]) {
        let sv = (0.5 * self.variance.params.sigma * u.y).exp();
        let rc = self.variance.sqrt_one_minus_rho2();
        out[0] = 1.0 / (rc * sv);
        out[1] = sv / rc;
    }

    #[inline]
    fn offset(&self, next: &XY, curr: &XY, dt: f64) -> f64 {
        let p = &self.variance.params;
        let sv = (0.5 * p.sigma * curr.y).exp();
        let eps_v = next.y - curr.y - self.variance.y_drift(curr.y) * dt;
        (next.x - curr.x - p.rho * sv * eps_v) / (self.variance.sqrt_one_minus_rho2() * sv)
    }

    fn bridge_loading(&self, u: &XY) -> [[f64; 2]; 2] {
        xy_diffusion(u, self.variance.params.sigma, self.variance.params.rho)
    }
}

/// `Xi c = varpi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub xi: DMatrix<f64>,
    pub varpi: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub coefficients: DVector<f64>,
    /// Condition number of the diagonally equilibrated `Xi`.
    pub condition: f64,
}

impl LinearSystem {
    pub fn zeros(n: usize) -> Self {
        LinearSystem { xi: DMatrix::zeros(n, n), varpi: DVector::zeros(n) }
    }

    pub fn add(&mut self, other: &LinearSystem) {
        self.xi += &other.xi;
        self.varpi += &other.varpi;
    }

    /// Rank-revealing solve on the equilibrated system.
    pub fn solve(&self, threshold: f64) -> Result<Solution> {
        let n = self.varpi.len();
        if self.xi.iter().chain(self.varpi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("EML linear system"));
        }
        let d = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let x = self.xi[(i, i)];
                if x > 0.0 { 1.0 / x.sqrt() } else { 1.0 }
            }),
        );
        let scaled = DMatrix::from_fn(n, n, |i, j| d[i] * self.xi[(i, j)] * d[j]);
        let svd = scaled.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= threshold) {
            return Err(Error::IllConditioned { condition, threshold });
        }
        let rhs = d.component_mul(&self.varpi);
        let z = svd
            .solve(&rhs, 0.0)
            .map_err(|e| Error::Domain(format!("EML solve failed: {e}")))?;
        Ok(Solution { coefficients: d.component_mul(&z), condition })
    }

    /// `max |Xi - Xi^T|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.xi - self.xi.transpose()).amax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmlConfig {
    /// Sub-steps per observation interval.
    pub m: usize,
    /// Bridge draws per interval expectation.
    pub n_bridges: usize,
    pub condition_threshold: f64,
}

impl Default for EmlConfig {
    fn default() -> Self {
        EmlConfig { m: 24, n_bridges: 576, condition_threshold: DEFAULT_CONDITION_THRESHOLD }
    }
}

/// Per-interval contributions to `Xi` and `varpi`, in interval order. Interval
/// `n` draws its bridges from the substream `(purpose, n)`.
pub fn interval_contributions<B: Basis>(
    observations: &[XY],
    basis: &B,
    delta: f64,
    config: &EmlConfig,
    rng: RngStream,
    exec: Execution,
) -> Result<Vec<LinearSystem>> {
    let m = config.m.max(1);
    let dt = delta / m as f64;
    let l = basis.len();
    let draws = if m == 1 { 1 } else { config.n_bridges.max(1) };
    let n_int = observations.len().saturating_sub(1);
    exec.try_map(n_int, |n| {
        let start = observations[n];
        let end = observations[n + 1];
        let mut normals = rng.derive(purpose::EML_BRIDGE, n as u64).normals();
        let mut sys = LinearSystem::zeros(l);
        let mut fill = Vec::with_capacity(m);
        let mut f = vec![0.0; l];
        let mut path = Vec::with_capacity(m + 1);
        for _ in 0..draws {
            bridge_fill_with(start, end, m, dt, &mut normals, |u| basis.bridge_loading(u), &mut fill);
            path.clear();
            path.push(start);
            path.extend_from_slice(&fill);
            path.push(end);
            for (k, w) in path.windows(2).enumerate() {
                basis.eval(&w[0], &mut f);
                let g = basis.offset(&w[1], &w[0], dt);
                if !g.is_finite() || f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::BasisOverflow { interval: n, step: k });
                }
                for i in 0..l {
                    sys.varpi[i] += g * f[i];
                    for j in i..l {
                        sys.xi[(i, j)] += dt * f[i] * f[j];
                    }
                }
            }
        }
        let inv = 1.0 / draws as f64;
        for i in 0..l {
            sys.varpi[i] *= inv;
            for j in i..l {
                sys.xi[(i, j)] *= inv;
                sys.xi[(j, i)] = sys.xi[(i, j)];
            }
        }
        Ok(sys)
    })
}

/// Accumulates `Xi` and `varpi` over all observation intervals.
pub fn assemble_system<B: Basis>(
    observations: &[XY],
    basis: &B,
    delta: f64,
    config: &EmlConfig,
    rng: RngStream,
    exec: Execution,
) -> Result<LinearSystem> {
    let parts = interval_contributions(observations, basis, delta, config, rng, exec)?;
    let mut total = LinearSystem::zeros(basis.len());
    for p in &parts {
        total.add(p);
    }
    Ok(total)
}

/// Optimal physical variance-drift coefficients given `sigma`, `rho`, `b0_q`,
/// `b1_q`. Returns `[b1]` for the linear model and `[b0, b1, b2, b3]` for the
/// nonlinear one.
pub fn solve_variance_drift(
    observations: &[XY],
    outer: &Params,
    family: ModelFamily,
    delta: f64,
    config: &EmlConfig,
    rng: RngStream,
    exec: Execution,
) -> Result<Vec<f64>> {
    if family == ModelFamily::RandomWalk {
        return Err(Error::RandomWalkHasNoDrift);
    }
    let basis = VarianceBasis { family, sigma: outer.sigma, b0_q: outer.b0_q };
    let sys = assemble_system(observations, &basis, delta, config, rng, exec)?;
    Ok(sys.solve(config.condition_threshold)?.coefficients.iter().copied().collect())
}

/// Writes variance-drift coefficients from [`solve_variance_drift`] into `params`.
pub fn apply_variance_coefficients(params: &mut Params, family: ModelFamily, coef: &[f64]) {
    match family {
        ModelFamily::Nonlinear => {
            params.b0 = coef[0];
            params.b1 = coef[1];
            params.b2 = coef[2];
            params.b3 = coef[3];
        }
        _ => {
            params.b0 = params.b0_q;
            params.b1 = coef[0];
            params.b2 = 0.0;
            params.b3 = 0.0;
        }
    }
}

/// Optimal `(a0, a1)` given the variance drift already stored in `with_variance`.
pub fn solve_stock_drift(
    observations: &[XY],
    with_variance: &Params,
    family: ModelFamily,
    delta: f64,
    config: &EmlConfig,
    rng: RngStream,
    exec: Execution,
) -> Result<[f64; 2]> {
    let variance = Dynamics::new(*with_variance, family, Measure::Physical)?;
    let basis = StockBasis { variance };
    let sys = assemble_system(observations, &basis, delta, config, rng, exec)?;
    let c = sys.solve(config.condition_threshold)?.coefficients;
    Ok([c[0], c[1]])
}

/// Both EML stages: fills the physical drift parameters of `outer`.
pub fn estimate_drifts(
    observations: &[XY],
    outer: &Params,
    family: ModelFamily,
    delta: f64,
    config: &EmlConfig,
    rng: RngStream,
    exec: Execution,
) -> Result<Params> {
    let mut theta = *outer;
    let vp = solve_variance_drift(observations, outer, family, delta, config, rng, exec)?;
    apply_variance_coefficients(&mut theta, family, &vp);
    let [a0, a1] = solve_stock_drift(observations, &theta, family, delta, config, rng, exec)?;
    theta.a0 = a0;
    theta.a1 = a1;
    Ok(theta)
}
