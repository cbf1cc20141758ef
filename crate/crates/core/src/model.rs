//! Model mathematics for the joint log-price / instantaneous-variance diffusion.
//!
//! Under the pricing measure the state `(X, V)` follows
//!
//! ```text
//! dX = (r - V/2) dt + sqrt(V) (rho dW^V + sqrt(1 - rho^2) dW^X)
//! dV = (b0_q + b1_q V) dt + sigma V dW^V
//! ```
//!
//! and the physical drift is `drift_q + D * f` for an excess-drift function `f`
//! and a dampening factor `D` that keeps the market price of risk bounded. The
//! variance is usually carried as `Y = log(V) / sigma`, which has unit diffusion.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trading days per year.
pub const TRADING_DAYS: f64 = 262.0;
/// Trading days in the variance-swap window of the volatility index.
pub const SWAP_WINDOW_DAYS: f64 = 22.0;
/// Trading hours per day used for intraday Euler grids.
pub const HOURS_PER_DAY: f64 = 8.0;
pub const DEFAULT_RATE: f64 = 0.05;
pub const DEFAULT_DAMPING: f64 = 1e-6;

/// Observation spacing in years.
pub fn daily_step() -> f64 {
    1.0 / TRADING_DAYS
}

/// Variance-swap horizon `22/262` in years.
pub fn swap_horizon() -> f64 {
    SWAP_WINDOW_DAYS / TRADING_DAYS
}

/// Series switch point for `(e^z - 1)/z`.
const SWAP_SERIES_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum ModelFamily {
    #[serde(rename = "RW")]
    RandomWalk,
    #[serde(rename = "LN")]
    Linear,
    #[serde(rename = "NL")]
    Nonlinear,
}

impl ModelFamily {
    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::RandomWalk => "RW",
            ModelFamily::Linear => "LN",
            ModelFamily::Nonlinear => "NL",
        }
    }

    /// Number of variance-drift basis functions (`L + 1`).
    pub fn basis_count(self) -> usize {
        match self {
            ModelFamily::RandomWalk => 0,
            ModelFamily::Linear => 2,
            ModelFamily::Nonlinear => 4,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RW" => Ok(ModelFamily::RandomWalk),
            "LN" => Ok(ModelFamily::Linear),
            "NL" => Ok(ModelFamily::Nonlinear),
            other => Err(Error::Config(format!("unknown model family `{other}`"))),
        }
    }

    fn require_drift(self) -> Result<()> {
        if self == ModelFamily::RandomWalk {
            Err(Error::RandomWalkHasNoDrift)
        } else {
            Ok(())
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Full parameter vector. `b0`, `b2`, `b3` are only read by the nonlinear family;
/// the linear variance drift uses `b0_q` as its intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub sigma: f64,
    pub rho: f64,
    pub b0_q: f64,
    pub b1_q: f64,
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    /// Constant short rate, fixed input.
    pub rate: f64,
    /// Dampening constant `c`, fixed input.
    pub damping: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            sigma: 1.0,
            rho: 0.0,
            b0_q: 0.05,
            b1_q: -1.0,
            a0: 0.0,
            a1: 0.0,
            b0: 0.0,
            b1: 0.0,
            b2: 0.0,
            b3: 0.0,
            rate: DEFAULT_RATE,
            damping: DEFAULT_DAMPING,
        }
    }
}

/// One named group of the parameter partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamGroup {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
}

/// `theta = sigma-group ∪ Q-group ∪ stock-P-group ∪ variance-P-group`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub shared: ParamGroup,
    pub pricing: ParamGroup,
    pub stock_physical: ParamGroup,
    pub variance_physical: ParamGroup,
}

impl Partition {
    pub fn all_names(&self) -> Vec<&'static str> {
        [&self.shared, &self.pricing, &self.stock_physical, &self.variance_physical]
            .iter()
            .flat_map(|g| g.names.iter().copied())
            .collect()
    }
}

impl Params {
    /// Paper-reported full-sample estimates for the linear model.
    pub fn table_linear() -> Self {
        Params {
            sigma: 2.2047,
            rho: -0.6768,
            b0_q: 0.05817,
            b1_q: 10.9858,
            a0: 0.0748,
            a1: 3.3370,
            b0: 0.05817,
            b1: -1.7645,
            b2: 0.0,
            b3: 0.0,
            ..Params::default()
        }
    }

    /// Paper-reported full-sample estimates for the nonlinear model.
    pub fn table_nonlinear() -> Self {
        Params {
            sigma: 2.1734,
            rho: -0.6803,
            b0_q: 0.0500,
            b1_q: 11.3260,
            a0: 0.0284,
            a1: 6.0870,
            b0: -0.1064,
            b1: 8.9591,
            b2: -180.7473,
            b3: 0.00068,
            ..Params::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma, self.rho, self.b0_q, self.b1_q, self.a0, self.a1, self.b0, self.b1,
            self.b2, self.b3, self.rate, self.damping,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::Domain(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if self.b0_q <= 0.0 {
            return Err(Error::Domain(format!("b0_q must be positive, got {}", self.b0_q)));
        }
        if self.damping <= 0.0 {
            return Err(Error::Domain("dampening constant must be positive".into()));
        }
        Ok(())
    }

    /// Physical-measure variance drift coefficients on the basis `(1/V, 1, V, 1/V^2)`
    /// scaled by `1/sigma`; the linear model's intercept is the pricing intercept.
    pub fn variance_coefficients(&self, family: ModelFamily) -> [f64; 4] {
        match family {
            ModelFamily::Nonlinear => [self.b0, self.b1, self.b2, self.b3],
            _ => [self.b0_q, self.b1, 0.0, 0.0],
        }
    }

    pub fn partition(&self, family: ModelFamily) -> Partition {
        let g = |names: Vec<&'static str>, values: Vec<f64>| ParamGroup { names, values };
        match family {
            ModelFamily::Nonlinear => Partition {
                shared: g(vec!["sigma", "rho"], vec![self.sigma, self.rho]),
                pricing: g(vec!["b0_q", "b1_q"], vec![self.b0_q, self.b1_q]),
                stock_physical: g(vec!["a0", "a1"], vec![self.a0, self.a1]),
                variance_physical: g(
                    vec!["b0", "b1", "b2", "b3"],
                    vec![self.b0, self.b1, self.b2, self.b3],
                ),
            },
            _ => Partition {
                shared: g(vec!["sigma", "rho", "b0_q"], vec![self.sigma, self.rho, self.b0_q]),
                pricing: g(vec!["b1_q"], vec![self.b1_q]),
                stock_physical: g(vec!["a0", "a1"], vec![self.a0, self.a1]),
                variance_physical: g(vec!["b1"], vec![self.b1]),
            },
        }
    }

    /// Estimated parameter names in reporting order.
    pub fn estimated_names(family: ModelFamily) -> Vec<&'static str> {
        match family {
            ModelFamily::Nonlinear => vec![
                "sigma", "rho", "b0_q", "b1_q", "a0", "a1", "b0", "b1", "b2", "b3",
            ],
            _ => vec!["sigma", "rho", "b0_q", "b1_q", "a0", "a1", "b1"],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "sigma" => self.sigma,
            "rho" => self.rho,
            "b0_q" => self.b0_q,
            "b1_q" => self.b1_q,
            "a0" => self.a0,
            "a1" => self.a1,
            "b0" => self.b0,
            "b1" => self.b1,
            "b2" => self.b2,
            "b3" => self.b3,
            "rate" => self.rate,
            "damping" => self.damping,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "sigma" => &mut self.sigma,
            "rho" => &mut self.rho,
            "b0_q" => &mut self.b0_q,
            "b1_q" => &mut self.b1_q,
            "a0" => &mut self.a0,
            "a1" => &mut self.a1,
            "b0" => &mut self.b0,
            "b1" => &mut self.b1,
            "b2" => &mut self.b2,
            "b3" => &mut self.b3,
            "rate" => &mut self.rate,
            "damping" => &mut self.damping,
            other => return Err(Error::Config(format!("unknown parameter `{other}`"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Point of the state space `R x (0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub v: f64,
}

impl State {
    pub fn new(x: f64, v: f64) -> Result<Self> {
        if !x.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite("state"));
        }
        if v <= 0.0 {
            return Err(Error::Domain(format!("variance must be positive, got {v}")));
        }
        Ok(State { x, v })
    }

    pub fn from_y(x: f64, y: f64, sigma: f64) -> Self {
        State { x, v: gamma_inverse(y, sigma) }
    }

    pub fn y(&self, sigma: f64) -> f64 {
        self.v.ln() / sigma
    }
}

fn check_state(state: &State) -> Result<()> {
    if !state.x.is_finite() || !state.v.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    if state.v <= 0.0 {
        return Err(Error::Domain(format!("variance must be positive, got {}", state.v)));
    }
    Ok(())
}

/// Risk-neutral drift `(r - V/2, b0_q + b1_q V)`.
pub fn drift_q(state: &State, params: &Params) -> Result<[f64; 2]> {
    check_state(state)?;
    if ![params.rate, params.b0_q, params.b1_q].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("pricing parameters"));
    }
    Ok([params.rate - 0.5 * state.v, params.b0_q + params.b1_q * state.v])
}

/// Physical-measure variance drift evaluated at `v` (no domain checks).
#[inline]
pub fn variance_drift_p(v: f64, params: &Params, family: ModelFamily) -> f64 {
    match family {
        ModelFamily::Nonlinear => params.b0 + params.b1 * v + params.b2 * v * v + params.b3 / v,
        _ => params.b0_q + params.b1 * v,
    }
}

/// Physical-measure drift of `(X, V)`.
pub fn drift_p(state: &State, params: &Params, family: ModelFamily) -> Result<[f64; 2]> {
    family.require_drift()?;
    check_state(state)?;
    Ok([params.a0 + params.a1 * state.v, variance_drift_p(state.v, params, family)])
}

/// Excess drift `f` with `drift_q + f = drift_p`.
pub fn excess_drift(state: &State, params: &Params, family: ModelFamily) -> Result<[f64; 2]> {
    family.require_drift()?;
    check_state(state)?;
    let v = state.v;
    let fx = params.a0 - params.rate + (params.a1 + 0.5) * v;
    let fv = match family {
        ModelFamily::Nonlinear => {
            params.b0 - params.b0_q
                + (params.b1 - params.b1_q) * v
                + params.b2 * v * v
                + params.b3 / v
        }
        _ => (params.b1 - params.b1_q) * v,
    };
    Ok([fx, fv])
}

/// Diffusion matrix of `(X, V)`: `sqrt(V) [[sqrt(1-rho^2), rho], [0, sigma sqrt(V)]]`.
pub fn diffusion_matrix(v: f64, params: &Params) -> Matrix2<f64> {
    let sv = v.sqrt();
    let rc = (1.0 - params.rho * params.rho).sqrt();
    Matrix2::new(sv * rc, sv * params.rho, 0.0, params.sigma * v)
}

/// `|det Sigma| = sigma V^{3/2} sqrt(1 - rho^2)`.
pub fn diffusion_determinant(v: f64, params: &Params) -> f64 {
    params.sigma * v.powf(1.5) * (1.0 - params.rho * params.rho).sqrt()
}

/// Dampening factor `exp(-c/|det Sigma| - c sum_j |f_j|)`, in `(0, 1]`.
pub fn dampening(state: &State, params: &Params, family: ModelFamily) -> Result<f64> {
    let f = excess_drift(state, params, family)?;
    let c = params.damping;
    if c <= 0.0 {
        return Err(Error::Domain("dampening constant must be positive".into()));
    }
    let det = diffusion_determinant(state.v, params);
    Ok((-c / det - c * (f[0].abs() + f[1].abs())).exp())
}

/// Market price of risk `Sigma^{-1} f`, optionally scaled by the dampening factor.
/// The second component is the variance risk premium.
pub fn market_price_of_risk(
    state: &State,
    params: &Params,
    family: ModelFamily,
    apply_dampening: bool,
) -> Result<[f64; 2]> {
    let f = excess_drift(state, params, family)?;
    let v = state.v;
    let rc = (1.0 - params.rho * params.rho).sqrt();
    // back substitution on the upper-triangular diffusion matrix
    let lv = f[1] / (params.sigma * v);
    let lx = (f[0] - params.rho * v.sqrt() * lv) / (v.sqrt() * rc);
    let scale = if apply_dampening { dampening(state, params, family)? } else { 1.0 };
    Ok([scale * lx, scale * lv])
}

/// Residual `Sigma * Lambda - D f` (zero up to rounding).
pub fn risk_equation_residual(
    state: &State,
    params: &Params,
    family: ModelFamily,
    apply_dampening: bool,
) -> Result<f64> {
    let lam = market_price_of_risk(state, params, family, apply_dampening)?;
    let f = excess_drift(state, params, family)?;
    let d = if apply_dampening { dampening(state, params, family)? } else { 1.0 };
    let r = diffusion_matrix(state.v, params) * Vector2::new(lam[0], lam[1])
        - Vector2::new(d * f[0], d * f[1]);
    Ok(r.amax())
}

/// `gamma(v) = log(v) / sigma`.
pub fn gamma_transform(v: f64, sigma: f64) -> Result<f64> {
    if !v.is_finite() || !sigma.is_finite() {
        return Err(Error::NonFinite("variance transform input"));
    }
    if v <= 0.0 {
        return Err(Error::Domain(format!("variance must be positive, got {v}")));
    }
    Ok(v.ln() / sigma)
}

#[inline]
pub fn gamma_inverse(y: f64, sigma: f64) -> f64 {
    (sigma * y).exp()
}

/// Coefficients of `(1/tau) E^Q[int_t^{t+tau} V_s ds] = A + B V_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapCoefficients {
    pub a: f64,
    pub b: f64,
}

pub fn swap_coefficients(b0_q: f64, b1_q: f64, tau: f64) -> Result<SwapCoefficients> {
    if !(b0_q.is_finite() && b1_q.is_finite() && tau.is_finite()) {
        return Err(Error::NonFinite("swap coefficient input"));
    }
    if tau <= 0.0 {
        return Err(Error::Domain(format!("swap horizon must be positive, got {tau}")));
    }
    let z = b1_q * tau;
    if z.abs() > SWAP_SERIES_THRESHOLD {
        let b = z.exp_m1() / z;
        let a = -(b0_q / b1_q) * (1.0 - b);
        Ok(SwapCoefficients { a, b })
    } else {
        // (e^z - 1)/z = 1 + z/2 + z^2/6 + z^3/24 + ...
        let b = 1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0));
        let a = b0_q * tau * (0.5 + z * (1.0 / 6.0 + z / 24.0));
        Ok(SwapCoefficients { a, b })
    }
}

impl SwapCoefficients {
    pub fn for_params(params: &Params) -> Result<Self> {
        swap_coefficients(params.b0_q, params.b1_q, swap_horizon())
    }

    /// `V = (IV - A) / B`; non-positive results are a domain violation.
    pub fn iv_to_v(&self, iv: f64) -> Result<f64> {
        if !iv.is_finite() {
            return Err(Error::NonFinite("implied variance"));
        }
        let v = (iv - self.a) / self.b;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!(
                "implied variance {iv} maps to non-positive variance {v} (A = {}, B = {})",
                self.a, self.b
            )))
        }
    }

    pub fn v_to_iv(&self, v: f64) -> f64 {
        self.a + self.b * v
    }
}
