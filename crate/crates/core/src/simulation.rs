//! Euler paths, bridge samplers and Monte Carlo expectations.
//!
//! Everything runs in `(X, Y)` coordinates with `Y = log(V)/sigma`, so simulated
//! variance stays positive without truncation. The `Y` equation has unit
//! diffusion; the `X` equation is driven by `sqrt(V) (rho dW^V + sqrt(1-rho^2) dW^X)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{gamma_inverse, variance_drift_p, ModelFamily, Params, State};
use crate::rng::{purpose, NormalSource, RngStream};

/// State in `(log price, transformed variance)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XY {
    pub x: f64,
    pub y: f64,
}

impl XY {
    pub fn new(x: f64, y: f64) -> Self {
        XY { x, y }
    }

    pub fn from_state(s: &State, sigma: f64) -> Self {
        XY { x: s.x, y: s.y(sigma) }
    }

    #[inline]
    pub fn v(&self, sigma: f64) -> f64 {
        gamma_inverse(self.y, sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    Physical,
    Pricing,
}

/// Validated drift/diffusion coefficients for one parameter point.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics {
    pub params: Params,
    pub family: ModelFamily,
    pub measure: Measure,
    rho_c: f64,
}

impl Dynamics {
    pub fn new(params: Params, family: ModelFamily, measure: Measure) -> Result<Self> {
        params.validate()?;
        if measure == Measure::Physical && family == ModelFamily::RandomWalk {
            return Err(Error::RandomWalkHasNoDrift);
        }
        let rho_c = (1.0 - params.rho * params.rho).sqrt();
        Ok(Dynamics { params, family, measure, rho_c })
    }

    #[inline]
    pub fn variance_drift(&self, v: f64) -> f64 {
        match self.measure {
            Measure::Pricing => self.params.b0_q + self.params.b1_q * v,
            Measure::Physical => variance_drift_p(v, &self.params, self.family),
        }
    }

    /// Drift of `Y`: `mu_V(V)/(sigma V) - sigma/2`.
    #[inline]
    pub fn y_drift(&self, y: f64) -> f64 {
        let s = self.params.sigma;
        let v = gamma_inverse(y, s);
        self.variance_drift(v) / (s * v) - 0.5 * s
    }

    #[inline]
    pub fn x_drift(&self, v: f64) -> f64 {
        match self.measure {
            Measure::Pricing => self.params.rate - 0.5 * v,
            Measure::Physical => self.params.a0 + self.params.a1 * v,
        }
    }

    /// One Euler step; `eps = (eps_x, eps_v)` are `N(0, dt)` draws.
    #[inline]
    pub fn step(&self, s: XY, dt: f64, eps: [f64; 2]) -> XY {
        let v = gamma_inverse(s.y, self.params.sigma);
        let y = s.y + self.y_drift(s.y) * dt + eps[1];
        let x = s.x
            + self.x_drift(v) * dt
            + v.sqrt() * (self.params.rho * eps[1] + self.rho_c * eps[0]);
        XY { x, y }
    }

    pub fn sqrt_one_minus_rho2(&self) -> f64 {
        self.rho_c
    }
}

/// Single Euler step of the joint system.
pub fn euler_step(
    state: XY,
    params: &Params,
    family: ModelFamily,
    measure: Measure,
    dt: f64,
    eps: [f64; 2],
) -> Result<XY> {
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::Domain(format!("time step must be non-negative, got {dt}")));
    }
    Ok(Dynamics::new(*params, family, measure)?.step(state, dt, eps))
}

/// Source of Euler innovations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Innovations {
    Gaussian(RngStream),
    /// All innovations zero; produces the deterministic drift path.
    Zero,
}

impl Innovations {
    fn for_path(&self, path: usize) -> Option<NormalSource> {
        match self {
            Innovations::Gaussian(rng) => {
                Some(rng.derive(purpose::SIMULATION, path as u64).normals())
            }
            Innovations::Zero => None,
        }
    }
}

/// Recorded states of an ensemble: `paths[p][k]` is path `p` at record point `k`
/// (record point 0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub dt: f64,
    pub record_every: usize,
    pub paths: Vec<Vec<XY>>,
}

/// Simulates `n_paths` independent Euler paths, recording every
/// `record_every` steps.
#[allow(clippy::too_many_arguments)]
pub fn simulate_paths(
    initial: XY,
    dynamics: &Dynamics,
    dt: f64,
    n_steps: usize,
    record_every: usize,
    n_paths: usize,
    innovations: Innovations,
    exec: Execution,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::Domain("need at least one path".into()));
    }
    if record_every == 0 || !(dt > 0.0) {
        return Err(Error::Domain("record interval and dt must be positive".into()));
    }
    let sd = dt.sqrt();
    let paths = exec.map(n_paths, |p| {
        let mut noise = innovations.for_path(p);
        let mut s = initial;
        let mut out = Vec::with_capacity(n_steps / record_every + 1);
        out.push(s);
        for k in 1..=n_steps {
            let eps = match noise.as_mut() {
                Some(src) => [sd * src.next(), sd * src.next()],
                None => [0.0, 0.0],
            };
            s = dynamics.step(s, dt, eps);
            if k % record_every == 0 {
                out.push(s);
            }
        }
        out
    });
    Ok(PathEnsemble { dt, record_every, paths })
}

/// Observations plus the `M-1` auxiliary points inside each interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub observations: Vec<XY>,
    /// `auxiliary[i]` holds `U_{i,1}..U_{i,M-1}`.
    pub auxiliary: Vec<Vec<XY>>,
    pub m: usize,
    /// Observation spacing in years.
    pub delta: f64,
}

impl LatticePath {
    /// Lattice with no auxiliary points filled yet.
    pub fn observed(observations: Vec<XY>, m: usize, delta: f64) -> Self {
        let n = observations.len().saturating_sub(1);
        LatticePath { observations, auxiliary: vec![Vec::new(); n], m, delta }
    }

    pub fn intervals(&self) -> usize {
        self.observations.len().saturating_sub(1)
    }

    /// Sub-step `delta / M`.
    pub fn fine_step(&self) -> f64 {
        self.delta / self.m as f64
    }

    /// Augmented sequence `U_{0,0}, U_{0,1}, ..., U_{N-1,M-1}, U_N` of length `M N + 1`.
    pub fn augmented(&self) -> Vec<XY> {
        let mut out = Vec::with_capacity(self.m * self.intervals() + 1);
        for (i, aux) in self.auxiliary.iter().enumerate() {
            out.push(self.observations[i]);
            out.extend_from_slice(aux);
        }
        if let Some(last) = self.observations.last() {
            out.push(*last);
        }
        out
    }
}

/// Bridge recursion
/// `U_{m+1} = U_m + (U_M - U_m)/(M - m) + sqrt((M-m-1)/(M-m)) G(U_m) eps`,
/// `eps ~ N(0, delta I)`, with the noise loading `G` supplied by the caller.
/// Writes the `M - 1` interior points into `out`. Noise is consumed as
/// `(eps_x, eps_v)` per step.
pub fn bridge_fill_with<G>(
    start: XY,
    end: XY,
    m_count: usize,
    delta: f64,
    normals: &mut NormalSource,
    loading: G,
    out: &mut Vec<XY>,
) where
    G: Fn(&XY) -> [[f64; 2]; 2],
{
    out.clear();
    if m_count <= 1 {
        return;
    }
    let sd = delta.sqrt();
    let mut u = start;
    for m in 0..m_count - 1 {
        let left = (m_count - m) as f64;
        let scale = ((left - 1.0) / left).sqrt() * sd;
        let (ex, ev) = (normals.next(), normals.next());
        let g = loading(&u);
        let nx = g[0][0] * ex + g[0][1] * ev;
        let ny = g[1][0] * ex + g[1][1] * ev;
        u = XY {
            x: u.x + (end.x - u.x) / left + scale * nx,
            y: u.y + (end.y - u.y) / left + scale * ny,
        };
        out.push(u);
    }
}

/// Brownian-bridge fill with independent unit-variance components.
pub fn brownian_bridge_fill(
    start: XY,
    end: XY,
    m_count: usize,
    delta: f64,
    normals: &mut NormalSource,
) -> Vec<XY> {
    let mut out = Vec::with_capacity(m_count.saturating_sub(1));
    bridge_fill_with(start, end, m_count, delta, normals, |_| IDENTITY, &mut out);
    out
}

pub const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

/// Diffusion loading of `(X, Y)` acting on `(eps_x, eps_v)`:
/// `[[sqrt(1-rho^2) e^{sigma y/2}, rho e^{sigma y/2}], [0, 1]]`.
#[inline]
pub fn xy_diffusion(u: &XY, sigma: f64, rho: f64) -> [[f64; 2]; 2] {
    let sv = (0.5 * sigma * u.y).exp();
    [[(1.0 - rho * rho).sqrt() * sv, rho * sv], [0.0, 1.0]]
}

/// Modified (state-scaled) bridge used as the importance sampler.
pub fn modified_bridge_fill(
    start: XY,
    end: XY,
    m_count: usize,
    delta: f64,
    params: &Params,
    normals: &mut NormalSource,
) -> Vec<XY> {
    let mut out = Vec::with_capacity(m_count.saturating_sub(1));
    modified_bridge_fill_into(start, end, m_count, delta, params, normals, &mut out);
    out
}

pub fn modified_bridge_fill_into(
    start: XY,
    end: XY,
    m_count: usize,
    delta: f64,
    params: &Params,
    normals: &mut NormalSource,
    out: &mut Vec<XY>,
) {
    let (sigma, rho) = (params.sigma, params.rho);
    bridge_fill_with(start, end, m_count, delta, normals, |u| xy_diffusion(u, sigma, rho), out);
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return McEstimate { mean, std_error: 0.0 };
        }
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        McEstimate { mean, std_error: (var / n).sqrt() }
    }
}

/// `E[payoff(path)]` over `n_paths` Euler paths on `[0, horizon]`. The payoff
/// sees every simulated state, starting with the initial one.
#[allow(clippy::too_many_arguments)]
pub fn conditional_expectation<F>(
    initial: XY,
    dynamics: &Dynamics,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    innovations: Innovations,
    exec: Execution,
    payoff: F,
) -> Result<McEstimate>
where
    F: Fn(&[XY]) -> f64 + Sync + Send,
{
    if horizon < 0.0 || !horizon.is_finite() {
        return Err(Error::Domain(format!("horizon must be non-negative, got {horizon}")));
    }
    let n_steps = (horizon / dt).round() as usize;
    let ens = simulate_paths(initial, dynamics, dt, n_steps, 1, n_paths, innovations, exec)?;
    let values: Vec<f64> = ens.paths.iter().map(|p| payoff(p)).collect();
    Ok(McEstimate::from_samples(&values))
}

/// Daily `(X, V)` observations of one physical-measure path simulated on a
/// grid of `steps_per_day` Euler steps per trading day. Row 0 is `initial`.
pub fn simulate_daily(
    initial: &State,
    params: &Params,
    family: ModelFamily,
    n_obs: usize,
    steps_per_day: usize,
    rng: RngStream,
) -> Result<Vec<State>> {
    if n_obs == 0 {
        return Ok(Vec::new());
    }
    if steps_per_day == 0 {
        return Err(Error::Domain("need at least one step per day".into()));
    }
    let dynamics = Dynamics::new(*params, family, Measure::Physical)?;
    let dt = crate::model::daily_step() / steps_per_day as f64;
    let ens = simulate_paths(
        XY::from_state(initial, params.sigma),
        &dynamics,
        dt,
        (n_obs - 1) * steps_per_day,
        steps_per_day,
        1,
        Innovations::Gaussian(rng),
        Execution::Sequential,
    )?;
    let mut out: Vec<State> = ens.paths[0].iter().map(|u| State { x: u.x, v: u.v(params.sigma) }).collect();
    out[0] = *initial;
    Ok(out)
}
