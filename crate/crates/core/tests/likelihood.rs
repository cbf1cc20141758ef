use nlsv::data::ObservedSeries;
use nlsv::exec::Execution;
use nlsv::fit::{fit, fit_with, from_outer, LikelihoodConfig};
use nlsv::likelihood::*;
use nlsv::model::{daily_step, ModelFamily, Params, State, SwapCoefficients};
use nlsv::rng::RngStream;
use nlsv::simulation::{modified_bridge_fill, simulate_daily, Dynamics, Measure, XY};
use proptest::prelude::*;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Independent Ornstein-Uhlenbeck components `du = -kappa u dt + dW`.
struct OrnsteinUhlenbeck {
    kappa: f64,
}

impl TransitionModel for OrnsteinUhlenbeck {
    fn drift(&self, u: &XY) -> [f64; 2] {
        [-self.kappa * u.x, -self.kappa * u.y]
    }
    fn loading(&self, _u: &XY) -> [[f64; 2]; 2] {
        [[1.0, 0.0], [0.0, 1.0]]
    }
}

impl OrnsteinUhlenbeck {
    fn exact_logdensity(&self, from: &XY, to: &XY, t: f64) -> f64 {
        let a = (-self.kappa * t).exp();
        let var = (1.0 - a * a) / (2.0 * self.kappa);
        let q = (to.x - a * from.x).powi(2) + (to.y - a * from.y).powi(2);
        -LN_2PI - var.ln() - 0.5 * q / var
    }
}

fn synthetic(params: &Params, family: ModelFamily, n: usize, seed: u64) -> ObservedSeries {
    let s0 = State::new(4.6, 0.025).unwrap();
    let path = simulate_daily(&s0, params, family, n, 8, RngStream::new(seed, 7)).unwrap();
    let swap = SwapCoefficients::for_params(params).unwrap();
    ObservedSeries::with_weekday_calendar(
        chrono::NaiveDate::from_ymd_opt(1990, 1, 2).unwrap(),
        path.iter().map(|s| s.x).collect(),
        path.iter().map(|s| swap.v_to_iv(s.v)).collect(),
    )
    .unwrap()
}

#[test]
fn euler_density_mode_and_normalization() {
    let p = Params::table_nonlinear();
    let d = Dynamics::new(p, ModelFamily::Nonlinear, Measure::Physical).unwrap();
    let curr = XY::new(0.0, (0.03f64).ln() / p.sigma);
    let dt = daily_step();
    let mu = d.drift(&curr);
    let mode = XY::new(curr.x + mu[0] * dt, curr.y + mu[1] * dt);
    let v = curr.v(p.sigma);
    // det(G G^T dt) = (1 - rho^2) V dt^2
    let det = (1.0 - p.rho * p.rho) * v * dt * dt;
    let lp = euler_logdensity(&d, &mode, &curr, dt);
    assert!((lp - (-LN_2PI - 0.5 * det.ln())).abs() < 1e-12);

    // midpoint rule over +-9 standard deviations in each coordinate
    let (sx, sy) = ((v * dt).sqrt(), dt.sqrt());
    let k = 600;
    let (hx, hy) = (18.0 * sx / k as f64, 18.0 * sy / k as f64);
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let x = mode.x - 9.0 * sx + (i as f64 + 0.5) * hx;
            let y = mode.y - 9.0 * sy + (j as f64 + 0.5) * hy;
            total += euler_logdensity(&d, &XY::new(x, y), &curr, dt).exp() * hx * hy;
        }
    }
    assert!((total - 1.0).abs() < 1e-4, "{total}");
}

#[test]
fn proposal_density_properties() {
    let p = Params::table_linear();
    let d = Dynamics::new(p, ModelFamily::Linear, Measure::Physical).unwrap();
    let curr = XY::new(0.0, -1.7);
    let dt = 1e-3;
    let off = XY::new(0.002, -0.03);
    let plus = proposal_logdensity(&d, &XY::new(curr.x + off.x, curr.y + off.y), &curr, &curr, 2, 10, dt).unwrap();
    let minus = proposal_logdensity(&d, &XY::new(curr.x - off.x, curr.y - off.y), &curr, &curr, 2, 10, dt).unwrap();
    assert_eq!(plus, minus);
    assert!(proposal_logdensity(&d, &curr, &curr, &curr, 9, 10, dt).is_err());

    // far from the pinned end the proposal is a slightly pulled Euler step without drift
    let end = XY::new(0.05, -1.6);
    let big = 1_000_000;
    let next = XY::new(0.001, -1.69);
    let q = proposal_logdensity(&d, &next, &curr, &end, 0, big, dt).unwrap();
    let shifted = XY::new(next.x - (end.x - curr.x) / big as f64, next.y - (end.y - curr.y) / big as f64);
    let g = gaussian_logdensity([shifted.x - curr.x, shifted.y - curr.y], d.loading(&curr), dt);
    assert!((q - g).abs() < 1e-5);
}

#[test]
fn brownian_transition_matches_exact_gaussian() {
    let cfg = SmlConfig { m: 24, s: 576 };
    let delta = daily_step();
    let mut normals = RngStream::new(3, 0).normals();
    let mut pairs = RngStream::new(4, 0).normals();
    let mut z = Vec::new();
    for i in 0..200 {
        let from = XY::new(pairs.next(), pairs.next());
        let to = XY::new(from.x + 2.0 * delta.sqrt() * pairs.next(), from.y + 2.0 * delta.sqrt() * pairs.next());
        let exact = gaussian_logdensity([to.x - from.x, to.y - from.y], [[1.0, 0.0], [0.0, 1.0]], delta);
        let est = sml_transition(&BrownianMotion, &from, &to, delta, &cfg, &mut normals, i).unwrap();
        assert!((est.log_density - exact).abs() < 1e-9);
        // the bridge proposal is the exact bridge law here, so the weights are
        // constant and only rounding noise is left in the standard error
        let se = est.relative_se * exact.exp();
        if est.relative_se > 1e-8 {
            z.push((est.log_density.exp() - exact.exp()) / se);
        }
    }
    if !z.is_empty() {
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() <= 0.25);
    }
}

#[test]
fn ornstein_uhlenbeck_transition_converges() {
    let model = OrnsteinUhlenbeck { kappa: 3.0 };
    let delta = 0.25;
    let from = XY::new(0.8, -0.5);
    let to = XY::new(0.3, 0.1);
    let exact = model.exact_logdensity(&from, &to, delta);
    let err = |m| {
        let mut normals = RngStream::new(5, m as u64).normals();
        (sml_transition(&model, &from, &to, delta, &SmlConfig { m, s: 4096 }, &mut normals, 0).unwrap().log_density - exact).abs()
    };
    // Euler bias dominates at M = 2; by M = 64 only Monte Carlo noise is left
    let (coarse, fine) = (err(2), err(64));
    assert!(fine < 0.01, "{fine}");
    assert!(coarse > 5.0 * fine, "{coarse} vs {fine}");
}

#[test]
fn importance_spread_shrinks_with_draws() {
    let model = OrnsteinUhlenbeck { kappa: 3.0 };
    let (from, to) = (XY::new(0.8, -0.5), XY::new(0.3, 0.1));
    let spread = |s: usize| {
        let vals: Vec<f64> = (0..60)
            .map(|r| {
                let mut normals = RngStream::new(77, r).normals();
                sml_transition(&model, &from, &to, 0.25, &SmlConfig { m: 8, s }, &mut normals, 0).unwrap().log_density
            })
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    };
    let ratio = spread(576) / spread(5760);
    assert!((2.0..5.0).contains(&ratio), "{ratio}");
}

#[test]
fn single_substep_is_euler_density() {
    let p = Params::table_nonlinear();
    let d = Dynamics::new(p, ModelFamily::Nonlinear, Measure::Physical).unwrap();
    let (a, b) = (XY::new(0.0, -1.6), XY::new(0.01, -1.58));
    let mut normals = RngStream::new(1, 0).normals();
    let est = sml_transition(&d, &a, &b, daily_step(), &SmlConfig { m: 1, s: 50 }, &mut normals, 0).unwrap();
    assert_eq!(est.log_density, euler_logdensity(&d, &b, &a, daily_step()));
}

#[test]
fn likelihood_forms_agree() {
    let p = Params::table_nonlinear();
    let series = synthetic(&p, ModelFamily::Nonlinear, 300, 1);
    let swap = SwapCoefficients::for_params(&p).unwrap();
    let states = transform_series(&series.x, &series.iv, &p).unwrap();
    let d = Dynamics::new(p, ModelFamily::Nonlinear, Measure::Physical).unwrap();
    let cfg = SmlConfig { m: 4, s: 16 };
    let lp: Vec<f64> = transition_logdensities(&d, &states, daily_step(), &cfg, RngStream::new(1, 0), Execution::Parallel)
        .into_iter()
        .map(|e| e.unwrap().log_density)
        .collect();
    let y: Vec<f64> = states[1..].iter().map(|u| u.y).collect();
    let v: Vec<f64> = states[1..].iter().map(|u| u.v(p.sigma)).collect();
    let fy = y_form_loglik(&lp, &y, p.sigma, swap.b);
    let fv = v_form_loglik(&lp, &v, p.sigma, swap.b);
    assert!((fy - fv).abs() < 1e-8 * fy.abs().max(1.0));
    let raw = loglik_raw(&series.x, &series.iv, &p, ModelFamily::Nonlinear, &cfg, RngStream::new(1, 0), Execution::Parallel).unwrap();
    assert!((raw.total - fy).abs() < 1e-8 * fy.abs());
    assert_eq!(raw.contributions.len(), series.len() - 1);

    // with B = 1, sigma = 1 and Y = 0 the likelihood is the plain density sum
    let zeros = vec![0.0; lp.len()];
    assert!((y_form_loglik(&lp, &zeros, 1.0, 1.0) - lp.iter().sum::<f64>()).abs() < 1e-9);
}

#[test]
fn score_matches_euler_gradient() {
    let p = Params::table_nonlinear();
    let series = synthetic(&p, ModelFamily::Nonlinear, 400, 3);
    let cfg = SmlConfig { m: 1, s: 1 };
    let ll = |a0: f64| {
        let q = Params { a0, ..p };
        loglik_raw(&series.x, &series.iv, &q, ModelFamily::Nonlinear, &cfg, RngStream::new(1, 0), Execution::Sequential)
            .unwrap()
            .total
    };
    let h = 1e-4;
    let numeric = (ll(p.a0 + h) - ll(p.a0 - h)) / (2.0 * h);

    // d/da0 log N(d; 0, C) = dt [C^{-1} d]_x with the x-drift a0 + a1 V
    let states = transform_series(&series.x, &series.iv, &p).unwrap();
    let dt = daily_step();
    let rc2 = 1.0 - p.rho * p.rho;
    let mut analytic = 0.0;
    for w in states.windows(2) {
        let v = w[0].v(p.sigma);
        let mu_v = p.b0 + p.b1 * v + p.b2 * v * v + p.b3 / v;
        let dx = w[1].x - w[0].x - (p.a0 + p.a1 * v) * dt;
        let dy = w[1].y - w[0].y - (mu_v / (p.sigma * v) - 0.5 * p.sigma) * dt;
        let (c00, c01, c11) = (v * dt, p.rho * v.sqrt() * dt, dt);
        let det = c00 * c11 - c01 * c01;
        debug_assert!((det - rc2 * v * dt * dt).abs() < 1e-12 * det);
        analytic += dt * (c11 * dx - c01 * dy) / det;
    }
    assert!((numeric - analytic).abs() < 1e-4 * analytic.abs(), "{numeric} vs {analytic}");
}

#[test]
fn doubling_draws_is_within_monte_carlo_error() {
    let p = Params::table_nonlinear();
    let series = synthetic(&p, ModelFamily::Nonlinear, 400, 9);
    let run = |s| {
        loglik_raw(&series.x, &series.iv, &p, ModelFamily::Nonlinear, &SmlConfig { m: 6, s }, RngStream::new(4, 0), Execution::Parallel)
            .unwrap()
    };
    let (a, b) = (run(64), run(128));
    let pooled = (a.mc_std_error.powi(2) + b.mc_std_error.powi(2)).sqrt();
    assert!((a.total - b.total).abs() < 3.0 * pooled, "{} vs {} (se {pooled})", a.total, b.total);
}

#[test]
fn loglik_is_independent_of_execution_mode() {
    let p = Params::table_nonlinear();
    let series = synthetic(&p, ModelFamily::Nonlinear, 300, 2);
    let cfg = SmlConfig { m: 6, s: 32 };
    let run = |exec| loglik_raw(&series.x, &series.iv, &p, ModelFamily::Nonlinear, &cfg, RngStream::new(8, 0), exec).unwrap();
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

#[test]
fn infeasible_transform_gives_negative_infinity() {
    let p = Params::table_nonlinear();
    let mut series = synthetic(&p, ModelFamily::Nonlinear, 50, 2);
    let swap = SwapCoefficients::for_params(&p).unwrap();
    series.iv[10] = 0.5 * swap.a;
    series.iv[20] = 0.1 * swap.a;
    let ll = loglik_raw(&series.x, &series.iv, &p, ModelFamily::Nonlinear, &SmlConfig { m: 2, s: 4 }, RngStream::new(1, 0), Execution::Sequential)
        .unwrap();
    assert_eq!(ll.total, f64::NEG_INFINITY);
    assert_eq!(ll.failed, 2);
}

fn small_config() -> LikelihoodConfig {
    LikelihoodConfig { m: 3, s: 9, n_bridges: 9, max_evals: 60, restarts: 0, min_obs: 100, ..LikelihoodConfig::default() }
}

#[test]
fn fit_is_deterministic_across_modes() {
    let series = synthetic(&Params::table_linear(), ModelFamily::Linear, 400, 5);
    let cfg = small_config();
    let a = fit(&series, ModelFamily::Linear, &cfg, None).unwrap();
    let b = fit(&series, ModelFamily::Linear, &cfg, None).unwrap();
    assert_eq!(a, b);
    let seq = fit(&series, ModelFamily::Linear, &LikelihoodConfig { exec: Execution::Sequential, ..cfg }, None).unwrap();
    assert_eq!(a.params, seq.params);
    assert_eq!(a.loglik, seq.loglik);
    assert_eq!(a.std_errors, seq.std_errors);

    let cov = a.covariance.as_ref().unwrap();
    let se = a.std_errors.as_ref().unwrap();
    for i in 0..cov.len() {
        assert!(se[i].is_finite() && se[i] > 0.0);
        assert!((se[i] - cov[i][i].sqrt()).abs() < 1e-15 * se[i].max(1.0));
        for j in 0..cov.len() {
            assert!((cov[i][j] - cov[j][i]).abs() <= 1e-10 * (cov[i][i] * cov[j][j]).sqrt());
        }
    }
}

#[test]
fn fit_rejects_short_series_and_random_walk() {
    let series = synthetic(&Params::table_linear(), ModelFamily::Linear, 50, 5);
    assert!(fit_with(&series, ModelFamily::Linear, &small_config(), None, false).is_err());
    let long = synthetic(&Params::table_linear(), ModelFamily::Linear, 150, 5);
    assert!(fit_with(&long, ModelFamily::RandomWalk, &small_config(), None, false).is_err());
}

#[test]
fn linear_recovery_within_three_standard_errors() {
    let truth = Params::table_linear();
    let series = synthetic(&truth, ModelFamily::Linear, 2500, 11);
    let cfg = LikelihoodConfig { m: 4, s: 16, n_bridges: 16, max_evals: 300, restarts: 1, ..LikelihoodConfig::default() };
    let fit = fit(&series, ModelFamily::Linear, &cfg, None).unwrap();
    for (name, est) in fit.names.iter().zip(&fit.estimates) {
        let se = fit.std_error(name).unwrap();
        let t = truth.get(name).unwrap();
        assert!((est - t).abs() < 3.0 * se, "{name}: {est} vs {t} (se {se})");
    }
}

proptest! {
    #[test]
    fn outer_transform_keeps_constraints(phi in prop::array::uniform4(-20.0..20.0f64)) {
        let p = from_outer(&phi, &Params::table_linear());
        prop_assert!(p.b0_q > 0.0 && p.sigma > 0.0 && p.rho.abs() <= 1.0);
    }

    #[test]
    fn bridge_draws_have_finite_proposal_density(seed in any::<u64>(), m in 2usize..30) {
        let p = Params::table_nonlinear();
        let d = Dynamics::new(p, ModelFamily::Nonlinear, Measure::Physical).unwrap();
        let (a, b) = (XY::new(0.0, -1.6), XY::new(0.012, -1.55));
        let dt = daily_step() / m as f64;
        let fill = modified_bridge_fill(a, b, m, dt, &p, &mut RngStream::new(seed, 0).normals());
        let mut prev = a;
        for (k, u) in fill.iter().enumerate() {
            let q = proposal_logdensity(&d, u, &prev, &b, k, m, dt).unwrap();
            prop_assert!(q.is_finite());
            prev = *u;
        }
    }
}
