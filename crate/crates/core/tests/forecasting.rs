use nlsv::data::ObservedSeries;
use nlsv::exec::Execution;
use nlsv::fit::LikelihoodConfig;
use nlsv::forecast::*;
use nlsv::model::{daily_step, ModelFamily, Params, State, SwapCoefficients};
use nlsv::rng::{purpose, RngStream};
use nlsv::simulation::{conditional_expectation, simulate_daily, Dynamics, Innovations, Measure, XY};
use proptest::prelude::*;

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

/// Independent realized-variance implementation working on explicit returns.
fn naive_rv(x: &[f64], i: usize, n: usize) -> f64 {
    let mut returns = Vec::new();
    let mut j = i;
    while returns.len() < n {
        returns.push(x[j] - x[j - 1]);
        j -= 1;
    }
    returns.iter().map(|r| r * r).sum::<f64>() * 262.0 / n as f64
}

#[test]
fn default_horizons() {
    let g = HorizonGrid::default();
    assert_eq!(g.levels, vec![1, 5, 22, 66, 131]);
    assert_eq!(g.rv, vec![5, 22, 66, 131]);
    assert_eq!(g.max(), 131);
}

#[test]
fn model_rv_of_ramp_is_midpoint() {
    let v: Vec<f64> = (0..11).map(|i| 0.01 + 0.001 * i as f64).collect();
    let got = model_realized_variance(&v, 10, 10).unwrap();
    assert!((got - 0.5 * (v[1] + v[10])).abs() < 1e-15);
    assert!(model_realized_variance(&v, 3, 5).is_err());
}

#[test]
fn metric_definitions() {
    let perfect = metrics(&[1.0, 3.0], &[1.0, 3.0], &[0.0, 4.0]).unwrap();
    assert_eq!((perfect.mae, perfect.rmse, perfect.dir), (0.0, 0.0, 1.0));

    let m = metrics(&[0.0, 0.0], &[1.0, -1.0], &[0.0, 0.0]).unwrap();
    assert_eq!((m.mae, m.rmse), (1.0, 1.0));
    // no-change forecasts score only where nothing changed
    assert_eq!(m.dir, 0.0);
    assert_eq!(metrics(&[2.0, 5.0], &[2.0, 4.0], &[2.0, 5.0]).unwrap().dir, 0.5);

    let realized = [0.3, 0.1, 0.7, 0.2, 0.5];
    let mean = realized.iter().sum::<f64>() / 5.0;
    let nm = metrics(&[mean; 5], &realized, &[0.4; 5]).unwrap();
    assert!((nm.nmse.unwrap() - 1.0).abs() < 1e-14);
    assert!(metrics(&[1.0; 3], &[2.0; 3], &[1.0; 3]).unwrap().nmse.is_none());
    assert!(metrics(&[], &[], &[]).is_err());
}

#[test]
fn clark_west_conventions() {
    let e = [0.1, -0.2, 0.3, 0.05];
    let y = [1.0, 1.1, 0.9, 1.2];
    let same = clark_west(&e, &e, &y, &y, 5).unwrap();
    assert!(same.degenerate);
    assert_eq!(same.p_value, 1.0);

    // nesting model strictly better at every date
    let mut n = RngStream::new(5, 0).normals();
    let mut es = Vec::new();
    let mut eb = Vec::new();
    let mut ys = Vec::new();
    let mut yb = Vec::new();
    for _ in 0..500 {
        let noise = 0.5 * n.next();
        let signal = 0.3 + 0.1 * n.next().abs();
        ys.push(0.0);
        yb.push(signal);
        es.push(signal + noise);
        eb.push(noise * 0.5);
    }
    let cw = clark_west(&es, &eb, &ys, &yb, 1).unwrap();
    assert!(cw.p_value < 0.05, "{cw:?}");
    assert!(clark_west(&[1.0], &[1.0, 2.0], &[0.0], &[0.0], 1).is_err());
}

fn ols(y: &[f64], x: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// `y_t = 0.5 + beta x_{t-1} + e_t` with a persistent AR(1) predictor. The
/// small model forecasts the rolling mean, the big one adds the predictor,
/// both estimated on the previous 120 observations.
fn cw_rejection_rate(beta: f64, reps: usize, seed: u64) -> f64 {
    let (window, n_out) = (120usize, 240usize);
    let mut rejections = 0;
    for r in 0..reps {
        let mut n = RngStream::new(seed, r as u64).normals();
        let total = window + n_out + 1;
        let mut x = vec![0.0; total];
        x[0] = n.next() / (1.0f64 - 0.95 * 0.95).sqrt();
        for t in 1..total {
            x[t] = 0.95 * x[t - 1] + n.next();
        }
        let y: Vec<f64> = (0..total).map(|t| 0.5 + if t > 0 { beta * x[t - 1] } else { 0.0 } + n.next()).collect();
        let (mut es, mut eb, mut ys, mut yb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for t in window + 1..total {
            let yw = &y[t - window..t];
            let (a, b) = ols(yw, &x[t - window - 1..t - 1]);
            let fs = yw.iter().sum::<f64>() / window as f64;
            let fb = a + b * x[t - 1];
            ys.push(fs);
            yb.push(fb);
            es.push(y[t] - fs);
            eb.push(y[t] - fb);
        }
        if clark_west(&es, &eb, &ys, &yb, 1).unwrap().p_value < 0.05 {
            rejections += 1;
        }
    }
    rejections as f64 / reps as f64
}

#[test]
fn clark_west_size_and_power() {
    let size = cw_rejection_rate(0.0, 500, 31);
    assert!((0.02..=0.09).contains(&size), "size {size}");
    let power = cw_rejection_rate(0.3, 200, 32);
    assert!(power > 0.8, "power {power}");
}

#[test]
fn random_walk_repeats_current_values() {
    let cfg = ForecastConfig { n_paths: 10, ..ForecastConfig::default() };
    let f = forecast_targets(4.2, 0.05, ModelFamily::RandomWalk, &Params::default(), &cfg, RngStream::new(1, 0)).unwrap();
    assert!(f.x.iter().all(|v| *v == 4.2));
    assert!(f.iv.iter().chain(&f.rv).all(|v| *v == 0.05));
    assert_eq!(f.x.len(), 5);
    assert_eq!(f.rv.len(), 4);
}

#[test]
fn zero_horizon_returns_current_state() {
    let cfg = ForecastConfig { n_paths: 50, horizons: HorizonGrid::uniform(&[0]), ..ForecastConfig::default() };
    for (family, p) in [(ModelFamily::Linear, Params::table_linear()), (ModelFamily::Nonlinear, Params::table_nonlinear())] {
        let f = forecast_targets(4.2, 0.05, family, &p, &cfg, RngStream::new(1, 0)).unwrap();
        assert_eq!(f.x[0], 4.2);
        assert!((f.iv[0] - 0.05).abs() < 1e-15);
    }
}

#[test]
fn linear_forecasts_match_closed_form() {
    let p = Params::table_linear();
    let swap = SwapCoefficients::for_params(&p).unwrap();
    let iv_now = 0.045;
    let v0 = swap.iv_to_v(iv_now).unwrap();
    let days = [22usize, 66];
    let cfg = ForecastConfig {
        n_paths: 20_000,
        steps_per_day: 8,
        horizons: HorizonGrid { levels: days.to_vec(), rv: days.to_vec() },
        seed: 1,
        exec: Execution::Parallel,
    };
    let rng = RngStream::new(9, 0);
    let f = forecast_targets(0.0, iv_now, ModelFamily::Linear, &p, &cfg, rng).unwrap();
    let dynamics = Dynamics::new(p, ModelFamily::Linear, Measure::Physical).unwrap();
    // physical variance drift b0_q + b1 V
    let k = p.b0_q / p.b1;
    let mean_v = |t: f64| -k + (v0 + k) * (p.b1 * t).exp();
    for (i, &h) in days.iter().enumerate() {
        let dt = daily_step() / 8.0;
        let start = XY::from_state(&State::new(0.0, v0).unwrap(), p.sigma);
        let terminal = conditional_expectation(start, &dynamics, h as f64 * daily_step(), dt, cfg.n_paths, Innovations::Gaussian(rng), Execution::Parallel, |path| {
            path.last().unwrap().v(p.sigma)
        })
        .unwrap();
        let exact_iv = swap.v_to_iv(mean_v(h as f64 * daily_step()));
        assert!((f.iv[i] - exact_iv).abs() < 3.0 * swap.b * terminal.std_error, "IV h={h}: {} vs {exact_iv}", f.iv[i]);

        let average = conditional_expectation(start, &dynamics, h as f64 * daily_step(), dt, cfg.n_paths, Innovations::Gaussian(rng), Execution::Parallel, |path| {
            (1..=h).map(|j| path[8 * j].v(p.sigma)).sum::<f64>() / h as f64
        })
        .unwrap();
        let exact_rv = (1..=h).map(|j| mean_v(j as f64 * daily_step())).sum::<f64>() / h as f64;
        assert!((f.rv[i] - average.mean).abs() < 1e-12 * exact_rv);
        assert!((f.rv[i] - exact_rv).abs() < 3.0 * average.std_error, "RV h={h}: {} vs {exact_rv}", f.rv[i]);
    }
}

#[test]
fn nested_models_share_random_numbers() {
    let ln = Params::table_linear();
    let nl = Params { b0: ln.b0_q, b2: 0.0, b3: 0.0, ..ln };
    let cfg = ForecastConfig { n_paths: 200, ..ForecastConfig::default() };
    let rng = RngStream::new(3, 0).derive(purpose::FORECAST, 17);
    let a = forecast_targets(4.0, 0.04, ModelFamily::Linear, &ln, &cfg, rng).unwrap();
    let b = forecast_targets(4.0, 0.04, ModelFamily::Nonlinear, &nl, &cfg, rng).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forecasts_independent_of_execution_mode() {
    let p = Params::table_nonlinear();
    let run = |exec| {
        let cfg = ForecastConfig { n_paths: 300, exec, ..ForecastConfig::default() };
        forecast_targets(4.0, 0.04, ModelFamily::Nonlinear, &p, &cfg, RngStream::new(3, 0)).unwrap()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

#[test]
fn report_bookkeeping() {
    let p = Params::table_nonlinear();
    let series = synthetic(&p, ModelFamily::Nonlinear, 200, 4);
    let cfg = ForecastConfig { n_paths: 20, steps_per_day: 1, horizons: HorizonGrid::default(), ..ForecastConfig::default() };
    let models = [(ModelFamily::RandomWalk, Params::default()), (ModelFamily::Linear, Params::table_linear()), (ModelFamily::Nonlinear, p)];
    let origins = 10..150;
    let report = evaluate_fixed(&series, &models, origins.clone(), &cfg, Sample::InSample).unwrap();
    let last = series.len() - 1;
    for b in &report.blocks {
        let expected = origins.clone().filter(|&t| t + b.horizon <= last && (b.target != Target::RV || t >= b.horizon)).count();
        assert_eq!(b.origins.len(), expected, "{:?} {}", b.target, b.horizon);
        for m in &b.models {
            assert_eq!(m.forecast.len(), expected);
            if expected > 0 {
                assert_eq!(m.metrics.unwrap().n, expected);
            }
        }
        if expected > 0 {
            assert_eq!(b.clark_west.len(), 3);
        }
    }
    assert_eq!(report.blocks.len(), 5 + 5 + 4);
    assert!(report.skipped.is_empty());
    let rw = report.block(Target::X, 1).unwrap().model(ModelFamily::RandomWalk).unwrap();
    assert!(rw.forecast.iter().zip(10..).all(|(f, t)| *f == series.x[t]));
}

#[test]
fn risk_premium_series_shapes() {
    let p = Params::table_linear();
    let series = synthetic(&p, ModelFamily::Linear, 100, 4);
    let ln = risk_premium_series(&series, &p, ModelFamily::Linear, false).unwrap();
    let expected = (p.b1 - p.b1_q) / p.sigma;
    assert!(ln.iter().all(|v| (v - expected).abs() < 1e-12 && *v < 0.0));

    let flat = Params { b1: p.b1_q, ..p };
    assert!(risk_premium_series(&series, &flat, ModelFamily::Linear, false).unwrap().iter().all(|v| *v == 0.0));

    let q = Params::table_nonlinear();
    let nl = risk_premium_series(&synthetic(&q, ModelFamily::Nonlinear, 100, 4), &q, ModelFamily::Nonlinear, false).unwrap();
    let spread = nl.iter().cloned().fold(f64::MIN, f64::max) - nl.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 1e-3);
}

fn rolling_config() -> RollingConfig {
    RollingConfig {
        fit: LikelihoodConfig { m: 2, s: 4, n_bridges: 4, max_evals: 30, restarts: 0, min_obs: 100, ..LikelihoodConfig::default() },
        forecast: ForecastConfig { n_paths: 20, steps_per_day: 1, horizons: HorizonGrid::uniform(&[1, 5]), ..ForecastConfig::default() },
        window: Window::Expanding,
        refit_every: 10,
    }
}

#[test]
fn rolling_with_split_at_end_is_empty() {
    let p = Params::table_nonlinear();
    let series = synthetic(&p, ModelFamily::Nonlinear, 150, 4);
    let init = [(ModelFamily::Linear, Params::table_linear())];
    let out = rolling_evaluation(&series, series.len(), &[ModelFamily::RandomWalk, ModelFamily::Linear], &init, &rolling_config()).unwrap();
    assert!(out.parameter_paths.is_empty());
    assert!(out.report.blocks.iter().all(|b| b.origins.is_empty()));
}

#[test]
fn rolling_is_deterministic_and_tracks_parameters() {
    let p = Params::table_nonlinear();
    let series = synthetic(&p, ModelFamily::Nonlinear, 160, 4);
    let fams = [ModelFamily::RandomWalk, ModelFamily::Linear, ModelFamily::Nonlinear];
    let init = [(ModelFamily::Linear, Params::table_linear()), (ModelFamily::Nonlinear, p)];
    let cfg = rolling_config();
    let a = rolling_evaluation(&series, 130, &fams, &init, &cfg).unwrap();
    let b = rolling_evaluation(&series, 130, &fams, &init, &cfg).unwrap();
    assert_eq!(a, b);
    // origins 129..=158, refits at every tenth origin for both drift models
    assert_eq!(a.parameter_paths.len(), 2 * 3);
    assert_eq!(a.report.block(Target::X, 1).unwrap().origins.len() + a.report.skipped.len(), 30);
    let fixed = rolling_evaluation(&series, 130, &fams, &init, &RollingConfig { window: Window::Fixed(120), ..cfg }).unwrap();
    assert_eq!(fixed.parameter_paths.len(), 6);
}

proptest! {
    #[test]
    fn realized_variance_matches_naive(x in prop::collection::vec(-1.0..1.0f64, 2..80), n in 1usize..40) {
        let n = n.min(x.len() - 1);
        for i in n..x.len() {
            let a = realized_variance(&x, i, n).unwrap();
            let b = naive_rv(&x, i, n);
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
        prop_assert!(realized_variance(&x, n - 1, n).is_err());
    }

    #[test]
    fn clark_west_adjustment_is_non_negative(
        rows in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 3..60),
    ) {
        // moving the big model's forecast away from the small one can only
        // raise the adjusted differential when its error is held fixed
        let es: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let eb: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let ys: Vec<f64> = vec![0.0; rows.len()];
        let yb: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let naive = clark_west(&es, &eb, &ys, &ys, 1).unwrap();
        let adjusted = clark_west(&es, &eb, &ys, &yb, 1).unwrap();
        let mean_naive: f64 = es.iter().zip(&eb).map(|(a, b)| a * a - b * b).sum::<f64>();
        let mean_adj: f64 = mean_naive + yb.iter().map(|v| v * v).sum::<f64>();
        prop_assert!(mean_adj >= mean_naive);
        prop_assert!(naive.p_value.is_finite() && adjusted.p_value.is_finite());
    }
}
