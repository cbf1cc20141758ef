//! Plain-text tables and plot-ready CSV renderings of saved results.

use std::fmt::Write;

use crate::data::ObservedSeries;
use crate::error::Result;
use crate::fit::FitResult;
use crate::forecast::{risk_premium_series, ForecastReport, ParamPathEntry};
use crate::model::{drift_p, drift_q, ModelFamily, Params, State, SwapCoefficients};

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Parameter table with standard errors in parentheses, one column per fit.
pub fn estimates_table(fits: &[FitResult]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for f in fits {
        for n in &f.names {
            if !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<8}", "");
    for f in fits {
        let _ = write!(out, "{:>24}", f.family.label());
    }
    out.push('\n');
    for n in names {
        let _ = write!(out, "{n:<8}");
        for f in fits {
            let cell = match f.names.iter().position(|m| m == n) {
                Some(i) => match f.std_errors.as_ref() {
                    Some(se) => format!("{:.4} ({:.4})", f.estimates[i], se[i]),
                    None => format!("{:.4}", f.estimates[i]),
                },
                None => "-".to_string(),
            };
            let _ = write!(out, "{cell:>24}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<8}", "loglik");
    for f in fits {
        let _ = write!(out, "{:>24.2}", f.loglik);
    }
    out.push('\n');
    for f in fits {
        if let Some(m) = &f.diagnostics.message {
            let _ = writeln!(out, "note ({}): {m}", f.family.label());
        }
    }
    out
}

/// One row per target, horizon and model with the Clark–West p-values of
/// that model against each nested competitor.
pub fn metrics_csv(report: &ForecastReport) -> String {
    let mut out = String::from("target,horizon,model,n,MAE,RMSE,NMSE,DIR,CW_vs_RW,CW_vs_LN\n");
    for b in &report.blocks {
        for m in &b.models {
            let cw = |small: ModelFamily| opt(b.cw(small, m.family).map(|c| c.p_value));
            let (n, mae, rmse, nmse, dir) = match &m.metrics {
                Some(x) => (x.n.to_string(), x.mae.to_string(), x.rmse.to_string(), opt(x.nmse), x.dir.to_string()),
                None => ("0".into(), String::new(), String::new(), String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{n},{mae},{rmse},{nmse},{dir},{},{}",
                b.target.label(),
                b.horizon,
                m.family.label(),
                cw(ModelFamily::RandomWalk),
                cw(ModelFamily::Linear)
            );
        }
    }
    out
}

/// Long-format forecast residuals: one row per block, origin and model.
pub fn residuals_csv(report: &ForecastReport) -> String {
    let mut out = String::from("target,horizon,origin,model,forecast,realized,current\n");
    for b in &report.blocks {
        for (i, &t) in b.origins.iter().enumerate() {
            for m in &b.models {
                let _ = writeln!(
                    out,
                    "{},{},{t},{},{},{},{}",
                    b.target.label(),
                    b.horizon,
                    m.family.label(),
                    m.forecast[i],
                    b.realized[i],
                    b.current[i]
                );
            }
        }
    }
    out
}

pub fn parameter_paths_csv(paths: &[ParamPathEntry]) -> String {
    let names = ["sigma", "rho", "b0_q", "b1_q", "a0", "a1", "b0", "b1", "b2", "b3"];
    let mut out = format!("date,model,{},loglik\n", names.join(","));
    for e in paths {
        let vals: Vec<String> = names.iter().map(|n| e.params.get(n).unwrap_or(f64::NAN).to_string()).collect();
        let _ = writeln!(out, "{},{},{},{}", e.date, e.family.label(), vals.join(","), e.loglik);
    }
    out
}

/// Variance risk premium along the IV-implied variance path of each fit.
pub fn premium_csv(series: &ObservedSeries, fits: &[FitResult]) -> Result<String> {
    let cols: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| risk_premium_series(series, &f.params, f.family, false))
        .collect::<Result<_>>()?;
    let mut out = String::from("date");
    for f in fits {
        let _ = write!(out, ",{}", f.family.label());
    }
    out.push('\n');
    for i in 0..series.len() {
        out.push_str(&series.dates[i].to_string());
        for c in &cols {
            let _ = write!(out, ",{}", c[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Observed IV next to each model's implied instantaneous variance.
pub fn implied_variance_csv(series: &ObservedSeries, fits: &[FitResult]) -> Result<String> {
    let swaps: Vec<SwapCoefficients> = fits.iter().map(|f| SwapCoefficients::for_params(&f.params)).collect::<Result<_>>()?;
    let mut out = String::from("date,IV");
    for f in fits {
        let _ = write!(out, ",V_{}", f.family.label());
    }
    out.push('\n');
    for i in 0..series.len() {
        let _ = write!(out, "{},{}", series.dates[i], series.iv[i]);
        for s in &swaps {
            let _ = write!(out, ",{}", s.iv_to_v(series.iv[i])?);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Physical and pricing variance drifts on an evenly spaced variance grid.
pub fn drift_grid(params: &Params, family: ModelFamily, v_min: f64, v_max: f64, n: usize) -> Result<Vec<[f64; 3]>> {
    (0..n)
        .map(|i| {
            let v = if n > 1 { v_min + (v_max - v_min) * i as f64 / (n - 1) as f64 } else { v_min };
            let s = State::new(0.0, v)?;
            Ok([v, drift_p(&s, params, family)?[1], drift_q(&s, params)?[1]])
        })
        .collect()
}

pub fn drift_grid_csv(fits: &[FitResult], v_min: f64, v_max: f64, n: usize) -> Result<String> {
    let mut out = String::from("model,V,drift_P,drift_Q\n");
    for f in fits {
        for [v, p, q] in drift_grid(&f.params, f.family, v_min, v_max, n)? {
            let _ = writeln!(out, "{},{v},{p},{q}", f.family.label());
        }
    }
    Ok(out)
}
