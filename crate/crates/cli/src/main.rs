use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nlsv::config::RunConfig;
use nlsv::data::{self, load_csv, load_results, split, ObservedSeries};
use nlsv::fit::{fit, fit_with, FitResult};
use nlsv::forecast::{evaluate_fixed, rolling_evaluation, RollingOutput, Sample};
use nlsv::model::{ModelFamily, Params, State, SwapCoefficients};
use nlsv::report;
use nlsv::rng::RngStream;
use nlsv::simulation::simulate_daily;

const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "nlsv", version, about = "Stochastic volatility estimation and forecast evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, env = "NLSV_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic price/VXO series from the configured parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the selected models to a series.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// In-sample forecast evaluation with fixed parameters.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Saved fits; models without one are estimated on the in-sample part.
        #[arg(long = "fit")]
        fits: Vec<PathBuf>,
    },
    /// Out-of-sample evaluation with re-estimation at every new observation.
    Rolling {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Saved in-sample fits used as starting values.
        #[arg(long = "fit")]
        fits: Vec<PathBuf>,
    },
    /// Render tables and plot-ready CSVs from saved results.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// CSV schema of the input (`key = value` config).
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "fit", required = true)]
        fits: Vec<PathBuf>,
        /// Saved rolling output, for the parameter-path CSV.
        #[arg(long)]
        rolling: Option<PathBuf>,
    },
    /// Re-run a command from its manifest into a new run directory.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InputFile {
    role: String,
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    command: String,
    config: RunConfig,
    inputs: Vec<InputFile>,
    outputs: Vec<String>,
}

fn sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn input(role: &str, path: &Path) -> Result<InputFile> {
    let abs = fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))?;
    Ok(InputFile { role: role.to_string(), sha256: sha256(&abs)?, path: abs })
}

/// Collects outputs of one run and writes them with the manifest.
struct RunDir {
    root: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir { root: root.to_path_buf(), outputs: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.root.join(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(self, command: &str, config: &RunConfig, inputs: Vec<InputFile>) -> Result<()> {
        let m = Manifest { command: command.to_string(), config: config.clone(), inputs, outputs: self.outputs };
        fs::write(self.root.join(MANIFEST), data::to_json("manifest", &m)?)?;
        Ok(())
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut c = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        c.seed = s;
    }
    Ok(c)
}

fn fit_name(f: ModelFamily) -> String {
    format!("fit_{}.json", f.label())
}

fn load_series(cfg: &RunConfig, path: &Path) -> Result<ObservedSeries> {
    let schema = cfg.csv_schema()?;
    Ok(load_csv(path, &schema)?)
}

fn in_sample(cfg: &RunConfig, series: &ObservedSeries) -> Result<ObservedSeries> {
    let sp = split(series, cfg.split_date)?;
    Ok(series.slice(sp.in_sample))
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let family = cfg.simulate.family;
    let schema = cfg.csv_schema()?;
    let sim = &cfg.simulate;
    let mut params: Params = sim.params;
    if family == ModelFamily::Linear {
        params.b0 = params.b0_q;
    }
    let states = simulate_daily(
        &State::new(sim.x0, sim.v0)?,
        &params,
        family,
        sim.n_obs,
        sim.steps_per_day,
        RngStream::new(cfg.seed, 0),
    )?;
    let swap = SwapCoefficients::for_params(&params)?;
    let x: Vec<f64> = states.iter().map(|s| s.x).collect();
    let iv: Vec<f64> = states.iter().map(|s| swap.v_to_iv(s.v)).collect();
    let series = ObservedSeries::with_weekday_calendar(sim.start_date, x, iv)?;
    let mut run = RunDir::create(out)?;
    run.write("series.csv", &data::write_csv(&series, &schema))?;
    run.finish("simulate", cfg, Vec::new())
}

fn estimate(cfg: &RunConfig, input_path: &Path, out: &Path) -> Result<()> {
    let series = load_series(cfg, input_path)?;
    let sample = in_sample(cfg, &series)?;
    let lik = cfg.likelihood();
    let mut run = RunDir::create(out)?;
    let mut fits = Vec::new();
    for family in cfg.model.families() {
        let r = fit(&sample, family, &lik, None).with_context(|| format!("fitting {family}"))?;
        run.write(&fit_name(family), &data::to_json("fit", &r)?)?;
        fits.push(r);
    }
    run.write("estimates.txt", &report::estimates_table(&fits))?;
    run.finish("estimate", cfg, vec![input("series", input_path)?])
}

/// Saved fits for the selected models, estimating any that are missing.
fn fits_for(cfg: &RunConfig, sample: &ObservedSeries, paths: &[PathBuf]) -> Result<(Vec<FitResult>, Vec<InputFile>)> {
    let mut saved = Vec::new();
    let mut inputs = Vec::new();
    for p in paths {
        let f: FitResult = load_results(p, "fit").with_context(|| format!("loading {}", p.display()))?;
        inputs.push(input("fit", p)?);
        saved.push(f);
    }
    let mut out = Vec::new();
    for family in cfg.model.families() {
        match saved.iter().find(|f| f.family == family) {
            Some(f) => out.push(f.clone()),
            None => out.push(fit_with(sample, family, &cfg.likelihood(), None, false)?),
        }
    }
    Ok((out, inputs))
}

fn forecast(cfg: &RunConfig, input_path: &Path, fit_paths: &[PathBuf], out: &Path) -> Result<()> {
    let series = load_series(cfg, input_path)?;
    let sample = in_sample(cfg, &series)?;
    let (fits, mut inputs) = fits_for(cfg, &sample, fit_paths)?;
    let mut models = vec![(ModelFamily::RandomWalk, cfg.base_params())];
    models.extend(fits.iter().map(|f| (f.family, f.params)));
    let fc = cfg.forecast()?;
    let origins = 0..sample.len().saturating_sub(1);
    let rep = evaluate_fixed(&sample, &models, origins, &fc, Sample::InSample)?;
    let mut run = RunDir::create(out)?;
    run.write("report_in_sample.json", &data::to_json("forecast_report", &rep)?)?;
    run.write("metrics_in_sample.csv", &report::metrics_csv(&rep))?;
    run.write("residuals_in_sample.csv", &report::residuals_csv(&rep))?;
    inputs.insert(0, input("series", input_path)?);
    run.finish("forecast", cfg, inputs)
}

fn rolling(cfg: &RunConfig, input_path: &Path, fit_paths: &[PathBuf], out: &Path) -> Result<()> {
    let series = load_series(cfg, input_path)?;
    let sp = split(&series, cfg.split_date)?;
    let sample = series.slice(sp.in_sample.clone());
    let (fits, mut inputs) = fits_for(cfg, &sample, fit_paths)?;
    let mut families = vec![ModelFamily::RandomWalk];
    families.extend(fits.iter().map(|f| f.family));
    let initial: Vec<(ModelFamily, Params)> = fits.iter().map(|f| (f.family, f.params)).collect();
    let rc = cfg.rolling()?;
    let output = rolling_evaluation(&series, sp.in_sample.end, &families, &initial, &rc)?;
    let mut run = RunDir::create(out)?;
    run.write("rolling.json", &data::to_json("rolling", &output)?)?;
    run.write("metrics_out_of_sample.csv", &report::metrics_csv(&output.report))?;
    run.write("residuals_out_of_sample.csv", &report::residuals_csv(&output.report))?;
    run.write("parameter_paths.csv", &report::parameter_paths_csv(&output.parameter_paths))?;
    inputs.insert(0, input("series", input_path)?);
    run.finish("rolling", cfg, inputs)
}

fn render(cfg: &RunConfig, input_path: &Path, fit_paths: &[PathBuf], rolling: Option<&Path>, out: &Path) -> Result<()> {
    let series = load_series(cfg, input_path)?;
    let mut inputs = vec![input("series", input_path)?];
    let mut fits = Vec::new();
    for p in fit_paths {
        fits.push(load_results::<FitResult>(p, "fit").with_context(|| format!("loading {}", p.display()))?);
        inputs.push(input("fit", p)?);
    }
    let mut run = RunDir::create(out)?;
    run.write("estimates.txt", &report::estimates_table(&fits))?;
    run.write("implied_variance.csv", &report::implied_variance_csv(&series, &fits)?)?;
    run.write("premium.csv", &report::premium_csv(&series, &fits)?)?;
    run.write("drift_grid.csv", &report::drift_grid_csv(&fits, 0.005, 0.15, 146)?)?;
    if let Some(p) = rolling {
        let r: RollingOutput = load_results(p, "rolling").with_context(|| format!("loading {}", p.display()))?;
        run.write("parameter_paths.csv", &report::parameter_paths_csv(&r.parameter_paths))?;
        run.write("metrics_out_of_sample.csv", &report::metrics_csv(&r.report))?;
        inputs.push(input("rolling", p)?);
    }
    run.finish("report", cfg, inputs)
}

fn paths_with_role(inputs: &[InputFile], role: &str) -> Vec<PathBuf> {
    inputs.iter().filter(|i| i.role == role).map(|i| i.path.clone()).collect()
}

fn replay(manifest_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let m: Manifest = data::from_json("manifest", &text)?;
    for i in &m.inputs {
        let now = sha256(&i.path)?;
        if now != i.sha256 {
            bail!("input {} changed since the recorded run", i.path.display());
        }
    }
    let series = paths_with_role(&m.inputs, "series");
    let fits = paths_with_role(&m.inputs, "fit");
    let cfg = &m.config;
    match m.command.as_str() {
        "simulate" => simulate(cfg, out),
        "estimate" => estimate(cfg, &series[0], out),
        "forecast" => forecast(cfg, &series[0], &fits, out),
        "rolling" => rolling(cfg, &series[0], &fits, out),
        "report" => {
            let rolling = paths_with_role(&m.inputs, "rolling");
            render(cfg, &series[0], &fits, rolling.first().map(|p| p.as_path()), out)
        }
        other => bail!("unknown command `{other}` in manifest"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => simulate(&resolve(&common)?, &common.out),
        Command::Estimate { common, input } => estimate(&resolve(&common)?, &input, &common.out),
        Command::Forecast { common, input, fits } => forecast(&resolve(&common)?, &input, &fits, &common.out),
        Command::Rolling { common, input, fits } => rolling(&resolve(&common)?, &input, &fits, &common.out),
        Command::Report { out, input, config, fits, rolling } => {
            let cfg = RunConfig::load(&config)?;
            render(&cfg, &input, &fits, rolling.as_deref(), &out)
        }
        Command::Replay { manifest, out } => replay(&manifest, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
