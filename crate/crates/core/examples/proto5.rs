use nlsv::data::ObservedSeries;
use nlsv::fit::{fit, fit_with, LikelihoodConfig};
use nlsv::model::{ModelFamily, Params, State, SwapCoefficients};
use nlsv::rng::RngStream;
use nlsv::simulation::simulate_daily;
use std::time::Instant;
fn synthetic(p: &Params, fam: ModelFamily, n: usize, seed: u64) -> ObservedSeries {
    let path = simulate_daily(&State::new(4.6, 0.025).unwrap(), p, fam, n, 8, RngStream::new(seed, 7)).unwrap();
    let swap = SwapCoefficients::for_params(p).unwrap();
    ObservedSeries::with_weekday_calendar(chrono::NaiveDate::from_ymd_opt(1990,1,2).unwrap(),
        path.iter().map(|s| s.x).collect(), path.iter().map(|s| swap.v_to_iv(s.v)).collect()).unwrap()
}
fn main() {
    let truth = Params::table_nonlinear();
    let cfg = LikelihoodConfig { m: 4, s: 16, n_bridges: 16, max_evals: 300, restarts: 1, ..LikelihoodConfig::default() };
    let t0 = Instant::now();
    let f = fit(&synthetic(&truth, ModelFamily::Nonlinear, 2500, 11), ModelFamily::Nonlinear, &cfg, None).unwrap();
    println!("fit {:?}", t0.elapsed());
    for (n, e) in f.names.iter().zip(&f.estimates) {
        let se = f.std_error(n).unwrap(); let t = truth.get(n).unwrap();
        println!("{n:6} est {e:12.5} true {t:12.5} se {se:10.5} z {:6.2}", (e - t) / se);
    }
    for n in [1000usize, 2000, 4000] {
        let mut errs = Vec::new();
        for rep in 0..4u64 {
            let t0 = Instant::now();
            let f = fit_with(&synthetic(&truth, ModelFamily::Nonlinear, n, 100 + rep), ModelFamily::Nonlinear, &LikelihoodConfig{restarts:0, ..cfg}, Some(&truth), false).unwrap();
            let d: Vec<f64> = ["b0","b1","b2","b3"].iter().map(|k| f.params.get(k).unwrap() - truth.get(k).unwrap()).collect();
            println!("N {n} rep {rep} {:?} {d:?}", t0.elapsed());
            errs.push(d);
        }
    }
}
