//! Monte Carlo coverage of the stabilized estimator and its competitors.
//!
//! cargo run --release --example coverage_study -- [MODEL] [P] [REPS]
//! Defaults: M1, p = 100, 100 replications at n = 800.

use hdmed::prelude::*;
use hdmed::records::{coverage_rows, coverage_table};
use hdmed::simulation::ks_pvalue;
use hdmed::simulation::ks_statistic;

fn main() -> Result<(), hdmed::Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model: Model = args.first().map_or("M1", String::as_str).parse()?;
    let p: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);

    let spec = SimulationSpec::new(model, 800, p);
    let config = StudyConfig {
        reps,
        methods: vec![Method::Stabilized, Method::Bonferroni, Method::Naive, Method::Oracle],
        nuisance: NuisanceOptions {
            adjust_for_z: model.primed(),
            ..NuisanceOptions::default()
        },
        seed: 2024,
        ..StudyConfig::default()
    };
    let start = std::time::Instant::now();
    let report = run_coverage_study(&spec, &config)?;
    println!(
        "{model}: n = {}, p = {p}, q_n = {}, censoring rate {:.4}, {:.1}s",
        report.n,
        report.q_n,
        report.censor_rate,
        start.elapsed().as_secs_f64()
    );
    print!("{}", coverage_table(&coverage_rows(std::slice::from_ref(&report))));
    let z = report.standardized(Method::Stabilized);
    let d = ks_statistic(&z);
    println!("KS vs N(0,1) for the stabilized statistic: D = {d:.4}, p = {:.3}", ks_pvalue(d, z.len()));
    for f in report.failures.iter().take(5) {
        println!("failure in replication {}: {}", f.rep, f.reason);
    }
    Ok(())
}
