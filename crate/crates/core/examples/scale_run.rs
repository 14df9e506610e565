//! One stabilized ordering with a very large number of mediators.
//!
//! cargo run --release --example scale_run -- [P]
//! Default p = 100000 at n = 800, q_n = 640.

use hdmed::prelude::*;
use std::time::Instant;

fn main() -> Result<(), hdmed::Error> {
    let p: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let t0 = Instant::now();
    let d = generate(&SimulationSpec::new(Model::M1, 800, p), 31)?
        .standardize_mediators(Standardization::NormalScore)?;
    let t1 = Instant::now();
    let order = ordering_permutation(d.n(), 32);
    let est = stabilized_one_step(&d, &order, 640, &StabilizedConfig::default())?;
    let t2 = Instant::now();
    println!("p = {p}: data {:.1}s, estimator {:.1}s", (t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64());
    println!("S* = {:.4}, CI ({:.4}, {:.4})", est.s_star, est.ci_low, est.ci_high);
    for (j, k) in est.checkpoint_selections() {
        println!("  j = {j}: {}", d.mediator_labels()[k]);
    }
    Ok(())
}
