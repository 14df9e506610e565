//! Censoring model, IPCW synthetic responses and the censoring martingale.
//!
//! cargo run --release --example censoring_weights

use hdmed::prelude::*;

fn main() -> Result<(), hdmed::Error> {
    let spec = SimulationSpec::new(Model::M1, 800, 20);
    let d = generate(&spec, 3)?;
    let cm = CensoringModel::fit(d.x(), d.delta())?;
    let resp = synthetic_responses(d.x(), d.delta(), &cm);

    println!("n = {}, censored fraction {:.3}", d.n(), d.censored_fraction());
    println!("censoring jump times: {}, last jump {:.3}", cm.n_jumps(), cm.tau());
    for t in [-1.0, 0.0, 0.5, 1.0, 2.0] {
        println!(
            "  G({t:>4.1}) = {:.4}   Lambda({t:>4.1}) = {:.4}",
            cm.survival(t),
            cm.cumulative_hazard(t)
        );
    }

    // IPCW responses are unbiased for E[T] under independent censoring.
    let mean_y = resp.y.iter().sum::<f64>() / d.n() as f64;
    let events: Vec<f64> = (0..d.n()).filter(|&i| d.delta()[i] == 1).map(|i| d.x()[i]).collect();
    println!(
        "mean synthetic response {:.4}, naive event-only mean {:.4}, capped weights {}",
        mean_y,
        events.iter().sum::<f64>() / events.len() as f64,
        resp.truncated
    );

    // With a constant integrand the full-sample martingale sums to zero.
    let total: f64 = (0..d.n())
        .map(|i| cm.martingale_integral(d.x()[i], d.delta()[i], |_| 1.0))
        .sum();
    println!("sum of martingale integrals with g = 1: {total:.2e}");
    Ok(())
}
