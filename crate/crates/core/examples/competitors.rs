//! The stabilized estimator next to the Bonferroni, naive and oracle one-step
//! estimators on the same data.
//!
//! cargo run --release --example competitors -- [MODEL]

use hdmed::prelude::*;

fn main() -> Result<(), hdmed::Error> {
    let model: Model = std::env::args().nth(1).as_deref().unwrap_or("M1").parse()?;
    let d = generate(&SimulationSpec::new(model, 800, 100), 8)?
        .standardize_mediators(Standardization::NormalScore)?;
    let opts = NuisanceOptions::default();
    let alpha = 0.1;

    println!("{model}, true maximal effect {}", model.true_psi());
    println!("method        k   estimate        se          CI              p");
    let show = |name: &str, r: &CompetitorResult| {
        println!(
            "{name:<11} {:>3} {:>10.4} {:>9.4}  ({:>7.4}, {:>7.4}) {:>9.2e}",
            r.k_used + 1,
            r.estimate,
            r.se,
            r.ci_low,
            r.ci_high,
            r.p_value
        )
    };
    show("bonferroni", &bonferroni_one_step(&d, alpha, opts)?);
    show("naive", &naive_one_step(&d, alpha, opts)?);
    show("oracle", &oracle_one_step(&d, 0, alpha, opts)?);

    let order = ordering_permutation(d.n(), 8);
    let est = stabilized_one_step(&d, &order, default_q_n(d.n()), &StabilizedConfig { nuisance: opts, alpha })?;
    let last = est.trace.last().map_or(0, |s| s.k);
    println!(
        "{:<11} {:>3} {:>10.4} {:>9.4}  ({:>7.4}, {:>7.4}) {:>9.2e}",
        "stabilized",
        last + 1,
        est.s_star,
        est.standard_error(),
        est.ci_low,
        est.ci_high,
        est.p_value
    );
    Ok(())
}
