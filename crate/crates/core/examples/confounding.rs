//! Confounder-adjusted analysis on a model with a measured confounder `Z`.
//!
//! cargo run --release --example confounding

use hdmed::prelude::*;

fn main() -> Result<(), hdmed::Error> {
    let d = generate(&SimulationSpec::new(Model::M1p, 800, 50), 12)?
        .standardize_mediators(Standardization::NormalScore)?;
    println!("confounders: {:?}", d.confounder_labels());
    let order = ordering_permutation(d.n(), 4);
    let q_n = default_q_n(d.n());

    for adjust_for_z in [false, true] {
        let cfg = StabilizedConfig {
            nuisance: NuisanceOptions {
                adjust_for_z,
                ..NuisanceOptions::default()
            },
            alpha: 0.1,
        };
        let est = stabilized_one_step(&d, &order, q_n, &cfg)?;
        println!(
            "adjusted = {adjust_for_z:<5}  S* = {:.6}  CI ({:.4}, {:.4})  last-step psi {:.6}",
            est.s_star,
            est.ci_low,
            est.ci_high,
            est.trace.last().map_or(f64::NAN, |s| s.psi)
        );
    }
    Ok(())
}
