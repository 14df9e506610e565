//! Several random orderings combined with a Bonferroni correction.
//!
//! cargo run --release --example multi_ordering -- [ORDERINGS]

use hdmed::prelude::*;

fn main() -> Result<(), hdmed::Error> {
    let m: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let d = generate(&SimulationSpec::new(Model::M2, 800, 200), 21)?
        .standardize_mediators(Standardization::NormalScore)?;
    let ens = multi_ordering_analysis(&d, m, default_q_n(d.n()), 99, &StabilizedConfig::default())?;

    println!("ordering       seed        S*        p");
    for r in &ens.results {
        println!("{:>8} {:>10x} {:>9.4} {:>8.2e}", r.index, r.seed % (1 << 40), r.estimate.s_star, r.estimate.p_value);
    }
    let rep = ens.reported();
    println!(
        "reported ordering {}: S* = {:.4}, CI at level {:.3}: ({:.4}, {:.4})",
        rep.index,
        rep.estimate.s_star,
        ens.alpha / ens.orderings as f64,
        ens.combined_ci.0,
        ens.combined_ci.1
    );
    println!("combined p = {:.3e}, failed orderings {}", ens.combined_p, ens.failures.len());
    for (k, c) in ens.selection_frequency() {
        println!("  {} selected at {c} checkpoint(s)", d.mediator_labels()[k]);
    }
    Ok(())
}
