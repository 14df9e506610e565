//! One ordering of the stabilized one-step estimator, with its step trace.
//!
//! cargo run --release --example stabilized_single -- [MODEL] [P] [SEED]

use hdmed::prelude::*;

fn main() -> Result<(), hdmed::Error> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model: Model = args.first().map_or("M1", String::as_str).parse()?;
    let p: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);

    let d = generate(&SimulationSpec::new(model, 800, p), seed)?
        .standardize_mediators(Standardization::NormalScore)?;
    let order = ordering_permutation(d.n(), seed ^ 0xA5A5);
    let q_n = default_q_n(d.n());
    let est = stabilized_one_step(&d, &order, q_n, &StabilizedConfig::default())?;

    println!("{model}, n = {}, p = {p}, q_n = {q_n}, true maximal effect {}", d.n(), model.true_psi());
    println!(
        "S* = {:.4}, se = {:.4}, 90% CI ({:.4}, {:.4}), p = {:.3e}",
        est.s_star,
        est.standard_error(),
        est.ci_low,
        est.ci_high,
        est.p_value
    );
    println!("    j    k   m       psi   f*(next)   sigma   weight");
    for s in est.trace.iter().step_by(20) {
        println!(
            "{:>5} {:>4} {:>3} {:>9.4} {:>10.4} {:>7.3} {:>8.3}",
            s.j,
            s.k + 1,
            s.m,
            s.psi,
            s.f_star_next,
            s.sigma_hat,
            s.weight
        );
    }
    for (j, k) in est.checkpoint_selections() {
        println!("selected at j = {j}: {}", d.mediator_labels()[k]);
    }
    Ok(())
}
