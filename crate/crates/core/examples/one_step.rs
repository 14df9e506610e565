//! Full-sample nuisance fit and the per-mediator one-step estimator.
//!
//! cargo run --release --example one_step

use hdmed::influence::influence_values;
use hdmed::prelude::*;

fn main() -> Result<(), hdmed::Error> {
    let spec = SimulationSpec::new(Model::M2, 800, 20);
    let d = generate(&spec, 17)?.standardize_mediators(Standardization::NormalScore)?;
    let ctx = AnalysisContext::new(&d)?;
    let ns = NuisanceSet::full_sample(&ctx, NuisanceOptions::default())?;

    let ex = ns.exposure();
    println!("P(A = 1) = {:.3}", ex.p1);
    println!("  k      beta      zeta       psi   one-step     sigma");
    for k in 0..d.p() {
        let os = one_step_full(&ns, k)?;
        println!(
            "{:>3} {:>9.4} {:>9.4} {:>9.4} {:>10.4} {:>9.3}",
            k + 1,
            ns.beta(k),
            ns.zeta(k),
            os.psi_plugin,
            os.psi_onestep,
            os.sigma_hat
        );
    }

    // The influence function splits into the full-data part and the
    // projection onto the censoring tangent space.
    let rows: Vec<usize> = (0..5).collect();
    for (i, v) in rows.iter().zip(influence_values(&ns, 0, &rows)?) {
        println!("row {i}: f = {:8.4}  f_car = {:8.4}  f* = {:8.4}", v.f, v.f_car, v.f_star);
    }
    Ok(())
}
