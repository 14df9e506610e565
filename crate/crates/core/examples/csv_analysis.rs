//! Load a CSV file, run the stabilized analysis and write an analysis record.
//!
//! cargo run --release --example csv_analysis
//!
//! The same flow is available from the command line:
//! `hdmed analyze --data FILE --time time --status status --exposure treat --mediators gene_`

use hdmed::prelude::*;
use hdmed::records::read_records;
use std::io::Write;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("cohort.csv");

    // A synthetic cohort on the raw time scale.
    let sim = generate(&SimulationSpec::new(Model::M1, 600, 30), 2)?;
    let mut f = std::fs::File::create(&path)?;
    write!(f, "id,time,status,treat")?;
    for k in 0..sim.p() {
        write!(f, ",gene_{}", k + 1)?;
    }
    writeln!(f)?;
    for i in 0..sim.n() {
        write!(f, "{},{},{},{}", i + 1, sim.x()[i].exp(), sim.delta()[i], sim.exposure()[i])?;
        for v in sim.mediator_row(i) {
            write!(f, ",{v}")?;
        }
        writeln!(f)?;
    }
    drop(f);

    let mut schema = CsvSchema::new("time", "status", "treat");
    schema.mediators = MediatorColumns::Prefix("gene_".into());
    schema.log_time = true;
    let d = load_csv(&path, &schema)?.standardize_mediators(Standardization::NormalScore)?;
    println!("loaded n = {}, p = {}, censored {:.1}%", d.n(), d.p(), 100.0 * d.censored_fraction());

    let out = dir.path().join("records.json");
    let code = hdmed::cli::run_with_io(
        [
            "hdmed",
            "analyze",
            "--data",
            path.to_str().unwrap(),
            "--time",
            "time",
            "--status",
            "status",
            "--exposure",
            "treat",
            "--mediators",
            "gene_",
            "--log-time",
            "--orderings",
            "3",
            "--out",
            out.to_str().unwrap(),
        ],
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    println!("exit code {code}");
    for r in read_records(&out)? {
        let labels: Vec<&str> = r.selected.iter().map(|s| s.label.as_str()).collect();
        println!("record: {} estimate {:.4}, combined p {:.3}, selected {:?}", r.method, r.estimate, r.combined_p, labels);
    }
    Ok(())
}
