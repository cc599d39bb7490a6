//! Parse a response table, quarantine bad rows and print the error rates.

use std::error::Error;

use examiner_irt::data::{parse_table, summarize, write_table, TableFormat};
use examiner_irt::evaluation::error_rates;
use examiner_irt::models::tree::TreeSpec;
use examiner_irt::simulate::{simulate, Assignment, DesignSpec, TruthParams};

fn main() -> Result<(), Box<dyn Error>> {
    let design = DesignSpec {
        n_examiners: 30,
        n_items: 60,
        assignment: Assignment::RandomSubset(25),
        mates_fraction: 0.5,
        seed: 1,
    }
    .build()?;
    let truth = TruthParams::irtree_default(&design, &TreeSpec::decision_process())?;
    let sim = simulate(&truth, &design)?;

    let mut csv = Vec::new();
    write_table(&sim.records, &mut csv, &TableFormat::default())?;
    // one unusable row
    csv.extend_from_slice(b"E99,I99,Mates,VID,Perhaps,,,\n");

    let table = parse_table(csv.as_slice(), &TableFormat::default())?;
    let s = summarize(&table.records);
    println!("{} examiners, {} items, {} records", s.examiners, s.items, s.records);
    println!(
        "no value {}, inconclusive {}, individualization {}, exclusion {}",
        s.no_value, s.inconclusive, s.individualization, s.exclusion
    );
    for q in &table.quarantined {
        println!("quarantined row {} ({}): {}", q.row, q.field, q.message);
    }
    let rates = error_rates(&table.records);
    println!("fpr {:?}, fnr {:?}", rates.fpr, rates.fnr);
    Ok(())
}
