//! Simulate from known parameters, refit and check how well they come back.

use std::error::Error;

use examiner_irt::engine::SamplerConfig;
use examiner_irt::fit::{fit, BuiltModel, FitOptions, ModelKind};
use examiner_irt::simulate::{recovery_report, simulate, Assignment, DesignSpec, TruthParams};

fn main() -> Result<(), Box<dyn Error>> {
    let design = DesignSpec {
        n_examiners: 60,
        n_items: 150,
        assignment: Assignment::RandomSubset(60),
        mates_fraction: 0.5,
        seed: 8,
    }
    .build()?;
    let sim = simulate(&TruthParams::rasch(&design, 1.0, 0.0, 1.5), &design)?;

    let opts = FitOptions {
        sampler: SamplerConfig {
            chains: 2,
            warmup: 400,
            samples: 400,
            seed: 8,
            ..SamplerConfig::default()
        },
        ..FitOptions::default()
    };
    let f = fit(ModelKind::Rasch, &sim.records, &opts)?;
    let BuiltModel::Rasch(model) = &f.model else { unreachable!() };
    let m = model.matrix();
    println!("{:<12} {:>5} {:>7} {:>9} {:>6}", "block", "n", "r", "coverage", "rmse");
    for r in recovery_report(&sim.truth, &f.draws, &m.examiners, &m.items)? {
        println!(
            "{:<12} {:>5} {:>7.3} {:>8.1}% {:>6.3}",
            r.block,
            r.n,
            r.correlation,
            100.0 * r.coverage95,
            r.rmse
        );
    }
    Ok(())
}
