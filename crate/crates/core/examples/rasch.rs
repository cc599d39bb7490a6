//! Hierarchical Rasch fit on scored responses with a proficiency table.

use std::error::Error;

use examiner_irt::data::ScoringScheme;
use examiner_irt::engine::SamplerConfig;
use examiner_irt::fit::{fit, BuiltModel, FitOptions, ModelKind};
use examiner_irt::models::rasch::proficiency_report;
use examiner_irt::simulate::{simulate, Assignment, DesignSpec, TruthParams};

fn main() -> Result<(), Box<dyn Error>> {
    let design = DesignSpec {
        n_examiners: 40,
        n_items: 80,
        assignment: Assignment::RandomSubset(30),
        mates_fraction: 0.5,
        seed: 2,
    }
    .build()?;
    let sim = simulate(&TruthParams::rasch(&design, 1.0, 0.0, 1.5), &design)?;

    let opts = FitOptions {
        sampler: SamplerConfig {
            chains: 2,
            warmup: 300,
            samples: 300,
            seed: 2,
            ..SamplerConfig::default()
        },
        scheme: ScoringScheme::InconclusiveIncorrect,
        ..FitOptions::default()
    };
    let f = fit(ModelKind::Rasch, &sim.records, &opts)?;
    let BuiltModel::Rasch(model) = &f.model else { unreachable!() };

    let mut rows = proficiency_report(&f.draws, model.matrix(), &sim.records)?;
    rows.sort_by(|a, b| b.theta_median.total_cmp(&a.theta_median));
    println!("{} scored responses", model.matrix().entries.len());
    println!("{:<8} {:>8} {:>17} {:>8}", "examiner", "theta", "95% interval", "score");
    for r in rows.iter().take(10) {
        println!(
            "{:<8} {:>8.2} ({:>6.2}, {:>6.2}) {:>8.2}",
            r.examiner_id, r.theta_median, r.q2_5, r.q97_5, r.observed_score
        );
    }
    Ok(())
}
