//! Joint model of scored responses and reported difficulty, with
//! per-examiner reporting bias.

use std::error::Error;

use examiner_irt::engine::SamplerConfig;
use examiner_irt::fit::{fit, BuiltModel, FitOptions, ModelKind};
use examiner_irt::models::joint::{predicted_vs_observed, reporting_bias_report};
use examiner_irt::simulate::{simulate, Assignment, DesignSpec, TruthParams};

fn main() -> Result<(), Box<dyn Error>> {
    let design = DesignSpec {
        n_examiners: 30,
        n_items: 60,
        assignment: Assignment::RandomSubset(30),
        mates_fraction: 0.5,
        seed: 3,
    }
    .build()?;
    let sim = simulate(&TruthParams::joint(&design, 1.0, 1.5, 0.5, 0.5), &design)?;

    let opts = FitOptions {
        sampler: SamplerConfig {
            chains: 2,
            warmup: 300,
            samples: 300,
            seed: 3,
            ..SamplerConfig::default()
        },
        ..FitOptions::default()
    };
    let f = fit(ModelKind::Joint, &sim.records, &opts)?;
    let BuiltModel::Joint(model) = &f.model else { unreachable!() };

    let g = f.draws.index_of("g").unwrap();
    println!("g median {:.2}", f.draws.median(g));
    let flagged: Vec<_> = reporting_bias_report(&f.draws, model)?
        .into_iter()
        .filter(|r| r.excludes_zero)
        .collect();
    println!("{} examiner or item effects with intervals excluding zero", flagged.len());
    for r in flagged.iter().take(5) {
        println!("  {} {} {:.2} ({:.2}, {:.2})", r.kind, r.id, r.mean, r.q2_5, r.q97_5);
    }
    for r in predicted_vs_observed(&f.draws, model)?.iter().take(5) {
        println!(
            "{} score {:.2} vs {:.2}, difficulty {:?} vs {:?}",
            r.examiner_id, r.observed_score, r.predicted_score, r.observed_difficulty, r.predicted_difficulty
        );
    }
    Ok(())
}
