//! The three latent trait consensus models and the answer keys they imply.

use std::error::Error;

use examiner_irt::answer_key::{consensus_key, PointEstimate};
use examiner_irt::engine::SamplerConfig;
use examiner_irt::fit::{fit, BuiltModel, FitOptions, ModelKind};
use examiner_irt::models::consensus::ConsensusVariant;
use examiner_irt::simulate::{simulate, Assignment, DesignSpec, TruthParams};

fn main() -> Result<(), Box<dyn Error>> {
    let design = DesignSpec {
        n_examiners: 30,
        n_items: 50,
        assignment: Assignment::RandomSubset(30),
        mates_fraction: 0.5,
        seed: 5,
    }
    .build()?;
    let sim = simulate(&TruthParams::consensus(&design, ConsensusVariant::Cltrm), &design)?;

    let opts = FitOptions {
        sampler: SamplerConfig {
            chains: 2,
            warmup: 300,
            samples: 300,
            seed: 5,
            ..SamplerConfig::default()
        },
        ..FitOptions::default()
    };
    for kind in [ModelKind::Ltrm, ModelKind::Cltrm, ModelKind::Altrm] {
        let f = fit(kind, &sim.records, &opts)?;
        let BuiltModel::Consensus(model) = &f.model else { unreachable!() };
        let key = consensus_key(&f.draws, model, PointEstimate::Median)?;
        let mut counts = [0usize; 3];
        for e in &key.entries {
            counts[e.category.index()] += 1;
        }
        let gamma: Vec<f64> = (1..=2)
            .map(|c| f.draws.median(f.draws.index_of(&format!("gamma[{c}]")).unwrap()))
            .collect();
        println!(
            "{:<6} boundaries ({:.2}, {:.2}); key categories {:?}",
            kind.name(),
            gamma[0],
            gamma[1],
            counts
        );
    }
    Ok(())
}
