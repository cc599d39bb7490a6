//! Five answer keys from one dataset and how often they disagree.

use std::error::Error;

use examiner_irt::answer_key::{consensus_key, disagreement_matrix, irtree_key, modal_key, PointEstimate};
use examiner_irt::data::conclusiveness_data;
use examiner_irt::engine::SamplerConfig;
use examiner_irt::fit::{fit, BuiltModel, FitOptions, ModelKind};
use examiner_irt::models::tree::TreeSpec;
use examiner_irt::simulate::{simulate, Assignment, DesignSpec, TruthParams};

fn main() -> Result<(), Box<dyn Error>> {
    let design = DesignSpec {
        n_examiners: 30,
        n_items: 40,
        assignment: Assignment::RandomSubset(25),
        mates_fraction: 0.5,
        seed: 6,
    }
    .build()?;
    let truth = TruthParams::irtree_default(&design, &TreeSpec::answer_key())?;
    let sim = simulate(&truth, &design)?;

    let opts = FitOptions {
        sampler: SamplerConfig {
            chains: 2,
            warmup: 300,
            samples: 200,
            seed: 6,
            ..SamplerConfig::default()
        },
        ..FitOptions::default()
    };
    let mut keys = vec![modal_key(&conclusiveness_data(&sim.records)?)?];
    for kind in [ModelKind::Ltrm, ModelKind::Cltrm, ModelKind::Altrm, ModelKind::IRTreeKey] {
        let f = fit(kind, &sim.records, &opts)?;
        keys.push(match &f.model {
            BuiltModel::Consensus(m) => consensus_key(&f.draws, m, PointEstimate::Median)?,
            BuiltModel::IRTree(m) => irtree_key(&f.draws, m, PointEstimate::Median)?,
            _ => unreachable!(),
        });
    }
    let d = disagreement_matrix(&keys)?;
    print!("{:>8}", "");
    for s in &d.sources {
        print!("{:>8}", s.name());
    }
    println!();
    for (s, row) in d.sources.iter().zip(&d.counts) {
        print!("{:>8}", s.name());
        for c in row {
            print!("{c:>8}");
        }
        println!();
    }
    println!("{} items with any disagreement", d.detail.len());
    Ok(())
}
