//! Decision-process IRTree: node coefficients and responses the model did
//! not expect.

use std::error::Error;

use examiner_irt::engine::SamplerConfig;
use examiner_irt::fit::{fit, BuiltModel, FitOptions, ModelKind};
use examiner_irt::models::irtree::{coefficient_table, flag_unexpected, DEFAULT_FLAG_THRESHOLD};
use examiner_irt::models::tree::TreeSpec;
use examiner_irt::simulate::{simulate, Assignment, DesignSpec, TruthParams};

fn main() -> Result<(), Box<dyn Error>> {
    let design = DesignSpec {
        n_examiners: 40,
        n_items: 80,
        assignment: Assignment::RandomSubset(40),
        mates_fraction: 0.5,
        seed: 4,
    }
    .build()?;
    let truth = TruthParams::irtree_default(&design, &TreeSpec::decision_process())?;
    let sim = simulate(&truth, &design)?;

    let opts = FitOptions {
        sampler: SamplerConfig {
            chains: 2,
            warmup: 300,
            samples: 200,
            seed: 4,
            ..SamplerConfig::default()
        },
        ..FitOptions::default()
    };
    let f = fit(ModelKind::IRTree, &sim.records, &opts)?;
    let BuiltModel::IRTree(model) = &f.model else { unreachable!() };

    println!("{:<5} {:<6} {:>7} {:>16}", "node", "coef", "median", "90% interval");
    for r in coefficient_table(&f.draws, model.tree().n_nodes())? {
        println!("{:<5} {:<6} {:>7.2} ({:>6.2}, {:>6.2})", r.node, r.parameter, r.median, r.q5, r.q95);
    }
    let flags = flag_unexpected(&f.draws, model, DEFAULT_FLAG_THRESHOLD)?;
    println!("{} responses flagged", flags.len());
    for fl in flags.iter().take(5) {
        println!("  {} on {}: observed {}, expected {}", fl.examiner_id, fl.item_id, fl.observed, fl.predicted);
    }
    Ok(())
}
