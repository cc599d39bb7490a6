//! Ranks models fitted to the same observations by WAIC.

use std::error::Error;

use examiner_irt::engine::SamplerConfig;
use examiner_irt::evaluation::{prediction_error, waic_difference, waic_streaming};
use examiner_irt::fit::{fit, FitOptions, ModelKind};
use examiner_irt::models::tree::TreeSpec;
use examiner_irt::simulate::{simulate, Assignment, DesignSpec, TruthParams};

fn main() -> Result<(), Box<dyn Error>> {
    let design = DesignSpec {
        n_examiners: 30,
        n_items: 60,
        assignment: Assignment::RandomSubset(30),
        mates_fraction: 0.5,
        seed: 7,
    }
    .build()?;
    let truth = TruthParams::irtree_default(&design, &TreeSpec::decision_process())?;
    let sim = simulate(&truth, &design)?;

    let opts = FitOptions {
        sampler: SamplerConfig {
            chains: 2,
            warmup: 300,
            samples: 200,
            seed: 7,
            ..SamplerConfig::default()
        },
        ..FitOptions::default()
    };
    // all four score the same three-level conclusiveness outcome
    let mut rows = Vec::new();
    for kind in [ModelKind::IRTree, ModelKind::Ltrm, ModelKind::Cltrm, ModelKind::Altrm] {
        let f = fit(kind, &sim.records, &opts)?;
        let obs = f.model.observations();
        rows.push((kind.name(), waic_streaming(obs, &f.draws)?, prediction_error(obs, &f.draws)?));
    }
    rows.sort_by(|a, b| a.1.waic.total_cmp(&b.1.waic));
    println!("{:<8} {:>9} {:>7} {:>7} {:>9} {:>7}", "model", "waic", "se", "p_waic", "delta", "error");
    for (name, w, pe) in &rows {
        let (delta, _) = waic_difference(w, &rows[0].1)?;
        println!("{name:<8} {:>9.1} {:>7.1} {:>7.1} {delta:>9.1} {pe:>7.3}", w.waic, w.se, w.p_waic);
    }
    Ok(())
}
