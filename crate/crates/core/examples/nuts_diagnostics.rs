//! NUTS on a correlated Gaussian, convergence diagnostics and the Laplace
//! approximation of the same target.

use std::error::Error;

use examiner_irt::engine::model::CorrelatedGaussian;
use examiner_irt::engine::{diagnostics, sample_nuts, Laplace, OptimizerConfig, SamplerConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let target = CorrelatedGaussian::new(0.8);
    let cfg = SamplerConfig {
        chains: 4,
        warmup: 1000,
        samples: 1000,
        seed: 11,
        ..SamplerConfig::default()
    };
    let d = sample_nuts(&target, &cfg)?;
    for (name, c) in d.names().iter().zip(diagnostics(&d)) {
        println!("{name}: rhat {:.4}, ess {:.0}", c.rhat.unwrap_or(f64::NAN), c.ess.unwrap_or(f64::NAN));
    }
    for (chain, s) in d.stats.iter().enumerate() {
        println!(
            "chain {chain}: step size {:.3}, accept {:.2}, divergences {}",
            s.step_size, s.mean_accept, s.divergences
        );
    }

    let lap = Laplace::fit(&target, &OptimizerConfig::default(), None)?;
    println!("mode {:?}, sd {:?}", lap.mode.point, lap.sd());
    Ok(())
}
