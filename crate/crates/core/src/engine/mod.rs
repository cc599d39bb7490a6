//! Gradient-based Bayesian inference: parameter transforms, priors, NUTS,
//! mode finding and convergence diagnostics.

pub mod diagnostics;
pub mod draws;
pub mod laplace;
pub mod model;
pub mod nuts;
pub mod priors;
pub mod space;

pub use diagnostics::{diagnostics, Convergence};
pub use draws::{ChainStats, DrawSet, ParamSummary};
pub use laplace::{find_mode, Laplace, OptimizerConfig};
pub use model::{gradient_check, LogDensityModel};
pub use nuts::{sample_nuts, sample_nuts_from, SamplerConfig};
pub use space::{Constraint, ParameterSpace};
