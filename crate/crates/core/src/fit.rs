//! One entry point from records to posterior draws for every model.

use serde::{Deserialize, Serialize};

use crate::data::{
    build_matrix, conclusiveness_data, joint_data, key_response_data, mating_covariate, sequential_data,
    ResponseRecord, ScoringScheme,
};
use crate::engine::{sample_nuts, DrawSet, Laplace, LogDensityModel, OptimizerConfig, SamplerConfig};
use crate::error::{Error, Result};
use crate::models::consensus::{consensus_posterior, ConsensusModel, ConsensusVariant};
use crate::models::irtree::{irtree_posterior, IRTreeConfig, IRTreeModel};
use crate::models::joint::{joint_posterior, JointModel};
use crate::models::rasch::{rasch_posterior, RaschModel};
use crate::models::tree::TreeSpec;
use crate::models::ObservationModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Rasch,
    Joint,
    IRTree,
    /// Three-node tree behind the model-based answer key.
    IRTreeKey,
    Ltrm,
    Cltrm,
    Altrm,
}

impl ModelKind {
    pub const ALL: [Self; 7] = [
        Self::Rasch,
        Self::Joint,
        Self::IRTree,
        Self::IRTreeKey,
        Self::Ltrm,
        Self::Cltrm,
        Self::Altrm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rasch => "rasch",
            Self::Joint => "joint",
            Self::IRTree => "irtree",
            Self::IRTreeKey => "irtree-key",
            Self::Ltrm => "ltrm",
            Self::Cltrm => "cltrm",
            Self::Altrm => "altrm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase())
    }

    pub fn consensus_variant(self) -> Option<ConsensusVariant> {
        match self {
            Self::Ltrm => Some(ConsensusVariant::Ltrm),
            Self::Cltrm => Some(ConsensusVariant::Cltrm),
            Self::Altrm => Some(ConsensusVariant::Altrm),
            _ => None,
        }
    }

    /// Whether the fit depends on how responses are scored.
    pub fn uses_scheme(self) -> bool {
        matches!(self, Self::Rasch | Self::Joint)
    }
}

#[derive(Debug, Clone)]
pub enum BuiltModel {
    Rasch(RaschModel),
    Joint(JointModel),
    IRTree(IRTreeModel),
    Consensus(ConsensusModel),
}

impl BuiltModel {
    pub fn density(&self) -> &dyn LogDensityModel {
        match self {
            Self::Rasch(m) => m,
            Self::Joint(m) => m,
            Self::IRTree(m) => m,
            Self::Consensus(m) => m,
        }
    }

    pub fn observations(&self) -> &dyn ObservationModel {
        match self {
            Self::Rasch(m) => m,
            Self::Joint(m) => m,
            Self::IRTree(m) => m,
            Self::Consensus(m) => m,
        }
    }
}

pub fn build_model(
    kind: ModelKind,
    records: &[ResponseRecord],
    scheme: ScoringScheme,
    irtree: IRTreeConfig,
) -> Result<BuiltModel> {
    if records.is_empty() {
        return Err(Error::EmptyData("no records".into()));
    }
    Ok(match kind {
        ModelKind::Rasch => BuiltModel::Rasch(rasch_posterior(&build_matrix(records, scheme)?)?),
        ModelKind::Joint => {
            let (scored, difficulty) = joint_data(records, scheme)?;
            BuiltModel::Joint(joint_posterior(&scored, &difficulty)?)
        }
        ModelKind::IRTree | ModelKind::IRTreeKey => {
            let (data, tree) = if kind == ModelKind::IRTree {
                (sequential_data(records)?, TreeSpec::decision_process())
            } else {
                (key_response_data(records)?, TreeSpec::answer_key())
            };
            let x = mating_covariate(records, &data.items)?;
            BuiltModel::IRTree(irtree_posterior(&data, &x, &tree, irtree)?)
        }
        ModelKind::Ltrm | ModelKind::Cltrm | ModelKind::Altrm => {
            let variant = kind.consensus_variant().unwrap();
            BuiltModel::Consensus(consensus_posterior(&conclusiveness_data(records)?, variant)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub sampler: SamplerConfig,
    /// Gaussian approximation at the posterior mode instead of NUTS.
    pub map: bool,
    pub optimizer: OptimizerConfig,
    /// Draws taken from the Gaussian approximation.
    pub laplace_draws: usize,
    pub scheme: ScoringScheme,
    pub irtree: IRTreeConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            map: false,
            optimizer: OptimizerConfig::default(),
            laplace_draws: 1000,
            scheme: ScoringScheme::default(),
            irtree: IRTreeConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub kind: ModelKind,
    pub model: BuiltModel,
    pub draws: DrawSet,
    pub laplace: Option<Laplace>,
}

/// Runs inference on an already built model.
pub fn fit_model(kind: ModelKind, model: BuiltModel, opts: &FitOptions) -> Result<Fit> {
    let density = model.density();
    let (draws, laplace) = if opts.map {
        let optimizer = OptimizerConfig {
            seed: opts.sampler.seed,
            ..opts.optimizer.clone()
        };
        let lap = Laplace::fit(density, &optimizer, None)?;
        let draws = lap.draws(density, opts.laplace_draws.max(2), opts.sampler.seed)?;
        (draws, Some(lap))
    } else {
        (sample_nuts(density, &opts.sampler)?, None)
    };
    Ok(Fit {
        kind,
        model,
        draws,
        laplace,
    })
}

pub fn fit(kind: ModelKind, records: &[ResponseRecord], opts: &FitOptions) -> Result<Fit> {
    let model = build_model(kind, records, opts.scheme, opts.irtree)?;
    fit_model(kind, model, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::parse(k.name()), Some(k));
        }
        assert_eq!(ModelKind::parse("nope"), None);
    }

    #[test]
    fn empty_records_rejected() {
        assert!(matches!(
            build_model(ModelKind::Rasch, &[], ScoringScheme::default(), IRTreeConfig::default()),
            Err(Error::EmptyData(_))
        ));
    }
}
