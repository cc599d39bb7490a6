#![allow(dead_code)]

use examiner_irt::data::{
    Comparison, ExclusionReason, InconclusiveReason, LatentValue, Mating, ReportedDifficulty, ResponseRecord,
};
use examiner_irt::fit::ModelKind;
use examiner_irt::models::tree::TreeSpec;
use examiner_irt::simulate::{simulate, Assignment, DesignSpec, Simulated, TruthParams};
use proptest::prelude::*;

/// A valid record for the given ids.
pub fn record(examiner: usize, item: usize) -> impl Strategy<Value = ResponseRecord> {
    (0u8..8, any::<bool>(), any::<bool>(), 0u8..3, 0usize..6).prop_map(move |(kind, mates, veo, reason, diff)| {
        let (latent, compare, inc, exc) = match kind {
            0 => (LatentValue::NV, None, None, None),
            1 | 2 => (
                if veo { LatentValue::VEO } else { LatentValue::VID },
                Some(Comparison::Individualization),
                None,
                None,
            ),
            3 | 4 => (
                LatentValue::VID,
                Some(Comparison::Exclusion),
                None,
                Some(if reason == 0 { ExclusionReason::Pattern } else { ExclusionReason::Minutiae }),
            ),
            _ => (
                if veo { LatentValue::VEO } else { LatentValue::VID },
                Some(Comparison::Inconclusive),
                Some(match reason {
                    0 => InconclusiveReason::Close,
                    1 => InconclusiveReason::Insufficient,
                    _ => InconclusiveReason::NoOverlap,
                }),
                None,
            ),
        };
        ResponseRecord {
            examiner_id: format!("E{examiner:02}"),
            item_id: format!("I{item:02}"),
            mating: if mates { Mating::Mates } else { Mating::NonMates },
            latent_value: latent,
            compare_value: compare,
            inconclusive_reason: inc,
            exclusion_reason: exc,
            reported_difficulty: ReportedDifficulty::from_level(diff),
        }
    })
}

/// A small table with every examiner answering every item.
pub fn table(max_examiners: usize, max_items: usize) -> impl Strategy<Value = Vec<ResponseRecord>> {
    (1..=max_examiners, 1..=max_items).prop_flat_map(|(n, j)| {
        (0..n)
            .flat_map(|i| (0..j).map(move |k| (i, k)))
            .map(|(i, k)| record(i, k).boxed())
            .collect::<Vec<_>>()
    })
}

pub fn design(n: usize, j: usize, per: Option<usize>, seed: u64) -> DesignSpec {
    DesignSpec {
        n_examiners: n,
        n_items: j,
        assignment: per.map_or(Assignment::Complete, Assignment::RandomSubset),
        mates_fraction: 0.5,
        seed,
    }
}

/// Data drawn from `kind` with the same presets the command line uses.
pub fn simulated(kind: ModelKind, n: usize, j: usize, per: Option<usize>, seed: u64) -> Simulated {
    let d = design(n, j, per, seed).build().unwrap();
    let params = match kind {
        ModelKind::Rasch => TruthParams::rasch(&d, 1.0, 0.0, 1.5),
        ModelKind::Joint => TruthParams::joint(&d, 1.0, 1.5, 0.5, 0.5),
        ModelKind::IRTree => TruthParams::irtree_default(&d, &TreeSpec::decision_process()).unwrap(),
        ModelKind::IRTreeKey => TruthParams::irtree_default(&d, &TreeSpec::answer_key()).unwrap(),
        _ => TruthParams::consensus(&d, kind.consensus_variant().unwrap()),
    };
    simulate(&params, &d).unwrap()
}
