mod common;

use examiner_irt::answer_key::{disagreement_matrix, modal_key, threshold_key, KeySource};
use examiner_irt::data::{
    build_matrix, conclusiveness_data, score_record, to_conclusiveness, to_key_response, to_sequential,
    CategoricalData, CategoricalObs, Comparison, IdIndex, Mating, ScoredEntry, ScoredMatrix, ScoringScheme,
};
use examiner_irt::evaluation::{error_rates, waic, PointwiseLogLik};
use examiner_irt::fit::ModelKind;
use examiner_irt::models::consensus::{cell_logprobs, thresholds, ConsensusVariant};
use examiner_irt::models::irtree::{irtree_loglik, IRTreeParams};
use examiner_irt::models::joint::ordered_logit_probs;
use examiner_irt::models::rasch::{rasch_loglik, RaschParams};
use examiner_irt::models::tree::TreeSpec;
use proptest::prelude::*;

const SCHEMES: [ScoringScheme; 3] = [
    ScoringScheme::InconclusiveMcar,
    ScoringScheme::InconclusiveIncorrect,
    ScoringScheme::InconclusiveCorrect,
];

fn ids(prefix: &str, n: usize) -> IdIndex {
    IdIndex::from_ids((0..n).map(|i| format!("{prefix}{i}")))
}

/// Values on a 1/1024 grid, so sums and differences are exact.
fn dyadic(range: i32) -> impl Strategy<Value = f64> {
    (-range * 1024..range * 1024).prop_map(|v| v as f64 / 1024.0)
}

fn sorted_cutpoints(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.05f64..2.0, n).prop_flat_map(|gaps| {
        (-3.0f64..0.0).prop_map(move |start| {
            gaps.iter()
                .scan(start, |acc, g| {
                    *acc += g;
                    Some(*acc)
                })
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scoring_is_monotone_in_scheme(r in common::record(0, 0)) {
        if score_record(&r, ScoringScheme::InconclusiveIncorrect) == Some(1) {
            prop_assert_eq!(score_record(&r, ScoringScheme::InconclusiveCorrect), Some(1));
        }
        prop_assert_eq!(score_record(&r, ScoringScheme::InconclusiveMcar).is_some(), r.is_true_conclusion().is_some());
    }

    #[test]
    fn matrix_counts_scored_records(records in common::table(4, 5)) {
        for scheme in SCHEMES {
            let present = records.iter().filter(|r| score_record(r, scheme).is_some()).count();
            match build_matrix(&records, scheme) {
                Ok(m) => prop_assert_eq!(m.entries.len(), present),
                Err(_) => prop_assert_eq!(present, 0),
            }
        }
    }

    #[test]
    fn response_scales_commute(r in common::record(1, 2)) {
        let c = to_conclusiveness(&r).unwrap();
        prop_assert_eq!(to_sequential(&r).unwrap().conclusiveness(), c);
        prop_assert_eq!(to_key_response(&r).unwrap().conclusiveness(), c);
    }

    #[test]
    fn error_rates_recount(records in common::table(4, 6)) {
        let e = error_rates(&records);
        let count = |m: Mating, c: Comparison| {
            records.iter().filter(|r| r.mating == m && r.compare_value == Some(c)).count()
        };
        prop_assert_eq!(e.false_positives, count(Mating::NonMates, Comparison::Individualization));
        prop_assert_eq!(e.false_negatives, count(Mating::Mates, Comparison::Exclusion));
        prop_assert_eq!(e.nonmate_conclusive, e.nonmates.individualization + e.nonmates.exclusion);
        prop_assert_eq!(e.mate_conclusive, e.mates.individualization + e.mates.exclusion);
        if let Some(fpr) = e.fpr {
            prop_assert_eq!(fpr, e.false_positives as f64 / e.nonmate_conclusive as f64);
        }
    }

    #[test]
    fn rasch_translation_invariance(
        theta in proptest::collection::vec(dyadic(4), 3),
        b in proptest::collection::vec(dyadic(4), 3),
        shift in -8i32..8,
        ys in proptest::collection::vec(0u8..2, 9),
    ) {
        let entries = ys.iter().enumerate()
            .map(|(k, &y)| ScoredEntry { examiner: k / 3, item: k % 3, y })
            .collect();
        let m = ScoredMatrix::new(ids("E", 3), ids("I", 3), entries).unwrap();
        let p = RaschParams { theta: theta.clone(), b: b.clone(), mu_b: 0.0, sigma_theta: 1.0, sigma_b: 1.0 };
        let c = shift as f64;
        let q = RaschParams {
            theta: theta.iter().map(|t| t + c).collect(),
            b: b.iter().map(|v| v + c).collect(),
            ..p.clone()
        };
        prop_assert_eq!(rasch_loglik(&p, &m).unwrap(), rasch_loglik(&q, &m).unwrap());
    }

    #[test]
    fn ordinal_probabilities_normalize(eta in -8.0f64..8.0, gamma in sorted_cutpoints(4)) {
        let p = ordered_logit_probs(eta, &gamma).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ordinal_stochastic_ordering(eta in -5.0f64..5.0, dh in 0.0f64..3.0, gamma in sorted_cutpoints(4)) {
        let lo = ordered_logit_probs(eta, &gamma).unwrap();
        let hi = ordered_logit_probs(eta + dh, &gamma).unwrap();
        for c in 0..lo.len() {
            let tail = |p: &[f64]| p[c..].iter().sum::<f64>();
            prop_assert!(tail(&hi) >= tail(&lo) - 1e-12);
        }
    }

    #[test]
    fn leaf_probabilities_normalize(
        theta in proptest::collection::vec(-6.0f64..6.0, 5),
        b in proptest::collection::vec(-6.0f64..6.0, 5),
    ) {
        let five = TreeSpec::decision_process();
        prop_assert!((five.leaf_probs(&theta, &b).unwrap().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let three = TreeSpec::answer_key();
        prop_assert!((three.leaf_probs(&theta[..3], &b[..3]).unwrap().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn branch_monotonicity(
        theta in proptest::collection::vec(-4.0f64..4.0, 5),
        b in proptest::collection::vec(-4.0f64..4.0, 5),
        node in 0usize..5,
        step in 0.1f64..2.0,
    ) {
        let tree = TreeSpec::decision_process();
        let branch_one = |th: &[f64]| {
            let p = tree.leaf_probs(th, &b).unwrap();
            let reach: f64 = (0..tree.n_leaves())
                .filter(|&l| tree.path(l).iter().any(|&(k, _)| k == node))
                .map(|l| p[l])
                .sum();
            let one: f64 = (0..tree.n_leaves())
                .filter(|&l| tree.path(l).contains(&(node, true)))
                .map(|l| p[l])
                .sum();
            one / reach
        };
        let mut up = theta.clone();
        up[node] += step;
        prop_assert!(branch_one(&up) > branch_one(&theta));
    }

    #[test]
    fn irtree_node_shift_invariance(
        theta in proptest::collection::vec(dyadic(3), 9),
        b in proptest::collection::vec(dyadic(3), 9),
        cats in proptest::collection::vec(0usize..4, 9),
        node in 0usize..3,
        shift in -6i32..6,
    ) {
        let tree = TreeSpec::answer_key();
        let obs = cats.iter().enumerate()
            .map(|(k, &category)| CategoricalObs { examiner: k / 3, item: k % 3, category })
            .collect();
        let data = CategoricalData::new(ids("E", 3), ids("I", 3), 4, obs).unwrap();
        let p = IRTreeParams {
            k: 3, theta, b,
            beta0: vec![0.0; 3], beta1: vec![0.0; 3],
            sigma_theta: vec![1.0; 3], sigma_b: vec![1.0; 3],
            l_theta: vec![], l_b: vec![],
        };
        let mut q = p.clone();
        for r in 0..3 {
            q.theta[r * 3 + node] += shift as f64;
            q.b[r * 3 + node] += shift as f64;
        }
        prop_assert_eq!(irtree_loglik(&p, &data, &tree).unwrap(), irtree_loglik(&q, &data, &tree).unwrap());
    }

    #[test]
    fn consensus_cells_normalize(
        t in -4.0f64..4.0,
        a in 0.2f64..3.0,
        bias in -1.5f64..1.5,
        gamma in sorted_cutpoints(2),
        sqrt_tau in 0.1f64..5.0,
    ) {
        let delta = thresholds(a, bias, &gamma).unwrap();
        prop_assert!(delta.windows(2).all(|w| w[0] < w[1]));
        let mut out = [0.0; 3];
        for v in ConsensusVariant::ALL {
            cell_logprobs(v, t, &delta, sqrt_tau, &mut out);
            prop_assert!((out.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() <= 1e-12, "{:?}", v);
        }
    }

    #[test]
    fn modal_key_ignores_record_order(records in common::table(5, 4), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = modal_key(&conclusiveness_data(&records).unwrap()).unwrap();
        let b = modal_key(&conclusiveness_data(&shuffled).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn threshold_key_affine_invariance(
        t in proptest::collection::vec(dyadic(4), 6),
        g0 in dyadic(2),
        gap in 1i32..2048,
        scale_pow in -3i32..4,
        offset in -5i32..5,
    ) {
        let items: Vec<String> = (0..6).map(|j| format!("I{j}")).collect();
        let gamma = [g0, g0 + gap as f64 / 1024.0];
        let s = 2f64.powi(scale_pow);
        let m = offset as f64;
        let a = threshold_key(&items, &t, &gamma, KeySource::Cltrm).unwrap();
        let t2: Vec<f64> = t.iter().map(|v| s * v + m).collect();
        let g2: Vec<f64> = gamma.iter().map(|v| s * v + m).collect();
        let b = threshold_key(&items, &t2, &g2, KeySource::Cltrm).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn disagreement_is_symmetric_with_zero_diagonal(
        ts in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 7), 1..5),
    ) {
        let items: Vec<String> = (0..7).map(|j| format!("I{j}")).collect();
        let keys: Vec<_> = ts.iter()
            .map(|t| threshold_key(&items, t, &[-0.5, 0.5], KeySource::Ltrm).unwrap())
            .collect();
        let d = disagreement_matrix(&keys).unwrap();
        for i in 0..keys.len() {
            prop_assert_eq!(d.counts[i][i], 0);
            for j in 0..keys.len() {
                prop_assert_eq!(d.counts[i][j], d.counts[j][i]);
            }
        }
    }

    #[test]
    fn waic_reorder_and_block_additivity(
        values in proptest::collection::vec(-6.0f64..-0.01, 40),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (s, n) = (8, 5);
        let ll = PointwiseLogLik::new(values.to_vec(), s, n).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let values = &values;
        let permuted: Vec<f64> = (0..s).flat_map(|d| order.iter().map(move |&o| values[d * n + o])).collect();
        let a = waic(&ll).unwrap();
        let b = waic(&PointwiseLogLik::new(permuted, s, n).unwrap()).unwrap();
        prop_assert_eq!(a.waic, b.waic);
        prop_assert_eq!(a.lppd, b.lppd);
        prop_assert_eq!(a.p_waic, b.p_waic);
        prop_assert!((a.se - b.se).abs() <= 1e-12 * a.se.max(1.0));

        let block = |cols: std::ops::Range<usize>| {
            let w = cols.len();
            let v: Vec<f64> = (0..s).flat_map(|d| cols.clone().map(move |o| values[d * n + o])).collect::<Vec<_>>();
            waic(&PointwiseLogLik::new(v, s, w).unwrap()).unwrap()
        };
        let (x, y) = (block(0..2), block(2..5));
        prop_assert!((x.lppd + y.lppd - a.lppd).abs() <= 1e-12 * a.lppd.abs());
        prop_assert!((x.p_waic + y.p_waic - a.p_waic).abs() <= 1e-12 * a.p_waic.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulation_is_seeded(seed in any::<u64>(), kind_ix in 0usize..7) {
        let kind = ModelKind::ALL[kind_ix];
        let a = common::simulated(kind, 6, 9, Some(5), seed);
        let b = common::simulated(kind, 6, 9, Some(5), seed);
        prop_assert_eq!(&a.records, &b.records);
        prop_assert_eq!(a.truth, b.truth);
    }
}
