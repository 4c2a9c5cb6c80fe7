//! Property tests for the aggregation rules and attack crafting.

use proptest::prelude::*;

use byzopt::aggregators::{aggregate, AggregatorConfig, Rule};
use byzopt::attacks::{craft, AttackConfig, AttackKind, RoundContext};
use byzopt::util;

fn inputs_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    // 5..=12 vectors of shared dimension 1..=6 with moderate magnitudes.
    (5usize..=12, 1usize..=6).prop_flat_map(|(n, d)| {
        proptest::collection::vec(
            proptest::collection::vec(-100.0f64..100.0, d..=d),
            n..=n,
        )
    })
}

fn all_rules() -> Vec<Rule> {
    vec![
        Rule::Mean,
        Rule::Krum,
        Rule::Median,
        Rule::TrimmedMean,
        Rule::Faba,
        Rule::GeometricMedian,
        Rule::CenteredClipping,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_invariance(inputs in inputs_strategy(), seed in 0u64..1000) {
        let mut rng = byzopt::rng::CounterRng::from_key(&[seed]);
        let mut shuffled = inputs.clone();
        rng.shuffle(&mut shuffled);
        for rule in all_rules() {
            let cfg = AggregatorConfig::new(rule, 0.2);
            let a = aggregate(&cfg, &inputs).unwrap();
            let b = aggregate(&cfg, &shuffled).unwrap();
            // Order statistics and selection rules are exactly invariant;
            // iterative rules agree to solver tolerance.
            let tol = match rule {
                Rule::GeometricMedian => 1e-6,
                _ => 1e-9,
            };
            prop_assert!(util::dist(&a, &b) <= tol, "{rule:?}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn translation_equivariance(inputs in inputs_strategy(), shift in -50.0f64..50.0) {
        let translated: Vec<Vec<f64>> = inputs
            .iter()
            .map(|v| v.iter().map(|x| x + shift).collect())
            .collect();
        for rule in all_rules() {
            let cfg = AggregatorConfig::new(rule, 0.2);
            let base = aggregate(&cfg, &inputs).unwrap();
            let moved = aggregate(&cfg, &translated).unwrap();
            let want: Vec<f64> = base.iter().map(|x| x + shift).collect();
            let scale = util::norm(&want).max(1.0);
            prop_assert!(
                util::dist(&moved, &want) <= 1e-6 * scale,
                "{rule:?}: {moved:?} vs {want:?}"
            );
        }
    }

    #[test]
    fn crafted_messages_match_dimension_and_count(
        inputs in inputs_strategy(),
        byz in 1usize..4,
        round in 0u64..100,
    ) {
        let ctx = RoundContext {
            round,
            seed: 5,
            stream: 0,
            byz_count: byz,
            total_nodes: inputs.len() + byz,
            poisoned: None,
        };
        for kind in AttackKind::ALL {
            if kind == AttackKind::LabelFlip {
                continue;
            }
            let out = craft(&AttackConfig::new(kind), &inputs, &ctx).unwrap();
            prop_assert_eq!(out.len(), byz);
            for v in &out {
                prop_assert_eq!(v.len(), inputs[0].len());
                prop_assert!(v.iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn oracle_stream_is_stateless(seed in any::<u64>(), node in 0usize..8, round in 0u64..50) {
        let problem = byzopt::problems::conditioned_quadratic(8, 3, 2.0, 1.0, &[0.0; 3]).unwrap();
        let oracle = byzopt::oracles::OracleSpec::gaussian(1.0, seed);
        let x = [0.5, -1.0, 2.0];
        let a = byzopt::oracles::sample_gradient(&oracle, &problem, node, &x, round, 0).unwrap();
        let b = byzopt::oracles::sample_gradient(&oracle, &problem, node, &x, round, 0).unwrap();
        prop_assert_eq!(a, b);
    }
}
