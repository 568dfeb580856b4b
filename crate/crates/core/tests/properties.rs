//! Invariants that hold for every instance, checked on random draws.

use fedfair::fair::{solve_lae, MixWeights};
use fedfair::lp::{
    build_lp, simplex_halfspaces, solve, AggregatedParams, LpStatus, RegionForm, SolverConfig,
};
use fedfair::oracle::DiscreteInstance;
use fedfair::{FairnessSpec, Metric, RngStream};
use proptest::prelude::*;

fn optimum(params: &AggregatedParams, metric: Metric, g: f64, l: f64) -> Option<f64> {
    let spec = FairnessSpec::uniform(metric, g, l, params.num_clients);
    let lp = build_lp(params, &spec, RegionForm::Barycentric).ok()?;
    let sol = solve(&lp, &SolverConfig::default()).ok()?;
    assert_eq!(sol.status, LpStatus::Optimal);
    Some(sol.accuracy_estimate)
}

fn random_instance(seed: u64, classes: usize, clients: usize) -> DiscreteInstance {
    DiscreteInstance::random(
        4,
        classes,
        clients,
        false,
        &mut RngStream::new(seed, "properties/instance"),
    )
    .unwrap()
}

/// Same distribution with the two groups exchanged.
fn swap_groups(inst: &DiscreteInstance) -> DiscreteInstance {
    let mut joint = vec![0.0; inst.joint.len()];
    for x in 0..inst.num_values {
        for a in 0..2 {
            for c in 0..inst.num_clients {
                for y in 0..inst.num_classes {
                    joint[inst.index(x, 1 - a, c, y)] = inst.prob(x, a, c, y);
                }
            }
        }
    }
    DiscreteInstance::new(inst.num_values, inst.num_classes, inst.num_clients, joint).unwrap()
}

/// Same distribution with the two clients exchanged.
fn swap_clients(inst: &DiscreteInstance) -> DiscreteInstance {
    let mut joint = vec![0.0; inst.joint.len()];
    for x in 0..inst.num_values {
        for a in 0..2 {
            for c in 0..2 {
                for y in 0..inst.num_classes {
                    joint[inst.index(x, a, 1 - c, y)] = inst.prob(x, a, c, y);
                }
            }
        }
    }
    DiscreteInstance::new(inst.num_values, inst.num_classes, 2, joint).unwrap()
}

fn metric_strategy() -> impl Strategy<Value = Metric> {
    prop_oneof![
        Just(Metric::EqualizedOdds),
        Just(Metric::EqualOpportunity),
        Just(Metric::StatisticalParity)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lae_recovers_any_mixture(
        tp1 in prop::collection::vec(0.3f64..1.0, 2..6),
        raw in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        prop_assume!(tp1.iter().sum::<f64>() > 1.05);
        let n = tp1.len();
        let w = &raw[..=n];
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-3);
        let truth = MixWeights { group: 0, client: 0, beta: w.iter().map(|v| v / total).collect() };
        let z = truth.operating_point(&tp1);
        let beta = solve_lae(&tp1, &z).unwrap();
        prop_assert!((beta.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(beta.iter().all(|b| (0.0..=1.0).contains(b)));
        let back = MixWeights { group: 0, client: 0, beta }.operating_point(&tp1);
        for (p, q) in back.iter().zip(&z) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn half_spaces_contain_exactly_the_mixtures(
        tp1 in prop::collection::vec(0.3f64..1.0, 2..5),
        u in prop::collection::vec(0.0f64..1.0, 2..5),
    ) {
        prop_assume!(tp1.iter().sum::<f64>() > 1.05 && u.len() == tp1.len());
        let block = simplex_halfspaces(&tp1, 0, 0, 0).unwrap();
        let inside = block.max_violation(&u) <= 0.0;
        let reachable = solve_lae(&tp1, &u).is_ok();
        // Points near a facet may land either way within the hull tolerance.
        if block.max_violation(&u).abs() > 1e-6 {
            prop_assert_eq!(inside, reachable);
        }
        for y in 0..tp1.len() {
            let mut e = vec![0.0; tp1.len()];
            e[y] = 1.0;
            prop_assert!(block.max_violation(&e) <= 1e-12);
        }
        prop_assert!(block.max_violation(&tp1) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimum_ignores_group_labels(seed in 0u64..10_000, metric in metric_strategy(), g in 0.0f64..0.2, l in 0.0f64..0.2) {
        let inst = random_instance(seed, 3, 2);
        let a = optimum(&inst.exact_params().unwrap(), metric, g, l).unwrap();
        let b = optimum(&swap_groups(&inst).exact_params().unwrap(), metric, g, l).unwrap();
        prop_assert!((a - b).abs() <= 1e-7, "{} vs {}", a, b);
    }

    #[test]
    fn optimum_ignores_client_order(seed in 0u64..10_000, metric in metric_strategy(), g in 0.0f64..0.2, l in 0.0f64..0.2) {
        let inst = random_instance(seed, 2, 2);
        let a = optimum(&inst.exact_params().unwrap(), metric, g, l).unwrap();
        let b = optimum(&swap_clients(&inst).exact_params().unwrap(), metric, g, l).unwrap();
        prop_assert!((a - b).abs() <= 1e-7, "{} vs {}", a, b);
    }

    #[test]
    fn loosening_never_costs_accuracy(
        seed in 0u64..10_000,
        metric in metric_strategy(),
        g in 0.0f64..0.3,
        l in 0.0f64..0.3,
        dg in 0.0f64..0.3,
        dl in 0.0f64..0.3,
    ) {
        let params = random_instance(seed, 3, 2).exact_params().unwrap();
        let tight = optimum(&params, metric, g, l).unwrap();
        let loose = optimum(&params, metric, g + dg, l + dl).unwrap();
        prop_assert!(loose >= tight - 1e-9, "{} then {}", tight, loose);
        prop_assert!(loose <= params.base_accuracy() + 1e-9);
    }

    #[test]
    fn exact_fairness_is_always_attainable(seed in 0u64..10_000, metric in metric_strategy()) {
        // Every constant predictor is exactly fair, so the tightest LP is feasible.
        let params = random_instance(seed, 3, 2).exact_params().unwrap();
        let v = optimum(&params, metric, 0.0, 0.0).unwrap();
        let best_constant = (0..3)
            .map(|y| (0..2).flat_map(|a| (0..2).map(move |c| (a, c))).map(|(a, c)| params.p[y][a][c]).sum::<f64>())
            .fold(0.0, f64::max);
        prop_assert!(v >= best_constant - 1e-9);
    }
}
