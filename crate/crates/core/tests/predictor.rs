//! Randomized predictors measured by simulation against the operating points
//! the LP asked for.

use fedfair::fair::{solve_lae, FairPredictor, MixWeights, PredictorTables, SpRandomization};
use fedfair::lp::{build_lp, solve, LpStatus, RegionForm, SolverConfig};
use fedfair::oracle::DiscreteInstance;
use fedfair::score::ArgmaxPredictor;
use fedfair::{Error, FairnessSpec, Metric, RngStream};

const DRAWS: usize = 1_000_000;

/// Instance plus predictor solved at the given tolerances.
fn fitted(
    metric: Metric,
    eps: f64,
    seed: u64,
) -> (
    DiscreteInstance,
    FairPredictor,
    fedfair::lp::LpInstance,
    Vec<f64>,
) {
    let mut rng = RngStream::new(seed, "predictor-test/instance");
    loop {
        let inst = DiscreteInstance::random(5, 2, 1, false, &mut rng).unwrap();
        let params = inst.exact_params().unwrap();
        let spec = FairnessSpec::uniform(metric, eps, eps, 1);
        let Ok(lp) = build_lp(&params, &spec, RegionForm::HalfSpace) else {
            continue;
        };
        let sol = solve(&lp, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let predictor = FairPredictor::from_solution(
            ArgmaxPredictor::new(inst.score_model()),
            &params,
            &lp,
            &sol,
        )
        .unwrap();
        return (inst, predictor, lp, sol.z);
    }
}

/// Draws `(x, a, c, y)` from the exact joint table.
struct Sampler {
    cumulative: Vec<f64>,
    shape: (usize, usize, usize),
}

impl Sampler {
    fn new(inst: &DiscreteInstance) -> Self {
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for x in 0..inst.num_values {
            for a in 0..2 {
                for c in 0..inst.num_clients {
                    for y in 0..inst.num_classes {
                        acc += inst.prob(x, a, c, y);
                        cumulative.push(acc);
                    }
                }
            }
        }
        Sampler {
            cumulative,
            shape: (2, inst.num_clients, inst.num_classes),
        }
    }

    fn draw(&self, rng: &mut RngStream) -> (usize, usize, usize, usize) {
        let s = rng.uniform_open() * self.cumulative.last().unwrap();
        let i = self
            .cumulative
            .partition_point(|c| *c < s)
            .min(self.cumulative.len() - 1);
        let (_, k, n) = self.shape;
        (i / (2 * k * n), (i / (k * n)) % 2, (i / n) % k, i % n)
    }
}

fn within_five_sigma(observed: usize, trials: usize, expected: f64) -> bool {
    let freq = observed as f64 / trials as f64;
    let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
    (freq - expected).abs() <= 5.0 * sigma + 1e-12
}

#[test]
fn simulated_true_positive_rates_match_the_lp_targets() {
    let (inst, predictor, lp, z) = fitted(Metric::EqualizedOdds, 0.02, 1);
    let sampler = Sampler::new(&inst);
    let mut rng = RngStream::new(2, "predictor-test/mc");
    let n = inst.num_classes;
    let mut hits = vec![vec![0usize; n]; 2];
    let mut totals = vec![vec![0usize; n]; 2];
    for _ in 0..DRAWS {
        let (x, a, c, y) = sampler.draw(&mut rng);
        let out = predictor.predict(&[x as f64], a, c, &mut rng).unwrap();
        totals[a][y] += 1;
        hits[a][y] += usize::from(out == y);
    }
    for a in 0..2 {
        let target = lp.tp_block(&z, a, 0);
        for y in 0..n {
            let freq = hits[a][y] as f64 / totals[a][y] as f64;
            assert!(
                within_five_sigma(hits[a][y], totals[a][y], target[y]),
                "group {a} class {y}: simulated {freq:.5} vs target {:.5} over {} draws",
                target[y],
                totals[a][y]
            );
        }
    }
}

#[test]
fn simulated_parity_rates_match_the_tables() {
    let (inst, predictor, _, _) = fitted(Metric::StatisticalParity, 0.01, 3);
    let params = inst.exact_params().unwrap();
    let sampler = Sampler::new(&inst);
    let mut rng = RngStream::new(4, "predictor-test/mc-sp");
    let n = inst.num_classes;
    let mut outputs = vec![vec![0usize; n]; 2];
    let mut totals = [0usize; 2];
    for _ in 0..DRAWS {
        let (x, a, c, _) = sampler.draw(&mut rng);
        outputs[a][predictor.predict(&[x as f64], a, c, &mut rng).unwrap()] += 1;
        totals[a] += 1;
    }
    let mut rates = vec![vec![0.0; n]; 2];
    for a in 0..2 {
        let table = &predictor.parity_table(a, 0).unwrap().table;
        let mass = params.sp.group_client[a][0];
        for y in 0..n {
            let expected: f64 = (0..n)
                .map(|j| params.sp.pred[j][a][0] / mass * table[j][y])
                .sum();
            rates[a][y] = expected;
            assert!(
                within_five_sigma(outputs[a][y], totals[a], expected),
                "group {a} output {y}"
            );
        }
    }
    // Expected rates meet the tolerance; the simulation sits near them.
    for y in 0..n {
        assert!((rates[0][y] - rates[1][y]).abs() <= 0.01 + 1e-9);
    }
}

#[test]
fn selection_bands_have_the_right_widths() {
    let beta = vec![0.4, 0.1, 0.35, 0.15];
    let mix = MixWeights {
        group: 0,
        client: 0,
        beta: beta.clone(),
    };
    let mut rng = RngStream::new(5, "predictor-test/bands");
    let trials = 200_000;
    let base_class = 1;
    let mut counts = [0usize; 3];
    for _ in 0..trials {
        counts[mix.sample(base_class, &mut rng)] += 1;
    }
    let mut expected: Vec<f64> = beta[1..].to_vec();
    expected[base_class] += beta[0];
    let chi2: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&o, &p)| {
            let e = p * trials as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // 99.9% quantile of chi-squared with two degrees of freedom.
    assert!(chi2 < 13.82, "chi-squared {chi2}");
}

#[test]
fn parity_bands_follow_the_column() {
    let cell = SpRandomization {
        group: 1,
        client: 0,
        table: vec![
            vec![0.7, 0.2, 0.1],
            vec![0.0, 1.0, 0.0],
            vec![0.25, 0.25, 0.5],
        ],
    };
    let mut rng = RngStream::new(6, "predictor-test/sp-bands");
    let trials = 200_000;
    let mut counts = [0usize; 3];
    for _ in 0..trials {
        counts[cell.sample(2, &mut rng)] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&cell.table[2])
        .map(|(&o, &p)| (o as f64 - p * trials as f64).powi(2) / (p * trials as f64))
        .sum();
    assert!(chi2 < 13.82, "chi-squared {chi2}");
    assert!((0..1000).all(|i| cell.select(1, (i as f64 + 0.5) / 1000.0) == 1));
}

#[test]
fn extreme_weights_reduce_to_base_or_constant() {
    let n = 4;
    let tp1 = vec![0.8, 0.6, 0.5, 0.7];
    let mut keep = vec![0.0; n + 1];
    keep[0] = 1.0;
    let mut last = vec![0.0; n + 1];
    last[n] = 1.0;
    let keep = MixWeights {
        group: 0,
        client: 0,
        beta: keep,
    };
    let last = MixWeights {
        group: 0,
        client: 0,
        beta: last,
    };
    assert_eq!(keep.operating_point(&tp1), tp1);
    assert_eq!(last.operating_point(&tp1), vec![0.0, 0.0, 0.0, 1.0]);
    for i in 0..1000 {
        let s = (i as f64 + 0.5) / 1000.0;
        for j in 0..n {
            assert_eq!(keep.select(j, s), j);
            assert_eq!(last.select(j, s), n - 1);
        }
    }
    assert_eq!(solve_lae(&tp1, &tp1).unwrap(), keep.beta);
    assert_eq!(solve_lae(&tp1, &[0.0, 0.0, 0.0, 1.0]).unwrap(), last.beta);
}

#[test]
fn targets_outside_the_hull_are_rejected() {
    let tp1 = [0.7, 0.6];
    // Above tp1 in both coordinates: no mixture reaches it.
    assert!(matches!(
        solve_lae(&tp1, &[0.8, 0.7]),
        Err(Error::TargetOutsideHull { .. })
    ));
    assert!(matches!(
        solve_lae(&[0.5, 0.5], &[0.5, 0.5]),
        Err(Error::SingularLae)
    ));
}

#[test]
fn bundles_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    for (metric, seed) in [(Metric::EqualizedOdds, 7), (Metric::StatisticalParity, 8)] {
        let (inst, predictor, _, _) = fitted(metric, 0.05, seed);
        let path = dir.path().join(format!("{}.json", metric.tag()));
        predictor.save(&path).unwrap();
        let back = FairPredictor::load(ArgmaxPredictor::new(inst.score_model()), &path).unwrap();
        assert_eq!(back.bundle(), predictor.bundle());
        let mut r1 = RngStream::new(9, "predictor-test/replay");
        let mut r2 = r1.clone();
        for x in 0..inst.num_values {
            for a in 0..2 {
                assert_eq!(
                    predictor.predict(&[x as f64], a, 0, &mut r1).unwrap(),
                    back.predict(&[x as f64], a, 0, &mut r2).unwrap()
                );
            }
        }
    }
}

#[test]
fn malformed_bundles_are_refused() {
    let (inst, predictor, _, _) = fitted(Metric::EqualizedOdds, 0.05, 10);
    let mut bundle = predictor.bundle().clone();
    if let PredictorTables::Mix(cells) = &mut bundle.tables {
        cells[0].as_mut().unwrap().beta[0] += 0.2;
    }
    assert!(FairPredictor::new(ArgmaxPredictor::new(inst.score_model()), bundle).is_err());
    let mut bundle = predictor.bundle().clone();
    bundle.num_clients = 3;
    assert!(FairPredictor::new(ArgmaxPredictor::new(inst.score_model()), bundle).is_err());
}
