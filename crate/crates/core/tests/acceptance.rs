//! End-to-end acceptance battery. Prints one line per criterion and exits
//! nonzero if any criterion fails. Criterion 10 runs only when
//! `FEDFAIR_ADULT_CSV` points at a prepared two-client dataset.

use std::sync::Arc;
use std::time::{Duration, Instant};

use fedfair::data::{split_dataset, ClientGroupDataset};
use fedfair::eval::{
    closed_form_report, evaluate, evaluate_base, heterogeneity_experiment, sweep,
    synthetic_seed_runs, ExperimentOptions, ExperimentScores, GridSpec, SweepOptions,
};
use fedfair::fair::{solve_lae, FairPredictor, MixWeights};
use fedfair::lp::{build_lp, solve, LpStatus, RegionForm, SolverConfig};
use fedfair::oracle::{
    exact_metrics_of_predictor, lp_agreement, run_suite, DiscreteInstance, Suite,
};
use fedfair::protocol::{run_protocol, run_scoring, ScoreSource};
use fedfair::score::{
    generate_synthetic, ArgmaxPredictor, FedAvgConfig, SharedModel, SyntheticSpec,
    SCENARIO_PROPORTIONS,
};
use fedfair::stats::DpConfig;
use fedfair::{FairnessSpec, Metric, Result, RngStream};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn ten_thousand_sample_synthetic(seed: u64) -> Result<(ClientGroupDataset, SharedModel)> {
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[0], 2000);
    let (data, oracle) = generate_synthetic(&spec, &RngStream::new(seed, "acceptance/identity"))?;
    Ok((data, Arc::new(oracle)))
}

/// Loose tolerances reproduce the argmax predictor sample for sample.
fn identity_corner() -> Result<Outcome> {
    let start = Instant::now();
    let (data, model) = ten_thousand_sample_synthetic(1)?;
    let rng = RngStream::new(1, "acceptance/identity");
    let (train, val, test) = split_dataset(&data, [0.6, 0.2, 0.2], &rng.derive("split"))?;
    let mut details = Vec::new();
    let mut ok = true;
    for metric in [
        Metric::EqualizedOdds,
        Metric::EqualOpportunity,
        Metric::StatisticalParity,
    ] {
        let spec = FairnessSpec::uniform(metric, 1.0, 1.0, data.num_clients());
        let run = run_protocol(
            &train,
            &val,
            &ScoreSource::Pretrained(model.clone()),
            &spec,
            &DpConfig::disabled(),
            &SolverConfig::default(),
            RegionForm::HalfSpace,
            &rng,
        )?;
        let base = ArgmaxPredictor::new(model.clone());
        let mut draw = rng.derive(format!("identity/{}", metric.tag()));
        let mut mismatches = 0usize;
        for i in 0..test.len() {
            let (x, a, c) = (test.features(i), test.group(i), test.client(i));
            if run.post.predictor.predict(x, a, c, &mut draw)? != base.predict(x, a, c) {
                mismatches += 1;
            }
        }
        let fair = evaluate(&run.post.predictor, &test, &rng.derive("eval"), 5)?;
        let plain = evaluate_base(&model, &test, metric)?;
        let same_accuracy = fair.accuracy == plain.accuracy;
        ok &= mismatches == 0 && same_accuracy;
        details.push(format!(
            "{}: {mismatches} mismatches of {}, accuracy {:.4} vs {:.4}",
            metric.tag(),
            test.len(),
            fair.accuracy,
            plain.accuracy
        ));
    }
    let elapsed = start.elapsed();
    ok &= within(elapsed, 60);
    Ok(verdict(
        ok,
        format!("{}; {:.1?}", details.join("; "), elapsed),
    ))
}

/// Mixing weights recovered from random targets reproduce the targets.
fn lae_correctness() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = RngStream::new(2, "acceptance/lae");
    let (mut worst_sum, mut worst_trip, mut worst_range) = (0.0f64, 0.0f64, 0.0f64);
    let mut solved = 0usize;
    for draw in 0..30 {
        let n = 2 + draw % 4;
        // tp1 with sum safely above 1 keeps the simplex full-dimensional.
        let tp1: Vec<f64> = loop {
            let t: Vec<f64> = (0..n).map(|_| 0.05 + 0.95 * rng.uniform_open()).collect();
            if t.iter().sum::<f64>() > 1.05 {
                break t;
            }
        };
        for _ in 0..1000 {
            let w: Vec<f64> = (0..=n).map(|_| -rng.uniform_open().ln()).collect();
            let s: f64 = w.iter().sum();
            let truth = MixWeights {
                group: 0,
                client: 0,
                beta: w.iter().map(|v| v / s).collect(),
            };
            let z = truth.operating_point(&tp1);
            let beta = solve_lae(&tp1, &z)?;
            let mix = MixWeights {
                group: 0,
                client: 0,
                beta: beta.clone(),
            };
            let back = mix.operating_point(&tp1);
            worst_sum = worst_sum.max((beta.iter().sum::<f64>() - 1.0).abs());
            worst_trip = worst_trip.max(
                back.iter()
                    .zip(&z)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
            worst_range = worst_range.max(
                beta.iter()
                    .map(|b| (-b).max(b - 1.0))
                    .fold(f64::NEG_INFINITY, f64::max),
            );
            solved += 1;
        }
    }
    let ok = worst_sum <= 1e-9 && worst_trip <= 1e-9 && worst_range <= 0.0;
    Ok(verdict(
        ok,
        format!(
            "{solved} targets over 30 tp1 draws: |sum-1| {worst_sum:.1e}, round trip {worst_trip:.1e}, range excess {worst_range:.1e}; {:.1?}",
            start.elapsed()
        ),
    ))
}

/// Installed predictors meet every tolerance exactly and the LP value is
/// their accuracy.
fn closed_form_fairness() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = RngStream::new(3, "acceptance/closed-form");
    let (mut worst_violation, mut worst_objective, mut worst_accuracy) =
        (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let mut instances = 0;
    let cases = [
        (Metric::EqualizedOdds, 0.02, 0.05),
        (Metric::EqualizedOdds, 0.0, 0.0),
        (Metric::EqualOpportunity, 0.05, 0.01),
        (Metric::StatisticalParity, 0.03, 0.03),
        (Metric::StatisticalParity, 0.0, 0.1),
    ];
    for (values, classes, clients) in [(4, 2, 2), (5, 3, 2), (6, 3, 1), (3, 2, 1)] {
        for _ in 0..4 {
            let inst = DiscreteInstance::random(values, classes, clients, false, &mut rng)?;
            let params = inst.exact_params()?;
            for (metric, g, l) in cases {
                let spec = FairnessSpec::uniform(metric, g, l, clients);
                // Cells whose base true positives sum to 1 have a flat region; those need the vertex form.
                let lp = match build_lp(&params, &spec, RegionForm::HalfSpace) {
                    Err(fedfair::Error::DegenerateSimplex { .. }) => {
                        build_lp(&params, &spec, RegionForm::Barycentric)?
                    }
                    other => other?,
                };
                let sol = solve(&lp, &SolverConfig::default())?;
                if sol.status != LpStatus::Optimal {
                    return Ok(Outcome::Fail(format!(
                        "LP status {:?} on a feasible instance",
                        sol.status
                    )));
                }
                let predictor = FairPredictor::from_solution(
                    ArgmaxPredictor::new(inst.score_model()),
                    &params,
                    &lp,
                    &sol,
                )?;
                let exact = exact_metrics_of_predictor(&inst, &predictor)?;
                let closed = closed_form_report(&predictor, &params)?;
                worst_violation = worst_violation.max(exact.worst_violation(&spec));
                worst_objective =
                    worst_objective.max((sol.objective_value - lp.objective_at(&sol.z)).abs());
                worst_accuracy = worst_accuracy
                    .max((lp.accuracy_of_objective(sol.objective_value) - exact.accuracy).abs())
                    .max((closed.accuracy - exact.accuracy).abs());
                instances += 1;
            }
        }
    }
    let ok = worst_violation <= 1e-7 && worst_objective <= 1e-9 && worst_accuracy <= 1e-6;
    Ok(verdict(
        ok,
        format!(
            "{instances} solves: worst excess {worst_violation:.1e}, objective mismatch {worst_objective:.1e}, accuracy mismatch {worst_accuracy:.1e}; {:.1?}",
            start.elapsed()
        ),
    ))
}

/// The LP optimum matches a grid search over mixtures.
fn oracle_equivalence() -> Result<Outcome> {
    let start = Instant::now();
    let mut lines = run_suite(Suite::Lp, 4)?
        .into_iter()
        .map(|l| (l.pass, l.detail))
        .collect::<Vec<_>>();
    let mut rng = RngStream::new(4, "acceptance/bruteforce");
    for (values, metric, g, l) in [
        (6, Metric::EqualizedOdds, 0.05, 0.05),
        (5, Metric::EqualizedOdds, 0.1, 0.02),
        (6, Metric::EqualOpportunity, 0.02, 0.05),
        (4, Metric::EqualizedOdds, 0.0, 0.0),
    ] {
        let inst = DiscreteInstance::random(values, 2, 2, false, &mut rng)?;
        let r = lp_agreement(&inst, &FairnessSpec::uniform(metric, g, l, 2), 0.02)?;
        lines.push((
            r.pass,
            format!(
                "lp {:.5} grid {} slack {:.4}",
                r.lp_accuracy,
                r.bruteforce_accuracy
                    .map_or("none".into(), |v| format!("{v:.5}")),
                r.slack
            ),
        ));
    }
    let elapsed = start.elapsed();
    let passed = lines.iter().filter(|l| l.0).count();
    let failures: Vec<&str> = lines
        .iter()
        .filter(|l| !l.0)
        .map(|l| l.1.as_str())
        .collect();
    let ok = failures.is_empty() && within(elapsed, 120);
    Ok(verdict(
        ok,
        format!(
            "{passed}/{} instances agree; {:.1?}{}",
            lines.len(),
            elapsed,
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(" | "))
            }
        ),
    ))
}

/// Enumerated deterministic predictors sit inside the region and mixtures
/// reach midpoints.
fn feasible_region() -> Result<Outcome> {
    let start = Instant::now();
    let lines = run_suite(Suite::Region, 5)?;
    let elapsed = start.elapsed();
    let ok = lines.iter().all(|l| l.pass) && within(elapsed, 60);
    let detail: Vec<String> = lines
        .iter()
        .map(|l| format!("{} [{}]", l.name, l.detail))
        .collect();
    Ok(verdict(
        ok,
        format!("{}; {:.1?}", detail.join("; "), elapsed),
    ))
}

/// Five-client oracle-score run at tight equalized odds.
fn synthetic_disparity_reduction() -> Result<Outcome> {
    let start = Instant::now();
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[0], 10_000);
    let rng = RngStream::new(6, "acceptance/synthetic");
    let (data, oracle) = generate_synthetic(&spec, &rng.derive("data"))?;
    let model: SharedModel = Arc::new(oracle);
    let fairness = FairnessSpec::uniform(Metric::EqualizedOdds, 0.01, 0.01, 5);
    let run = run_protocol(
        &data,
        &data,
        &ScoreSource::Pretrained(model.clone()),
        &fairness,
        &DpConfig::disabled(),
        &SolverConfig::default(),
        RegionForm::HalfSpace,
        &rng,
    )?;
    let report = evaluate(&run.post.predictor, &data, &rng.derive("eval"), 5)?;
    let base = evaluate_base(&model, &data, Metric::EqualizedOdds)?;
    // For information: statistics from one fresh draw, measured on another.
    let (fresh, _) = generate_synthetic(&spec, &rng.derive("fresh"))?;
    let held_out = evaluate(&run.post.predictor, &fresh, &rng.derive("eval-fresh"), 5)?;
    let elapsed = start.elapsed();
    let ok = report.global_disparity.max <= 0.03
        && report.local_disparity.mean <= 0.04
        && within(elapsed, 300);
    Ok(verdict(
        ok,
        format!(
            "global {:.4} (base {:.4}), mean local {:.4} (base {:.4}), accuracy {:.4}; fresh sample: global {:.4}, mean local {:.4}; {:.1?}",
            report.global_disparity.max,
            base.global_disparity.max,
            report.local_disparity.mean,
            base.local_disparity.mean,
            report.accuracy,
            held_out.global_disparity.max,
            held_out.local_disparity.mean,
            elapsed
        ),
    ))
}

/// The LP value grows as either tolerance loosens.
fn tradeoff_monotonicity() -> Result<Outcome> {
    let start = Instant::now();
    let levels = vec![0.01, 0.03, 0.1, 0.3, 1.0];
    let grid = GridSpec {
        eps_global: levels.clone(),
        eps_local: levels.clone(),
    };
    let opts = ExperimentOptions {
        sweep: SweepOptions::new(Metric::EqualizedOdds),
        seeds: (0..3).collect(),
        scores: ExperimentScores::Oracle,
        split: [0.6, 0.2, 0.2],
        dp: DpConfig::disabled(),
    };
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[1], 2000);
    let runs = synthetic_seed_runs(&spec, &opts, "acceptance/tradeoff")?;
    let result = sweep(&runs, &grid, &opts.sweep)?;
    let mut worst_drop = 0.0f64;
    let mut missing = 0;
    for s in 0..runs.len() {
        let value = |i: usize, j: usize| result.cells[i][j].seeds[s].lp_objective;
        for i in 0..levels.len() {
            for j in 0..levels.len() {
                let Some(here) = value(i, j) else {
                    missing += 1;
                    continue;
                };
                for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                    if ni < levels.len() && nj < levels.len() {
                        if let Some(next) = value(ni, nj) {
                            worst_drop = worst_drop.max(here - next);
                        }
                    }
                }
            }
        }
    }
    // The (1, 1) corner is the argmax predictor.
    let mut corner_gap = 0.0f64;
    for (s, run) in runs.iter().enumerate() {
        let lp_value = result.cells[4][4].seeds[s].lp_objective.unwrap_or(f64::NAN);
        corner_gap = corner_gap.max((lp_value - run.scored.params.base_accuracy()).abs());
    }
    let ok = worst_drop <= 1e-9 && missing == 0 && corner_gap <= 1e-9;
    Ok(verdict(
        ok,
        format!(
            "5x5 grid over {} seeds: largest decrease {worst_drop:.1e}, unsolved cells {missing}, corner vs argmax {corner_gap:.1e}; {:.1?}",
            runs.len(),
            start.elapsed()
        ),
    ))
}

/// Accuracy lost to tightening both tolerances grows with heterogeneity.
fn heterogeneity_trend() -> Result<Outcome> {
    let start = Instant::now();
    let scenarios: Vec<SyntheticSpec> = SCENARIO_PROPORTIONS
        .iter()
        .map(|p| SyntheticSpec::five_client_scenario(p, 2000))
        .collect();
    let opts = ExperimentOptions {
        sweep: SweepOptions::new(Metric::EqualizedOdds),
        seeds: (0..40).collect(),
        // Class mixes differ by client, so the trained score sees the client too.
        scores: ExperimentScores::FedAvg(FedAvgConfig {
            include_client: true,
            ..FedAvgConfig::default()
        }),
        split: [0.6, 0.2, 0.2],
        dp: DpConfig::disabled(),
    };
    let grid = GridSpec {
        eps_global: vec![0.05, 0.3],
        eps_local: vec![0.05, 0.3],
    };
    let (_, summary) =
        heterogeneity_experiment(&scenarios, &grid, &opts, (0.3, 0.3), (0.05, 0.05))?;
    let losses: Vec<f64> = summary
        .accuracy_loss
        .iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let ok = losses.windows(2).all(|w| w[0] <= w[1]);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{:.2}%", 100.0 * x))
            .collect::<Vec<_>>()
            .join(" / ")
    };
    let lp: Vec<f64> = summary
        .lp_accuracy_loss
        .iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    Ok(verdict(
        ok,
        format!(
            "measured loss {} (LP estimate {}) over 40 seeds; {:.1?}",
            fmt(&losses),
            fmt(&lp),
            start.elapsed()
        ),
    ))
}

/// Disparity after post-processing grows as the privacy budget shrinks.
fn dp_degradation() -> Result<Outcome> {
    let start = Instant::now();
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[1], 10_000);
    let grid = GridSpec {
        eps_global: vec![0.01],
        eps_local: vec![0.01],
    };
    let mut opts = ExperimentOptions {
        sweep: SweepOptions::new(Metric::EqualizedOdds),
        seeds: (0..50).collect(),
        scores: ExperimentScores::Oracle,
        split: [0.0, 0.1, 0.9],
        dp: DpConfig::disabled(),
    };
    let plain = sweep(
        &synthetic_seed_runs(&spec, &opts, "acceptance/dp")?,
        &grid,
        &opts.sweep,
    )?;
    let mut rows = Vec::new();
    let mut exact = false;
    for eps in [f64::INFINITY, 1.0, 0.1] {
        opts.dp = DpConfig::with_epsilon(eps);
        let result = sweep(
            &synthetic_seed_runs(&spec, &opts, "acceptance/dp")?,
            &grid,
            &opts.sweep,
        )?;
        if eps.is_infinite() {
            exact = serde_json::to_string(&result).ok() == serde_json::to_string(&plain).ok();
        }
        let c = &result.cells[0][0];
        rows.push((
            eps,
            c.mean_global_disparity.unwrap_or(f64::NAN),
            c.mean_local_disparity.unwrap_or(f64::NAN),
        ));
    }
    let ok = exact
        && rows
            .windows(2)
            .all(|w| w[0].1 <= w[1].1 && w[0].2 <= w[1].2);
    let detail: Vec<String> = rows
        .iter()
        .map(|(e, g, l)| format!("eps {e}: global {g:.4}, local {l:.4}"))
        .collect();
    Ok(verdict(
        ok,
        format!(
            "{}; inf matches no noise bit for bit: {exact}; 50 seeds; {:.1?}",
            detail.join(", "),
            start.elapsed()
        ),
    ))
}

/// Two-client statistical parity run on a prepared census extract.
fn adult_reproduction() -> Result<Outcome> {
    let Ok(path) = std::env::var("FEDFAIR_ADULT_CSV") else {
        return Ok(Outcome::Skip(
            "set FEDFAIR_ADULT_CSV to a prepared two-client CSV to run".into(),
        ));
    };
    let start = Instant::now();
    let data = ClientGroupDataset::load_csv(&path)?;
    let rng = RngStream::new(10, "acceptance/adult");
    let (train, val, test) = split_dataset(&data, [0.6, 0.2, 0.2], &rng.derive("split"))?;
    let fairness = FairnessSpec::uniform(Metric::StatisticalParity, 0.01, 0.01, data.num_clients());
    let scored = run_scoring(
        &train,
        &val,
        &ScoreSource::FedAvg(FedAvgConfig::default()),
        &DpConfig::disabled(),
        &rng,
    )?;
    let post = fedfair::protocol::run_postprocess(
        &scored,
        &fairness,
        &SolverConfig::default(),
        RegionForm::HalfSpace,
    )?;
    let report = evaluate(&post.predictor, &test, &rng.derive("eval"), 5)?;
    let ok = (report.accuracy - 0.81).abs() <= 0.02
        && report.local_disparity.mean <= 0.06
        && report.global_disparity.max <= 0.02;
    Ok(verdict(
        ok,
        format!(
            "accuracy {:.4}, mean local {:.4}, global {:.4}; {:.1?}",
            report.accuracy,
            report.local_disparity.mean,
            report.global_disparity.max,
            start.elapsed()
        ),
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("identity corner", identity_corner),
        ("LAE correctness", lae_correctness),
        ("closed-form fairness satisfaction", closed_form_fairness),
        ("oracle equivalence", oracle_equivalence),
        ("feasible-region propositions", feasible_region),
        (
            "synthetic disparity reduction",
            synthetic_disparity_reduction,
        ),
        ("tradeoff monotonicity", tradeoff_monotonicity),
        ("heterogeneity trend", heterogeneity_trend),
        ("DP degradation trend", dp_degradation),
        ("Adult-scale reproduction", adult_reproduction),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Ok(Outcome::Pass(d)) => format!("PASS {}", d),
            Ok(Outcome::Skip(d)) => format!("SKIP {}", d),
            Ok(Outcome::Fail(d)) => {
                failed += 1;
                format!("FAIL {}", d)
            }
            Err(e) => {
                failed += 1;
                format!("FAIL error: {e}")
            }
        };
        let (verdict, detail) = line.split_at(4);
        println!("criterion {:>2} {verdict} {name}:{detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
