//! Installs mixing weights from an LP solution, draws randomized predictions,
//! and round-trips the predictor bundle through JSON.

use fedfair::fair::{solve_lae, FairPredictor};
use fedfair::lp::{build_lp, solve, RegionForm, SolverConfig};
use fedfair::oracle::{exact_metrics_of_predictor, DiscreteInstance};
use fedfair::score::ArgmaxPredictor;
use fedfair::{FairnessSpec, Metric, RngStream};

fn main() -> fedfair::Result<()> {
    let beta = solve_lae(&[0.8, 0.7, 0.6], &[0.5, 0.45, 0.4])?;
    println!("weights for a hand-picked target: {beta:.4?}");

    let mut rng = RngStream::new(9, "example/predictor");
    let inst = DiscreteInstance::random(5, 3, 1, false, &mut rng)?;
    let params = inst.exact_params()?;
    let spec = FairnessSpec::uniform(Metric::EqualizedOdds, 0.02, 0.02, 1);
    let lp = build_lp(&params, &spec, RegionForm::Barycentric)?;
    let sol = solve(&lp, &SolverConfig::default())?;
    let predictor =
        FairPredictor::from_solution(ArgmaxPredictor::new(inst.score_model()), &params, &lp, &sol)?;

    for a in 0..2 {
        println!(
            "group {a}: beta = {:.4?}",
            predictor.mix_weights(a, 0)?.beta
        );
    }
    let exact = exact_metrics_of_predictor(&inst, &predictor)?;
    println!(
        "exact accuracy {:.4}, worst disparity {:.2e}",
        exact.accuracy,
        exact.max_local(0)
    );

    let mut draws = rng.derive("draws");
    let outputs: Vec<usize> = (0..12)
        .map(|i| predictor.predict(&[(i % 5) as f64], i % 2, 0, &mut draws))
        .collect::<fedfair::Result<_>>()?;
    println!("sampled outputs {outputs:?}");

    let json = predictor.to_json()?;
    let back: fedfair::fair::PredictorBundle = serde_json::from_str(&json)?;
    println!("bundle round-trips: {}", &back == predictor.bundle());
    Ok(())
}
