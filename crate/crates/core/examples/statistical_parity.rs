//! Statistical parity post-processing through the full protocol, with the
//! resulting per-cell randomization tables.

use std::sync::Arc;

use fedfair::data::split_dataset;
use fedfair::eval::{evaluate, evaluate_base};
use fedfair::lp::{RegionForm, SolverConfig};
use fedfair::protocol::{run_protocol, ScoreSource};
use fedfair::score::{generate_synthetic, SharedModel, SyntheticSpec, SCENARIO_PROPORTIONS};
use fedfair::stats::DpConfig;
use fedfair::{FairnessSpec, Metric, RngStream};

fn main() -> fedfair::Result<()> {
    let rng = RngStream::new(21, "example/sp");
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[2], 3000);
    let (data, oracle) = generate_synthetic(&spec, &rng.derive("data"))?;
    let model: SharedModel = Arc::new(oracle);
    let (train, val, test) = split_dataset(&data, [0.0, 0.5, 0.5], &rng.derive("split"))?;

    let fairness = FairnessSpec::uniform(Metric::StatisticalParity, 0.02, 0.02, data.num_clients());
    let run = run_protocol(
        &train,
        &val,
        &ScoreSource::Pretrained(model.clone()),
        &fairness,
        &DpConfig::disabled(),
        &SolverConfig::default(),
        RegionForm::HalfSpace,
        &rng,
    )?;
    let table = run.post.predictor.parity_table(1, 0)?;
    println!("client 1, group 1: rows are base predictions, columns outputs");
    for row in &table.table {
        println!("  {row:.3?}");
    }
    let before = evaluate_base(&model, &test, Metric::StatisticalParity)?;
    let after = evaluate(&run.post.predictor, &test, &rng.derive("eval"), 5)?;
    println!(
        "global SP {:.3} -> {:.3}, mean local SP {:.3} -> {:.3}, accuracy {:.3} -> {:.3}",
        before.global_disparity.max,
        after.global_disparity.max,
        before.local_disparity.mean,
        after.local_disparity.mean,
        before.accuracy,
        after.accuracy
    );
    Ok(())
}
