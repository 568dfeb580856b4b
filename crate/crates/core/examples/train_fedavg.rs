//! Trains a softmax score model with federated averaging on synthetic data
//! and prints the loss curve.

use fedfair::data::split_dataset;
use fedfair::score::{
    generate_synthetic, train_fedavg_softmax, FedAvgConfig, SyntheticSpec, SCENARIO_PROPORTIONS,
};
use fedfair::RngStream;

fn main() -> fedfair::Result<()> {
    let rng = RngStream::new(7, "example/train");
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[1], 1500);
    let (data, _) = generate_synthetic(&spec, &rng.derive("data"))?;
    let (train, _, _) = split_dataset(&data, [0.6, 0.2, 0.2], &rng.derive("split"))?;

    let cfg = FedAvgConfig {
        rounds: 20,
        ..FedAvgConfig::default()
    };
    let (model, log) = train_fedavg_softmax(&train, &cfg, &rng.derive("fedavg"))?;
    for round in log.iter().step_by(5).chain(log.last()) {
        println!("round {:>3}  loss {:.4}", round.round, round.loss);
    }
    println!(
        "checkpoint is {} bytes of JSON",
        model.to_checkpoint_string()?.len()
    );
    Ok(())
}
