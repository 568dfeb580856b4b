//! Runs the four-step federated protocol end to end and audits the message
//! transcript for anything beyond the allowed statistics.

use fedfair::data::split_dataset;
use fedfair::lp::{RegionForm, SolverConfig};
use fedfair::protocol::{audit_transcript, run_protocol, ScoreSource};
use fedfair::score::{generate_synthetic, FedAvgConfig, SyntheticSpec, SCENARIO_PROPORTIONS};
use fedfair::stats::DpConfig;
use fedfair::{FairnessSpec, Metric, RngStream};

fn main() -> fedfair::Result<()> {
    let rng = RngStream::new(4, "example/protocol");
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[1], 1200);
    let (data, _) = generate_synthetic(&spec, &rng.derive("data"))?;
    let (train, val, _) = split_dataset(&data, [0.6, 0.2, 0.2], &rng.derive("split"))?;

    let run = run_protocol(
        &train,
        &val,
        &ScoreSource::FedAvg(FedAvgConfig {
            rounds: 10,
            ..FedAvgConfig::default()
        }),
        &FairnessSpec::uniform(Metric::EqualizedOdds, 0.05, 0.05, data.num_clients()),
        &DpConfig::with_epsilon(1.0),
        &SolverConfig::default(),
        RegionForm::HalfSpace,
        &rng,
    )?;
    for step in 1..=3 {
        println!(
            "step {step}: {} messages",
            run.transcript.step_messages(step).count()
        );
    }
    audit_transcript(&run.transcript, data.num_clients())?;
    println!(
        "audit passed; LP accuracy estimate {:.4}",
        run.post.solution.accuracy_estimate
    );
    let mut buf = Vec::new();
    run.transcript.write_ndjson(&mut buf)?;
    println!(
        "transcript is {} bytes of newline-delimited JSON",
        buf.len()
    );
    Ok(())
}
