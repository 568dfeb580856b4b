//! Accuracy lost to tight fairness under three levels of cross-client
//! heterogeneity in the protected group's share.

use fedfair::eval::{
    heterogeneity_experiment, ExperimentOptions, ExperimentScores, GridSpec, SweepOptions,
};
use fedfair::score::{FedAvgConfig, SyntheticSpec, SCENARIO_PROPORTIONS};
use fedfair::stats::DpConfig;
use fedfair::Metric;

fn main() -> fedfair::Result<()> {
    let scenarios: Vec<SyntheticSpec> = SCENARIO_PROPORTIONS
        .iter()
        .map(|p| SyntheticSpec::five_client_scenario(p, 2000))
        .collect();
    let opts = ExperimentOptions {
        sweep: SweepOptions::new(Metric::EqualizedOdds),
        seeds: (0..40).collect(),
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
    for (i, (p, loss)) in SCENARIO_PROPORTIONS
        .iter()
        .zip(&summary.accuracy_loss)
        .enumerate()
    {
        println!(
            "scenario {} {:?}: accuracy loss {:.2}%",
            i + 1,
            p,
            100.0 * loss.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
