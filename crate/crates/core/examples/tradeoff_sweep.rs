//! Sweeps global and local tolerances and prints the accuracy matrix.

use fedfair::eval::{
    sweep, synthetic_seed_runs, ExperimentOptions, ExperimentScores, GridSpec, SweepOptions,
};
use fedfair::score::{SyntheticSpec, SCENARIO_PROPORTIONS};
use fedfair::stats::DpConfig;
use fedfair::Metric;

fn main() -> fedfair::Result<()> {
    let opts = ExperimentOptions {
        sweep: SweepOptions::new(Metric::EqualizedOdds),
        seeds: vec![0, 1, 2],
        scores: ExperimentScores::Oracle,
        split: [0.6, 0.2, 0.2],
        dp: DpConfig::disabled(),
    };
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[1], 2000);
    let runs = synthetic_seed_runs(&spec, &opts, "example/sweep")?;
    let grid = GridSpec::parse("0.01,0.05,0.2,1:0.01,0.05,0.2,1")?;
    let result = sweep(&runs, &grid, &opts.sweep)?;
    let mut out = Vec::new();
    result.write_matrix_csv(&mut out, |c| c.mean_lp_objective)?;
    print!(
        "LP accuracy (rows: global tolerance, columns: local)\n{}",
        String::from_utf8_lossy(&out)
    );
    Ok(())
}
