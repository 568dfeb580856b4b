//! Builds the equalized-odds LP on exact statistics of a small discrete
//! instance, solves it, and prints the program and its duals.

use fedfair::lp::{build_lp, solve, to_lp_text, RegionForm, SolverConfig};
use fedfair::oracle::DiscreteInstance;
use fedfair::{FairnessSpec, Metric, RngStream};

fn main() -> fedfair::Result<()> {
    let mut rng = RngStream::new(5, "example/lp");
    let inst = DiscreteInstance::random(4, 2, 2, false, &mut rng)?;
    let params = inst.exact_params()?;
    let spec = FairnessSpec::uniform(Metric::EqualizedOdds, 0.05, 0.05, 2);

    let lp = build_lp(&params, &spec, RegionForm::HalfSpace)?;
    println!("{}", to_lp_text(&lp));
    let sol = solve(&lp, &SolverConfig::default())?;
    println!("status {:?} after {} pivots", sol.status, sol.iterations);
    println!(
        "accuracy {:.5} (argmax {:.5})",
        sol.accuracy_estimate,
        params.base_accuracy()
    );
    if let Some(duals) = &sol.duals {
        let active = duals.iter().filter(|d| d.abs() > 1e-9).count();
        println!(
            "{active} of {} constraints carry a nonzero multiplier",
            duals.len()
        );
    }
    Ok(())
}
