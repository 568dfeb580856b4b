//! Runs the exhaustive region, frontier and LP checks on small discrete
//! instances.

use fedfair::oracle::{run_suite, Suite};

fn main() -> fedfair::Result<()> {
    for suite in [Suite::Region, Suite::Frontier, Suite::Lp] {
        for line in run_suite(suite, 1)? {
            println!(
                "{} {}: {}",
                if line.pass { "ok  " } else { "FAIL" },
                line.name,
                line.detail
            );
        }
    }
    Ok(())
}
