//! Computes the per-client statistics a client uploads and the aggregated
//! parameters the server derives from them.

use std::sync::Arc;

use fedfair::lp::aggregate;
use fedfair::score::{generate_synthetic, ArgmaxPredictor, SyntheticSpec, SCENARIO_PROPORTIONS};
use fedfair::stats::compute_client_stats;
use fedfair::RngStream;

fn main() -> fedfair::Result<()> {
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[2], 2000);
    let (data, oracle) = generate_synthetic(&spec, &RngStream::new(3, "example/stats"))?;
    let base = ArgmaxPredictor::new(Arc::new(oracle));

    let stats = (0..data.num_clients())
        .map(|c| compute_client_stats(&data.client_slice(c), &base))
        .collect::<fedfair::Result<Vec<_>>>()?;
    for s in &stats {
        println!(
            "client {}: n = {}, Pr(A=1) = {:.3}",
            s.client + 1,
            s.num_samples,
            s.group_mass[1]
        );
    }

    let params = aggregate(&stats)?;
    println!("argmax accuracy {:.4}", params.base_accuracy());
    for c in 0..params.num_clients {
        let tp = |a| {
            params
                .tp1_block(a, c)
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("client {} tp1  a=0: {}  a=1: {}", c + 1, tp(0), tp(1));
    }
    Ok(())
}
