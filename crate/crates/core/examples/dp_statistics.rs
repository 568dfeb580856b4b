//! Shows how Laplace noise perturbs the uploaded statistics as the privacy
//! budget shrinks.

use std::sync::Arc;

use fedfair::score::{generate_synthetic, ArgmaxPredictor, SyntheticSpec, SCENARIO_PROPORTIONS};
use fedfair::stats::{apply_laplace, compute_client_stats, laplace_scale, DpConfig};
use fedfair::RngStream;

fn main() -> fedfair::Result<()> {
    let rng = RngStream::new(11, "example/dp");
    let spec = SyntheticSpec::five_client_scenario(&SCENARIO_PROPORTIONS[0], 1000);
    let (data, oracle) = generate_synthetic(&spec, &rng.derive("data"))?;
    let base = ArgmaxPredictor::new(Arc::new(oracle));
    let exact = compute_client_stats(&data.client_slice(0), &base)?;

    for eps in [f64::INFINITY, 10.0, 1.0, 0.1] {
        let noisy = apply_laplace(&exact, &DpConfig::with_epsilon(eps), &rng.derive("dp"))?;
        let drift = noisy
            .joint_tp
            .iter()
            .flatten()
            .zip(exact.joint_tp.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "epsilon {eps:>5}: scale {:.2e}, largest change in joint true positives {drift:.2e}",
            if eps.is_finite() {
                laplace_scale(exact.num_samples, eps)
            } else {
                0.0
            }
        );
    }
    Ok(())
}
