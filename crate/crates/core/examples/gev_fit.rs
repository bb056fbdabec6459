// Fit a generalized extreme value law to delay samples and read off the
// percentiles used for actuation scheduling and the watchdog.

use predictive_display::delay_model::{fit_gev, GevParams, PercentileEstimate};
use predictive_display::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(GevParams, PercentileEstimate)> {
    let truth = GevParams::new(0.1, 0.095, 0.008)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<f64> = (0..500).map(|_| truth.sample(&mut rng)).collect();

    let fit = fit_gev(&samples)?;
    let est = PercentileEstimate::from_params(&fit.params, 0.0)?;
    println!("true   xi {:.3} mu {:.4} sigma {:.4}", truth.xi, truth.mu, truth.sigma);
    println!(
        "fitted xi {:.3} mu {:.4} sigma {:.4}",
        fit.params.xi, fit.params.mu, fit.params.sigma
    );
    println!(
        "p95 {:.1} ms (true {:.1} ms)",
        est.p95 * 1e3,
        truth.quantile(0.95)? * 1e3
    );
    println!(
        "p99.9 {:.1} ms (true {:.1} ms)",
        est.p999 * 1e3,
        truth.quantile(0.999)? * 1e3
    );
    Ok((fit.params, est))
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
