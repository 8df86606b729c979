//! Fit the binned mixture by EM with restarts and compare with the truth.
//!
//! ```text
//! cargo run --release --example fit_em -- 500 3
//! ```

use histomix::em::em_from_init;
use histomix::{bin_sample, em_fit, tk_distance, EmConfig, Partition, TrueModel};

fn main() -> histomix::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let p: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let model = TrueModel::sim1();
    let part = Partition::dyadic(p)?;
    let data = bin_sample(&model.sample(n, 42).observations, &part)?;
    let cfg = EmConfig { seed: 7, ..Default::default() };

    let fit = em_fit(&data, model.k(), &cfg)?;
    println!("n={n} P={p} restarts={} converged={} iterations={}", cfg.restarts, fit.converged, fit.iterations);
    println!("theta_hat = {:?}", fit.params.theta());
    println!("theta*    = {:?}", model.sorted_theta());
    println!("T_k distance = {:.5}", tk_distance(fit.params.theta(), &model.theta)?);

    let spread = fit.restart_logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - fit.restart_logliks.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("log-likelihood {:.4}, spread across restarts {spread:.2e}", fit.loglik);

    // a single run from the true parameters never decreases the likelihood
    let run = em_from_init(&data, &model.true_params(&part)?, &cfg)?;
    let worst_step = run.trace.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    println!("run from truth: {} steps, smallest increment {worst_step:.3e}", run.trace.len() - 1);

    for line in fit.params.to_text().lines().take(8) {
        println!("{line}");
    }
    Ok(())
}
