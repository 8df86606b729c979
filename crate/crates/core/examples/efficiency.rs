//! Empirical covariance of the rescaled weight error against the inverse
//! efficient information.
//!
//! ```text
//! cargo run --release --example efficiency -- 300
//! ```

use histomix::risklab::efficiency_experiment;
use histomix::{EmConfig, TrueModel};

fn main() -> histomix::Result<()> {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let model = TrueModel::sim1();
    let cfg = EmConfig { restarts: 5, ..Default::default() };
    let report = efficiency_experiment(&model, 3, &[200, 1000, 5000], model.k(), &cfg, reps, 8)?;
    println!("P={} predicted J~^-1 = {:?}", report.p, report.predicted);
    for row in &report.rows {
        println!(
            "n={:5} reps={} failures={} empirical={:?} relative gap {:.3}",
            row.n, row.reps, row.failures, row.empirical, row.discrepancy
        );
    }
    Ok(())
}
