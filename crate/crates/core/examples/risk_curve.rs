//! Monte Carlo risk, squared bias and variance of the EM weights along the
//! dyadic grids.
//!
//! ```text
//! cargo run --release --example risk_curve -- 100 200
//! ```

use histomix::partition::max_p_for_n;
use histomix::risklab::{risk_curve, risk_curve_csv};
use histomix::{EmConfig, Metric, TrueModel};

fn main() -> histomix::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let reps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let model = TrueModel::sim1();
    let ps: Vec<u32> = (1..=max_p_for_n(n)).collect();
    let cfg = EmConfig { restarts: 5, ..Default::default() };
    let points = risk_curve(&model, n, model.k(), &ps, &cfg, reps, 2024, Metric::Free)?;

    for pt in &points {
        let e = &pt.estimate;
        println!(
            "P={:2}  sqrt risk {:.4} (se {:.4})  bias2 {:.2e}  var {:.2e}",
            pt.p,
            e.sqrt_risk(),
            e.se_sqrt(),
            e.bias2,
            e.variance
        );
    }
    let best = points.iter().min_by(|a, b| a.estimate.risk.total_cmp(&b.estimate.risk)).unwrap();
    println!("best grid P={} with sqrt risk {:.4}", best.p, best.estimate.sqrt_risk());
    print!("{}", risk_curve_csv(&points));
    Ok(())
}
