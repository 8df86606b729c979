//! Risk of the selected estimator under every scheme, next to the best and
//! the reference grid.
//!
//! ```text
//! cargo run --release --example table2 -- 100 50
//! ```

use histomix::modelsel::SchemeKind;
use histomix::partition::max_p_for_n;
use histomix::risklab::{comparison_csv, criterion_comparison};
use histomix::{EmConfig, Metric, TrueModel};

fn main() -> histomix::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let reps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);

    let mut tables = Vec::new();
    for name in ["sim1", "sim2"] {
        let model = TrueModel::preset(name)?;
        let cfg = EmConfig { restarts: 5, ..Default::default() };
        let c = criterion_comparison(&model, name, n, model.k(), &SchemeKind::ALL, max_p_for_n(n), &cfg, reps, 99, Metric::Free)?;
        println!("{name}, n={n}, {reps} replications");
        for row in &c.rows {
            println!("  {:<10} {:.4} ± {:.4}   mean P {:.2}", row.label, row.sqrt_risk, row.se_sqrt_risk, row.mean_p);
        }
        tables.push(c);
    }
    print!("{}", comparison_csv(&tables));
    Ok(())
}
