//! Choose the grid by block cross-validation under each of the six schemes.
//!
//! ```text
//! cargo run --release --example select_partition -- 200
//! ```

use histomix::modelsel::{default_reference, dyadic_candidates, make_blocks, naive_criterion, select_partition, EmEstimator, SchemeKind};
use histomix::partition::max_p_for_n;
use histomix::{EmConfig, Metric, TrueModel};

fn main() -> histomix::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let model = TrueModel::sim1();
    let obs = model.sample(n, 3).observations;
    let k = model.k();
    let candidates = dyadic_candidates(max_p_for_n(n))?;
    let reference = default_reference(k)?;
    let est = EmEstimator { cfg: EmConfig { restarts: 5, seed: 1, ..Default::default() } };

    for kind in SchemeKind::ALL {
        let scheme = make_blocks(n, kind, 17)?;
        let report = select_partition(&obs, &candidates, Some(&reference), &scheme, &est, k, Metric::Free)?;
        let crit: Vec<String> = report.candidates.iter().map(|c| c.criterion.map_or("failed".into(), |v| format!("{v:.2e}"))).collect();
        println!(
            "{kind}: a_n={} b_n={} chosen P={}  C_CV by P: [{}]",
            scheme.a_n,
            scheme.b_n,
            report.chosen_p.unwrap_or(0),
            crit.join(", ")
        );
    }

    // the same-partition criterion degenerates on fine grids
    let scheme = make_blocks(n, SchemeKind::D1, 17)?;
    for part in &candidates {
        let c = naive_criterion(&obs, part, &scheme, &est, k, Metric::Free)?;
        println!("C_CV1 on {} bins: {c:.3e}", part.len());
    }
    Ok(())
}
