//! Exact Fisher and efficient information on dyadic grids, and their growth
//! under refinement.
//!
//! ```text
//! cargo run --release --example fisher_information
//! ```

use histomix::fisher::{fisher_information, invert_efficient, mean_score, refinement_monotonicity_check};
use histomix::{Partition, TrueModel};

fn main() -> histomix::Result<()> {
    let model = TrueModel::sim1();
    for p in 1..=4 {
        let params = model.true_params(&Partition::dyadic(p)?)?;
        let info = fisher_information(&params)?;
        let inv = invert_efficient(&info.j_tilde)?;
        println!(
            "P={p}: dim={} rank(J_ww)={} J~={:.5} J~^-1={:.5} |E S|={:.1e}",
            info.layout.dim(),
            info.omega_block_rank,
            info.j_tilde[(0, 0)],
            inv[(0, 0)],
            mean_score(&params)?.amax(),
        );
    }

    for name in ["sim1", "sim2", "sim3"] {
        let model = TrueModel::preset(name)?;
        for p in 1..4 {
            let r = refinement_monotonicity_check(&model, p, p + 1)?;
            println!(
                "{name} P={p}->{}: min eig(J~_fine - J~_coarse) = {:+.3e}  trace {:.4} -> {:.4}",
                p + 1,
                r.min_eigenvalue,
                r.trace_coarse,
                r.trace_fine
            );
        }
    }

    let params = model.true_params(&Partition::dyadic(1)?)?;
    print!("{}", fisher_information(&params)?.tilde_csv());
    Ok(())
}
