//! Refining the grid with the sample fixed: once every coordinate value sits
//! alone in its bin, the EM weights collapse onto the balanced split `q/n`,
//! `(q+1)/n` regardless of the data.
//!
//! ```text
//! cargo run --release --example limiting_mle
//! ```

use histomix::{bin_sample, em_fit, limiting_mle, saturated_maximizer, tk_distance, EmConfig, Partition, TrueModel};

fn main() -> histomix::Result<()> {
    let model = TrueModel::sim1();
    for &n in &[5usize, 7, 12] {
        let obs = model.sample(n, 2024 + n as u64).observations;
        // smallest dyadic grid that separates all 3n values
        let mut p = 1;
        let data = loop {
            let data = bin_sample(&obs, &Partition::dyadic(p)?)?;
            if data.all_bins_distinct() {
                break data;
            }
            p += 1;
        };
        for k in [2usize, 3] {
            for repeated in [true, false] {
                let cfg = EmConfig { restarts: 50, max_iters: 5000, rel_tol: 1e-12, seed: 9, repeated, ..Default::default() };
                let fit = em_fit(&data, k, &cfg)?;
                let limit = limiting_mle(n, k)?;
                let sat = saturated_maximizer(&data, k, repeated)?;
                println!(
                    "n={n:2} k={k} P={p:2} repeated={repeated:5}  theta_hat={:?}  limit={:?}  tk={:.2e}  ll_em={:.6}  ll_sat={:.6}",
                    fit.params.theta().iter().map(|t| (t * 1e4).round() / 1e4).collect::<Vec<_>>(),
                    limit,
                    tk_distance(fit.params.theta(), &limit)?,
                    fit.loglik,
                    sat.log_likelihood(&data)?,
                );
            }
        }
    }
    Ok(())
}
