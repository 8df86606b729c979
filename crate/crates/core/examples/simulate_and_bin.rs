//! Draw from the three preset scenarios and project onto dyadic grids.
//!
//! ```text
//! cargo run --example simulate_and_bin
//! ```

use histomix::{bin_sample, Partition, TrueModel};

fn main() -> histomix::Result<()> {
    for name in ["sim1", "sim2", "sim3"] {
        let model = TrueModel::preset(name)?;
        let sample = model.sample(200, 1);
        let per_label: Vec<usize> =
            (0..model.k()).map(|j| sample.labels.iter().filter(|&&l| l == j).count()).collect();
        println!("{name}: theta={:?} repeated={} drawn per component {:?}", model.theta, model.repeated, per_label);

        for p in [1, 3, 6] {
            let part = Partition::dyadic(p)?;
            let data = bin_sample(&sample.observations, &part)?;
            let masses = model.true_bin_masses(&part);
            println!(
                "  P={p}: {} bins, {} distinct cells, all bins distinct: {}, component 0 coordinate 0 mass sums to {:.6}",
                part.len(),
                data.counts().len(),
                data.all_bins_distinct(),
                masses[..part.len()].iter().sum::<f64>(),
            );
        }
    }

    // text round trip of a binned sample
    let data = bin_sample(&TrueModel::sim1().sample(5, 3).observations, &Partition::dyadic(2)?)?;
    let text = data.to_text();
    print!("{text}");
    assert_eq!(histomix::BinnedSample::from_text(&text)?.cells(), data.cells());
    Ok(())
}
