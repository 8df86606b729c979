#![allow(dead_code)]

use histomix::fisher::Layout;
use histomix::rng::StreamRng;
use histomix::{BinnedSample, Cell, MixtureParams, Partition};
use rand::Rng;

fn simplex(rng: &mut StreamRng, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|x| x / s).collect();
    // absorb rounding in the last entry so rows sum to one exactly enough
    let head: f64 = out[..len - 1].iter().sum();
    out[len - 1] = 1.0 - head;
    out
}

/// Interior parameters with every weight and bin mass bounded away from zero.
pub fn random_params(rng: &mut StreamRng, k: usize, m: usize, repeated: bool) -> MixtureParams {
    let part = Partition::uniform(m).unwrap();
    let theta = simplex(rng, k, 0.2);
    if repeated {
        let rows = (0..k).map(|_| simplex(rng, m, 0.1)).collect();
        MixtureParams::new_repeated(theta, rows, part).unwrap()
    } else {
        let omega = (0..3 * k).flat_map(|_| simplex(rng, m, 0.1)).collect();
        MixtureParams::new(theta, omega, part, false).unwrap()
    }
}

pub fn random_sample(rng: &mut StreamRng, n: usize, m: usize) -> BinnedSample {
    let cells: Vec<Cell> = (0..n)
        .map(|_| [rng.random_range(0..m as u32), rng.random_range(0..m as u32), rng.random_range(0..m as u32)])
        .collect();
    BinnedSample::from_cells(Partition::uniform(m).unwrap(), cells).unwrap()
}

/// Moves free coordinate `idx` by `h`, compensating on the last weight or the
/// last bin of the same row (all three rows when repeated).
pub fn perturb(params: &MixtureParams, idx: usize, h: f64) -> MixtureParams {
    let lay = Layout::of(params);
    let (k, m) = (lay.k, lay.m);
    let mut theta = params.theta().to_vec();
    let mut omega = params.omega_flat().to_vec();
    if idx < lay.n_theta() {
        theta[idx] += h;
        theta[k - 1] -= h;
    } else {
        let rest = idx - lay.n_theta();
        let bin = rest % (m - 1);
        let row = rest / (m - 1);
        let (j, g) = (row / lay.groups, row % lay.groups);
        let coords: Vec<usize> = if lay.groups == 1 { vec![0, 1, 2] } else { vec![g] };
        for c in coords {
            let base = (j * 3 + c) * m;
            omega[base + bin] += h;
            omega[base + m - 1] -= h;
        }
    }
    MixtureParams::new(theta, omega, params.partition().clone(), params.is_repeated()).unwrap()
}
