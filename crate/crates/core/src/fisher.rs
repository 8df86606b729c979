//! Exact Fisher information of the binned model by enumeration of the `M^3`
//! cells.
//!
//! Free coordinates are `theta_0..theta_{k-2}` (the last weight is implied)
//! followed by `omega[j,g,0..M-2]` for every component `j` and coordinate
//! group `g` (the last bin is implied). There are three groups in the general
//! setting and one in the repeated setting, where the mass is shared by the
//! three coordinates and its score is the sum of the per-coordinate scores.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Cell, MixtureParams};
use crate::partition::Partition;
use crate::scenario::TrueModel;

/// Largest cell count enumerated exactly.
pub const MAX_CELLS: usize = 10_000_000;

/// Relative eigenvalue cut-off of the nuisance-block pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-10;

/// Condition number above which the efficient information counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Index layout of the free parameters.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub k: usize,
    pub m: usize,
    pub groups: usize,
}

impl Layout {
    pub fn of(params: &MixtureParams) -> Self {
        Self {
            k: params.k(),
            m: params.bins(),
            groups: if params.is_repeated() { 1 } else { 3 },
        }
    }

    pub fn n_theta(&self) -> usize {
        self.k - 1
    }

    pub fn dim(&self) -> usize {
        self.n_theta() + self.k * self.groups * (self.m - 1)
    }

    pub fn omega_index(&self, j: usize, g: usize, m: usize) -> usize {
        self.n_theta() + (j * self.groups + g) * (self.m - 1) + m
    }

    /// Human-readable coordinate names, zero-based.
    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.n_theta()).map(|j| format!("theta_{j}")).collect();
        for j in 0..self.k {
            for g in 0..self.groups {
                for m in 0..self.m - 1 {
                    out.push(if self.groups == 1 {
                        format!("omega_{j}_{m}")
                    } else {
                        format!("omega_{j}_{g}_{m}")
                    });
                }
            }
        }
        out
    }
}

/// Full information, its blocks and the efficient information for the weights.
#[derive(Clone, Debug)]
pub struct InfoMatrices {
    pub layout: Layout,
    /// Full information over all free coordinates.
    pub j_full: DMatrix<f64>,
    /// Efficient information `J_tt - J_tw J_ww^+ J_wt`.
    pub j_tilde: DMatrix<f64>,
    pub omega_block_rank: usize,
    /// `J_tw J_ww^+`, the coefficients of the nuisance projection.
    pub projection: DMatrix<f64>,
}

impl InfoMatrices {
    pub fn n_theta(&self) -> usize {
        self.layout.n_theta()
    }

    pub fn j_theta_theta(&self) -> DMatrix<f64> {
        let t = self.n_theta();
        self.j_full.view((0, 0), (t, t)).into_owned()
    }

    pub fn j_theta_omega(&self) -> DMatrix<f64> {
        let t = self.n_theta();
        let d = self.j_full.nrows() - t;
        self.j_full.view((0, t), (t, d)).into_owned()
    }

    pub fn j_omega_omega(&self) -> DMatrix<f64> {
        let t = self.n_theta();
        let d = self.j_full.nrows() - t;
        self.j_full.view((t, t), (d, d)).into_owned()
    }

    /// Efficient score at a cell: the weight score minus its projection on the
    /// nuisance scores.
    pub fn efficient_score(&self, params: &MixtureParams, cell: &Cell) -> Result<DVector<f64>> {
        let s = score_at_cell(params, cell)?;
        let t = self.n_theta();
        let st = s.rows(0, t).into_owned();
        let sw = s.rows(t, s.len() - t).into_owned();
        Ok(st - &self.projection * sw)
    }

    /// CSV dump of the full information, header row naming coordinates.
    pub fn full_csv(&self) -> String {
        matrix_csv(&self.layout.names(), &self.j_full)
    }

    pub fn tilde_csv(&self) -> String {
        matrix_csv(&self.layout.names()[..self.n_theta()], &self.j_tilde)
    }
}

fn matrix_csv(names: &[String], mat: &DMatrix<f64>) -> String {
    let mut s = String::from("coordinate");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (i, n) in names.iter().enumerate() {
        s.push_str(n);
        for jj in 0..mat.ncols() {
            let _ = write!(s, ",{}", crate::io::fmt_f64(mat[(i, jj)]));
        }
        s.push('\n');
    }
    s
}

/// Writes the gradient of `p(cell)` into `out`, divided by `p(cell)` when it is
/// positive, and returns the cell probability.
fn fill_score(params: &MixtureParams, lay: &Layout, cell: &Cell, out: &mut [f64]) -> f64 {
    out.iter_mut().for_each(|x| *x = 0.0);
    let k = lay.k;
    let last = lay.m - 1;
    let theta = params.theta();
    let w = |j: usize, c: usize| params.omega(j, c, cell[c] as usize);
    let prods: Vec<f64> = (0..k).map(|j| w(j, 0) * w(j, 1) * w(j, 2)).collect();
    let p: f64 = (0..k).map(|j| theta[j] * prods[j]).sum();
    let scale = if p > 0.0 { 1.0 / p } else { 1.0 };
    for j in 0..lay.n_theta() {
        out[j] = (prods[j] - prods[k - 1]) * scale;
    }
    for j in 0..k {
        for (c, &mc) in cell.iter().enumerate() {
            let g = if lay.groups == 1 { 0 } else { c };
            let others = match c {
                0 => w(j, 1) * w(j, 2),
                1 => w(j, 0) * w(j, 2),
                _ => w(j, 0) * w(j, 1),
            };
            let v = theta[j] * others * scale;
            if v == 0.0 {
                continue;
            }
            let mc = mc as usize;
            if mc == last {
                for m in 0..last {
                    out[lay.omega_index(j, g, m)] -= v;
                }
            } else {
                out[lay.omega_index(j, g, mc)] += v;
            }
        }
    }
    p
}

/// Gradient of `ln p(cell)` in the free coordinates.
pub fn score_at_cell(params: &MixtureParams, cell: &Cell) -> Result<DVector<f64>> {
    let lay = Layout::of(params);
    let mut out = vec![0.0; lay.dim()];
    let p = fill_score(params, &lay, cell, &mut out);
    if !(p > 0.0) {
        return Err(Error::Domain(format!("cell {cell:?} has zero probability")));
    }
    Ok(DVector::from_vec(out))
}

/// Cells with their enumeration multiplicity. In the repeated setting the
/// probability and score are symmetric in the coordinates, so sorted triples
/// weighted by their number of orderings suffice.
fn enumerate_cells(m: usize, repeated: bool) -> Vec<(Cell, f64)> {
    let mut out = Vec::new();
    let m = m as u32;
    if repeated {
        for a in 0..m {
            for b in a..m {
                for c in b..m {
                    let mult = if a == b && b == c {
                        1.0
                    } else if a == b || b == c {
                        3.0
                    } else {
                        6.0
                    };
                    out.push(([a, b, c], mult));
                }
            }
        }
    } else {
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    out.push(([a, b, c], 1.0));
                }
            }
        }
    }
    out
}

fn check_size(m: usize) -> Result<()> {
    let cells = (m as u128).pow(3);
    if cells > MAX_CELLS as u128 {
        return Err(Error::SizeLimit(format!(
            "{m} bins give {cells} cells, more than the {MAX_CELLS} enumerated exactly"
        )));
    }
    Ok(())
}

/// Calls `f(weight, score, nonzero indices)` on every cell of positive
/// probability. Returns, per free coordinate, whether moving it puts mass on
/// a cell of zero probability.
fn expectation<F>(params: &MixtureParams, mut f: F) -> Result<Vec<bool>>
where
    F: FnMut(f64, &[f64], &[usize]),
{
    let lay = Layout::of(params);
    check_size(lay.m)?;
    let mut s = vec![0.0; lay.dim()];
    let mut nz = Vec::with_capacity(lay.dim());
    let mut moves_support = vec![false; lay.dim()];
    for (cell, mult) in enumerate_cells(lay.m, params.is_repeated()) {
        let p = fill_score(params, &lay, &cell, &mut s);
        if !(p > 0.0) {
            for (flag, v) in moves_support.iter_mut().zip(&s) {
                *flag |= *v != 0.0;
            }
            continue;
        }
        nz.clear();
        nz.extend(s.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i));
        f(mult * p, &s, &nz);
    }
    Ok(moves_support)
}

/// `sum_cells p(cell) S(cell)`, zero up to rounding.
pub fn mean_score(params: &MixtureParams) -> Result<DVector<f64>> {
    let d = Layout::of(params).dim();
    let mut acc = vec![0.0; d];
    expectation(params, |w, s, nz| {
        for &i in nz {
            acc[i] += w * s[i];
        }
    })?;
    Ok(DVector::from_vec(acc))
}

/// Symmetric pseudo-inverse after diagonal equilibration. Returns the
/// inverse and the numerical rank.
pub fn equilibrated_pinv(b: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let d = b.nrows();
    if d == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let scale: Vec<f64> = (0..d)
        .map(|i| if b[(i, i)] > 0.0 { 1.0 / b[(i, i)].sqrt() } else { 0.0 })
        .collect();
    let mut eq = b.clone();
    for i in 0..d {
        for j in 0..d {
            eq[(i, j)] *= scale[i] * scale[j];
        }
    }
    let eig = SymmetricEigen::new(eq);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = PINV_RTOL * lmax;
    let mut inv = DMatrix::zeros(d, d);
    let mut rank = 0;
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cut && l > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(idx);
            inv += (v * v.transpose()) / l;
        }
    }
    for i in 0..d {
        for j in 0..d {
            inv[(i, j)] *= scale[i] * scale[j];
        }
    }
    (inv, rank)
}

/// Exact full and efficient information at `params`.
///
/// Mass coordinates whose perturbation would put probability on a cell of
/// zero probability are held fixed in the projection: the likelihood detects
/// such moves at a faster than root-n rate. Away from the boundary of the
/// simplex no coordinate is affected.
pub fn fisher_information(params: &MixtureParams) -> Result<InfoMatrices> {
    let layout = Layout::of(params);
    let d = layout.dim();
    let mut acc = vec![0.0; d * d];
    let moves_support = expectation(params, |w, s, nz| {
        for &a in nz {
            let wa = w * s[a];
            let row = &mut acc[a * d..(a + 1) * d];
            for &b in nz {
                if b >= a {
                    row[b] += wa * s[b];
                }
            }
        }
    })?;
    let mut j_full = DMatrix::from_row_slice(d, d, &acc);
    for a in 0..d {
        for b in 0..a {
            j_full[(a, b)] = j_full[(b, a)];
        }
    }
    let t = layout.n_theta();
    let free: Vec<usize> = (t..d).filter(|&i| !moves_support[i]).collect();
    let jtt = j_full.view((0, 0), (t, t)).into_owned();
    let jtw = j_full.view((0, 0), (t, d)).into_owned().select_columns(free.iter());
    let jww = j_full.select_rows(free.iter()).select_columns(free.iter());
    let (pinv, omega_block_rank) = equilibrated_pinv(&jww);
    let reduced = &jtw * pinv;
    let mut j_tilde = jtt - &reduced * jtw.transpose();
    j_tilde = (&j_tilde + j_tilde.transpose()) * 0.5;
    let mut projection = DMatrix::zeros(t, d - t);
    for (col, &i) in free.iter().enumerate() {
        projection.set_column(i - t, &reduced.column(col));
    }
    Ok(InfoMatrices { layout, j_full, j_tilde, omega_block_rank, projection })
}

/// Outcome of comparing efficient information across a refinement.
#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    pub p_coarse: u32,
    pub p_fine: u32,
    pub min_eigenvalue: f64,
    pub trace_coarse: f64,
    pub trace_fine: f64,
    pub pass: bool,
}

/// Tolerance on the smallest eigenvalue of `J~_fine - J~_coarse`.
pub const MONOTONICITY_TOL: f64 = 1e-8;

/// Efficient information at the true bin masses of a dyadic partition.
pub fn true_efficient_information(model: &TrueModel, p: u32) -> Result<DMatrix<f64>> {
    let part = Partition::dyadic(p)?;
    check_size(part.len())?;
    Ok(fisher_information(&model.true_params(&part)?)?.j_tilde)
}

/// Compares efficient information at the true masses on two dyadic grids.
pub fn refinement_monotonicity_check(model: &TrueModel, p_coarse: u32, p_fine: u32) -> Result<MonotonicityReport> {
    if p_coarse > p_fine {
        return Err(Error::Usage(format!("coarse exponent {p_coarse} exceeds fine exponent {p_fine}")));
    }
    let coarse = true_efficient_information(model, p_coarse)?;
    let fine = true_efficient_information(model, p_fine)?;
    let diff = &fine - &coarse;
    let min_eigenvalue = if diff.nrows() == 0 {
        0.0
    } else {
        SymmetricEigen::new(diff).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    Ok(MonotonicityReport {
        p_coarse,
        p_fine,
        min_eigenvalue,
        trace_coarse: coarse.trace(),
        trace_fine: fine.trace(),
        pass: min_eigenvalue >= -MONOTONICITY_TOL,
    })
}

/// Inverts an efficient information matrix, rejecting singular or badly
/// conditioned ones.
pub fn invert_efficient(j_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(j_tilde.clone());
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lmin > 0.0) || lmax / lmin > MAX_CONDITION {
        return Err(Error::Singular(format!(
            "efficient information has eigenvalues in [{lmin:e}, {lmax:e}]"
        )));
    }
    let mut inv = DMatrix::zeros(j_tilde.nrows(), j_tilde.ncols());
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        inv += (v * v.transpose()) / l;
    }
    Ok(inv)
}

/// Predicted asymptotic covariance of the weight estimate on a dyadic grid.
pub fn efficient_variance_prediction(model: &TrueModel, p: u32) -> Result<DMatrix<f64>> {
    invert_efficient(&true_efficient_information(model, p)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::EmissionDistribution as E;
    use crate::rng::substream;

    fn random_params(k: usize, m: usize, repeated: bool, seed: u64) -> MixtureParams {
        use rand::Rng;
        let mut rng = substream(seed, 99);
        let mut theta: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
        let s: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|t| *t /= s);
        let part = Partition::uniform(m).unwrap();
        if repeated {
            let rows = (0..k)
                .map(|_| {
                    let mut r: Vec<f64> = (0..m).map(|_| 0.1 + rng.random::<f64>()).collect();
                    let s: f64 = r.iter().sum();
                    r.iter_mut().for_each(|x| *x /= s);
                    r
                })
                .collect();
            MixtureParams::new_repeated(theta, rows, part).unwrap()
        } else {
            let mut omega = Vec::new();
            for _ in 0..k * 3 {
                let mut r: Vec<f64> = (0..m).map(|_| 0.1 + rng.random::<f64>()).collect();
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|x| *x /= s);
                omega.extend(r);
            }
            MixtureParams::new(theta, omega, part, false).unwrap()
        }
    }

    /// Rebuilds parameters from a free-coordinate vector.
    fn from_free(base: &MixtureParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lay = Layout::of(base);
        let k = lay.k;
        let mut theta: Vec<f64> = x[..k - 1].to_vec();
        theta.push(1.0 - theta.iter().sum::<f64>());
        let m = lay.m;
        let mut omega = vec![0.0; k * 3 * m];
        for j in 0..k {
            for c in 0..3 {
                let g = if lay.groups == 1 { 0 } else { c };
                let mut s = 0.0;
                for mm in 0..m - 1 {
                    let v = x[lay.omega_index(j, g, mm)];
                    omega[(j * 3 + c) * m + mm] = v;
                    s += v;
                }
                omega[(j * 3 + c) * m + m - 1] = 1.0 - s;
            }
        }
        (theta, omega)
    }

    fn to_free(p: &MixtureParams) -> Vec<f64> {
        let lay = Layout::of(p);
        let mut x = vec![0.0; lay.dim()];
        x[..lay.k - 1].copy_from_slice(&p.theta()[..lay.k - 1]);
        for j in 0..lay.k {
            for g in 0..lay.groups {
                for m in 0..lay.m - 1 {
                    x[lay.omega_index(j, g, m)] = p.omega(j, g, m);
                }
            }
        }
        x
    }

    /// Cell log-probability from free coordinates, evaluated directly.
    fn log_p(base: &MixtureParams, x: &[f64], cell: &Cell) -> f64 {
        let (theta, omega) = from_free(base, x);
        let m = base.bins();
        let p: f64 = (0..theta.len())
            .map(|j| theta[j] * (0..3).map(|c| omega[(j * 3 + c) * m + cell[c] as usize]).product::<f64>())
            .sum();
        p.ln()
    }

    #[test]
    fn mean_zero_score() {
        for (repeated, seed) in [(false, 1), (true, 2), (false, 3)] {
            let p = random_params(3, 3, repeated, seed);
            let mean = mean_score(&p).unwrap();
            assert!(mean.amax() < 1e-10, "{mean}");
        }
    }

    #[test]
    fn scores_match_finite_differences() {
        for repeated in [false, true] {
            let p = random_params(2, 3, repeated, 5);
            let x = to_free(&p);
            let h = 1e-6;
            for cell in [[0, 1, 2], [2, 2, 0], [1, 1, 1]] {
                let s = score_at_cell(&p, &cell).unwrap();
                for i in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (log_p(&p, &xp, &cell) - log_p(&p, &xm, &cell)) / (2.0 * h);
                    assert!((fd - s[i]).abs() <= 1e-5 * s[i].abs().max(1.0), "i={i} fd={fd} s={}", s[i]);
                }
            }
        }
    }

    #[test]
    fn information_identity() {
        let p = random_params(2, 2, false, 8);
        let x = to_free(&p);
        let d = x.len();
        let info = fisher_information(&p).unwrap();
        let h = 1e-4;
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for cell in enumerate_cells(2, false).into_iter().map(|(c, _)| c) {
            let pc = p.cell_probability(&cell);
            for a in 0..d {
                for b in 0..d {
                    let f = |da: f64, db: f64| {
                        let mut y = x.clone();
                        y[a] += da;
                        y[b] += db;
                        log_p(&p, &y, &cell)
                    };
                    let second = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
                    hess[(a, b)] -= pc * second;
                }
            }
        }
        let rel = (&hess - &info.j_full).norm() / info.j_full.norm();
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn separated_components_example() {
        let part = Partition::uniform(2).unwrap();
        let p = MixtureParams::new_repeated(vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]], part).unwrap();
        let info = fisher_information(&p).unwrap();
        assert_eq!(info.j_tilde.shape(), (1, 1));
        assert!(info.j_tilde[(0, 0)] > 0.0);
        // fully separated components: the weight behaves like a Bernoulli mean
        assert!((info.j_tilde[(0, 0)] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn schur_complement_is_dominated() {
        let p = random_params(3, 3, false, 11);
        let info = fisher_information(&p).unwrap();
        let diff = info.j_theta_theta() - &info.j_tilde;
        let lmin = SymmetricEigen::new(diff).eigenvalues.min();
        assert!(lmin >= -1e-10);
        let eig = SymmetricEigen::new(info.j_full.clone()).eigenvalues;
        assert!(eig.min() >= -1e-9 * info.j_full.norm());
    }

    #[test]
    fn identical_components_are_singular() {
        let d = E::Beta { a: 2.0, b: 3.0 };
        let model = TrueModel::repeated(vec![0.4, 0.6], vec![d, d]).unwrap();
        let p = model.true_params(&Partition::dyadic(2).unwrap()).unwrap();
        let s = score_at_cell(&p, &[0, 1, 2]).unwrap();
        assert!(s[0].abs() < 1e-14);
        assert!(matches!(efficient_variance_prediction(&model, 2), Err(Error::Singular(_))));
    }

    #[test]
    fn monotone_under_refinement() {
        let model = TrueModel::sim1();
        let r = refinement_monotonicity_check(&model, 2, 3).unwrap();
        assert!(r.pass, "{r:?}");
        let same = refinement_monotonicity_check(&model, 2, 2).unwrap();
        assert_eq!(same.min_eigenvalue, 0.0);
        let mut last = 0.0;
        for p in 1..=4 {
            let t = true_efficient_information(&TrueModel::sim3(), p).unwrap().trace();
            assert!(t >= last - 1e-8);
            last = t;
        }
    }

    #[test]
    fn size_guard() {
        let part = Partition::uniform(216).unwrap();
        let p = MixtureParams::new_repeated(vec![1.0], vec![vec![1.0 / 216.0; 216]], part).unwrap();
        assert!(matches!(fisher_information(&p), Err(Error::SizeLimit(_))));
    }
}
