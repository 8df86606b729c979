//! Maximum likelihood for the binned mixture by EM with random restarts.
//!
//! Iterations run on a compact representation: only bins that hold at least
//! one coordinate value carry mass (any maximizer puts zero mass elsewhere),
//! and in the repeated setting cells that are permutations of each other are
//! merged, since their probabilities coincide. The cost of one iteration is
//! therefore `O(k * #distinct cells)` whatever the number of bins.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BinnedSample, MixtureParams};
use crate::rng::{substream, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop when `|l(t) - l(t-1)| <= rel_tol * |l(t)|`.
    pub rel_tol: f64,
    pub seed: u64,
    /// Tie bin masses across the three coordinates.
    pub repeated: bool,
    /// Mixing floor applied after each M-step: `w <- (w + eps) / (1 + M eps)`.
    pub floor_eps: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iters: 500,
            rel_tol: 1e-8,
            seed: 0,
            repeated: true,
            floor_eps: 0.0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Usage("at least one EM restart is required".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Usage("max_iters must be positive".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Usage("rel_tol must be positive".into()));
        }
        if !(self.floor_eps >= 0.0) {
            return Err(Error::Usage("floor_eps must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Best restart of [`em_fit`], components in canonical order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmResult {
    pub params: MixtureParams,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final log-likelihood of each restart, in restart order.
    pub restart_logliks: Vec<f64>,
}

/// One EM run from a given starting point, labels untouched.
#[derive(Clone, Debug)]
pub struct EmRun {
    pub params: MixtureParams,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood at the start and after every iteration.
    pub trace: Vec<f64>,
}

struct Compact {
    m: usize,
    groups: usize,
    group_of: [usize; 3],
    /// Occupied global bins per group, ascending.
    bins: Vec<Vec<u32>>,
    group_offset: Vec<usize>,
    /// Total compact bins over all groups.
    width: usize,
    /// Cells as compact indices into the per-component mass vector.
    cells: Vec<[usize; 3]>,
    weights: Vec<f64>,
    n: f64,
    /// `-sum_cells count * sum_c ln|I_{m_c}|`.
    volume_const: f64,
}

impl Compact {
    fn new(data: &BinnedSample, repeated: bool) -> Self {
        let part = data.partition();
        let m = part.len();
        let (groups, group_of) = if repeated { (1, [0, 0, 0]) } else { (3, [0, 1, 2]) };
        let mut occupied = vec![std::collections::BTreeSet::new(); groups];
        for cell in data.counts().keys() {
            for c in 0..3 {
                occupied[group_of[c]].insert(cell[c]);
            }
        }
        let bins: Vec<Vec<u32>> = occupied.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut group_offset = Vec::with_capacity(groups);
        let mut width = 0;
        for b in &bins {
            group_offset.push(width);
            width += b.len();
        }
        let local = |g: usize, bin: u32| -> usize {
            group_offset[g] + bins[g].binary_search(&bin).expect("bin is occupied")
        };
        let mut merged: std::collections::BTreeMap<[u32; 3], u64> = std::collections::BTreeMap::new();
        let mut volume_const = 0.0;
        for (cell, &count) in data.counts() {
            volume_const -= count as f64 * cell.iter().map(|&b| part.bin_len(b as usize).ln()).sum::<f64>();
            let key = if repeated {
                let mut s = *cell;
                s.sort_unstable();
                s
            } else {
                *cell
            };
            *merged.entry(key).or_insert(0) += count;
        }
        let mut cells = Vec::with_capacity(merged.len());
        let mut weights = Vec::with_capacity(merged.len());
        for (cell, count) in merged {
            cells.push([
                local(group_of[0], cell[0]),
                local(group_of[1], cell[1]),
                local(group_of[2], cell[2]),
            ]);
            weights.push(count as f64);
        }
        Self {
            m,
            groups,
            group_of,
            bins,
            group_offset,
            width,
            cells,
            weights,
            n: data.n() as f64,
            volume_const,
        }
    }

    fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        self.group_offset[g]..self.group_offset[g] + self.bins[g].len()
    }

    fn random_state(&self, k: usize, rng: &mut StreamRng) -> State {
        let mut theta: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let s: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|t| *t /= s);
        let mut omega = vec![0.0; k * self.width];
        for j in 0..k {
            for g in 0..self.groups {
                let r = self.group_range(g);
                let row = &mut omega[j * self.width + r.start..j * self.width + r.end];
                row.iter_mut().for_each(|w| *w = -(1.0 - rng.random::<f64>()).ln());
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|w| *w /= s);
            }
        }
        State { theta, omega }
    }

    fn state_from_params(&self, p: &MixtureParams) -> State {
        let k = p.k();
        let mut omega = vec![0.0; k * self.width];
        for j in 0..k {
            for g in 0..self.groups {
                let c = (0..3).find(|&c| self.group_of[c] == g).unwrap();
                for (l, &bin) in self.bins[g].iter().enumerate() {
                    omega[j * self.width + self.group_offset[g] + l] = p.omega(j, c, bin as usize);
                }
            }
        }
        State { theta: p.theta().to_vec(), omega }
    }

    /// E-step: log-likelihood at `state` and the expected sufficient statistics.
    fn e_step(&self, state: &State, acc: &mut Accum) -> f64 {
        let k = state.theta.len();
        let w = self.width;
        let log_theta: Vec<f64> = state.theta.iter().map(|t| t.ln()).collect();
        let log_omega: Vec<f64> = state.omega.iter().map(|t| t.ln()).collect();
        acc.theta.iter_mut().for_each(|x| *x = 0.0);
        acc.omega.iter_mut().for_each(|x| *x = 0.0);
        let mut s = vec![0.0; k];
        let mut ll = 0.0;
        for (cell, &count) in self.cells.iter().zip(&self.weights) {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..k {
                let b = j * w;
                s[j] = log_theta[j] + log_omega[b + cell[0]] + log_omega[b + cell[1]] + log_omega[b + cell[2]];
                mx = mx.max(s[j]);
            }
            if mx == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let mut tot = 0.0;
            for sj in s.iter_mut() {
                *sj = (*sj - mx).exp();
                tot += *sj;
            }
            ll += count * (mx + tot.ln());
            for (j, &sj) in s.iter().enumerate().take(k) {
                let r = count * sj / tot;
                if r > 0.0 {
                    acc.theta[j] += r;
                    let b = j * w;
                    acc.omega[b + cell[0]] += r;
                    acc.omega[b + cell[1]] += r;
                    acc.omega[b + cell[2]] += r;
                }
            }
        }
        ll + self.volume_const
    }

    /// M-step. Returns false when some component received no responsibility.
    fn m_step(&self, acc: &Accum, state: &mut State, floor_eps: f64) -> bool {
        let k = state.theta.len();
        let mut all_alive = true;
        for j in 0..k {
            state.theta[j] = acc.theta[j] / self.n;
            for g in 0..self.groups {
                let r = self.group_range(g);
                let base = j * self.width;
                let src = &acc.omega[base + r.start..base + r.end];
                let total: f64 = src.iter().sum();
                let dst = &mut state.omega[base + r.start..base + r.end];
                if total > 0.0 {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s / total;
                    }
                } else {
                    all_alive = false;
                    state.theta[j] = 0.0;
                    let u = 1.0 / dst.len() as f64;
                    dst.iter_mut().for_each(|d| *d = u);
                }
                if floor_eps > 0.0 {
                    let z = 1.0 + self.m as f64 * floor_eps;
                    dst.iter_mut().for_each(|d| *d = (*d + floor_eps) / z);
                }
            }
        }
        let s: f64 = state.theta.iter().sum();
        state.theta.iter_mut().for_each(|t| *t /= s);
        all_alive
    }

    fn run(&self, mut state: State, cfg: &EmConfig, keep_trace: bool) -> RawRun {
        let k = state.theta.len();
        let mut acc = Accum { theta: vec![0.0; k], omega: vec![0.0; k * self.width] };
        let mut ll = self.e_step(&state, &mut acc);
        let mut trace = Vec::new();
        if keep_trace {
            trace.push(ll);
        }
        if ll == f64::NEG_INFINITY {
            return RawRun { state, ll, iterations: 0, converged: false, alive: true, trace };
        }
        let mut converged = false;
        let mut alive = true;
        let mut iterations = 0;
        while iterations < cfg.max_iters {
            alive = self.m_step(&acc, &mut state, cfg.floor_eps);
            let next = self.e_step(&state, &mut acc);
            iterations += 1;
            if keep_trace {
                trace.push(next);
            }
            let delta = (next - ll).abs();
            ll = next;
            if delta <= cfg.rel_tol * ll.abs() {
                converged = true;
                break;
            }
        }
        RawRun { state, ll, iterations, converged, alive, trace }
    }

    fn expand(&self, state: &State, data: &BinnedSample, floor_eps: f64) -> Result<MixtureParams> {
        let k = state.theta.len();
        let m = self.m;
        let fill = if floor_eps > 0.0 { floor_eps / (1.0 + m as f64 * floor_eps) } else { 0.0 };
        let mut omega = vec![fill; k * 3 * m];
        for j in 0..k {
            for c in 0..3 {
                let g = self.group_of[c];
                for (l, &bin) in self.bins[g].iter().enumerate() {
                    omega[(j * 3 + c) * m + bin as usize] = state.omega[j * self.width + self.group_offset[g] + l];
                }
            }
        }
        MixtureParams::new(state.theta.clone(), omega, data.partition().clone(), self.groups == 1)
    }
}

struct State {
    theta: Vec<f64>,
    omega: Vec<f64>,
}

struct Accum {
    theta: Vec<f64>,
    omega: Vec<f64>,
}

struct RawRun {
    state: State,
    ll: f64,
    iterations: usize,
    converged: bool,
    alive: bool,
    trace: Vec<f64>,
}

fn check_inputs(data: &BinnedSample, k: usize, cfg: &EmConfig) -> Result<()> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    if data.n() == 0 {
        return Err(Error::Usage(format!(
            "cannot fit {} free parameters to an empty sample",
            k - 1 + k * if cfg.repeated { 1 } else { 3 } * (data.partition().len() - 1)
        )));
    }
    Ok(())
}

/// Maximizes the binned log-likelihood over `restarts` random initializations
/// and returns the best run with components sorted by ascending weight.
///
/// Restart `r` draws its initializer from stream `r` of `cfg.seed`: weights from
/// a flat Dirichlet, mass rows from a flat Dirichlet over occupied bins.
pub fn em_fit(data: &BinnedSample, k: usize, cfg: &EmConfig) -> Result<EmResult> {
    check_inputs(data, k, cfg)?;
    let compact = Compact::new(data, cfg.repeated);
    let runs: Vec<RawRun> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(cfg.seed, r as u64);
            let init = compact.random_state(k, &mut rng);
            compact.run(init, cfg, false)
        })
        .collect();
    let restart_logliks: Vec<f64> = runs.iter().map(|r| r.ll).collect();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.ll.is_finite())
        .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
            Some((_, b)) if b >= r.ll => acc,
            _ => Some((i, r.ll)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Estimation(format!("all {} EM restarts diverged to -inf", cfg.restarts)))?;
    let run = &runs[best];
    let params = compact.expand(&run.state, data, cfg.floor_eps)?.canonical_order();
    let loglik = params.log_likelihood(data)?;
    Ok(EmResult {
        params,
        loglik,
        iterations: run.iterations,
        converged: run.converged && run.alive,
        restart_logliks,
    })
}

/// Runs EM from `init` without relabeling, recording the log-likelihood path.
pub fn em_from_init(data: &BinnedSample, init: &MixtureParams, cfg: &EmConfig) -> Result<EmRun> {
    check_inputs(data, init.k(), cfg)?;
    if init.partition() != data.partition() {
        return Err(Error::Usage("initializer and data use different partitions".into()));
    }
    if cfg.repeated && !init.is_repeated() {
        return Err(Error::Usage("repeated EM needs a repeated initializer".into()));
    }
    let compact = Compact::new(data, cfg.repeated);
    let run = compact.run(compact.state_from_params(init), cfg, true);
    if run.ll == f64::NEG_INFINITY {
        return Err(Error::Estimation("initializer gives an occupied cell zero probability".into()));
    }
    let params = compact.expand(&run.state, data, cfg.floor_eps)?;
    let loglik = params.log_likelihood(data)?;
    Ok(EmRun {
        params,
        loglik,
        iterations: run.iterations,
        converged: run.converged && run.alive,
        trace: run.trace,
    })
}

/// Limit of the weight estimate as the partition is refined with `n` fixed:
/// `k - r` entries `q/n` followed by `r` entries `(q+1)/n`, where `n = kq + r`.
pub fn limiting_mle(n: usize, k: usize) -> Result<Vec<f64>> {
    if k == 0 || n < k {
        return Err(Error::Domain(format!("limiting weights need n >= k >= 1, got n={n}, k={k}")));
    }
    let q = n / k;
    let r = n - k * q;
    let nf = n as f64;
    Ok((0..k)
        .map(|j| if j < k - r { q as f64 / nf } else { (q + 1) as f64 / nf })
        .collect())
}

/// Balanced cluster sizes `(N_1, ..., N_k)` matching [`limiting_mle`].
pub fn balanced_sizes(n: usize, k: usize) -> Result<Vec<usize>> {
    let q = n / k.max(1);
    let w = limiting_mle(n, k)?;
    Ok(w.iter().map(|&t| if (t * n as f64).round() as usize == q { q } else { q + 1 }).collect())
}

/// A maximizer of the likelihood when every coordinate value sits alone in its
/// bin: observations are split in index order into balanced clusters, each
/// cluster spreads its mass uniformly over the bins of its own coordinates.
pub fn saturated_maximizer(data: &BinnedSample, k: usize, repeated: bool) -> Result<MixtureParams> {
    let n = data.n();
    if !data.all_bins_distinct() {
        return Err(Error::Usage(
            "saturated maximizer needs every coordinate value in its own bin".into(),
        ));
    }
    let sizes = balanced_sizes(n, k).map_err(|e| Error::Usage(e.to_string()))?;
    let m = data.partition().len();
    let mut omega = vec![0.0; k * 3 * m];
    let mut start = 0;
    for (j, &size) in sizes.iter().enumerate() {
        for cell in &data.cells()[start..start + size] {
            if repeated {
                let w = 1.0 / (3 * size) as f64;
                for &bin in cell {
                    for c in 0..3 {
                        omega[(j * 3 + c) * m + bin as usize] = w;
                    }
                }
            } else {
                let w = 1.0 / size as f64;
                for c in 0..3 {
                    omega[(j * 3 + c) * m + cell[c] as usize] = w;
                }
            }
        }
        start += size;
    }
    let theta = sizes.iter().map(|&s| s as f64 / n as f64).collect();
    MixtureParams::new(theta, omega, data.partition().clone(), repeated)
}
