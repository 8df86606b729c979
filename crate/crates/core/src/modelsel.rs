//! Partition choice by block cross-validation.
//!
//! A block scheme pairs index sets `(B_b, B_-b)`. The candidate estimate on
//! `B_b` is compared, in the label-free distance between sorted weights, with
//! a reference estimate on `B_-b` computed on a coarse reference partition.

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{em_fit, EmConfig};
use crate::error::{Error, Result};
use crate::model::{bin_sample, Metric};
use crate::partition::{reference_p, Partition};
use crate::rng::{mix, substream};
use crate::scenario::Observation;

/// Divisor in the first disjoint scheme, `b_n = ceil(n^(2/3) ln n / 20)`.
pub const D1_DIVISOR: f64 = 20.0;

/// Stream used for block shuffles, kept apart from sampling and EM streams.
const BLOCK_STREAM: u64 = 0xB10C;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SchemeKind {
    D1,
    D2,
    D3,
    V1,
    V2,
    V3,
    Custom,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 6] = [Self::D1, Self::D2, Self::D3, Self::V1, Self::V2, Self::V3];

    pub fn is_disjoint(self) -> bool {
        matches!(self, Self::D1 | Self::D2 | Self::D3)
    }

    /// Train-block size and block count for a sample of size `n`.
    pub fn sizes(self, n: usize) -> Result<(usize, usize)> {
        let nf = n as f64;
        // guard against powers landing just below an integer
        let floor = |x: f64| (x + 1e-9).floor().max(0.0) as usize;
        let ceil = |x: f64| (x - 1e-9).ceil().max(0.0) as usize;
        let n23 = nf.cbrt() * nf.cbrt();
        let div = |num: usize, den: usize| num.checked_div(den).unwrap_or(0);
        let (a, b) = match self {
            Self::D1 => {
                let b = if n > 1 { ceil(n23 * nf.ln() / D1_DIVISOR) } else { 0 };
                (div(n, 2 * b), b)
            }
            Self::D2 => {
                let b = ceil(nf.cbrt());
                (div(n, 2 * b), b)
            }
            Self::D3 => {
                let a = n / 10;
                (a, div(n, 2 * a))
            }
            Self::V1 => {
                let a = floor(nf.cbrt());
                (a, div(n, a))
            }
            Self::V2 => {
                let a = floor(n23 / 2.0);
                (a, div(n, a))
            }
            Self::V3 => {
                let a = n / 10;
                (a, div(n, a))
            }
            Self::Custom => return Err(Error::Usage("custom schemes have no size formula".into())),
        };
        if a == 0 || b == 0 {
            return Err(Error::Usage(format!("n={n} is too small for scheme {self} (a_n={a}, b_n={b})")));
        }
        Ok((a, b))
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::D1 => "D1",
            Self::D2 => "D2",
            Self::D3 => "D3",
            Self::V1 => "V1",
            Self::V2 => "V2",
            Self::V3 => "V3",
            Self::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "D1" => Ok(Self::D1),
            "D2" => Ok(Self::D2),
            "D3" => Ok(Self::D3),
            "V1" => Ok(Self::V1),
            "V2" => Ok(Self::V2),
            "V3" => Ok(Self::V3),
            _ => Err(Error::Config(format!("unknown block scheme '{s}'"))),
        }
    }
}

/// Train/test index sets. Indices are zero-based and sorted within each set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockScheme {
    pub kind: SchemeKind,
    pub blocks: Vec<(Vec<usize>, Vec<usize>)>,
    pub a_n: usize,
    pub b_n: usize,
    pub n: usize,
    pub seed: u64,
    /// Indices never used as a training block.
    pub leftover: Vec<usize>,
}

impl BlockScheme {
    /// Disjoint scheme from explicit blocks.
    pub fn custom(n: usize, blocks: Vec<(Vec<usize>, Vec<usize>)>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Usage("a block scheme needs at least one block".into()));
        }
        let a_n = blocks[0].0.len();
        let mut seen = vec![false; n];
        for (b, (train, test)) in blocks.iter().enumerate() {
            if train.is_empty() || test.is_empty() {
                return Err(Error::Usage(format!("block {b} has an empty side")));
            }
            for &i in train.iter().chain(test) {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Usage(format!("index {i} out of range or reused in block {b}")));
                }
            }
        }
        let leftover = (0..n).filter(|&i| !seen[i]).collect();
        let blocks = blocks
            .into_iter()
            .map(|(mut a, mut b)| {
                a.sort_unstable();
                b.sort_unstable();
                (a, b)
            })
            .collect::<Vec<_>>();
        Ok(Self { kind: SchemeKind::Custom, b_n: blocks.len(), blocks, a_n, n, seed: 0, leftover })
    }
}

/// Shuffles `0..n` with `seed` and slices it into the blocks of `kind`.
pub fn make_blocks(n: usize, kind: SchemeKind, seed: u64) -> Result<BlockScheme> {
    let (a, b) = kind.sizes(n)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(seed, BLOCK_STREAM));
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let mut blocks = Vec::with_capacity(b);
    let used = if kind.is_disjoint() {
        for i in 0..b {
            let start = 2 * a * i;
            blocks.push((sorted(&perm[start..start + a]), sorted(&perm[start + a..start + 2 * a])));
        }
        2 * a * b
    } else {
        for i in 0..b {
            let train = sorted(&perm[a * i..a * (i + 1)]);
            let mut rest: Vec<usize> = perm[..a * i].iter().chain(&perm[a * (i + 1)..]).copied().collect();
            rest.sort_unstable();
            blocks.push((train, rest));
        }
        a * b
    };
    Ok(BlockScheme { kind, blocks, a_n: a, b_n: b, n, seed, leftover: sorted(&perm[used..]) })
}

/// Maps a subsample to sorted weight estimates.
///
/// `salt` distinguishes calls within one criterion evaluation so randomized
/// estimators stay reproducible.
pub trait WeightEstimator: Sync {
    fn estimate(&self, obs: &[Observation], part: &Partition, k: usize, salt: u64) -> Result<Vec<f64>>;
}

/// Maximum likelihood weights by EM.
#[derive(Clone, Debug)]
pub struct EmEstimator {
    pub cfg: EmConfig,
}

impl WeightEstimator for EmEstimator {
    fn estimate(&self, obs: &[Observation], part: &Partition, k: usize, salt: u64) -> Result<Vec<f64>> {
        let data = bin_sample(obs, part)?;
        let fit = em_fit(&data, k, &self.cfg.with_seed(mix(self.cfg.seed, salt)))?;
        Ok(fit.params.theta().to_vec())
    }
}

impl<F> WeightEstimator for F
where
    F: Fn(&[Observation], &Partition, usize, u64) -> Result<Vec<f64>> + Sync,
{
    fn estimate(&self, obs: &[Observation], part: &Partition, k: usize, salt: u64) -> Result<Vec<f64>> {
        self(obs, part, k, salt)
    }
}

fn subset(obs: &[Observation], idx: &[usize]) -> Vec<Observation> {
    idx.iter().map(|&i| obs[i]).collect()
}

fn salt_train(b: usize) -> u64 {
    2 * b as u64
}

fn salt_test(b: usize) -> u64 {
    2 * b as u64 + 1
}

fn check_scheme(obs: &[Observation], scheme: &BlockScheme) -> Result<()> {
    if scheme.n != obs.len() {
        return Err(Error::Usage(format!(
            "block scheme built for n={} but the sample has {} observations",
            scheme.n,
            obs.len()
        )));
    }
    Ok(())
}

fn with_block<T>(b: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Estimation(format!("block {b}: {e}")))
}

/// Estimates on every block side `side` (0 = train, 1 = test), in block order.
pub fn block_estimates(
    obs: &[Observation],
    part: &Partition,
    scheme: &BlockScheme,
    estimator: &dyn WeightEstimator,
    k: usize,
    test_side: bool,
) -> Result<Vec<Vec<f64>>> {
    check_scheme(obs, scheme)?;
    scheme
        .blocks
        .par_iter()
        .enumerate()
        .map(|(b, (train, test))| {
            let (idx, salt) = if test_side { (test, salt_test(b)) } else { (train, salt_train(b)) };
            with_block(b, estimator.estimate(&subset(obs, idx), part, k, salt))
        })
        .collect()
}

/// Average squared distance between paired estimates, scaled by `1/scale`.
pub fn criterion_from_estimates(left: &[Vec<f64>], right: &[Vec<f64>], scale: f64, metric: Metric) -> Result<f64> {
    if left.len() != right.len() || left.is_empty() {
        return Err(Error::Usage("estimate lists must be non-empty and paired".into()));
    }
    let mut s = 0.0;
    for (a, b) in left.iter().zip(right) {
        s += metric.distance_sq(a, b)?;
    }
    Ok(s / scale)
}

/// `(1/b_n) sum_b |theta_I(B_b) - theta_ref(B_-b)|^2` in the sorted-weight distance.
pub fn cv_criterion(
    obs: &[Observation],
    candidate: &Partition,
    reference: &Partition,
    scheme: &BlockScheme,
    estimator: &dyn WeightEstimator,
    k: usize,
    metric: Metric,
) -> Result<f64> {
    let train = block_estimates(obs, candidate, scheme, estimator, k, false)?;
    let test = block_estimates(obs, reference, scheme, estimator, k, true)?;
    criterion_from_estimates(&train, &test, scheme.blocks.len() as f64, metric)
}

/// `(1/(2 b_n)) sum_b |theta_I(B_b) - theta_I(B_-b)|^2`, both sides on the candidate.
pub fn naive_criterion(
    obs: &[Observation],
    candidate: &Partition,
    scheme: &BlockScheme,
    estimator: &dyn WeightEstimator,
    k: usize,
    metric: Metric,
) -> Result<f64> {
    let train = block_estimates(obs, candidate, scheme, estimator, k, false)?;
    let test = block_estimates(obs, candidate, scheme, estimator, k, true)?;
    criterion_from_estimates(&train, &test, 2.0 * scheme.blocks.len() as f64, metric)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub bins: usize,
    /// Dyadic exponent when the candidate is a regular dyadic grid.
    pub p: Option<u32>,
    pub criterion: Option<f64>,
    pub error: Option<String>,
    /// Train-side estimates, one per block.
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub scheme: SchemeKind,
    pub n: usize,
    pub k: usize,
    pub metric: Metric,
    pub a_n: usize,
    pub b_n: usize,
    pub seed: u64,
    pub leftover: usize,
    pub reference_bins: usize,
    pub reference_p: Option<u32>,
    /// Test-side reference estimates, one per block.
    pub reference_estimates: Vec<Vec<f64>>,
    pub candidates: Vec<CandidateScore>,
    pub chosen: usize,
    pub chosen_bins: usize,
    pub chosen_p: Option<u32>,
}

impl SelectionReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Dyadic exponent of a regular grid with a power-of-two bin count.
pub fn dyadic_exponent(part: &Partition) -> Option<u32> {
    let m = part.len();
    (part.is_uniform() && m.is_power_of_two()).then(|| m.trailing_zeros())
}

/// Reference grid: the smallest dyadic partition with at least `k + 2` bins.
pub fn default_reference(k: usize) -> Result<Partition> {
    Partition::dyadic(reference_p(k))
}

/// Dyadic candidates `2^1, ..., 2^p_max`.
pub fn dyadic_candidates(p_max: u32) -> Result<Vec<Partition>> {
    (1..=p_max).map(Partition::dyadic).collect()
}

/// Evaluates the cross-validation criterion on every candidate and returns the
/// minimizer. Ties go to the smaller bin count, then to the earlier candidate.
pub fn select_partition(
    obs: &[Observation],
    candidates: &[Partition],
    reference: Option<&Partition>,
    scheme: &BlockScheme,
    estimator: &dyn WeightEstimator,
    k: usize,
    metric: Metric,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::Usage("no candidate partitions".into()));
    }
    let default_ref;
    let reference = match reference {
        Some(r) => r,
        None => {
            default_ref = default_reference(k)?;
            &default_ref
        }
    };
    let reference_estimates = block_estimates(obs, reference, scheme, estimator, k, true)?;
    let scale = scheme.blocks.len() as f64;
    let scores: Vec<CandidateScore> = candidates
        .iter()
        .map(|cand| {
            let outcome = block_estimates(obs, cand, scheme, estimator, k, false).and_then(|est| {
                let c = criterion_from_estimates(&est, &reference_estimates, scale, metric)?;
                Ok((est, c))
            });
            match outcome {
                Ok((estimates, c)) => CandidateScore {
                    bins: cand.len(),
                    p: dyadic_exponent(cand),
                    criterion: Some(c),
                    error: None,
                    estimates,
                },
                Err(e) => CandidateScore {
                    bins: cand.len(),
                    p: dyadic_exponent(cand),
                    criterion: None,
                    error: Some(e.to_string()),
                    estimates: Vec::new(),
                },
            }
        })
        .collect();
    let chosen = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.criterion.map(|c| (i, c, s.bins)))
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.2.cmp(&y.2)).then(x.0.cmp(&y.0)))
        .map(|(i, _, _)| i)
        .ok_or_else(|| Error::Selection(format!("all {} candidates failed", candidates.len())))?;
    Ok(SelectionReport {
        scheme: scheme.kind,
        n: scheme.n,
        k,
        metric,
        a_n: scheme.a_n,
        b_n: scheme.b_n,
        seed: scheme.seed,
        leftover: scheme.leftover.len(),
        reference_bins: reference.len(),
        reference_p: dyadic_exponent(reference),
        reference_estimates,
        chosen_bins: scores[chosen].bins,
        chosen_p: scores[chosen].p,
        candidates: scores,
        chosen,
    })
}

/// Empirical comparison of the selected risk with the best achievable one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGap {
    /// `R(I_hat) - inf_I R(I)`, one entry per replication.
    pub gaps: Vec<f64>,
    pub mean_selected_risk: f64,
    pub inf_risk: f64,
    /// `(1+eps)/(1-eps) inf R + 2 delta/(1-eps)`.
    pub bound: f64,
    pub violation_fraction: f64,
}

/// `chosen[r]` is the candidate picked in replication `r`; `risks[i]` the risk
/// of candidate `i` at the training size.
pub fn oracle_gap(chosen: &[usize], risks: &[f64], eps: f64, delta: f64) -> Result<OracleGap> {
    if risks.is_empty() || chosen.is_empty() {
        return Err(Error::Usage("oracle gap needs replications and candidate risks".into()));
    }
    if let Some(&bad) = chosen.iter().find(|&&c| c >= risks.len()) {
        return Err(Error::Usage(format!(
            "replication chose candidate {bad} but only {} risks were given",
            risks.len()
        )));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Usage(format!("eps must lie in [0,1), got {eps}")));
    }
    let inf_risk = risks.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound = oracle_bound(inf_risk, eps, delta);
    let selected: Vec<f64> = chosen.iter().map(|&c| risks[c]).collect();
    let gaps = selected.iter().map(|r| r - inf_risk).collect();
    let violations = selected.iter().filter(|&&r| r > bound).count();
    Ok(OracleGap {
        gaps,
        mean_selected_risk: selected.iter().sum::<f64>() / selected.len() as f64,
        inf_risk,
        bound,
        violation_fraction: violations as f64 / selected.len() as f64,
    })
}

pub fn oracle_bound(inf_risk: f64, eps: f64, delta: f64) -> f64 {
    (1.0 + eps) / (1.0 - eps) * inf_risk + 2.0 * delta / (1.0 - eps)
}

/// `eps_n = delta_n = 1 / (a_n ln n)`.
pub fn default_slack(a_n: usize, n: usize) -> f64 {
    1.0 / (a_n as f64 * (n as f64).ln())
}

/// Lower bound on the probability that the oracle inequality holds:
/// `1 - 2 m_n exp(-2 b_n (eps inf R + delta)^2)`.
pub fn oracle_probability(m_n: usize, b_n: usize, eps: f64, delta: f64, inf_risk: f64) -> f64 {
    let t = eps * inf_risk + delta;
    1.0 - 2.0 * m_n as f64 * (-2.0 * b_n as f64 * t * t).exp()
}
