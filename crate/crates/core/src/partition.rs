//! Interval partitions of the unit interval.
//!
//! Bins are left-closed and right-open, except the last one which is closed
//! at 1. Indices are zero-based: bin `m` is `[t_m, t_{m+1})`.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest number of bins a partition may hold. Bin indices are stored as `u32`
/// in binned samples, and breakpoint storage grows linearly with the count.
pub const MAX_BINS: usize = 1 << 28;

/// Largest admissible dyadic exponent (`2^p <= MAX_BINS`).
pub const MAX_DYADIC_P: u32 = 28;

/// Default multiplier in the sample-size cap `P_n = floor(factor * ln n)`.
pub const DEFAULT_PCAP_FACTOR: f64 = 1.5;

/// Histogram grid `0 = t_0 < t_1 < ... < t_M = 1`.
///
/// Cloning is cheap: breakpoints are shared.
#[derive(Clone, Debug)]
pub struct Partition {
    breaks: Arc<[f64]>,
    uniform: bool,
}

impl PartialEq for Partition {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.breaks, &other.breaks) || self.breaks == other.breaks
    }
}

impl Partition {
    /// Builds a partition from explicit breakpoints.
    pub fn from_breakpoints(breaks: Vec<f64>) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(Error::Usage("a partition needs at least two breakpoints".into()));
        }
        if breaks.len() - 1 > MAX_BINS {
            return Err(Error::SizeLimit(format!("{} bins exceeds {MAX_BINS}", breaks.len() - 1)));
        }
        if breaks[0] != 0.0 || *breaks.last().unwrap() != 1.0 {
            return Err(Error::Usage("breakpoints must start at 0 and end at 1".into()));
        }
        if let Some(w) = breaks.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::Usage(format!(
                "breakpoints must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
        let m = breaks.len() - 1;
        let uniform = breaks
            .iter()
            .enumerate()
            .all(|(i, &t)| t == i as f64 / m as f64);
        Ok(Self { breaks: breaks.into(), uniform })
    }

    /// Regular partition into `m` equal bins.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Usage("a partition needs at least one bin".into()));
        }
        if m > MAX_BINS {
            return Err(Error::SizeLimit(format!("{m} bins exceeds {MAX_BINS}")));
        }
        let breaks: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        Ok(Self { breaks: breaks.into(), uniform: true })
    }

    /// Regular dyadic partition with `2^p` bins.
    pub fn dyadic(p: u32) -> Result<Self> {
        if p > MAX_DYADIC_P {
            return Err(Error::SizeLimit(format!(
                "dyadic exponent {p} exceeds the maximum {MAX_DYADIC_P}"
            )));
        }
        Self::uniform(1usize << p)
    }

    /// Number of bins `M`.
    pub fn len(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Lebesgue length of bin `m`.
    pub fn bin_len(&self, m: usize) -> f64 {
        self.breaks[m + 1] - self.breaks[m]
    }

    /// Zero-based index of the bin containing `x`.
    pub fn bin_index(&self, x: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("{x} lies outside [0,1]")));
        }
        let m = self.len();
        if x == 1.0 {
            return Ok(m - 1);
        }
        if self.uniform {
            // floor(x * M) is exact for dyadic M; the fix-up below covers rounding
            // at breakpoints of other regular grids.
            let mut guess = ((x * m as f64) as usize).min(m - 1);
            while guess > 0 && x < self.breaks[guess] {
                guess -= 1;
            }
            while guess + 1 < m && x >= self.breaks[guess + 1] {
                guess += 1;
            }
            return Ok(guess);
        }
        let upper = self.breaks.partition_point(|&t| t <= x);
        Ok((upper - 1).min(m - 1))
    }

    /// True when every bin of `coarse` is a union of bins of `self`.
    pub fn refines(&self, coarse: &Partition) -> bool {
        let fine = &self.breaks;
        let mut i = 0;
        for &t in coarse.breaks.iter() {
            while i < fine.len() && fine[i] < t {
                i += 1;
            }
            if i == fine.len() || fine[i] != t {
                return false;
            }
        }
        true
    }

    /// For a refinement `self` of `coarse`, maps each fine bin to its parent coarse bin.
    pub fn parent_map(&self, coarse: &Partition) -> Result<Vec<usize>> {
        if !self.refines(coarse) {
            return Err(Error::Usage("partition is not a refinement of the coarse one".into()));
        }
        let mut parent = Vec::with_capacity(self.len());
        let mut c = 0;
        for m in 0..self.len() {
            while self.breaks[m] >= coarse.breaks[c + 1] {
                c += 1;
            }
            parent.push(c);
        }
        Ok(parent)
    }

    /// Merges bins `(0,1), (2,3), ...`. Requires an even bin count.
    pub fn coarsen_pairs(&self) -> Result<Partition> {
        if !self.len().is_multiple_of(2) {
            return Err(Error::Usage("pairwise coarsening needs an even bin count".into()));
        }
        let breaks: Vec<f64> = self.breaks.iter().step_by(2).copied().collect();
        Partition::from_breakpoints(breaks)
    }
}

/// Largest admissible dyadic exponent for a sample of size `n`:
/// `floor(1.5 * ln n)`.
pub fn max_p_for_n(n: usize) -> u32 {
    max_p_for_n_with(n, DEFAULT_PCAP_FACTOR)
}

/// `floor(factor * ln n)`, clamped to `[0, MAX_DYADIC_P]`.
pub fn max_p_for_n_with(n: usize, factor: f64) -> u32 {
    if n <= 1 {
        return 0;
    }
    let p = (factor * (n as f64).ln()).floor();
    if p <= 0.0 {
        0
    } else {
        (p as u32).min(MAX_DYADIC_P)
    }
}

/// Smallest dyadic exponent `p0` with `2^p0 >= k + 2`, the reference grid size
/// used by the cross-validation criterion.
pub fn reference_p(k: usize) -> u32 {
    let mut p = 0;
    while (1usize << p) < k + 2 {
        p += 1;
    }
    p
}
