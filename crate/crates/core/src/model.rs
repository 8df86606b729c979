//! The binned mixture model.
//!
//! Parameters are weights `theta` (length `k`) and bin masses `omega` stored
//! densely as `[j][c][m]`. In the repeated setting the three coordinate rows of
//! each component are identical; they are still stored expanded.
//!
//! Two line-oriented text formats are provided for round trips through files.
//! Lines starting with `#` are comments. Indices are zero-based.
//!
//! Mixture parameters:
//!
//! ```text
//! # histomix mixture-params v1
//! k <k>
//! repeated <true|false>
//! breakpoints <t_0> <t_1> ... <t_M>
//! theta <j> <value>                (one line per component)
//! omega <j> <c> <m> <value>        (one line per component, coordinate and bin)
//! ```
//!
//! Binned samples:
//!
//! ```text
//! # histomix binned-sample v1
//! breakpoints <t_0> ... <t_M>
//! n <n>
//! obs <i> <m_1> <m_2> <m_3>        (one line per observation)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::scenario::Observation;

/// Cell of the `M^3` grid: one zero-based bin index per coordinate.
pub type Cell = [u32; 3];

/// Observations reduced to their bin indices on a fixed partition.
#[derive(Clone, Debug)]
pub struct BinnedSample {
    partition: Partition,
    cells: Vec<Cell>,
    counts: BTreeMap<Cell, u64>,
}

impl BinnedSample {
    pub fn from_cells(partition: Partition, cells: Vec<Cell>) -> Result<Self> {
        let m = partition.len();
        let mut counts = BTreeMap::new();
        for (i, cell) in cells.iter().enumerate() {
            if cell.iter().any(|&b| b as usize >= m) {
                return Err(Error::Domain(format!(
                    "observation {i}: cell {cell:?} outside a {m}-bin partition"
                )));
            }
            *counts.entry(*cell).or_insert(0) += 1;
        }
        Ok(Self { partition, cells, counts })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Occupied cells with their multiplicities, in lexicographic order.
    pub fn counts(&self) -> &BTreeMap<Cell, u64> {
        &self.counts
    }

    /// True when all `3n` coordinate values fall in pairwise distinct bins.
    pub fn all_bins_distinct(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(3 * self.n());
        self.cells.iter().flatten().all(|&b| seen.insert(b))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# histomix binned-sample v1\n");
        write_breakpoints(&mut s, &self.partition);
        let _ = writeln!(s, "n {}", self.n());
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(s, "obs {i} {} {} {}", c[0], c[1], c[2]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut partition = None;
        let mut n = None;
        let mut cells = Vec::new();
        for (lineno, line) in data_lines(text) {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("breakpoints") => partition = Some(parse_breakpoints(it, lineno)?),
                Some("n") => n = Some(parse_field::<usize>(it.next(), lineno)?),
                Some("obs") => {
                    let i: usize = parse_field(it.next(), lineno)?;
                    if i != cells.len() {
                        return Err(Error::Parse(format!("line {lineno}: observation {i} out of order")));
                    }
                    let mut c = [0u32; 3];
                    for b in c.iter_mut() {
                        *b = parse_field(it.next(), lineno)?;
                    }
                    cells.push(c);
                }
                Some(other) => return Err(Error::Parse(format!("line {lineno}: unknown key '{other}'"))),
                None => {}
            }
        }
        let partition = partition.ok_or_else(|| Error::Parse("missing breakpoints".into()))?;
        if let Some(n) = n {
            if n != cells.len() {
                return Err(Error::Parse(format!("header says n = {n}, found {} rows", cells.len())));
            }
        }
        Self::from_cells(partition, cells)
    }
}

/// Bins raw observations on `part`.
pub fn bin_sample(raw: &[Observation], part: &Partition) -> Result<BinnedSample> {
    let mut cells = Vec::with_capacity(raw.len());
    for (i, x) in raw.iter().enumerate() {
        let mut cell = [0u32; 3];
        for c in 0..3 {
            cell[c] = part
                .bin_index(x[c])
                .map_err(|_| Error::Domain(format!("observation {i}, coordinate {c}: {} outside [0,1]", x[c])))?
                as u32;
        }
        cells.push(cell);
    }
    BinnedSample::from_cells(part.clone(), cells)
}

/// Weights and bin masses of the binned mixture.
#[derive(Clone, Debug)]
pub struct MixtureParams {
    theta: Vec<f64>,
    omega: Vec<f64>,
    partition: Partition,
    repeated: bool,
}

fn sum_tol(len: usize) -> f64 {
    1e-12 + len as f64 * f64::EPSILON
}

impl MixtureParams {
    /// Validates and builds parameters. `omega` is flattened `[j][c][m]`.
    pub fn new(theta: Vec<f64>, omega: Vec<f64>, partition: Partition, repeated: bool) -> Result<Self> {
        let k = theta.len();
        let m = partition.len();
        if k == 0 {
            return Err(Error::Usage("at least one component is required".into()));
        }
        if omega.len() != k * 3 * m {
            return Err(Error::Usage(format!(
                "omega has {} entries, expected k*3*M = {}",
                omega.len(),
                k * 3 * m
            )));
        }
        if theta.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Usage("weights must be non-negative".into()));
        }
        let ts: f64 = theta.iter().sum();
        if (ts - 1.0).abs() > sum_tol(k) {
            return Err(Error::Usage(format!("weights sum to {ts}")));
        }
        if omega.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Usage("bin masses must be non-negative".into()));
        }
        for (r, row) in omega.chunks(m).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > sum_tol(m) {
                return Err(Error::Usage(format!(
                    "bin masses of component {}, coordinate {} sum to {s}",
                    r / 3,
                    r % 3
                )));
            }
        }
        if repeated {
            for j in 0..k {
                let b = j * 3 * m;
                if omega[b..b + m] != omega[b + m..b + 2 * m] || omega[b..b + m] != omega[b + 2 * m..b + 3 * m] {
                    return Err(Error::Usage(format!(
                        "repeated parameters differ across coordinates for component {j}"
                    )));
                }
            }
        }
        Ok(Self { theta, omega, partition, repeated })
    }

    /// Repeated-setting constructor: one mass row per component.
    pub fn new_repeated(theta: Vec<f64>, rows: Vec<Vec<f64>>, partition: Partition) -> Result<Self> {
        let m = partition.len();
        let mut omega = Vec::with_capacity(rows.len() * 3 * m);
        for row in &rows {
            if row.len() != m {
                return Err(Error::Usage(format!("mass row of length {} for {m} bins", row.len())));
            }
            for _ in 0..3 {
                omega.extend_from_slice(row);
            }
        }
        Self::new(theta, omega, partition, true)
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn bins(&self) -> usize {
        self.partition.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Flattened `[j][c][m]` masses.
    pub fn omega_flat(&self) -> &[f64] {
        &self.omega
    }

    pub fn omega(&self, j: usize, c: usize, m: usize) -> f64 {
        self.omega[(j * 3 + c) * self.bins() + m]
    }

    pub fn omega_row(&self, j: usize, c: usize) -> &[f64] {
        let m = self.bins();
        &self.omega[(j * 3 + c) * m..(j * 3 + c + 1) * m]
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn is_repeated(&self) -> bool {
        self.repeated
    }

    /// `prod_c omega[j,c,m_c]`.
    pub fn component_cell_mass(&self, j: usize, cell: &Cell) -> f64 {
        (0..3).map(|c| self.omega(j, c, cell[c] as usize)).product()
    }

    /// `sum_j theta_j prod_c omega[j,c,m_c]`.
    pub fn cell_probability(&self, cell: &Cell) -> f64 {
        (0..self.k())
            .map(|j| self.theta[j] * self.component_cell_mass(j, cell))
            .sum()
    }

    /// `sum_c ln |I_{m_c}|`, the histogram-density normalization of a cell.
    pub fn log_cell_volume(&self, cell: &Cell) -> f64 {
        cell.iter().map(|&m| self.partition.bin_len(m as usize).ln()).sum()
    }

    /// Log-likelihood of the histogram density, `-inf` on a support violation.
    pub fn log_likelihood(&self, data: &BinnedSample) -> Result<f64> {
        if data.partition() != &self.partition {
            return Err(Error::Usage("data and parameters use different partitions".into()));
        }
        let mut ll = 0.0;
        for (cell, &count) in data.counts() {
            let p = self.cell_probability(cell);
            if p <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            ll += count as f64 * (p.ln() - self.log_cell_volume(cell));
        }
        Ok(ll)
    }

    /// Relabels components: new component `i` is old component `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Usage(format!("{perm:?} is not a permutation of {k} components")));
        }
        let block = 3 * self.bins();
        let theta = perm.iter().map(|&p| self.theta[p]).collect();
        let mut omega = Vec::with_capacity(self.omega.len());
        for &p in perm {
            omega.extend_from_slice(&self.omega[p * block..(p + 1) * block]);
        }
        Ok(Self { theta, omega, partition: self.partition.clone(), repeated: self.repeated })
    }

    /// Components sorted by ascending weight; ties broken by lexicographic order
    /// of the first-coordinate mass rows.
    pub fn canonical_order(&self) -> Self {
        let mut perm: Vec<usize> = (0..self.k()).collect();
        perm.sort_by(|&a, &b| {
            self.theta[a].total_cmp(&self.theta[b]).then_with(|| {
                let ra = self.omega_row(a, 0);
                let rb = self.omega_row(b, 0);
                ra.iter()
                    .zip(rb)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        self.permute(&perm).expect("sorting yields a permutation")
    }

    /// Draws `count` cells from the binned model.
    pub fn sample_cells<R: rand::Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Cell> {
        fn pick<R: rand::Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        }
        (0..count)
            .map(|_| {
                let j = pick(&self.theta, rng);
                let mut cell = [0u32; 3];
                for (c, slot) in cell.iter_mut().enumerate() {
                    *slot = pick(self.omega_row(j, c), rng) as u32;
                }
                cell
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# histomix mixture-params v1\n");
        let _ = writeln!(s, "k {}", self.k());
        let _ = writeln!(s, "repeated {}", self.repeated);
        write_breakpoints(&mut s, &self.partition);
        for (j, t) in self.theta.iter().enumerate() {
            let _ = writeln!(s, "theta {j} {t:?}");
        }
        let m = self.bins();
        for j in 0..self.k() {
            for c in 0..3 {
                for b in 0..m {
                    let _ = writeln!(s, "omega {j} {c} {b} {:?}", self.omega(j, c, b));
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut k = None;
        let mut repeated = false;
        let mut partition: Option<Partition> = None;
        let mut theta: Vec<Option<f64>> = Vec::new();
        let mut omega: Vec<Option<f64>> = Vec::new();
        for (lineno, line) in data_lines(text) {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("k") => {
                    let kk: usize = parse_field(it.next(), lineno)?;
                    k = Some(kk);
                    theta = vec![None; kk];
                }
                Some("repeated") => repeated = parse_field(it.next(), lineno)?,
                Some("breakpoints") => partition = Some(parse_breakpoints(it, lineno)?),
                Some("theta") => {
                    let j: usize = parse_field(it.next(), lineno)?;
                    let v: f64 = parse_field(it.next(), lineno)?;
                    *theta
                        .get_mut(j)
                        .ok_or_else(|| Error::Parse(format!("line {lineno}: component {j} out of range")))? = Some(v);
                }
                Some("omega") => {
                    let (kk, part) = match (k, &partition) {
                        (Some(kk), Some(p)) => (kk, p),
                        _ => return Err(Error::Parse(format!("line {lineno}: omega before k/breakpoints"))),
                    };
                    let m = part.len();
                    if omega.is_empty() {
                        omega = vec![None; kk * 3 * m];
                    }
                    let j: usize = parse_field(it.next(), lineno)?;
                    let c: usize = parse_field(it.next(), lineno)?;
                    let b: usize = parse_field(it.next(), lineno)?;
                    let v: f64 = parse_field(it.next(), lineno)?;
                    if j >= kk || c >= 3 || b >= m {
                        return Err(Error::Parse(format!("line {lineno}: index out of range")));
                    }
                    omega[(j * 3 + c) * m + b] = Some(v);
                }
                Some(other) => return Err(Error::Parse(format!("line {lineno}: unknown key '{other}'"))),
                None => {}
            }
        }
        let partition = partition.ok_or_else(|| Error::Parse("missing breakpoints".into()))?;
        let theta: Option<Vec<f64>> = theta.into_iter().collect();
        let omega: Option<Vec<f64>> = omega.into_iter().collect();
        match (theta, omega) {
            (Some(t), Some(o)) if !t.is_empty() && !o.is_empty() => Self::new(t, o, partition, repeated)
                .map_err(|e| Error::Parse(format!("invalid parameters: {e}"))),
            _ => Err(Error::Parse("missing theta or omega entries".into())),
        }
    }
}

/// JSON shape of [`MixtureParams`].
#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    k: usize,
    repeated: bool,
    breakpoints: Vec<f64>,
    theta: Vec<f64>,
    /// `omega[j][c]` is the mass row of component `j`, coordinate `c`.
    omega: Vec<Vec<Vec<f64>>>,
}

impl Serialize for MixtureParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRepr {
            k: self.k(),
            repeated: self.repeated,
            breakpoints: self.partition.breakpoints().to_vec(),
            theta: self.theta.clone(),
            omega: (0..self.k())
                .map(|j| (0..3).map(|c| self.omega_row(j, c).to_vec()).collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixtureParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ParamsRepr::deserialize(d)?;
        let part = Partition::from_breakpoints(r.breakpoints).map_err(D::Error::custom)?;
        let omega: Vec<f64> = r.omega.into_iter().flatten().flatten().collect();
        if r.theta.len() != r.k {
            return Err(D::Error::custom("k does not match theta length"));
        }
        MixtureParams::new(r.theta, omega, part, r.repeated).map_err(D::Error::custom)
    }
}

/// Label-switching distance: Euclidean distance between the ascending-sorted
/// weight vectors, equal to the minimum over component permutations.
pub fn tk_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!("weight vectors of lengths {} and {}", a.len(), b.len())));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Squared [`tk_distance`].
pub fn tk_distance_sq(a: &[f64], b: &[f64]) -> Result<f64> {
    tk_distance(a, b).map(|d| d * d)
}

/// Loss used by risks and cross-validation criteria.
///
/// `Free` compares the first `k-1` entries of the sorted weight vectors, the
/// free coordinates of the weight simplex; `Full` compares all `k` entries
/// and equals the squared [`tk_distance`]. For `k = 2`, `Full` is twice `Free`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Free,
    Full,
}

impl Metric {
    /// Number of sorted coordinates compared for `k` components.
    pub fn coords(self, k: usize) -> usize {
        match self {
            Metric::Free => k.saturating_sub(1),
            Metric::Full => k,
        }
    }

    pub fn distance_sq(self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Usage(format!("weight vectors of lengths {} and {}", a.len(), b.len())));
        }
        let mut sa = a.to_vec();
        let mut sb = b.to_vec();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let d = self.coords(a.len());
        Ok(sa[..d].iter().zip(&sb[..d]).map(|(x, y)| (x - y) * (x - y)).sum())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Metric::Free),
            "full" => Ok(Metric::Full),
            _ => Err(Error::Config(format!("unknown metric '{s}' (expected free or full)"))),
        }
    }
}

fn write_breakpoints(s: &mut String, part: &Partition) {
    s.push_str("breakpoints");
    for t in part.breakpoints() {
        let _ = write!(s, " {t:?}");
    }
    s.push('\n');
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, lineno: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse(format!("line {lineno}: missing field")))?;
    tok.parse()
        .map_err(|_| Error::Parse(format!("line {lineno}: cannot parse '{tok}'")))
}

fn parse_breakpoints<'a>(it: impl Iterator<Item = &'a str>, lineno: usize) -> Result<Partition> {
    let breaks = it
        .map(|t| parse_field::<f64>(Some(t), lineno))
        .collect::<Result<Vec<_>>>()?;
    Partition::from_breakpoints(breaks).map_err(|e| Error::Parse(format!("line {lineno}: {e}")))
}
