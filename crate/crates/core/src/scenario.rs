//! Data-generating processes: true weights, emission densities, sampling and
//! exact bin masses.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::EmissionDistribution;
use crate::error::{Error, Result};
use crate::model::MixtureParams;
use crate::partition::Partition;
use crate::rng::StreamRng;

/// One observation: three coordinates in `[0,1]`.
pub type Observation = [f64; 3];

/// A three-coordinate mixture with closed-form emissions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub theta: Vec<f64>,
    /// `emissions[j][c]` is the density of coordinate `c` in population `j`.
    pub emissions: Vec<[EmissionDistribution; 3]>,
    pub repeated: bool,
}

/// On-disk scenario description (TOML).
///
/// ```toml
/// theta = [0.3, 0.7]
/// repeated = true
///
/// [[components]]
/// emissions = [{ kind = "truncated-normal", mu = 0.8, sigma = 0.07 }]
///
/// [[components]]
/// emissions = [{ kind = "truncated-normal", mu = 0.3333333333, sigma = 0.1 }]
/// ```
///
/// With `repeated = true` each component lists a single emission shared by all
/// coordinates; otherwise three.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub k: Option<usize>,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub repeated: bool,
    pub components: Vec<ComponentSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub emissions: Vec<EmissionDistribution>,
}

/// Raw sample with latent labels kept for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub observations: Vec<Observation>,
    pub labels: Vec<usize>,
}

impl TrueModel {
    pub fn new(theta: Vec<f64>, emissions: Vec<[EmissionDistribution; 3]>, repeated: bool) -> Result<Self> {
        let model = Self { theta, emissions, repeated };
        model.validate()?;
        Ok(model)
    }

    /// All coordinates of population `j` share `emission[j]`.
    pub fn repeated(theta: Vec<f64>, emission: Vec<EmissionDistribution>) -> Result<Self> {
        let emissions = emission.into_iter().map(|e| [e; 3]).collect();
        Self::new(theta, emissions, true)
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.theta.len();
        if k == 0 {
            return Err(Error::Config("a scenario needs at least one component".into()));
        }
        if self.emissions.len() != k {
            return Err(Error::Config(format!(
                "{} emission rows for {k} weights",
                self.emissions.len()
            )));
        }
        if self.theta.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("true weights must be strictly positive".into()));
        }
        let s: f64 = self.theta.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("true weights sum to {s}, not 1")));
        }
        for row in &self.emissions {
            for e in row {
                e.validate()?;
            }
            if self.repeated && !(row[0] == row[1] && row[1] == row[2]) {
                return Err(Error::Config(
                    "repeated scenario with differing coordinate emissions".into(),
                ));
            }
        }
        Ok(())
    }

    /// Simulation 1: `(0.3, 0.7)`, truncated `N(4/5, 0.07^2)` and `N(1/3, 0.1^2)`.
    pub fn sim1() -> Self {
        Self::repeated(
            vec![0.3, 0.7],
            vec![
                EmissionDistribution::TruncatedNormal { mu: 4.0 / 5.0, sigma: 0.07 },
                EmissionDistribution::TruncatedNormal { mu: 1.0 / 3.0, sigma: 0.1 },
            ],
        )
        .expect("preset is valid")
    }

    /// Simulation 2: `(0.2, 0.8)`, uniform and truncated `N(2/3, 0.05^2)`.
    pub fn sim2() -> Self {
        Self::repeated(
            vec![0.2, 0.8],
            vec![
                EmissionDistribution::Uniform,
                EmissionDistribution::TruncatedNormal { mu: 2.0 / 3.0, sigma: 0.05 },
            ],
        )
        .expect("preset is valid")
    }

    /// Simulation 3: `(0.3, 0.7)`, `Beta(1,2)` and `Beta(5,3)`.
    pub fn sim3() -> Self {
        Self::repeated(
            vec![0.3, 0.7],
            vec![
                EmissionDistribution::Beta { a: 1.0, b: 2.0 },
                EmissionDistribution::Beta { a: 5.0, b: 3.0 },
            ],
        )
        .expect("preset is valid")
    }

    /// Named preset lookup: `sim1`, `sim2`, `sim3`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "sim1" => Ok(Self::sim1()),
            "sim2" => Ok(Self::sim2()),
            "sim3" => Ok(Self::sim3()),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected sim1, sim2 or sim3)"
            ))),
        }
    }

    pub fn from_file_spec(spec: ScenarioFile) -> Result<Self> {
        if let Some(k) = spec.k {
            if k != spec.theta.len() {
                return Err(Error::Config(format!(
                    "k = {k} but theta has {} entries",
                    spec.theta.len()
                )));
            }
        }
        let mut emissions = Vec::with_capacity(spec.components.len());
        for (j, comp) in spec.components.iter().enumerate() {
            let row = match (spec.repeated, comp.emissions.as_slice()) {
                (true, [e]) => [*e; 3],
                (_, [a, b, c]) => [*a, *b, *c],
                _ => {
                    return Err(Error::Config(format!(
                        "component {j}: expected {} emission(s), got {}",
                        if spec.repeated { "1 or 3" } else { "3" },
                        comp.emissions.len()
                    )))
                }
            };
            emissions.push(row);
        }
        Self::new(spec.theta, emissions, spec.repeated)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario file: {e}")))?;
        Self::from_file_spec(spec)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Draws `n` observations with a generator seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Sample {
        let mut rng = crate::rng::substream(seed, 0);
        self.sample_with(n, &mut rng)
    }

    /// Draws `n` observations: component by inverse CDF on the weights, then
    /// each coordinate by inverse CDF of its emission.
    pub fn sample_with(&self, n: usize, rng: &mut StreamRng) -> Sample {
        let mut observations = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let k = self.k();
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut j = k - 1;
            for (idx, &t) in self.theta.iter().enumerate() {
                acc += t;
                if u < acc {
                    j = idx;
                    break;
                }
            }
            let mut x = [0.0; 3];
            for (c, xc) in x.iter_mut().enumerate() {
                *xc = self.emissions[j][c].quantile(rng.random());
            }
            observations.push(x);
            labels.push(j);
        }
        Sample { observations, labels }
    }

    /// Exact bin masses, flattened as `[j][c][m]` (`j*3*M + c*M + m`).
    pub fn true_bin_masses(&self, part: &Partition) -> Vec<f64> {
        let m = part.len();
        let t = part.breakpoints();
        let mut out = vec![0.0; self.k() * 3 * m];
        for (j, row) in self.emissions.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                let base = (j * 3 + c) * m;
                for b in 0..m {
                    out[base + b] = e.mass(t[b], t[b + 1]);
                }
            }
        }
        out
    }

    /// `(theta*, omega*_M)` on `part`, components in canonical order.
    pub fn true_params(&self, part: &Partition) -> Result<MixtureParams> {
        let params = MixtureParams::new(
            self.theta.clone(),
            self.true_bin_masses(part),
            part.clone(),
            self.repeated,
        )?;
        Ok(params.canonical_order())
    }

    /// Mixture density `sum_j theta_j prod_c f_{j,c}(x_c)`.
    pub fn density(&self, x: &Observation) -> f64 {
        self.theta
            .iter()
            .zip(&self.emissions)
            .map(|(t, row)| t * row[0].pdf(x[0]) * row[1].pdf(x[1]) * row[2].pdf(x[2]))
            .sum()
    }

    /// Weights sorted ascending.
    pub fn sorted_theta(&self) -> Vec<f64> {
        let mut t = self.theta.clone();
        t.sort_by(f64::total_cmp);
        t
    }
}
