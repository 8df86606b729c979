//! Closed-form emission densities on `[0,1]`.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, inv_beta_reg, ln_beta};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Emission density of one coordinate given the latent population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmissionDistribution {
    Uniform,
    /// Normal `N(mu, sigma^2)` conditioned on `[0,1]`.
    TruncatedNormal { mu: f64, sigma: f64 },
    Beta { a: f64, b: f64 },
}

/// Lower tail of the standard normal.
fn phi_lower(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Upper tail of the standard normal.
fn phi_upper(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `P(lo <= Z < hi)` for a standard normal, accurate in both tails.
fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        phi_upper(lo) - phi_upper(hi)
    } else {
        phi_lower(hi) - phi_lower(lo)
    }
}

impl EmissionDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform => Ok(()),
            Self::TruncatedNormal { mu, sigma } => {
                if !mu.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::Config(format!(
                        "truncated normal needs finite mu and sigma > 0, got ({mu}, {sigma})"
                    )));
                }
                let z = normal_mass(-mu / sigma, (1.0 - mu) / sigma);
                if !(z > 0.0) {
                    return Err(Error::Config(format!(
                        "truncated normal ({mu}, {sigma}) has no mass on [0,1]"
                    )));
                }
                Ok(())
            }
            Self::Beta { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::Config(format!("beta needs a, b > 0, got ({a}, {b})")));
                }
                Ok(())
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match *self {
            Self::Uniform => 1.0,
            Self::TruncatedNormal { mu, sigma } => {
                let z = (x - mu) / sigma;
                let norm = normal_mass(-mu / sigma, (1.0 - mu) / sigma);
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt() * norm)
            }
            Self::Beta { a, b } => {
                if (x == 0.0 && a < 1.0) || (x == 1.0 && b < 1.0) {
                    return f64::INFINITY;
                }
                let log = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b);
                if log.is_nan() {
                    // 0 * ln 0 at an endpoint with exponent exactly zero
                    (-ln_beta(a, b)).exp()
                } else {
                    log.exp()
                }
            }
        }
    }

    /// Probability of `[lo, hi)`; exact 0 and 1 at the endpoints of `[0,1]`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.clamp(0.0, 1.0);
        let hi = hi.clamp(0.0, 1.0);
        if hi <= lo {
            return 0.0;
        }
        let m = match *self {
            Self::Uniform => hi - lo,
            Self::TruncatedNormal { mu, sigma } => {
                let total = normal_mass(-mu / sigma, (1.0 - mu) / sigma);
                normal_mass((lo - mu) / sigma, (hi - mu) / sigma) / total
            }
            Self::Beta { a, b } => {
                if lo > 0.5 {
                    // upper region: use the reflected incomplete beta for precision
                    beta_reg(b, a, 1.0 - lo) - beta_reg(b, a, 1.0 - hi)
                } else {
                    beta_reg(a, b, hi) - beta_reg(a, b, lo)
                }
            }
        };
        m.max(0.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            self.mass(0.0, x)
        }
    }

    /// Inverse CDF on `(0,1)`, clamped to `[0,1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let x = match *self {
            Self::Uniform => u,
            Self::TruncatedNormal { mu, sigma } => {
                let lo = -mu / sigma;
                let hi = (1.0 - mu) / sigma;
                let z = if lo >= 0.0 {
                    let total = phi_upper(lo) - phi_upper(hi);
                    let q = phi_upper(lo) - u * total;
                    SQRT_2 * erfc_inv(2.0 * q)
                } else {
                    let total = phi_lower(hi) - phi_lower(lo);
                    let p = phi_lower(lo) + u * total;
                    -SQRT_2 * erfc_inv(2.0 * p)
                };
                mu + sigma * z
            }
            Self::Beta { a, b } => {
                if u <= 0.0 {
                    return 0.0;
                }
                if u >= 1.0 {
                    return 1.0;
                }
                let mut x = inv_beta_reg(a, b, u).clamp(0.0, 1.0);
                // Newton polish; the closed-form inverse is only approximate.
                for _ in 0..3 {
                    let f = beta_reg(a, b, x) - u;
                    let d = self.pdf(x);
                    if !(d > 0.0) || !d.is_finite() {
                        break;
                    }
                    let next = (x - f / d).clamp(0.0, 1.0);
                    if (next - x).abs() < 1e-15 {
                        x = next;
                        break;
                    }
                    x = next;
                }
                x
            }
        };
        x.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson rule, used as an independent check of the CDF formulas.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn endpoints_are_exact() {
        for d in [
            EmissionDistribution::Uniform,
            EmissionDistribution::TruncatedNormal { mu: 0.8, sigma: 0.07 },
            EmissionDistribution::Beta { a: 5.0, b: 3.0 },
        ] {
            assert_eq!(d.cdf(0.0), 0.0);
            assert_eq!(d.cdf(1.0), 1.0);
            assert!((d.mass(0.0, 1.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_1_2_half() {
        let d = EmissionDistribution::Beta { a: 1.0, b: 2.0 };
        assert!((d.mass(0.0, 0.5) - 0.75).abs() < 1e-12);
        assert!((d.mass(0.5, 1.0) - 0.25).abs() < 1e-12);
        let quad = simpson(|x| d.pdf(x), 0.0, 0.5, 2000);
        assert!((quad - 0.75).abs() < 1e-10);
    }

    #[test]
    fn masses_match_quadrature() {
        for d in [
            EmissionDistribution::TruncatedNormal { mu: 0.8, sigma: 0.07 },
            EmissionDistribution::TruncatedNormal { mu: 1.0 / 3.0, sigma: 0.1 },
            EmissionDistribution::TruncatedNormal { mu: 2.0 / 3.0, sigma: 0.05 },
            EmissionDistribution::Beta { a: 5.0, b: 3.0 },
            EmissionDistribution::Beta { a: 1.0, b: 2.0 },
        ] {
            for i in 0..8 {
                let lo = i as f64 / 8.0;
                let hi = (i + 1) as f64 / 8.0;
                let quad = simpson(|x| d.pdf(x), lo, hi, 4000);
                assert!((d.mass(lo, hi) - quad).abs() < 1e-8, "{d:?} bin {i}");
            }
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for d in [
            EmissionDistribution::Uniform,
            EmissionDistribution::TruncatedNormal { mu: 0.8, sigma: 0.07 },
            EmissionDistribution::TruncatedNormal { mu: 1.2, sigma: 0.1 },
            EmissionDistribution::Beta { a: 5.0, b: 3.0 },
            EmissionDistribution::Beta { a: 1.0, b: 2.0 },
        ] {
            for i in 1..20 {
                let u = i as f64 / 20.0;
                let x = d.quantile(u);
                assert!((d.cdf(x) - u).abs() < 1e-9, "{d:?} u={u} x={x}");
            }
        }
    }

    #[test]
    fn validation() {
        assert!(EmissionDistribution::TruncatedNormal { mu: 0.5, sigma: 0.0 }.validate().is_err());
        assert!(EmissionDistribution::Beta { a: -1.0, b: 1.0 }.validate().is_err());
        assert!(EmissionDistribution::Uniform.validate().is_ok());
    }
}
