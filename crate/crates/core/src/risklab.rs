//! Monte Carlo experiments: risk curves over dyadic grids, the comparison of
//! block criteria, the selection oracle gap and the efficiency check.
//!
//! Replication `r` draws its dataset from stream `r` of the master seed and
//! uses `mix(seed, r)` for everything random downstream. Replications run on
//! the rayon pool and are aggregated in index order, so results do not
//! depend on the number of workers.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::fisher::efficient_variance_prediction;
use crate::io::{fmt_f64, CsvTable};
use crate::model::Metric;
use crate::modelsel::{
    default_reference, dyadic_candidates, make_blocks, select_partition, EmEstimator, SchemeKind, WeightEstimator,
};
use crate::partition::{reference_p, Partition};
use crate::rng::{mix, substream};
use crate::scenario::{Observation, TrueModel};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    /// Mean squared sorted-weight distance to the truth.
    pub risk: f64,
    pub bias2: f64,
    pub variance: f64,
    /// Successful replications.
    pub reps: usize,
    /// Standard error of `risk`.
    pub se: f64,
    pub failures: usize,
    /// Sorted estimates per successful replication.
    pub estimates: Vec<Vec<f64>>,
}

impl RiskEstimate {
    /// Aggregates sorted estimates against the sorted truth.
    pub fn from_estimates(truth: &[f64], estimates: Vec<Vec<f64>>, failures: usize, metric: Metric) -> Result<Self> {
        let total = estimates.len() + failures;
        if total == 0 {
            return Err(Error::Experiment("no replications".into()));
        }
        if failures as f64 > MAX_FAILURE_RATE * total as f64 {
            return Err(Error::Experiment(format!("{failures} of {total} replications failed")));
        }
        let r = estimates.len() as f64;
        let k = metric.coords(truth.len());
        let losses: Vec<f64> = estimates
            .iter()
            .map(|e| metric.distance_sq(e, truth))
            .collect::<Result<_>>()?;
        let risk = losses.iter().sum::<f64>() / r;
        let se = if estimates.len() > 1 {
            (losses.iter().map(|l| (l - risk).powi(2)).sum::<f64>() / (r - 1.0)).sqrt() / r.sqrt()
        } else {
            f64::NAN
        };
        let mean: Vec<f64> = (0..k).map(|j| estimates.iter().map(|e| e[j]).sum::<f64>() / r).collect();
        let bias2 = mean.iter().zip(truth).map(|(m, t)| (m - t).powi(2)).sum();
        let variance = estimates
            .iter()
            .map(|e| e[..k].iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / r;
        Ok(Self { risk, bias2, variance, reps: estimates.len(), se, failures, estimates })
    }

    /// Standard error of `sqrt(risk)` by the delta method.
    pub fn se_sqrt(&self) -> f64 {
        self.se / (2.0 * self.risk.sqrt())
    }

    pub fn sqrt_risk(&self) -> f64 {
        self.risk.sqrt()
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn dataset(model: &TrueModel, n: usize, seed: u64, rep: usize) -> Vec<Observation> {
    model.sample_with(n, &mut substream(seed, rep as u64)).observations
}

fn check_reps(reps: usize, min: usize) -> Result<()> {
    if reps < min {
        return Err(Error::Usage(format!("at least {min} replications are required, got {reps}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
/// Risk of an arbitrary estimator on every partition in `parts`, all
/// partitions sharing the same datasets.
pub fn risk_table_with(
    model: &TrueModel,
    parts: &[Partition],
    n: usize,
    k: usize,
    estimator: &dyn WeightEstimator,
    reps: usize,
    seed: u64,
    metric: Metric,
) -> Result<Vec<RiskEstimate>> {
    check_reps(reps, 2)?;
    let per_rep: Vec<Vec<Result<Vec<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let obs = dataset(model, n, seed, r);
            parts
                .iter()
                .map(|part| estimator.estimate(&obs, part, k, r as u64).map(sorted))
                .collect()
        })
        .collect();
    let truth = model.sorted_theta();
    (0..parts.len())
        .map(|i| {
            let mut est = Vec::with_capacity(reps);
            let mut failures = 0;
            for row in &per_rep {
                match &row[i] {
                    Ok(e) => est.push(e.clone()),
                    Err(_) => failures += 1,
                }
            }
            RiskEstimate::from_estimates(&truth, est, failures, metric)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
/// `E |theta_hat - theta*|^2` of the EM estimator on one partition.
pub fn estimate_risk(
    model: &TrueModel,
    part: &Partition,
    n: usize,
    k: usize,
    cfg: &EmConfig,
    reps: usize,
    seed: u64,
    metric: Metric,
) -> Result<RiskEstimate> {
    let est = EmEstimator { cfg: cfg.clone() };
    Ok(risk_table_with(model, std::slice::from_ref(part), n, k, &est, reps, seed, metric)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub p: u32,
    pub estimate: RiskEstimate,
}

#[allow(clippy::too_many_arguments)]
/// Risk, squared bias and variance of the EM estimator along dyadic grids.
pub fn risk_curve(
    model: &TrueModel,
    n: usize,
    k: usize,
    ps: &[u32],
    cfg: &EmConfig,
    reps: usize,
    seed: u64,
    metric: Metric,
) -> Result<Vec<RiskPoint>> {
    let parts: Vec<Partition> = ps.iter().map(|&p| Partition::dyadic(p)).collect::<Result<_>>()?;
    let est = EmEstimator { cfg: cfg.clone() };
    let table = risk_table_with(model, &parts, n, k, &est, reps, seed, metric)?;
    Ok(ps.iter().zip(table).map(|(&p, estimate)| RiskPoint { p, estimate }).collect())
}

pub fn risk_curve_csv(points: &[RiskPoint]) -> String {
    let mut t = CsvTable::new(&["P", "risk", "bias2", "var", "se"]);
    for pt in points {
        let e = &pt.estimate;
        t.row(&[pt.p.to_string(), fmt_f64(e.risk), fmt_f64(e.bias2), fmt_f64(e.variance), fmt_f64(e.se)]);
    }
    t.finish()
}

/// One line of the criterion comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// `oracle_min`, `reference` or a scheme name.
    pub label: String,
    pub sqrt_risk: f64,
    pub se_sqrt_risk: f64,
    pub risk: f64,
    /// Mean chosen dyadic exponent (the fixed or best exponent for oracle rows).
    pub mean_p: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub n: usize,
    pub k: usize,
    pub p_max: u32,
    pub rows: Vec<ComparisonRow>,
    /// Chosen exponent per scheme and replication.
    pub chosen_p: Vec<Vec<u32>>,
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

struct RepOutcome {
    /// Sorted full-sample estimate per exponent `1..=p_max`.
    fits: Vec<Vec<f64>>,
    /// Chosen exponent per scheme.
    chosen: Vec<u32>,
}

/// Squared risk of the estimator selected by each scheme, next to the best
/// fixed grid and the reference grid, on shared datasets.
#[allow(clippy::too_many_arguments)]
pub fn criterion_comparison(
    model: &TrueModel,
    scenario: &str,
    n: usize,
    k: usize,
    schemes: &[SchemeKind],
    p_max: u32,
    cfg: &EmConfig,
    reps: usize,
    seed: u64,
    metric: Metric,
) -> Result<Comparison> {
    check_reps(reps, 2)?;
    if p_max == 0 {
        return Err(Error::Usage("the candidate family needs p_max >= 1".into()));
    }
    for s in schemes {
        s.sizes(n)?;
    }
    let candidates = dyadic_candidates(p_max)?;
    let reference = default_reference(k)?;
    let outcomes: Vec<Result<RepOutcome>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let obs = dataset(model, n, seed, r);
            let rep_seed = mix(seed, r as u64);
            let est = EmEstimator { cfg: cfg.with_seed(rep_seed) };
            let fits = candidates
                .iter()
                .map(|part| est.estimate(&obs, part, k, u64::MAX).map(sorted))
                .collect::<Result<Vec<_>>>()?;
            let chosen = schemes
                .iter()
                .map(|&kind| {
                    let scheme = make_blocks(n, kind, rep_seed)?;
                    let report = select_partition(&obs, &candidates, Some(&reference), &scheme, &est, k, metric)?;
                    Ok(report.chosen_p.expect("dyadic candidates"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RepOutcome { fits, chosen })
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    let ok: Vec<RepOutcome> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let truth = model.sorted_theta();
    let mut rows = Vec::new();

    let per_p: Vec<RiskEstimate> = (0..p_max as usize)
        .map(|i| RiskEstimate::from_estimates(&truth, ok.iter().map(|o| o.fits[i].clone()).collect(), failures, metric))
        .collect::<Result<_>>()?;
    let best = (0..per_p.len()).min_by(|&a, &b| per_p[a].risk.total_cmp(&per_p[b].risk)).unwrap();
    let push = |rows: &mut Vec<ComparisonRow>, label: &str, e: &RiskEstimate, mean_p: f64| {
        rows.push(ComparisonRow {
            label: label.to_string(),
            sqrt_risk: e.sqrt_risk(),
            se_sqrt_risk: e.se_sqrt(),
            risk: e.risk,
            mean_p,
            reps: e.reps,
        })
    };
    push(&mut rows, "oracle_min", &per_p[best], (best + 1) as f64);
    let p0 = reference_p(k);
    if p0 >= 1 && p0 <= p_max {
        push(&mut rows, "reference", &per_p[p0 as usize - 1], p0 as f64);
    }
    let mut chosen_p = Vec::new();
    for (s, kind) in schemes.iter().enumerate() {
        let picks: Vec<u32> = ok.iter().map(|o| o.chosen[s]).collect();
        let est: Vec<Vec<f64>> = ok.iter().map(|o| o.fits[o.chosen[s] as usize - 1].clone()).collect();
        let e = RiskEstimate::from_estimates(&truth, est, failures, metric)?;
        let mean_p = picks.iter().map(|&p| p as f64).sum::<f64>() / picks.len() as f64;
        push(&mut rows, &kind.to_string(), &e, mean_p);
        chosen_p.push(picks);
    }
    Ok(Comparison { scenario: scenario.to_string(), n, k, p_max, rows, chosen_p })
}

pub fn comparison_csv(tables: &[Comparison]) -> String {
    let mut t = CsvTable::new(&["scenario", "n", "criterion", "sqrt_risk", "se_sqrt_risk", "risk", "mean_p", "reps"]);
    for c in tables {
        for r in &c.rows {
            t.row(&[
                c.scenario.clone(),
                c.n.to_string(),
                r.label.clone(),
                fmt_f64(r.sqrt_risk),
                fmt_f64(r.se_sqrt_risk),
                fmt_f64(r.risk),
                fmt_f64(r.mean_p),
                r.reps.to_string(),
            ]);
        }
    }
    t.finish()
}

/// Per sample size: empirical covariance of `sqrt(n)(theta_hat - theta*)`
/// (sorted weights, first `k-1` coordinates) against the inverse efficient
/// information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    /// Row-major `(k-1) x (k-1)`.
    pub empirical: Vec<f64>,
    /// Relative Frobenius distance to the prediction.
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub p: u32,
    pub dim: usize,
    /// Row-major inverse efficient information.
    pub predicted: Vec<f64>,
    pub rows: Vec<EfficiencyRow>,
}

pub fn efficiency_experiment(
    model: &TrueModel,
    p: u32,
    n_list: &[usize],
    k: usize,
    cfg: &EmConfig,
    reps: usize,
    seed: u64,
) -> Result<EfficiencyReport> {
    check_reps(reps, 2)?;
    if k != model.k() {
        return Err(Error::Usage(format!("efficiency needs k = {} (the model's), got {k}", model.k())));
    }
    let predicted = efficient_variance_prediction(model, p)?;
    let dim = predicted.nrows();
    let part = Partition::dyadic(p)?;
    let cfg = EmConfig { repeated: model.repeated, ..cfg.clone() };
    let truth = model.sorted_theta();
    let mut rows = Vec::new();
    for (idx, &n) in n_list.iter().enumerate() {
        let table = risk_table_with(
            model,
            std::slice::from_ref(&part),
            n,
            k,
            &EmEstimator { cfg: cfg.clone() },
            reps,
            mix(seed, idx as u64),
            Metric::Free,
        )?;
        let est = &table[0];
        let r = est.estimates.len() as f64;
        let scaled: Vec<Vec<f64>> = est
            .estimates
            .iter()
            .map(|e| (0..dim).map(|i| (n as f64).sqrt() * (e[i] - truth[i])).collect())
            .collect();
        let mean: Vec<f64> = (0..dim).map(|i| scaled.iter().map(|v| v[i]).sum::<f64>() / r).collect();
        let mut cov = DMatrix::zeros(dim, dim);
        for v in &scaled {
            for a in 0..dim {
                for b in 0..dim {
                    cov[(a, b)] += (v[a] - mean[a]) * (v[b] - mean[b]) / (r - 1.0);
                }
            }
        }
        let discrepancy = (&cov - &predicted).norm() / predicted.norm();
        rows.push(EfficiencyRow {
            n,
            reps: est.reps,
            failures: est.failures,
            empirical: cov.transpose().as_slice().to_vec(),
            discrepancy,
        });
    }
    Ok(EfficiencyReport { p, dim, predicted: predicted.transpose().as_slice().to_vec(), rows })
}

pub fn efficiency_csv(report: &EfficiencyReport) -> String {
    let mut t = CsvTable::new(&["n", "i", "j", "empirical", "predicted", "discrepancy", "reps", "failures"]);
    let d = report.dim;
    for row in &report.rows {
        for i in 0..d {
            for j in 0..d {
                t.row(&[
                    row.n.to_string(),
                    i.to_string(),
                    j.to_string(),
                    fmt_f64(row.empirical[i * d + j]),
                    fmt_f64(report.predicted[i * d + j]),
                    fmt_f64(row.discrepancy),
                    row.reps.to_string(),
                    row.failures.to_string(),
                ]);
            }
        }
    }
    t.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::EmissionDistribution as E;

    #[test]
    fn exact_estimator_has_zero_risk() {
        let model = TrueModel::sim1();
        let truth = model.sorted_theta();
        let est = move |_: &[Observation], _: &Partition, _: usize, _: u64| Ok(vec![0.7, 0.3]);
        let parts = [Partition::dyadic(2).unwrap()];
        let r = risk_table_with(&model, &parts, 20, 2, &est, 5, 1, Metric::Full).unwrap().remove(0);
        assert_eq!(r.risk, 0.0);
        assert_eq!(r.bias2, 0.0);
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.estimates[0], truth);
    }

    #[test]
    fn decomposition_identity() {
        let truth = vec![0.3, 0.7];
        let est = vec![vec![0.25, 0.75], vec![0.4, 0.6], vec![0.31, 0.69], vec![0.5, 0.5]];
        let r = RiskEstimate::from_estimates(&truth, est, 0, Metric::Full).unwrap();
        assert!((r.risk - r.bias2 - r.variance).abs() < 1e-12);
    }

    #[test]
    fn failure_budget() {
        let truth = vec![1.0];
        let est = vec![vec![1.0]; 19];
        assert!(RiskEstimate::from_estimates(&truth, est.clone(), 1, Metric::Full).is_ok());
        assert!(matches!(RiskEstimate::from_estimates(&truth, est, 2, Metric::Full), Err(Error::Experiment(_))));
    }

    #[test]
    fn degenerate_model_is_singular() {
        let d = E::TruncatedNormal { mu: 0.5, sigma: 0.2 };
        let model = TrueModel::repeated(vec![0.3, 0.7], vec![d, d]).unwrap();
        let r = efficiency_experiment(&model, 2, &[50], 2, &EmConfig::default(), 3, 0);
        assert!(matches!(r, Err(Error::Singular(_))));
    }

    #[test]
    fn small_curve_is_reproducible() {
        let cfg = EmConfig { restarts: 2, ..Default::default() };
        let a = risk_curve(&TrueModel::sim1(), 40, 2, &[1, 2], &cfg, 4, 9, Metric::Free).unwrap();
        let b = risk_curve(&TrueModel::sim1(), 40, 2, &[1, 2], &cfg, 4, 9, Metric::Free).unwrap();
        assert_eq!(risk_curve_csv(&a), risk_curve_csv(&b));
        assert!(risk_curve_csv(&a).starts_with("P,risk,bias2,var,se\n"));
    }
}
