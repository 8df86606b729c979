//! Batch command line: `simulate`, `fit`, `select`, `risk`, `table2` and
//! `efficiency`.
//!
//! Each command resolves its flags into a serializable configuration. A file
//! given with `--config` (TOML, or a JSON metadata sidecar) overrides the
//! flags key by key. The resolved configuration, minus the output directory
//! and worker count, is hashed into the sidecar of every artifact.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::em::{em_fit, EmConfig};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_artifact, CsvTable, Metadata};
use crate::model::{bin_sample, Metric};
use crate::modelsel::{dyadic_candidates, make_blocks, select_partition, EmEstimator, SchemeKind};
use crate::partition::{max_p_for_n_with, Partition, DEFAULT_PCAP_FACTOR};
use crate::risklab::{comparison_csv, criterion_comparison, efficiency_csv, efficiency_experiment, risk_curve, risk_curve_csv};
use crate::scenario::{Observation, TrueModel};

#[derive(Parser, Debug)]
#[command(name = "histomix", version, about = "Histogram-projected mixture weight estimation")]
pub struct Cli {
    /// Worker threads for replications and restarts.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// TOML file or metadata sidecar whose keys override the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "HISTOMIX_OUT", default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw observations from a scenario.
    Simulate(SimulateArgs),
    /// Fit the binned mixture on one dyadic grid.
    Fit(FitArgs),
    /// Choose the dyadic grid by block cross-validation.
    Select(SelectArgs),
    /// Risk, squared bias and variance along dyadic grids.
    Risk(RiskArgs),
    /// Risk of the estimators selected by the block criteria.
    Table2(Table2Args),
    /// Empirical covariance against the inverse efficient information.
    Efficiency(EfficiencyArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EmArgs {
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 0.0)]
    pub floor_eps: f64,
    /// Tie bin masses across coordinates.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub repeated: bool,
}

impl EmArgs {
    fn config(&self, seed: u64) -> EmConfig {
        EmConfig {
            restarts: self.restarts,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            seed,
            repeated: self.repeated,
            floor_eps: self.floor_eps,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Preset name (sim1, sim2, sim3) or path to a scenario TOML file.
    #[arg(long, default_value = "sim1")]
    pub scenario: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    /// Sample CSV with header `x1,x2,x3`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Dyadic exponent of the grid.
    #[arg(long, default_value_t = 2)]
    pub p: u32,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value = "D1")]
    pub scheme: String,
    /// Largest candidate exponent; defaults to `floor(pcap_factor * ln n)`.
    #[arg(long)]
    pub p_max: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_PCAP_FACTOR)]
    pub pcap_factor: f64,
    /// Reference exponent; defaults to the smallest grid with at least k+2 bins.
    #[arg(long)]
    pub reference_p: Option<u32>,
    /// Loss on sorted weights: `free` (first k-1 entries) or `full`.
    #[arg(long, default_value = "free")]
    pub metric: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RiskArgs {
    #[arg(long, default_value = "sim1")]
    pub scenario: String,
    #[arg(long)]
    pub n: Option<usize>,
    /// Component count; defaults to the scenario's.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub p_min: u32,
    #[arg(long)]
    pub p_max: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_PCAP_FACTOR)]
    pub pcap_factor: f64,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Loss on sorted weights: `free` (first k-1 entries) or `full`.
    #[arg(long, default_value = "free")]
    pub metric: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Table2Args {
    /// Scenarios (presets or TOML paths), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "sim1")]
    pub scenario: Vec<String>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub n: Vec<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "D1,D2,D3,V1,V2,V3")]
    pub schemes: Vec<String>,
    #[arg(long)]
    pub p_max: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_PCAP_FACTOR)]
    pub pcap_factor: f64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Loss on sorted weights: `free` (first k-1 entries) or `full`.
    #[arg(long, default_value = "free")]
    pub metric: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub em: EmArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyArgs {
    #[arg(long, default_value = "sim1")]
    pub scenario: String,
    #[arg(long, default_value_t = 3)]
    pub p: u32,
    #[arg(long, value_delimiter = ',', default_value = "200,5000")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub em: EmArgs,
}

/// Resolves a preset name or a scenario file path.
pub fn resolve_scenario(name: &str) -> Result<TrueModel> {
    match TrueModel::preset(name) {
        Ok(m) => Ok(m),
        Err(e) => {
            let path = Path::new(name);
            if path.is_file() {
                TrueModel::from_toml_file(path)
            } else {
                Err(e)
            }
        }
    }
}

fn read_overrides(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        // a metadata sidecar carries the configuration under "config"
        Ok(match v.get("config") {
            Some(c) if v.get("config_hash").is_some() => c.clone(),
            _ => v,
        })
    } else {
        let t: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(serde_json::to_value(t)?)
    }
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Applies `--config` overrides to the flag values.
fn merged<T: Serialize + for<'de> Deserialize<'de>>(flags: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let mut v = serde_json::to_value(flags)?;
    overlay(&mut v, read_overrides(path)?);
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn require<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("--{name} is required (flag or config key '{name}')")))
}

/// Reads a sample CSV written by `simulate`.
pub fn read_sample_csv(path: &Path) -> Result<Vec<Observation>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("x1,x2,x3") => {}
        other => {
            return Err(Error::Parse(format!(
                "{}: expected header 'x1,x2,x3', found {other:?}",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), i + 2)))?;
        if vals.len() != 3 {
            return Err(Error::Parse(format!(
                "{} line {}: expected 3 columns, found {}",
                path.display(),
                i + 2,
                vals.len()
            )));
        }
        out.push([vals[0], vals[1], vals[2]]);
    }
    Ok(out)
}

pub fn sample_csv(obs: &[Observation]) -> String {
    let mut t = CsvTable::new(&["x1", "x2", "x3"]);
    for x in obs {
        t.row(&[fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(x[2])]);
    }
    t.finish()
}

fn json_text<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct FitOutput<'a> {
    k: usize,
    p: u32,
    n: usize,
    loglik: f64,
    iterations: usize,
    converged: bool,
    theta: &'a [f64],
    restart_logliks: &'a [f64],
    params: &'a crate::model::MixtureParams,
}

fn cmd_simulate(args: &SimulateArgs, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = merged(args, config)?;
    let n = require(cfg.n, "n")?;
    let seed = require(cfg.seed, "seed")?;
    let model = resolve_scenario(&cfg.scenario)?;
    let sample = model.sample(n, seed);
    let meta = Metadata::new("simulate", seed, &cfg)?;
    write_artifact(&out.join("sample.csv"), &sample_csv(&sample.observations), &meta)?;
    let mut t = CsvTable::new(&["label"]);
    for l in &sample.labels {
        t.row(&[l.to_string()]);
    }
    write_artifact(&out.join("labels.csv"), &t.finish(), &meta)
}

fn cmd_fit(args: &FitArgs, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = merged(args, config)?;
    let seed = require(cfg.seed, "seed")?;
    let obs = read_sample_csv(&require(cfg.data.clone(), "data")?)?;
    let part = Partition::dyadic(cfg.p)?;
    let data = bin_sample(&obs, &part)?;
    let fit = em_fit(&data, cfg.k, &cfg.em.config(seed))?;
    let meta = Metadata::new("fit", seed, &cfg)?;
    let report = FitOutput {
        k: cfg.k,
        p: cfg.p,
        n: data.n(),
        loglik: fit.loglik,
        iterations: fit.iterations,
        converged: fit.converged,
        theta: fit.params.theta(),
        restart_logliks: &fit.restart_logliks,
        params: &fit.params,
    };
    write_artifact(&out.join("fit.json"), &json_text(&report)?, &meta)?;
    write_artifact(&out.join("fit_params.txt"), &fit.params.to_text(), &meta)
}

fn cmd_select(args: &SelectArgs, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = merged(args, config)?;
    let seed = require(cfg.seed, "seed")?;
    let obs = read_sample_csv(&require(cfg.data.clone(), "data")?)?;
    let kind: SchemeKind = cfg.scheme.parse()?;
    let p_max = cfg.p_max.unwrap_or_else(|| max_p_for_n_with(obs.len(), cfg.pcap_factor)).max(1);
    let candidates = dyadic_candidates(p_max)?;
    let reference = cfg.reference_p.map(Partition::dyadic).transpose()?;
    let scheme = make_blocks(obs.len(), kind, seed)?;
    let est = EmEstimator { cfg: cfg.em.config(seed) };
    let metric: Metric = cfg.metric.parse()?;
    let report = select_partition(&obs, &candidates, reference.as_ref(), &scheme, &est, cfg.k, metric)?;
    let meta = Metadata::new("select", seed, &cfg)?;
    write_artifact(&out.join("selection.json"), &report.to_json()?, &meta)
}

fn cmd_risk(args: &RiskArgs, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = merged(args, config)?;
    let seed = require(cfg.seed, "seed")?;
    let n = require(cfg.n, "n")?;
    let model = resolve_scenario(&cfg.scenario)?;
    let k = cfg.k.unwrap_or(model.k());
    let p_max = cfg.p_max.unwrap_or_else(|| max_p_for_n_with(n, cfg.pcap_factor));
    if cfg.p_min > p_max {
        return Err(Error::Usage(format!("empty exponent range {}..={p_max}", cfg.p_min)));
    }
    let ps: Vec<u32> = (cfg.p_min..=p_max).collect();
    let metric: Metric = cfg.metric.parse()?;
    let points = risk_curve(&model, n, k, &ps, &cfg.em.config(seed), cfg.reps, seed, metric)?;
    let meta = Metadata::new("risk", seed, &cfg)?;
    write_artifact(&out.join("risk_curve.csv"), &risk_curve_csv(&points), &meta)
}

fn cmd_table2(args: &Table2Args, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = merged(args, config)?;
    let seed = require(cfg.seed, "seed")?;
    let schemes: Vec<SchemeKind> = cfg.schemes.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let metric: Metric = cfg.metric.parse()?;
    let mut tables = Vec::new();
    for name in &cfg.scenario {
        let model = resolve_scenario(name)?;
        let k = cfg.k.unwrap_or(model.k());
        for &n in &cfg.n {
            let p_max = cfg.p_max.unwrap_or_else(|| max_p_for_n_with(n, cfg.pcap_factor));
            tables.push(criterion_comparison(
                &model,
                name,
                n,
                k,
                &schemes,
                p_max,
                &cfg.em.config(seed),
                cfg.reps,
                seed,
                metric,
            )?);
        }
    }
    let meta = Metadata::new("table2", seed, &cfg)?;
    write_artifact(&out.join("table2.csv"), &comparison_csv(&tables), &meta)
}

fn cmd_efficiency(args: &EfficiencyArgs, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = merged(args, config)?;
    let seed = require(cfg.seed, "seed")?;
    let model = resolve_scenario(&cfg.scenario)?;
    let report = efficiency_experiment(&model, cfg.p, &cfg.n, model.k(), &cfg.em.config(seed), cfg.reps, seed)?;
    let meta = Metadata::new("efficiency", seed, &cfg)?;
    write_artifact(&out.join("efficiency.csv"), &efficiency_csv(&report), &meta)
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    if cli.workers == 0 {
        return Err(Error::Usage("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cli.workers)))?;
    let out = cli.out.as_path();
    let config = cli.config.as_deref();
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, out, config),
        Command::Fit(a) => cmd_fit(a, out, config),
        Command::Select(a) => cmd_select(a, out, config),
        Command::Risk(a) => cmd_risk(a, out, config),
        Command::Table2(a) => cmd_table2(a, out, config),
        Command::Efficiency(a) => cmd_efficiency(a, out, config),
    })
}

/// Parses arguments, runs, and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
