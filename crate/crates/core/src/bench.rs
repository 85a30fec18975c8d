//! Monte Carlo sweeps: experiment configuration, paired trial execution and
//! CSV output.
//!
//! A sweep varies one parameter of a base [`SystemConfig`] over a list of
//! values. For every (value, trial) pair a scenario is sampled from a seed
//! derived from the root seed, and every requested scheme is solved on that
//! same channel realization. Rows come back ordered by (value, trial, scheme)
//! whatever the degree of parallelism, so the CSV output is reproducible
//! byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{solve_schemes, ConvergenceFlag, SchemeMode, SicPolicy, SolveOptions, SolveTrace};
use crate::rng::{SeedStreams, TRIAL};
use crate::scenario::{Scenario, SystemConfig};

pub const DEFAULT_TRIALS: usize = 20;

const REQUIRED_FIELDS: [&str; 2] = ["sweep", "values"];
const OPTIONAL_FIELDS: [&str; 8] = ["schemes", "trials", "seed", "n_starts", "sic", "jobs", "output", "system"];

/// The parameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    SnrDb,
    TotalBits,
    SensingTime,
    NumUavs,
    NumAps,
    Altitude,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::SnrDb,
        SweepAxis::TotalBits,
        SweepAxis::SensingTime,
        SweepAxis::NumUavs,
        SweepAxis::NumAps,
        SweepAxis::Altitude,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::TotalBits => "b_total",
            SweepAxis::SensingTime => "tau_S_total",
            SweepAxis::NumUavs => "K",
            SweepAxis::NumAps => "M",
            SweepAxis::Altitude => "altitude",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, SweepAxis::NumUavs | SweepAxis::NumAps)
    }

    /// Returns `base` with this axis set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        if self.is_count() && !(value.fract() == 0.0 && value >= 1.0) {
            return Err(Error::config("values", format!("{} values must be positive integers, got {value}", self.name())));
        }
        let mut cfg = base.clone();
        match self {
            SweepAxis::SnrDb => cfg = cfg.with_snr_db(value),
            SweepAxis::TotalBits => cfg.total_bits = value,
            SweepAxis::SensingTime => cfg.total_sensing_time = value,
            SweepAxis::NumUavs => cfg.num_uavs = value as usize,
            SweepAxis::NumAps => cfg.num_aps = value as usize,
            SweepAxis::Altitude => cfg.altitude = value,
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == s.trim()).ok_or_else(|| {
            let names: Vec<&str> = SweepAxis::ALL.iter().map(|a| a.name()).collect();
            Error::config("sweep", format!("unknown axis `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// A validated sweep description.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub sweep: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeMode>,
    pub trials: usize,
    pub seed: u64,
    pub n_starts: usize,
    pub sic: SicPolicy,
    /// Worker threads; `0` lets the pool decide.
    pub jobs: usize,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    /// A spec with every optional field at its default.
    pub fn new(sweep: SweepAxis, values: Vec<f64>) -> Self {
        Self {
            system: SystemConfig::default(),
            sweep,
            values,
            schemes: default_schemes(),
            trials: DEFAULT_TRIALS,
            seed: 0,
            n_starts: 1,
            sic: SicPolicy::StrongestFirst,
            jobs: 0,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("values", "must contain at least one value"));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::config("values", format!("must be finite, got {v}")));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("values", "values must be strictly increasing"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "must name at least one scheme"));
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                return Err(Error::config("schemes", format!("{s} listed twice")));
            }
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.n_starts == 0 {
            return Err(Error::config("n_starts", "must be at least 1"));
        }
        self.system.validate().map_err(|e| Error::config("system", e.to_string()))?;
        for &v in &self.values {
            let cfg = self.sweep.apply(&self.system, v)?;
            cfg.validate()
                .map_err(|e| Error::config("values", format!("{} = {v}: {e}", self.sweep)))?;
        }
        Ok(())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            n_starts: self.n_starts,
            sic: self.sic,
            ..SolveOptions::default()
        }
    }

    /// Seed of trial `t`. It does not depend on the sweep value, so an SNR
    /// sweep reuses the same geometry and fading at every point.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        SeedStreams::new(self.seed).derive_seed(TRIAL, trial as u64)
    }
}

pub fn default_schemes() -> Vec<SchemeMode> {
    vec![
        SchemeMode::Hybrid,
        SchemeMode::TdmaOnly,
        SchemeMode::NomaOnly,
        SchemeMode::CoopOnly,
        SchemeMode::EqualSplit,
    ]
}

fn field<T: serde::de::DeserializeOwned>(table: &toml::Table, key: &str) -> Result<Option<T>> {
    match table.get(key) {
        None => Ok(None),
        Some(v) => v
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e| Error::config(key, e.to_string().trim().to_string())),
    }
}

/// Parses the `[system]` table one key at a time so that a bad entry is
/// reported under its own name.
fn parse_system(table: &toml::Table) -> Result<SystemConfig> {
    for (key, value) in table {
        let mut single = toml::Table::new();
        single.insert(key.clone(), value.clone());
        toml::Value::Table(single)
            .try_into::<SystemConfig>()
            .map_err(|e| Error::config(format!("system.{key}"), e.to_string().trim().to_string()))?;
    }
    toml::Value::Table(table.clone())
        .try_into::<SystemConfig>()
        .map_err(|e| Error::config("system", e.to_string().trim().to_string()))
}

fn parse_sic(s: &str) -> Result<SicPolicy> {
    match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "strongest_first" => Ok(SicPolicy::StrongestFirst),
        "random" => Ok(SicPolicy::Random),
        _ => Err(Error::config("sic", format!("unknown policy `{s}`; expected strongest_first or random"))),
    }
}

/// Parses an experiment description from TOML text.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.to_string().trim().to_string()))?;
    let missing: Vec<&str> = REQUIRED_FIELDS.iter().copied().filter(|k| !table.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::config(
            missing.join(", "),
            format!("missing required field(s); required: {}", REQUIRED_FIELDS.join(", ")),
        ));
    }
    if let Some(k) = table.keys().find(|k| !REQUIRED_FIELDS.contains(&k.as_str()) && !OPTIONAL_FIELDS.contains(&k.as_str())) {
        return Err(Error::config(k.as_str(), "unknown field"));
    }
    let sweep: SweepAxis = field::<String>(&table, "sweep")?.unwrap_or_default().parse()?;
    let values: Vec<f64> = field(&table, "values")?.unwrap_or_default();
    let mut spec = ExperimentSpec::new(sweep, values);
    if let Some(names) = field::<Vec<String>>(&table, "schemes")? {
        spec.schemes = names
            .iter()
            .map(|n| n.parse::<SchemeMode>().map_err(|e| Error::config("schemes", e.to_string())))
            .collect::<Result<_>>()?;
    }
    if let Some(t) = field(&table, "trials")? {
        spec.trials = t;
    }
    if let Some(s) = field(&table, "seed")? {
        spec.seed = s;
    }
    if let Some(n) = field(&table, "n_starts")? {
        spec.n_starts = n;
    }
    if let Some(s) = field::<String>(&table, "sic")? {
        spec.sic = parse_sic(&s)?;
    }
    if let Some(j) = field(&table, "jobs")? {
        spec.jobs = j;
    }
    spec.output = field::<String>(&table, "output")?.map(PathBuf::from);
    if let Some(sys) = table.get("system") {
        let sys = sys
            .as_table()
            .ok_or_else(|| Error::config("system", "must be a table"))?;
        spec.system = parse_system(sys)?;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// One scheme on one channel realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub value: f64,
    pub scheme: String,
    pub seed: u64,
    pub tau_total: Option<f64>,
    pub iterations: usize,
    pub alpha_0: Option<f64>,
    pub sum_alpha_td: Option<f64>,
    pub sum_alpha_no: Option<f64>,
    pub status: String,
}

impl ResultRow {
    fn from_result(value: f64, seed: u64, mode: SchemeMode, result: &Result<SolveTrace>) -> Self {
        match result {
            Ok(trace) => {
                let split = &trace.state.split;
                let status = match (trace.flag, &trace.message) {
                    (ConvergenceFlag::Failed, Some(m)) => format!("failed: {m}"),
                    (flag, _) => flag.as_str().to_string(),
                };
                ResultRow {
                    value,
                    scheme: mode.name().to_string(),
                    seed,
                    tau_total: Some(trace.tau_total()),
                    iterations: trace.iterations(),
                    alpha_0: Some(split.alpha_0),
                    sum_alpha_td: Some(split.alpha_td.iter().sum()),
                    sum_alpha_no: Some(split.alpha_no.iter().sum()),
                    status,
                }
            }
            Err(e) => ResultRow {
                value,
                scheme: mode.name().to_string(),
                seed,
                tau_total: None,
                iterations: 0,
                alpha_0: None,
                sum_alpha_td: None,
                sum_alpha_no: None,
                status: format!("error: {e}"),
            },
        }
    }

    /// True when the row carries a usable completion time.
    pub fn succeeded(&self) -> bool {
        self.tau_total.is_some() && !self.status.starts_with("failed") && !self.status.starts_with("error")
    }
}

/// Runs every scheme on one sampled scenario.
pub fn run_trial(cfg: &SystemConfig, value: f64, seed: u64, schemes: &[SchemeMode], opts: &SolveOptions) -> Vec<ResultRow> {
    let scenario = match Scenario::sample(cfg, seed) {
        Ok(s) => s,
        Err(e) => {
            let err: Result<SolveTrace> = Err(e);
            return schemes.iter().map(|&m| ResultRow::from_result(value, seed, m, &err)).collect();
        }
    };
    let streams = SeedStreams::new(seed);
    solve_schemes(&scenario.channels, cfg, schemes, &streams, opts)
        .into_iter()
        .map(|(mode, result)| ResultRow::from_result(value, seed, mode, &result))
        .collect()
}

/// Runs the whole sweep; trials are distributed over a thread pool of
/// `spec.jobs` workers.
pub fn run_monte_carlo(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let opts = spec.solve_options();
    let mut tasks = Vec::with_capacity(spec.values.len() * spec.trials);
    for &v in &spec.values {
        let cfg = spec.sweep.apply(&spec.system, v)?;
        for t in 0..spec.trials {
            tasks.push((v, spec.trial_seed(t), cfg.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    // `collect` keeps task order, so the result is independent of scheduling.
    let per_task: Vec<Vec<ResultRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(v, seed, cfg)| run_trial(cfg, *v, *seed, &spec.schemes, &opts))
            .collect()
    });
    Ok(per_task.into_iter().flatten().collect())
}

/// Per (value, scheme) summary over the successful rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub value: f64,
    pub scheme: String,
    pub trials: usize,
    pub failures: usize,
    pub mean_tau_total: Option<f64>,
    pub stderr_tau_total: Option<f64>,
    pub mean_alpha_0: Option<f64>,
    pub mean_sum_alpha_td: Option<f64>,
    pub mean_sum_alpha_no: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Standard error of the mean with the unbiased sample variance; zero for a
/// single sample.
fn stderr(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let n = xs.len() as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Some((var / n).sqrt())
}

/// Groups rows by (value, scheme), keeping first-appearance order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(f64, &str)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(v, s)| *v == r.value && *s == r.scheme) {
            keys.push((r.value, &r.scheme));
        }
    }
    keys.into_iter()
        .map(|(value, scheme)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.value == value && r.scheme == scheme).collect();
            let ok: Vec<&ResultRow> = group.iter().copied().filter(|r| r.succeeded()).collect();
            let col = |f: fn(&ResultRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let taus = col(|r| r.tau_total);
            AggregateRow {
                value,
                scheme: scheme.to_string(),
                trials: ok.len(),
                failures: group.len() - ok.len(),
                mean_tau_total: mean(&taus),
                stderr_tau_total: stderr(&taus),
                mean_alpha_0: mean(&col(|r| r.alpha_0)),
                mean_sum_alpha_td: mean(&col(|r| r.sum_alpha_td)),
                mean_sum_alpha_no: mean(&col(|r| r.sum_alpha_no)),
            }
        })
        .collect()
}

pub fn write_rows<W: std::io::Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written by [`emit_results`].
#[derive(Clone, Debug)]
pub struct OutputFiles {
    pub raw: PathBuf,
    pub aggregate: PathBuf,
}

/// Writes `raw.csv` and `aggregate.csv` into `dir`, creating it if needed.
pub fn emit_results(rows: &[ResultRow], dir: impl AsRef<Path>) -> Result<OutputFiles> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no result rows to write".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = OutputFiles {
        raw: dir.join("raw.csv"),
        aggregate: dir.join("aggregate.csv"),
    };
    write_rows(fs::File::create(&files.raw)?, rows)?;
    write_rows(fs::File::create(&files.aggregate)?, &aggregate(rows))?;
    Ok(files)
}
