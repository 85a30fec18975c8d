//! Python bindings.
//!
//! Exposes system configuration, scenario sampling, the scheme solvers, the
//! exact timeline evaluation and the Monte Carlo sweep runner:
//!
//! ```python
//! import hybrid_uplink_py as hu
//! cfg = hu.SystemConfig(K=2, M=2, snr_db=15.0)
//! for r in hu.solve(cfg, seed=3):
//!     print(r["scheme"], r["tau_total"])
//! ```

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hybrid_uplink::bench::{self, ResultRow};
use hybrid_uplink::link_model::{self, CompressionBits, RateSet, Timeline};
use hybrid_uplink::optimizer::{solve_schemes, SolveOptions, SolveTrace};
use hybrid_uplink::rng::SeedStreams;
use hybrid_uplink::{Error, SchemeMode, TaskSplit};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig(_) | Error::Config { .. } | Error::InvalidMode(_) | Error::InvalidSplit(_) | Error::InvalidPermutation(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

// -----------------------------------------------------------------------------
// SystemConfig
// -----------------------------------------------------------------------------

const KEYS: [&str; 20] = [
    "K", "M", "n_U", "n_A", "P_U", "sigma_z2", "C_F", "B", "b_total", "tau_S_total", "f_c", "kappa", "beta_0", "d_0",
    "altitude", "uav_radius", "ap_radius", "eps_rel", "max_iters", "seed",
];

/// Physical and network parameters. Keyword names follow the config file
/// (`K`, `M`, `n_U`, `C_F`, ...); `snr_db` sets `P_U` relative to `sigma_z2`.
#[pyclass(name = "SystemConfig", from_py_object)]
#[derive(Clone)]
struct PySystemConfig {
    inner: hybrid_uplink::SystemConfig,
}

fn as_count(key: &str, v: f64) -> PyResult<usize> {
    if v.fract() != 0.0 || v < 0.0 {
        return Err(PyValueError::new_err(format!("{key} must be a non-negative integer, got {v}")));
    }
    Ok(v as usize)
}

impl PySystemConfig {
    fn set(&mut self, key: &str, v: f64) -> PyResult<()> {
        let c = &mut self.inner;
        match key {
            "K" => c.num_uavs = as_count(key, v)?,
            "M" => c.num_aps = as_count(key, v)?,
            "n_U" => c.uav_antennas = as_count(key, v)?,
            "n_A" => c.ap_antennas = as_count(key, v)?,
            "P_U" => c.uav_power = v,
            "sigma_z2" => c.noise_power = v,
            "C_F" => c.fronthaul_capacity = v,
            "B" => c.bandwidth = v,
            "b_total" => c.total_bits = v,
            "tau_S_total" => c.total_sensing_time = v,
            "f_c" => c.carrier_frequency = v,
            "kappa" => c.rician_factor = v,
            "beta_0" => c.reference_gain = v,
            "d_0" => c.reference_distance = v,
            "altitude" => c.altitude = v,
            "uav_radius" => c.uav_radius = v,
            "ap_radius" => c.ap_radius = v,
            "eps_rel" => c.eps_rel = v,
            "max_iters" => c.max_iters = as_count(key, v)?,
            "seed" => c.seed = as_count(key, v)? as u64,
            _ => return Err(PyKeyError::new_err(format!("unknown config field `{key}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> PyResult<f64> {
        let c = &self.inner;
        Ok(match key {
            "K" => c.num_uavs as f64,
            "M" => c.num_aps as f64,
            "n_U" => c.uav_antennas as f64,
            "n_A" => c.ap_antennas as f64,
            "P_U" => c.uav_power,
            "sigma_z2" => c.noise_power,
            "C_F" => c.fronthaul_capacity,
            "B" => c.bandwidth,
            "b_total" => c.total_bits,
            "tau_S_total" => c.total_sensing_time,
            "f_c" => c.carrier_frequency,
            "kappa" => c.rician_factor,
            "beta_0" => c.reference_gain,
            "d_0" => c.reference_distance,
            "altitude" => c.altitude,
            "uav_radius" => c.uav_radius,
            "ap_radius" => c.ap_radius,
            "eps_rel" => c.eps_rel,
            "max_iters" => c.max_iters as f64,
            "seed" => c.seed as f64,
            _ => return Err(PyKeyError::new_err(format!("unknown config field `{key}`"))),
        })
    }
}

#[pymethods]
impl PySystemConfig {
    #[new]
    #[pyo3(signature = (snr_db=None, **kwargs))]
    fn new(snr_db: Option<f64>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self {
            inner: hybrid_uplink::SystemConfig::default(),
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                cfg.set(&k.extract::<String>()?, v.extract::<f64>()?)?;
            }
        }
        if let Some(snr) = snr_db {
            cfg.inner = cfg.inner.with_snr_db(snr);
        }
        cfg.inner.validate().map_err(to_py)?;
        Ok(cfg)
    }

    #[getter]
    fn snr_db(&self) -> f64 {
        self.inner.snr_db()
    }

    /// Copy with `P_U` set to the given SNR.
    fn with_snr_db(&self, snr_db: f64) -> Self {
        Self {
            inner: self.inner.clone().with_snr_db(snr_db),
        }
    }

    fn __getitem__(&self, key: &str) -> PyResult<f64> {
        self.get(key)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for k in KEYS {
            d.set_item(k, self.get(k)?)?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "SystemConfig(K={}, M={}, n_U={}, n_A={}, snr_db={:.2}, C_F={:e}, b_total={:e}, tau_S_total={})",
            c.num_uavs,
            c.num_aps,
            c.uav_antennas,
            c.ap_antennas,
            c.snr_db(),
            c.fronthaul_capacity,
            c.total_bits,
            c.total_sensing_time
        )
    }
}

// -----------------------------------------------------------------------------
// Scenario
// -----------------------------------------------------------------------------

/// One sampled geometry and channel realization.
#[pyclass(name = "Scenario")]
struct PyScenario {
    inner: hybrid_uplink::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    fn new(config: &PySystemConfig, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: hybrid_uplink::Scenario::sample(&config.inner, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// `||H_k||_F^2` per UAV, non-decreasing after relabeling.
    #[getter]
    fn channel_strengths(&self) -> Vec<f64> {
        (0..self.inner.channels.num_uavs()).map(|k| self.inner.channels.strength(k)).collect()
    }

    #[getter]
    fn uav_positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner.geometry.uav_positions.iter().map(|p| (p.x, p.y, p.z)).collect()
    }

    #[getter]
    fn ap_positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner.geometry.ap_positions.iter().map(|p| (p.x, p.y, p.z)).collect()
    }
}

// -----------------------------------------------------------------------------
// Solvers and timeline
// -----------------------------------------------------------------------------

fn timeline_dict<'py>(py: Python<'py>, t: &Timeline) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tau_s", t.tau_s.clone())?;
    d.set_item("tau_w_td", t.tau_w_td.clone())?;
    d.set_item("tau_f_td", t.tau_f_td.clone())?;
    d.set_item("tau_sw_td", t.tau_sw_td.clone())?;
    d.set_item("tau_swf_td", t.tau_swf_td.clone())?;
    d.set_item("tau_w_no", t.tau_w_no)?;
    d.set_item("tau_f_no", t.tau_f_no)?;
    d.set_item("tau_w_co", t.tau_w_co)?;
    d.set_item("tau_f_co", t.tau_f_co)?;
    d.set_item("tau_total", t.tau_total)?;
    Ok(d)
}

fn trace_dict<'py>(py: Python<'py>, mode: SchemeMode, result: &hybrid_uplink::Result<SolveTrace>) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", mode.name())?;
    match result {
        Ok(trace) => {
            let s = &trace.state.split;
            d.set_item("status", trace.flag.as_str())?;
            d.set_item("message", trace.message.clone())?;
            d.set_item("tau_total", trace.tau_total())?;
            d.set_item("iterations", trace.iterations())?;
            d.set_item("tau_history", trace.tau_history.clone())?;
            d.set_item("alpha_0", s.alpha_0)?;
            d.set_item("alpha_td", s.alpha_td.clone())?;
            d.set_item("alpha_no", s.alpha_no.clone())?;
            d.set_item("timeline", timeline_dict(py, &trace.state.timeline)?)?;
        }
        Err(e) => {
            d.set_item("status", "error")?;
            d.set_item("message", e.to_string())?;
            d.set_item("tau_total", py.None())?;
        }
    }
    Ok(d)
}

fn parse_schemes(names: Option<Vec<String>>) -> PyResult<Vec<SchemeMode>> {
    match names {
        None => Ok(bench::default_schemes()),
        Some(names) => names.iter().map(|n| n.parse::<SchemeMode>().map_err(to_py)).collect(),
    }
}

/// Solves the requested schemes on the scenario sampled from `seed`; the
/// hybrid scheme is warm-started from the baselines. Returns one dict per
/// scheme.
#[pyfunction]
#[pyo3(signature = (config, seed, schemes=None, n_starts=1))]
fn solve<'py>(
    py: Python<'py>,
    config: &PySystemConfig,
    seed: u64,
    schemes: Option<Vec<String>>,
    n_starts: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let modes = parse_schemes(schemes)?;
    let cfg = config.inner.clone();
    let results = py.detach(move || -> hybrid_uplink::Result<_> {
        let sc = hybrid_uplink::Scenario::sample(&cfg, seed)?;
        let opts = SolveOptions {
            n_starts,
            ..SolveOptions::default()
        };
        Ok(solve_schemes(&sc.channels, &cfg, &modes, &SeedStreams::new(seed), &opts))
    });
    results
        .map_err(to_py)?
        .iter()
        .map(|(mode, r)| trace_dict(py, *mode, r))
        .collect()
}

/// Completion time of a task split given per-phase rates (bits/s) and
/// compression bits per sample (`g_td[i][k]`, `g_no[i]`, `g_co[i]`).
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn timeline<'py>(
    py: Python<'py>,
    config: &PySystemConfig,
    alpha_0: f64,
    alpha_td: Vec<f64>,
    alpha_no: Vec<f64>,
    r_td: Vec<f64>,
    r_no: Vec<f64>,
    r_co: f64,
    g_td: Vec<Vec<f64>>,
    g_no: Vec<f64>,
    g_co: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let split = TaskSplit { alpha_0, alpha_td, alpha_no };
    let rates = RateSet { r_td, r_no, r_co };
    let bits = CompressionBits { g_td, g_no, g_co };
    let t = link_model::compute_timeline(&split, &rates, &bits, &config.inner).map_err(to_py)?;
    let d = timeline_dict(py, &t)?;
    d.set_item("event_oracle", link_model::event_oracle(&split, &rates, &bits, &config.inner).map_err(to_py)?)?;
    Ok(d)
}

fn row_dict<'py>(py: Python<'py>, r: &ResultRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("value", r.value)?;
    d.set_item("scheme", &r.scheme)?;
    d.set_item("seed", r.seed)?;
    d.set_item("tau_total", r.tau_total)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("alpha_0", r.alpha_0)?;
    d.set_item("sum_alpha_td", r.sum_alpha_td)?;
    d.set_item("sum_alpha_no", r.sum_alpha_no)?;
    d.set_item("status", &r.status)?;
    Ok(d)
}

/// Runs a sweep described by TOML text (same format as the CLI config) and
/// returns the raw rows; `out` additionally writes raw.csv/aggregate.csv.
#[pyfunction]
#[pyo3(signature = (config_toml, trials=None, jobs=None, out=None))]
fn run_sweep<'py>(
    py: Python<'py>,
    config_toml: &str,
    trials: Option<usize>,
    jobs: Option<usize>,
    out: Option<String>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut spec = bench::parse_config(config_toml).map_err(to_py)?;
    if let Some(t) = trials {
        spec.trials = t;
    }
    if let Some(j) = jobs {
        spec.jobs = j;
    }
    let rows = py
        .detach(move || -> hybrid_uplink::Result<Vec<ResultRow>> {
            let rows = bench::run_monte_carlo(&spec)?;
            if let Some(dir) = out {
                bench::emit_results(&rows, dir)?;
            }
            Ok(rows)
        })
        .map_err(to_py)?;
    rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Names of every scheme accepted by `solve`.
#[pyfunction]
fn schemes() -> Vec<&'static str> {
    SchemeMode::ALL.iter().map(|m| m.name()).collect()
}

#[pymodule]
fn hybrid_uplink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemConfig>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(timeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(schemes, m)?)?;
    Ok(())
}
