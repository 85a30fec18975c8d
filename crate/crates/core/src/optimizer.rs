//! Alternating optimization of task split, transmit and quantizer covariances.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::link_model::{PrimalState, QuantizerState, SicOrder, TaskSplit, TransmitState};
use crate::rng::{SeedStreams, SIC_ORDER, STARTS};
use crate::scenario::{complex_gaussian, ChannelSet, SystemConfig};
use crate::subproblem::{solve_subproblem, ClarabelBackend, ConicBackend, Fraction, FractionPattern};

/// Largest per-step increase of the completion time accepted as solver noise.
pub const GUARD_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeMode {
    Hybrid,
    TdmaOnly,
    NomaOnly,
    CoopOnly,
    EqualSplit,
    /// TDMA only with the private fractions pinned at `1/K`.
    TdmaEqual,
    /// NOMA only with the private fractions pinned at `1/K`.
    NomaEqual,
}

impl SchemeMode {
    pub const ALL: [SchemeMode; 7] = [
        SchemeMode::Hybrid,
        SchemeMode::TdmaOnly,
        SchemeMode::NomaOnly,
        SchemeMode::CoopOnly,
        SchemeMode::EqualSplit,
        SchemeMode::TdmaEqual,
        SchemeMode::NomaEqual,
    ];

    /// The four reference schemes the hybrid scheme is compared against.
    pub const BASELINES: [SchemeMode; 4] = [SchemeMode::TdmaOnly, SchemeMode::NomaOnly, SchemeMode::CoopOnly, SchemeMode::EqualSplit];

    pub fn name(self) -> &'static str {
        match self {
            SchemeMode::Hybrid => "HYBRID",
            SchemeMode::TdmaOnly => "TDMA_ONLY",
            SchemeMode::NomaOnly => "NOMA_ONLY",
            SchemeMode::CoopOnly => "COOP_ONLY",
            SchemeMode::EqualSplit => "EQUAL_SPLIT",
            SchemeMode::TdmaEqual => "TDMA_EQUAL",
            SchemeMode::NomaEqual => "NOMA_EQUAL",
        }
    }

    /// Which fractions the scheme optimizes and which it pins.
    pub fn pattern(self, num_uavs: usize) -> FractionPattern {
        let k = num_uavs;
        let zero = Fraction::Fixed(0.0);
        let per_uav = Fraction::Fixed(1.0 / k as f64);
        let (a0, td, no) = match self {
            SchemeMode::Hybrid => return FractionPattern::all_free(k),
            SchemeMode::EqualSplit => return FractionPattern::fixed(&TaskSplit::equal(k)),
            SchemeMode::TdmaOnly => (zero, Fraction::Free, zero),
            SchemeMode::NomaOnly => (zero, zero, Fraction::Free),
            SchemeMode::CoopOnly => (Fraction::Fixed(1.0), zero, zero),
            SchemeMode::TdmaEqual => (zero, per_uav, zero),
            SchemeMode::NomaEqual => (zero, zero, per_uav),
        };
        FractionPattern {
            alpha_0: a0,
            alpha_td: vec![td; k],
            alpha_no: vec![no; k],
        }
    }

    /// Deterministic starting split: uniform over the fractions the scheme uses.
    pub fn default_split(self, num_uavs: usize) -> TaskSplit {
        let pattern = self.pattern(num_uavs);
        let free = pattern.num_free();
        let share = if free > 0 { (1.0 - pattern.fixed_total()) / free as f64 } else { 0.0 };
        let pick = |f: Fraction| match f {
            Fraction::Free => share,
            Fraction::Fixed(v) => v,
        };
        TaskSplit {
            alpha_0: pick(pattern.alpha_0),
            alpha_td: pattern.alpha_td.iter().map(|&f| pick(f)).collect(),
            alpha_no: pattern.alpha_no.iter().map(|&f| pick(f)).collect(),
        }
    }
}

impl fmt::Display for SchemeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        SchemeMode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::InvalidMode(format!("unknown scheme '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvergenceFlag {
    Converged,
    MaxIters,
    /// A step increased the completion time; the previous point was kept.
    Guard,
    /// The solver failed; the best point so far was kept.
    Failed,
}

impl ConvergenceFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvergenceFlag::Converged => "converged",
            ConvergenceFlag::MaxIters => "max_iters",
            ConvergenceFlag::Guard => "guard",
            ConvergenceFlag::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveTrace {
    pub mode: SchemeMode,
    /// `tau_total` of the initial point followed by one entry per accepted iteration.
    pub tau_history: Vec<f64>,
    /// Wall time of every attempted iteration, in seconds.
    pub iteration_times: Vec<f64>,
    pub flag: ConvergenceFlag,
    pub state: PrimalState,
    pub message: Option<String>,
}

impl SolveTrace {
    pub fn tau_total(&self) -> f64 {
        self.state.tau_total()
    }

    pub fn iterations(&self) -> usize {
        self.tau_history.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SicPolicy {
    /// Strongest channel decoded first.
    #[default]
    StrongestFirst,
    /// Uniformly random order drawn from the scenario's seed streams.
    Random,
}

pub fn sic_order(ch: &ChannelSet, policy: SicPolicy, streams: &SeedStreams) -> SicOrder {
    match policy {
        SicPolicy::StrongestFirst => SicOrder::strongest_first(ch),
        SicPolicy::Random => SicOrder::random(ch.num_uavs(), &mut streams.stream(SIC_ORDER)),
    }
}

/// Default starting point: the scheme's uniform split, isotropic full-power
/// transmission and `Omega = sigma_z^2 I`.
pub fn initialize_state(ch: &ChannelSet, cfg: &SystemConfig, mode: SchemeMode, pi: &SicOrder) -> Result<PrimalState> {
    let k = ch.num_uavs();
    let pattern = mode.pattern(k);
    let split = pattern.project(&mode.default_split(k));
    let tx = TransmitState::isotropic(k, ch.uav_antennas(), cfg.uav_power);
    let quant = QuantizerState::uniform(ch.num_aps(), k, ch.ap_antennas(), cfg.noise_power);
    PrimalState::evaluate(split, tx, quant, ch, cfg, pi)
}

fn full_power_factor<R: Rng>(rng: &mut R, n: usize, power: f64) -> CMat {
    let g = complex_gaussian(rng, n, n);
    let norm_sq: f64 = g.iter().map(|z| z.norm_sqr()).sum();
    g.scale((power / norm_sq).sqrt())
}

/// Random feasible split for `pattern`: free fractions from a flat Dirichlet,
/// reassigned across UAVs so private fractions are non-decreasing.
pub fn random_split<R: Rng>(pattern: &FractionPattern, rng: &mut R) -> TaskSplit {
    let k = pattern.num_uavs();
    let mut draw = |f: Fraction| -> f64 {
        match f {
            Fraction::Free => Exp1.sample(rng),
            Fraction::Fixed(_) => 0.0,
        }
    };
    let a0 = draw(pattern.alpha_0);
    let mut pairs: Vec<(f64, f64)> = (0..k).map(|u| (draw(pattern.alpha_td[u]), draw(pattern.alpha_no[u]))).collect();
    let free_mass = a0 + pairs.iter().map(|p| p.0 + p.1).sum::<f64>();
    pairs.sort_by(|a, b| (a.0 + a.1).total_cmp(&(b.0 + b.1)));
    let target = 1.0 - pattern.fixed_total();
    let scale = if free_mass > 0.0 { target / free_mass } else { 0.0 };
    let raw = TaskSplit {
        alpha_0: a0 * scale,
        alpha_td: pairs.iter().map(|p| p.0 * scale).collect(),
        alpha_no: pairs.iter().map(|p| p.1 * scale).collect(),
    };
    pattern.project(&raw)
}

/// Random starting point: random split and random full-power transmit factors.
pub fn random_state<R: Rng>(ch: &ChannelSet, cfg: &SystemConfig, mode: SchemeMode, pi: &SicOrder, rng: &mut R) -> Result<PrimalState> {
    let (k, n_u) = (ch.num_uavs(), ch.uav_antennas());
    let split = random_split(&mode.pattern(k), rng);
    let p = cfg.uav_power;
    let s_td = (0..k).map(|_| full_power_factor(rng, n_u, p)).collect();
    let s_no = (0..k).map(|_| full_power_factor(rng, n_u, p)).collect();
    let mut s_co = complex_gaussian(rng, k * n_u, k * n_u);
    for u in 0..k {
        let block = s_co.rows(u * n_u, n_u).into_owned();
        let norm_sq: f64 = block.iter().map(|z| z.norm_sqr()).sum();
        s_co.rows_mut(u * n_u, n_u).copy_from(&block.scale((p / norm_sq).sqrt()));
    }
    let tx = TransmitState { s_td, s_no, s_co };
    let quant = QuantizerState::uniform(ch.num_aps(), k, ch.ap_antennas(), cfg.noise_power);
    PrimalState::evaluate(split, tx, quant, ch, cfg, pi)
}

/// Runs the alternating loop from `state` until the relative change of the
/// completion time drops below `eps_rel` of the initial value.
pub fn run_alternating(
    state: PrimalState,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    mode: SchemeMode,
    pi: &SicOrder,
    backend: &dyn ConicBackend,
) -> SolveTrace {
    let pattern = mode.pattern(ch.num_uavs());
    let tau0 = state.tau_total();
    let mut trace = SolveTrace {
        mode,
        tau_history: vec![tau0],
        iteration_times: Vec::new(),
        flag: ConvergenceFlag::MaxIters,
        state,
        message: None,
    };
    for _ in 0..cfg.max_iters {
        let start = Instant::now();
        let step = solve_subproblem(&trace.state, ch, cfg, pi, &pattern, backend);
        trace.iteration_times.push(start.elapsed().as_secs_f64());
        let out = match step {
            Ok(out) => out,
            Err(e) => {
                trace.flag = ConvergenceFlag::Failed;
                trace.message = Some(e.to_string());
                return trace;
            }
        };
        let old = trace.state.tau_total();
        let new = out.state.tau_total();
        if new > old + GUARD_TOLERANCE {
            trace.flag = ConvergenceFlag::Guard;
            trace.message = Some(format!("step raised tau_total from {old:e} to {new:e}"));
            return trace;
        }
        trace.tau_history.push(new);
        trace.state = out.state;
        if (old - new).abs() <= cfg.eps_rel * tau0 {
            trace.flag = ConvergenceFlag::Converged;
            return trace;
        }
    }
    trace
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Starting points per scheme; the first is always the default initialization.
    pub n_starts: usize,
    pub sic: SicPolicy,
    pub backend: ClarabelBackend,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            n_starts: 1,
            sic: SicPolicy::StrongestFirst,
            backend: ClarabelBackend::default(),
        }
    }
}

/// Best of `n_starts` runs (start 0 is the default initialization, the rest
/// are random), plus one run per warm start projected onto the scheme's
/// fraction pattern.
#[allow(clippy::too_many_arguments)]
pub fn multi_start(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    mode: SchemeMode,
    n_starts: usize,
    pi: &SicOrder,
    streams: &SeedStreams,
    warm_starts: &[PrimalState],
    backend: &dyn ConicBackend,
) -> Result<SolveTrace> {
    if n_starts == 0 {
        return Err(Error::InvalidConfig("n_starts must be at least 1".into()));
    }
    let pattern = mode.pattern(ch.num_uavs());
    let mut best: Option<SolveTrace> = None;
    let mut failures = 0usize;
    let mut last_error = None;
    let mut consider = |init: Result<PrimalState>| match init {
        Ok(state) => {
            let trace = run_alternating(state, ch, cfg, mode, pi, backend);
            if best.as_ref().is_none_or(|b| trace.tau_total() < b.tau_total()) {
                best = Some(trace);
            }
        }
        Err(e) => {
            failures += 1;
            last_error = Some(e);
        }
    };
    for j in 0..n_starts {
        if j == 0 {
            consider(initialize_state(ch, cfg, mode, pi));
        } else {
            let mut rng = streams.indexed_stream(STARTS, j as u64);
            consider(random_state(ch, cfg, mode, pi, &mut rng));
        }
    }
    for w in warm_starts {
        let split = pattern.project(&w.split);
        consider(PrimalState::evaluate(split, w.tx.clone(), w.quant.clone(), ch, cfg, pi));
    }
    match best {
        Some(t) => Ok(t),
        None => Err(last_error.map_or(Error::AllStartsFailed(failures), |e| {
            Error::Solver(format!("all {failures} starts failed; last error: {e}"))
        })),
    }
}

/// Runs a non-hybrid scheme.
pub fn solve_baseline(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    mode: SchemeMode,
    pi: &SicOrder,
    streams: &SeedStreams,
    opts: &SolveOptions,
) -> Result<SolveTrace> {
    if mode == SchemeMode::Hybrid {
        return Err(Error::InvalidMode("HYBRID is not a baseline".into()));
    }
    multi_start(ch, cfg, mode, opts.n_starts, pi, streams, &[], &opts.backend)
}

/// Solves every requested scheme on one channel realization. Baselines run
/// first so the hybrid scheme can be warm-started from their solutions.
pub fn solve_schemes(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    modes: &[SchemeMode],
    streams: &SeedStreams,
    opts: &SolveOptions,
) -> Vec<(SchemeMode, Result<SolveTrace>)> {
    let pi = sic_order(ch, opts.sic, streams);
    let mut results: Vec<(SchemeMode, Result<SolveTrace>)> = Vec::with_capacity(modes.len());
    for &mode in modes.iter().filter(|m| **m != SchemeMode::Hybrid) {
        results.push((mode, solve_baseline(ch, cfg, mode, &pi, streams, opts)));
    }
    if modes.contains(&SchemeMode::Hybrid) {
        let warm: Vec<PrimalState> = results
            .iter()
            .filter(|(m, _)| SchemeMode::BASELINES.contains(m))
            .filter_map(|(_, r)| r.as_ref().ok().map(|t| t.state.clone()))
            .collect();
        let hybrid = multi_start(ch, cfg, SchemeMode::Hybrid, opts.n_starts, &pi, streams, &warm, &opts.backend);
        results.push((SchemeMode::Hybrid, hybrid));
    }
    // Report in the order requested.
    let mut ordered = Vec::with_capacity(modes.len());
    for &m in modes {
        if let Some(pos) = results.iter().position(|(x, _)| *x == m) {
            ordered.push(results.swap_remove(pos));
        }
    }
    ordered
}
