//! Convex surrogate subproblem: construction, solution and extraction.

mod build;
mod clarabel_backend;
pub mod program;

pub use build::{build_subproblem, extract_point, CMatVars, Fraction, FractionPattern, HermVars, Layout, SubproblemModel, ALPHA_FLOOR};
pub use clarabel_backend::{ClarabelBackend, SolverProfile};
pub use program::{ConeBlock, ConeKind, ConicProgram, LinExpr};

use crate::error::{Error, Result};
use crate::fp_aux::{check_finite, update_auxiliaries};
use crate::link_model::{PrimalState, SicOrder};
use crate::scenario::{ChannelSet, SystemConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Solved to reduced accuracy; the point is still usable.
    Inaccurate,
    Infeasible,
    Failed,
}

impl SolveStatus {
    pub fn is_usable(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Inaccurate)
    }
}

#[derive(Clone, Debug)]
pub struct SolverReport {
    pub status: SolveStatus,
    /// Backend-specific status text.
    pub raw_status: String,
    pub objective: f64,
    pub iterations: usize,
    pub solve_time: f64,
    pub x: Vec<f64>,
}

/// Anything that can solve a [`ConicProgram`].
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, prog: &ConicProgram) -> Result<SolverReport>;
}

/// Relative tolerance for the generating point to count as feasible.
pub const WARM_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct SubproblemOutcome {
    pub state: PrimalState,
    pub report: SolverReport,
    /// Surrogate objective at the generating point (equals its exact time).
    pub warm_objective: f64,
}

/// Builds the surrogate around `state` and checks that `state` itself is a
/// feasible point of it.
pub fn prepare_subproblem(
    state: &PrimalState,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    pi: &SicOrder,
    pattern: &FractionPattern,
) -> Result<SubproblemModel> {
    let aux = update_auxiliaries(state, ch, cfg, pi)?;
    check_finite(&aux)?;
    let model = build_subproblem(state, &aux, ch, cfg, pi, pattern)?;
    let viol = model.program.max_violation(&model.program.warm);
    if viol > WARM_TOLERANCE {
        let worst = model.program.worst_block(&model.program.warm);
        return Err(Error::MalformedProgram(format!(
            "generating point violates the surrogate by {viol:e} (block {worst:?})"
        )));
    }
    Ok(model)
}

/// One surrogate step: auxiliaries, convex solve, exact re-evaluation.
pub fn solve_subproblem(
    state: &PrimalState,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    pi: &SicOrder,
    pattern: &FractionPattern,
    backend: &dyn ConicBackend,
) -> Result<SubproblemOutcome> {
    let model = prepare_subproblem(state, ch, cfg, pi, pattern)?;
    let warm_objective = model.program.objective_at(&model.program.warm);
    let report = backend.solve(&model.program)?;
    if !report.status.is_usable() {
        return Err(Error::Solver(format!("{} returned {}", backend.name(), report.raw_status)));
    }
    let (split, tx, quant) = extract_point(&model, &report.x, state, cfg);
    let next = PrimalState::evaluate(split, tx, quant, ch, cfg, pi)?;
    Ok(SubproblemOutcome {
        state: next,
        report,
        warm_objective,
    })
}
