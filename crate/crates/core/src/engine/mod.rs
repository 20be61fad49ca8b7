//! Modified nodal analysis: DC operating point and implicit transient
//! integration with Newton iterations.

mod circuit;
mod sparse;
mod transient;

use thiserror::Error;

use crate::netlist::{Diagnostic, EvalError, Netlist, NodeId};
use crate::series::TimeSeries;

pub use circuit::{Circuit, NewtonReport};
pub use sparse::{SparseLu, SparseMatrix};
pub use transient::{Probe, RunReport, Simulator, SwitchEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegrationMethod {
    #[default]
    Trapezoidal,
    BackwardEuler,
}

impl std::str::FromStr for IntegrationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "trap" | "trapezoidal" => Ok(Self::Trapezoidal),
            "be" | "euler" | "backward_euler" | "backward-euler" => Ok(Self::BackwardEuler),
            other => Err(format!("unknown integration method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_stop: f64,
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub max_newton_iters: usize,
    pub method: IntegrationMethod,
    pub switch_g_on: f64,
    pub switch_g_off: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_stop: 20.0,
            newton_abs_tol: 1e-8,
            newton_rel_tol: 1e-6,
            max_newton_iters: 50,
            method: IntegrationMethod::Trapezoidal,
            switch_g_on: 1e6,
            switch_g_off: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |what: &str| Err(EngineError::Config(what.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_stop >= 0.0 && self.t_stop.is_finite()) {
            return bad("t_stop must be non-negative");
        }
        if !(self.newton_abs_tol > 0.0 && self.newton_rel_tol > 0.0) {
            return bad("Newton tolerances must be positive");
        }
        if self.max_newton_iters == 0 {
            return bad("max_newton_iters must be at least 1");
        }
        if !(self.switch_g_on > 0.0 && self.switch_g_off > 0.0) {
            return bad("switch conductances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("netlist is not simulable: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("device `{device}`: {source}")]
    Expression { device: String, source: EvalError },
    #[error("singular matrix at t = {time}")]
    Singular { time: f64 },
    #[error("Newton did not converge at t = {time} after {iterations} iterations (residual {residual:e} at {worst})")]
    NonConvergence {
        time: f64,
        iterations: usize,
        residual: f64,
        worst: String,
        best: Vec<f64>,
    },
    #[error("state has {found} unknowns, circuit needs {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown switch `{0}`")]
    UnknownSwitch(String),
    #[error("probe `{probe}`: {message}")]
    Probe { probe: String, message: String },
}

impl EngineError {
    pub fn is_convergence_failure(&self) -> bool {
        matches!(self, EngineError::NonConvergence { .. } | EngineError::Singular { .. })
    }
}

/// Solution vector plus integration history at one time point.
///
/// Unknowns are the non-ground node voltages (node `k` at index `k − 1`)
/// followed by the branch currents of voltage-defined devices in netlist
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub time: f64,
    pub(crate) unknowns: Vec<f64>,
    pub(crate) node_unknowns: usize,
    /// Capacitor currents in netlist order, needed by the trapezoidal rule.
    pub(crate) capacitor_currents: Vec<f64>,
    pub newton_iterations: usize,
    pub guarded_divisions: u32,
}

impl SystemState {
    pub fn voltage(&self, node: NodeId) -> f64 {
        if node.is_ground() {
            0.0
        } else {
            self.unknowns[node.0 - 1]
        }
    }

    pub fn node_voltages(&self) -> &[f64] {
        &self.unknowns[..self.node_unknowns]
    }

    pub fn branch_currents(&self) -> &[f64] {
        &self.unknowns[self.node_unknowns..]
    }

    pub fn unknowns(&self) -> &[f64] {
        &self.unknowns
    }

    pub fn capacitor_currents(&self) -> &[f64] {
        &self.capacitor_currents
    }
}

/// Jacobian and residual of the MNA system at `state`. With `time = None` the
/// DC system is assembled; otherwise the transient system for a step from
/// `state.time` to `time`.
pub fn assemble_system(
    netlist: &Netlist,
    state: &SystemState,
    config: &SolverConfig,
    time: Option<f64>,
) -> Result<(SparseMatrix, Vec<f64>), EngineError> {
    let mut c = Circuit::new(netlist, config)?;
    c.check_state(state)?;
    match time {
        None => c.assemble_dc(state.unknowns()),
        Some(t) => c.assemble_transient(state.unknowns(), state, t, config.method == IntegrationMethod::BackwardEuler),
    }
}

pub fn solve_dc_operating_point(
    netlist: &Netlist,
    config: &SolverConfig,
    initial_guess: Option<&[f64]>,
) -> Result<SystemState, EngineError> {
    Circuit::new(netlist, config)?.solve_dc(initial_guess)
}

/// Advances `state` by `config.dt`.
pub fn step_transient(
    netlist: &Netlist,
    state: &SystemState,
    config: &SolverConfig,
) -> Result<SystemState, EngineError> {
    let mut c = Circuit::new(netlist, config)?;
    c.check_state(state)?;
    c.step_with_retry(state, None, state.time + config.dt, config.method == IntegrationMethod::BackwardEuler)
}

pub fn run_transient(
    netlist: &Netlist,
    config: &SolverConfig,
    events: &[SwitchEvent],
    probes: &[Probe],
) -> Result<TimeSeries, EngineError> {
    Ok(Simulator::new(netlist, config, events)?.run(probes)?.series)
}
