//! Whole-case pipeline: case files, compilation to one netlist, events,
//! probes and CSV output.

mod case;
pub mod cdf;
mod compile;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::{EngineError, Simulator, SolverConfig};
use crate::grid::{GridError, PowerFlowOptions};
use crate::machine::MachineError;
use crate::netlist::NetlistError;
use crate::series::TimeSeries;

pub use case::{case_to_json, parse_case, Case, Event, EventKind, Fault, FaultSite, MachineSpec, ProbeSpec, FORMAT_VERSION};
pub use compile::{
    check_horizon, compile_case, compile_prepared, place_midline_fault, prepare, resolve_faults, split_branch,
    switch_intervals, CompiledCase, CompiledMachine, MachineOperatingPoint, Prepared,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("case schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("invalid case: {0}")]
    Invalid(String),
    #[error("invalid network: {0}")]
    Grid(#[source] GridError),
    #[error("power flow: {0}")]
    PowerFlow(#[source] GridError),
    #[error("machine on bus {bus}: {source}")]
    Machine { bus: u32, source: MachineError },
    #[error("netlist: {0}")]
    Netlist(#[from] NetlistError),
    #[error("probe `{name}`: {message}")]
    Probe { name: String, message: String },
    #[error("{stage}: {source}")]
    Engine {
        stage: &'static str,
        #[source]
        source: EngineError,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

impl ScenarioError {
    /// Failures of an iterative solver, as opposed to bad input.
    pub fn is_convergence_failure(&self) -> bool {
        match self {
            ScenarioError::PowerFlow(e) => matches!(e, GridError::Divergence { .. } | GridError::SingularJacobian(_)),
            ScenarioError::Engine { source, .. } => source.is_convergence_failure(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioConfig {
    pub solver: SolverConfig,
    pub power_flow: PowerFlowOptions,
    /// Channels added to the case's own probes.
    pub extra_probes: Vec<ProbeSpec>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub series: TimeSeries,
    pub steps: usize,
    pub newton_iterations: usize,
    /// Largest bus-voltage difference between the circuit's operating point
    /// and the power flow.
    pub dc_mismatch: f64,
    pub elapsed: Duration,
}

/// Power flow, machine initialization, operating point and transient run.
pub fn run_scenario(case: &Case, config: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    let started = Instant::now();
    check_horizon(case, &config.solver)?;
    let prepared = prepare(case, &config.power_flow)?;
    log::info!(
        "power flow converged in {} iterations (mismatch {:.2e})",
        prepared.power_flow.iterations,
        prepared.power_flow.max_mismatch
    );
    let compiled = compile_prepared(prepared, &config.extra_probes)?;
    log::info!(
        "compiled {} devices on {} nodes",
        compiled.netlist.devices().len(),
        compiled.netlist.node_count()
    );
    let engine = |stage| move |source| ScenarioError::Engine { stage, source };
    let mut sim = Simulator::new(&compiled.netlist, &config.solver, &[]).map_err(engine("setup"))?;
    let report = sim.run(&compiled.probes).map_err(engine("transient"))?;
    let dc_mismatch = compiled.power_flow_mismatch(&report.initial_state);
    if dc_mismatch > 1e-6 {
        log::warn!("operating point departs from the power flow by {dc_mismatch:.2e} p.u.");
    }
    let elapsed = started.elapsed();
    log::info!(
        "{} steps, {} Newton iterations, {:.3} s wall clock",
        report.steps,
        report.newton_iterations,
        elapsed.as_secs_f64()
    );
    Ok(ScenarioOutput {
        series: report.series,
        steps: report.steps,
        newton_iterations: report.newton_iterations,
        dc_mismatch,
        elapsed,
    })
}

/// `time` plus one column per channel, shortest round-trip decimal form,
/// LF line endings.
pub fn write_csv_to<W: Write>(series: &TimeSeries, out: W) -> Result<(), ScenarioError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(series.names().iter().cloned());
    w.write_record(&header)?;
    let cols: Vec<&[f64]> = series.channels().map(|(_, c)| c).collect();
    let mut row = Vec::with_capacity(cols.len() + 1);
    for (k, t) in series.time().iter().enumerate() {
        row.clear();
        row.push(t.to_string());
        row.extend(cols.iter().map(|c| c[k].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(series: &TimeSeries, path: &Path) -> Result<(), ScenarioError> {
    let file = std::fs::File::create(path)?;
    write_csv_to(series, std::io::BufWriter::new(file))
}

pub fn read_csv(path: &Path) -> Result<TimeSeries, ScenarioError> {
    let mut r = csv::ReaderBuilder::new().from_path(path)?;
    let headers = r.headers()?.clone();
    let bad = |line: usize, message: String| ScenarioError::Parse { line, message };
    if headers.get(0) != Some("time") {
        return Err(bad(1, "first column must be `time`".into()));
    }
    let mut series = TimeSeries::new(headers.iter().skip(1)).map_err(|e| bad(1, e.to_string()))?;
    let mut values = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(k + 2, format!("`{s}`: {e}")));
        let t = parse(rec.get(0).unwrap_or(""))?;
        values.clear();
        for s in rec.iter().skip(1) {
            values.push(parse(s)?);
        }
        series.push(t, &values).map_err(|e| bad(k + 2, e.to_string()))?;
    }
    Ok(series)
}
