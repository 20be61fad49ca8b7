use std::time::Instant;

use super::circuit::Circuit;
use super::{EngineError, IntegrationMethod, SolverConfig, SystemState};
use crate::netlist::{Expr, Netlist, NodeId, Tape};
use crate::series::TimeSeries;

/// Switch toggle applied on top of the switch's own closed intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub switch: String,
    pub closed: bool,
}

/// A named channel recorded at every output sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub expr: Expr,
}

impl Probe {
    pub fn voltage(name: impl Into<String>, node: impl Into<NodeId>) -> Self {
        Self {
            name: name.into(),
            expr: Expr::v(node),
        }
    }

    /// Current of a resistor or branch-current device.
    pub fn current(name: impl Into<String>, label: &str) -> Self {
        Self {
            name: name.into(),
            expr: Expr::i(label),
        }
    }

    pub fn expression(name: impl Into<String>, expr: Expr) -> Self {
        Self {
            name: name.into(),
            expr,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub series: TimeSeries,
    pub steps: usize,
    pub newton_iterations: usize,
    pub guarded_divisions: u64,
    pub initial_state: SystemState,
    pub final_state: SystemState,
}

/// Transient driver over one compiled circuit.
#[derive(Debug)]
pub struct Simulator {
    circuit: Circuit,
    config: SolverConfig,
}

impl Simulator {
    pub fn new(netlist: &Netlist, config: &SolverConfig, events: &[SwitchEvent]) -> Result<Self, EngineError> {
        let mut circuit = Circuit::new(netlist, config)?;
        for ev in events {
            circuit
                .schedule_mut(&ev.switch)
                .ok_or_else(|| EngineError::UnknownSwitch(ev.switch.clone()))?
                .add(ev.time, ev.closed);
        }
        Ok(Self {
            circuit,
            config: config.clone(),
        })
    }

    pub fn circuit(&mut self) -> &mut Circuit {
        &mut self.circuit
    }

    pub fn run(&mut self, probes: &[Probe]) -> Result<RunReport, EngineError> {
        self.run_with_guess(probes, None)
    }

    /// Solves the operating point (from `guess` if given) and integrates to
    /// `t_stop`, sampling every `dt`. Breakpoints between samples shorten the
    /// step so it lands on them; the step after a breakpoint is backward Euler.
    pub fn run_with_guess(&mut self, probes: &[Probe], guess: Option<&[f64]>) -> Result<RunReport, EngineError> {
        let started = Instant::now();
        let tapes: Vec<Tape<usize>> = probes
            .iter()
            .map(|p| {
                self.circuit.compile(&p.expr).map_err(|message| EngineError::Probe {
                    probe: p.name.clone(),
                    message,
                })
            })
            .collect::<Result<_, _>>()?;
        let mut series = TimeSeries::new(probes.iter().map(|p| p.name.clone())).map_err(|e| EngineError::Probe {
            probe: String::new(),
            message: e.to_string(),
        })?;

        let initial = self.circuit.solve_dc(guess)?;
        log::debug!("operating point in {} Newton iterations", initial.newton_iterations);
        let mut values = vec![0.0; probes.len()];
        self.sample(&tapes, probes, &initial, &mut values)?;
        series.push(0.0, &values).expect("width checked");

        let dt = self.config.dt;
        let t_stop = self.config.t_stop;
        let n_samples = {
            let r = t_stop / dt;
            if (r - r.round()).abs() < 1e-9 {
                r.round() as usize
            } else {
                r.ceil() as usize
            }
        };
        let grid = |k: usize| if k == n_samples { t_stop } else { k as f64 * dt };
        let eps = 1e-9 * dt;
        let mut breaks: Vec<f64> = self
            .circuit
            .breakpoints()
            .into_iter()
            .filter(|&b| b < t_stop)
            .map(|b| {
                let k = (b / dt).round();
                if (k * dt - b).abs() <= eps {
                    k * dt
                } else {
                    b
                }
            })
            .collect();
        breaks.dedup();
        let mut at_break = self.circuit.has_initial_discontinuity();
        let method_be = self.config.method == IntegrationMethod::BackwardEuler;

        let mut state = initial.clone();
        let mut older: Option<(Vec<f64>, f64)> = None;
        let mut steps = 0;
        let mut newton_iterations = 0;
        let mut guarded: u64 = 0;
        let mut bi = 0;
        let mut guess = Vec::new();
        for k in 1..=n_samples {
            let tg = grid(k);
            while state.time < tg - eps {
                while bi < breaks.len() && breaks[bi] <= state.time + eps {
                    bi += 1;
                }
                let target = if bi < breaks.len() && breaks[bi] < tg - eps {
                    breaks[bi]
                } else {
                    tg
                };
                let h = target - state.time;
                let predictor = match &older {
                    Some((x_old, h_old)) if !at_break => {
                        let r = h / h_old;
                        guess.clear();
                        guess.extend(state.unknowns.iter().zip(x_old).map(|(x, xo)| x + r * (x - xo)));
                        Some(guess.as_slice())
                    }
                    _ => None,
                };
                let next = self
                    .circuit
                    .step_with_retry(&state, predictor, target, method_be || at_break)?;
                steps += 1;
                newton_iterations += next.newton_iterations;
                if next.guarded_divisions > 0 {
                    log::debug!("t = {target}: {} guarded divisions", next.guarded_divisions);
                    guarded += next.guarded_divisions as u64;
                }
                at_break = bi < breaks.len() && (breaks[bi] - target).abs() <= eps;
                let prev = std::mem::replace(&mut state, next);
                older = Some((prev.unknowns, h));
            }
            self.sample(&tapes, probes, &state, &mut values)?;
            series.push(tg, &values).expect("width checked");
        }
        if guarded > 0 {
            log::warn!("{guarded} divisions hit the denominator guard during the run");
        }
        log::info!(
            "transient: {steps} steps, {newton_iterations} Newton iterations, {:.3} s",
            started.elapsed().as_secs_f64()
        );
        Ok(RunReport {
            series,
            steps,
            newton_iterations,
            guarded_divisions: guarded,
            initial_state: initial,
            final_state: state,
        })
    }

    fn sample(
        &mut self,
        tapes: &[Tape<usize>],
        probes: &[Probe],
        state: &SystemState,
        out: &mut [f64],
    ) -> Result<(), EngineError> {
        for ((tape, probe), o) in tapes.iter().zip(probes).zip(out.iter_mut()) {
            *o = self.circuit.eval(tape, state).map_err(|e| EngineError::Probe {
                probe: probe.name.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}
