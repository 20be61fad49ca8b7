//! Netlist frozen into an MNA system: unknown layout, stamping and Newton.

use std::collections::HashMap;

use super::sparse::{SparseLu, SparseMatrix};
use super::{EngineError, IntegrationMethod, SolverConfig, SystemState};
use crate::netlist::{
    validate_netlist, DeviceKind, Diagnostic, EvalStats, Expr, Leaf, Netlist, NodeId, Tape,
    TapeScratch, Waveform,
};

type Slot = Option<usize>;

/// Switch state over time: a sorted list of transitions, each taking effect
/// for steps that start at or after its time.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Schedule {
    transitions: Vec<(f64, bool)>,
}

impl Schedule {
    fn from_intervals(intervals: &[(f64, f64)]) -> Self {
        let mut transitions = Vec::new();
        for &(on, off) in intervals {
            transitions.push((on, true));
            transitions.push((off, false));
        }
        Self { transitions }
    }

    pub(crate) fn add(&mut self, time: f64, closed: bool) {
        let k = self.transitions.partition_point(|(t, _)| *t <= time);
        self.transitions.insert(k, (time, closed));
    }

    pub(crate) fn closed_at(&self, t: f64) -> bool {
        let mut closed = false;
        for &(tt, c) in &self.transitions {
            if tt <= t {
                closed = c;
            } else {
                break;
            }
        }
        closed
    }

    fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.0)
    }
}

#[derive(Debug, Clone)]
enum Element {
    Conductance { a: Slot, b: Slot, g: f64 },
    Capacitor { a: Slot, b: Slot, c: f64, hist: usize, row: Option<usize>, ic: f64 },
    Inductor { a: Slot, b: Slot, l: f64, row: usize, ic: Option<f64> },
    VSource { a: Slot, b: Slot, row: usize, w: Waveform },
    ISource { a: Slot, b: Slot, w: Waveform },
    BVoltage { a: Slot, b: Slot, row: usize, tape: usize },
    BCurrent { a: Slot, b: Slot, tape: usize },
    Switch { a: Slot, b: Slot, sw: usize },
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Dc,
    Transient {
        prev: &'a [f64],
        prev_cap: &'a [f64],
        h: f64,
        be: bool,
        t_start: f64,
        t_end: f64,
    },
}

impl Mode<'_> {
    fn time(&self) -> f64 {
        match self {
            Mode::Dc => 0.0,
            Mode::Transient { t_end, .. } => *t_end,
        }
    }

    fn switch_time(&self) -> f64 {
        match self {
            Mode::Dc => 0.0,
            Mode::Transient { t_start, .. } => *t_start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NewtonReport {
    pub iterations: usize,
    pub guarded_divisions: u32,
}

#[derive(Default)]
struct Work {
    f: Vec<f64>,
    jv: Vec<f64>,
    entries: Option<Vec<(usize, usize)>>,
    scratch: TapeScratch,
    vars: Vec<f64>,
    probe_vars: Vec<f64>,
    grad: Vec<f64>,
    stats: EvalStats,
}

impl Work {
    #[inline]
    fn j(&mut self, r: Slot, c: Slot, v: f64) {
        if let (Some(r), Some(c)) = (r, c) {
            self.jv.push(v);
            if let Some(e) = &mut self.entries {
                e.push((r, c));
            }
        }
    }

    #[inline]
    fn f(&mut self, r: Slot, v: f64) {
        if let Some(r) = r {
            self.f[r] += v;
        }
    }

    /// Current `i` leaving `a` and entering `b`, with conductance `g`.
    fn conductance(&mut self, a: Slot, b: Slot, g: f64, i: f64) {
        self.f(a, i);
        self.f(b, -i);
        self.j(a, a, g);
        self.j(a, b, -g);
        self.j(b, a, -g);
        self.j(b, b, g);
    }

    /// Branch-current unknown `row` flowing from `a` through the device to `b`.
    fn branch_kcl(&mut self, a: Slot, b: Slot, row: usize, j: f64) {
        self.f(a, j);
        self.f(b, -j);
        self.j(a, Some(row), 1.0);
        self.j(b, Some(row), -1.0);
    }
}

#[inline]
fn volt(x: &[f64], s: Slot) -> f64 {
    s.map_or(0.0, |i| x[i])
}

fn inf_norm(v: &[f64]) -> (f64, usize) {
    let mut best = (0.0, 0);
    for (i, x) in v.iter().enumerate() {
        let a = x.abs();
        if a > best.0 || a.is_nan() {
            best = (a, i);
        }
    }
    best
}

/// A netlist compiled to a fixed MNA layout.
pub struct Circuit {
    node_unknowns: usize,
    n: usize,
    elements: Vec<Element>,
    element_labels: Vec<String>,
    tapes: Vec<Tape<usize>>,
    switches: Vec<Schedule>,
    switch_index: HashMap<String, usize>,
    branch_labels: Vec<String>,
    branch_index: HashMap<String, usize>,
    resistors: HashMap<String, (NodeId, NodeId, f64)>,
    node_count: usize,
    n_caps: usize,
    nodesets: Vec<(usize, f64)>,
    waveform_breaks: Vec<f64>,
    config: SolverConfig,
    work: Work,
    positions: Vec<usize>,
    matrix: SparseMatrix,
    lu: SparseLu,
}

impl std::fmt::Debug for Circuit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Circuit")
            .field("unknowns", &self.n)
            .field("elements", &self.elements.len())
            .finish()
    }
}

impl Circuit {
    pub fn new(netlist: &Netlist, config: &SolverConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let errors: Vec<Diagnostic> = validate_netlist(netlist)
            .into_iter()
            .filter(Diagnostic::is_error)
            .collect();
        if !errors.is_empty() {
            return Err(EngineError::Invalid(errors));
        }
        let node_count = netlist.node_count();
        let node_unknowns = node_count - 1;
        let slot = |n: NodeId| (!n.is_ground()).then(|| n.0 - 1);

        let mut branch_labels = Vec::new();
        let mut branch_index = HashMap::new();
        let mut resistors = HashMap::new();
        for d in netlist.devices() {
            if d.kind.has_branch_current() {
                branch_index.insert(d.label.clone(), branch_labels.len());
                branch_labels.push(d.label.clone());
            }
            if let DeviceKind::Resistor { ohms } = d.kind {
                resistors.insert(d.label.clone(), (d.pos, d.neg, ohms));
            }
        }
        let n = node_unknowns + branch_labels.len();

        let mut c = Circuit {
            node_unknowns,
            n,
            elements: Vec::new(),
            element_labels: Vec::new(),
            tapes: Vec::new(),
            switches: Vec::new(),
            switch_index: HashMap::new(),
            branch_labels,
            branch_index,
            resistors,
            node_count,
            n_caps: 0,
            nodesets: netlist
                .nodesets()
                .iter()
                .filter(|(k, _)| k.0 < node_count)
                .map(|(k, v)| (k.0 - 1, *v))
                .collect(),
            waveform_breaks: Vec::new(),
            config: config.clone(),
            work: Work::default(),
            positions: Vec::new(),
            matrix: SparseMatrix::from_entries(0, &[]).0,
            lu: SparseLu::new(&SparseMatrix::from_entries(1, &[]).0),
        };

        for d in netlist.devices() {
            let (a, b) = (slot(d.pos), slot(d.neg));
            let row = || node_unknowns + c.branch_index[&d.label];
            let el = match &d.kind {
                DeviceKind::Resistor { ohms } => Element::Conductance { a, b, g: 1.0 / ohms },
                DeviceKind::Capacitor {
                    farads,
                    initial_voltage,
                } => {
                    c.n_caps += 1;
                    Element::Capacitor {
                        a,
                        b,
                        c: *farads,
                        hist: c.n_caps - 1,
                        row: initial_voltage.map(|_| row()),
                        ic: initial_voltage.unwrap_or(0.0),
                    }
                }
                DeviceKind::Inductor {
                    henries,
                    initial_current,
                } => Element::Inductor {
                    a,
                    b,
                    l: *henries,
                    row: row(),
                    ic: *initial_current,
                },
                DeviceKind::VoltageSource(w) => {
                    c.waveform_breaks.extend(w.breakpoints());
                    Element::VSource {
                        a,
                        b,
                        row: row(),
                        w: w.clone(),
                    }
                }
                DeviceKind::CurrentSource(w) => {
                    c.waveform_breaks.extend(w.breakpoints());
                    Element::ISource { a, b, w: w.clone() }
                }
                DeviceKind::DependentVoltage(e) => {
                    let tape = c.compile(e).map_err(|m| EngineError::Probe {
                        probe: d.label.clone(),
                        message: m,
                    })?;
                    c.tapes.push(tape);
                    Element::BVoltage {
                        a,
                        b,
                        row: row(),
                        tape: c.tapes.len() - 1,
                    }
                }
                DeviceKind::DependentCurrent(e) => {
                    let tape = c.compile(e).map_err(|m| EngineError::Probe {
                        probe: d.label.clone(),
                        message: m,
                    })?;
                    c.tapes.push(tape);
                    Element::BCurrent {
                        a,
                        b,
                        tape: c.tapes.len() - 1,
                    }
                }
                DeviceKind::Switch { closed_intervals } => {
                    c.switch_index.insert(d.label.clone(), c.switches.len());
                    c.switches.push(Schedule::from_intervals(closed_intervals));
                    Element::Switch {
                        a,
                        b,
                        sw: c.switches.len() - 1,
                    }
                }
            };
            c.elements.push(el);
            c.element_labels.push(d.label.clone());
        }

        let max_slots = c.tapes.iter().map(|t| t.slots().len()).max().unwrap_or(0);
        c.work.vars = vec![0.0; max_slots];
        c.work.grad = vec![0.0; max_slots];
        c.work.f = vec![0.0; n];

        // Record the Jacobian pattern once; every mode stamps the same entries.
        c.work.entries = Some(Vec::new());
        let zeros = vec![0.0; n];
        c.assemble(&zeros, Mode::Dc, true)?;
        let entries = c.work.entries.take().unwrap_or_default();
        let (matrix, positions) = SparseMatrix::from_entries(n, &entries);
        c.lu = SparseLu::new(&matrix);
        c.matrix = matrix;
        c.positions = positions;
        Ok(c)
    }

    /// Compiles an expression over this circuit's unknowns. Resistor currents
    /// are substituted by Ohm's law.
    pub fn compile(&self, expr: &Expr) -> Result<Tape<usize>, String> {
        let e = expr.substitute_currents(&|label| {
            self.resistors
                .get(label)
                .map(|&(a, b, r)| (Expr::v(a) - Expr::v(b)) / r)
        });
        Tape::compile(&e, &mut |leaf| match leaf {
            Expr::Voltage(n) if n.is_ground() => Ok(Leaf::Zero),
            Expr::Voltage(n) if n.0 < self.node_count => Ok(Leaf::Var(n.0 - 1)),
            Expr::Voltage(n) => Err(format!("V({n}) does not exist")),
            Expr::Current(l) => self
                .branch_index
                .get(l.as_str())
                .map(|b| Leaf::Var(self.node_unknowns + b))
                .ok_or_else(|| format!("I({l}) is not observable")),
            _ => unreachable!("tape leaves are voltages and currents"),
        })
    }

    pub fn unknown_count(&self) -> usize {
        self.n
    }

    pub fn node_unknowns(&self) -> usize {
        self.node_unknowns
    }

    pub fn branch_index(&self, label: &str) -> Option<usize> {
        self.branch_index.get(label).map(|b| self.node_unknowns + b)
    }

    pub fn method(&self) -> IntegrationMethod {
        self.config.method
    }

    pub(crate) fn schedule_mut(&mut self, label: &str) -> Option<&mut Schedule> {
        let k = *self.switch_index.get(label)?;
        Some(&mut self.switches[k])
    }

    /// Times at which sources or switches change discontinuously.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.waveform_breaks.clone();
        for s in &self.switches {
            v.extend(s.times());
        }
        v.retain(|t| t.is_finite() && *t > 0.0);
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Whether a source changes value right after t = 0, so the first step
    /// must restart the integration history.
    pub(crate) fn has_initial_discontinuity(&self) -> bool {
        self.waveform_breaks.iter().any(|&t| t <= 0.0)
    }

    pub(crate) fn check_state(&self, state: &SystemState) -> Result<(), EngineError> {
        if state.unknowns.len() != self.n || state.capacitor_currents.len() != self.n_caps {
            return Err(EngineError::DimensionMismatch {
                expected: self.n,
                found: state.unknowns.len(),
            });
        }
        Ok(())
    }

    fn describe(&self, i: usize) -> String {
        if i < self.node_unknowns {
            format!("node {}", i + 1)
        } else {
            format!("branch of `{}`", self.branch_labels[i - self.node_unknowns])
        }
    }

    fn assemble(&mut self, x: &[f64], mode: Mode<'_>, pattern_only: bool) -> Result<(), EngineError> {
        let Circuit {
            elements,
            element_labels,
            tapes,
            switches,
            config,
            work,
            ..
        } = self;
        work.f.iter_mut().for_each(|v| *v = 0.0);
        work.jv.clear();
        let t = mode.time();
        let t_sw = mode.switch_time();
        for (idx, el) in elements.iter().enumerate() {
            match *el {
                Element::Conductance { a, b, g } => {
                    let i = g * (volt(x, a) - volt(x, b));
                    work.conductance(a, b, g, i);
                }
                Element::Switch { a, b, sw } => {
                    let g = if switches[sw].closed_at(t_sw) {
                        config.switch_g_on
                    } else {
                        config.switch_g_off
                    };
                    let i = g * (volt(x, a) - volt(x, b));
                    work.conductance(a, b, g, i);
                }
                Element::Capacitor {
                    a,
                    b,
                    c,
                    hist,
                    row: None,
                    ..
                } => {
                    let (g, i) = match mode {
                        Mode::Dc => (0.0, 0.0),
                        Mode::Transient {
                            prev, prev_cap, h, be, ..
                        } => {
                            let v = volt(x, a) - volt(x, b);
                            let vn = volt(prev, a) - volt(prev, b);
                            if be {
                                (c / h, c / h * (v - vn))
                            } else {
                                (2.0 * c / h, 2.0 * c / h * (v - vn) - prev_cap[hist])
                            }
                        }
                    };
                    work.conductance(a, b, g, i);
                }
                Element::Capacitor {
                    a,
                    b,
                    c,
                    row: Some(row),
                    ic,
                    ..
                } => {
                    let j = x[row];
                    work.branch_kcl(a, b, row, j);
                    let v = volt(x, a) - volt(x, b);
                    let r = Some(row);
                    match mode {
                        Mode::Dc => {
                            work.f(r, v - ic);
                            work.j(r, a, 1.0);
                            work.j(r, b, -1.0);
                            work.j(r, r, 0.0);
                        }
                        Mode::Transient { prev, h, be, .. } => {
                            let vn = volt(prev, a) - volt(prev, b);
                            let (g, hist) = if be { (c / h, 0.0) } else { (2.0 * c / h, prev[row]) };
                            work.f(r, j - g * (v - vn) + hist);
                            work.j(r, a, -g);
                            work.j(r, b, g);
                            work.j(r, r, 1.0);
                        }
                    }
                }
                Element::Inductor { a, b, l, row, ic } => {
                    let j = x[row];
                    work.branch_kcl(a, b, row, j);
                    let v = volt(x, a) - volt(x, b);
                    let r = Some(row);
                    let (fv, da, drr) = match (mode, ic) {
                        (Mode::Dc, Some(i0)) => (j - i0, 0.0, 1.0),
                        (Mode::Dc, None) => (v, 1.0, 0.0),
                        (Mode::Transient { prev, h, be, .. }, _) => {
                            let jn = prev[row];
                            if be {
                                (v - l / h * (j - jn), 1.0, -l / h)
                            } else {
                                let vn = volt(prev, a) - volt(prev, b);
                                (v + vn - 2.0 * l / h * (j - jn), 1.0, -2.0 * l / h)
                            }
                        }
                    };
                    work.f(r, fv);
                    work.j(r, a, da);
                    work.j(r, b, -da);
                    work.j(r, r, drr);
                }
                Element::VSource { a, b, row, ref w } => {
                    let j = x[row];
                    work.branch_kcl(a, b, row, j);
                    let r = Some(row);
                    work.f(r, volt(x, a) - volt(x, b) - w.value(t));
                    work.j(r, a, 1.0);
                    work.j(r, b, -1.0);
                }
                Element::ISource { a, b, ref w } => {
                    let i = w.value(t);
                    work.f(a, i);
                    work.f(b, -i);
                }
                Element::BVoltage { a, b, row, tape } => {
                    let j = x[row];
                    work.branch_kcl(a, b, row, j);
                    let r = Some(row);
                    let tape = &tapes[tape];
                    let val = eval_tape(tape, x, t, work, pattern_only)
                        .map_err(|e| expression_error(&element_labels[idx], e))?;
                    work.f(r, volt(x, a) - volt(x, b) - val);
                    work.j(r, a, 1.0);
                    work.j(r, b, -1.0);
                    for (s, &col) in tape.slots().iter().enumerate() {
                        let g = work.grad[s];
                        work.j(r, Some(col), -g);
                    }
                }
                Element::BCurrent { a, b, tape } => {
                    let tape = &tapes[tape];
                    let val = eval_tape(tape, x, t, work, pattern_only)
                        .map_err(|e| expression_error(&element_labels[idx], e))?;
                    work.f(a, val);
                    work.f(b, -val);
                    for (s, &col) in tape.slots().iter().enumerate() {
                        let g = work.grad[s];
                        work.j(a, Some(col), g);
                        work.j(b, Some(col), -g);
                    }
                }
            }
        }
        Ok(())
    }

    fn load_matrix(&mut self) {
        let vals = self.matrix.values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        for (&p, &v) in self.positions.iter().zip(&self.work.jv) {
            vals[p] += v;
        }
    }

    pub fn assemble_dc(&mut self, x: &[f64]) -> Result<(SparseMatrix, Vec<f64>), EngineError> {
        self.assemble(x, Mode::Dc, false)?;
        self.load_matrix();
        Ok((self.matrix.clone(), self.work.f.clone()))
    }

    pub fn assemble_transient(
        &mut self,
        x: &[f64],
        prev: &SystemState,
        t_end: f64,
        be: bool,
    ) -> Result<(SparseMatrix, Vec<f64>), EngineError> {
        let mode = Mode::Transient {
            prev: &prev.unknowns,
            prev_cap: &prev.capacitor_currents,
            h: t_end - prev.time,
            be,
            t_start: prev.time,
            t_end,
        };
        self.assemble(x, mode, false)?;
        self.load_matrix();
        Ok((self.matrix.clone(), self.work.f.clone()))
    }

    fn newton(&mut self, x: &mut [f64], mode: Mode<'_>, damped: bool) -> Result<NewtonReport, EngineError> {
        let abs_tol = self.config.newton_abs_tol;
        let rel_tol = self.config.newton_rel_tol;
        let time = mode.time();
        self.work.stats = EvalStats::default();
        self.assemble(x, mode, false)?;
        let (mut res, _) = inf_norm(&self.work.f);
        if res < abs_tol {
            return Ok(self.report(0));
        }
        let mut best = (res, x.to_vec());
        let mut delta = vec![0.0; self.n];
        let mut trial = vec![0.0; self.n];
        let mut row_scale;
        for it in 1..=self.config.max_newton_iters {
            self.load_matrix();
            row_scale = self.matrix.row_scales();
            self.lu
                .factor(&self.matrix)
                .map_err(|_| EngineError::Singular { time })?;
            for (d, f) in delta.iter_mut().zip(&self.work.f) {
                *d = -f;
            }
            self.lu
                .solve(&mut delta)
                .map_err(|_| EngineError::Singular { time })?;

            let mut lambda = 1.0;
            if damped {
                let old = res;
                let mut accepted = false;
                for _ in 0..12 {
                    for ((t, xi), d) in trial.iter_mut().zip(x.iter()).zip(&delta) {
                        *t = xi + lambda * d;
                    }
                    if self.assemble(&trial, mode, false).is_ok() {
                        res = inf_norm(&self.work.f).0;
                        if res < old {
                            accepted = true;
                            break;
                        }
                    }
                    lambda *= 0.5;
                }
                if !accepted {
                    // Take the full step anyway; the residual may have to rise
                    // before it falls.
                    lambda = 1.0;
                    for ((t, xi), d) in trial.iter_mut().zip(x.iter()).zip(&delta) {
                        *t = xi + d;
                    }
                    self.assemble(&trial, mode, false)?;
                    res = inf_norm(&self.work.f).0;
                }
                x.copy_from_slice(&trial);
            } else {
                for (xi, d) in x.iter_mut().zip(&delta) {
                    *xi += d;
                }
                self.assemble(x, mode, false)?;
                res = inf_norm(&self.work.f).0;
            }
            if res.is_nan() {
                break;
            }
            if res < best.0 {
                best = (res, x.to_vec());
            }
            let step = lambda * inf_norm(&delta).0;
            let scale = inf_norm(x).0;
            // Rows with large entries (stiff companions, closed switches)
            // carry proportionally large roundoff.
            let scaled = self
                .work
                .f
                .iter()
                .zip(&row_scale)
                .map(|(f, s)| (f / s).abs())
                .fold(0.0, f64::max);
            if scaled < abs_tol || (lambda == 1.0 && step <= abs_tol + rel_tol * scale && scaled < 10.0 * abs_tol) {
                return Ok(self.report(it));
            }
        }
        let worst = {
            let _ = self.assemble(&best.1, mode, false);
            self.describe(inf_norm(&self.work.f).1)
        };
        Err(EngineError::NonConvergence {
            time,
            iterations: self.config.max_newton_iters,
            residual: best.0,
            worst,
            best: best.1,
        })
    }

    fn report(&self, iterations: usize) -> NewtonReport {
        NewtonReport {
            iterations,
            guarded_divisions: self.work.stats.guarded_divisions,
        }
    }

    /// Operating point: capacitors without an initial voltage open, inductors
    /// shorted, damped Newton from the nodesets (or `initial_guess`).
    pub fn solve_dc(&mut self, initial_guess: Option<&[f64]>) -> Result<SystemState, EngineError> {
        let mut x = match initial_guess {
            Some(g) if g.len() == self.n => g.to_vec(),
            Some(g) => {
                return Err(EngineError::DimensionMismatch {
                    expected: self.n,
                    found: g.len(),
                })
            }
            None => {
                let mut x = vec![0.0; self.n];
                for &(k, v) in &self.nodesets {
                    x[k] = v;
                }
                x
            }
        };
        let report = self.newton(&mut x, Mode::Dc, true)?;
        let capacitor_currents = self.capacitor_currents(&x, Mode::Dc);
        Ok(SystemState {
            time: 0.0,
            unknowns: x,
            node_unknowns: self.node_unknowns,
            capacitor_currents,
            newton_iterations: report.iterations,
            guarded_divisions: report.guarded_divisions,
        })
    }

    fn capacitor_currents(&self, x: &[f64], mode: Mode<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_caps];
        for el in &self.elements {
            if let Element::Capacitor {
                a, b, c, hist, row, ..
            } = *el
            {
                out[hist] = match (row, mode) {
                    (Some(r), _) => x[r],
                    (None, Mode::Dc) => 0.0,
                    (None, Mode::Transient { prev, prev_cap, h, be, .. }) => {
                        let dv = (volt(x, a) - volt(x, b)) - (volt(prev, a) - volt(prev, b));
                        if be {
                            c / h * dv
                        } else {
                            2.0 * c / h * dv - prev_cap[hist]
                        }
                    }
                };
            }
        }
        out
    }

    /// One implicit step from `prev` to `t_end`, starting Newton at `guess`.
    pub fn step(
        &mut self,
        prev: &SystemState,
        guess: Option<&[f64]>,
        t_end: f64,
        backward_euler: bool,
    ) -> Result<SystemState, EngineError> {
        let mut x = guess.unwrap_or(&prev.unknowns).to_vec();
        let mode = Mode::Transient {
            prev: &prev.unknowns,
            prev_cap: &prev.capacitor_currents,
            h: t_end - prev.time,
            be: backward_euler,
            t_start: prev.time,
            t_end,
        };
        let report = self.newton(&mut x, mode, false)?;
        let capacitor_currents = self.capacitor_currents(&x, mode);
        Ok(SystemState {
            time: t_end,
            unknowns: x,
            node_unknowns: self.node_unknowns,
            capacitor_currents,
            newton_iterations: report.iterations,
            guarded_divisions: report.guarded_divisions,
        })
    }

    /// [`Circuit::step`], retried once as two half steps when Newton fails.
    pub fn step_with_retry(
        &mut self,
        prev: &SystemState,
        guess: Option<&[f64]>,
        t_end: f64,
        backward_euler: bool,
    ) -> Result<SystemState, EngineError> {
        match self.step(prev, guess, t_end, backward_euler) {
            Ok(s) => Ok(s),
            Err(e) if retryable(&e) => {
                log::debug!("step to t = {t_end} failed ({e}); retrying with half steps");
                let mid = prev.time + 0.5 * (t_end - prev.time);
                let half = self.step(prev, None, mid, backward_euler)?;
                let be = self.config.method == IntegrationMethod::BackwardEuler;
                let mut out = self.step(&half, None, t_end, be)?;
                out.newton_iterations += half.newton_iterations;
                out.guarded_divisions += half.guarded_divisions;
                Ok(out)
            }
            Err(e) => Err(e),
        }
    }

    /// Evaluates a tape compiled by [`Circuit::compile`] on a state.
    pub fn eval(&mut self, tape: &Tape<usize>, state: &SystemState) -> Result<f64, crate::netlist::EvalError> {
        let vars = &mut self.work.probe_vars;
        vars.clear();
        vars.extend(tape.slots().iter().map(|&s| state.unknowns[s]));
        tape.eval(vars, state.time, &mut self.work.scratch, &mut self.work.stats)
    }
}

fn retryable(e: &EngineError) -> bool {
    matches!(
        e,
        EngineError::NonConvergence { .. } | EngineError::Singular { .. } | EngineError::Expression { .. }
    )
}

fn expression_error(label: &str, source: crate::netlist::EvalError) -> EngineError {
    EngineError::Expression {
        device: label.to_string(),
        source,
    }
}

fn eval_tape(
    tape: &Tape<usize>,
    x: &[f64],
    t: f64,
    work: &mut Work,
    pattern_only: bool,
) -> Result<f64, crate::netlist::EvalError> {
    let k = tape.slots().len();
    if pattern_only {
        work.grad[..k].iter_mut().for_each(|g| *g = 0.0);
        return Ok(0.0);
    }
    for (v, &s) in work.vars.iter_mut().zip(tape.slots()) {
        *v = x[s];
    }
    tape.eval_grad(&work.vars[..k], t, &mut work.grad[..k], &mut work.scratch, &mut work.stats)
}
