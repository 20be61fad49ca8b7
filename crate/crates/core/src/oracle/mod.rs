//! Reference integrator: the case as one differential-algebraic system,
//! network equations and machine/controller states solved simultaneously
//! by Newton at every trapezoidal step. No netlist is involved, so agreement
//! with the circuit path checks the compilation and the MNA solver; the two
//! share only the machine equation layer and the case preparation.

mod compare;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub use compare::{compare_series, ChannelReport, CompareError, CompareReport, Tolerances};

use crate::engine::IntegrationMethod;
use crate::grid::{build_ybus, Bus, BusKind, BusNodes, LoadKind, Network};
use crate::machine::equations::saturation_term;
use crate::machine::{ExciterParams, GovernorF, GovernorParams, Genrou};
use crate::netlist::{Expr, MapBindings, Netlist, NodeId};
use crate::scenario::{check_horizon, prepare, switch_intervals, FaultSite, Prepared, ScenarioConfig, ScenarioError};
use crate::series::TimeSeries;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("t = {time}: Newton did not converge in {iterations} iterations (last update {update:.3e})")]
    NonConvergence { time: f64, iterations: usize, update: f64 },
    #[error("t = {time}: singular Jacobian")]
    Singular { time: f64 },
    #[error("probe `{name}`: {message}")]
    Probe { name: String, message: String },
}

impl OracleError {
    pub fn is_convergence_failure(&self) -> bool {
        match self {
            OracleError::Scenario(e) => e.is_convergence_failure(),
            OracleError::NonConvergence { .. } | OracleError::Singular { .. } => true,
            OracleError::Probe { .. } => false,
        }
    }
}

const NEWTON_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 40;
/// Jacobian is refreshed when a step needs more iterations than this.
const STALE_AFTER: usize = 3;

struct Exciter {
    p: ExciterParams,
    v_ref: f64,
    /// Sensor state, absent when `T_R = 0`.
    vm: Option<usize>,
    /// Rate-feedback lag, amplifier, field voltage.
    xf: usize,
    xr: usize,
    efd: usize,
}

struct Governor {
    p: GovernorParams,
    p_ref: f64,
    /// Lead-lag lag, two turbine lags, reheat lag.
    at: usize,
}

struct Unit {
    bus: u32,
    node: usize,
    model: Genrou,
    /// First of the six machine states.
    at: usize,
    exciter: Option<Exciter>,
    governor: Option<Governor>,
    efd0: f64,
    pm0: f64,
}

impl Unit {
    fn efd(&self, x: &[f64]) -> f64 {
        self.exciter.as_ref().map_or(self.efd0, |e| x[e.efd])
    }

    fn pm(&self, x: &[f64]) -> f64 {
        let Some(g) = &self.governor else {
            return self.pm0;
        };
        let (p, c, lp4) = (&g.p, x[g.at + 3], x[g.at + 2]);
        match p.f_mode {
            GovernorF::ReheatLead => c + (lp4 - c) * p.f,
            GovernorF::FilteredGain => p.f * c + (1.0 - p.f) * g.p_ref,
        }
    }
}

/// Element whose admittance depends on the switch position.
enum Switched {
    /// Switch in series with `z` from a node to ground.
    Fault { node: usize, z: Complex64, schedule: Vec<(f64, f64)> },
    /// Bare switch between two nodes.
    Series { a: usize, b: usize, schedule: Vec<(f64, f64)> },
}

impl Switched {
    fn closed_at(&self, t: f64) -> bool {
        let (Switched::Fault { schedule, .. } | Switched::Series { schedule, .. }) = self;
        schedule.iter().any(|&(on, off)| on <= t && t < off)
    }
}

struct Dae {
    nx: usize,
    /// Algebraic nodes: network buses then internal nodes.
    nodes: usize,
    units: Vec<Unit>,
    omega_base: f64,
    base: DMatrix<Complex64>,
    switched: Vec<Switched>,
    /// Constant-power loads `(node, P, Q)`.
    pq_loads: Vec<(usize, f64, f64)>,
    /// Nodes held at a fixed voltage.
    fixed: Vec<(usize, Complex64)>,
    g_on: f64,
    g_off: f64,
}

/// Interleaved real form of a complex matrix, acting on `[Vr0, Vi0, Vr1, …]`.
fn real_split(y: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = y.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let v = y[(r / 2, c / 2)];
        match (r % 2, c % 2) {
            (0, 0) | (1, 1) => v.re,
            (0, 1) => -v.im,
            _ => v.im,
        }
    })
}

fn stamp(y: &mut DMatrix<Complex64>, a: usize, b: Option<usize>, g: Complex64) {
    y[(a, a)] += g;
    if let Some(b) = b {
        y[(b, b)] += g;
        y[(a, b)] -= g;
        y[(b, a)] -= g;
    }
}

impl Dae {
    fn build(prep: &Prepared, config: &ScenarioConfig) -> Result<(Self, Vec<f64>), OracleError> {
        let case = &prep.case;
        let net = &prep.dynamic_network;
        let intervals = switch_intervals(case);
        let index: HashMap<u32, usize> = net.buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
        let grid = |e| OracleError::Scenario(ScenarioError::Grid(e));

        // Lines and transformers taken out by events hang off an internal
        // copy of their from-bus behind a switch; the rest go in directly.
        let mut fixed_net = net.clone();
        fixed_net.branches.retain(|b| !intervals.contains_key(&(false, b.id)));
        fixed_net.transformers.retain(|t| !intervals.contains_key(&(false, t.id)));
        let nb = net.buses.len();
        let mut extra: Vec<(Network, u32, u32, Vec<(f64, f64)>)> = Vec::new();
        for br in &net.branches {
            if let Some(iv) = intervals.get(&(false, br.id)) {
                let mut n = two_bus(net, br.from, br.to);
                n.branches.push(br.clone());
                extra.push((n, br.from, br.to, iv.clone()));
            }
        }
        for tr in &net.transformers {
            if let Some(iv) = intervals.get(&(false, tr.id)) {
                let mut n = two_bus(net, tr.from, tr.to);
                n.transformers.push(tr.clone());
                extra.push((n, tr.from, tr.to, iv.clone()));
            }
        }
        let nodes = nb + extra.len();
        let mut base = DMatrix::from_element(nodes, nodes, Complex64::new(0.0, 0.0));
        let y = build_ybus(&fixed_net).map_err(grid)?;
        base.view_mut((0, 0), (nb, nb)).copy_from(y.matrix());
        let mut switched = Vec::new();
        for (k, (n, from, to, iv)) in extra.into_iter().enumerate() {
            let inner = nb + k;
            let y2 = build_ybus(&n).map_err(grid)?;
            let map = [inner, index[&to]];
            for (i, &bi) in [from, to].iter().enumerate() {
                for (j, &bj) in [from, to].iter().enumerate() {
                    base[(map[i], map[j])] += y2.get(bi, bj).expect("two-bus network");
                }
            }
            switched.push(Switched::Series {
                a: index[&from],
                b: inner,
                schedule: iv,
            });
        }

        let mut pq_loads = Vec::new();
        for load in &net.loads {
            let k = index[&load.bus];
            match load.kind {
                LoadKind::ConstantZ => {
                    let v = prep.power_flow.voltage(load.bus).map_or(0.0, |v| v.norm());
                    stamp(&mut base, k, None, Complex64::new(load.p, -load.q) / (v * v));
                }
                LoadKind::ConstantPq => pq_loads.push((k, load.p, load.q)),
            }
        }
        for f in &case.faults {
            let FaultSite::Bus(bus) = f.site else {
                unreachable!("faults are resolved to buses")
            };
            switched.push(Switched::Fault {
                node: index[&bus],
                z: Complex64::new(f.r, f.x),
                schedule: intervals[&(true, f.id)].clone(),
            });
        }
        let mut fixed = Vec::new();
        if let Some(slack) = net.slack() {
            if case.machine_at(slack.id).is_none() {
                fixed.push((index[&slack.id], prep.power_flow.voltage(slack.id).expect("slack solved")));
            }
        }

        let mut x0 = Vec::new();
        let mut units = Vec::new();
        let alloc = |x0: &mut Vec<f64>, v: f64| {
            x0.push(v);
            x0.len() - 1
        };
        for op in &prep.machines {
            let spec = case.machine_at(op.bus).expect("prepared from the case");
            let at = x0.len();
            x0.extend(op.machine.state.to_array());
            let exciter = match (&spec.exciter, &op.exciter) {
                (Some(p), Some(init)) => Some(Exciter {
                    p: p.clone(),
                    v_ref: init.v_ref,
                    vm: (p.tr > 0.0).then(|| alloc(&mut x0, init.vt)),
                    xf: alloc(&mut x0, init.efd),
                    xr: alloc(&mut x0, init.vr),
                    efd: alloc(&mut x0, init.efd),
                }),
                _ => None,
            };
            let governor = match (&spec.governor, &op.governor) {
                (Some(p), Some(init)) => {
                    let at = x0.len();
                    x0.extend([0.0, init.p_ref, init.p_ref, init.p_ref]);
                    Some(Governor {
                        p: p.clone(),
                        p_ref: init.p_ref,
                        at,
                    })
                }
                _ => None,
            };
            units.push(Unit {
                bus: op.bus,
                node: index[&op.bus],
                model: Genrou::new(&spec.machine),
                at,
                exciter,
                governor,
                efd0: op.machine.efd,
                pm0: op.machine.pm,
            });
        }
        let nx = x0.len();
        let mut z0 = x0;
        for k in 0..nodes {
            let bus = if k < nb {
                net.buses[k].id
            } else {
                match &switched[k - nb] {
                    Switched::Series { a, .. } => net.buses[*a].id,
                    Switched::Fault { .. } => unreachable!("internal nodes come first"),
                }
            };
            let v = prep.power_flow.voltage(bus).unwrap_or(Complex64::new(1.0, 0.0));
            z0.extend([v.re, v.im]);
        }
        Ok((
            Self {
                nx,
                nodes,
                units,
                omega_base: net.omega_base(),
                base,
                switched,
                pq_loads,
                fixed,
                g_on: config.solver.switch_g_on,
                g_off: config.solver.switch_g_off,
            },
            z0,
        ))
    }

    fn topology(&self, t: f64) -> Vec<bool> {
        self.switched.iter().map(|s| s.closed_at(t)).collect()
    }

    fn admittance(&self, closed: &[bool]) -> DMatrix<f64> {
        let mut y = self.base.clone();
        for (s, &on) in self.switched.iter().zip(closed) {
            let g = if on { self.g_on } else { self.g_off };
            match s {
                Switched::Fault { node, z, .. } => {
                    let y_f = Complex64::new(1.0, 0.0) / (Complex64::new(1.0 / g, 0.0) + z);
                    stamp(&mut y, *node, None, y_f);
                }
                Switched::Series { a, b, .. } => stamp(&mut y, *a, Some(*b), Complex64::new(g, 0.0)),
            }
        }
        real_split(&y)
    }

    fn v(&self, z: &[f64], node: usize) -> (f64, f64) {
        (z[self.nx + 2 * node], z[self.nx + 2 * node + 1])
    }

    /// State derivatives `fx` and network current mismatch `g` at `z`.
    fn eval(&self, z: &[f64], y: &DMatrix<f64>, fx: &mut [f64], g: &mut [f64]) {
        let x = &z[..self.nx];
        let v = &z[self.nx..];
        for (r, gr) in g.iter_mut().enumerate() {
            *gr = y.row(r).iter().zip(v).map(|(a, b)| a * b).sum();
        }
        for u in &self.units {
            let (vr, vi) = self.v(z, u.node);
            let states: [f64; 6] = x[u.at..u.at + 6].try_into().unwrap();
            let alg = u.model.algebra(&states, vr, vi);
            g[2 * u.node] -= alg.i_re;
            g[2 * u.node + 1] -= alg.i_im;
            let d = u.model.derivatives(&states, &alg, u.efd(x), u.pm(x), self.omega_base);
            fx[u.at..u.at + 6].copy_from_slice(&d);

            if let Some(e) = &u.exciter {
                let p = &e.p;
                let vt = (vr * vr + vi * vi).sqrt();
                let vm = match e.vm {
                    Some(k) => {
                        fx[k] = (vt - x[k]) / p.tr;
                        x[k]
                    }
                    None => vt,
                };
                let efd = x[e.efd];
                let vf = (p.kf / p.tf) * (efd - x[e.xf]);
                fx[e.xf] = (efd - x[e.xf]) / p.tf;
                let err = e.v_ref - vm - vf;
                let xr = x[e.xr];
                fx[e.xr] = match p.limiter {
                    crate::blocks::LimiterMode::OutputClamp => (p.ka * err - xr) / p.ta,
                    crate::blocks::LimiterMode::NonWindup => {
                        let pull = 1e3;
                        (p.ka * err - xr).min((p.vr_max - xr) * pull).max((p.vr_min - xr) * pull) / p.ta
                    }
                };
                let vr_out = xr.clamp(p.vr_min, p.vr_max);
                fx[e.efd] = (vr_out - p.ke * efd - saturation_term(p.saturation.as_ref(), efd)) / p.te;
            }
            if let Some(gv) = &u.governor {
                let p = &gv.p;
                let k = gv.at;
                let dw = 1.0 - x[u.at + 1];
                let lead = x[k] + (dw - x[k]) * (p.t2 / p.t1);
                fx[k] = (dw - x[k]) / p.t1;
                let pgv = (gv.p_ref + p.k * lead).clamp(p.p_min, p.p_max);
                fx[k + 1] = (pgv - x[k + 1]) / p.t3;
                fx[k + 2] = (x[k + 1] - x[k + 2]) / p.t4;
                fx[k + 3] = (x[k + 2] - x[k + 3]) / p.t5;
            }
        }
        for &(k, p, q) in &self.pq_loads {
            let (vr, vi) = self.v(z, k);
            let m2 = vr * vr + vi * vi;
            g[2 * k] += (p * vr + q * vi) / m2;
            g[2 * k + 1] += (p * vi - q * vr) / m2;
        }
        for &(k, v0) in &self.fixed {
            let (vr, vi) = self.v(z, k);
            g[2 * k] = vr - v0.re;
            g[2 * k + 1] = vi - v0.im;
        }
    }
}

fn two_bus(net: &Network, a: u32, b: u32) -> Network {
    let mut n = Network::new(net.base_mva, net.frequency_hz);
    n.buses.push(Bus::new(a, BusKind::Pq, 1.0));
    n.buses.push(Bus::new(b, BusKind::Pq, 1.0));
    n
}

/// One implicit step's residual: differential rows
/// `x − x_old − h·(θ·f(z) + (1−θ)·f_old)` (or `x − x_old` when only the
/// network is solved), algebraic rows from [`Dae::eval`].
struct Step<'a> {
    dae: &'a Dae,
    y: &'a DMatrix<f64>,
    x_old: &'a [f64],
    f_old: &'a [f64],
    h: f64,
    theta: f64,
    algebraic_only: bool,
    fx: Vec<f64>,
}

impl Step<'_> {
    fn residual(&mut self, z: &[f64], out: &mut [f64]) {
        let nx = self.dae.nx;
        let (rx, rg) = out.split_at_mut(nx);
        self.dae.eval(z, self.y, &mut self.fx, rg);
        for k in 0..nx {
            rx[k] = z[k] - self.x_old[k];
            if !self.algebraic_only {
                rx[k] -= self.h * (self.theta * self.fx[k] + (1.0 - self.theta) * self.f_old[k]);
            }
        }
    }

    fn jacobian(&mut self, z: &[f64], r0: &[f64]) -> DMatrix<f64> {
        let n = z.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut zp = z.to_vec();
        let mut r = vec![0.0; n];
        for j in 0..n {
            let d = 1e-7 * z[j].abs().max(1.0);
            zp[j] = z[j] + d;
            self.residual(&zp, &mut r);
            zp[j] = z[j];
            for i in 0..n {
                jac[(i, j)] = (r[i] - r0[i]) / d;
            }
        }
        jac
    }
}

/// Cached LU of the iteration matrix and the settings it was built for.
struct Factor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    h: f64,
    topology: Vec<bool>,
    algebraic_only: bool,
}

fn newton(step: &mut Step<'_>, z: &mut [f64], t: f64, topology: &[bool], cache: &mut Option<Factor>) -> Result<usize, OracleError> {
    let n = z.len();
    let mut r = vec![0.0; n];
    let mut update = f64::INFINITY;
    let mut fresh = false;
    for it in 1..=MAX_ITERS {
        step.residual(z, &mut r);
        let stale = match cache {
            Some(f) => f.h != step.h || f.topology != topology || f.algebraic_only != step.algebraic_only,
            None => true,
        };
        if stale || (!fresh && it > STALE_AFTER) {
            let jac = step.jacobian(z, &r);
            *cache = Some(Factor {
                lu: jac.lu(),
                h: step.h,
                topology: topology.to_vec(),
                algebraic_only: step.algebraic_only,
            });
            fresh = true;
        }
        let lu = &cache.as_ref().unwrap().lu;
        let dz = lu
            .solve(&DVector::from_column_slice(&r))
            .ok_or(OracleError::Singular { time: t })?;
        update = dz.amax();
        if !update.is_finite() {
            break;
        }
        for (zi, d) in z.iter_mut().zip(dz.iter()) {
            *zi -= d;
        }
        if update < NEWTON_TOL {
            return Ok(it);
        }
    }
    Err(OracleError::NonConvergence {
        time: t,
        iterations: MAX_ITERS,
        update,
    })
}

/// Probe channels, named as the circuit path names them.
struct Probes {
    names: Vec<String>,
    custom: Vec<(String, Expr)>,
    /// Circuit node ids of bus voltages and machine speeds, for custom
    /// expressions.
    bus_nodes: Vec<BusNodes>,
    omega_nodes: Vec<NodeId>,
}

impl Probes {
    fn new(dae: &Dae, prep: &Prepared, config: &ScenarioConfig) -> Result<Self, OracleError> {
        let mut names = Vec::new();
        let us = &dae.units;
        names.extend(us.iter().map(|u| format!("vmag_bus{}", u.bus)));
        names.extend(us.iter().map(|u| format!("omega_bus{}", u.bus)));
        names.extend(us.iter().map(|u| format!("delta_bus{}", u.bus)));
        names.extend(us.iter().filter(|u| u.exciter.is_some()).map(|u| format!("efd_bus{}", u.bus)));
        names.extend(us.iter().map(|u| format!("pm_bus{}", u.bus)));

        // Mirror the circuit's naming so probe expressions resolve the same.
        let mut nl = Netlist::new();
        let bus_nodes = prep
            .dynamic_network
            .buses
            .iter()
            .map(|b| BusNodes::allocate(&mut nl, b.id))
            .collect();
        let omega_nodes = us.iter().map(|u| nl.new_node(Some(&format!("G{}_omega", u.bus)))).collect();
        let mut custom = Vec::new();
        for spec in prep.case.probes.iter().chain(&config.extra_probes) {
            let expr = nl.parse_expression(&spec.expr).map_err(|e| OracleError::Probe {
                name: spec.name.clone(),
                message: format!("{e} (only bus voltages and machine speeds are available here)"),
            })?;
            names.push(spec.name.clone());
            custom.push((spec.name.clone(), expr));
        }
        Ok(Self {
            names,
            custom,
            bus_nodes,
            omega_nodes,
        })
    }

    fn sample(&self, dae: &Dae, z: &[f64], t: f64, out: &mut Vec<f64>) -> Result<(), OracleError> {
        out.clear();
        let us = &dae.units;
        out.extend(us.iter().map(|u| {
            let (vr, vi) = dae.v(z, u.node);
            (vr * vr + vi * vi).sqrt()
        }));
        out.extend(us.iter().map(|u| z[u.at + 1]));
        let reference = us.first().map_or(0.0, |u| z[u.at]);
        out.extend(us.iter().map(|u| z[u.at] - reference));
        out.extend(us.iter().filter(|u| u.exciter.is_some()).map(|u| u.efd(z)));
        out.extend(us.iter().map(|u| u.pm(z)));
        if self.custom.is_empty() {
            return Ok(());
        }
        let mut b = MapBindings::new().at_time(t);
        for (k, n) in self.bus_nodes.iter().enumerate() {
            let (vr, vi) = dae.v(z, k);
            b.voltages.insert(n.re, vr);
            b.voltages.insert(n.im, vi);
        }
        for (u, &n) in us.iter().zip(&self.omega_nodes) {
            b.voltages.insert(n, z[u.at + 1]);
        }
        for (name, expr) in &self.custom {
            out.push(expr.evaluate(&b).map_err(|e| OracleError::Probe {
                name: name.clone(),
                message: e.to_string(),
            })?);
        }
        Ok(())
    }
}

/// Integrates the case directly as a DAE on the same time grid and with the
/// same channel names as the circuit path. At every switching instant the
/// network is re-solved with the states held, so the integration restarts
/// from a consistent point; samples at that instant show the values just
/// before the switch.
pub fn run_reference_dae(case: &crate::scenario::Case, config: &ScenarioConfig) -> Result<TimeSeries, OracleError> {
    let solver = &config.solver;
    solver
        .validate()
        .map_err(|source| ScenarioError::Engine { stage: "setup", source })?;
    check_horizon(case, solver)?;
    let prep = prepare(case, &config.power_flow)?;
    let (dae, mut z) = Dae::build(&prep, config)?;
    let probes = Probes::new(&dae, &prep, config)?;
    let mut series = TimeSeries::new(probes.names.clone()).map_err(|e| OracleError::Probe {
        name: String::new(),
        message: e.to_string(),
    })?;
    let nx = dae.nx;
    let theta = match solver.method {
        IntegrationMethod::Trapezoidal => 0.5,
        IntegrationMethod::BackwardEuler => 1.0,
    };

    let mut topology = dae.topology(0.0);
    let mut y = dae.admittance(&topology);
    let mut cache = None;
    let mut fx = vec![0.0; nx];
    let mut scratch = vec![0.0; 2 * dae.nodes];
    let consistent = |z: &mut Vec<f64>, y: &DMatrix<f64>, topo: &[bool], t: f64, cache: &mut Option<Factor>| {
        let x_old = z[..nx].to_vec();
        let mut step = Step {
            dae: &dae,
            y,
            x_old: &x_old,
            f_old: &x_old,
            h: 0.0,
            theta,
            algebraic_only: true,
            fx: vec![0.0; nx],
        };
        newton(&mut step, z, t, topo, cache)
    };
    consistent(&mut z, &y, &topology, 0.0, &mut cache)?;
    dae.eval(&z, &y, &mut fx, &mut scratch);
    let mut values = Vec::new();
    probes.sample(&dae, &z, 0.0, &mut values)?;
    series.push(0.0, &values).expect("width checked");

    let (dt, t_stop) = (solver.dt, solver.t_stop);
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
    let mut breaks: Vec<f64> = switch_intervals(&prep.case)
        .values()
        .flatten()
        .flat_map(|&(a, b)| [a, b])
        .filter(|&b| b.is_finite() && b > 0.0 && b < t_stop)
        .map(|b| {
            let k = (b / dt).round();
            if (k * dt - b).abs() <= eps {
                k * dt
            } else {
                b
            }
        })
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut t = 0.0;
    let mut bi = 0;
    let (mut steps, mut iterations) = (0usize, 0usize);
    let started = std::time::Instant::now();
    for k in 1..=n_samples {
        let tg = grid(k);
        while t < tg - eps {
            let now = dae.topology(t);
            if now != topology {
                log::debug!("t = {t}: switching, re-solving the network");
                topology = now;
                y = dae.admittance(&topology);
                iterations += consistent(&mut z, &y, &topology, t, &mut cache)?;
                dae.eval(&z, &y, &mut fx, &mut scratch);
            }
            while bi < breaks.len() && breaks[bi] <= t + eps {
                bi += 1;
            }
            let target = if bi < breaks.len() && breaks[bi] < tg - eps {
                breaks[bi]
            } else {
                tg
            };
            let h = target - t;
            let x_old = z[..nx].to_vec();
            // Explicit predictor for the states.
            for (zi, f) in z.iter_mut().zip(&fx) {
                *zi += h * f;
            }
            let mut step = Step {
                dae: &dae,
                y: &y,
                x_old: &x_old,
                f_old: &fx,
                h,
                theta,
                algebraic_only: false,
                fx: vec![0.0; nx],
            };
            iterations += newton(&mut step, &mut z, target, &topology, &mut cache)?;
            dae.eval(&z, &y, &mut fx, &mut scratch);
            t = target;
            steps += 1;
        }
        probes.sample(&dae, &z, tg, &mut values)?;
        series.push(tg, &values).expect("width checked");
    }
    log::info!(
        "reference: {steps} steps, {iterations} Newton iterations, {:.3} s",
        started.elapsed().as_secs_f64()
    );
    Ok(series)
}

/// Tolerances used when judging the circuit path against the reference.
pub fn default_tolerances() -> Tolerances {
    Tolerances::new()
        .with("vmag_", 1e-2)
        .with("omega_", 1e-3)
        .with("delta_", 0.05)
}
