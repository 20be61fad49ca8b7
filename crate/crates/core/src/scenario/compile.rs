use std::collections::BTreeMap;

use num_complex::Complex64;

use super::case::{Case, EventKind, Fault, FaultSite};
use super::ScenarioError;
use crate::engine::{Probe, SolverConfig, SystemState};
use crate::grid::{
    compile_branch, compile_impedance, compile_transformer, solve_power_flow, BusKind, BusNodes, Load, LoadKind,
    Network, NodeMap, PowerFlowOptions, PowerFlowSolution,
};
use crate::machine::{
    build_exciter_subcircuit, build_governor_subcircuit, build_machine_subcircuit, initialize_exciter,
    initialize_governor, initialize_machine, ExciterInit, GovernorInit, MachineBlock, MachineInit,
};
use crate::netlist::{Device, Expr, Netlist, NodeId, Waveform};

/// Splits `branch` at `location` into two π-sections joined by a new bus and
/// returns that bus's id. Each half carries its share of R, X and B; the
/// charging is distributed so the two ends keep exactly the shunts the whole
/// line had and the new bus gets none, so the split network has the same
/// Y-bus as the original after eliminating the new bus.
pub fn split_branch(case: &mut Case, branch: u32, location: f64) -> Result<u32, ScenarioError> {
    if !(location > 0.0 && location < 1.0) {
        return Err(ScenarioError::Invalid(format!(
            "split location {location} must lie strictly inside (0, 1); use a bus fault at the ends"
        )));
    }
    let net = &mut case.network;
    let k = net
        .branches
        .iter()
        .position(|b| b.id == branch)
        .ok_or_else(|| ScenarioError::Invalid(format!("unknown branch {branch}")))?;
    let whole = net.branches[k].clone();
    let mid = net.next_bus_id();
    let mut bus = crate::grid::Bus::new(mid, BusKind::Pq, 1.0);
    bus.name = format!("mid {branch}");
    let from_v = net.bus(whole.from).map_or(1.0, |b| b.v_setpoint);
    bus.base_kv = net.bus(whole.from).map_or(0.0, |b| b.base_kv);
    bus.v_setpoint = from_v;
    net.buses.push(bus);

    let (l, m) = (location, 1.0 - location);
    let b_from = whole.b * whole.b_from_share;
    let b_to = whole.b - b_from;
    let mut first = whole.clone();
    first.to = mid;
    first.r *= l;
    first.x *= l;
    first.b *= l;
    first.b_from_share = if first.b > 0.0 { b_from / first.b } else { 0.5 };
    let mut second = whole.clone();
    second.id = net.next_element_id();
    second.from = mid;
    second.r *= m;
    second.x *= m;
    second.b *= m;
    second.b_from_share = if second.b > 0.0 { 1.0 - b_to / second.b } else { 0.5 };
    net.branches[k] = first;
    net.branches.insert(k + 1, second);
    Ok(mid)
}

/// Places a shunt fault `z` at `location` along `branch`: the branch is split
/// and a new fault record is attached to the midpoint bus. Returns the
/// modified case and the new fault's id.
pub fn place_midline_fault(
    case: &Case,
    branch: u32,
    location: f64,
    z: Complex64,
) -> Result<(Case, u32), ScenarioError> {
    let mut out = case.clone();
    let bus = split_branch(&mut out, branch, location)?;
    let id = out.faults.iter().map(|f| f.id + 1).max().unwrap_or(1);
    out.faults.push(Fault {
        id,
        site: FaultSite::Bus(bus),
        r: z.re,
        x: z.im,
    });
    Ok((out, id))
}

/// The case with every midline fault turned into a bus fault on a split
/// branch. Faults are processed in id order so the new bus ids are stable.
pub fn resolve_faults(case: &Case) -> Result<Case, ScenarioError> {
    let mut out = case.clone();
    let mut order: Vec<usize> = (0..out.faults.len()).collect();
    order.sort_by_key(|&i| out.faults[i].id);
    for i in order {
        if let FaultSite::Midline { branch, location } = out.faults[i].site {
            let bus = split_branch(&mut out, branch, location)?;
            out.faults[i].site = FaultSite::Bus(bus);
        }
    }
    Ok(out)
}

/// Equilibrium of one machine and its controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineOperatingPoint {
    pub bus: u32,
    pub machine: MachineInit,
    pub exciter: Option<ExciterInit>,
    pub governor: Option<GovernorInit>,
}

/// Everything both simulation paths derive from a case before integrating:
/// the resolved case, its power flow, the network as the dynamic model sees
/// it, and every machine's initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub case: Case,
    pub power_flow: PowerFlowSolution,
    /// Loads plus the constant injections standing in for generators
    /// without a machine model.
    pub dynamic_network: Network,
    pub machines: Vec<MachineOperatingPoint>,
}

pub fn prepare(case: &Case, pf: &PowerFlowOptions) -> Result<Prepared, ScenarioError> {
    case.validate()?;
    let case = resolve_faults(case)?;
    let power_flow = solve_power_flow(&case.network, pf).map_err(ScenarioError::PowerFlow)?;
    let mut dynamic_network = case.network.clone();
    for bus in &case.network.buses {
        if bus.kind == BusKind::Pv && case.machine_at(bus.id).is_none() {
            let s = power_flow.generation(&case.network, bus.id).unwrap_or_default();
            log::warn!("PV bus {} has no machine model; holding its injection constant", bus.id);
            dynamic_network.loads.push(Load {
                bus: bus.id,
                kind: LoadKind::ConstantPq,
                p: -s.re,
                q: -s.im,
            });
        }
    }
    let mut machines = Vec::new();
    let mut specs: Vec<_> = case.machines.iter().collect();
    specs.sort_by_key(|m| m.bus);
    for spec in specs {
        let tag = |e| ScenarioError::Machine { bus: spec.bus, source: e };
        let v = power_flow.voltage(spec.bus).expect("validated bus");
        let s = power_flow.generation(&case.network, spec.bus).expect("validated bus");
        let machine = initialize_machine(&spec.machine, v, s).map_err(tag)?;
        let exciter = spec
            .exciter
            .as_ref()
            .map(|e| initialize_exciter(e, machine.efd, v.norm()))
            .transpose()
            .map_err(tag)?;
        let governor = spec
            .governor
            .as_ref()
            .map(|g| initialize_governor(g, machine.pm))
            .transpose()
            .map_err(tag)?;
        machines.push(MachineOperatingPoint {
            bus: spec.bus,
            machine,
            exciter,
            governor,
        });
    }
    Ok(Prepared {
        case,
        power_flow,
        dynamic_network,
        machines,
    })
}

/// Closed intervals of every switched element implied by the event list,
/// keyed by (is fault, target id).
pub fn switch_intervals(case: &Case) -> BTreeMap<(bool, u32), Vec<(f64, f64)>> {
    let mut events = case.events.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut out: BTreeMap<(bool, u32), Vec<(f64, f64)>> = BTreeMap::new();
    let mut closed_since: BTreeMap<(bool, u32), Option<f64>> = BTreeMap::new();
    for f in &case.faults {
        out.insert((true, f.id), Vec::new());
        closed_since.insert((true, f.id), None);
    }
    for ev in &events {
        let key = match ev.kind {
            EventKind::CloseFaultSwitch | EventKind::OpenFaultSwitch => (true, ev.target),
            EventKind::CloseBranch | EventKind::OpenBranch => (false, ev.target),
        };
        let closes = matches!(ev.kind, EventKind::CloseFaultSwitch | EventKind::CloseBranch);
        // Branches start in service.
        let since = closed_since.entry(key).or_insert(if key.0 { None } else { Some(0.0) });
        out.entry(key).or_default();
        match (closes, *since) {
            (true, None) => *since = Some(ev.time),
            (false, Some(t0)) => {
                out.get_mut(&key).unwrap().push((t0, ev.time));
                *since = None;
            }
            _ => {}
        }
    }
    for (key, since) in closed_since {
        if let Some(t0) = since {
            out.get_mut(&key).unwrap().push((t0, f64::INFINITY));
        }
    }
    out
}

/// Nodes and initial conditions of one compiled machine.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledMachine {
    pub bus: u32,
    pub block: MachineBlock,
    pub efd: Expr,
    pub pm: Expr,
}

#[derive(Debug, Clone)]
pub struct CompiledCase {
    pub prepared: Prepared,
    pub netlist: Netlist,
    pub nodes: NodeMap,
    pub machines: Vec<CompiledMachine>,
    pub probes: Vec<Probe>,
}

impl CompiledCase {
    /// Largest difference between the circuit's bus voltages in `state` and
    /// the power-flow solution.
    pub fn power_flow_mismatch(&self, state: &SystemState) -> f64 {
        let pf = &self.prepared.power_flow;
        self.nodes
            .iter()
            .map(|(id, n)| {
                let v = Complex64::new(state.voltage(n.re), state.voltage(n.im));
                (v - pf.voltage(*id).expect("compiled bus")).norm()
            })
            .fold(0.0, f64::max)
    }
}

fn vmag(n: BusNodes) -> Expr {
    (n.vr() * n.vr() + n.vi() * n.vi()).sqrt()
}

/// Builds one netlist for the whole case: network, loads, machines with
/// their controllers, fault branches behind open switches, and series
/// switches on branches that events take out of service.
pub fn compile_case(case: &Case, pf: &PowerFlowOptions) -> Result<CompiledCase, ScenarioError> {
    let prepared = prepare(case, pf)?;
    compile_prepared(prepared, &[])
}

pub fn compile_prepared(prepared: Prepared, extra_probes: &[super::ProbeSpec]) -> Result<CompiledCase, ScenarioError> {
    let case = &prepared.case;
    let network = &prepared.dynamic_network;
    let pf = &prepared.power_flow;
    let omega = network.omega_base();
    let intervals = switch_intervals(case);
    let mut nl = Netlist::new();
    let grid = |e| ScenarioError::Grid(e);

    let mut nodes = NodeMap::new();
    for bus in &network.buses {
        let n = BusNodes::allocate(&mut nl, bus.id);
        // Constant-power loads need a start near the solution.
        let v = pf.voltage(bus.id).expect("solved bus");
        nl.set_nodeset(n.re, v.re);
        nl.set_nodeset(n.im, v.im);
        nodes.insert(bus.id, n);
    }
    let switch_pair = |nl: &mut Netlist, label: &str, a: BusNodes, b: BusNodes, iv: &[(f64, f64)]| {
        nl.add_device(Device::switch(&format!("{label}r"), a.re, b.re, iv.to_vec()))?;
        nl.add_device(Device::switch(&format!("{label}i"), a.im, b.im, iv.to_vec()))?;
        Ok::<_, crate::netlist::NetlistError>(())
    };
    // A switched element hangs off an internal copy of its from-bus.
    let element_map = |nl: &mut Netlist, id: u32, from: u32, to: u32| -> Result<NodeMap, ScenarioError> {
        let mut m = NodeMap::new();
        m.insert(to, nodes[&to]);
        match intervals.get(&(false, id)) {
            Some(iv) => {
                let inner = BusNodes {
                    re: nl.new_node(None),
                    im: nl.new_node(None),
                };
                let v = pf.voltage(from).expect("solved bus");
                nl.set_nodeset(inner.re, v.re);
                nl.set_nodeset(inner.im, v.im);
                switch_pair(nl, &format!("SB{id}"), nodes[&from], inner, iv)?;
                m.insert(from, inner);
            }
            None => {
                m.insert(from, nodes[&from]);
            }
        }
        Ok(m)
    };
    for br in &network.branches {
        let m = element_map(&mut nl, br.id, br.from, br.to)?;
        compile_branch(&mut nl, br, &m, omega).map_err(grid)?;
    }
    for tr in &network.transformers {
        let m = element_map(&mut nl, tr.id, tr.from, tr.to)?;
        compile_transformer(&mut nl, tr, &m, omega).map_err(grid)?;
    }
    for bus in &network.buses {
        crate::grid::compile_admittance(&mut nl, &format!("SH{}", bus.id), nodes[&bus.id], bus.shunt()).map_err(grid)?;
    }
    let mut count: BTreeMap<u32, usize> = BTreeMap::new();
    for load in &network.loads {
        let k = count.entry(load.bus).or_default();
        *k += 1;
        let label = if *k == 1 {
            format!("LD{}", load.bus)
        } else {
            format!("LD{}_{}", load.bus, k)
        };
        let v = pf.voltage(load.bus).map_or(0.0, |v| v.norm());
        crate::grid::compile_load(&mut nl, &label, load, &nodes, v, omega).map_err(grid)?;
    }

    for f in &case.faults {
        let FaultSite::Bus(bus) = f.site else {
            unreachable!("faults are resolved to buses")
        };
        let iv = &intervals[&(true, f.id)];
        let z = Complex64::new(f.r, f.x);
        if z.norm() == 0.0 {
            switch_pair(&mut nl, &format!("SF{}", f.id), nodes[&bus], BusNodes::GROUND, iv)?;
        } else {
            let inner = BusNodes {
                re: nl.new_node(None),
                im: nl.new_node(None),
            };
            switch_pair(&mut nl, &format!("SF{}", f.id), nodes[&bus], inner, iv)?;
            compile_impedance(&mut nl, &format!("F{}", f.id), inner, BusNodes::GROUND, z).map_err(grid)?;
        }
    }

    if let Some(slack) = network.slack() {
        if case.machine_at(slack.id).is_none() {
            let v = pf.voltage(slack.id).expect("slack solved");
            let n = nodes[&slack.id];
            nl.add_device(Device::vsource(&format!("VS{}r", slack.id), n.re, NodeId::GROUND, Waveform::Dc(v.re)))?;
            nl.add_device(Device::vsource(&format!("VS{}i", slack.id), n.im, NodeId::GROUND, Waveform::Dc(v.im)))?;
        }
    }

    let mut machines = Vec::new();
    for op in &prepared.machines {
        let spec = case.machine_at(op.bus).expect("prepared from the case");
        let tag = |e| ScenarioError::Machine { bus: op.bus, source: e };
        let bus = nodes[&op.bus];
        let omega_node = nl.new_node(Some(&format!("G{}_omega", op.bus)));
        let efd = match (&spec.exciter, &op.exciter) {
            (Some(p), Some(init)) => {
                let b = build_exciter_subcircuit(&mut nl, &format!("AVR{}", op.bus), p, init, bus).map_err(tag)?;
                Expr::v(b.efd)
            }
            _ => Expr::constant(op.machine.efd),
        };
        let pm = match (&spec.governor, &op.governor) {
            (Some(p), Some(init)) => {
                let b = build_governor_subcircuit(&mut nl, &format!("GOV{}", op.bus), p, init, &Expr::v(omega_node))
                    .map_err(tag)?;
                Expr::v(b.pm)
            }
            _ => Expr::constant(op.machine.pm),
        };
        let block = build_machine_subcircuit(
            &mut nl,
            &format!("G{}", op.bus),
            &spec.machine,
            &op.machine,
            bus,
            &efd,
            &pm,
            Some(omega_node),
            omega,
        )
        .map_err(tag)?;
        machines.push(CompiledMachine {
            bus: op.bus,
            block,
            efd,
            pm,
        });
    }

    let mut probes = Vec::new();
    if let Some(reference) = machines.first() {
        let reference = Expr::v(reference.block.delta());
        for m in &machines {
            probes.push(Probe::expression(format!("vmag_bus{}", m.bus), vmag(nodes[&m.bus])));
        }
        for m in &machines {
            probes.push(Probe::voltage(format!("omega_bus{}", m.bus), m.block.omega()));
        }
        for m in &machines {
            probes.push(Probe::expression(
                format!("delta_bus{}", m.bus),
                Expr::v(m.block.delta()) - reference.clone(),
            ));
        }
        for m in &machines {
            if case.machine_at(m.bus).is_some_and(|s| s.exciter.is_some()) {
                probes.push(Probe::expression(format!("efd_bus{}", m.bus), m.efd.clone()));
            }
        }
        for m in &machines {
            probes.push(Probe::expression(format!("pm_bus{}", m.bus), m.pm.clone()));
        }
    }
    for spec in case.probes.iter().chain(extra_probes) {
        let expr = nl.parse_expression(&spec.expr).map_err(|e| ScenarioError::Probe {
            name: spec.name.clone(),
            message: e.to_string(),
        })?;
        probes.push(Probe::expression(spec.name.clone(), expr));
    }

    let diagnostics = crate::netlist::validate_netlist(&nl);
    if diagnostics.iter().any(|d| d.is_error()) {
        return Err(ScenarioError::Engine {
            stage: "compile",
            source: crate::engine::EngineError::Invalid(diagnostics),
        });
    }
    Ok(CompiledCase {
        prepared,
        netlist: nl,
        nodes,
        machines,
        probes,
    })
}

/// Solver settings with `t_stop` checked against the case's events.
pub fn check_horizon(case: &Case, config: &SolverConfig) -> Result<(), ScenarioError> {
    if let Some(ev) = case.events.iter().find(|e| e.time > config.t_stop) {
        return Err(ScenarioError::Invalid(format!(
            "event at t = {} lies beyond t_stop = {}",
            ev.time, config.t_stop
        )));
    }
    Ok(())
}
