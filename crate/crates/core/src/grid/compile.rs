use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{Branch, GridError, Load, LoadKind, Network, PowerFlowSolution, Transformer};
use crate::netlist::{Device, DeviceId, Expr, Netlist, NodeId};

/// The real and imaginary nodes of one bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusNodes {
    pub re: NodeId,
    pub im: NodeId,
}

impl BusNodes {
    pub const GROUND: BusNodes = BusNodes {
        re: NodeId::GROUND,
        im: NodeId::GROUND,
    };

    /// Allocates the pair and names it `bus{id}_re` / `bus{id}_im`.
    pub fn allocate(nl: &mut Netlist, id: u32) -> Self {
        Self {
            re: nl.new_node(Some(&format!("bus{id}_re"))),
            im: nl.new_node(Some(&format!("bus{id}_im"))),
        }
    }

    pub fn vr(&self) -> Expr {
        Expr::v(self.re)
    }

    pub fn vi(&self) -> Expr {
        Expr::v(self.im)
    }
}

pub type NodeMap = BTreeMap<u32, BusNodes>;

/// How a shunt admittance was realized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShuntElement {
    Impedance(Complex64),
    Admittance(Complex64),
}

/// Devices emitted for one network element, with the equivalent lumped values
/// at the base frequency for reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledElement {
    pub label: String,
    pub devices: Vec<DeviceId>,
    pub shunts: Vec<ShuntElement>,
    pub values: Vec<(&'static str, f64)>,
}

impl CompiledElement {
    fn new(label: &str) -> Self {
        Self {
            label: label.to_string(),
            devices: Vec::new(),
            shunts: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == key).map(|&(_, v)| v)
    }
}

/// Series impedance `z` from `a` to `b` as a pair of coupled behavioral
/// voltage sources: `V_a − V_b = z·I` split into real and imaginary rows.
pub fn compile_impedance(
    nl: &mut Netlist,
    label: &str,
    a: BusNodes,
    b: BusNodes,
    z: Complex64,
) -> Result<Vec<DeviceId>, GridError> {
    if z.re == 0.0 && z.im == 0.0 {
        return Err(GridError::InvalidParameter {
            element: label.to_string(),
            reason: "zero impedance".into(),
        });
    }
    let (lr, li) = (format!("{label}.zr"), format!("{label}.zi"));
    let (ir, ii) = (Expr::i(&lr), Expr::i(&li));
    let er = Expr::weighted_sum([(z.re, ir.clone()), (-z.im, ii.clone())]);
    let ei = Expr::weighted_sum([(z.im, ir), (z.re, ii)]);
    Ok(vec![
        nl.add_device(Device::bvoltage(&lr, a.re, b.re, er))?,
        nl.add_device(Device::bvoltage(&li, a.im, b.im, ei))?,
    ])
}

/// Shunt admittance from `a` to ground as a pair of behavioral current
/// sources drawing `y·V`.
pub fn compile_admittance(nl: &mut Netlist, label: &str, a: BusNodes, y: Complex64) -> Result<Vec<DeviceId>, GridError> {
    if y.re == 0.0 && y.im == 0.0 {
        return Ok(Vec::new());
    }
    let ir = Expr::weighted_sum([(y.re, a.vr()), (-y.im, a.vi())]);
    let ii = Expr::weighted_sum([(y.im, a.vr()), (y.re, a.vi())]);
    Ok(vec![
        nl.add_device(Device::bcurrent(&format!("{label}.yr"), a.re, NodeId::GROUND, ir))?,
        nl.add_device(Device::bcurrent(&format!("{label}.yi"), a.im, NodeId::GROUND, ii))?,
    ])
}

fn ends(map: &NodeMap, element: &str, from: u32, to: u32) -> Result<(BusNodes, BusNodes), GridError> {
    let get = |bus| {
        map.get(&bus).copied().ok_or_else(|| GridError::UnknownBus {
            element: element.to_string(),
            bus,
        })
    };
    Ok((get(from)?, get(to)?))
}

/// π-model line: series `R + jX` plus charging susceptance at each end.
pub fn compile_branch(nl: &mut Netlist, branch: &Branch, map: &NodeMap, omega: f64) -> Result<CompiledElement, GridError> {
    let label = format!("L{}", branch.id);
    let (a, b) = ends(map, &label, branch.from, branch.to)?;
    let mut el = CompiledElement::new(&label);
    el.devices = compile_impedance(nl, &label, a, b, Complex64::new(branch.r, branch.x))?;
    el.values.push(("R", branch.r));
    el.values.push(("L", branch.x / omega));
    for (suffix, key, node, y) in [
        ("sf", "C_from", a, branch.shunt_from()),
        ("st", "C_to", b, branch.shunt_to()),
    ] {
        if y.im != 0.0 {
            el.devices.extend(compile_admittance(nl, &format!("{label}.{suffix}"), node, y)?);
            el.shunts.push(ShuntElement::Admittance(y));
            el.values.push((key, y.im / omega));
        }
    }
    Ok(el)
}

/// Transformer as three π admittances with the tap folded in. Shunts with a
/// positive multiple of the winding admittance become impedances to ground;
/// negative ones become behavioral current sources.
pub fn compile_transformer(
    nl: &mut Netlist,
    tr: &Transformer,
    map: &NodeMap,
    omega: f64,
) -> Result<CompiledElement, GridError> {
    let label = format!("T{}", tr.id);
    if !(tr.n > 0.0) || !tr.n.is_finite() {
        return Err(GridError::InvalidParameter {
            element: label,
            reason: format!("tap ratio must be positive (n = {})", tr.n),
        });
    }
    let (a, b) = ends(map, &label, tr.from, tr.to)?;
    let z = Complex64::new(tr.r, tr.x);
    let mut el = CompiledElement::new(&label);
    el.devices = compile_impedance(nl, &label, a, b, z * tr.n)?;
    el.values.push(("R", tr.r * tr.n));
    el.values.push(("L", tr.x * tr.n / omega));
    let n = tr.n;
    // Shunt admittances as multiples k·y of the winding admittance.
    for (suffix, node, k) in [("sf", a, (1.0 - n) / (n * n)), ("st", b, (n - 1.0) / n)] {
        if k == 0.0 {
            continue;
        }
        let sub = format!("{label}.{suffix}");
        if k > 0.0 {
            el.devices.extend(compile_impedance(nl, &sub, node, BusNodes::GROUND, z / k)?);
            el.shunts.push(ShuntElement::Impedance(z / k));
        } else {
            let y = z.inv() * k;
            el.devices.extend(compile_admittance(nl, &sub, node, y)?);
            el.shunts.push(ShuntElement::Admittance(y));
        }
    }
    Ok(el)
}

/// Current drawn by a constant-power load, `I = (S / V)*`.
pub fn pq_load_current(s: Complex64, v: Complex64) -> Complex64 {
    (s / v).conj()
}

/// Constant-impedance loads are sized at `v_nominal`; constant-power loads
/// draw `I = (P·Vr + Q·Vi + j(P·Vi − Q·Vr)) / |V|²` from the live voltage.
pub fn compile_load(
    nl: &mut Netlist,
    label: &str,
    load: &Load,
    map: &NodeMap,
    v_nominal: f64,
    omega: f64,
) -> Result<CompiledElement, GridError> {
    let node = map.get(&load.bus).copied().ok_or_else(|| GridError::UnknownBus {
        element: label.to_string(),
        bus: load.bus,
    })?;
    let mut el = CompiledElement::new(label);
    if load.p == 0.0 && load.q == 0.0 {
        log::warn!("{label}: zero load, nothing emitted");
        return Ok(el);
    }
    match load.kind {
        LoadKind::ConstantZ => {
            if !(v_nominal > 0.0) {
                return Err(GridError::InvalidParameter {
                    element: label.to_string(),
                    reason: format!("nominal voltage must be positive (got {v_nominal})"),
                });
            }
            let v2 = v_nominal * v_nominal;
            let (g, b) = (load.p / v2, -load.q / v2);
            if g > 0.0 {
                let r = 1.0 / g;
                el.devices.push(nl.add_device(Device::resistor(&format!("{label}.rr"), node.re, NodeId::GROUND, r))?);
                el.devices.push(nl.add_device(Device::resistor(&format!("{label}.ri"), node.im, NodeId::GROUND, r))?);
                el.values.push(("R", r));
            } else if g < 0.0 {
                el.devices.extend(compile_admittance(nl, &format!("{label}.g"), node, Complex64::new(g, 0.0))?);
            }
            if b != 0.0 {
                el.devices.extend(compile_admittance(nl, &format!("{label}.b"), node, Complex64::new(0.0, b))?);
                if b < 0.0 {
                    el.values.push(("L", -1.0 / (b * omega)));
                } else {
                    el.values.push(("C", b / omega));
                }
            }
            el.shunts.push(ShuntElement::Admittance(Complex64::new(g, b)));
        }
        LoadKind::ConstantPq => {
            let (vr, vi) = (node.vr(), node.vi());
            let mag2 = vr.clone() * vr.clone() + vi.clone() * vi.clone();
            let ir = Expr::weighted_sum([(load.p, vr.clone()), (load.q, vi.clone())]) / mag2.clone();
            let ii = Expr::weighted_sum([(load.p, vi), (-load.q, vr)]) / mag2;
            el.devices.push(nl.add_device(Device::bcurrent(&format!("{label}.ir"), node.re, NodeId::GROUND, ir))?);
            el.devices.push(nl.add_device(Device::bcurrent(&format!("{label}.ii"), node.im, NodeId::GROUND, ii))?);
        }
    }
    Ok(el)
}

/// Allocates bus nodes and emits every line, transformer, bus shunt and load.
/// Constant-impedance loads are sized at the solved bus voltage magnitude.
pub fn compile_network(nl: &mut Netlist, network: &Network, pf: &PowerFlowSolution) -> Result<NodeMap, GridError> {
    let omega = network.omega_base();
    let mut map = NodeMap::new();
    for bus in &network.buses {
        map.insert(bus.id, BusNodes::allocate(nl, bus.id));
    }
    for br in &network.branches {
        compile_branch(nl, br, &map, omega)?;
    }
    for tr in &network.transformers {
        compile_transformer(nl, tr, &map, omega)?;
    }
    for bus in &network.buses {
        compile_admittance(nl, &format!("SH{}", bus.id), map[&bus.id], bus.shunt())?;
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
        compile_load(nl, &label, load, &map, v, omega)?;
    }
    Ok(map)
}
