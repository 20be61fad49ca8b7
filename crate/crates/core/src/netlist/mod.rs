//! Circuit data model: nodes, primitive devices and behavioral sources.

mod export;
mod expr;
mod parse;
mod tape;
mod validate;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

pub use export::{export_spice_netlist, ExportError};
pub use expr::{
    guard_denominator, BinaryOp, Bindings, EvalError, EvalStats, Expr, MapBindings, UnaryOp,
    DIVISION_GUARD,
};
pub use parse::{parse_expression, parse_expression_with, ParseError};
pub use tape::{Leaf, Tape, TapeScratch};
pub use validate::{validate_netlist, Diagnostic, DiagnosticKind, Severity};

/// Index into the node table. Node 0 is ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const GROUND: NodeId = NodeId(0);

    pub fn is_ground(self) -> bool {
        self.0 == 0
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Stable position of a device in its netlist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceId(pub usize);

/// Time functions for independent sources.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Dc(f64),
    /// `before` up to and including `at`, `after` beyond it.
    Step { at: f64, before: f64, after: f64 },
    /// Piecewise linear through `(t, value)` points, held flat outside.
    Pwl(Vec<(f64, f64)>),
    Sine {
        offset: f64,
        amplitude: f64,
        freq_hz: f64,
        phase_rad: f64,
    },
}

impl Waveform {
    /// Left-limit value at `t`. Discontinuities sit on breakpoints, so the
    /// value seen by a step ending at `t` is the one just before `t`.
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Waveform::Dc(v) => *v,
            Waveform::Step { at, before, after } => {
                if t <= *at {
                    *before
                } else {
                    *after
                }
            }
            Waveform::Pwl(points) => pwl_value(points, t),
            Waveform::Sine {
                offset,
                amplitude,
                freq_hz,
                phase_rad,
            } => offset + amplitude * (2.0 * std::f64::consts::PI * freq_hz * t + phase_rad).sin(),
        }
    }

    /// Times where the waveform or its slope is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Waveform::Step { at, .. } => vec![*at],
            Waveform::Pwl(points) => points.iter().map(|p| p.0).collect(),
            _ => Vec::new(),
        }
    }
}

fn pwl_value(points: &[(f64, f64)], t: f64) -> f64 {
    match points {
        [] => 0.0,
        [(t0, v0), ..] if t <= *t0 => *v0,
        _ => {
            for w in points.windows(2) {
                let ((ta, va), (tb, vb)) = (w[0], w[1]);
                if t <= tb {
                    if tb == ta {
                        return va;
                    }
                    return va + (vb - va) * (t - ta) / (tb - ta);
                }
            }
            points.last().unwrap().1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceKind {
    Resistor {
        ohms: f64,
    },
    /// With an initial voltage the capacitor is pinned to it during the
    /// operating-point solve (SPICE `.IC`); otherwise it is open at DC.
    Capacitor {
        farads: f64,
        initial_voltage: Option<f64>,
    },
    Inductor {
        henries: f64,
        initial_current: Option<f64>,
    },
    VoltageSource(Waveform),
    CurrentSource(Waveform),
    DependentVoltage(Expr),
    DependentCurrent(Expr),
    /// Closed on each `[t_on, t_off)` interval.
    Switch {
        closed_intervals: Vec<(f64, f64)>,
    },
}

impl DeviceKind {
    /// Whether the device carries a branch-current unknown in the MNA system.
    pub fn has_branch_current(&self) -> bool {
        matches!(
            self,
            DeviceKind::Inductor { .. }
                | DeviceKind::VoltageSource(_)
                | DeviceKind::DependentVoltage(_)
                | DeviceKind::Capacitor {
                    initial_voltage: Some(_),
                    ..
                }
        )
    }

    pub fn expression(&self) -> Option<&Expr> {
        match self {
            DeviceKind::DependentVoltage(e) | DeviceKind::DependentCurrent(e) => Some(e),
            _ => None,
        }
    }

    /// SPICE card letter.
    pub fn card_prefix(&self) -> char {
        match self {
            DeviceKind::Resistor { .. } => 'R',
            DeviceKind::Capacitor { .. } => 'C',
            DeviceKind::Inductor { .. } => 'L',
            DeviceKind::VoltageSource(_) => 'V',
            DeviceKind::CurrentSource(_) => 'I',
            DeviceKind::DependentVoltage(_) | DeviceKind::DependentCurrent(_) => 'B',
            DeviceKind::Switch { .. } => 'S',
        }
    }
}

/// A two-terminal device. Currents are positive flowing from `pos` through
/// the device to `neg`.
#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub label: String,
    pub pos: NodeId,
    pub neg: NodeId,
    pub kind: DeviceKind,
}

impl Device {
    pub fn new(label: impl Into<String>, pos: impl Into<NodeId>, neg: impl Into<NodeId>, kind: DeviceKind) -> Self {
        Self {
            label: label.into(),
            pos: pos.into(),
            neg: neg.into(),
            kind,
        }
    }

    pub fn resistor(label: &str, pos: impl Into<NodeId>, neg: impl Into<NodeId>, ohms: f64) -> Self {
        Self::new(label, pos, neg, DeviceKind::Resistor { ohms })
    }

    pub fn capacitor(label: &str, pos: impl Into<NodeId>, neg: impl Into<NodeId>, farads: f64) -> Self {
        Self::new(
            label,
            pos,
            neg,
            DeviceKind::Capacitor {
                farads,
                initial_voltage: None,
            },
        )
    }

    pub fn inductor(label: &str, pos: impl Into<NodeId>, neg: impl Into<NodeId>, henries: f64) -> Self {
        Self::new(
            label,
            pos,
            neg,
            DeviceKind::Inductor {
                henries,
                initial_current: None,
            },
        )
    }

    pub fn vsource(label: &str, pos: impl Into<NodeId>, neg: impl Into<NodeId>, w: Waveform) -> Self {
        Self::new(label, pos, neg, DeviceKind::VoltageSource(w))
    }

    pub fn isource(label: &str, pos: impl Into<NodeId>, neg: impl Into<NodeId>, w: Waveform) -> Self {
        Self::new(label, pos, neg, DeviceKind::CurrentSource(w))
    }

    pub fn bvoltage(label: &str, pos: impl Into<NodeId>, neg: impl Into<NodeId>, e: Expr) -> Self {
        Self::new(label, pos, neg, DeviceKind::DependentVoltage(e))
    }

    pub fn bcurrent(label: &str, pos: impl Into<NodeId>, neg: impl Into<NodeId>, e: Expr) -> Self {
        Self::new(label, pos, neg, DeviceKind::DependentCurrent(e))
    }

    pub fn switch(label: &str, pos: impl Into<NodeId>, neg: impl Into<NodeId>, closed_intervals: Vec<(f64, f64)>) -> Self {
        Self::new(label, pos, neg, DeviceKind::Switch { closed_intervals })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetlistError {
    #[error("duplicate device label `{0}`")]
    DuplicateLabel(String),
    #[error("device `{label}`: invalid value {value} ({reason})")]
    InvalidValue {
        label: String,
        value: f64,
        reason: &'static str,
    },
    #[error("device `{0}`: switch intervals must be sorted, disjoint and non-empty")]
    InvalidSwitchIntervals(String),
    #[error("device `{0}`: empty label")]
    EmptyLabel(String),
    #[error("duplicate port name `{0}`")]
    DuplicatePort(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Netlist {
    node_count: usize,
    devices: Vec<Device>,
    labels: HashMap<String, DeviceId>,
    named_ports: BTreeMap<String, NodeId>,
    nodesets: BTreeMap<NodeId, f64>,
}

fn check_positive(label: &str, value: f64, reason: &'static str) -> Result<(), NetlistError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(NetlistError::InvalidValue {
            label: label.to_string(),
            value,
            reason,
        })
    }
}

impl Netlist {
    pub fn new() -> Self {
        Self {
            node_count: 1,
            ..Default::default()
        }
    }

    /// Number of nodes including ground.
    pub fn node_count(&self) -> usize {
        self.node_count.max(1)
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device(&self, id: DeviceId) -> &Device {
        &self.devices[id.0]
    }

    pub fn device_id(&self, label: &str) -> Option<DeviceId> {
        self.labels.get(label).copied()
    }

    pub fn find_device(&self, label: &str) -> Option<&Device> {
        self.device_id(label).map(|id| self.device(id))
    }

    /// Allocates a fresh node. With a name, the node is also registered as a
    /// named port.
    pub fn new_node(&mut self, name: Option<&str>) -> NodeId {
        let id = NodeId(self.node_count());
        self.node_count = id.0 + 1;
        if let Some(name) = name {
            self.named_ports.insert(name.to_string(), id);
        }
        id
    }

    fn touch(&mut self, n: NodeId) {
        if n.0 >= self.node_count() {
            self.node_count = n.0 + 1;
        }
    }

    /// Appends a device, creating any terminal node not yet in the table.
    pub fn add_device(&mut self, device: Device) -> Result<DeviceId, NetlistError> {
        let label = device.label.as_str();
        if label.is_empty() {
            return Err(NetlistError::EmptyLabel(label.into()));
        }
        if self.labels.contains_key(label) {
            return Err(NetlistError::DuplicateLabel(label.into()));
        }
        match &device.kind {
            DeviceKind::Resistor { ohms } => check_positive(label, *ohms, "resistance must be positive")?,
            DeviceKind::Capacitor { farads, .. } => {
                check_positive(label, *farads, "capacitance must be positive")?
            }
            DeviceKind::Inductor { henries, .. } => {
                check_positive(label, *henries, "inductance must be positive")?
            }
            DeviceKind::Switch { closed_intervals } => {
                let ordered = closed_intervals.iter().all(|(a, b)| a < b)
                    && closed_intervals.windows(2).all(|w| w[0].1 <= w[1].0);
                if !ordered {
                    return Err(NetlistError::InvalidSwitchIntervals(label.into()));
                }
            }
            _ => {}
        }
        self.touch(device.pos);
        self.touch(device.neg);
        let id = DeviceId(self.devices.len());
        self.labels.insert(device.label.clone(), id);
        self.devices.push(device);
        Ok(id)
    }

    pub fn named_ports(&self) -> &BTreeMap<String, NodeId> {
        &self.named_ports
    }

    pub fn port(&self, name: &str) -> Option<NodeId> {
        self.named_ports.get(name).copied()
    }

    pub fn name_node(&mut self, name: &str, node: NodeId) -> Result<(), NetlistError> {
        if self.named_ports.contains_key(name) {
            return Err(NetlistError::DuplicatePort(name.into()));
        }
        self.touch(node);
        self.named_ports.insert(name.to_string(), node);
        Ok(())
    }

    /// Initial guess for the operating-point Newton iteration (SPICE `.NODESET`).
    pub fn set_nodeset(&mut self, node: NodeId, value: f64) {
        if !node.is_ground() {
            self.touch(node);
            self.nodesets.insert(node, value);
        }
    }

    pub fn nodesets(&self) -> &BTreeMap<NodeId, f64> {
        &self.nodesets
    }

    /// Parses an expression against this netlist's named ports.
    pub fn parse_expression(&self, text: &str) -> Result<Expr, ParseError> {
        parse_expression_with(text, &|name| self.port(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_insertion() {
        let mut nl = Netlist::new();
        assert_eq!(nl.node_count(), 1);
        let id = nl.add_device(Device::resistor("R1", 1, 0, 1.0)).unwrap();
        assert_eq!(id, DeviceId(0));
        assert_eq!(nl.node_count(), 2);
    }

    #[test]
    fn duplicate_label_rejected() {
        let mut nl = Netlist::new();
        nl.add_device(Device::resistor("R1", 1, 0, 1.0)).unwrap();
        assert_eq!(
            nl.add_device(Device::resistor("R1", 2, 0, 1.0)),
            Err(NetlistError::DuplicateLabel("R1".into()))
        );
    }

    #[test]
    fn negative_capacitance_rejected() {
        let mut nl = Netlist::new();
        let err = nl.add_device(Device::capacitor("C1", 1, 0, -1.0)).unwrap_err();
        assert!(matches!(err, NetlistError::InvalidValue { value, .. } if value == -1.0));
        assert!(nl.add_device(Device::resistor("R0", 1, 0, 0.0)).is_err());
        assert!(nl.add_device(Device::inductor("L0", 1, 0, f64::NAN)).is_err());
    }

    #[test]
    fn switch_intervals_checked() {
        let mut nl = Netlist::new();
        assert!(nl
            .add_device(Device::switch("S1", 1, 0, vec![(2.0, 3.0), (1.0, 1.5)]))
            .is_err());
        assert!(nl
            .add_device(Device::switch("S2", 1, 0, vec![(1.0, 2.5), (2.0, 3.0)]))
            .is_err());
        assert!(nl
            .add_device(Device::switch("S3", 1, 0, vec![(1.0, 2.0), (2.0, 3.0)]))
            .is_ok());
    }

    #[test]
    fn waveform_left_limits() {
        let w = Waveform::Step {
            at: 1.0,
            before: 0.0,
            after: 2.0,
        };
        assert_eq!(w.value(1.0), 0.0);
        assert_eq!(w.value(1.0 + 1e-9), 2.0);
        let p = Waveform::Pwl(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 2.0)]);
        assert_eq!(p.value(0.5), 1.0);
        assert_eq!(p.value(5.0), 2.0);
        assert_eq!(p.value(-1.0), 0.0);
    }

    #[test]
    fn fresh_nodes_never_collide() {
        let mut nl = Netlist::new();
        nl.add_device(Device::resistor("R1", 5, 0, 1.0)).unwrap();
        let a = nl.new_node(Some("a"));
        let b = nl.new_node(None);
        assert_eq!(a, NodeId(6));
        assert_eq!(b, NodeId(7));
        assert_eq!(nl.port("a"), Some(a));
    }
}
