use std::fmt;

use super::{Device, DeviceKind, Expr, Netlist, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    EmptyNetlist,
    FloatingNode(NodeId),
    NoDcPath(NodeId),
    UnresolvedVoltage { device: String, node: NodeId },
    UnresolvedCurrent { device: String, target: String },
    SelfLoop(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub kind: DiagnosticKind,
}

impl Diagnostic {
    fn error(kind: DiagnosticKind) -> Self {
        Self {
            severity: Severity::Error,
            kind,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match &self.kind {
            DiagnosticKind::EmptyNetlist => write!(f, "{sev}: netlist has no devices"),
            DiagnosticKind::FloatingNode(n) => {
                write!(f, "{sev}: node {n} is not connected to ground through any device")
            }
            DiagnosticKind::NoDcPath(n) => write!(f, "{sev}: node {n} has no DC path to ground"),
            DiagnosticKind::UnresolvedVoltage { device, node } => {
                write!(f, "{sev}: `{device}` references V({node}), which does not exist")
            }
            DiagnosticKind::UnresolvedCurrent { device, target } => write!(
                f,
                "{sev}: `{device}` references I({target}), which is not a resistor or branch-current device"
            ),
            DiagnosticKind::SelfLoop(d) => {
                write!(f, "{sev}: `{d}` has both terminals on the same node")
            }
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Whether `I(label)` can be observed: branch-current devices and resistors.
pub(crate) fn current_observable(kind: &DeviceKind) -> bool {
    kind.has_branch_current() || matches!(kind, DeviceKind::Resistor { .. })
}

/// A dependent current source driven by its own terminal voltage acts as a
/// (nonlinear) conductance, so it counts as a DC path.
fn conducts_dc(device: &Device) -> bool {
    match &device.kind {
        DeviceKind::Resistor { .. }
        | DeviceKind::Inductor { .. }
        | DeviceKind::VoltageSource(_)
        | DeviceKind::DependentVoltage(_)
        | DeviceKind::Switch { .. } => true,
        DeviceKind::Capacitor { initial_voltage, .. } => initial_voltage.is_some(),
        DeviceKind::DependentCurrent(e) => {
            let mut own = false;
            e.for_each_voltage(&mut |n| own |= !n.is_ground() && (n == device.pos || n == device.neg));
            own
        }
        DeviceKind::CurrentSource(_) => false,
    }
}

/// Checks a netlist for structural problems. An empty list means it can be
/// simulated.
pub fn validate_netlist(netlist: &Netlist) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if netlist.devices().is_empty() {
        out.push(Diagnostic::error(DiagnosticKind::EmptyNetlist));
        return out;
    }
    let n = netlist.node_count();
    let mut any = UnionFind::new(n);
    let mut dc = UnionFind::new(n);
    for d in netlist.devices() {
        any.union(d.pos.0, d.neg.0);
        if conducts_dc(d) {
            dc.union(d.pos.0, d.neg.0);
        }
        if d.pos == d.neg {
            out.push(Diagnostic {
                severity: Severity::Warning,
                kind: DiagnosticKind::SelfLoop(d.label.clone()),
            });
        }
    }
    for k in 1..n {
        if any.find(k) != any.find(0) {
            out.push(Diagnostic::error(DiagnosticKind::FloatingNode(NodeId(k))));
        } else if dc.find(k) != dc.find(0) {
            out.push(Diagnostic::error(DiagnosticKind::NoDcPath(NodeId(k))));
        }
    }
    for d in netlist.devices() {
        let Some(expr) = d.kind.expression() else {
            continue;
        };
        check_refs(netlist, &d.label, expr, &mut out);
    }
    out
}

fn check_refs(netlist: &Netlist, device: &str, expr: &Expr, out: &mut Vec<Diagnostic>) {
    let n = netlist.node_count();
    let mut seen_v = Vec::new();
    expr.for_each_voltage(&mut |node| {
        if node.0 >= n && !seen_v.contains(&node) {
            seen_v.push(node);
            out.push(Diagnostic::error(DiagnosticKind::UnresolvedVoltage {
                device: device.to_string(),
                node,
            }));
        }
    });
    let mut seen_i: Vec<String> = Vec::new();
    expr.for_each_current(&mut |label| {
        let ok = netlist
            .find_device(label)
            .is_some_and(|t| current_observable(&t.kind));
        if !ok && !seen_i.iter().any(|s| s == label) {
            seen_i.push(label.to_string());
            out.push(Diagnostic::error(DiagnosticKind::UnresolvedCurrent {
                device: device.to_string(),
                target: label.to_string(),
            }));
        }
    });
}
