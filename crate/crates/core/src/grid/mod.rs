//! Bus-branch network: admittance matrix, phasor-domain circuit compilation
//! and the initializing power flow.
//!
//! Everything here is per-unit on the system base. The network is quasi-static:
//! each bus becomes a pair of circuit nodes carrying the real and imaginary
//! parts of its voltage phasor.

mod compile;
mod powerflow;
mod ybus;

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::BlockError;
use crate::netlist::NetlistError;

pub use compile::{
    compile_admittance, compile_branch, compile_impedance, compile_load, compile_network, compile_transformer,
    pq_load_current, BusNodes, CompiledElement, NodeMap, ShuntElement,
};
pub use powerflow::{solve_power_flow, PowerFlowOptions, PowerFlowSolution};
pub use ybus::{build_ybus, YBus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("bus {0} is defined more than once")]
    DuplicateBus(u32),
    #[error("element id {0} is used more than once")]
    DuplicateElement(u32),
    #[error("{element} references unknown bus {bus}")]
    UnknownBus { element: String, bus: u32 },
    #[error("{element}: {reason}")]
    InvalidParameter { element: String, reason: String },
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("bus {0} is not connected to the slack bus")]
    Islanded(u32),
    #[error("power flow did not converge after {iterations} iterations; worst mismatch {mismatch:.3e} p.u. at bus {bus}")]
    Divergence { iterations: usize, mismatch: f64, bus: u32 },
    #[error("power flow Jacobian is singular at iteration {0}")]
    SingularJacobian(usize),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Block(#[from] BlockError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub name: String,
    pub base_kv: f64,
    pub kind: BusKind,
    /// Voltage magnitude: the setpoint at slack and PV buses, an initial
    /// guess elsewhere.
    pub v_setpoint: f64,
    /// Reference angle at the slack bus, an initial guess elsewhere.
    pub angle_deg: f64,
    pub p_gen: f64,
    pub q_gen: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
}

impl Bus {
    pub fn new(id: u32, kind: BusKind, v_setpoint: f64) -> Self {
        Self {
            id,
            name: format!("Bus {id}"),
            base_kv: 1.0,
            kind,
            v_setpoint,
            angle_deg: 0.0,
            p_gen: 0.0,
            q_gen: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
        }
    }

    pub fn shunt(&self) -> Complex64 {
        Complex64::new(self.g_shunt, self.b_shunt)
    }
}

/// π-model line. `b` is the total charging susceptance; `b_from_share` of it
/// sits at the from end and the rest at the to end.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub b_from_share: f64,
}

impl Branch {
    pub fn new(id: u32, from: u32, to: u32, r: f64, x: f64, b: f64) -> Self {
        Self {
            id,
            from,
            to,
            r,
            x,
            b,
            b_from_share: 0.5,
        }
    }

    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }

    pub fn shunt_from(&self) -> Complex64 {
        Complex64::new(0.0, self.b * self.b_from_share)
    }

    pub fn shunt_to(&self) -> Complex64 {
        Complex64::new(0.0, self.b * (1.0 - self.b_from_share))
    }
}

/// Two-winding transformer with an off-nominal tap `n` on the from side.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    pub n: f64,
}

impl Transformer {
    pub fn admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }

    /// The three π admittances `(series, from shunt, to shunt)`.
    pub fn pi_admittances(&self) -> (Complex64, Complex64, Complex64) {
        let y = self.admittance();
        let n = self.n;
        (y / n, y * (1.0 - n) / (n * n), y * (n - 1.0) / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadKind {
    #[default]
    ConstantZ,
    ConstantPq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: u32,
    pub kind: LoadKind,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub transformers: Vec<Transformer>,
    pub loads: Vec<Load>,
}

impl Network {
    pub fn new(base_mva: f64, frequency_hz: f64) -> Self {
        Self {
            base_mva,
            frequency_hz,
            buses: Vec::new(),
            branches: Vec::new(),
            transformers: Vec::new(),
            loads: Vec::new(),
        }
    }

    pub fn omega_base(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz
    }

    /// Position of bus `id` in `buses`.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Total demand at a bus.
    pub fn bus_load(&self, id: u32) -> Complex64 {
        self.loads
            .iter()
            .filter(|l| l.bus == id)
            .map(|l| Complex64::new(l.p, l.q))
            .sum()
    }

    pub fn slack(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.kind == BusKind::Slack)
    }

    /// Smallest id not used by any branch or transformer.
    pub fn next_element_id(&self) -> u32 {
        self.branches
            .iter()
            .map(|b| b.id)
            .chain(self.transformers.iter().map(|t| t.id))
            .max()
            .map_or(1, |m| m + 1)
    }

    pub fn next_bus_id(&self) -> u32 {
        self.buses.iter().map(|b| b.id).max().map_or(1, |m| m + 1)
    }

    /// Checks ids, references, parameter ranges, the slack count and
    /// connectivity.
    pub fn validate(&self) -> Result<(), GridError> {
        let mut index = BTreeMap::new();
        for (k, b) in self.buses.iter().enumerate() {
            if index.insert(b.id, k).is_some() {
                return Err(GridError::DuplicateBus(b.id));
            }
            if !(b.v_setpoint > 0.5 && b.v_setpoint < 1.5) {
                return Err(GridError::InvalidParameter {
                    element: format!("bus {}", b.id),
                    reason: format!("voltage setpoint {} outside (0.5, 1.5) p.u.", b.v_setpoint),
                });
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(GridError::SlackCount(slacks));
        }
        let resolve = |element: &str, bus: u32| {
            index.get(&bus).copied().ok_or_else(|| GridError::UnknownBus {
                element: element.to_string(),
                bus,
            })
        };
        let invalid = |element: String, reason: String| GridError::InvalidParameter { element, reason };

        let mut ids = std::collections::BTreeSet::new();
        let mut parent: Vec<usize> = (0..self.buses.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut join = |a: usize, b: usize| {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        };
        for br in &self.branches {
            let name = format!("branch {}", br.id);
            if !ids.insert(br.id) {
                return Err(GridError::DuplicateElement(br.id));
            }
            let (f, t) = (resolve(&name, br.from)?, resolve(&name, br.to)?);
            if f == t {
                return Err(invalid(name, "both ends on the same bus".into()));
            }
            if br.x == 0.0 || !br.x.is_finite() || !br.r.is_finite() {
                return Err(invalid(name, format!("series reactance must be finite and nonzero (x = {})", br.x)));
            }
            if !(br.b >= 0.0) || !br.b_from_share.is_finite() {
                return Err(invalid(name, format!("charging susceptance must be non-negative (b = {})", br.b)));
            }
            join(f, t);
        }
        for tr in &self.transformers {
            let name = format!("transformer {}", tr.id);
            if !ids.insert(tr.id) {
                return Err(GridError::DuplicateElement(tr.id));
            }
            let (f, t) = (resolve(&name, tr.from)?, resolve(&name, tr.to)?);
            if f == t {
                return Err(invalid(name, "both ends on the same bus".into()));
            }
            if tr.x == 0.0 || !tr.x.is_finite() || !tr.r.is_finite() {
                return Err(invalid(name, format!("reactance must be finite and nonzero (x = {})", tr.x)));
            }
            if !(tr.n > 0.0) || !tr.n.is_finite() {
                return Err(invalid(name, format!("tap ratio must be positive (n = {})", tr.n)));
            }
            join(f, t);
        }
        for l in &self.loads {
            resolve(&format!("load at bus {}", l.bus), l.bus)?;
            if !l.p.is_finite() || !l.q.is_finite() {
                return Err(invalid(format!("load at bus {}", l.bus), "non-finite power".into()));
            }
        }
        let slack = self.buses.iter().position(|b| b.kind == BusKind::Slack).expect("counted");
        let root = find(&mut parent, slack);
        for k in 0..self.buses.len() {
            if find(&mut parent, k) != root {
                return Err(GridError::Islanded(self.buses[k].id));
            }
        }
        Ok(())
    }
}
