//! The case file: a versioned JSON document in engineering units (MW, MVAr,
//! machine-base impedances), converted to per-unit on the system base when
//! read and back when written.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::blocks::LimiterMode;
use crate::grid::{Branch, Bus, BusKind, Load, LoadKind, Network, Transformer};
use crate::machine::{ExciterParams, GovernorF, GovernorParams, MachineParams, Saturation};

pub const FORMAT_VERSION: u32 = 1;

/// One synchronous machine with its optional controllers, on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineSpec {
    pub bus: u32,
    pub mva_base: f64,
    pub notes: String,
    pub machine: MachineParams,
    pub exciter: Option<ExciterParams>,
    pub governor: Option<GovernorParams>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultSite {
    Bus(u32),
    /// Fraction `location` along the branch from its `from` end.
    Midline { branch: u32, location: f64 },
}

/// Shunt fault `r + jx` to ground behind a switch; open until an event
/// closes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub id: u32,
    pub site: FaultSite,
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CloseFaultSwitch,
    OpenFaultSwitch,
    OpenBranch,
    CloseBranch,
}

/// `target` is a fault id for the fault kinds and a branch or transformer id
/// for the branch kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub kind: EventKind,
    pub time: f64,
    pub target: u32,
}

/// A user channel: an expression over named ports (`bus4_re`, …) and device
/// currents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub name: String,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub notes: Vec<String>,
    pub network: Network,
    pub machines: Vec<MachineSpec>,
    pub faults: Vec<Fault>,
    pub events: Vec<Event>,
    pub probes: Vec<ProbeSpec>,
}

impl Case {
    pub fn machine_at(&self, bus: u32) -> Option<&MachineSpec> {
        self.machines.iter().find(|m| m.bus == bus)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.network.validate().map_err(ScenarioError::Grid)?;
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let mut seen = BTreeSet::new();
        for m in &self.machines {
            let Some(bus) = self.network.bus(m.bus) else {
                return invalid(format!("machine references unknown bus {}", m.bus));
            };
            if !seen.insert(m.bus) {
                return invalid(format!("more than one machine on bus {}", m.bus));
            }
            if bus.kind == BusKind::Pq {
                return invalid(format!("machine on bus {} needs a slack or PV bus", m.bus));
            }
            if !(m.mva_base > 0.0) {
                return invalid(format!("machine on bus {}: MVA base must be positive", m.bus));
            }
            let tag = |e| ScenarioError::Machine { bus: m.bus, source: e };
            m.machine.validate().map_err(tag)?;
            if let Some(e) = &m.exciter {
                e.validate().map_err(tag)?;
            }
            if let Some(g) = &m.governor {
                g.validate().map_err(tag)?;
            }
        }
        let elements: BTreeSet<u32> = self
            .network
            .branches
            .iter()
            .map(|b| b.id)
            .chain(self.network.transformers.iter().map(|t| t.id))
            .collect();
        let mut fault_ids = BTreeSet::new();
        for f in &self.faults {
            if !fault_ids.insert(f.id) {
                return invalid(format!("duplicate fault id {}", f.id));
            }
            if !(f.r >= 0.0 && f.x.is_finite()) {
                return invalid(format!("fault {}: impedance must have r ≥ 0 and finite x", f.id));
            }
            match f.site {
                FaultSite::Bus(b) if self.network.bus(b).is_none() => {
                    return invalid(format!("fault {} references unknown bus {b}", f.id))
                }
                FaultSite::Midline { branch, location } => {
                    if !self.network.branches.iter().any(|b| b.id == branch) {
                        return invalid(format!("fault {} references unknown branch {branch}", f.id));
                    }
                    if !(location > 0.0 && location < 1.0) {
                        return invalid(format!(
                            "fault {}: location {location} must lie strictly inside (0, 1); use a bus fault at the ends",
                            f.id
                        ));
                    }
                }
                _ => {}
            }
        }
        // Per target, events must alternate, starting from the initial state.
        let mut state: BTreeMap<(bool, u32), (bool, f64)> = BTreeMap::new();
        let mut events = self.events.clone();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        for ev in &events {
            if !(ev.time > 0.0 && ev.time.is_finite()) {
                return invalid(format!("event time {} must be positive", ev.time));
            }
            let (fault, closes) = match ev.kind {
                EventKind::CloseFaultSwitch => (true, true),
                EventKind::OpenFaultSwitch => (true, false),
                EventKind::CloseBranch => (false, true),
                EventKind::OpenBranch => (false, false),
            };
            if fault && !fault_ids.contains(&ev.target) {
                return invalid(format!("event at t = {} targets unknown fault {}", ev.time, ev.target));
            }
            if !fault && !elements.contains(&ev.target) {
                return invalid(format!("event at t = {} targets unknown branch {}", ev.time, ev.target));
            }
            let entry = state.entry((fault, ev.target)).or_insert((!fault, 0.0));
            if entry.0 == closes {
                return invalid(format!(
                    "event at t = {} leaves {} {} {} (already in that state)",
                    ev.time,
                    if fault { "fault" } else { "branch" },
                    ev.target,
                    if closes { "closed" } else { "open" }
                ));
            }
            if ev.time == entry.1 {
                return invalid(format!("two events on the same target at t = {}", ev.time));
            }
            *entry = (closes, ev.time);
        }
        for ((fault, id), (closed, _)) in &state {
            if *fault && *closed {
                return invalid(format!("fault {id} is closed but never cleared"));
            }
        }
        let mut names = BTreeSet::new();
        for p in &self.probes {
            if !names.insert(&p.name) {
                return invalid(format!("duplicate probe name `{}`", p.name));
            }
        }
        Ok(())
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn is_half(v: &f64) -> bool {
    *v == 0.5
}
fn is_zero(v: &f64) -> bool {
    *v == 0.0
}
fn sixty() -> f64 {
    60.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    format: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
    system_base_mva: f64,
    #[serde(default = "sixty")]
    frequency_hz: f64,
    buses: Vec<BusFile>,
    #[serde(default)]
    branches: Vec<BranchFile>,
    #[serde(default)]
    transformers: Vec<TransformerFile>,
    #[serde(default)]
    loads: Vec<LoadFile>,
    #[serde(default)]
    machines: Vec<MachineFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    faults: Vec<FaultFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    probes: Vec<ProbeSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusFile {
    id: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    base_kv: f64,
    kind: BusKind,
    #[serde(default = "one")]
    v_setpoint: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    angle_deg: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    p_gen_mw: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    q_gen_mvar: f64,
    /// Shunt consumption at 1 p.u. voltage.
    #[serde(default, skip_serializing_if = "is_zero")]
    g_shunt_mw: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    b_shunt_mvar: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchFile {
    id: u32,
    from: u32,
    to: u32,
    r: f64,
    x: f64,
    #[serde(default)]
    b: f64,
    #[serde(default = "half", skip_serializing_if = "is_half")]
    b_from_share: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformerFile {
    id: u32,
    from: u32,
    to: u32,
    #[serde(default)]
    r: f64,
    x: f64,
    tap: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadFile {
    bus: u32,
    #[serde(default)]
    kind: LoadKind,
    p_mw: f64,
    q_mvar: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaturationFile {
    a: f64,
    b: f64,
}

impl From<SaturationFile> for Saturation {
    fn from(s: SaturationFile) -> Self {
        Saturation { a: s.a, b: s.b }
    }
}

impl From<Saturation> for SaturationFile {
    fn from(s: Saturation) -> Self {
        SaturationFile { a: s.a, b: s.b }
    }
}

/// Machine data on the machine's own MVA base.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MachineParamsFile {
    rs: f64,
    xd: f64,
    xq: f64,
    xd_prime: f64,
    xq_prime: f64,
    xd_dprime: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xq_dprime: Option<f64>,
    xl: f64,
    td0_prime: f64,
    tq0_prime: f64,
    td0_dprime: f64,
    tq0_dprime: f64,
    h: f64,
    #[serde(default)]
    d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    saturation: Option<SaturationFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExciterFile {
    tr: f64,
    ka: f64,
    ta: f64,
    ke: f64,
    te: f64,
    kf: f64,
    tf: f64,
    vr_max: f64,
    vr_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    saturation: Option<SaturationFile>,
    #[serde(default)]
    limiter: LimiterMode,
}

/// Governor gains and limits on the machine base.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GovernorFile {
    k: f64,
    f: f64,
    t1: f64,
    #[serde(default)]
    t2: f64,
    t3: f64,
    t4: f64,
    t5: f64,
    p_max: f64,
    #[serde(default)]
    p_min: f64,
    #[serde(default)]
    f_mode: GovernorF,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MachineFile {
    bus: u32,
    mva_base: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    notes: String,
    machine: MachineParamsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exciter: Option<ExciterFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    governor: Option<GovernorFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultFile {
    id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bus: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    branch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    location: Option<f64>,
    #[serde(default)]
    r: f64,
    x: f64,
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses and validates a case file.
pub fn parse_case(bytes: &[u8]) -> Result<Case, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let file: CaseFile = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    let case = from_file(file)?;
    case.validate()?;
    Ok(case)
}

fn from_file(f: CaseFile) -> Result<Case, ScenarioError> {
    if f.format != FORMAT_VERSION {
        return Err(ScenarioError::Schema {
            pointer: "/format".into(),
            message: format!("unsupported format {} (expected {FORMAT_VERSION})", f.format),
        });
    }
    if !(f.system_base_mva > 0.0) || !(f.frequency_hz > 0.0) {
        return Err(ScenarioError::Invalid("system base and frequency must be positive".into()));
    }
    let base = f.system_base_mva;
    let mut network = Network::new(base, f.frequency_hz);
    network.buses = f
        .buses
        .into_iter()
        .map(|b| Bus {
            id: b.id,
            name: b.name,
            base_kv: b.base_kv,
            kind: b.kind,
            v_setpoint: b.v_setpoint,
            angle_deg: b.angle_deg,
            p_gen: b.p_gen_mw / base,
            q_gen: b.q_gen_mvar / base,
            g_shunt: b.g_shunt_mw / base,
            b_shunt: b.b_shunt_mvar / base,
        })
        .collect();
    network.branches = f
        .branches
        .into_iter()
        .map(|b| Branch {
            id: b.id,
            from: b.from,
            to: b.to,
            r: b.r,
            x: b.x,
            b: b.b,
            b_from_share: b.b_from_share,
        })
        .collect();
    network.transformers = f
        .transformers
        .into_iter()
        .map(|t| Transformer {
            id: t.id,
            from: t.from,
            to: t.to,
            r: t.r,
            x: t.x,
            n: t.tap,
        })
        .collect();
    network.loads = f
        .loads
        .into_iter()
        .map(|l| Load {
            bus: l.bus,
            kind: l.kind,
            p: l.p_mw / base,
            q: l.q_mvar / base,
        })
        .collect();
    let machines = f
        .machines
        .into_iter()
        .map(|m| {
            let to_sys = base / m.mva_base;
            let p = m.machine;
            MachineSpec {
                bus: m.bus,
                mva_base: m.mva_base,
                notes: m.notes,
                machine: MachineParams {
                    rs: p.rs * to_sys,
                    xd: p.xd * to_sys,
                    xq: p.xq * to_sys,
                    xd_prime: p.xd_prime * to_sys,
                    xq_prime: p.xq_prime * to_sys,
                    xd_dprime: p.xd_dprime * to_sys,
                    xq_dprime: p.xq_dprime.unwrap_or(p.xd_dprime) * to_sys,
                    xl: p.xl * to_sys,
                    td0_prime: p.td0_prime,
                    tq0_prime: p.tq0_prime,
                    td0_dprime: p.td0_dprime,
                    tq0_dprime: p.tq0_dprime,
                    h: p.h / to_sys,
                    d: p.d / to_sys,
                    saturation: p.saturation.map(Into::into),
                },
                exciter: m.exciter.map(|e| ExciterParams {
                    tr: e.tr,
                    ka: e.ka,
                    ta: e.ta,
                    ke: e.ke,
                    te: e.te,
                    kf: e.kf,
                    tf: e.tf,
                    vr_max: e.vr_max,
                    vr_min: e.vr_min,
                    saturation: e.saturation.map(Into::into),
                    limiter: e.limiter,
                }),
                governor: m.governor.map(|g| GovernorParams {
                    k: g.k / to_sys,
                    f: g.f,
                    t1: g.t1,
                    t2: g.t2,
                    t3: g.t3,
                    t4: g.t4,
                    t5: g.t5,
                    p_max: g.p_max / to_sys,
                    p_min: g.p_min / to_sys,
                    f_mode: g.f_mode,
                }),
            }
        })
        .collect();
    let faults = f
        .faults
        .into_iter()
        .map(|ff| {
            let site = match (ff.bus, ff.branch, ff.location) {
                (Some(b), None, None) => FaultSite::Bus(b),
                (None, Some(branch), Some(location)) => FaultSite::Midline { branch, location },
                _ => {
                    return Err(ScenarioError::Invalid(format!(
                        "fault {}: give either `bus`, or `branch` with `location`",
                        ff.id
                    )))
                }
            };
            Ok(Fault {
                id: ff.id,
                site,
                r: ff.r,
                x: ff.x,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Case {
        name: f.name,
        notes: f.notes,
        network,
        machines,
        faults,
        events: f.events,
        probes: f.probes,
    })
}

fn to_file(case: &Case) -> CaseFile {
    let n = &case.network;
    let base = n.base_mva;
    CaseFile {
        format: FORMAT_VERSION,
        name: case.name.clone(),
        notes: case.notes.clone(),
        system_base_mva: base,
        frequency_hz: n.frequency_hz,
        buses: n
            .buses
            .iter()
            .map(|b| BusFile {
                id: b.id,
                name: b.name.clone(),
                base_kv: b.base_kv,
                kind: b.kind,
                v_setpoint: b.v_setpoint,
                angle_deg: b.angle_deg,
                p_gen_mw: b.p_gen * base,
                q_gen_mvar: b.q_gen * base,
                g_shunt_mw: b.g_shunt * base,
                b_shunt_mvar: b.b_shunt * base,
            })
            .collect(),
        branches: n
            .branches
            .iter()
            .map(|b| BranchFile {
                id: b.id,
                from: b.from,
                to: b.to,
                r: b.r,
                x: b.x,
                b: b.b,
                b_from_share: b.b_from_share,
            })
            .collect(),
        transformers: n
            .transformers
            .iter()
            .map(|t| TransformerFile {
                id: t.id,
                from: t.from,
                to: t.to,
                r: t.r,
                x: t.x,
                tap: t.n,
            })
            .collect(),
        loads: n
            .loads
            .iter()
            .map(|l| LoadFile {
                bus: l.bus,
                kind: l.kind,
                p_mw: l.p * base,
                q_mvar: l.q * base,
            })
            .collect(),
        machines: case
            .machines
            .iter()
            .map(|m| {
                let to_sys = base / m.mva_base;
                let p = &m.machine;
                MachineFile {
                    bus: m.bus,
                    mva_base: m.mva_base,
                    notes: m.notes.clone(),
                    machine: MachineParamsFile {
                        rs: p.rs / to_sys,
                        xd: p.xd / to_sys,
                        xq: p.xq / to_sys,
                        xd_prime: p.xd_prime / to_sys,
                        xq_prime: p.xq_prime / to_sys,
                        xd_dprime: p.xd_dprime / to_sys,
                        xq_dprime: (p.xq_dprime != p.xd_dprime).then_some(p.xq_dprime / to_sys),
                        xl: p.xl / to_sys,
                        td0_prime: p.td0_prime,
                        tq0_prime: p.tq0_prime,
                        td0_dprime: p.td0_dprime,
                        tq0_dprime: p.tq0_dprime,
                        h: p.h * to_sys,
                        d: p.d * to_sys,
                        saturation: p.saturation.map(Into::into),
                    },
                    exciter: m.exciter.as_ref().map(|e| ExciterFile {
                        tr: e.tr,
                        ka: e.ka,
                        ta: e.ta,
                        ke: e.ke,
                        te: e.te,
                        kf: e.kf,
                        tf: e.tf,
                        vr_max: e.vr_max,
                        vr_min: e.vr_min,
                        saturation: e.saturation.map(Into::into),
                        limiter: e.limiter,
                    }),
                    governor: m.governor.as_ref().map(|g| GovernorFile {
                        k: g.k * to_sys,
                        f: g.f,
                        t1: g.t1,
                        t2: g.t2,
                        t3: g.t3,
                        t4: g.t4,
                        t5: g.t5,
                        p_max: g.p_max * to_sys,
                        p_min: g.p_min * to_sys,
                        f_mode: g.f_mode,
                    }),
                }
            })
            .collect(),
        faults: case
            .faults
            .iter()
            .map(|f| {
                let (bus, branch, location) = match f.site {
                    FaultSite::Bus(b) => (Some(b), None, None),
                    FaultSite::Midline { branch, location } => (None, Some(branch), Some(location)),
                };
                FaultFile {
                    id: f.id,
                    bus,
                    branch,
                    location,
                    r: f.r,
                    x: f.x,
                }
            })
            .collect(),
        events: case.events.clone(),
        probes: case.probes.clone(),
    }
}

/// Writes the case back out in file units.
pub fn case_to_json(case: &Case) -> String {
    let mut s = serde_json::to_string_pretty(&to_file(case)).expect("case serializes");
    s.push('\n');
    s
}
