//! Reader for the IEEE Common Data Format (bus and branch sections).

use super::{Case, ScenarioError};
use crate::grid::{Branch, Bus, BusKind, Load, LoadKind, Network, Transformer};

/// Solved voltage the archive lists for one bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchiveVoltage {
    pub bus: u32,
    pub magnitude: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdfCase {
    pub case: Case,
    pub archive: Vec<ArchiveVoltage>,
}

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        message: message.into(),
    }
}

fn num(line: usize, what: &str, s: Option<&str>) -> Result<f64, ScenarioError> {
    let s = s.ok_or_else(|| err(line, format!("missing {what}")))?;
    s.parse().map_err(|_| err(line, format!("{what}: `{s}` is not a number")))
}

/// Converts a CDF file to a case without machines. Branch and transformer
/// ids follow file order; loads become constant-impedance loads.
pub fn parse_cdf(text: &str) -> Result<CdfCase, ScenarioError> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (_, title) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let base = title
        .get(31..37)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| err(1, "MVA base not found in columns 32-37"))?;
    let name = title.get(45..).unwrap_or("").trim().to_string();
    let mut network = Network::new(base, 60.0);
    let mut archive = Vec::new();

    let mut section = None;
    let mut next_id = 1;
    for (n, line) in lines {
        let trimmed = line.trim();
        if trimmed.starts_with("BUS DATA FOLLOWS") {
            section = Some("bus");
            continue;
        }
        if trimmed.starts_with("BRANCH DATA FOLLOWS") {
            section = Some("branch");
            continue;
        }
        if trimmed.starts_with("-9") {
            section = None;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        match section {
            Some("bus") => {
                let id = num(n, "bus number", line.get(0..4).map(str::trim))? as u32;
                let bus_name = line.get(5..17).unwrap_or("").trim().to_string();
                let mut f = line.get(17..).unwrap_or("").split_whitespace();
                let mut field = |what: &str| num(n, what, f.next());
                let _area = field("area")?;
                let _zone = field("loss zone")?;
                let kind = match field("type")? as i64 {
                    0 | 1 => BusKind::Pq,
                    2 => BusKind::Pv,
                    3 => BusKind::Slack,
                    t => return Err(err(n, format!("unknown bus type {t}"))),
                };
                let v = field("final voltage")?;
                let angle = field("final angle")?;
                let (pl, ql, pg, qg) = (field("load MW")?, field("load MVAr")?, field("gen MW")?, field("gen MVAr")?);
                let base_kv = field("base kV")?;
                let v_desired = field("desired voltage")?;
                let _qmax = field("max MVAr")?;
                let _qmin = field("min MVAr")?;
                let (g, b) = (field("shunt G")?, field("shunt B")?);
                archive.push(ArchiveVoltage {
                    bus: id,
                    magnitude: v,
                    angle_deg: angle,
                });
                let setpoint = if kind != BusKind::Pq && v_desired > 0.0 { v_desired } else { v };
                network.buses.push(Bus {
                    id,
                    name: bus_name,
                    base_kv,
                    kind,
                    v_setpoint: setpoint,
                    angle_deg: angle,
                    p_gen: pg / base,
                    q_gen: qg / base,
                    g_shunt: g,
                    b_shunt: b,
                });
                if pl != 0.0 || ql != 0.0 {
                    network.loads.push(Load {
                        bus: id,
                        kind: LoadKind::ConstantZ,
                        p: pl / base,
                        q: ql / base,
                    });
                }
            }
            Some("branch") => {
                let mut f = line.split_whitespace();
                let mut field = |what: &str| num(n, what, f.next());
                let from = field("from bus")? as u32;
                let to = field("to bus")? as u32;
                let _area = field("area")?;
                let _zone = field("zone")?;
                let _circuit = field("circuit")?;
                let _kind = field("branch type")?;
                let (r, x, b) = (field("R")?, field("X")?, field("B")?);
                for what in ["rating A", "rating B", "rating C", "control bus", "side"] {
                    field(what)?;
                }
                let ratio = field("turns ratio")?;
                let shift = field("phase shift")?;
                if shift != 0.0 {
                    return Err(err(n, "phase-shifting transformers are not supported"));
                }
                let id = next_id;
                next_id += 1;
                if ratio != 0.0 {
                    if b != 0.0 {
                        log::warn!("line {n}: transformer charging {b} ignored");
                    }
                    network.transformers.push(Transformer {
                        id,
                        from,
                        to,
                        r,
                        x,
                        n: ratio,
                    });
                } else {
                    network.branches.push(Branch::new(id, from, to, r, x, b));
                }
            }
            _ => {}
        }
    }
    if network.buses.is_empty() {
        return Err(err(1, "no bus data section"));
    }
    let case = Case {
        name,
        notes: Vec::new(),
        network,
        machines: Vec::new(),
        faults: Vec::new(),
        events: Vec::new(),
        probes: Vec::new(),
    };
    case.validate()?;
    Ok(CdfCase { case, archive })
}
