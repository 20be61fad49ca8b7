use std::fmt::Write as _;

use thiserror::Error;

use super::validate::validate_netlist;
use super::{Device, DeviceKind, Diagnostic, Netlist, Waveform};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("netlist failed validation: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ExportError(pub Vec<Diagnostic>);

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn waveform(w: &Waveform) -> String {
    match w {
        Waveform::Dc(v) => format!("DC {}", num(*v)),
        Waveform::Step { at, before, after } => {
            format!("STEP({} {} {})", num(*at), num(*before), num(*after))
        }
        Waveform::Pwl(points) => {
            let body: Vec<String> = points
                .iter()
                .map(|(t, v)| format!("{} {}", num(*t), num(*v)))
                .collect();
            format!("PWL({})", body.join(" "))
        }
        Waveform::Sine {
            offset,
            amplitude,
            freq_hz,
            phase_rad,
        } => format!(
            "SIN({} {} {} 0.0 0.0 {})",
            num(*offset),
            num(*amplitude),
            num(*freq_hz),
            num(phase_rad.to_degrees())
        ),
    }
}

fn card_name(d: &Device) -> String {
    let prefix = d.kind.card_prefix();
    if d.label.starts_with(prefix) || d.label.starts_with(prefix.to_ascii_lowercase()) {
        d.label.clone()
    } else {
        format!("{prefix}{}", d.label)
    }
}

fn card(d: &Device) -> String {
    let head = format!("{} {} {}", card_name(d), d.pos, d.neg);
    match &d.kind {
        DeviceKind::Resistor { ohms } => format!("{head} {}", num(*ohms)),
        DeviceKind::Capacitor {
            farads,
            initial_voltage,
        } => match initial_voltage {
            Some(v0) => format!("{head} {} IC={}", num(*farads), num(*v0)),
            None => format!("{head} {}", num(*farads)),
        },
        DeviceKind::Inductor {
            henries,
            initial_current,
        } => match initial_current {
            Some(i0) => format!("{head} {} IC={}", num(*henries), num(*i0)),
            None => format!("{head} {}", num(*henries)),
        },
        DeviceKind::VoltageSource(w) | DeviceKind::CurrentSource(w) => {
            format!("{head} {}", waveform(w))
        }
        DeviceKind::DependentVoltage(e) => format!("{head} V={{{e}}}"),
        DeviceKind::DependentCurrent(e) => format!("{head} I={{{e}}}"),
        DeviceKind::Switch { closed_intervals } => {
            let body: Vec<String> = closed_intervals
                .iter()
                .map(|(a, b)| format!("{} {}", num(*a), num(*b)))
                .collect();
            format!("{head} SWITCH({})", body.join(" "))
        }
    }
}

/// Serializes a validated netlist as SPICE-dialect text, one card per
/// device in insertion order.
pub fn export_spice_netlist(netlist: &Netlist) -> Result<String, ExportError> {
    let errors: Vec<Diagnostic> = validate_netlist(netlist)
        .into_iter()
        .filter(Diagnostic::is_error)
        .collect();
    if !errors.is_empty() {
        return Err(ExportError(errors));
    }
    let mut out = String::from("* gridic netlist\n");
    for (name, node) in netlist.named_ports() {
        let _ = writeln!(out, "* port {name} = {node}");
    }
    for d in netlist.devices() {
        out.push_str(&card(d));
        out.push('\n');
    }
    if !netlist.nodesets().is_empty() {
        let body: Vec<String> = netlist
            .nodesets()
            .iter()
            .map(|(n, v)| format!("V({n})={}", num(*v)))
            .collect();
        let _ = writeln!(out, ".NODESET {}", body.join(" "));
    }
    out.push_str(".END\n");
    Ok(out)
}
