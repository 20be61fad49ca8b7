//! Synchronous machine, exciter and governor models: parameters, steady-state
//! initialization, and their compilation to circuit fragments.

mod build;
pub mod equations;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{BlockError, LimiterMode};
use crate::netlist::NetlistError;

pub use build::{
    build_exciter_subcircuit, build_governor_subcircuit, build_machine_subcircuit, norton_injection, ExciterBlock,
    GovernorBlock, MachineBlock,
};
pub use equations::{to_machine, to_network, Genrou, MachineAlgebra, Signal};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MachineError {
    #[error("{model}: {reason}")]
    InvalidParameter { model: &'static str, reason: String },
    #[error("infeasible operating point: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

/// Quadratic saturation `SE(x)·x = B·max(x − A, 0)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    pub a: f64,
    pub b: f64,
}

/// Round-rotor machine on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineParams {
    pub rs: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_prime: f64,
    pub xq_prime: f64,
    pub xd_dprime: f64,
    pub xq_dprime: f64,
    pub xl: f64,
    pub td0_prime: f64,
    pub tq0_prime: f64,
    pub td0_dprime: f64,
    pub tq0_dprime: f64,
    pub h: f64,
    pub d: f64,
    pub saturation: Option<Saturation>,
}

fn invalid(model: &'static str, reason: String) -> MachineError {
    MachineError::InvalidParameter { model, reason }
}

fn require_positive(model: &'static str, name: &str, v: f64) -> Result<(), MachineError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(model, format!("{name} must be positive (got {v})")))
    }
}

impl MachineParams {
    pub fn validate(&self) -> Result<(), MachineError> {
        const M: &str = "machine";
        let chain = |axis: &str, x: f64, x1: f64, x2: f64| {
            if x >= x1 && x1 >= x2 && x2 > self.xl && self.xl >= 0.0 {
                Ok(())
            } else {
                Err(invalid(
                    M,
                    format!("{axis}-axis reactances must satisfy X ≥ X' ≥ X'' > Xl ≥ 0 (got {x}, {x1}, {x2}, {})", self.xl),
                ))
            }
        };
        chain("d", self.xd, self.xd_prime, self.xd_dprime)?;
        chain("q", self.xq, self.xq_prime, self.xq_dprime)?;
        // One subtransient reactance for both axes keeps the network
        // interface a single scalar admittance.
        if (self.xq_dprime - self.xd_dprime).abs() > 1e-12 {
            return Err(invalid(M, format!("X''q ({}) must equal X''d ({})", self.xq_dprime, self.xd_dprime)));
        }
        for (name, v) in [
            ("T'd0", self.td0_prime),
            ("T'q0", self.tq0_prime),
            ("T''d0", self.td0_dprime),
            ("T''q0", self.tq0_dprime),
            ("H", self.h),
        ] {
            require_positive(M, name, v)?;
        }
        if !(self.rs >= 0.0) || !(self.d >= 0.0) {
            return Err(invalid(M, "R_s and D must be non-negative".into()));
        }
        Ok(())
    }
}

/// IEEE type 1 excitation system.
#[derive(Debug, Clone, PartialEq)]
pub struct ExciterParams {
    pub tr: f64,
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    pub vr_max: f64,
    pub vr_min: f64,
    pub saturation: Option<Saturation>,
    pub limiter: LimiterMode,
}

impl ExciterParams {
    pub fn validate(&self) -> Result<(), MachineError> {
        const M: &str = "exciter";
        for (name, v) in [("T_A", self.ta), ("T_E", self.te), ("T_F", self.tf), ("K_A", self.ka)] {
            require_positive(M, name, v)?;
        }
        if !(self.tr >= 0.0) {
            return Err(invalid(M, format!("T_R must be non-negative (got {})", self.tr)));
        }
        if !(self.vr_min < self.vr_max) {
            return Err(invalid(M, format!("V_Rmin {} must be below V_Rmax {}", self.vr_min, self.vr_max)));
        }
        Ok(())
    }
}

/// Which signal the governor's `F` scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GovernorF {
    /// Lead of the last stage: `(1 + s·F·T5)/(1 + s·T5)`.
    #[default]
    ReheatLead,
    /// Gain on the filtered deviation: `P_m = P_ref + F·(lag(T5) − P_ref)`.
    FilteredGain,
}

/// BPA GG turbine-governor: `K·(1 + sT2)/(1 + sT1)` on the speed error,
/// limited to `[P_min, P_max]`, then `1/(1 + sT3)`, `1/(1 + sT4)` and the
/// `F`/`T5` stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GovernorParams {
    pub k: f64,
    pub f: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub t5: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub f_mode: GovernorF,
}

impl GovernorParams {
    pub fn validate(&self) -> Result<(), MachineError> {
        const M: &str = "governor";
        for (name, v) in [("T1", self.t1), ("T3", self.t3), ("T4", self.t4), ("T5", self.t5), ("P_max", self.p_max)] {
            require_positive(M, name, v)?;
        }
        if !(self.t2 >= 0.0) || !(self.f >= 0.0) {
            return Err(invalid(M, "T2 and F must be non-negative".into()));
        }
        if !(self.p_min < self.p_max) {
            return Err(invalid(M, format!("P_min {} must be below P_max {}", self.p_min, self.p_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineState {
    pub delta: f64,
    pub omega: f64,
    pub eq_p: f64,
    pub ed_p: f64,
    pub psi_1d: f64,
    pub psi_2q: f64,
}

impl MachineState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.delta, self.omega, self.eq_p, self.ed_p, self.psi_1d, self.psi_2q]
    }

    pub fn from_array(x: [f64; 6]) -> Self {
        Self {
            delta: x[0],
            omega: x[1],
            eq_p: x[2],
            ed_p: x[3],
            psi_1d: x[4],
            psi_2q: x[5],
        }
    }
}

/// Equilibrium of one machine at a given terminal condition.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineInit {
    pub state: MachineState,
    pub efd: f64,
    pub pm: f64,
    pub terminal_voltage: Complex64,
    /// Injected current, network frame.
    pub current: Complex64,
    pub id: f64,
    pub iq: f64,
    pub ed2: f64,
    pub eq2: f64,
}

/// Back-solves the machine states that make every derivative zero while the
/// machine injects `s` at terminal voltage `v`.
pub fn initialize_machine(p: &MachineParams, v: Complex64, s: Complex64) -> Result<MachineInit, MachineError> {
    p.validate()?;
    if v.norm() == 0.0 {
        return Err(MachineError::Infeasible("zero terminal voltage".into()));
    }
    let i = (s / v).conj();
    // The q-axis lines up with V + (R_s + jX_q)·I.
    let eqq = v + Complex64::new(p.rs, p.xq) * i;
    // Past 90° of load angle the q-axis EMF opposes the terminal voltage and
    // the field would have to reverse.
    if (eqq * v.conj()).re <= 0.0 {
        return Err(MachineError::Infeasible(format!(
            "load angle beyond 90° (internal EMF {:.4}∠{:.1}°)",
            eqq.norm(),
            eqq.arg().to_degrees()
        )));
    }
    let delta = eqq.im.atan2(eqq.re);
    let (sn, cs) = delta.sin_cos();
    let (id, iq) = to_machine(i.re, i.im, sn, cs);
    let (_, vq) = to_machine(v.re, v.im, sn, cs);
    let ed_p = (p.xq - p.xq_prime) * iq;
    let psi_2q = -ed_p - (p.xq_prime - p.xl) * iq;
    let eq_p = vq + p.rs * iq + p.xd_prime * id;
    let psi_1d = eq_p - (p.xd_prime - p.xl) * id;
    let model = Genrou::new(p);
    let (ed2, eq2) = model.subtransient_emf(eq_p, ed_p, psi_1d, psi_2q);
    let sat = match &p.saturation {
        Some(s) if s.b != 0.0 => {
            let mag = (ed2 * ed2 + eq2 * eq2).sqrt();
            equations::saturation_term(Some(s), mag) / mag * eq2
        }
        _ => 0.0,
    };
    let efd = eq_p + (p.xd - p.xd_prime) * id + sat;
    if efd < 0.0 {
        return Err(MachineError::Infeasible(format!("required field voltage {efd:.4} is negative")));
    }
    let pm = model.torque(ed2, eq2, id, iq);
    Ok(MachineInit {
        state: MachineState {
            delta,
            omega: 1.0,
            eq_p,
            ed_p,
            psi_1d,
            psi_2q,
        },
        efd,
        pm,
        terminal_voltage: v,
        current: i,
        id,
        iq,
        ed2,
        eq2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExciterInit {
    pub efd: f64,
    pub vt: f64,
    pub vr: f64,
    pub v_ref: f64,
}

/// `V_R = (K_E + SE(E_fd))·E_fd`, `V_ref = V_t + V_R/K_A`.
pub fn initialize_exciter(p: &ExciterParams, efd: f64, vt: f64) -> Result<ExciterInit, MachineError> {
    p.validate()?;
    let vr = p.ke * efd + equations::saturation_term(p.saturation.as_ref(), efd);
    if vr > p.vr_max || vr < p.vr_min {
        return Err(MachineError::Infeasible(format!(
            "regulator output {vr:.4} outside [{}, {}]",
            p.vr_min, p.vr_max
        )));
    }
    Ok(ExciterInit {
        efd,
        vt,
        vr,
        v_ref: vt + vr / p.ka,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GovernorInit {
    pub p_ref: f64,
}

/// With zero speed error the governor passes its reference straight through.
pub fn initialize_governor(p: &GovernorParams, pm: f64) -> Result<GovernorInit, MachineError> {
    p.validate()?;
    if pm > p.p_max || pm < p.p_min {
        return Err(MachineError::Infeasible(format!(
            "mechanical power {pm:.4} outside [{}, {}]",
            p.p_min, p.p_max
        )));
    }
    Ok(GovernorInit { p_ref: pm })
}
