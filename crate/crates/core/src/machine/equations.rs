//! Model equations written once over [`Signal`], evaluated either on numbers
//! (the direct DAE integrator) or on expressions (the circuit builders).

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{MachineParams, Saturation};
use crate::netlist::Expr;

pub trait Signal:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn constant(c: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
}

impl Signal for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn max(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn min(self, other: Self) -> Self {
        f64::min(self, other)
    }
}

impl Signal for Expr {
    fn constant(c: f64) -> Self {
        Expr::constant(c)
    }
    fn sin(self) -> Self {
        Expr::sin(self)
    }
    fn cos(self) -> Self {
        Expr::cos(self)
    }
    fn sqrt(self) -> Self {
        Expr::sqrt(self)
    }
    fn max(self, other: Self) -> Self {
        Expr::max(self, other)
    }
    fn min(self, other: Self) -> Self {
        Expr::min(self, other)
    }
}

/// Machine (d, q) → network (re, im): `x_net = (x_d + j·x_q)·e^{j(δ − π/2)}`.
/// δ is the angle from the network real axis to the q-axis.
pub fn to_network<T: Signal>(d: T, q: T, sin: T, cos: T) -> (T, T) {
    (
        d.clone() * sin.clone() + q.clone() * cos.clone(),
        q * sin - d * cos,
    )
}

/// Network (re, im) → machine (d, q); inverse of [`to_network`].
pub fn to_machine<T: Signal>(re: T, im: T, sin: T, cos: T) -> (T, T) {
    (
        re.clone() * sin.clone() - im.clone() * cos.clone(),
        re * cos + im * sin,
    )
}

/// `SE(x)·x = B·max(x − A, 0)²`.
pub fn saturation_term<T: Signal>(sat: Option<&Saturation>, x: T) -> T {
    match sat {
        Some(s) if s.b != 0.0 => {
            let over = (x - s.a).max(T::constant(0.0));
            over.clone() * over * s.b
        }
        _ => T::constant(0.0),
    }
}

/// Constants of the round-rotor subtransient model. X''q is taken equal to
/// X''d so the machine presents one scalar subtransient reactance.
#[derive(Debug, Clone, PartialEq)]
pub struct Genrou {
    pub p: MachineParams,
    pub kd1: f64,
    pub kd2: f64,
    pub kq1: f64,
    pub kq2: f64,
    /// Norton admittance `1 / (R_s + jX'')`.
    pub g: f64,
    pub b: f64,
}

/// Machine states in integration order.
pub const STATE_NAMES: [&str; 6] = ["delta", "omega", "eq_p", "ed_p", "psi_1d", "psi_2q"];

impl Genrou {
    pub fn new(p: &MachineParams) -> Self {
        let x2 = p.xd_dprime;
        let kd1 = (x2 - p.xl) / (p.xd_prime - p.xl);
        let kq1 = (x2 - p.xl) / (p.xq_prime - p.xl);
        let den = p.rs * p.rs + x2 * x2;
        Self {
            p: p.clone(),
            kd1,
            kd2: 1.0 - kd1,
            kq1,
            kq2: 1.0 - kq1,
            g: p.rs / den,
            b: -x2 / den,
        }
    }

    /// `(E''_d, E''_q)` from the flux states.
    pub fn subtransient_emf<T: Signal>(&self, eq_p: T, ed_p: T, psi_1d: T, psi_2q: T) -> (T, T) {
        (
            ed_p * self.kq1 - psi_2q * self.kq2,
            eq_p * self.kd1 + psi_1d * self.kd2,
        )
    }

    /// Current injected at the terminal, `(E'' − V)/(R_s + jX'')`, in the
    /// network frame.
    pub fn norton_current<T: Signal>(&self, e_re: T, e_im: T, v_re: T, v_im: T) -> (T, T) {
        let dr = e_re - v_re;
        let di = e_im - v_im;
        (
            dr.clone() * self.g - di.clone() * self.b,
            dr * self.b + di * self.g,
        )
    }

    /// Air-gap torque `E''_d·I_d + E''_q·I_q` (equal to power at ω ≈ 1).
    pub fn torque<T: Signal>(&self, ed2: T, eq2: T, id: T, iq: T) -> T {
        ed2 * id + eq2 * iq
    }

    /// Right-hand sides as `(numerator, time constant)` pairs, so that
    /// `time_constant · dx/dt = numerator` — the form an integrator block
    /// realizes directly. Order follows [`STATE_NAMES`].
    #[allow(clippy::too_many_arguments)]
    pub fn rates<T: Signal>(
        &self,
        states: [T; 6],
        ed2: T,
        eq2: T,
        id: T,
        iq: T,
        te: T,
        efd: T,
        pm: T,
        omega_base: f64,
    ) -> [(T, f64); 6] {
        let p = &self.p;
        let [_, omega, eq_p, ed_p, psi_1d, psi_2q] = states;
        let dw = omega - 1.0;
        let xdl = p.xd_prime - p.xl;
        let xql = p.xq_prime - p.xl;
        let sat = match &p.saturation {
            Some(s) if s.b != 0.0 => {
                let mag = (ed2.clone() * ed2 + eq2.clone() * eq2.clone()).sqrt();
                saturation_term(Some(s), mag.clone()) / mag * eq2
            }
            _ => T::constant(0.0),
        };
        let eq_rate = -eq_p.clone()
            - (id.clone()
                - (psi_1d.clone() + id.clone() * xdl - eq_p.clone()) * ((p.xd_prime - p.xd_dprime) / (xdl * xdl)))
                * (p.xd - p.xd_prime)
            + efd
            - sat;
        let psi1d_rate = -psi_1d + eq_p - id * xdl;
        let ed_rate = -ed_p.clone()
            + (iq.clone()
                - (psi_2q.clone() + iq.clone() * xql + ed_p.clone()) * ((p.xq_prime - p.xd_dprime) / (xql * xql)))
                * (p.xq - p.xq_prime);
        let psi2q_rate = -psi_2q - ed_p - iq * xql;
        [
            (dw.clone(), 1.0 / omega_base),
            (pm - te - dw * p.d, 2.0 * p.h),
            (eq_rate, p.td0_prime),
            (ed_rate, p.tq0_prime),
            (psi1d_rate, p.td0_dprime),
            (psi2q_rate, p.tq0_dprime),
        ]
    }
}

/// Network-side algebra of one machine evaluated on numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineAlgebra {
    pub ed2: f64,
    pub eq2: f64,
    pub i_re: f64,
    pub i_im: f64,
    pub id: f64,
    pub iq: f64,
    pub te: f64,
}

impl Genrou {
    pub fn algebra(&self, states: &[f64; 6], v_re: f64, v_im: f64) -> MachineAlgebra {
        let (s, c) = states[0].sin_cos();
        let (ed2, eq2) = self.subtransient_emf(states[2], states[3], states[4], states[5]);
        let (er, ei) = to_network(ed2, eq2, s, c);
        let (i_re, i_im) = self.norton_current(er, ei, v_re, v_im);
        let (id, iq) = to_machine(i_re, i_im, s, c);
        MachineAlgebra {
            ed2,
            eq2,
            i_re,
            i_im,
            id,
            iq,
            te: self.torque(ed2, eq2, id, iq),
        }
    }

    /// `dx/dt` for every state.
    pub fn derivatives(&self, states: &[f64; 6], alg: &MachineAlgebra, efd: f64, pm: f64, omega_base: f64) -> [f64; 6] {
        let r = self.rates(*states, alg.ed2, alg.eq2, alg.id, alg.iq, alg.te, efd, pm, omega_base);
        r.map(|(num, tc)| num / tc)
    }
}
