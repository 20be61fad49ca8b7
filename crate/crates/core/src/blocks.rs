//! Control blocks built from circuit primitives.
//!
//! Every constructor appends its devices to a shared [`Netlist`], which also
//! serves as the node allocator, so fragments compose without collisions.
//! Device labels are prefixed with the block name.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{Device, DeviceId, DeviceKind, Expr, Netlist, NetlistError, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("block `{block}`: time constant {value} must be positive")]
    TimeConstant { block: String, value: f64 },
    #[error("block `{block}`: {message}")]
    Inputs { block: String, message: String },
    #[error("block `{block}`: lower limit {lo} must be below upper limit {hi}")]
    Limits { block: String, lo: f64, hi: f64 },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Gain(f64),
    /// Weighted sum; negative weights subtract.
    Adder(Vec<f64>),
    Product,
}

/// How a first-order lag with output limits treats its state at a limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimiterMode {
    /// Clamp the output only; the internal state keeps integrating.
    #[default]
    OutputClamp,
    /// Hold the state at the limit while the input pushes beyond it.
    NonWindup,
}

/// A subcircuit appended to a netlist.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub inputs: Vec<Expr>,
    pub output: NodeId,
    pub devices: Vec<DeviceId>,
    pub params: Vec<(&'static str, f64)>,
}

impl Block {
    pub fn out(&self) -> Expr {
        Expr::v(self.output)
    }
}

fn positive(block: &str, value: f64) -> Result<(), BlockError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(BlockError::TimeConstant {
            block: block.to_string(),
            value,
        })
    }
}

struct Builder<'a> {
    nl: &'a mut Netlist,
    name: String,
    devices: Vec<DeviceId>,
}

impl<'a> Builder<'a> {
    fn new(nl: &'a mut Netlist, name: &str) -> Self {
        Self {
            nl,
            name: name.to_string(),
            devices: Vec::new(),
        }
    }

    fn node(&mut self) -> NodeId {
        self.nl.new_node(None)
    }

    fn add(&mut self, suffix: &str, pos: NodeId, neg: NodeId, kind: DeviceKind) -> Result<(), BlockError> {
        let label = format!("{}.{suffix}", self.name);
        self.devices.push(self.nl.add_device(Device::new(label, pos, neg, kind))?);
        Ok(())
    }

    /// Dependent voltage source driving a fresh node (or `out`).
    fn source(&mut self, suffix: &str, expr: Expr, out: Option<NodeId>) -> Result<NodeId, BlockError> {
        let out = out.unwrap_or_else(|| self.node());
        self.add(suffix, out, NodeId::GROUND, DeviceKind::DependentVoltage(expr))?;
        Ok(out)
    }

    fn finish(self, inputs: Vec<Expr>, output: NodeId, params: Vec<(&'static str, f64)>) -> Block {
        Block {
            name: self.name,
            inputs,
            output,
            devices: self.devices,
            params,
        }
    }
}

/// Arbitrary algebraic function of circuit variables on a fresh node.
pub fn make_function(nl: &mut Netlist, name: &str, expr: &Expr) -> Result<Block, BlockError> {
    let mut b = Builder::new(nl, name);
    let out = b.source("out", expr.clone(), None)?;
    Ok(b.finish(vec![expr.clone()], out, Vec::new()))
}

/// Gain, weighted adder or product as a single dependent voltage source.
pub fn make_operator(nl: &mut Netlist, name: &str, op: &Operator, inputs: &[Expr]) -> Result<Block, BlockError> {
    let err = |m: &str| BlockError::Inputs {
        block: name.to_string(),
        message: m.to_string(),
    };
    let (expr, params) = match op {
        Operator::Gain(k) => {
            let [x] = inputs else {
                return Err(err("gain takes exactly one input"));
            };
            (x.clone() * *k, vec![("K", *k)])
        }
        Operator::Adder(ks) => {
            if inputs.is_empty() {
                return Err(err("adder needs at least one input"));
            }
            if ks.len() != inputs.len() {
                return Err(err("adder needs one coefficient per input"));
            }
            let expr = Expr::weighted_sum(ks.iter().copied().zip(inputs.iter().cloned()));
            (expr, ks.iter().map(|k| ("K", *k)).collect())
        }
        Operator::Product => {
            if inputs.len() < 2 {
                return Err(err("product needs at least two inputs"));
            }
            let mut it = inputs.iter().cloned();
            let first = it.next().unwrap();
            (it.fold(first, |acc, x| acc * x), Vec::new())
        }
    };
    let mut b = Builder::new(nl, name);
    let out = b.source("out", expr, None)?;
    Ok(b.finish(inputs.to_vec(), out, params))
}

fn low_pass_into(b: &mut Builder<'_>, tag: &str, input: &Expr, t: f64, k: f64) -> Result<NodeId, BlockError> {
    let u = b.source(&format!("{tag}u"), input.clone() * k, None)?;
    let out = b.node();
    b.add(&format!("{tag}r"), u, out, DeviceKind::Resistor { ohms: 1.0 })?;
    b.add(
        &format!("{tag}c"),
        out,
        NodeId::GROUND,
        DeviceKind::Capacitor {
            farads: t,
            initial_voltage: None,
        },
    )?;
    Ok(out)
}

/// First-order lag `K/(1+sT)`: a gain source feeding a unit resistor and a
/// capacitor of `T` farads. At the operating point the output equals
/// `K·input`.
pub fn make_low_pass(nl: &mut Netlist, name: &str, input: &Expr, t: f64, k: f64) -> Result<Block, BlockError> {
    positive(name, t)?;
    let mut b = Builder::new(nl, name);
    let out = low_pass_into(&mut b, "", input, t, k)?;
    Ok(b.finish(vec![input.clone()], out, vec![("T", t), ("K", k)]))
}

/// Washout `K·sT/(1+sT)`, built as `K·(input − lowpass(input))`.
pub fn make_high_pass(nl: &mut Netlist, name: &str, input: &Expr, t: f64, k: f64) -> Result<Block, BlockError> {
    positive(name, t)?;
    let mut b = Builder::new(nl, name);
    let lp = low_pass_into(&mut b, "lp", input, t, 1.0)?;
    let out = b.source("out", (input.clone() - Expr::v(lp)) * k, None)?;
    Ok(b.finish(vec![input.clone()], out, vec![("T", t), ("K", k)]))
}

/// `(1+sT1)/(1+sT2)` as the sum of a low-pass channel and a high-pass
/// channel scaled by `T1/T2`.
pub fn make_lead_lag(nl: &mut Netlist, name: &str, input: &Expr, t1: f64, t2: f64) -> Result<Block, BlockError> {
    positive(name, t2)?;
    if !(t1 >= 0.0 && t1.is_finite()) {
        return Err(BlockError::TimeConstant {
            block: name.to_string(),
            value: t1,
        });
    }
    let mut b = Builder::new(nl, name);
    let vl = low_pass_into(&mut b, "l", input, t2, 1.0)?;
    let vh = b.source("h", (input.clone() - Expr::v(vl)) * (t1 / t2), None)?;
    let out = b.source("out", Expr::v(vl) + Expr::v(vh), None)?;
    Ok(b.finish(vec![input.clone()], out, vec![("T1", t1), ("T2", t2)]))
}

/// `τ·dVo/dt = f`: a dependent current source carrying `f` into a capacitor
/// of `τ` farads, pinned to `initial` at the operating point. With `output`
/// the capacitor is placed on an already allocated node.
pub fn make_integrator(
    nl: &mut Netlist,
    name: &str,
    tau: f64,
    integrand: &Expr,
    initial: f64,
    output: Option<NodeId>,
) -> Result<Block, BlockError> {
    positive(name, tau)?;
    let mut b = Builder::new(nl, name);
    let out = output.unwrap_or_else(|| b.node());
    b.add(
        "c",
        out,
        NodeId::GROUND,
        DeviceKind::Capacitor {
            farads: tau,
            initial_voltage: Some(initial),
        },
    )?;
    b.add("f", NodeId::GROUND, out, DeviceKind::DependentCurrent(integrand.clone()))?;
    b.nl.set_nodeset(out, initial);
    Ok(b.finish(vec![integrand.clone()], out, vec![("tau", tau), ("x0", initial)]))
}

pub fn make_limiter(nl: &mut Netlist, name: &str, input: &Expr, lo: f64, hi: f64) -> Result<Block, BlockError> {
    if !(lo < hi) {
        return Err(BlockError::Limits {
            block: name.to_string(),
            lo,
            hi,
        });
    }
    let mut b = Builder::new(nl, name);
    let out = b.source("out", input.clone().clamp(lo, hi), None)?;
    Ok(b.finish(vec![input.clone()], out, vec![("lo", lo), ("hi", hi)]))
}

/// Quadratic saturation `SE(E)·E = B·max(E − A, 0)²`.
pub fn saturation_expr(input: &Expr, a: f64, b: f64) -> Expr {
    let over = (input.clone() - a).max(Expr::constant(0.0));
    over.clone() * over * b
}

pub fn make_saturation(nl: &mut Netlist, name: &str, input: &Expr, a: f64, b: f64) -> Result<Block, BlockError> {
    let mut bld = Builder::new(nl, name);
    let out = bld.source("out", saturation_expr(input, a, b), None)?;
    Ok(bld.finish(vec![input.clone()], out, vec![("A", a), ("B", b)]))
}

/// `K/(1+sT)` with output limits. `initial` is the operating-point output,
/// used as nodeset and, in non-windup mode, as the state's initial value.
#[allow(clippy::too_many_arguments)]
pub fn make_limited_lag(
    nl: &mut Netlist,
    name: &str,
    input: &Expr,
    t: f64,
    k: f64,
    lo: f64,
    hi: f64,
    mode: LimiterMode,
    initial: f64,
) -> Result<Block, BlockError> {
    positive(name, t)?;
    if !(lo < hi) {
        return Err(BlockError::Limits {
            block: name.to_string(),
            lo,
            hi,
        });
    }
    let mut b = Builder::new(nl, name);
    let state = match mode {
        LimiterMode::OutputClamp => low_pass_into(&mut b, "", input, t, k)?,
        LimiterMode::NonWindup => {
            let x = b.node();
            let xv = Expr::v(x);
            // Past a limit the integrand is overridden by a fast pull back to
            // it, so the state cannot wind up.
            let pull = 1e3;
            let f = (input.clone() * k - xv.clone())
                .min((Expr::constant(hi) - xv.clone()) * pull)
                .max((Expr::constant(lo) - xv) * pull);
            b.add(
                "c",
                x,
                NodeId::GROUND,
                DeviceKind::Capacitor {
                    farads: t,
                    initial_voltage: Some(initial),
                },
            )?;
            b.add("f", NodeId::GROUND, x, DeviceKind::DependentCurrent(f))?;
            x
        }
    };
    b.nl.set_nodeset(state, initial);
    let out = b.source("out", Expr::v(state).clamp(lo, hi), None)?;
    b.nl.set_nodeset(out, initial.clamp(lo, hi));
    Ok(b.finish(
        vec![input.clone()],
        out,
        vec![("T", t), ("K", k), ("lo", lo), ("hi", hi)],
    ))
}
