//! Expression trees for behavioral (B-source) devices.
//!
//! An [`Expr`] is a pure arithmetic tree over node voltages, device branch
//! currents and simulation time. The same tree is used for DC/transient
//! stamping (after compilation to a [`Tape`](super::tape::Tape)), probing and
//! SPICE-dialect export.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use super::NodeId;

/// Denominators with magnitude below this value are regularized.
pub const DIVISION_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sqrt,
    Exp,
    Sin,
    Cos,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Exp => "exp",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

impl BinaryOp {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "pow",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        }
    }
}

/// Regularizes a denominator per the division policy. Returns the value to
/// divide by and whether the guard fired.
#[inline]
pub fn guard_denominator(den: f64) -> (f64, bool) {
    if den.abs() < DIVISION_GUARD {
        let sign = if den < 0.0 { -1.0 } else { 1.0 };
        (sign * DIVISION_GUARD, true)
    } else {
        (den, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Voltage(NodeId),
    Current(String),
    Time,
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Clamp { arg: Box<Expr>, lo: f64, hi: f64 },
}

/// Values an expression is evaluated against.
pub trait Bindings {
    fn voltage(&self, node: NodeId) -> Option<f64>;
    fn current(&self, label: &str) -> Option<f64>;
    fn time(&self) -> f64;
}

/// Map-backed bindings, mostly for tests and the C interface.
#[derive(Debug, Clone, Default)]
pub struct MapBindings {
    pub voltages: HashMap<NodeId, f64>,
    pub currents: HashMap<String, f64>,
    pub time: f64,
}

impl MapBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_voltage(mut self, node: impl Into<NodeId>, v: f64) -> Self {
        self.voltages.insert(node.into(), v);
        self
    }

    pub fn with_current(mut self, label: &str, i: f64) -> Self {
        self.currents.insert(label.to_string(), i);
        self
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }
}

impl Bindings for MapBindings {
    fn voltage(&self, node: NodeId) -> Option<f64> {
        if node.is_ground() {
            return Some(0.0);
        }
        self.voltages.get(&node).copied()
    }

    fn current(&self, label: &str) -> Option<f64> {
        self.currents.get(label).copied()
    }

    fn time(&self) -> f64 {
        self.time
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound voltage reference V({0})")]
    UnboundVoltage(NodeId),
    #[error("unbound current reference I({0})")]
    UnboundCurrent(String),
    #[error("non-finite value {value} produced by `{subtree}`")]
    NonFinite { value: f64, subtree: String },
}

/// Counters accumulated while evaluating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub guarded_divisions: u32,
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn v(node: impl Into<NodeId>) -> Expr {
        Expr::Voltage(node.into())
    }

    pub fn i(label: &str) -> Expr {
        Expr::Current(label.to_string())
    }

    pub fn time() -> Expr {
        Expr::Time
    }

    fn unary(self, op: UnaryOp) -> Expr {
        Expr::Unary(op, Box::new(self))
    }

    pub fn abs(self) -> Expr {
        self.unary(UnaryOp::Abs)
    }

    pub fn sqrt(self) -> Expr {
        self.unary(UnaryOp::Sqrt)
    }

    pub fn exp(self) -> Expr {
        self.unary(UnaryOp::Exp)
    }

    pub fn sin(self) -> Expr {
        self.unary(UnaryOp::Sin)
    }

    pub fn cos(self) -> Expr {
        self.unary(UnaryOp::Cos)
    }

    pub fn pow(self, rhs: Expr) -> Expr {
        Expr::Binary(BinaryOp::Pow, Box::new(self), Box::new(rhs))
    }

    pub fn min(self, rhs: Expr) -> Expr {
        Expr::Binary(BinaryOp::Min, Box::new(self), Box::new(rhs))
    }

    pub fn max(self, rhs: Expr) -> Expr {
        Expr::Binary(BinaryOp::Max, Box::new(self), Box::new(rhs))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Expr {
        Expr::Clamp {
            arg: Box::new(self),
            lo,
            hi,
        }
    }

    /// Weighted sum `Σ kᵢ·eᵢ`, skipping zero weights.
    pub fn weighted_sum<I>(terms: I) -> Expr
    where
        I: IntoIterator<Item = (f64, Expr)>,
    {
        let mut acc: Option<Expr> = None;
        for (k, e) in terms {
            if k == 0.0 {
                continue;
            }
            let term = if k == 1.0 { e } else { Expr::Const(k) * e };
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        acc.unwrap_or(Expr::Const(0.0))
    }

    pub fn evaluate(&self, bindings: &dyn Bindings) -> Result<f64, EvalError> {
        let mut stats = EvalStats::default();
        self.evaluate_counted(bindings, &mut stats)
    }

    /// Evaluates and records division-guard activations in `stats`.
    pub fn evaluate_counted(
        &self,
        bindings: &dyn Bindings,
        stats: &mut EvalStats,
    ) -> Result<f64, EvalError> {
        let value = match self {
            Expr::Const(c) => *c,
            Expr::Voltage(n) => bindings
                .voltage(*n)
                .ok_or(EvalError::UnboundVoltage(*n))?,
            Expr::Current(l) => bindings
                .current(l)
                .ok_or_else(|| EvalError::UnboundCurrent(l.clone()))?,
            Expr::Time => bindings.time(),
            Expr::Unary(op, a) => op.apply(a.evaluate_counted(bindings, stats)?),
            Expr::Binary(op, a, b) => {
                let x = a.evaluate_counted(bindings, stats)?;
                let y = b.evaluate_counted(bindings, stats)?;
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => {
                        let (den, hit) = guard_denominator(y);
                        if hit {
                            stats.guarded_divisions += 1;
                        }
                        x / den
                    }
                    BinaryOp::Pow => x.powf(y),
                    BinaryOp::Min => x.min(y),
                    BinaryOp::Max => x.max(y),
                }
            }
            Expr::Clamp { arg, lo, hi } => arg.evaluate_counted(bindings, stats)?.clamp(*lo, *hi),
        };
        if !value.is_finite() {
            return Err(EvalError::NonFinite {
                value,
                subtree: self.to_string(),
            });
        }
        Ok(value)
    }

    /// Calls `f` on every node this expression reads.
    pub fn for_each_voltage(&self, f: &mut impl FnMut(NodeId)) {
        self.visit(&mut |e| {
            if let Expr::Voltage(n) = e {
                f(*n)
            }
        });
    }

    pub fn for_each_current(&self, f: &mut impl FnMut(&str)) {
        self.visit(&mut |e| {
            if let Expr::Current(l) = e {
                f(l)
            }
        });
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Clamp { arg, .. } => arg.visit(f),
            _ => {}
        }
    }

    /// Replaces every `I(label)` for which `lookup` returns a substitute.
    pub fn substitute_currents(&self, lookup: &impl Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Current(l) => lookup(l).unwrap_or_else(|| self.clone()),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.substitute_currents(lookup))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.substitute_currents(lookup)),
                Box::new(b.substitute_currents(lookup)),
            ),
            Expr::Clamp { arg, lo, hi } => Expr::Clamp {
                arg: Box::new(arg.substitute_currents(lookup)),
                lo: *lo,
                hi: *hi,
            },
            _ => self.clone(),
        }
    }

    /// Rewrites node references through `map`.
    pub fn remap_nodes(&self, map: &impl Fn(NodeId) -> NodeId) -> Expr {
        match self {
            Expr::Voltage(n) => Expr::Voltage(map(*n)),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.remap_nodes(map))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.remap_nodes(map)),
                Box::new(b.remap_nodes(map)),
            ),
            Expr::Clamp { arg, lo, hi } => Expr::Clamp {
                arg: Box::new(arg.remap_nodes(map)),
                lo: *lo,
                hi: *hi,
            },
            _ => self.clone(),
        }
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::Const(c)
    }
}

macro_rules! binary_operator {
    ($trait:ident, $method:ident, $op:expr) => {
        impl $trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::Binary($op, Box::new(self), Box::new(rhs))
            }
        }

        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::Binary($op, Box::new(self), Box::new(Expr::Const(rhs)))
            }
        }

        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::Binary($op, Box::new(Expr::Const(self)), Box::new(rhs))
            }
        }
    };
}

binary_operator!(Add, add, BinaryOp::Add);
binary_operator!(Sub, sub, BinaryOp::Sub);
binary_operator!(Mul, mul, BinaryOp::Mul);
binary_operator!(Div, div, BinaryOp::Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Unary(UnaryOp::Neg, Box::new(self))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        super::parse::write_expr(f, self)
    }
}
