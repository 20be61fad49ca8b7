//! Flattened expressions with reverse-mode partial derivatives.
//!
//! The engine compiles every behavioral expression once per simulation into a
//! [`Tape`]: a post-order instruction list whose leaves read slots of a local
//! variable vector. Evaluation returns the value and the partial derivative
//! with respect to every slot.

use super::expr::{guard_denominator, BinaryOp, EvalError, EvalStats, Expr, UnaryOp};

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Var(usize),
    Time,
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    Clamp(usize, f64, f64),
}

/// A leaf kind a [`Tape`] reads through its slot table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Leaf<K> {
    Var(K),
    Zero,
}

#[derive(Debug, Clone)]
pub struct Tape<K> {
    instrs: Vec<Instr>,
    slots: Vec<K>,
    source: Expr,
}

/// Scratch buffers reused across evaluations.
#[derive(Debug, Default, Clone)]
pub struct TapeScratch {
    values: Vec<f64>,
    adjoints: Vec<f64>,
}

impl<K: Clone + PartialEq> Tape<K> {
    /// Compiles `expr`, mapping each voltage/current leaf through `resolve`.
    /// Leaves that resolve to [`Leaf::Zero`] (ground) become constants.
    pub fn compile<E>(
        expr: &Expr,
        resolve: &mut impl FnMut(&Expr) -> Result<Leaf<K>, E>,
    ) -> Result<Self, E> {
        let mut tape = Tape {
            instrs: Vec::new(),
            slots: Vec::new(),
            source: expr.clone(),
        };
        tape.emit(expr, resolve)?;
        Ok(tape)
    }

    fn emit<E>(
        &mut self,
        e: &Expr,
        resolve: &mut impl FnMut(&Expr) -> Result<Leaf<K>, E>,
    ) -> Result<usize, E> {
        let instr = match e {
            Expr::Const(c) => Instr::Const(*c),
            Expr::Time => Instr::Time,
            Expr::Voltage(_) | Expr::Current(_) => match resolve(e)? {
                Leaf::Zero => Instr::Const(0.0),
                Leaf::Var(k) => {
                    let slot = match self.slots.iter().position(|s| *s == k) {
                        Some(s) => s,
                        None => {
                            self.slots.push(k);
                            self.slots.len() - 1
                        }
                    };
                    Instr::Var(slot)
                }
            },
            Expr::Unary(op, a) => {
                let a = self.emit(a, resolve)?;
                Instr::Unary(*op, a)
            }
            Expr::Binary(op, a, b) => {
                let a = self.emit(a, resolve)?;
                let b = self.emit(b, resolve)?;
                Instr::Binary(*op, a, b)
            }
            Expr::Clamp { arg, lo, hi } => {
                let a = self.emit(arg, resolve)?;
                Instr::Clamp(a, *lo, *hi)
            }
        };
        self.instrs.push(instr);
        Ok(self.instrs.len() - 1)
    }
}

impl<K> Tape<K> {
    /// Variables read by this tape, in slot order.
    pub fn slots(&self) -> &[K] {
        &self.slots
    }

    pub fn source(&self) -> &Expr {
        &self.source
    }

    fn forward(
        &self,
        vars: &[f64],
        time: f64,
        values: &mut Vec<f64>,
        stats: &mut EvalStats,
    ) -> Result<f64, EvalError> {
        values.clear();
        for instr in &self.instrs {
            let v = match *instr {
                Instr::Const(c) => c,
                Instr::Var(s) => vars[s],
                Instr::Time => time,
                Instr::Unary(op, a) => op.apply(values[a]),
                Instr::Binary(op, a, b) => {
                    let (x, y) = (values[a], values[b]);
                    match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => {
                            let (den, hit) = guard_denominator(y);
                            stats.guarded_divisions += hit as u32;
                            x / den
                        }
                        BinaryOp::Pow => x.powf(y),
                        BinaryOp::Min => x.min(y),
                        BinaryOp::Max => x.max(y),
                    }
                }
                Instr::Clamp(a, lo, hi) => values[a].clamp(lo, hi),
            };
            values.push(v);
        }
        let out = *values.last().unwrap_or(&0.0);
        if !out.is_finite() {
            return Err(EvalError::NonFinite {
                value: out,
                subtree: self.source.to_string(),
            });
        }
        Ok(out)
    }

    /// Value only.
    pub fn eval(
        &self,
        vars: &[f64],
        time: f64,
        scratch: &mut TapeScratch,
        stats: &mut EvalStats,
    ) -> Result<f64, EvalError> {
        self.forward(vars, time, &mut scratch.values, stats)
    }

    /// Value and partial derivatives; `grad[s]` receives ∂value/∂vars[s].
    pub fn eval_grad(
        &self,
        vars: &[f64],
        time: f64,
        grad: &mut [f64],
        scratch: &mut TapeScratch,
        stats: &mut EvalStats,
    ) -> Result<f64, EvalError> {
        let out = self.forward(vars, time, &mut scratch.values, stats)?;
        let values = &scratch.values;
        let adj = &mut scratch.adjoints;
        adj.clear();
        adj.resize(self.instrs.len(), 0.0);
        grad.iter_mut().for_each(|g| *g = 0.0);
        if let Some(last) = adj.last_mut() {
            *last = 1.0;
        }
        for (i, instr) in self.instrs.iter().enumerate().rev() {
            let w = adj[i];
            if w == 0.0 {
                continue;
            }
            match *instr {
                Instr::Const(_) | Instr::Time => {}
                Instr::Var(s) => grad[s] += w,
                Instr::Unary(op, a) => {
                    let x = values[a];
                    let d = match op {
                        UnaryOp::Neg => -1.0,
                        UnaryOp::Abs => {
                            if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Sqrt => 0.5 / guard_denominator(values[i]).0,
                        UnaryOp::Exp => values[i],
                        UnaryOp::Sin => x.cos(),
                        UnaryOp::Cos => -x.sin(),
                    };
                    adj[a] += w * d;
                }
                Instr::Binary(op, a, b) => {
                    let (x, y) = (values[a], values[b]);
                    let (da, db) = match op {
                        BinaryOp::Add => (1.0, 1.0),
                        BinaryOp::Sub => (1.0, -1.0),
                        BinaryOp::Mul => (y, x),
                        BinaryOp::Div => {
                            let den = guard_denominator(y).0;
                            (1.0 / den, -x / (den * den))
                        }
                        BinaryOp::Pow => {
                            let dx = if y == 0.0 { 0.0 } else { y * x.powf(y - 1.0) };
                            let dy = if x > 0.0 { values[i] * x.ln() } else { 0.0 };
                            (dx, dy)
                        }
                        BinaryOp::Min => {
                            if x <= y {
                                (1.0, 0.0)
                            } else {
                                (0.0, 1.0)
                            }
                        }
                        BinaryOp::Max => {
                            if x >= y {
                                (1.0, 0.0)
                            } else {
                                (0.0, 1.0)
                            }
                        }
                    };
                    adj[a] += w * da;
                    adj[b] += w * db;
                }
                Instr::Clamp(a, lo, hi) => {
                    let x = values[a];
                    if x > lo && x < hi {
                        adj[a] += w;
                    }
                }
            }
        }
        Ok(out)
    }
}
