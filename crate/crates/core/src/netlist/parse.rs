//! Text form of behavioral expressions.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := atom (('^' | '**') unary)?
//! atom    := number | TIME | V '(' node ')' | I '(' label ')'
//!          | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Numbers accept SPICE engineering suffixes (`f p n u m k meg g t`,
//! case-insensitive); trailing letters after a suffix are ignored as in SPICE
//! (`10mA` is `0.01`). Node references are integer indices, or names when a
//! resolver is supplied.

use std::fmt;

use thiserror::Error;

use super::expr::{BinaryOp, Expr, UnaryOp};
use super::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::Arity { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

fn suffix_scale(letters: &str) -> f64 {
    let lower = letters.to_ascii_lowercase();
    if lower.starts_with("meg") {
        return 1e6;
    }
    match lower.chars().next() {
        Some('t') => 1e12,
        Some('g') => 1e9,
        Some('k') => 1e3,
        Some('m') => 1e-3,
        Some('u') => 1e-6,
        Some('n') => 1e-9,
        Some('p') => 1e-12,
        Some('f') => 1e-15,
        _ => 1.0,
    }
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn peek_byte(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn next_token(&mut self) -> Result<(Tok, usize), ParseError> {
        while matches!(self.peek_byte(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(b) = self.peek_byte() else {
            return Ok((Tok::End, start));
        };
        let tok = match b {
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                if self.peek_byte() == Some(b'*') {
                    self.pos += 1;
                    Tok::Caret
                } else {
                    Tok::Star
                }
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'0'..=b'9' | b'.' => self.number(start)?,
            b if b.is_ascii_alphabetic() || b == b'_' => {
                while matches!(self.peek_byte(), Some(c) if c.is_ascii_alphanumeric() || c == b'_' || c == b'.')
                {
                    self.pos += 1;
                }
                Tok::Ident(self.src[start..self.pos].to_string())
            }
            _ => {
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", self.src[start..].chars().next().unwrap()),
                })
            }
        };
        Ok((tok, start))
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let bytes = self.src.as_bytes();
        while matches!(self.peek_byte(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        // exponent only when followed by digits
        if matches!(self.peek_byte(), Some(b'e' | b'E')) {
            let mut p = self.pos + 1;
            if matches!(bytes.get(p), Some(b'+' | b'-')) {
                p += 1;
            }
            if matches!(bytes.get(p), Some(c) if c.is_ascii_digit()) {
                while matches!(bytes.get(p), Some(c) if c.is_ascii_digit()) {
                    p += 1;
                }
                self.pos = p;
            }
        }
        let text = &self.src[start..self.pos];
        let mut value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        let suffix_start = self.pos;
        while matches!(self.peek_byte(), Some(c) if c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        if self.pos > suffix_start {
            value *= suffix_scale(&self.src[suffix_start..self.pos]);
        }
        Ok(Tok::Num(value))
    }
}

type Resolver<'r> = &'r dyn Fn(&str) -> Option<NodeId>;

struct Parser<'a, 'r> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
    resolve: Resolver<'r>,
}

impl<'a, 'r> Parser<'a, 'r> {
    fn new(src: &'a str, resolve: Resolver<'r>) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let (tok, offset) = lexer.next_token()?;
        Ok(Self {
            lexer,
            tok,
            offset,
            resolve,
        })
    }

    fn bump(&mut self) -> Result<(), ParseError> {
        let (tok, offset) = self.lexer.next_token()?;
        self.tok = tok;
        self.offset = offset;
        Ok(())
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.tok == want {
            self.bump()
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.tok {
            Tok::Minus => {
                self.bump()?;
                Ok(match self.unary()? {
                    Expr::Const(c) => Expr::Const(-c),
                    e => Expr::Unary(UnaryOp::Neg, Box::new(e)),
                })
            }
            Tok::Plus => {
                self.bump()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.tok == Tok::Caret {
            self.bump()?;
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.offset;
                self.bump()?;
                self.named(name, at)
            }
            Tok::End => self.syntax("unexpected end of input"),
            other => self.syntax(format!("unexpected token {other:?}")),
        }
    }

    fn named(&mut self, name: String, at: usize) -> Result<Expr, ParseError> {
        let lower = name.to_ascii_lowercase();
        if lower == "time" {
            return Ok(Expr::Time);
        }
        if lower == "pi" {
            return Ok(Expr::Const(std::f64::consts::PI));
        }
        if self.tok != Tok::LParen {
            return self.syntax(format!("expected `(` after `{name}`"));
        }
        self.bump()?;
        match lower.as_str() {
            "v" => {
                let node = self.node_ref()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Voltage(node))
            }
            "i" => {
                let label = match self.tok.clone() {
                    Tok::Ident(l) => l,
                    _ => return self.syntax("expected device label"),
                };
                self.bump()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Current(label))
            }
            _ => {
                let mut args = vec![self.expr()?];
                while self.tok == Tok::Comma {
                    self.bump()?;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "`)` or `,`")?;
                build_call(&name, &lower, at, args)
            }
        }
    }

    fn node_ref(&mut self) -> Result<NodeId, ParseError> {
        let node = match self.tok.clone() {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 => NodeId(v as usize),
            Tok::Ident(name) => match (self.resolve)(&name) {
                Some(n) => n,
                None => return self.syntax(format!("unknown node `{name}`")),
            },
            _ => return self.syntax("expected node index or name"),
        };
        self.bump()?;
        Ok(node)
    }
}

fn build_call(name: &str, lower: &str, at: usize, mut args: Vec<Expr>) -> Result<Expr, ParseError> {
    let arity = |expected: usize, args: &Vec<Expr>| {
        if args.len() == expected {
            Ok(())
        } else {
            Err(ParseError::Arity {
                name: name.to_string(),
                offset: at,
                expected,
                found: args.len(),
            })
        }
    };
    let unary = match lower {
        "abs" => Some(UnaryOp::Abs),
        "sqrt" => Some(UnaryOp::Sqrt),
        "exp" => Some(UnaryOp::Exp),
        "sin" => Some(UnaryOp::Sin),
        "cos" => Some(UnaryOp::Cos),
        "neg" => Some(UnaryOp::Neg),
        _ => None,
    };
    if let Some(op) = unary {
        arity(1, &args)?;
        return Ok(Expr::Unary(op, Box::new(args.pop().unwrap())));
    }
    let binary = match lower {
        "min" => Some(BinaryOp::Min),
        "max" => Some(BinaryOp::Max),
        "pow" => Some(BinaryOp::Pow),
        _ => None,
    };
    if let Some(op) = binary {
        arity(2, &args)?;
        let b = args.pop().unwrap();
        let a = args.pop().unwrap();
        return Ok(Expr::Binary(op, Box::new(a), Box::new(b)));
    }
    if lower == "clamp" || lower == "limit" {
        arity(3, &args)?;
        let hi = args.pop().unwrap();
        let lo = args.pop().unwrap();
        let arg = args.pop().unwrap();
        let (Expr::Const(lo), Expr::Const(hi)) = (lo, hi) else {
            return Err(ParseError::Syntax {
                offset: at,
                message: "clamp bounds must be numeric literals".into(),
            });
        };
        return Ok(Expr::Clamp {
            arg: Box::new(arg),
            lo,
            hi,
        });
    }
    Err(ParseError::UnknownFunction {
        name: name.to_string(),
        offset: at,
    })
}

/// Parses an expression whose node references are integer indices.
pub fn parse_expression(text: &str) -> Result<Expr, ParseError> {
    parse_expression_with(text, &|_| None)
}

/// Parses an expression, resolving named node references through `resolve`.
pub fn parse_expression_with(
    text: &str,
    resolve: &dyn Fn(&str) -> Option<NodeId>,
) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text, resolve)?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Const(c) if c.is_sign_negative() => PREC_UNARY,
        Expr::Unary(UnaryOp::Neg, _) => PREC_UNARY,
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => PREC_ADD,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PREC_MUL,
        Expr::Binary(BinaryOp::Pow, ..) => PREC_POW,
        _ => PREC_ATOM,
    }
}

pub(crate) fn format_number(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{c}")
    } else {
        format!("{c:?}")
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "(")?;
        write_expr(f, e)?;
        write!(f, ")")
    } else {
        write_expr(f, e)
    }
}

/// Prints `e` in the grammar accepted by [`parse_expression`].
pub(crate) fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Const(c) => write!(f, "{}", format_number(*c)),
        Expr::Voltage(n) => write!(f, "V({})", n.0),
        Expr::Current(l) => write!(f, "I({l})"),
        Expr::Time => write!(f, "TIME"),
        Expr::Unary(UnaryOp::Neg, a) => {
            write!(f, "-")?;
            // `--x` would lex fine, but a negative literal must not fuse
            let needs = precedence(a) < PREC_UNARY || matches!(**a, Expr::Const(c) if c.is_sign_negative());
            if needs || matches!(**a, Expr::Const(_)) {
                write!(f, "(")?;
                write_expr(f, a)?;
                write!(f, ")")
            } else {
                write_expr(f, a)
            }
        }
        Expr::Unary(op, a) => {
            write!(f, "{}(", op.name())?;
            write_expr(f, a)?;
            write!(f, ")")
        }
        Expr::Binary(op @ (BinaryOp::Min | BinaryOp::Max), a, b) => {
            write!(f, "{}(", op.name())?;
            write_expr(f, a)?;
            write!(f, ", ")?;
            write_expr(f, b)?;
            write!(f, ")")
        }
        Expr::Binary(BinaryOp::Pow, a, b) => {
            write_child(f, a, PREC_ATOM)?;
            write!(f, "^")?;
            write_child(f, b, PREC_ATOM)
        }
        Expr::Binary(op, a, b) => {
            let (prec, sym) = match op {
                BinaryOp::Add => (PREC_ADD, "+"),
                BinaryOp::Sub => (PREC_ADD, "-"),
                BinaryOp::Mul => (PREC_MUL, "*"),
                BinaryOp::Div => (PREC_MUL, "/"),
                _ => unreachable!(),
            };
            write_child(f, a, prec)?;
            write!(f, "{sym}")?;
            write_child(f, b, prec + 1)
        }
        Expr::Clamp { arg, lo, hi } => {
            write!(f, "clamp(")?;
            write_expr(f, arg)?;
            write!(f, ", {}, {})", format_number(*lo), format_number(*hi))
        }
    }
}
