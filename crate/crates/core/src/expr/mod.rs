//! Symbolic expressions for the profile function `φ(x0, r, s, z)`.
//!
//! Expressions are immutable DAGs of reference-counted nodes. Every node
//! carries a process-unique id which the differentiator and the evaluation
//! tape use for memoization; structural equality ignores ids.

mod diff;
mod eval;
mod parse;
mod rational;

pub use diff::SymbolicContext;
pub use eval::{Bindings, Tape};
pub use parse::parse;
pub use rational::Rational;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },
}

/// The four reduced coordinates a profile function may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Coord {
    X0,
    R,
    S,
    Z,
}

impl Coord {
    pub const ALL: [Coord; 4] = [Coord::X0, Coord::R, Coord::S, Coord::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Coord::X0 => "x0",
            Coord::R => "r",
            Coord::S => "s",
            Coord::Z => "z",
        }
    }

    pub fn from_name(name: &str) -> Option<Coord> {
        match name {
            "x0" => Some(Coord::X0),
            "r" => Some(Coord::R),
            "s" => Some(Coord::S),
            "z" => Some(Coord::Z),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Coord(Coord),
    Param(Arc<str>),
}

impl Symbol {
    pub fn from_name(name: &str) -> Symbol {
        match Coord::from_name(name) {
            Some(c) => Symbol::Coord(c),
            None => Symbol::Param(Arc::from(name)),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Symbol::Coord(c) => c.name(),
            Symbol::Param(p) => p,
        }
    }
}

impl From<Coord> for Symbol {
    fn from(c: Coord) -> Self {
        Symbol::Coord(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "sqrt" => Some(Func::Sqrt),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            _ => None,
        }
    }
}

/// Numeric literal: exact while possible, floating once a float enters.
#[derive(Debug, Clone, Copy)]
pub enum Number {
    Exact(Rational),
    Float(f64),
}

impl PartialEq for Number {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Number::Exact(a), Number::Exact(b)) => a == b,
            (Number::Float(a), Number::Float(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Number {
    pub fn int(n: i64) -> Number {
        Number::Exact(Rational::integer(n))
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Number::Exact(r) => r.to_f64(),
            Number::Float(f) => f,
        }
    }

    pub fn is_zero(self) -> bool {
        match self {
            Number::Exact(r) => r.is_zero(),
            Number::Float(f) => f == 0.0,
        }
    }

    pub fn is_one(self) -> bool {
        match self {
            Number::Exact(r) => r.is_one(),
            Number::Float(f) => f == 1.0,
        }
    }

    pub fn is_negative(self) -> bool {
        match self {
            Number::Exact(r) => r.numer() < 0,
            Number::Float(f) => f.is_sign_negative(),
        }
    }

    fn combine(
        self,
        o: Number,
        exact: impl Fn(Rational, Rational) -> Option<Rational>,
        float: impl Fn(f64, f64) -> f64,
    ) -> Number {
        if let (Number::Exact(a), Number::Exact(b)) = (self, o) {
            if let Some(r) = exact(a, b) {
                return Number::Exact(r);
            }
        }
        Number::Float(float(self.to_f64(), o.to_f64()))
    }

    pub fn add(self, o: Number) -> Number {
        self.combine(o, Rational::checked_add, |a, b| a + b)
    }

    pub fn mul(self, o: Number) -> Number {
        self.combine(o, Rational::checked_mul, |a, b| a * b)
    }

    pub fn neg(self) -> Number {
        match self {
            Number::Exact(r) => r.checked_neg().map(Number::Exact).unwrap_or(Number::Float(-r.to_f64())),
            Number::Float(f) => Number::Float(-f),
        }
    }

    /// `None` for division by an exact or floating zero.
    pub fn div(self, o: Number) -> Option<Number> {
        if o.is_zero() {
            return None;
        }
        Some(self.combine(o, Rational::checked_div, |a, b| a / b))
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
pub enum Node {
    Const(Number),
    Var(Symbol),
    Neg(Expr),
    /// n-ary sum; subtraction is `Add[a, Neg(b)]`.
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Div(Expr, Expr),
    Pow(Expr, Rational),
    Call(Func, Expr),
}

#[derive(Debug)]
struct Inner {
    id: u64,
    node: Node,
}

/// Immutable, cheaply clonable expression handle.
#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl Expr {
    /// Wraps a node without any simplification.
    pub fn from_node(node: Node) -> Expr {
        Expr(Arc::new(Inner { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), node }))
    }

    pub fn constant(n: Number) -> Expr {
        Expr::from_node(Node::Const(n))
    }

    pub fn int(n: i64) -> Expr {
        Expr::constant(Number::int(n))
    }

    pub fn var(sym: impl Into<Symbol>) -> Expr {
        Expr::from_node(Node::Var(sym.into()))
    }

    pub fn param(name: &str) -> Expr {
        Expr::var(Symbol::from_name(name))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn as_const(&self) -> Option<Number> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Var(_) => vec![],
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => vec![a],
            Node::Add(v) | Node::Mul(v) => v.iter().collect(),
            Node::Div(a, b) => vec![a, b],
        }
    }

    /// Every symbol occurring in the expression.
    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.id()) {
                continue;
            }
            if let Node::Var(s) = e.node() {
                out.insert(s.clone());
            }
            stack.extend(e.children());
        }
        out
    }

    /// Replaces every occurrence of the parameter `name` by `with`.
    pub fn substitute(&self, name: &str, with: &Expr) -> Expr {
        let mut memo = std::collections::HashMap::new();
        self.substitute_inner(name, with, &mut memo)
    }

    fn substitute_inner(
        &self,
        name: &str,
        with: &Expr,
        memo: &mut std::collections::HashMap<u64, Expr>,
    ) -> Expr {
        if let Some(e) = memo.get(&self.id()) {
            return e.clone();
        }
        let mut sub = |e: &Expr| e.substitute_inner(name, with, memo);
        let out = match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(Symbol::Param(p)) if &**p == name => with.clone(),
            Node::Var(_) => self.clone(),
            Node::Neg(a) => Expr::from_node(Node::Neg(sub(a))),
            Node::Add(v) => Expr::from_node(Node::Add(v.iter().map(&mut sub).collect())),
            Node::Mul(v) => Expr::from_node(Node::Mul(v.iter().map(&mut sub).collect())),
            Node::Div(a, b) => {
                let a = sub(a);
                Expr::from_node(Node::Div(a, sub(b)))
            }
            Node::Pow(a, e) => Expr::from_node(Node::Pow(sub(a), *e)),
            Node::Call(f, a) => Expr::from_node(Node::Call(*f, sub(a))),
        };
        memo.insert(self.id(), out.clone());
        out
    }

    /// Number of distinct nodes in the DAG.
    pub fn dag_size(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if seen.insert(e.id()) {
                stack.extend(e.children());
            }
        }
        seen.len()
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        if Arc::ptr_eq(&self.0, &other.0) {
            return true;
        }
        match (self.node(), other.node()) {
            (Node::Const(a), Node::Const(b)) => a == b,
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Neg(a), Node::Neg(b)) => a == b,
            (Node::Add(a), Node::Add(b)) | (Node::Mul(a), Node::Mul(b)) => a == b,
            (Node::Div(a1, b1), Node::Div(a2, b2)) => a1 == a2 && b1 == b2,
            (Node::Pow(a1, e1), Node::Pow(a2, e2)) => e1 == e2 && a1 == a2,
            (Node::Call(f1, a1), Node::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

// Printing precedence levels: sum < product < power/atom.
const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 4;

fn number_repr(n: Number) -> String {
    match n {
        Number::Exact(r) => match r.to_decimal_string() {
            Some(s) => s,
            None => format!("({}/{})", r.numer(), r.denom()),
        },
        // Floats always print in exponent form so they parse back as floats.
        Number::Float(f) => format!("{f:e}"),
    }
}

impl Expr {
    fn prec(&self) -> u8 {
        match self.node() {
            Node::Add(_) => PREC_SUM,
            Node::Mul(_) | Node::Div(..) => PREC_PRODUCT,
            Node::Neg(_) => PREC_UNARY,
            Node::Const(n) if n.is_negative() => PREC_UNARY,
            _ => PREC_ATOM,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            write!(f, "(")?;
            self.write_bare(f)?;
            write!(f, ")")
        } else {
            self.write_bare(f)
        }
    }

    fn write_bare(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(n) => write!(f, "{}", number_repr(*n)),
            Node::Var(s) => write!(f, "{}", s.name()),
            Node::Neg(a) => {
                write!(f, "-")?;
                // `-x^2` parses as Neg(Pow); a bare `-3` would parse as a literal.
                if matches!(a.node(), Node::Const(_)) {
                    a.write_at(f, PREC_ATOM + 1)
                } else {
                    a.write_at(f, PREC_UNARY)
                }
            }
            Node::Add(terms) => {
                for (i, t) in terms.iter().enumerate() {
                    match (i, t.node()) {
                        (0, _) => t.write_at(f, PREC_SUM + 1)?,
                        (_, Node::Neg(inner)) => {
                            write!(f, " - ")?;
                            inner.write_at(f, PREC_SUM + 1)?;
                        }
                        _ => {
                            write!(f, " + ")?;
                            t.write_at(f, PREC_SUM + 1)?;
                        }
                    }
                }
                Ok(())
            }
            Node::Mul(factors) => {
                for (i, t) in factors.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    let need = match t.node() {
                        Node::Div(..) if i > 0 => PREC_ATOM,
                        Node::Mul(_) => PREC_ATOM,
                        _ => PREC_PRODUCT,
                    };
                    t.write_at(f, need)?;
                }
                Ok(())
            }
            Node::Div(a, b) => {
                let left = match a.node() {
                    Node::Mul(_) | Node::Div(..) => PREC_PRODUCT,
                    _ => PREC_UNARY,
                };
                a.write_at(f, left)?;
                write!(f, "/")?;
                b.write_at(f, PREC_UNARY)
            }
            Node::Pow(a, e) => {
                a.write_at(f, PREC_ATOM)?;
                if e.is_integer() && e.numer() >= 0 {
                    write!(f, "^{}", e.numer())
                } else if e.is_integer() {
                    write!(f, "^({})", e.numer())
                } else {
                    write!(f, "^({}/{})", e.numer(), e.denom())
                }
            }
            Node::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_bare(f)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_bare(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prints_minimal_parentheses() {
        let e = parse("sqrt(1 + z^2)").unwrap();
        assert_eq!(e.to_string(), "sqrt(1 + z^2)");
        let e = parse("a*(b + c)/(d*e) - -x^2").unwrap();
        assert_eq!(e.to_string(), "a*(b + c)/(d*e) - -x^2");
    }

    #[test]
    fn substitution_replaces_parameters() {
        let e = parse("sqrt(g^2*z^2 + 1)/g").unwrap();
        let g = parse("1 + r^2").unwrap();
        let out = e.substitute("g", &g);
        assert_eq!(out.to_string(), "sqrt((1 + r^2)^2*z^2 + 1)/(1 + r^2)");
        assert!(!out.free_symbols().contains(&Symbol::from_name("g")));
    }
}
