//! Numeric evaluation: a direct tree walk and a compiled tape for hot loops.

use std::collections::{BTreeMap, HashMap};

use super::{Expr, ExprError, Func, Node, Rational, Symbol};

/// Values for coordinates and parameters.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: HashMap<Symbol, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, v: f64) -> &mut Self {
        self.values.insert(Symbol::from_name(name), v);
        self
    }

    pub fn with(mut self, name: &str, v: f64) -> Self {
        self.set(name, v);
        self
    }

    pub fn coords(x0: f64, r: f64, s: f64, z: f64) -> Self {
        Self::new().with("x0", x0).with("r", r).with("s", s).with("z", z)
    }

    pub fn extend_params(&mut self, params: &BTreeMap<String, f64>) -> &mut Self {
        for (k, v) in params {
            self.set(k, *v);
        }
        self
    }

    pub fn get(&self, s: &Symbol) -> Option<f64> {
        self.values.get(s).copied()
    }
}

fn domain(e: &Expr, reason: impl Into<String>) -> ExprError {
    ExprError::Domain { expr: e.to_string(), reason: reason.into() }
}

pub(crate) fn apply_pow(base: f64, p: Rational) -> Option<f64> {
    if p.is_integer() {
        if base == 0.0 && p.numer() < 0 {
            return None;
        }
        return Some(base.powi(p.numer() as i32));
    }
    let (num, den) = (p.numer(), p.denom());
    if base < 0.0 {
        if den % 2 == 0 {
            return None;
        }
        let mag = (-base).powf(p.to_f64());
        return Some(if num % 2 == 0 { mag } else { -mag });
    }
    if base == 0.0 && num < 0 {
        return None;
    }
    if den == 2 {
        return Some(base.sqrt().powi(num as i32));
    }
    Some(base.powf(p.to_f64()))
}

pub(crate) fn apply_func(f: Func, a: f64) -> Result<f64, &'static str> {
    match f {
        Func::Sqrt if a < 0.0 => Err("square root of a negative number"),
        Func::Sqrt => Ok(a.sqrt()),
        Func::Exp => Ok(a.exp()),
        Func::Log if a <= 0.0 => Err("logarithm of a non-positive number"),
        Func::Log => Ok(a.ln()),
        Func::Sin => Ok(a.sin()),
        Func::Cos => Ok(a.cos()),
    }
}

impl Expr {
    /// Evaluates with every free symbol bound. Shared sub-expressions are
    /// evaluated once.
    pub fn evaluate(&self, b: &Bindings) -> Result<f64, ExprError> {
        let mut memo = HashMap::new();
        self.eval_memo(b, &mut memo)
    }

    fn eval_memo(&self, b: &Bindings, memo: &mut HashMap<u64, f64>) -> Result<f64, ExprError> {
        if let Some(v) = memo.get(&self.id()) {
            return Ok(*v);
        }
        let v = match self.node() {
            Node::Const(n) => n.to_f64(),
            Node::Var(s) => b.get(s).ok_or_else(|| ExprError::Unbound(s.name().to_string()))?,
            Node::Neg(a) => -a.eval_memo(b, memo)?,
            Node::Add(v) => {
                let mut acc = 0.0;
                for t in v {
                    acc += t.eval_memo(b, memo)?;
                }
                acc
            }
            Node::Mul(v) => {
                let mut acc = 1.0;
                for t in v {
                    acc *= t.eval_memo(b, memo)?;
                }
                acc
            }
            Node::Div(x, y) => {
                let num = x.eval_memo(b, memo)?;
                let den = y.eval_memo(b, memo)?;
                if den == 0.0 {
                    return Err(domain(self, "division by zero"));
                }
                num / den
            }
            Node::Pow(x, p) => {
                let base = x.eval_memo(b, memo)?;
                apply_pow(base, *p).ok_or_else(|| domain(self, format!("power undefined at base {base}")))?
            }
            Node::Call(f, x) => {
                let a = x.eval_memo(b, memo)?;
                apply_func(*f, a).map_err(|r| domain(self, r))?
            }
        };
        memo.insert(self.id(), v);
        Ok(v)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const(f64),
    Coord(usize),
    Neg(usize),
    Add(Vec<usize>),
    Mul(Vec<usize>),
    Div(usize, usize),
    Pow(usize, Rational),
    Call(Func, usize),
}

/// A set of expressions flattened into one instruction list.
///
/// Parameters are resolved at compile time, so evaluation only needs the
/// four coordinates. Common sub-expressions (by node id) are evaluated once.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    nodes: Vec<Expr>,
    outputs: Vec<usize>,
}

impl Tape {
    pub fn compile(roots: &[Expr], params: &BTreeMap<String, f64>) -> Result<Tape, ExprError> {
        let mut slot: HashMap<u64, usize> = HashMap::new();
        let mut ops = Vec::new();
        let mut nodes = Vec::new();
        let mut outputs = Vec::with_capacity(roots.len());
        for root in roots {
            // iterative post-order
            let mut stack: Vec<(&Expr, bool)> = vec![(root, false)];
            while let Some((e, expanded)) = stack.pop() {
                if slot.contains_key(&e.id()) {
                    continue;
                }
                if !expanded {
                    stack.push((e, true));
                    for c in e.children() {
                        if !slot.contains_key(&c.id()) {
                            stack.push((c, false));
                        }
                    }
                    continue;
                }
                let s = |c: &Expr| slot[&c.id()];
                let op = match e.node() {
                    Node::Const(n) => Op::Const(n.to_f64()),
                    Node::Var(Symbol::Coord(c)) => Op::Coord(c.index()),
                    Node::Var(Symbol::Param(p)) => Op::Const(
                        *params.get(&**p).ok_or_else(|| ExprError::Unbound(p.to_string()))?,
                    ),
                    Node::Neg(a) => Op::Neg(s(a)),
                    Node::Add(v) => Op::Add(v.iter().map(s).collect()),
                    Node::Mul(v) => Op::Mul(v.iter().map(s).collect()),
                    Node::Div(a, b) => Op::Div(s(a), s(b)),
                    Node::Pow(a, p) => Op::Pow(s(a), *p),
                    Node::Call(f, a) => Op::Call(*f, s(a)),
                };
                slot.insert(e.id(), ops.len());
                ops.push(op);
                nodes.push(e.clone());
            }
            outputs.push(slot[&root.id()]);
        }
        Ok(Tape { ops, nodes, outputs })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Evaluates every root at `(x0, r, s, z)`.
    pub fn eval(&self, coords: [f64; 4]) -> Result<Vec<f64>, ExprError> {
        let mut v = vec![0.0; self.ops.len()];
        for (i, op) in self.ops.iter().enumerate() {
            v[i] = match op {
                Op::Const(c) => *c,
                Op::Coord(k) => coords[*k],
                Op::Neg(a) => -v[*a],
                Op::Add(t) => t.iter().map(|&k| v[k]).sum(),
                Op::Mul(t) => t.iter().fold(1.0, |acc, &k| acc * v[k]),
                Op::Div(a, b) => {
                    if v[*b] == 0.0 {
                        return Err(domain(&self.nodes[i], "division by zero"));
                    }
                    v[*a] / v[*b]
                }
                Op::Pow(a, p) => apply_pow(v[*a], *p).ok_or_else(|| {
                    domain(&self.nodes[i], format!("power undefined at base {}", v[*a]))
                })?,
                Op::Call(f, a) => apply_func(*f, v[*a]).map_err(|r| domain(&self.nodes[i], r))?,
            };
        }
        Ok(self.outputs.iter().map(|&k| v[k]).collect())
    }
}
