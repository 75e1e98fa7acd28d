//! Memoized symbolic differentiation over a hash-consed node pool.

use std::collections::HashMap;

use super::{Coord, Expr, Func, Node, Number, Rational, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum NumKey {
    Exact(Rational),
    Float(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Const(NumKey),
    Var(Symbol),
    Neg(u64),
    Add(Vec<u64>),
    Mul(Vec<u64>),
    Div(u64, u64),
    Pow(u64, Rational),
    Call(Func, u64),
}

fn key_of(node: &Node) -> Key {
    let ids = |v: &[Expr]| v.iter().map(Expr::id).collect::<Vec<_>>();
    match node {
        Node::Const(Number::Exact(r)) => Key::Const(NumKey::Exact(*r)),
        Node::Const(Number::Float(f)) => Key::Const(NumKey::Float(f.to_bits())),
        Node::Var(s) => Key::Var(s.clone()),
        Node::Neg(a) => Key::Neg(a.id()),
        Node::Add(v) => Key::Add(ids(v)),
        Node::Mul(v) => Key::Mul(ids(v)),
        Node::Div(a, b) => Key::Div(a.id(), b.id()),
        Node::Pow(a, e) => Key::Pow(a.id(), *e),
        Node::Call(f, a) => Key::Call(*f, a.id()),
    }
}

/// Node pool plus derivative memo.
///
/// Structurally identical nodes built through the same context share one id,
/// so derivatives reached along different paths are computed once. The
/// simplifier only folds constants, applies 0/1 identities and flattens
/// nested sums and products.
#[derive(Default)]
pub struct SymbolicContext {
    pool: HashMap<Key, Expr>,
    imported: HashMap<u64, Expr>,
    derivs: HashMap<(u64, Coord), Expr>,
}

impl SymbolicContext {
    pub fn new() -> Self {
        Self::default()
    }

    fn mk(&mut self, node: Node) -> Expr {
        let key = key_of(&node);
        if let Some(e) = self.pool.get(&key) {
            return e.clone();
        }
        let e = Expr::from_node(node);
        self.pool.insert(key, e.clone());
        self.imported.insert(e.id(), e.clone());
        e
    }

    pub fn num(&mut self, n: Number) -> Expr {
        self.mk(Node::Const(n))
    }

    pub fn int(&mut self, n: i64) -> Expr {
        self.num(Number::int(n))
    }

    pub fn var(&mut self, s: Symbol) -> Expr {
        self.mk(Node::Var(s))
    }

    /// Re-expresses a foreign expression through this pool (with simplification).
    pub fn import(&mut self, e: &Expr) -> Expr {
        if let Some(done) = self.imported.get(&e.id()) {
            return done.clone();
        }
        let out = match e.node() {
            Node::Const(n) => self.num(*n),
            Node::Var(s) => self.var(s.clone()),
            Node::Neg(a) => {
                let a = self.import(a);
                self.neg(a)
            }
            Node::Add(v) => {
                let v = v.iter().map(|t| self.import(t)).collect();
                self.add(v)
            }
            Node::Mul(v) => {
                let v = v.iter().map(|t| self.import(t)).collect();
                self.mul(v)
            }
            Node::Div(a, b) => {
                let a = self.import(a);
                let b = self.import(b);
                self.div(a, b)
            }
            Node::Pow(a, p) => {
                let a = self.import(a);
                self.pow(a, *p)
            }
            Node::Call(f, a) => {
                let a = self.import(a);
                self.call(*f, a)
            }
        };
        self.imported.insert(e.id(), out.clone());
        self.imported.insert(out.id(), out.clone());
        out
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        match a.node() {
            Node::Const(n) => self.num(n.neg()),
            Node::Neg(inner) => inner.clone(),
            Node::Mul(f) if f.first().and_then(Expr::as_const).is_some() => {
                let mut f = f.clone();
                let c = f[0].as_const().unwrap().neg();
                f[0] = self.num(c);
                self.mul(f)
            }
            _ => self.mk(Node::Neg(a)),
        }
    }

    pub fn add(&mut self, terms: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(terms.len());
        let mut acc = Number::int(0);
        let mut stack: Vec<Expr> = terms.into_iter().rev().collect();
        while let Some(t) = stack.pop() {
            match t.node() {
                Node::Const(n) => acc = acc.add(*n),
                Node::Add(inner) => stack.extend(inner.iter().rev().cloned()),
                _ => flat.push(t),
            }
        }
        flat.sort_by_key(Expr::id);
        if !acc.is_zero() {
            let c = self.num(acc);
            flat.insert(0, c);
        }
        match flat.len() {
            0 => self.int(0),
            1 => flat.pop().unwrap(),
            _ => self.mk(Node::Add(flat)),
        }
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        let nb = self.neg(b);
        self.add(vec![a, nb])
    }

    pub fn mul(&mut self, factors: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(factors.len());
        let mut acc = Number::int(1);
        let mut stack: Vec<Expr> = factors.into_iter().rev().collect();
        while let Some(t) = stack.pop() {
            match t.node() {
                Node::Const(n) => acc = acc.mul(*n),
                Node::Mul(inner) => stack.extend(inner.iter().rev().cloned()),
                Node::Neg(inner) => {
                    acc = acc.neg();
                    stack.push(inner.clone());
                }
                _ => flat.push(t),
            }
        }
        if acc.is_zero() {
            return self.num(acc);
        }
        flat.sort_by_key(Expr::id);
        match (flat.len(), acc.is_one()) {
            (0, _) => self.num(acc),
            (1, true) => flat.pop().unwrap(),
            _ if acc.is_one() => self.mk(Node::Mul(flat)),
            (1, false) if acc == Number::int(-1) => {
                let only = flat.pop().unwrap();
                self.mk(Node::Neg(only))
            }
            _ => {
                let c = self.num(acc);
                flat.insert(0, c);
                self.mk(Node::Mul(flat))
            }
        }
    }

    pub fn div(&mut self, a: Expr, b: Expr) -> Expr {
        if let Some(nb) = b.as_const() {
            if nb.is_one() {
                return a;
            }
            if let Some(inv) = Number::int(1).div(nb) {
                let c = self.num(inv);
                return self.mul(vec![c, a]);
            }
        }
        if a.as_const().is_some_and(Number::is_zero) {
            return a;
        }
        self.mk(Node::Div(a, b))
    }

    pub fn pow(&mut self, a: Expr, e: Rational) -> Expr {
        if e.is_zero() {
            return self.int(1);
        }
        if e.is_one() {
            return a;
        }
        if let Some(Number::Exact(base)) = a.as_const() {
            if e.is_integer() && e.numer().abs() <= 64 {
                if let Some(v) = base.checked_powi(e.numer()) {
                    return self.num(Number::Exact(v));
                }
            }
        }
        if let Node::Pow(inner, e0) = a.node() {
            if e.is_integer() {
                if let Some(p) = e0.checked_mul(e) {
                    let inner = inner.clone();
                    return self.pow(inner, p);
                }
            }
        }
        self.mk(Node::Pow(a, e))
    }

    pub fn call(&mut self, f: Func, a: Expr) -> Expr {
        if let Some(Number::Exact(v)) = a.as_const() {
            let folded = match f {
                Func::Exp | Func::Cos if v.is_zero() => Some(1),
                Func::Sin | Func::Sqrt if v.is_zero() => Some(0),
                Func::Log | Func::Sqrt if v.is_one() => Some(if f == Func::Log { 0 } else { 1 }),
                _ => None,
            };
            if let Some(k) = folded {
                return self.int(k);
            }
        }
        self.mk(Node::Call(f, a))
    }

    /// Exact partial derivative with respect to one reduced coordinate.
    /// Parameters are constants.
    pub fn diff(&mut self, e: &Expr, var: Coord) -> Expr {
        let e = self.import(e);
        self.diff_pooled(&e, var)
    }

    fn diff_pooled(&mut self, e: &Expr, var: Coord) -> Expr {
        if let Some(d) = self.derivs.get(&(e.id(), var)) {
            return d.clone();
        }
        let d = match e.node() {
            Node::Const(_) => self.int(0),
            Node::Var(Symbol::Coord(c)) if *c == var => self.int(1),
            Node::Var(_) => self.int(0),
            Node::Neg(a) => {
                let da = self.diff_pooled(a, var);
                self.neg(da)
            }
            Node::Add(terms) => {
                let ds = terms.iter().map(|t| self.diff_pooled(t, var)).collect();
                self.add(ds)
            }
            Node::Mul(factors) => {
                let mut terms = Vec::new();
                for i in 0..factors.len() {
                    let di = self.diff_pooled(&factors[i], var);
                    if di.as_const().is_some_and(Number::is_zero) {
                        continue;
                    }
                    let mut prod = factors.clone();
                    prod[i] = di;
                    terms.push(self.mul(prod));
                }
                self.add(terms)
            }
            Node::Div(a, b) => {
                let da = self.diff_pooled(a, var);
                let db = self.diff_pooled(b, var);
                let first = self.div(da, b.clone());
                if db.as_const().is_some_and(Number::is_zero) {
                    first
                } else {
                    let b2 = self.pow(b.clone(), Rational::integer(2));
                    let num = self.mul(vec![a.clone(), db]);
                    let second = self.div(num, b2);
                    self.sub(first, second)
                }
            }
            Node::Pow(a, p) => {
                let da = self.diff_pooled(a, var);
                if da.as_const().is_some_and(Number::is_zero) {
                    self.int(0)
                } else {
                    let c = self.num(Number::Exact(*p));
                    let lowered = match p.checked_sub(Rational::ONE) {
                        Some(q) => self.pow(a.clone(), q),
                        None => unreachable!("exponent overflow"),
                    };
                    self.mul(vec![c, lowered, da])
                }
            }
            Node::Call(f, a) => {
                let da = self.diff_pooled(a, var);
                if da.as_const().is_some_and(Number::is_zero) {
                    self.int(0)
                } else {
                    match f {
                        Func::Sqrt => {
                            let two = self.int(2);
                            let den = self.mul(vec![two, e.clone()]);
                            self.div(da, den)
                        }
                        Func::Exp => self.mul(vec![e.clone(), da]),
                        Func::Log => self.div(da, a.clone()),
                        Func::Sin => {
                            let c = self.call(Func::Cos, a.clone());
                            self.mul(vec![c, da])
                        }
                        Func::Cos => {
                            let s = self.call(Func::Sin, a.clone());
                            let m = self.mul(vec![s, da]);
                            self.neg(m)
                        }
                    }
                }
            }
        };
        self.derivs.insert((e.id(), var), d.clone());
        d
    }
}

impl Expr {
    /// One-shot derivative through a throwaway context.
    pub fn diff(&self, var: Coord) -> Expr {
        SymbolicContext::new().diff(self, var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Bindings};

    fn at(e: &Expr, pairs: &[(&str, f64)]) -> f64 {
        let mut b = Bindings::new();
        for (k, v) in pairs {
            b.set(k, *v);
        }
        e.evaluate(&b).unwrap()
    }

    #[test]
    fn power_rule() {
        let d = parse("z^2").unwrap().diff(Coord::Z);
        assert_eq!(d.to_string(), "2*z");
    }

    #[test]
    fn sqrt_rule() {
        let d = parse("sqrt(1+z^2)").unwrap().diff(Coord::Z);
        let v = at(&d, &[("z", 1.0)]);
        assert!((v - 0.7071067811865475).abs() < 1e-16);
        // structurally z/sqrt(1+z^2) after folding 2*z/(2*sqrt(..))
        let alt = parse("z/sqrt(1+z^2)").unwrap();
        for z in [-1.3, 0.2, 2.0] {
            assert!((at(&d, &[("z", z)]) - at(&alt, &[("z", z)])).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_partial_of_product() {
        let mut cx = SymbolicContext::new();
        let e = parse("exp(x0)*s*z").unwrap();
        let ds = cx.diff(&e, Coord::S);
        let dsz = cx.diff(&ds, Coord::Z);
        assert_eq!(dsz.to_string(), "exp(x0)");
    }

    #[test]
    fn parameters_are_constants() {
        let d = parse("k*s + k^2").unwrap().diff(Coord::S);
        assert_eq!(d.to_string(), "k");
        let d = parse("k^3").unwrap().diff(Coord::Z);
        assert_eq!(d.as_const(), Some(Number::int(0)));
    }

    #[test]
    fn memo_shares_nodes() {
        let mut cx = SymbolicContext::new();
        let e = parse("sqrt(1 + r^2 - s^2 + exp(x0)*z^2)").unwrap();
        let a = cx.diff(&e, Coord::Z);
        let b = cx.diff(&e, Coord::Z);
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn exact_zeros_survive_cascades() {
        let mut cx = SymbolicContext::new();
        let e = parse("s^2*z/3").unwrap();
        let mut d = cx.diff(&e, Coord::S);
        d = cx.diff(&d, Coord::S);
        d = cx.diff(&d, Coord::S);
        assert_eq!(d.as_const(), Some(Number::int(0)));
    }
}
