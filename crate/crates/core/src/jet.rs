//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] stores Taylor coefficients `f_α/α!` for all monomials of total
//! degree up to its order. Monomials are enumerated degree by degree, so a
//! layout of order `k` is a prefix of every layout of higher order with the
//! same number of variables; truncation is a slice.

use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use crate::expr::{Coord, Expr, ExprError, Func, Node, Symbol};

#[derive(Debug)]
pub struct Layout {
    nv: usize,
    order: usize,
    exps: Vec<Vec<u8>>,
    degree: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    mul: Vec<(u32, u32, u32)>,
    raise: Vec<Vec<u32>>,
}

const NONE: u32 = u32::MAX;

fn monomials(nv: usize, d: usize) -> Vec<Vec<u8>> {
    if nv == 1 {
        return vec![vec![d as u8]];
    }
    let mut out = Vec::new();
    for first in (0..=d).rev() {
        for rest in monomials(nv - 1, d - first) {
            let mut m = Vec::with_capacity(nv);
            m.push(first as u8);
            m.extend(rest);
            out.push(m);
        }
    }
    out
}

impl Layout {
    fn build(nv: usize, order: usize) -> Layout {
        assert!(nv >= 1, "a jet needs at least one variable");
        let mut exps = Vec::new();
        let mut degree = Vec::new();
        for d in 0..=order {
            for m in monomials(nv, d) {
                exps.push(m);
                degree.push(d);
            }
        }
        let index: HashMap<Vec<u8>, usize> = exps.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
        let mut mul = Vec::new();
        for i in 0..exps.len() {
            for j in 0..exps.len() {
                if degree[i] + degree[j] > order {
                    break;
                }
                let sum: Vec<u8> = exps[i].iter().zip(&exps[j]).map(|(a, b)| a + b).collect();
                mul.push((i as u32, j as u32, index[&sum] as u32));
            }
        }
        let raise = (0..nv)
            .map(|v| {
                exps.iter()
                    .zip(&degree)
                    .map(|(e, &d)| {
                        if d >= order {
                            return NONE;
                        }
                        let mut up = e.clone();
                        up[v] += 1;
                        index[&up] as u32
                    })
                    .collect()
            })
            .collect();
        Layout { nv, order, exps, degree, index, mul, raise }
    }

    pub fn get(nv: usize, order: usize) -> Arc<Layout> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Layout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard.entry((nv, order)).or_insert_with(|| Arc::new(Layout::build(nv, order))).clone()
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u8>] {
        &self.exps
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn multi_factorial(alpha: &[u8]) -> f64 {
    alpha.iter().map(|&a| factorial(a as usize)).product()
}

#[derive(Clone, Debug)]
pub struct Jet {
    layout: Arc<Layout>,
    c: Vec<f64>,
}

impl Jet {
    pub fn constant(nv: usize, order: usize, v: f64) -> Jet {
        let layout = Layout::get(nv, order);
        let mut c = vec![0.0; layout.len()];
        c[0] = v;
        Jet { layout, c }
    }

    /// The coordinate function `x_var` expanded at `x_var = v0`.
    pub fn variable(nv: usize, order: usize, var: usize, v0: f64) -> Jet {
        let mut j = Jet::constant(nv, order, v0);
        if order >= 1 {
            j.c[1 + var] = 1.0;
        }
        j
    }

    pub fn from_coeffs(nv: usize, order: usize, c: Vec<f64>) -> Jet {
        let layout = Layout::get(nv, order);
        assert_eq!(c.len(), layout.len());
        Jet { layout, c }
    }

    /// Builds a jet from derivative values `∂^α f`.
    pub fn from_partials(nv: usize, order: usize, mut f: impl FnMut(&[u8]) -> f64) -> Jet {
        let layout = Layout::get(nv, order);
        let c = layout.exps.iter().map(|a| f(a) / multi_factorial(a)).collect();
        Jet { layout, c }
    }

    pub fn constant_like(&self, v: f64) -> Jet {
        Jet::constant(self.nvars(), self.order(), v)
    }

    pub fn nvars(&self) -> usize {
        self.layout.nv
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Taylor coefficient of the monomial `alpha`; zero beyond the order.
    pub fn coeff(&self, alpha: &[u8]) -> f64 {
        self.layout.index.get(alpha).map_or(0.0, |&i| self.c[i])
    }

    /// Derivative value `∂^α f` at the base point.
    pub fn partial(&self, alpha: &[u8]) -> f64 {
        let total: usize = alpha.iter().map(|&a| a as usize).sum();
        assert!(total <= self.order(), "partial of order {total} requested from a jet of order {}", self.order());
        self.coeff(alpha) * multi_factorial(alpha)
    }

    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.order() {
            return self.clone();
        }
        let layout = Layout::get(self.nvars(), order);
        let c = self.c[..layout.len()].to_vec();
        Jet { layout, c }
    }

    fn common(&self, o: &Jet) -> Arc<Layout> {
        assert_eq!(self.nvars(), o.nvars(), "jets over different variable counts");
        if self.order() <= o.order() {
            self.layout.clone()
        } else {
            o.layout.clone()
        }
    }

    fn zip(&self, o: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let layout = self.common(o);
        let c = (0..layout.len()).map(|i| f(self.c[i], o.c[i])).collect();
        Jet { layout, c }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Jet {
        Jet { layout: self.layout.clone(), c: self.c.iter().map(|&x| f(x)).collect() }
    }

    fn product(&self, o: &Jet) -> Jet {
        let layout = self.common(o);
        let mut c = vec![0.0; layout.len()];
        for &(i, j, k) in &layout.mul {
            c[k as usize] += self.c[i as usize] * o.c[j as usize];
        }
        Jet { layout, c }
    }

    /// Evaluates `Σ_k coeffs[k]·h^k` where `h` is the non-constant part.
    fn series(&self, coeffs: &[f64]) -> Jet {
        let mut h = self.clone();
        h.c[0] = 0.0;
        let k = self.order().min(coeffs.len() - 1);
        let mut acc = self.constant_like(coeffs[k]);
        for i in (0..k).rev() {
            acc = acc.product(&h);
            acc.c[0] += coeffs[i];
        }
        acc
    }

    pub fn recip(&self) -> Jet {
        let a = self.value();
        let coeffs: Vec<f64> = (0..=self.order()).map(|k| (-1f64).powi(k as i32) / a.powi(k as i32 + 1)).collect();
        self.series(&coeffs)
    }

    pub fn powf(&self, p: f64) -> Jet {
        let a = self.value();
        let head = if p == 0.5 { a.sqrt() } else { a.powf(p) };
        let mut coeffs = Vec::with_capacity(self.order() + 1);
        let mut binom = 1.0;
        for k in 0..=self.order() {
            coeffs.push(binom * head / a.powi(k as i32));
            binom *= (p - k as f64) / (k as f64 + 1.0);
        }
        self.series(&coeffs)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn powi(&self, m: i32) -> Jet {
        if m < 0 {
            return self.recip().powi(-m);
        }
        let mut result = self.constant_like(1.0);
        let mut base = self.clone();
        let mut e = m as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result.product(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.product(&base);
            }
        }
        result
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let coeffs: Vec<f64> = (0..=self.order()).map(|k| e / factorial(k)).collect();
        self.series(&coeffs)
    }

    pub fn ln(&self) -> Jet {
        let a = self.value();
        let mut coeffs = vec![a.ln()];
        for k in 1..=self.order() {
            coeffs.push((-1f64).powi(k as i32 + 1) / (k as f64 * a.powi(k as i32)));
        }
        self.series(&coeffs)
    }

    fn trig(&self, shift: usize) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let coeffs: Vec<f64> = (0..=self.order()).map(|k| cycle[(k + shift) % 4] / factorial(k)).collect();
        self.series(&coeffs)
    }

    pub fn sin(&self) -> Jet {
        self.trig(0)
    }

    pub fn cos(&self) -> Jet {
        self.trig(1)
    }

    /// Partial derivative along variable `var`; the order drops by one.
    pub fn deriv(&self, var: usize) -> Jet {
        assert!(self.order() >= 1, "cannot differentiate a jet of order 0");
        let layout = Layout::get(self.nvars(), self.order() - 1);
        let raise = &self.layout.raise[var];
        let c = (0..layout.len())
            .map(|i| self.c[raise[i] as usize] * (layout.exps[i][var] as f64 + 1.0))
            .collect();
        Jet { layout, c }
    }

    /// Treats `self` as a Taylor polynomial and substitutes the increments
    /// `args[v]` for its variables. The increments should vanish at the base
    /// point; a small constant term is carried through the truncated sum.
    pub fn compose(&self, args: &[Jet]) -> Jet {
        assert_eq!(args.len(), self.nvars());
        let order = args.iter().map(Jet::order).min().expect("at least one argument");
        let top = order.min(self.order());
        let powers: Vec<Vec<Jet>> = args
            .iter()
            .map(|a| {
                let a = a.truncate(order);
                let mut p = vec![a.constant_like(1.0)];
                for k in 1..=top {
                    let next = p[k - 1].product(&a);
                    p.push(next);
                }
                p
            })
            .collect();
        let mut acc = powers[0][0].constant_like(0.0);
        for (i, alpha) in self.layout.exps.iter().enumerate() {
            if self.layout.degree[i] > top || self.c[i] == 0.0 {
                continue;
            }
            let mut term: Option<Jet> = None;
            for (v, &a) in alpha.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let p = &powers[v][a as usize];
                term = Some(match term {
                    None => p.clone(),
                    Some(t) => t.product(p),
                });
            }
            match term {
                None => acc.c[0] += self.c[i],
                Some(t) => {
                    for (x, y) in acc.c.iter_mut().zip(&t.c) {
                        *x += self.c[i] * y;
                    }
                }
            }
        }
        acc
    }

    pub fn max_abs_diff(&self, o: &Jet) -> f64 {
        self.zip(o, |a, b| (a - b).abs()).c.iter().fold(0.0, |m, &x| m.max(x))
    }
}

macro_rules! jet_ops {
    ($t:ty, $zip:ident, $prod:ident, $map:ident, $div:ident) => {
        impl Add<&$t> for &$t {
            type Output = $t;
            fn add(self, o: &$t) -> $t {
                self.$zip(o, |a, b| a + b)
            }
        }
        impl Sub<&$t> for &$t {
            type Output = $t;
            fn sub(self, o: &$t) -> $t {
                self.$zip(o, |a, b| a - b)
            }
        }
        impl Mul<&$t> for &$t {
            type Output = $t;
            fn mul(self, o: &$t) -> $t {
                self.$prod(o)
            }
        }
        impl Div<&$t> for &$t {
            type Output = $t;
            fn div(self, o: &$t) -> $t {
                self.$div(o)
            }
        }
        impl Neg for &$t {
            type Output = $t;
            fn neg(self) -> $t {
                self.$map(|a| -a)
            }
        }
        impl Neg for $t {
            type Output = $t;
            fn neg(self) -> $t {
                -&self
            }
        }
        impl Add for $t {
            type Output = $t;
            fn add(self, o: $t) -> $t {
                &self + &o
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, o: $t) -> $t {
                &self - &o
            }
        }
        impl Mul for $t {
            type Output = $t;
            fn mul(self, o: $t) -> $t {
                &self * &o
            }
        }
        impl Div for $t {
            type Output = $t;
            fn div(self, o: $t) -> $t {
                &self / &o
            }
        }
        impl Add<f64> for $t {
            type Output = $t;
            fn add(mut self, o: f64) -> $t {
                *self.head_mut() += o;
                self
            }
        }
        impl Sub<f64> for $t {
            type Output = $t;
            fn sub(mut self, o: f64) -> $t {
                *self.head_mut() -= o;
                self
            }
        }
        impl Mul<f64> for $t {
            type Output = $t;
            fn mul(self, o: f64) -> $t {
                self.$map(|a| a * o)
            }
        }
        impl Div<f64> for $t {
            type Output = $t;
            fn div(self, o: f64) -> $t {
                self.$map(|a| a / o)
            }
        }
        impl Add<$t> for f64 {
            type Output = $t;
            fn add(self, o: $t) -> $t {
                o + self
            }
        }
        impl Sub<$t> for f64 {
            type Output = $t;
            fn sub(self, o: $t) -> $t {
                -o + self
            }
        }
        impl Mul<$t> for f64 {
            type Output = $t;
            fn mul(self, o: $t) -> $t {
                o * self
            }
        }
    };
}

impl Jet {
    fn head_mut(&mut self) -> &mut f64 {
        &mut self.c[0]
    }

    fn quotient(&self, o: &Jet) -> Jet {
        self.product(&o.recip())
    }
}

jet_ops!(Jet, zip, product, map, quotient);

/// Arithmetic shared by plain numbers and jets, so one formula serves both
/// point values and Taylor expansions.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn sqrt(&self) -> Self;
    fn value(&self) -> f64;
}

impl Scalar for f64 {
    fn sqrt(&self) -> f64 {
        f64::sqrt(*self)
    }
    fn value(&self) -> f64 {
        *self
    }
}

impl Scalar for Jet {
    fn sqrt(&self) -> Jet {
        Jet::sqrt(self)
    }
    fn value(&self) -> f64 {
        Jet::value(self)
    }
}

/// A jet in the two variables `(s, z)` that remembers its base point.
#[derive(Clone, Debug)]
pub struct SzJet {
    s0: f64,
    z0: f64,
    jet: Jet,
}

impl SzJet {
    pub fn new(s0: f64, z0: f64, jet: Jet) -> SzJet {
        assert_eq!(jet.nvars(), 2);
        SzJet { s0, z0, jet }
    }

    pub fn constant(s0: f64, z0: f64, order: usize, v: f64) -> SzJet {
        SzJet::new(s0, z0, Jet::constant(2, order, v))
    }

    pub fn s(s0: f64, z0: f64, order: usize) -> SzJet {
        SzJet::new(s0, z0, Jet::variable(2, order, 0, s0))
    }

    pub fn z(s0: f64, z0: f64, order: usize) -> SzJet {
        SzJet::new(s0, z0, Jet::variable(2, order, 1, z0))
    }

    /// Builds the jet from derivative values `∂_s^c ∂_z^d`.
    pub fn from_partials(s0: f64, z0: f64, order: usize, mut f: impl FnMut(usize, usize) -> f64) -> SzJet {
        SzJet::new(s0, z0, Jet::from_partials(2, order, |a| f(a[0] as usize, a[1] as usize)))
    }

    pub fn base(&self) -> (f64, f64) {
        (self.s0, self.z0)
    }

    pub fn jet(&self) -> &Jet {
        &self.jet
    }

    pub fn order(&self) -> usize {
        self.jet.order()
    }

    pub fn value(&self) -> f64 {
        self.jet.value()
    }

    pub fn partial(&self, c: usize, d: usize) -> f64 {
        self.jet.partial(&[c as u8, d as u8])
    }

    pub fn truncate(&self, order: usize) -> SzJet {
        SzJet::new(self.s0, self.z0, self.jet.truncate(order))
    }

    pub fn ds(&self) -> SzJet {
        SzJet::new(self.s0, self.z0, self.jet.deriv(0))
    }

    pub fn dz(&self) -> SzJet {
        SzJet::new(self.s0, self.z0, self.jet.deriv(1))
    }

    /// `−sΘ_s − zΘ_z`; consumes one order.
    pub fn psi(&self) -> SzJet {
        let k = self.order() - 1;
        let s = SzJet::s(self.s0, self.z0, k);
        let z = SzJet::z(self.s0, self.z0, k);
        -(&s * &self.ds()) - &z * &self.dz()
    }

    /// `z^m` at this jet's base and order.
    pub fn zpow_like(&self, m: i32) -> SzJet {
        SzJet::new(self.s0, self.z0, Jet::variable(2, self.order(), 1, self.z0).powi(m))
    }

    /// Multiplies by `z^m`.
    pub fn mul_zpow(&self, m: i32) -> SzJet {
        if m == 0 {
            return self.clone();
        }
        self * &self.zpow_like(m)
    }

    pub fn sqrt(&self) -> SzJet {
        SzJet::new(self.s0, self.z0, self.jet.sqrt())
    }

    fn zip(&self, o: &SzJet, f: impl Fn(f64, f64) -> f64) -> SzJet {
        debug_assert!(self.s0 == o.s0 && self.z0 == o.z0, "jets at different base points");
        SzJet::new(self.s0, self.z0, self.jet.zip(&o.jet, f))
    }

    fn product(&self, o: &SzJet) -> SzJet {
        debug_assert!(self.s0 == o.s0 && self.z0 == o.z0, "jets at different base points");
        SzJet::new(self.s0, self.z0, self.jet.product(&o.jet))
    }

    fn quotient(&self, o: &SzJet) -> SzJet {
        SzJet::new(self.s0, self.z0, self.jet.quotient(&o.jet))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> SzJet {
        SzJet::new(self.s0, self.z0, self.jet.map(f))
    }

    fn head_mut(&mut self) -> &mut f64 {
        &mut self.jet.c[0]
    }
}

jet_ops!(SzJet, zip, product, map, quotient);

impl Scalar for SzJet {
    fn sqrt(&self) -> SzJet {
        SzJet::sqrt(self)
    }
    fn value(&self) -> f64 {
        self.jet.value()
    }
}

/// Evaluates an expression in Taylor mode: each coordinate is replaced by a
/// jet, parameters by constants.
pub fn eval_expr_jet(e: &Expr, coords: &[Jet; 4], params: &BTreeMap<String, f64>) -> Result<Jet, ExprError> {
    fn go(
        e: &Expr,
        coords: &[Jet; 4],
        params: &BTreeMap<String, f64>,
        memo: &mut HashMap<u64, Jet>,
    ) -> Result<Jet, ExprError> {
        if let Some(j) = memo.get(&e.id()) {
            return Ok(j.clone());
        }
        let proto = &coords[0];
        let domain = |reason: &str| ExprError::Domain { expr: e.to_string(), reason: reason.into() };
        let j = match e.node() {
            Node::Const(n) => proto.constant_like(n.to_f64()),
            Node::Var(Symbol::Coord(c)) => coords[c.index()].clone(),
            Node::Var(Symbol::Param(p)) => {
                proto.constant_like(*params.get(&**p).ok_or_else(|| ExprError::Unbound(p.to_string()))?)
            }
            Node::Neg(a) => -go(a, coords, params, memo)?,
            Node::Add(v) => {
                let mut acc = proto.constant_like(0.0);
                for t in v {
                    acc = &acc + &go(t, coords, params, memo)?;
                }
                acc
            }
            Node::Mul(v) => {
                let mut acc = proto.constant_like(1.0);
                for t in v {
                    acc = &acc * &go(t, coords, params, memo)?;
                }
                acc
            }
            Node::Div(a, b) => {
                let den = go(b, coords, params, memo)?;
                if den.value() == 0.0 {
                    return Err(domain("division by zero"));
                }
                &go(a, coords, params, memo)? / &den
            }
            Node::Pow(a, p) => {
                let base = go(a, coords, params, memo)?;
                if p.is_integer() {
                    if base.value() == 0.0 && p.numer() < 0 {
                        return Err(domain("division by zero"));
                    }
                    base.powi(p.numer() as i32)
                } else if base.value() > 0.0 {
                    base.powf(p.to_f64())
                } else {
                    return Err(domain("fractional power of a non-positive base in a jet"));
                }
            }
            Node::Call(f, a) => {
                let x = go(a, coords, params, memo)?;
                match f {
                    Func::Sqrt if x.value() <= 0.0 => return Err(domain("square root at a non-positive value")),
                    Func::Sqrt => x.sqrt(),
                    Func::Exp => x.exp(),
                    Func::Log if x.value() <= 0.0 => return Err(domain("logarithm of a non-positive number")),
                    Func::Log => x.ln(),
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                }
            }
        };
        memo.insert(e.id(), j.clone());
        Ok(j)
    }
    go(e, coords, params, &mut HashMap::new())
}

/// Coordinate jets in the four reduced variables at `base`.
pub fn coordinate_jets(base: [f64; 4], order: usize) -> [Jet; 4] {
    Coord::ALL.map(|c| Jet::variable(4, order, c.index(), base[c.index()]))
}
