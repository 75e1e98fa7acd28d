//! Geodesic spray of `F = |ȳ|·φ` in closed form, with independent oracles.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::coords::{reduce, ConfigPoint, ReducedPoint, TangentVector};
use crate::error::{Error, Result};
use crate::finsler::{JetOrders, PhiJet, PhiModel};
use crate::jet::{Jet, Scalar, SzJet};

/// Below this radius the `1/r` terms are not evaluated.
pub const R_FLOOR: f64 = 1e-8;
/// `|Λ|` below this is treated as singular.
pub const LAMBDA_FLOOR: f64 = 1e-14;
/// Largest condition number accepted when inverting `g_AB`.
pub const MAX_CONDITION: f64 = 1e12;

/// `φ` and the partials the spray needs.
#[derive(Debug, Clone)]
pub struct PhiBundle<T> {
    pub phi: T,
    pub ps: T,
    pub pz: T,
    pub pss: T,
    pub psz: T,
    pub pzz: T,
    pub px: T,
    pub pr: T,
    pub pxs: T,
    pub pxz: T,
    pub prs: T,
    pub prz: T,
}

impl PhiBundle<f64> {
    pub fn values(j: &PhiJet) -> Self {
        PhiBundle {
            phi: j.at(0, 0, 0, 0),
            ps: j.at(0, 0, 1, 0),
            pz: j.at(0, 0, 0, 1),
            pss: j.at(0, 0, 2, 0),
            psz: j.at(0, 0, 1, 1),
            pzz: j.at(0, 0, 0, 2),
            px: j.at(1, 0, 0, 0),
            pr: j.at(0, 1, 0, 0),
            pxs: j.at(1, 0, 1, 0),
            pxz: j.at(1, 0, 0, 1),
            prs: j.at(0, 1, 1, 0),
            prz: j.at(0, 1, 0, 1),
        }
    }
}

impl PhiBundle<SzJet> {
    /// `(s, z)` expansions; the jet must carry `x0r >= 1`.
    pub fn jets(j: &PhiJet) -> Self {
        let f = j.sz_jet(0, 0);
        let fx = j.sz_jet(1, 0);
        let fr = j.sz_jet(0, 1);
        let ps = f.ds();
        let pz = f.dz();
        PhiBundle {
            pss: ps.ds(),
            psz: ps.dz(),
            pzz: pz.dz(),
            pxs: fx.ds(),
            pxz: fx.dz(),
            prs: fr.ds(),
            prz: fr.dz(),
            phi: f,
            ps,
            pz,
            px: fx,
            pr: fr,
        }
    }
}

/// The spray scalars at a reduced point (all of degree 0 in `y`).
#[derive(Debug, Clone, Serialize)]
pub struct SprayFieldsOf<T> {
    pub varphi: T,
    pub p1: T,
    pub p2: T,
    pub u: T,
    pub v: T,
    pub l: T,
    pub w: T,
    pub omega: T,
    pub lambda: T,
}

pub type SprayFields = SprayFieldsOf<f64>;

/// The spray scalars written once for numbers and jets alike.
pub fn spray_formulas<T: Scalar>(b: &PhiBundle<T>, s: &T, z: &T, r: f64) -> SprayFieldsOf<T> {
    let c = |t: &T| t.clone();
    let gap = -(c(s) * c(s)) + r * r;
    let varphi = c(z) * c(&b.px) + c(s) * c(&b.pr) / r + c(&b.ps);
    let p1 = c(z) * c(&b.pxs) - c(&b.pr) / r + c(s) * c(&b.prs) / r + c(&b.pss);
    let p2 = c(z) * c(&b.pxz) - c(&b.px) + c(s) * c(&b.prz) / r + c(&b.psz);
    let omega = c(&b.phi) - c(s) * c(&b.ps) - c(z) * c(&b.pz);
    let lambda = c(&omega) * c(&b.pzz) + c(&gap) * (c(&b.pss) * c(&b.pzz) - c(&b.psz) * c(&b.psz));
    let two_lambda = c(&lambda) * 2.0;
    let u = (c(&p1) * c(&b.pzz) - c(&p2) * c(&b.psz)) / c(&two_lambda);
    let v = (c(&p1) * c(&b.psz) - c(&p2) * c(&b.pss)) / c(&two_lambda);
    let l = c(&omega) * c(&p2) / c(&two_lambda) - c(&gap) * c(&v);
    let w = (c(&varphi) / 2.0 - c(s) * c(&b.phi) * c(&u) - c(&b.pz) * c(&l) - c(&gap) * c(&b.ps) * c(&u)) / c(&b.phi);
    SprayFieldsOf { varphi, p1, p2, u, v, l, w, omega, lambda }
}

fn check_radius(p: &ReducedPoint) -> Result<()> {
    if p.r < R_FLOOR {
        return Err(Error::OutOfDomain(format!("r = {:e} is below the floor {R_FLOOR:e}", p.r)));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.abs() < LAMBDA_FLOOR || !lambda.is_finite() {
        return Err(Error::Singular { what: "Lambda", value: lambda });
    }
    Ok(())
}

pub fn spray_fields(model: &PhiModel, p: &ReducedPoint) -> Result<SprayFields> {
    check_radius(p)?;
    let jet = model.phi_jet_at(p, JetOrders::new(2, 1))?;
    let f = spray_formulas(&PhiBundle::values(&jet), &p.s, &p.z, p.r);
    check_lambda(f.lambda)?;
    Ok(f)
}

/// The spray scalars as `(s, z)` jets of the given order.
pub fn spray_field_jets(model: &PhiModel, p: &ReducedPoint, order: usize) -> Result<SprayFieldsOf<SzJet>> {
    check_radius(p)?;
    let jet = model.phi_jet_at(p, JetOrders::new(order + 2, 1))?;
    let k = order + 2;
    let s = SzJet::s(p.s, p.z, k);
    let z = SzJet::z(p.s, p.z, k);
    let f = spray_formulas(&PhiBundle::jets(&jet), &s, &z, p.r);
    check_lambda(f.lambda.value())?;
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SprayCoefficients {
    pub g0: f64,
    pub gi: Vec<f64>,
}

impl SprayCoefficients {
    pub fn full(&self) -> Vec<f64> {
        std::iter::once(self.g0).chain(self.gi.iter().copied()).collect()
    }

    pub fn from_full(v: &[f64]) -> Self {
        SprayCoefficients { g0: v[0], gi: v[1..].to_vec() }
    }

    /// `max |a − b| / max(|b|_∞, floor)` over all components.
    pub fn relative_error(&self, reference: &SprayCoefficients, floor: f64) -> f64 {
        let a = self.full();
        let b = reference.full();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(floor);
        diff / scale
    }
}

pub fn spray_coefficients(model: &PhiModel, x: &ConfigPoint, y: &TangentVector) -> Result<SprayCoefficients> {
    let p = reduce(x, y)?;
    let f = spray_fields(model, &ReducedPoint { u: 1.0, ..p })?;
    let u2 = p.u * p.u;
    let g0 = u2 * (p.z * (f.w + p.s * f.u) + f.l);
    let gi = (0..x.dim()).map(|i| u2 * f.w * y.ybar[i] / p.u + u2 * f.u * x.xbar[i]).collect();
    Ok(SprayCoefficients { g0, gi })
}

/// Increments of `s` and `z` as jets in the fiber variables `y^0..y^n`,
/// together with `u`.
pub(crate) struct FiberJets {
    pub y: Vec<Jet>,
    pub u: Jet,
    pub ds: Jet,
    pub dz: Jet,
}

pub(crate) fn fiber_jets(x: &ConfigPoint, y: &TangentVector, p: &ReducedPoint, order: usize) -> FiberJets {
    let n = x.dim();
    let yv: Vec<Jet> = y.full().iter().enumerate().map(|(a, &v)| Jet::variable(n + 1, order, a, v)).collect();
    let mut u2 = yv[0].constant_like(0.0);
    let mut dot = yv[0].constant_like(0.0);
    for i in 0..n {
        u2 = &u2 + &(&yv[i + 1] * &yv[i + 1]);
        dot = &dot + &(yv[i + 1].clone() * x.xbar[i]);
    }
    let u = u2.sqrt();
    let ds = &dot / &u - p.s;
    let dz = &yv[0] / &u - p.z;
    FiberJets { y: yv, u, ds, dz }
}

/// The closed-form `G^A` as jets in the fiber variables.
pub fn closed_spray_jets(model: &PhiModel, x: &ConfigPoint, y: &TangentVector, order: usize) -> Result<Vec<Jet>> {
    let p = reduce(x, y)?;
    let f = spray_field_jets(model, &ReducedPoint { u: 1.0, ..p }, order)?;
    let fj = fiber_jets(x, y, &p, order);
    let args = [fj.ds.clone(), fj.dz.clone()];
    let w = f.w.jet().compose(&args);
    let uu = f.u.jet().compose(&args);
    let l = f.l.jet().compose(&args);
    let s = fj.ds.clone() + p.s;
    let z = fj.dz.clone() + p.z;
    let u2 = &fj.u * &fj.u;
    let mut g = Vec::with_capacity(x.dim() + 1);
    g.push(&u2 * &(&(&z * &(&w + &(&s * &uu))) + &l));
    for i in 0..x.dim() {
        g.push(&fj.u * &(&w * &fj.y[i + 1]) + (&u2 * &uu) * x.xbar[i]);
    }
    Ok(g)
}

/// `F` as a jet in the fiber variables.
pub fn finsler_fiber_jet(model: &PhiModel, x: &ConfigPoint, y: &TangentVector, order: usize) -> Result<Jet> {
    let p = reduce(x, y)?;
    let jet = model.phi_jet_at(&p, JetOrders::new(order, 0))?;
    let fj = fiber_jets(x, y, &p, order);
    Ok(&fj.u * &jet.sz_jet(0, 0).jet().compose(&[fj.ds, fj.dz]))
}

/// `∂G^A/∂y^A = u{(n+2)W + 3sU + L_z + (r²−s²)U_s}`.
pub fn spray_divergence(model: &PhiModel, x: &ConfigPoint, y: &TangentVector) -> Result<f64> {
    let p = reduce(x, y)?;
    let f = spray_field_jets(model, &ReducedPoint { u: 1.0, ..p }, 1)?;
    let n = x.dim() as f64;
    let gap = p.r * p.r - p.s * p.s;
    Ok(p.u * ((n + 2.0) * f.w.value() + 3.0 * p.s * f.u.value() + f.l.partial(0, 1) + gap * f.u.partial(1, 0)))
}

/// The divergence by differentiating the closed-form `G^A` as fiber jets.
pub fn divergence_oracle(model: &PhiModel, x: &ConfigPoint, y: &TangentVector) -> Result<f64> {
    let g = closed_spray_jets(model, x, y, 1)?;
    Ok(g.iter().enumerate().map(|(a, j)| j.deriv(a).value()).sum())
}

/// `G^A = P y^A + Q^A` from derivatives of `F` in full coordinates and a
/// numerical inverse of `g_AB`.
pub fn spray_oracle_pq(model: &PhiModel, x: &ConfigPoint, y: &TangentVector) -> Result<SprayCoefficients> {
    let p = reduce(x, y)?;
    if p.r < R_FLOOR {
        return Err(Error::OutOfDomain(format!("r = {:e} is below the floor {R_FLOOR:e}", p.r)));
    }
    let n = x.dim();
    let m = n + 1;
    let nv = 2 * m;
    let xs: Vec<Jet> = x.full().iter().enumerate().map(|(a, &v)| Jet::variable(nv, 2, a, v)).collect();
    let ys: Vec<Jet> = y.full().iter().enumerate().map(|(a, &v)| Jet::variable(nv, 2, m + a, v)).collect();
    let mut r2 = xs[0].constant_like(0.0);
    let mut u2 = xs[0].constant_like(0.0);
    let mut dot = xs[0].constant_like(0.0);
    for i in 1..m {
        r2 = &r2 + &(&xs[i] * &xs[i]);
        u2 = &u2 + &(&ys[i] * &ys[i]);
        dot = &dot + &(&xs[i] * &ys[i]);
    }
    let u = u2.sqrt();
    let r = r2.sqrt();
    let s = &dot / &u;
    let z = &ys[0] / &u;
    let jet = model.phi_jet_at(&p, JetOrders::new(2, 2))?;
    let poly = Jet::from_partials(4, 2, |a| jet.at(a[0], a[1], a[2], a[3]));
    let phi = poly.compose(&[xs[0].clone() - p.x0, r - p.r, s - p.s, z - p.z]);
    let f = &u * &phi;
    let f2 = &f * &f;
    let unit = |k: usize| {
        let mut e = vec![0u8; nv];
        e[k] += 1;
        e
    };
    let pair = |a: usize, b: usize| {
        let mut e = vec![0u8; nv];
        e[a] += 1;
        e[b] += 1;
        e
    };
    let fv = f.value();
    let yv = y.full();
    let fx: Vec<f64> = (0..m).map(|c| f.partial(&unit(c))).collect();
    let g = DMatrix::from_fn(m, m, |a, b| 0.5 * f2.partial(&pair(m + a, m + b)));
    let svd = g.clone().svd(false, false);
    let cond = svd.singular_values.max() / svd.singular_values.min();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular { what: "fundamental tensor", value: cond });
    }
    let rhs = DVector::from_fn(m, |b, _| {
        let mixed: f64 = (0..m).map(|c| f.partial(&pair(c, m + b)) * yv[c]).sum();
        mixed - fx[b]
    });
    let sol = g.lu().solve(&rhs).ok_or(Error::Singular { what: "fundamental tensor", value: f64::INFINITY })?;
    let pp = fx.iter().zip(&yv).map(|(a, b)| a * b).sum::<f64>() / (2.0 * fv);
    let full: Vec<f64> = (0..m).map(|a| pp * yv[a] + 0.5 * fv * sol[a]).collect();
    Ok(SprayCoefficients::from_full(&full))
}
