//! Profile models `F = |ȳ|·φ(x0, r, s, z)`, their partial-derivative jets,
//! the fundamental tensor and validity scans.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::coords::{reduce, rng_for, ConfigPoint, ReducedPoint, SampleSet, SamplingRegion, TangentVector};
use crate::error::{Error, Result};
use crate::expr::{parse, Coord, Expr, Symbol, SymbolicContext, Tape};
use crate::jet::SzJet;

/// Strict positivity floor for `φ`, `Ω` and `Λ`.
pub const VALIDITY_FLOOR: f64 = 1e-12;

/// Which partials `∂_x0^a ∂_r^b ∂_s^c ∂_z^d φ` a jet carries: all with
/// `a + b <= x0r` and `c + d <= sz − (a + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct JetOrders {
    pub sz: usize,
    pub x0r: usize,
}

impl JetOrders {
    pub const fn new(sz: usize, x0r: usize) -> Self {
        JetOrders { sz, x0r }
    }

    pub fn indices(&self) -> Vec<[u8; 4]> {
        let mut out = Vec::new();
        for ab in 0..=self.x0r.min(self.sz) {
            for a in 0..=ab {
                let b = ab - a;
                for cd in 0..=(self.sz - ab) {
                    for c in 0..=cd {
                        out.push([a as u8, b as u8, c as u8, (cd - c) as u8]);
                    }
                }
            }
        }
        out
    }

    pub fn contains(&self, idx: [u8; 4]) -> bool {
        let ab = (idx[0] + idx[1]) as usize;
        let cd = (idx[2] + idx[3]) as usize;
        ab <= self.x0r && ab + cd <= self.sz
    }
}

#[derive(Default)]
struct Cache {
    ctx: SymbolicContext,
    partials: HashMap<[u8; 4], Expr>,
    tapes: HashMap<JetOrders, Arc<(Tape, Vec<[u8; 4]>)>>,
}

/// A metric definition: profile expression, parameter values, fiber
/// dimension `n`, radius `rho` of the ball and the `x0` interval.
#[derive(Clone)]
pub struct PhiModel {
    phi: Expr,
    params: BTreeMap<String, f64>,
    n: usize,
    rho: f64,
    x0_interval: (f64, f64),
    cache: Arc<Mutex<Cache>>,
}

impl std::fmt::Debug for PhiModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhiModel")
            .field("phi", &self.phi.to_string())
            .field("params", &self.params)
            .field("n", &self.n)
            .field("rho", &self.rho)
            .field("x0_interval", &self.x0_interval)
            .finish()
    }
}

impl PhiModel {
    pub fn new(phi: Expr, params: BTreeMap<String, f64>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("fiber dimension must be at least 2, got {n}")));
        }
        for sym in phi.free_symbols() {
            if let Symbol::Param(p) = sym {
                if !params.contains_key(&*p) {
                    return Err(Error::Expr(crate::expr::ExprError::Unbound(p.to_string())));
                }
            }
        }
        Ok(PhiModel { phi, params, n, rho: 1.0, x0_interval: (-1.0, 1.0), cache: Default::default() })
    }

    pub fn parse(text: &str, params: BTreeMap<String, f64>, n: usize) -> Result<Self> {
        PhiModel::new(parse(text)?, params, n)
    }

    /// Same profile in another dimension; the derivative cache is shared.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("fiber dimension must be at least 2, got {n}")));
        }
        Ok(PhiModel { n, ..self.clone() })
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_x0_interval(mut self, lo: f64, hi: f64) -> Self {
        self.x0_interval = (lo, hi);
        self
    }

    pub fn phi(&self) -> &Expr {
        &self.phi
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn x0_interval(&self) -> (f64, f64) {
        self.x0_interval
    }

    pub fn region(&self) -> SamplingRegion {
        SamplingRegion::standard(self.rho, self.x0_interval)
    }

    fn partial_in(cache: &mut Cache, phi: &Expr, idx: [u8; 4]) -> Expr {
        if let Some(e) = cache.partials.get(&idx) {
            return e.clone();
        }
        let e = match (0..4).rev().find(|&k| idx[k] > 0) {
            None => cache.ctx.import(phi),
            Some(k) => {
                let mut parent = idx;
                parent[k] -= 1;
                let p = Self::partial_in(cache, phi, parent);
                cache.ctx.diff(&p, Coord::ALL[k])
            }
        };
        cache.partials.insert(idx, e.clone());
        e
    }

    /// The symbolic partial `∂_x0^a ∂_r^b ∂_s^c ∂_z^d φ`.
    pub fn partial_expr(&self, idx: [u8; 4]) -> Expr {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        Self::partial_in(&mut cache, &self.phi, idx)
    }

    fn tape(&self, orders: JetOrders) -> Result<Arc<(Tape, Vec<[u8; 4]>)>> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(t) = cache.tapes.get(&orders) {
            return Ok(t.clone());
        }
        let idx = orders.indices();
        let roots: Vec<Expr> = idx.iter().map(|&i| Self::partial_in(&mut cache, &self.phi, i)).collect();
        let tape = Arc::new((Tape::compile(&roots, &self.params)?, idx));
        cache.tapes.insert(orders, tape.clone());
        Ok(tape)
    }

    /// Exact partials of `φ` at `(x0, r, s, z)`.
    pub fn phi_jet(&self, base: [f64; 4], orders: JetOrders) -> Result<PhiJet> {
        let tape = self.tape(orders)?;
        let vals = tape.0.eval(base)?;
        Ok(PhiJet { base, orders, values: tape.1.iter().copied().zip(vals).collect() })
    }

    pub fn phi_jet_at(&self, p: &ReducedPoint, orders: JetOrders) -> Result<PhiJet> {
        self.phi_jet([p.x0, p.r, p.s, p.z], orders)
    }

    pub fn phi_value(&self, base: [f64; 4]) -> Result<f64> {
        Ok(self.phi_jet(base, JetOrders::new(0, 0))?.phi())
    }

    /// `F(x, y) = |ȳ|·φ`.
    pub fn finsler(&self, x: &ConfigPoint, y: &TangentVector) -> Result<f64> {
        let p = reduce(x, y)?;
        Ok(p.u * self.phi_value([p.x0, p.r, p.s, p.z])?)
    }

    pub fn fundamental_scalars_at(&self, p: &ReducedPoint) -> Result<FundamentalScalars> {
        Ok(fundamental_scalars(&self.phi_jet_at(p, JetOrders::new(2, 0))?))
    }

    /// Positivity of `φ`, `Λ`, and for `n >= 3` also `Ω`.
    pub fn is_valid_at(&self, p: &ReducedPoint) -> bool {
        match self.fundamental_scalars_at(p) {
            Ok(f) => f.is_valid(self.n),
            Err(_) => false,
        }
    }

    /// Seeded draw of `count` valid reduced points from `region`.
    pub fn sample_valid_in(&self, region: &SamplingRegion, count: usize, seed: u64) -> Result<SampleSet> {
        let points = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_for(seed, i as u64);
                for _ in 0..1000 {
                    let p = region.draw(&mut rng);
                    if self.is_valid_at(&p) {
                        return Ok(p);
                    }
                }
                Err(Error::OutOfDomain(format!("no valid point found in the sampling window for `{}`", self.phi)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet { seed, points })
    }

    pub fn sample_valid(&self, count: usize, seed: u64) -> Result<SampleSet> {
        self.sample_valid_in(&self.region(), count, seed)
    }
}

/// Partial-derivative values of `φ` at one point.
#[derive(Debug, Clone)]
pub struct PhiJet {
    base: [f64; 4],
    orders: JetOrders,
    values: HashMap<[u8; 4], f64>,
}

impl PhiJet {
    pub fn base(&self) -> [f64; 4] {
        self.base
    }

    pub fn orders(&self) -> JetOrders {
        self.orders
    }

    pub fn get(&self, idx: [u8; 4]) -> Option<f64> {
        self.values.get(&idx).copied()
    }

    /// Like [`get`](Self::get) but panics on an index outside the jet's orders.
    pub fn at(&self, a: u8, b: u8, c: u8, d: u8) -> f64 {
        match self.values.get(&[a, b, c, d]) {
            Some(v) => *v,
            None => panic!("partial ({a},{b},{c},{d}) not in a jet of orders {:?}", self.orders),
        }
    }

    pub fn phi(&self) -> f64 {
        self.at(0, 0, 0, 0)
    }

    /// Recomputes with larger orders when the request exceeds this jet.
    pub fn extended(&self, model: &PhiModel, orders: JetOrders) -> Result<PhiJet> {
        if orders.sz <= self.orders.sz && orders.x0r <= self.orders.x0r {
            return Ok(self.clone());
        }
        let merged = JetOrders::new(orders.sz.max(self.orders.sz), orders.x0r.max(self.orders.x0r));
        model.phi_jet(self.base, merged)
    }

    /// The `(s, z)` expansion of `∂_x0^a ∂_r^b φ`, of order `sz − (a + b)`.
    pub fn sz_jet(&self, a: u8, b: u8) -> SzJet {
        let order = self.orders.sz - (a + b) as usize;
        SzJet::from_partials(self.base[2], self.base[3], order, |c, d| self.at(a, b, c as u8, d as u8))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FundamentalScalars {
    /// `F/u`, that is `φ` itself.
    pub f_over_u: f64,
    pub omega: f64,
    pub lambda: f64,
}

impl FundamentalScalars {
    pub fn is_valid(&self, n: usize) -> bool {
        self.f_over_u > VALIDITY_FLOOR && self.lambda > VALIDITY_FLOOR && (n < 3 || self.omega > VALIDITY_FLOOR)
    }
}

pub fn fundamental_scalars(jet: &PhiJet) -> FundamentalScalars {
    let [_, r, s, z] = jet.base;
    let phi = jet.phi();
    let omega = phi - s * jet.at(0, 0, 1, 0) - z * jet.at(0, 0, 0, 1);
    let (pss, psz, pzz) = (jet.at(0, 0, 2, 0), jet.at(0, 0, 1, 1), jet.at(0, 0, 0, 2));
    let lambda = omega * pzz + (r * r - s * s) * (pss * pzz - psz * psz);
    FundamentalScalars { f_over_u: phi, omega, lambda }
}

#[derive(Debug, Clone, Serialize)]
pub struct FundamentalTensor {
    /// `(n+1)×(n+1)`, row-major, index 0 is the axis direction.
    pub g: Vec<Vec<f64>>,
    pub scalars: FundamentalScalars,
}

impl FundamentalTensor {
    pub fn matrix(&self) -> DMatrix<f64> {
        let m = self.g.len();
        DMatrix::from_fn(m, m, |i, j| self.g[i][j])
    }

    pub fn g00(&self) -> f64 {
        self.g[0][0]
    }

    pub fn g0j(&self, j: usize) -> f64 {
        self.g[0][j]
    }

    pub fn gij(&self, i: usize, j: usize) -> f64 {
        self.g[i][j]
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }

    /// `φ^{n+2} Ω^{n−2} Λ`.
    pub fn determinant_closed_form(&self) -> f64 {
        let n = self.g.len() as i32 - 1;
        let FundamentalScalars { f_over_u: phi, omega, lambda } = self.scalars;
        phi.powi(n + 2) * omega.powi(n - 2) * lambda
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix()).eigenvalues.min()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = self.g.len();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                worst = worst.max((self.g[i][j] - self.g[j][i]).abs());
            }
        }
        worst
    }
}

/// `g_AB = ½[F²]_{y^A y^B}` from the block formulas.
pub fn metric_tensor(model: &PhiModel, x: &ConfigPoint, y: &TangentVector) -> Result<FundamentalTensor> {
    let p = reduce(x, y)?;
    let jet = model.phi_jet_at(&p, JetOrders::new(2, 0))?;
    let sc = fundamental_scalars(&jet);
    let (s, z) = (p.s, p.z);
    let phi = sc.f_over_u;
    let omega = sc.omega;
    let (ps, pz) = (jet.at(0, 0, 1, 0), jet.at(0, 0, 0, 1));
    let (pss, psz, pzz) = (jet.at(0, 0, 2, 0), jet.at(0, 0, 1, 1), jet.at(0, 0, 0, 2));
    let omega_s = -s * pss - z * psz;
    let omega_z = -s * psz - z * pzz;
    let po_s = ps * omega + phi * omega_s;
    let po_z = pz * omega + phi * omega_z;
    let a = -(s * po_s + z * po_z);
    let b = po_s;
    let c = ps * ps + phi * pss;
    let n = x.dim();
    let uu: Vec<f64> = y.ybar.iter().map(|v| v / p.u).collect();
    let xx = &x.xbar;
    let mut g = vec![vec![0.0; n + 1]; n + 1];
    g[0][0] = pz * pz + phi * pzz;
    for i in 0..n {
        let v = po_z * uu[i] + (ps * pz + phi * psz) * xx[i];
        g[0][i + 1] = v;
        g[i + 1][0] = v;
        for j in 0..n {
            let delta = if i == j { phi * omega } else { 0.0 };
            g[i + 1][j + 1] = delta + a * uu[i] * uu[j] + b * (uu[i] * xx[j] + xx[i] * uu[j]) + c * xx[i] * xx[j];
        }
    }
    Ok(FundamentalTensor { g, scalars: sc })
}

/// Grid for [`validity_scan`]: `counts` nodes per axis over `r`, the
/// fraction `s/r`, `z` and `x0`.
#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub r: (f64, f64, usize),
    pub s_frac: (f64, f64, usize),
    pub z: (f64, f64, usize),
    pub x0: (f64, f64, usize),
}

impl GridSpec {
    pub fn standard(model: &PhiModel) -> Self {
        let (lo, hi) = model.x0_interval;
        GridSpec { r: (0.1, 0.9 * model.rho, 17), s_frac: (-0.9, 0.9, 17), z: (-2.0, 2.0, 17), x0: (lo, hi, 3) }
    }

    fn axis((lo, hi, k): (f64, f64, usize)) -> Vec<f64> {
        match k {
            0 => vec![],
            1 => vec![0.5 * (lo + hi)],
            _ => (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect(),
        }
    }

    pub fn points(&self) -> Vec<[f64; 4]> {
        let mut out = Vec::new();
        for &x0 in &Self::axis(self.x0) {
            for &r in &Self::axis(self.r) {
                for &f in &Self::axis(self.s_frac) {
                    for &z in &Self::axis(self.z) {
                        out.push([x0, r, f * r, z]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidityViolation {
    pub point: [f64; 4],
    pub phi: Option<f64>,
    pub omega: Option<f64>,
    pub lambda: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidityReport {
    pub points: usize,
    pub min_phi: f64,
    pub min_omega: f64,
    pub min_lambda: f64,
    pub valid: bool,
    pub violation_count: usize,
    /// The first violations in grid order.
    pub violations: Vec<ValidityViolation>,
}

const LISTED_VIOLATIONS: usize = 20;

pub fn validity_scan(model: &PhiModel, grid: &GridSpec) -> ValidityReport {
    let pts = grid.points();
    let results: Vec<std::result::Result<FundamentalScalars, String>> = pts
        .par_iter()
        .map(|&b| model.phi_jet(b, JetOrders::new(2, 0)).map(|j| fundamental_scalars(&j)).map_err(|e| e.to_string()))
        .collect();
    let mut rep = ValidityReport {
        points: pts.len(),
        min_phi: f64::INFINITY,
        min_omega: f64::INFINITY,
        min_lambda: f64::INFINITY,
        valid: true,
        violation_count: 0,
        violations: Vec::new(),
    };
    for (p, res) in pts.iter().zip(results) {
        let violation = match res {
            Ok(sc) => {
                rep.min_phi = rep.min_phi.min(sc.f_over_u);
                rep.min_omega = rep.min_omega.min(sc.omega);
                rep.min_lambda = rep.min_lambda.min(sc.lambda);
                (!sc.is_valid(model.n)).then(|| ValidityViolation {
                    point: *p,
                    phi: Some(sc.f_over_u),
                    omega: Some(sc.omega),
                    lambda: Some(sc.lambda),
                    error: None,
                })
            }
            Err(e) => Some(ValidityViolation { point: *p, phi: None, omega: None, lambda: None, error: Some(e) }),
        };
        if let Some(v) = violation {
            rep.valid = false;
            rep.violation_count += 1;
            if rep.violations.len() < LISTED_VIOLATIONS {
                rep.violations.push(v);
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coords::embed;
    use crate::coords::random_orthogonal;
    use approx::assert_relative_eq;

    fn model(text: &str) -> PhiModel {
        PhiModel::parse(text, BTreeMap::new(), 3).unwrap()
    }

    #[test]
    fn jet_indices_respect_orders() {
        let o = JetOrders::new(6, 1);
        let idx = o.indices();
        assert_eq!(idx.len(), 28 + 21 + 21);
        assert!(idx.iter().all(|&i| o.contains(i)));
        assert!(!o.contains([1, 1, 0, 0]));
    }

    #[test]
    fn phi_jet_examples() {
        let m = model("exp(x0)*z^2");
        let j = m.phi_jet([0.3, 0.5, 0.1, 0.7], JetOrders::new(2, 1)).unwrap();
        assert_relative_eq!(j.at(0, 0, 0, 2), 2.0 * 0.3f64.exp(), max_relative = 1e-15);
        let j = m.phi_jet([0.0, 0.5, 0.1, 1.0], JetOrders::new(2, 1)).unwrap();
        assert_eq!(j.at(1, 0, 0, 1), 2.0);
        let m = model("sqrt(1+z^2)");
        let j = m.phi_jet([0.0, 0.5, 0.1, 1.0], JetOrders::new(1, 0)).unwrap();
        assert_eq!(j.at(0, 0, 0, 1), 0.7071067811865475);
    }

    #[test]
    fn euclidean_scalars() {
        let m = model("sqrt(1+z^2)");
        let sc = fundamental_scalars(&m.phi_jet([0.0, 0.4, 0.2, 1.0], JetOrders::new(2, 0)).unwrap());
        assert_relative_eq!(sc.omega, 0.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(sc.lambda, 0.25, max_relative = 1e-15);
    }

    #[test]
    fn euclidean_tensor_is_identity() {
        let m = model("sqrt(1+z^2)");
        let x = ConfigPoint::new(0.2, vec![0.3, -0.1, 0.4]);
        let y = TangentVector::new(0.7, vec![1.0, 0.5, -0.2]);
        let g = metric_tensor(&m, &x, &y).unwrap();
        let err = (g.matrix() - DMatrix::<f64>::identity(4, 4)).abs().max();
        assert!(err < 1e-14, "{err}");
        assert_relative_eq!(g.determinant_closed_form(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn example_profile_scalars_positive() {
        let mut params = BTreeMap::new();
        params.insert("k".to_string(), 1.0);
        let m = PhiModel::parse("sqrt(1+r^2-s^2+exp(x0)*z^2) + s*k/(1+r^2)", params, 3).unwrap();
        let sc = m.fundamental_scalars_at(&ReducedPoint { x0: 0.0, r: 0.5, s: 0.2, z: 0.3, u: 1.0 }).unwrap();
        assert!(sc.omega > 0.0 && sc.lambda > 0.0);
    }

    #[test]
    fn validity_of_euclidean_grid() {
        let m = model("sqrt(1+z^2)");
        let rep = validity_scan(&m, &GridSpec::standard(&m));
        assert!(rep.valid);
        assert_relative_eq!(rep.min_omega, 5f64.powf(-0.5), max_relative = 1e-14);
    }

    #[test]
    fn violations_are_listed() {
        let m = model("z");
        let rep = validity_scan(&m, &GridSpec::standard(&m));
        assert!(!rep.valid);
        assert!(rep.violation_count > 0 && !rep.violations.is_empty());
    }

    #[test]
    fn unbound_parameter_rejected() {
        assert!(PhiModel::parse("k*z", BTreeMap::new(), 3).is_err());
        assert!(PhiModel::parse("z", BTreeMap::new(), 1).is_err());
    }

    #[test]
    fn homogeneity_of_f() {
        let m = model("sqrt(1+r^2-s^2+exp(x0)*z^2) + s/(1+r^2)");
        let p = ReducedPoint { x0: 0.1, r: 0.5, s: 0.2, z: 0.3, u: 1.3 };
        let (x, y) = embed(&p, &random_orthogonal(4, 3));
        let f1 = m.finsler(&x, &y).unwrap();
        let f2 = m.finsler(&x, &y.scaled(2.5)).unwrap();
        assert_relative_eq!(f2, 2.5 * f1, max_relative = 1e-12);
    }
}
