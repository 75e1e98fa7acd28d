//! Built-in profiles: analytic baselines and the cylindrically symmetric
//! Douglas families, with parameter constraints and reference fields.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::coords::{symmetry_check_with, ReducedPoint};
use crate::douglas::{
    douglas_closed, douglas_oracle, fit_coefficients, flatness_residuals, projective_flatness, reduced_pde_residual,
    rt_fields, RtFields,
};
use crate::error::{Error, Result};
use crate::expr::{parse, Coord, Expr, Symbol, Tape};
use crate::finsler::{validity_scan, GridSpec, PhiModel};
use crate::report::{CheckResult, Discrepancy, WorstPoint};
use crate::spray::{spray_coefficients, spray_oracle_pq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Yes,
    No,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Field {
    U,
    R,
    T,
    L,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::U => "U",
            Field::R => "R",
            Field::T => "T",
            Field::L => "L",
        }
    }

    fn of(self, f: &RtFields) -> f64 {
        match self {
            Field::U => f.u.value(),
            Field::R => f.r.value(),
            Field::T => f.t.value(),
            Field::L => f.l.value(),
        }
    }
}

/// A parameter: a constant (`var = None`) or a function of one coordinate.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSlot {
    pub name: &'static str,
    pub var: Option<&'static str>,
    pub default: &'static str,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub enum Bound {
    AbsLess(f64),
    Positive,
}

/// A bound on an expression in the parameters, checked over the domain of
/// its single free coordinate.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSpec {
    pub expr: &'static str,
    pub bound: Bound,
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub summary: &'static str,
    pub template: &'static str,
    pub params: &'static [ParamSlot],
    pub constraints: &'static [ConstraintSpec],
    /// Reference expressions in the parameters, their derivatives
    /// (`gp` for `g'`, ...), `n` and the reduced coordinates.
    pub references: &'static [(Field, &'static str)],
    pub douglas: Expectation,
    pub projectively_flat: Expectation,
}

const fn slot(name: &'static str, var: Option<&'static str>, default: &'static str) -> ParamSlot {
    ParamSlot { name, var, default }
}

const fn bound(expr: &'static str, bound: Bound) -> ConstraintSpec {
    ConstraintSpec { expr, bound }
}

static CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        id: "euclidean",
        summary: "Euclidean metric on I x B^n",
        template: "sqrt(1+z^2)",
        params: &[],
        constraints: &[],
        references: &[(Field::U, "0"), (Field::L, "0")],
        douglas: Expectation::Yes,
        projectively_flat: Expectation::Yes,
    },
    CatalogEntry {
        id: "minkowski-randers",
        summary: "constant Randers norm sqrt(1+z^2) + b z",
        template: "sqrt(1+z^2) + b*z",
        params: &[slot("b", None, "1/2")],
        constraints: &[bound("b", Bound::AbsLess(1.0))],
        references: &[(Field::U, "0"), (Field::L, "0")],
        douglas: Expectation::Yes,
        projectively_flat: Expectation::Yes,
    },
    CatalogEntry {
        id: "ex4.1",
        summary: "sqrt(1+r^2-s^2+e^x0 z^2) + s k/(1+r^2)",
        template: "sqrt(1+r^2-s^2+exp(x0)*z^2) + s*k/(1+r^2)",
        params: &[slot("k", None, "1")],
        constraints: &[bound("k", Bound::AbsLess(2.0))],
        references: &[
            (Field::U, "-(r^2-s^2+1)/(1+r^2)"),
            (Field::R, "(1/4)*(n*r^2*z-4*n*s+n*z+4*s)*z/((n+2)*(1+r^2))"),
            (Field::T, "(1/2)*(r^2*z-6*s+z)/((n+2)*(1+r^2))"),
        ],
        douglas: Expectation::Yes,
        projectively_flat: Expectation::No,
    },
    CatalogEntry {
        id: "ex4.2",
        summary: "sqrt(1+r^2+s^2+e^x0 z^2) + s k/(1+r^2)",
        template: "sqrt(1+r^2+s^2+exp(x0)*z^2) + s*k/(1+r^2)",
        params: &[slot("k", None, "1/2")],
        constraints: &[bound("k", Bound::AbsLess(2.0)), bound("k/(1+r^2)", Bound::AbsLess(1.0))],
        references: &[
            (Field::U, "s^2/(1+3*r^2+2*r^4)"),
            (Field::T, "(1/2)*(2*r^4*z-8*r^2*s+3*r^2*z-2*s+z)/((n+2)*(1+3*r^2+2*r^4))"),
        ],
        douglas: Expectation::Yes,
        projectively_flat: Expectation::No,
    },
    CatalogEntry {
        id: "ex4.3",
        summary: "sqrt(h^2 g^2 z^2 + 1)/g + h z with h(x0) > 0, g(r) > 0",
        template: "sqrt(h^2*g^2*z^2+1)/g + h*z",
        params: &[slot("g", Some("r"), "exp(r^2/2)"), slot("h", Some("x0"), "1/2")],
        constraints: &[bound("h", Bound::Positive), bound("g", Bound::Positive)],
        references: &[
            (Field::U, "gp/(2*r*g)"),
            (Field::R, "n*(g*hp*r*z + 2*h*gp*s)*z/(2*(n+2)*r*g*h)"),
            (Field::T, "(g*hp*r*z + 2*h*gp*s)/((n+2)*r*g*h)"),
        ],
        douglas: Expectation::Yes,
        projectively_flat: Expectation::No,
    },
    CatalogEntry {
        id: "ex4.4",
        summary: "h z + sqrt(g^2 z^2 + 1)/g with |h(x0)| < 1, g(r) > 0",
        template: "h*z + sqrt(g^2*z^2+1)/g",
        params: &[slot("g", Some("r"), "1+r^2"), slot("h", Some("x0"), "1/2")],
        constraints: &[bound("h", Bound::AbsLess(1.0)), bound("g", Bound::Positive)],
        references: &[(Field::U, "gp/(2*r*g)"), (Field::L, "s*z*gp/(2*r*g)")],
        douglas: Expectation::Yes,
        projectively_flat: Expectation::No,
    },
    CatalogEntry {
        id: "ex4.5",
        summary: "h z + (1 + (2 g^2 z^2 + 1)/sqrt(g^2 z^2 + 1))/g with |h(x0)| < 1, g(r) > 0",
        template: "h*z + (1 + (2*g^2*z^2+1)/sqrt(g^2*z^2+1))/g",
        params: &[slot("g", Some("r"), "1+r^2"), slot("h", Some("x0"), "1/2")],
        constraints: &[bound("h", Bound::AbsLess(1.0)), bound("g", Bound::Positive)],
        references: &[(Field::U, "gp/(2*r*g)"), (Field::L, "s*z*gp/(2*r*g)")],
        douglas: Expectation::Yes,
        projectively_flat: Expectation::No,
    },
    CatalogEntry {
        id: "ex4.6",
        summary: "h z + (1 + (2 g^2 z^2 + f)/sqrt(g^2 z^2 + f))/g with |h(x0)| < 1, g(r) > 0, f(x0) > 0",
        template: "h*z + (1 + (2*g^2*z^2+f)/sqrt(g^2*z^2+f))/g",
        params: &[slot("g", Some("r"), "1+r^2"), slot("h", Some("x0"), "1/2"), slot("f", Some("x0"), "2+sin(x0)")],
        constraints: &[bound("h", Bound::AbsLess(1.0)), bound("g", Bound::Positive), bound("f", Bound::Positive)],
        references: &[
            (Field::U, "gp/(2*r*g)"),
            (Field::R, "-(1/12)*(4*n*g^2*fp*r*z^2 - 12*n*f*g*gp*s*z + (n+2)*f*fp*r)/((n+2)*r*g^2*f)"),
            (Field::T, "-(2/3)*(g*fp*r*z - 3*f*gp*s)/((n+2)*r*g*f)"),
        ],
        douglas: Expectation::Yes,
        projectively_flat: Expectation::No,
    },
];

pub fn catalog() -> &'static [CatalogEntry] {
    CATALOG
}

pub fn entry(id: &str) -> Result<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.id == id).ok_or_else(|| Error::UnknownCatalog(id.to_string()))
}

/// A catalog entry with its parameters bound.
#[derive(Debug, Clone)]
pub struct Instance {
    pub entry: &'static CatalogEntry,
    pub params: BTreeMap<String, String>,
    pub model: PhiModel,
    bound: Vec<(&'static ParamSlot, Expr)>,
}

const CONSTRAINT_NODES: usize = 201;

impl Instance {
    fn substitute(&self, e: &Expr) -> Expr {
        let mut out = e.clone();
        for (slot, value) in &self.bound {
            if let Some(v) = slot.var.and_then(Coord::from_name) {
                out = out.substitute(&format!("{}p", slot.name), &value.diff(v));
            }
            out = out.substitute(slot.name, value);
        }
        out
    }

    /// Reference expressions with parameters, derivatives and `n` bound.
    pub fn references(&self) -> Result<Vec<(Field, String, Expr)>> {
        self.entry
            .references
            .iter()
            .map(|&(field, text)| {
                let e = self.substitute(&parse(text)?).substitute("n", &Expr::int(self.model.n() as i64));
                Ok((field, text.to_string(), e))
            })
            .collect()
    }

    /// Moves the instance to another ball radius and `x0` interval,
    /// rechecking the constraints there.
    pub fn with_domain(mut self, rho: f64, x0: (f64, f64)) -> Result<Instance> {
        if !(rho > 0.0) || !(x0.0 <= x0.1) {
            return Err(Error::InvalidInput(format!("invalid domain: rho = {rho}, x0 in [{}, {}]", x0.0, x0.1)));
        }
        self.model = self.model.with_rho(rho).with_x0_interval(x0.0, x0.1);
        self.check_constraints()?;
        Ok(self)
    }

    pub fn check_constraints(&self) -> Result<()> {
        for c in self.entry.constraints {
            let e = self.substitute(&parse(c.expr)?);
            let coords: Vec<Coord> = e
                .free_symbols()
                .into_iter()
                .filter_map(|s| match s {
                    Symbol::Coord(c) => Some(c),
                    Symbol::Param(_) => None,
                })
                .collect();
            let (lo, hi) = match coords.as_slice() {
                [] => (0.0, 0.0),
                [Coord::R] => (0.0, self.model.rho()),
                [Coord::X0] => self.model.x0_interval(),
                _ => return Err(Error::Constraint(format!("`{}` depends on more than one variable", c.expr))),
            };
            let tape = Tape::compile(std::slice::from_ref(&e), &BTreeMap::new())?;
            let nodes = if coords.is_empty() { 1 } else { CONSTRAINT_NODES };
            for i in 0..nodes {
                let t = if nodes == 1 { lo } else { lo + (hi - lo) * i as f64 / (nodes - 1) as f64 };
                let mut at = [0.0; 4];
                if let Some(c) = coords.first() {
                    at[c.index()] = t;
                }
                let v = tape.eval(at)?[0];
                let ok = match c.bound {
                    Bound::AbsLess(m) => v.abs() < m,
                    Bound::Positive => v > 0.0,
                };
                if !ok {
                    let what = match c.bound {
                        Bound::AbsLess(m) => format!("|{}| < {m}", c.expr),
                        Bound::Positive => format!("{} > 0", c.expr),
                    };
                    let place = coords.first().map(|c| format!(" at {} = {t}", c.name())).unwrap_or_default();
                    return Err(Error::Constraint(format!("{what} fails{place} (value {v})")));
                }
            }
        }
        Ok(())
    }
}

fn bind(id: &str, params: &BTreeMap<String, String>, n: usize) -> Result<Instance> {
    let entry = entry(id)?;
    for name in params.keys() {
        if !entry.params.iter().any(|s| s.name == name) {
            let known: Vec<&str> = entry.params.iter().map(|s| s.name).collect();
            return Err(Error::InvalidInput(format!("`{id}` has no parameter `{name}` (parameters: {known:?})")));
        }
    }
    let mut resolved = BTreeMap::new();
    let mut bound = Vec::new();
    for slot in entry.params {
        let text = params.get(slot.name).map(String::as_str).unwrap_or(slot.default);
        let value = parse(text)?;
        for sym in value.free_symbols() {
            let allowed = matches!((&sym, slot.var), (Symbol::Coord(c), Some(v)) if c.name() == v);
            if !allowed {
                let dep = slot.var.map(|v| format!("a function of {v} only")).unwrap_or_else(|| "a constant".into());
                return Err(Error::InvalidInput(format!(
                    "parameter `{}` = `{text}` must be {dep}, but it uses `{}`",
                    slot.name,
                    sym.name()
                )));
            }
        }
        resolved.insert(slot.name.to_string(), text.to_string());
        bound.push((slot, value));
    }
    let mut phi = parse(entry.template)?;
    for (slot, value) in &bound {
        phi = phi.substitute(slot.name, value);
    }
    let model = PhiModel::new(phi, BTreeMap::new(), n)?;
    Ok(Instance { entry, params: resolved, model, bound })
}

/// Binds parameters (defaults for the ones not given) and checks the
/// entry's constraints; the model has `n`, `ρ = 1` and `x0 ∈ [−1, 1]`.
pub fn catalog_instance(id: &str, params: &BTreeMap<String, String>, n: usize) -> Result<Instance> {
    let inst = bind(id, params, n)?;
    inst.check_constraints()?;
    Ok(inst)
}

/// As [`catalog_instance`] without the constraint check.
pub fn catalog_instance_unchecked(id: &str, params: &BTreeMap<String, String>, n: usize) -> Result<Instance> {
    bind(id, params, n)
}

pub fn catalog_get(id: &str, params: &BTreeMap<String, String>) -> Result<PhiModel> {
    Ok(catalog_instance(id, params, 3)?.model)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    pub samples: usize,
    pub reference_points: usize,
    pub seed: u64,
}

impl VerifyOptions {
    pub fn new(seed: u64) -> Self {
        VerifyOptions { samples: 50, reference_points: 20, seed }
    }
}

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const SPRAY_TOL: f64 = 1e-8;
pub const DOUGLAS_REL_TOL: f64 = 1e-7;
pub const DOUGLAS_ABS_TOL: f64 = 1e-10;
pub const DOUGLAS_ZERO_TOL: f64 = 1e-9;
pub const NON_DOUGLAS_THRESHOLD: f64 = 1e-4;
pub const RESIDUAL_TOL: f64 = 1e-9;
pub const FIT_TOL: f64 = 1e-9;
pub const PDE_TOL: f64 = 1e-8;
pub const REFERENCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub id: String,
    pub params: BTreeMap<String, String>,
    pub n: usize,
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<CheckResult>,
    pub discrepancies: Vec<Discrepancy>,
    pub douglas_expected: Expectation,
    pub projectively_flat_expected: Expectation,
    pub projectively_flat: Option<bool>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn run(name: &str, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| CheckResult::failed(name, e))
}

/// Largest `|computed − reference|` of one field over the given points.
pub fn compare_reference(
    model: &PhiModel,
    field: Field,
    reference: &Expr,
    points: &[ReducedPoint],
) -> Result<(f64, ReducedPoint, f64, f64)> {
    let tape = Tape::compile(std::slice::from_ref(reference), model.params())?;
    let mut worst = (f64::NEG_INFINITY, points[0], 0.0, 0.0);
    for p in points {
        let computed = field.of(&rt_fields(model, p, 0)?);
        let expected = tape.eval([p.x0, p.r, p.s, p.z])?[0];
        let d = (computed - expected).abs();
        if d > worst.0 || d.is_nan() {
            worst = (if d.is_nan() { f64::INFINITY } else { d }, *p, computed, expected);
        }
    }
    Ok(worst)
}

pub fn catalog_verify(id: &str, params: &BTreeMap<String, String>, seed: u64) -> Result<VerificationReport> {
    let inst = catalog_instance(id, params, 3)?;
    Ok(verify_instance(&inst, &VerifyOptions::new(seed)))
}

pub fn verify_instance(inst: &Instance, opts: &VerifyOptions) -> VerificationReport {
    let model = &inst.model;
    let n = model.n();
    let entry = inst.entry;
    let mut checks = Vec::new();
    let mut discrepancies = Vec::new();

    let scan = validity_scan(model, &GridSpec::standard(model));
    checks.push(
        CheckResult {
            name: "validity".into(),
            max_abs: scan.violation_count as f64,
            tolerance: 1.0,
            passed: scan.valid,
            worst: None,
            detail: None,
        }
        .with_detail(format!(
            "min phi {:e}, min Omega {:e}, min Lambda {:e} over {} grid points",
            scan.min_phi, scan.min_omega, scan.min_lambda, scan.points
        )),
    );

    checks.push(run("symmetry", || {
        let rep = symmetry_check_with(n, &model.region(), opts.samples, opts.seed, |x, y| model.finsler(x, y))?;
        let worst = rep.worst.map(|(x, y)| WorstPoint { reduced: crate::coords::reduce(&x, &y).unwrap(), x: Some(x), y: Some(y) });
        Ok(CheckResult::below("symmetry", rep.max_deviation, SYMMETRY_TOL, worst))
    }));

    let samples = match model.sample_valid(opts.samples, opts.seed) {
        Ok(s) => s,
        Err(e) => {
            checks.push(CheckResult::failed("sampling", e));
            return finish(inst, opts, checks, discrepancies, None);
        }
    };

    checks.push(run("spray cross-oracle", || {
        let mut worst = (0.0f64, None);
        for i in 0..samples.len() {
            let (x, y) = samples.embedded(i, n);
            let e = spray_coefficients(model, &x, &y)?.relative_error(&spray_oracle_pq(model, &x, &y)?, 1e-12);
            if worst.1.is_none() || e > worst.0 {
                worst = (e, Some(WorstPoint::full(samples.points[i], x, y)));
            }
        }
        Ok(CheckResult::below("spray cross-oracle", worst.0, SPRAY_TOL, worst.1))
    }));

    let mut max_d = (0.0f64, None);
    checks.push(run("douglas closed vs oracle", || {
        let mut worst = (0.0f64, None);
        for i in 0..samples.len() {
            let (x, y) = samples.embedded(i, n);
            let oracle = douglas_oracle(model, &x, &y)?;
            let cmp = douglas_closed(model, &x, &y)?.compare(&oracle, DOUGLAS_REL_TOL, DOUGLAS_ABS_TOL);
            let wp = WorstPoint::full(samples.points[i], x, y);
            if max_d.1.is_none() || oracle.max_abs() > max_d.0 {
                max_d = (oracle.max_abs(), Some(wp.clone()));
            }
            if worst.1.is_none() || cmp.worst_ratio > worst.0 {
                worst = (cmp.worst_ratio, Some(wp));
            }
        }
        let mut c = CheckResult::below("douglas closed vs oracle", worst.0, 1.0, worst.1);
        c.passed = worst.0 <= 1.0;
        Ok(c.with_detail("max over points of |closed - oracle| / max(1e-10, 1e-7 |oracle|)"))
    }));
    let douglas_ok = max_d.1.is_some();
    if douglas_ok {
        let c = match entry.douglas {
            Expectation::Yes => CheckResult::below("douglas vanishing", max_d.0, DOUGLAS_ZERO_TOL, max_d.1),
            Expectation::No => CheckResult::above("douglas non-vanishing", max_d.0, NON_DOUGLAS_THRESHOLD, max_d.1),
            Expectation::Unknown => {
                let mut c = CheckResult::below("douglas vanishing", max_d.0, DOUGLAS_ZERO_TOL, max_d.1);
                c.passed = true;
                c.with_detail("informational")
            }
        };
        checks.push(c);
    }

    if entry.douglas == Expectation::Yes {
        if n >= 3 {
            checks.push(run("flatness residuals", || {
                let res = flatness_residuals(model, &samples)?;
                let (k, largest) =
                    res.max_abs.iter().enumerate().fold((0, 0.0f64), |a, (k, &v)| if v > a.1 { (k, v) } else { a });
                let worst = res.worst_points[k].map(WorstPoint::reduced);
                Ok(CheckResult::below("flatness residuals", largest, RESIDUAL_TOL, worst)
                    .with_detail(format!("largest: {}", crate::douglas::RESIDUAL_NAMES[k])))
            }));
        }
        checks.push(run("coefficient fit", || {
            let (lo, hi) = model.x0_interval();
            let c = fit_coefficients(model, 0.5 * (lo + hi), 0.5 * model.rho(), 16)?;
            Ok(CheckResult::below("coefficient fit", c.fit_residual.max(c.l_reconstruction_residual), FIT_TOL, None)
                .with_detail(format!("f = {:?}, g = {:?}, h = {:?} at x0 = {}, r = {}", c.f, c.g, c.h, c.x0, c.r)))
        }));
        checks.push(run("reduced pde", || {
            let res = reduced_pde_residual(model, &samples)?;
            Ok(CheckResult::below("reduced pde", res.max_abs, PDE_TOL, res.worst.map(WorstPoint::reduced)))
        }));
    }

    let mut flat = None;
    checks.push(run("projective flatness", || {
        let pf = projective_flatness(model, &samples)?;
        flat = Some(pf.projectively_flat);
        let sup = pf.sup_u.max(pf.sup_l).max(pf.sup_p1).max(pf.sup_p2);
        let mut c = CheckResult::below("projective flatness", sup, pf.tolerance, None);
        c.passed = match entry.projectively_flat {
            Expectation::Yes => pf.projectively_flat,
            Expectation::No => !pf.projectively_flat,
            Expectation::Unknown => true,
        };
        Ok(c.with_detail(format!(
            "sup|U| {:e}, sup|L| {:e}, sup|p1| {:e}, sup|p2| {:e}; expected {:?}",
            pf.sup_u, pf.sup_l, pf.sup_p1, pf.sup_p2, entry.projectively_flat
        )))
    }));

    let points: Vec<ReducedPoint> = samples.points.iter().take(opts.reference_points.max(1)).copied().collect();
    match inst.references() {
        Ok(refs) => {
            for (field, text, e) in refs {
                let name = format!("reference {}", field.name());
                match compare_reference(model, field, &e, &points) {
                    Ok((d, p, _, _)) if d < REFERENCE_TOL => {
                        checks.push(CheckResult::below(name, d, REFERENCE_TOL, Some(WorstPoint::reduced(p))).with_detail(text));
                    }
                    Ok((d, p, computed, expected)) => discrepancies.push(Discrepancy {
                        entry: entry.id.to_string(),
                        field: field.name().to_string(),
                        reference: text,
                        point: p,
                        computed,
                        expected,
                        max_abs_diff: d,
                    }),
                    Err(e) => checks.push(CheckResult::failed(name, e)),
                }
            }
        }
        Err(e) => checks.push(CheckResult::failed("references", e)),
    }

    finish(inst, opts, checks, discrepancies, flat)
}

fn finish(
    inst: &Instance,
    opts: &VerifyOptions,
    checks: Vec<CheckResult>,
    discrepancies: Vec<Discrepancy>,
    flat: Option<bool>,
) -> VerificationReport {
    VerificationReport {
        id: inst.entry.id.to_string(),
        params: inst.params.clone(),
        n: inst.model.n(),
        seed: opts.seed,
        samples: opts.samples,
        passed: checks.iter().all(|c| c.passed),
        checks,
        discrepancies,
        douglas_expected: inst.entry.douglas,
        projectively_flat_expected: inst.entry.projectively_flat,
        projectively_flat: flat,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn ex41_template() {
        let m = catalog_get("ex4.1", &p(&[("k", "1")])).unwrap();
        let direct = PhiModel::parse("sqrt(1+r^2-s^2+exp(x0)*z^2)+s/(1+r^2)", BTreeMap::new(), 3).unwrap();
        for b in [[0.1, 0.5, 0.2, 0.7], [-0.4, 0.8, -0.6, -1.5]] {
            assert!((m.phi_value(b).unwrap() - direct.phi_value(b).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn function_parameters() {
        let m = catalog_get("ex4.5", &p(&[("h", "1/2"), ("g", "1+r^2")])).unwrap();
        let (r, z) = (0.4, 0.9);
        let g: f64 = 1.0 + r * r;
        let expect = 0.5 * z + (1.0 + (2.0 * g * g * z * z + 1.0) / (g * g * z * z + 1.0).sqrt()) / g;
        assert!((m.phi_value([0.3, r, 0.1, z]).unwrap() - expect).abs() < 1e-14);
        assert!(catalog_get("ex4.3", &p(&[("g", "exp(r^2/2)"), ("h", "1/2")])).is_ok());
    }

    #[test]
    fn constraint_violations() {
        assert!(matches!(catalog_get("ex4.1", &p(&[("k", "3")])), Err(Error::Constraint(_))));
        assert!(matches!(catalog_get("ex4.5", &p(&[("h", "1.5")])), Err(Error::Constraint(_))));
        assert!(matches!(catalog_get("ex4.5", &p(&[("g", "r-0.5")])), Err(Error::Constraint(_))));
        assert!(matches!(catalog_get("ex4.3", &p(&[("h", "-1")])), Err(Error::Constraint(_))));
        assert!(matches!(catalog_get("ex4.2", &p(&[("k", "1.5")])), Err(Error::Constraint(_))));
        assert!(matches!(catalog_get("ex4.6", &p(&[("f", "sin(x0)")])), Err(Error::Constraint(_))));
    }

    #[test]
    fn bad_parameters() {
        assert!(matches!(catalog_get("nope", &p(&[])), Err(Error::UnknownCatalog(_))));
        assert!(matches!(catalog_get("ex4.3", &p(&[("g", "1+x0")])), Err(Error::InvalidInput(_))));
        assert!(matches!(catalog_get("ex4.1", &p(&[("k", "r")])), Err(Error::InvalidInput(_))));
        assert!(matches!(catalog_get("ex4.1", &p(&[("q", "1")])), Err(Error::InvalidInput(_))));
        assert!(matches!(catalog_get("ex4.1", &p(&[("k", "1+")])), Err(Error::Expr(_))));
    }

    #[test]
    fn out_of_range_k_fails_the_scan() {
        let inst = catalog_instance_unchecked("ex4.1", &p(&[("k", "3")]), 3).unwrap();
        assert!(!validity_scan(&inst.model, &GridSpec::standard(&inst.model)).valid);
    }

    #[test]
    fn defaults_pass_the_scan() {
        for e in catalog() {
            let m = catalog_get(e.id, &BTreeMap::new()).unwrap();
            let scan = validity_scan(&m, &GridSpec::standard(&m));
            assert!(scan.valid, "{}: {:?}", e.id, scan.violations.first());
        }
    }

    #[test]
    fn references_resolve_derivatives() {
        let inst = catalog_instance("ex4.3", &p(&[("g", "exp(r^2/2)"), ("h", "exp(x0)")]), 3).unwrap();
        let refs = inst.references().unwrap();
        let u = &refs[0].2;
        let t = &refs[2].2;
        let at = crate::expr::Bindings::coords(0.2, 0.6, 0.3, 0.8);
        assert!((u.evaluate(&at).unwrap() - 0.5).abs() < 1e-14);
        assert!((t.evaluate(&at).unwrap() - (0.8 + 0.6) / 5.0).abs() < 1e-14);
    }
}
