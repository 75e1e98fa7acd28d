//! One line per acceptance criterion; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;

use cylfin::catalog::{catalog, catalog_instance, catalog_verify, compare_reference, Field, Instance};
use cylfin::coords::{rng_for, symmetry_check_with, ConfigPoint, ReducedPoint, TangentVector};
use cylfin::douglas::{
    douglas_closed, douglas_oracle, douglas_oracle_shifted, fit_coefficients, flatness_residuals,
    flatness_residuals_at, psi_identity_defects, reduced_pde_residual, rt_fields,
};
use cylfin::finsler::{metric_tensor, PhiModel};
use cylfin::jet::SzJet;
use cylfin::spray::{spray_coefficients, spray_divergence, spray_oracle_pq};
use cylfin::Result;
use cylfin_cli::geodesic::geodesic_integrate;

const NON_DOUGLAS: [&str; 2] = ["sqrt(1+z^2)+0.1*s*z^2", "sqrt(1+r^2-s^2+z^2)+0.1*z^3/(1+s^2)"];
const SEED: u64 = 20240601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

fn instance(id: &str, n: usize) -> Instance {
    catalog_instance(id, &BTreeMap::new(), n).unwrap_or_else(|e| panic!("{id}: {e}"))
}

fn catalog_models(n: usize) -> Vec<(String, PhiModel)> {
    catalog().iter().map(|e| (e.id.to_string(), instance(e.id, n).model)).collect()
}

fn raw(text: &str, n: usize) -> PhiModel {
    PhiModel::parse(text, BTreeMap::new(), n).unwrap()
}

/// Central second differences of F²/2 in the fiber.
fn numerical_hessian(model: &PhiModel, x: &ConfigPoint, y: &TangentVector, h: f64) -> Result<Vec<Vec<f64>>> {
    let base = y.full();
    let m = base.len();
    let e = |v: &[f64]| -> Result<f64> {
        let f = model.finsler(x, &TangentVector::from_full(v))?;
        Ok(0.5 * f * f)
    };
    let mut out = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..m {
            let mut val = 0.0;
            for (da, db, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                let mut v = base.clone();
                v[a] += da * h;
                v[b] += db * h;
                val += sign * e(&v)?;
            }
            out[a][b] = val / (4.0 * h * h);
        }
    }
    Ok(out)
}

fn criterion_1() -> Result<Outcome> {
    let (mut det, mut hess) = (0.0f64, 0.0f64);
    for n in [3, 4] {
        for (_, model) in catalog_models(n) {
            let set = model.sample_valid(100, SEED)?;
            for i in 0..set.len() {
                let (x, y) = set.embedded(i, n);
                let g = metric_tensor(&model, &x, &y)?;
                let d = g.determinant();
                det = det.max((d - g.determinant_closed_form()).abs() / d.abs());
                let num = numerical_hessian(&model, &x, &y, 1e-4)?;
                let mat = g.matrix();
                for a in 0..=n {
                    for b in 0..=n {
                        hess = hess.max((mat[(a, b)] - num[a][b]).abs() / mat[(a, b)].abs().max(1.0));
                    }
                }
            }
        }
    }
    outcome(det < 1e-9 && hess < 1e-6, format!("det identity {det:.2e} (< 1e-9), Hessian {hess:.2e} (< 1e-6)"))
}

fn criterion_2() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for (_, model) in catalog_models(3) {
        let set = model.sample_valid(100, SEED + 2)?;
        for i in 0..set.len() {
            let (x, y) = set.embedded(i, 3);
            let ours = spray_coefficients(&model, &x, &y)?;
            worst = worst.max(ours.relative_error(&spray_oracle_pq(&model, &x, &y)?, 1.0));
        }
    }
    outcome(worst < 1e-8, format!("max relative spray difference {worst:.2e} (< 1e-8)"))
}

fn criterion_3() -> Result<Outcome> {
    let mut models = catalog_models(3);
    models.extend(NON_DOUGLAS.iter().map(|t| (t.to_string(), raw(t, 3))));
    let (mut ratio, mut failed) = (0.0f64, Vec::new());
    for (id, model) in &models {
        let set = model.sample_valid(50, SEED + 3)?;
        for i in 0..set.len() {
            assert!(set.points[i].z.abs() >= 1e-2);
            let (x, y) = set.embedded(i, 3);
            let cmp = douglas_closed(model, &x, &y)?.compare(&douglas_oracle(model, &x, &y)?, 1e-7, 1e-10);
            ratio = ratio.max(cmp.worst_ratio);
            if !cmp.passes() && !failed.contains(id) {
                failed.push(id.clone());
            }
        }
    }
    outcome(failed.is_empty(), format!("{} models, worst ratio to tolerance {ratio:.2e}, failing {failed:?}", models.len()))
}

fn criterion_4() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut ok = true;
    for id in ["ex4.1", "ex4.2", "ex4.3", "ex4.5", "ex4.6"] {
        let model = instance(id, 3).model;
        let set = model.sample_valid(200, SEED + 4)?;
        let mut worst = 0.0f64;
        for i in 0..set.len() {
            let (x, y) = set.embedded(i, 3);
            worst = worst.max(douglas_oracle(&model, &x, &y)?.max_abs());
        }
        ok &= worst < 1e-9;
        parts.push(format!("{id} {worst:.1e}"));
    }
    outcome(ok, format!("max |D| over 200 points: {} (< 1e-9)", parts.join(", ")))
}

fn criterion_5() -> Result<Outcome> {
    let mut ok = true;
    let mut douglas_worst = 0.0f64;
    let mut mismatches = 0;
    for (_, model) in catalog_models(3) {
        let set = model.sample_valid(50, SEED + 5)?;
        douglas_worst = douglas_worst.max(flatness_residuals(&model, &set)?.largest());
        for (i, p) in set.points.iter().enumerate() {
            let res = flatness_residuals_at(&model, p)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let (x, y) = set.embedded(i, 3);
            let d = douglas_oracle(&model, &x, &y)?.max_abs();
            if (res < 1e-8) != (d < 1e-9) {
                mismatches += 1;
            }
        }
    }
    ok &= douglas_worst < 1e-9 && mismatches == 0;
    let mut non = Vec::new();
    for t in NON_DOUGLAS {
        let model = raw(t, 3);
        let largest = flatness_residuals(&model, &model.sample_valid(50, SEED + 5)?)?.largest();
        ok &= largest > 1e-4;
        non.push(format!("{largest:.2e}"));
    }
    outcome(
        ok,
        format!(
            "catalog residuals {douglas_worst:.2e} (< 1e-9), non-Douglas largest {} (> 1e-4), pointwise mismatches {mismatches}",
            non.join(", ")
        ),
    )
}

fn criterion_6() -> Result<Outcome> {
    let params: BTreeMap<String, String> =
        [("g", "exp(r^2/2)"), ("h", "exp(x0)")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    let model = catalog_instance("ex4.3", &params, 3)?.model;
    // The example's printed fields with g'/g = r, h'/h = 1 and n = 3:
    // U = 1/2, T = (z + 2s)/5, R = 3(z² + 2sz)/10.
    let mut field_gap = 0.0f64;
    for p in model.sample_valid(20, SEED + 6)?.points {
        let f = rt_fields(&model, &p, 1)?;
        let (s, z) = (p.s, p.z);
        field_gap = field_gap
            .max((f.u.value() - 0.5).abs())
            .max((f.t.value() - (z + 2.0 * s) / 5.0).abs())
            .max((f.r.value() - 0.3 * (z * z + 2.0 * s * z)).abs());
    }
    let want_f = [0.0, 0.0, 0.0, 0.5];
    let want_g = [0.0, 0.6, 0.6, 0.0];
    let want_h = [0.4, 0.2];
    let mut coef_gap = 0.0f64;
    let mut fit_res = 0.0f64;
    for (x0, r) in [(0.0, 0.5), (-0.3, 0.4), (0.6, 0.8)] {
        let c = fit_coefficients(&model, x0, r, 16)?;
        for k in 0..4 {
            coef_gap = coef_gap.max((c.f[k] - want_f[k]).abs()).max((c.g[k] - want_g[k]).abs());
        }
        for k in 0..2 {
            coef_gap = coef_gap.max((c.h[k] - want_h[k]).abs());
        }
        fit_res = fit_res.max(c.fit_residual);
    }
    let mut pde = 0.0f64;
    for (_, model) in catalog_models(3) {
        pde = pde.max(reduced_pde_residual(&model, &model.sample_valid(100, SEED + 6)?)?.max_abs);
    }
    outcome(
        field_gap < 1e-9 && coef_gap < 1e-9 && fit_res < 1e-9 && pde < 1e-8,
        format!(
            "printed fields {field_gap:.1e}, coefficients {coef_gap:.1e}, fit residual {fit_res:.1e} (< 1e-9), reduced pde {pde:.1e} (< 1e-8)"
        ),
    )
}

fn falling(a: usize, c: usize) -> f64 {
    (0..c).map(|k| (a - k) as f64).product()
}

fn criterion_7() -> Result<Outcome> {
    let mut rng = rng_for(SEED, 7);
    let mut worst = (0.0f64, "");
    for _ in 0..20 {
        let mut coef = [[0.0f64; 5]; 5];
        for (a, row) in coef.iter_mut().enumerate() {
            for (b, c) in row.iter_mut().enumerate() {
                if a + b <= 4 {
                    *c = rng.random_range(-2.0..2.0);
                }
            }
        }
        for _ in 0..20 {
            let s0: f64 = rng.random_range(-1.5..1.5);
            let mag: f64 = rng.random_range(0.05..2.0);
            let z0 = if rng.random::<bool>() { mag } else { -mag };
            let theta = SzJet::from_partials(s0, z0, 6, |c, d| {
                let mut v = 0.0;
                for a in c..5 {
                    for b in d..5 {
                        v += coef[a][b]
                            * falling(a, c)
                            * falling(b, d)
                            * s0.powi((a - c) as i32)
                            * z0.powi((b - d) as i32);
                    }
                }
                v
            });
            for (name, defect) in psi_identity_defects(&theta) {
                if defect > worst.0 {
                    worst = (defect, name);
                }
            }
        }
    }
    outcome(worst.0 < 1e-10, format!("largest identity defect {:.2e} ({}) (< 1e-10)", worst.0, worst.1))
}

fn criterion_8() -> Result<Outcome> {
    const LAMBDA: f64 = 2.5;
    let (mut rot, mut f_deg, mut g_deg, mut div_deg, mut d_deg, mut proj) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for n in [3, 4] {
        let mut models = catalog_models(n);
        models.extend(NON_DOUGLAS.iter().map(|t| (t.to_string(), raw(t, n))));
        for (_, model) in &models {
            rot = rot.max(symmetry_check_with(n, &model.region(), 30, SEED + 8, |x, y| model.finsler(x, y))?.max_deviation);
            let set = model.sample_valid(10, SEED + 8)?;
            for i in 0..set.len() {
                let (x, y) = set.embedded(i, n);
                let ys = y.scaled(LAMBDA);
                f_deg = f_deg.max(rel(model.finsler(&x, &ys)?, LAMBDA * model.finsler(&x, &y)?));
                let a = spray_coefficients(model, &x, &ys)?.full();
                let b = spray_coefficients(model, &x, &y)?.full();
                let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                for (p, q) in a.iter().zip(&b) {
                    g_deg = g_deg.max((p - LAMBDA * LAMBDA * q).abs() / scale);
                }
                div_deg = div_deg.max(rel(spray_divergence(model, &x, &ys)?, LAMBDA * spray_divergence(model, &x, &y)?));
                let da = douglas_oracle(model, &x, &ys)?;
                let db = douglas_oracle(model, &x, &y)?;
                let scale = db.max_abs().max(1.0);
                for (p, q) in da.comps.iter().zip(&db.comps) {
                    d_deg = d_deg.max((LAMBDA * p - q).abs() / scale);
                }
                let shifted = douglas_oracle_shifted(model, &x, &y, 0.37)?;
                for (p, q) in shifted.comps.iter().zip(&db.comps) {
                    proj = proj.max((p - q).abs());
                }
            }
        }
    }
    let deg = f_deg.max(g_deg).max(div_deg).max(d_deg);
    outcome(
        rot < 1e-12 && deg < 1e-10 && proj < 1e-8,
        format!(
            "rotation {rot:.1e} (< 1e-12), degrees F {f_deg:.1e} G {g_deg:.1e} div {div_deg:.1e} D {d_deg:.1e} (< 1e-10), projective {proj:.1e} (< 1e-8)"
        ),
    )
}

fn criterion_9() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut ok = true;
    for (id, model) in catalog_models(3) {
        let set = model.sample_valid(1, SEED + 9)?;
        let p = set.points[0];
        let start = ReducedPoint { r: p.r.min(0.5), s: p.s.clamp(-0.45, 0.45), x0: p.x0.clamp(-0.3, 0.3), ..p };
        let (x, y) = cylfin::coords::embed(&start, &cylfin::coords::random_orthogonal(SEED, 3));
        let y = y.scaled(0.2);
        let drift = geodesic_integrate(&model, &x, &y, 1.0, 1000)?.drift();
        ok &= drift < 1e-6;
        parts.push(format!("{id} {drift:.1e}"));
    }
    outcome(ok, format!("F drift over 1000 steps: {} (< 1e-6)", parts.join(", ")))
}

fn criterion_10() -> Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in ["ex4.3", "ex4.6"] {
        let inst = instance(id, 3);
        let points = inst.model.sample_valid(20, SEED + 10)?.points;
        for (field, text, expr) in inst.references()? {
            if field == Field::U {
                let (d, ..) = compare_reference(&inst.model, field, &expr, &points)?;
                ok &= d < 1e-8;
                parts.push(format!("{id} U = {text}: {d:.1e}"));
            }
        }
    }
    let mut reported = 0;
    for id in ["ex4.1", "ex4.2", "ex4.4"] {
        let rep = catalog_verify(id, &BTreeMap::new(), SEED)?;
        for (field, ..) in instance(id, 3).references()? {
            let name = format!("reference {}", field.name());
            let check_passed = rep.check(&name).map(|c| c.passed && c.max_abs < 1e-8).unwrap_or(false);
            let listed = rep.discrepancies.iter().any(|d| d.field == field.name() && d.point.r > 0.0);
            ok &= check_passed || listed;
            if listed {
                reported += 1;
                parts.push(format!("{id} {} mismatch reported", field.name()));
            }
        }
    }
    ok &= reported > 0;
    outcome(ok, parts.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>, Option<Duration>); 10] = [
        ("determinant identity", criterion_1, Some(Duration::from_secs(30))),
        ("spray cross-oracle", criterion_2, Some(Duration::from_secs(30))),
        ("closed-form Douglas equals oracle", criterion_3, Some(Duration::from_secs(120))),
        ("Douglas flatness of the examples", criterion_4, Some(Duration::from_secs(60))),
        ("vanishing conditions", criterion_5, None),
        ("coefficient recovery and reduced pde", criterion_6, None),
        ("Psi identities", criterion_7, None),
        ("symmetry and homogeneity", criterion_8, None),
        ("geodesic conservation", criterion_9, None),
        ("printed fields and discrepancy report", criterion_10, None),
    ];
    let mut failures = 0;
    for (k, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let passed = passed && in_time;
        if !passed {
            failures += 1;
        }
        let tag = if passed { "PASS" } else { "FAIL" };
        let budget = limit.map(|l| format!(" of {}s", l.as_secs())).unwrap_or_default();
        println!("{tag} criterion {}: {name}: {detail} [{:.2}s{budget}]", k + 1, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
