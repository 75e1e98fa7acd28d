//! Classical RK4 for `ẍ^A = −2 G^A(x, ẋ)`.

use std::io::Write;

use serde::Serialize;

use cylfin::coords::{reduce, ConfigPoint, TangentVector};
use cylfin::finsler::PhiModel;
use cylfin::spray::spray_coefficients;
use cylfin::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub n: usize,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub f: Vec<f64>,
}

impl Trace {
    /// `max_t |F(t) − F(0)| / |F(0)|`.
    pub fn drift(&self) -> f64 {
        let f0 = self.f[0];
        self.f.iter().map(|f| (f - f0).abs()).fold(0.0, f64::max) / f0.abs()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..=self.n).map(|a| format!("x{a}")));
        h.extend((0..=self.n).map(|a| format!("v{a}")));
        h.push("F".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for k in 0..self.t.len() {
            let mut row = vec![self.t[k]];
            row.extend(&self.x[k]);
            row.extend(&self.v[k]);
            row.push(self.f[k]);
            out.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_domain(model: &PhiModel, x: &[f64], v: &[f64], t: f64) -> Result<()> {
    let xp = ConfigPoint::from_full(x);
    let r = cylfin::coords::norm(&xp.xbar);
    let (lo, hi) = model.x0_interval();
    if !(r < model.rho()) || !(xp.x0 >= lo && xp.x0 <= hi) {
        return Err(Error::OutOfDomain(format!("the trace left I x B^n at t = {t} (x0 = {}, |x| = {r})", xp.x0)));
    }
    let p = reduce(&xp, &TangentVector::from_full(v))?;
    if !model.is_valid_at(&p) {
        return Err(Error::OutOfDomain(format!("the metric is not strongly convex along the trace at t = {t}")));
    }
    Ok(())
}

fn accel(model: &PhiModel, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let g = spray_coefficients(model, &ConfigPoint::from_full(x), &TangentVector::from_full(v))?;
    Ok(g.full().iter().map(|c| -2.0 * c).collect())
}

fn axpy(a: &[f64], h: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p + h * q).collect()
}

pub fn geodesic_integrate(
    model: &PhiModel,
    x: &ConfigPoint,
    y: &TangentVector,
    t_end: f64,
    steps: usize,
) -> Result<Trace> {
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be at least 1".into()));
    }
    let n = model.n();
    if x.dim() != n {
        return Err(Error::Dimension { expected: n, got: x.dim() });
    }
    if y.dim() != n {
        return Err(Error::Dimension { expected: n, got: y.dim() });
    }
    let h = t_end / steps as f64;
    if !h.is_finite() || h == 0.0 || t_end + h == t_end {
        return Err(Error::Singular { what: "step size", value: h });
    }
    let mut xs = x.full();
    let mut vs = y.full();
    check_domain(model, &xs, &vs, 0.0)?;
    let mut trace = Trace { n, t: vec![0.0], x: vec![xs.clone()], v: vec![vs.clone()], f: vec![model.finsler(x, y)?] };
    for k in 1..=steps {
        let t = k as f64 * h;
        let a1 = accel(model, &xs, &vs)?;
        let (x2, v2) = (axpy(&xs, h / 2.0, &vs), axpy(&vs, h / 2.0, &a1));
        let a2 = accel(model, &x2, &v2)?;
        let (x3, v3) = (axpy(&xs, h / 2.0, &v2), axpy(&vs, h / 2.0, &a2));
        let a3 = accel(model, &x3, &v3)?;
        let (x4, v4) = (axpy(&xs, h, &v3), axpy(&vs, h, &a3));
        let a4 = accel(model, &x4, &v4)?;
        for i in 0..=n {
            xs[i] += h / 6.0 * (vs[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
            vs[i] += h / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
        }
        check_domain(model, &xs, &vs, t)?;
        let f = model.finsler(&ConfigPoint::from_full(&xs), &TangentVector::from_full(&vs))?;
        trace.t.push(t);
        trace.x.push(xs.clone());
        trace.v.push(vs.clone());
        trace.f.push(f);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn euclidean_lines() {
        let m = PhiModel::parse("sqrt(1+z^2)", BTreeMap::new(), 3).unwrap();
        let x = ConfigPoint::new(0.1, vec![0.2, -0.1, 0.3]);
        let y = TangentVector::new(0.2, vec![0.1, 0.3, -0.2]);
        let tr = geodesic_integrate(&m, &x, &y, 1.0, 50).unwrap();
        let (xe, ye) = (x.full(), y.full());
        for (k, t) in tr.t.iter().enumerate() {
            for a in 0..4 {
                assert!((tr.x[k][a] - (xe[a] + t * ye[a])).abs() < 1e-10);
            }
        }
        assert!(tr.drift() < 1e-14);
    }

    #[test]
    fn rejects_zero_steps_and_exits() {
        let m = PhiModel::parse("sqrt(1+z^2)", BTreeMap::new(), 3).unwrap();
        let x = ConfigPoint::new(0.0, vec![0.8, 0.0, 0.0]);
        let y = TangentVector::new(0.0, vec![1.0, 0.0, 0.0]);
        assert!(matches!(geodesic_integrate(&m, &x, &y, 1.0, 0), Err(Error::InvalidInput(_))));
        assert!(matches!(geodesic_integrate(&m, &x, &y, 1.0, 100), Err(Error::OutOfDomain(_))));
        assert!(matches!(geodesic_integrate(&m, &x, &y, 0.0, 100), Err(Error::Singular { .. })));
    }

    #[test]
    fn csv_header() {
        let m = PhiModel::parse("sqrt(1+z^2)", BTreeMap::new(), 2).unwrap();
        let x = ConfigPoint::new(0.0, vec![0.1, 0.1]);
        let y = TangentVector::new(0.1, vec![0.1, 0.0]);
        let tr = geodesic_integrate(&m, &x, &y, 0.5, 2).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,x0,x1,x2,v0,v1,v2,F");
        assert_eq!(text.lines().count(), 4);
    }
}
