//! Full tangent-bundle coordinates, the reduced invariants, and O(n) tools.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

/// A point `x = (x0, x̄)` of the base manifold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigPoint {
    pub x0: f64,
    pub xbar: Vec<f64>,
}

/// A tangent vector `y = (y0, ȳ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangentVector {
    pub y0: f64,
    pub ybar: Vec<f64>,
}

/// The invariants `r = |x̄|`, `s = ⟨x̄,ȳ⟩/|ȳ|`, `z = y0/|ȳ|` and `u = |ȳ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedPoint {
    pub x0: f64,
    pub r: f64,
    pub s: f64,
    pub z: f64,
    pub u: f64,
}

impl ConfigPoint {
    pub fn new(x0: f64, xbar: Vec<f64>) -> Self {
        ConfigPoint { x0, xbar }
    }

    pub fn dim(&self) -> usize {
        self.xbar.len()
    }

    /// All `n + 1` coordinates in order.
    pub fn full(&self) -> Vec<f64> {
        std::iter::once(self.x0).chain(self.xbar.iter().copied()).collect()
    }

    pub fn from_full(v: &[f64]) -> Self {
        ConfigPoint { x0: v[0], xbar: v[1..].to_vec() }
    }

    pub fn rotated(&self, o: &DMatrix<f64>) -> Self {
        ConfigPoint { x0: self.x0, xbar: rotate(o, &self.xbar) }
    }
}

impl TangentVector {
    pub fn new(y0: f64, ybar: Vec<f64>) -> Self {
        TangentVector { y0, ybar }
    }

    pub fn dim(&self) -> usize {
        self.ybar.len()
    }

    pub fn full(&self) -> Vec<f64> {
        std::iter::once(self.y0).chain(self.ybar.iter().copied()).collect()
    }

    pub fn from_full(v: &[f64]) -> Self {
        TangentVector { y0: v[0], ybar: v[1..].to_vec() }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        TangentVector { y0: lambda * self.y0, ybar: self.ybar.iter().map(|v| lambda * v).collect() }
    }

    pub fn rotated(&self, o: &DMatrix<f64>) -> Self {
        TangentVector { y0: self.y0, ybar: rotate(o, &self.ybar) }
    }
}

fn rotate(o: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (o * DVector::from_column_slice(v)).as_slice().to_vec()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn reduce(x: &ConfigPoint, y: &TangentVector) -> Result<ReducedPoint> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension { expected: x.dim(), got: y.dim() });
    }
    let u = norm(&y.ybar);
    if u == 0.0 {
        return Err(Error::ZeroFiber);
    }
    let r = norm(&x.xbar);
    let mut s = dot(&x.xbar, &y.ybar) / u;
    // keep |s| <= r against rounding
    if s.abs() > r {
        s = s.signum() * r;
    }
    Ok(ReducedPoint { x0: x.x0, r, s, z: y.y0 / u, u })
}

/// Seeded generator used by every randomized routine; `stream` separates
/// independent draws so parallel sweeps replay identically.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn random_orthogonal_with<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_orthogonal(seed: u64, n: usize) -> DMatrix<f64> {
    assert!(n >= 2, "n must be at least 2");
    random_orthogonal_with(&mut rng_for(seed, 0), n)
}

/// Bounds of the reduced sampling window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingRegion {
    pub r: (f64, f64),
    /// `|s| <= s_frac * r`
    pub s_frac: f64,
    /// `|z|` range; both signs are drawn.
    pub z_abs: (f64, f64),
    pub x0: (f64, f64),
}

impl SamplingRegion {
    pub fn standard(rho: f64, x0: (f64, f64)) -> Self {
        SamplingRegion { r: (0.1, 0.9 * rho), s_frac: 0.9, z_abs: (0.05, 2.0), x0 }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> ReducedPoint {
        let r = rng.random_range(self.r.0..=self.r.1);
        let s = self.s_frac * r * rng.random_range(-1.0..=1.0);
        let mag = rng.random_range(self.z_abs.0..=self.z_abs.1);
        let z = if rng.random::<bool>() { mag } else { -mag };
        let x0 = if self.x0.0 < self.x0.1 { rng.random_range(self.x0.0..=self.x0.1) } else { self.x0.0 };
        ReducedPoint { x0, r, s, z, u: 1.0 }
    }
}

/// Places a reduced point in full coordinates: `x̄ = r·e1`,
/// `ȳ = u(s/r·e1 + sqrt(1 − s²/r²)·e2)` with `e1, e2` the first columns of `frame`.
pub fn embed(p: &ReducedPoint, frame: &DMatrix<f64>) -> (ConfigPoint, TangentVector) {
    let n = frame.nrows();
    let e1 = frame.column(0);
    let e2 = frame.column(1);
    let c = if p.r > 0.0 { p.s / p.r } else { 0.0 };
    let perp = (1.0 - c * c).max(0.0).sqrt();
    let xbar = (0..n).map(|i| p.r * e1[i]).collect();
    let ybar = (0..n).map(|i| p.u * (c * e1[i] + perp * e2[i])).collect();
    (ConfigPoint::new(p.x0, xbar), TangentVector::new(p.z * p.u, ybar))
}

/// A reproducible set of reduced sample points.
#[derive(Debug, Clone, Serialize)]
pub struct SampleSet {
    pub seed: u64,
    pub points: Vec<ReducedPoint>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Full-coordinate embedding of point `i` in a random frame of dimension `n`.
    pub fn embedded(&self, i: usize, n: usize) -> (ConfigPoint, TangentVector) {
        let frame = random_orthogonal_with(&mut rng_for(self.seed, 1 << 32 | i as u64), n);
        embed(&self.points[i], &frame)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    pub samples: usize,
    /// Largest `|F(x0,Ox̄,y0,Oȳ) − F(x,y)| / max(1, F)`.
    pub max_deviation: f64,
    pub worst: Option<(ConfigPoint, TangentVector)>,
}

/// Compares `f` before and after a fresh random rotation at each of
/// `samples` random points drawn from `region`.
pub fn symmetry_check_with(
    n: usize,
    region: &SamplingRegion,
    samples: usize,
    seed: u64,
    f: impl Fn(&ConfigPoint, &TangentVector) -> Result<f64> + Sync,
) -> Result<SymmetryReport> {
    use rayon::prelude::*;
    if samples == 0 {
        return Err(Error::InvalidInput("samples must be at least 1".into()));
    }
    let devs: Vec<(f64, ConfigPoint, TangentVector)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let p = region.draw(&mut rng);
            let frame = random_orthogonal_with(&mut rng, n);
            let (x, y) = embed(&p, &frame);
            let o = random_orthogonal_with(&mut rng, n);
            let f0 = f(&x, &y)?;
            let f1 = f(&x.rotated(&o), &y.rotated(&o))?;
            Ok(((f1 - f0).abs() / f0.abs().max(1.0), x, y))
        })
        .collect::<Result<_>>()?;
    let mut report = SymmetryReport { samples, max_deviation: 0.0, worst: None };
    for (d, x, y) in devs {
        if report.worst.is_none() || d > report.max_deviation {
            report.max_deviation = d;
            report.worst = Some((x, y));
        }
    }
    Ok(report)
}
