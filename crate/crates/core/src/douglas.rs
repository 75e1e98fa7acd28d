//! Douglas curvature: the `(s, z)` radial operator, the projected fields
//! `R` and `T`, closed-form components, a fiber-jet oracle, the vanishing
//! conditions and their consequences.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::coords::{reduce, ConfigPoint, ReducedPoint, SampleSet, TangentVector};
use crate::error::{Error, Result};
use crate::expr::{Coord, Expr, Tape};
use crate::finsler::{JetOrders, PhiModel};
use crate::jet::{Jet, SzJet};
use crate::spray::{closed_spray_jets, finsler_fiber_jet, spray_field_jets, spray_fields};

/// Closed-form components are not evaluated for `|z|` below this.
pub const Z_FLOOR: f64 = 1e-3;

/// `Ψ(Θ) = −sΘ_s − zΘ_z`.
pub fn psi_apply(theta: &SzJet) -> Result<SzJet> {
    if theta.order() == 0 {
        return Err(Error::InvalidInput("the radial operator needs a jet of order at least 1".into()));
    }
    Ok(theta.psi())
}

fn psi(t: &SzJet) -> SzJet {
    t.psi()
}

/// `Θ·z^m`.
fn zm(t: &SzJet, m: i32) -> SzJet {
    t.mul_zpow(m)
}

/// `R`, `T`, `U` and `L` as `(s, z)` jets at one reduced point.
#[derive(Debug, Clone)]
pub struct RtFields {
    pub r: SzJet,
    pub t: SzJet,
    pub u: SzJet,
    pub l: SzJet,
}

/// `R = L − z/(n+2)·[L_z − (n−1)sU + (r²−s²)U_s]` and
/// `T = [3sU + L_z + (r²−s²)U_s]/(n+2)` to order `order` (`U` and `L`
/// are carried one order higher).
pub fn rt_fields(model: &PhiModel, p: &ReducedPoint, order: usize) -> Result<RtFields> {
    if order > 4 {
        return Err(Error::InvalidInput(format!("R/T jets are supported up to order 4, requested {order}")));
    }
    let f = spray_field_jets(model, &ReducedPoint { u: 1.0, ..*p }, order + 1)?;
    let n = model.n() as f64;
    let k = order + 1;
    let s = SzJet::s(p.s, p.z, k);
    let z = SzJet::z(p.s, p.z, k);
    let gap = SzJet::constant(p.s, p.z, k, p.r * p.r) - &s * &s;
    let u = f.u.truncate(k);
    let l = f.l.truncate(k);
    let lz = l.dz();
    let us = u.ds();
    let tail = &gap * &us;
    let su = &s * &u;
    let bracket = &(&lz - &(su.clone() * (n - 1.0))) + &tail;
    let r = &l - &((&z * &bracket) / (n + 2.0));
    let t = (&(&(su * 3.0) + &lz) + &tail) / (n + 2.0);
    Ok(RtFields { r: r.truncate(order), t: t.truncate(order), u, l })
}

/// Components `D[B][A][C][D]`, upper index `A`, lower indices `B, C, D`.
#[derive(Debug, Clone, Serialize)]
pub struct DouglasTensor {
    pub n: usize,
    pub u: f64,
    pub comps: Vec<f64>,
}

impl DouglasTensor {
    fn zeros(n: usize, u: f64) -> Self {
        DouglasTensor { n, u, comps: vec![0.0; (n + 1).pow(4)] }
    }

    fn idx(&self, b: usize, a: usize, c: usize, d: usize) -> usize {
        let m = self.n + 1;
        ((b * m + a) * m + c) * m + d
    }

    pub fn get(&self, b: usize, a: usize, c: usize, d: usize) -> f64 {
        self.comps[self.idx(b, a, c, d)]
    }

    fn set(&mut self, b: usize, a: usize, c: usize, d: usize, v: f64) {
        let i = self.idx(b, a, c, d);
        self.comps[i] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest deviation from symmetry in the lower indices, relative to
    /// `max(1, max_abs)`.
    pub fn max_lower_asymmetry(&self) -> f64 {
        let m = self.n + 1;
        let mut worst = 0.0f64;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    for d in 0..m {
                        let v = self.get(b, a, c, d);
                        for w in [self.get(c, a, b, d), self.get(d, a, c, b), self.get(b, a, d, c)] {
                            worst = worst.max((v - w).abs());
                        }
                    }
                }
            }
        }
        worst / self.max_abs().max(1.0)
    }

    /// Worst ratio `|a − b| / max(abs, rel·|b|)` over components; the
    /// tensors agree within tolerance when this is at most 1.
    pub fn compare(&self, reference: &DouglasTensor, rel: f64, abs: f64) -> TensorComparison {
        let mut cmp = TensorComparison { worst_ratio: 0.0, max_abs_diff: 0.0, worst_index: [0; 4], ours: 0.0, reference: 0.0 };
        let m = self.n + 1;
        for b in 0..m {
            for a in 0..m {
                for c in 0..m {
                    for d in 0..m {
                        let (x, y) = (self.get(b, a, c, d), reference.get(b, a, c, d));
                        let diff = (x - y).abs();
                        let ratio = diff / abs.max(rel * y.abs());
                        cmp.max_abs_diff = cmp.max_abs_diff.max(diff);
                        if ratio > cmp.worst_ratio || ratio.is_nan() {
                            cmp.worst_ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
                            cmp.worst_index = [b, a, c, d];
                            cmp.ours = x;
                            cmp.reference = y;
                        }
                    }
                }
            }
        }
        cmp
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorComparison {
    pub worst_ratio: f64,
    pub max_abs_diff: f64,
    /// `[B, A, C, D]`
    pub worst_index: [usize; 4],
    pub ours: f64,
    pub reference: f64,
}

impl TensorComparison {
    pub fn passes(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

/// Scalar coefficients of the closed-form components at `u = 1`.
struct ClosedCoefficients {
    r_zzz: f64,
    r_szz: f64,
    psi_r_zz: f64,
    r_ssz: f64,
    psi_r_sz: f64,
    r_a: f64,
    r_b: f64,
    r_sss: f64,
    psi_r_ss: f64,
    r_c: f64,
    r_d: f64,
    r_e: f64,
    r_f: f64,
    u_zzz: f64,
    u_szz: f64,
    psi_u_zz: f64,
    u_ssz: f64,
    u_a: f64,
    u_b: f64,
    psi_u_sz: f64,
    u_sss: f64,
    u_c: f64,
    psi_u_ss: f64,
    u_d: f64,
    u_e: f64,
    u_f: f64,
    t_zzz: f64,
    t_zz: f64,
    t_szz: f64,
    psiz_t_z: f64,
    t_ssz: f64,
    t_a: f64,
    t_sz: f64,
    t_b: f64,
    psi_t_z: f64,
    t_ss: f64,
    psis_t_s: f64,
    t_c: f64,
    t_d: f64,
    psi_t_s: f64,
    t_e: f64,
    t_sss: f64,
    t_f: f64,
}

impl ClosedCoefficients {
    fn new(f: &RtFields, z: f64) -> Self {
        let (r, t, u) = (&f.r, &f.t, &f.u);
        let (r_s, r_z) = (r.ds(), r.dz());
        let (u_s, u_z) = (u.ds(), u.dz());
        let (t_s, t_z) = (t.ds(), t.dz());
        ClosedCoefficients {
            r_zzz: r.partial(0, 3),
            r_szz: r.partial(1, 2),
            psi_r_zz: psi(&r_z.dz()).value(),
            r_ssz: r.partial(2, 1),
            psi_r_sz: psi(&r_s.dz()).value(),
            r_a: z * psi(&zm(&r_z, -1)).value(),
            r_b: psi(&zm(&psi(&zm(&r_z, -1)), 2)).value() / z,
            r_sss: r.partial(3, 0),
            psi_r_ss: psi(&r_s.ds()).value(),
            r_c: z * psi(&zm(&r_s, -1)).value(),
            r_d: psi(&zm(&psi(&zm(r, -2)), 2)).value(),
            r_e: psi(&zm(&psi(&zm(&r_s, -1)), 2)).value() / z,
            r_f: psi(&zm(&psi(&zm(&psi(&zm(r, -2)), 2)), 2)).value() / (3.0 * z * z),
            u_zzz: u.partial(0, 3),
            u_szz: u.partial(1, 2),
            psi_u_zz: psi(&u_z.dz()).value(),
            u_ssz: u.partial(2, 1),
            u_a: z * psi(&zm(&u_z, -1)).value(),
            u_b: psi(&zm(&psi(&zm(&u_z, -1)), 2)).value() / z,
            psi_u_sz: psi(&u_s.dz()).value(),
            u_sss: u.partial(3, 0),
            u_c: psi(&zm(&psi(&zm(&psi(&zm(u, -2)), 2)), 2)).value() / (z * z),
            psi_u_ss: psi(&u_s.ds()).value(),
            u_d: z * psi(&zm(&u_s, -1)).value(),
            u_e: psi(&zm(&psi(&zm(u, -2)), 2)).ds().value(),
            u_f: psi(&zm(&psi(&zm(u, -2)), 2)).value(),
            t_zzz: t.partial(0, 3),
            t_zz: t.partial(0, 2),
            t_szz: t.partial(1, 2),
            psiz_t_z: psi(&t_z).dz().value(),
            t_ssz: t.partial(2, 1),
            t_a: psi(&zm(&psi(&t_z), 2)).value() / (z * z),
            t_sz: t.partial(1, 1),
            t_b: psi(&zm(&t_s.dz(), 1)).value() / z,
            psi_t_z: psi(&t_z).value(),
            t_ss: t.partial(2, 0),
            psis_t_s: psi(&t_s).ds().value(),
            t_c: psi(&zm(&psi(&t_s), 2)).value() / (z * z),
            t_d: z * psi(&zm(t, -1)).value(),
            psi_t_s: psi(&t_s).value(),
            t_e: psi(&zm(&psi(&zm(t, -1)), 2)).value() / z,
            t_sss: t.partial(3, 0),
            t_f: psi(&zm(&psi(&zm(&psi(&zm(t, -1)), 2)), 2)).value() / (z * z * z),
        }
    }
}

fn cyclic3(j: usize, k: usize, l: usize) -> [(usize, usize, usize); 3] {
    [(j, k, l), (k, l, j), (l, j, k)]
}

/// Douglas curvature from the closed-form component formulas.
pub fn douglas_closed(model: &PhiModel, x: &ConfigPoint, y: &TangentVector) -> Result<DouglasTensor> {
    let p = reduce(x, y)?;
    if p.z.abs() < Z_FLOOR {
        return Err(Error::OutOfDomain(format!("|z| = {:e} is below the closed-form floor {Z_FLOOR:e}", p.z.abs())));
    }
    let f = rt_fields(model, &ReducedPoint { u: 1.0, ..p }, 3)?;
    let c = ClosedCoefficients::new(&f, p.z);
    let n = x.dim();
    let m = n + 1;
    // 1-based spatial vectors
    let xv: Vec<f64> = std::iter::once(0.0).chain(x.xbar.iter().copied()).collect();
    let uv: Vec<f64> = std::iter::once(0.0).chain(y.ybar.iter().map(|v| v / p.u)).collect();
    let dl = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let (xs, us) = (&xv, &uv);

    let d0_000 = || c.r_zzz;
    let d0_00l = |l: usize| c.r_szz * xs[l] + c.psi_r_zz * us[l];
    let d0_0kl = |k: usize, l: usize| {
        c.r_ssz * xs[k] * xs[l] + c.psi_r_sz * (xs[l] * us[k] + xs[k] * us[l]) + c.r_a * dl(k, l) + c.r_b * us[k] * us[l]
    };
    let d0_jkl = |j: usize, k: usize, l: usize| {
        cyclic3(j, k, l)
            .iter()
            .map(|&(j, k, l)| {
                c.r_sss / 3.0 * xs[j] * xs[k] * xs[l]
                    + c.psi_r_ss * xs[j] * xs[k] * us[l]
                    + c.r_c * xs[j] * dl(k, l)
                    + c.r_d * us[j] * dl(k, l)
                    + c.r_e * xs[j] * us[k] * us[l]
                    + c.r_f * us[j] * us[k] * us[l]
            })
            .sum::<f64>()
    };
    let di_000 = |i: usize| c.u_zzz * xs[i] - c.t_zzz * us[i];
    let di_00l = |i: usize, l: usize| {
        c.u_szz * xs[l] * xs[i] + c.psi_u_zz * xs[i] * us[l]
            - c.t_zz * dl(i, l)
            - c.t_szz * xs[l] * us[i]
            - c.psiz_t_z * us[l] * us[i]
    };
    let di_0kl = |i: usize, k: usize, l: usize| {
        let head = c.u_ssz * xs[k] * xs[l] * xs[i] + c.u_a * dl(k, l) * xs[i] + c.u_b * us[k] * us[l] * xs[i]
            - c.t_ssz * xs[k] * xs[l] * us[i]
            - c.t_a * us[k] * us[l] * us[i];
        let pair: f64 = [(k, l), (l, k)]
            .iter()
            .map(|&(k, l)| {
                c.psi_u_sz * us[k] * xs[l] * xs[i] - c.t_sz * xs[k] * dl(l, i) - c.t_b * xs[l] * us[k] * us[i]
            })
            .sum();
        head + pair - c.psi_t_z * (dl(i, l) * us[k] + dl(k, i) * us[l] + dl(k, l) * us[i])
    };
    let di_jkl = |i: usize, j: usize, k: usize, l: usize| {
        let along_x = c.u_sss * xs[j] * xs[k] * xs[l]
            + c.u_c * us[j] * us[k] * us[l]
            + cyclic3(j, k, l)
                .iter()
                .map(|&(j, k, l)| {
                    c.psi_u_ss * us[j] * xs[k] * xs[l]
                        + c.u_d * dl(j, k) * xs[l]
                        + c.u_e * us[j] * us[k] * xs[l]
                        + c.u_f * dl(j, k) * us[l]
                })
                .sum::<f64>();
        let cyc: f64 = cyclic3(j, k, l)
            .iter()
            .map(|&(j, k, l)| {
                c.t_ss * dl(i, j) * xs[k] * xs[l]
                    + c.psis_t_s * us[i] * us[j] * xs[k] * xs[l]
                    + c.t_c * xs[j] * us[k] * us[l] * us[i]
            })
            .sum();
        let deltas = dl(j, i) * dl(k, l) + dl(j, k) * dl(l, i) + dl(j, l) * dl(i, k);
        let mixed = xs[j] * (us[i] * dl(k, l) + us[k] * dl(l, i) + us[l] * dl(i, k))
            + xs[k] * (us[j] * dl(i, l) + us[i] * dl(l, j) + us[l] * dl(j, i))
            + xs[l] * (us[i] * dl(j, k) + us[j] * dl(k, i) + us[k] * dl(i, j));
        let pairs = dl(j, i) * us[k] * us[l]
            + dl(j, k) * us[l] * us[i]
            + dl(j, l) * us[i] * us[k]
            + dl(k, l) * us[i] * us[j]
            + dl(l, i) * us[k] * us[j]
            + dl(i, k) * us[l] * us[j];
        let along_u = cyc
            + c.t_d * deltas
            + c.psi_t_s * mixed
            + c.t_e * pairs
            + c.t_sss * xs[j] * xs[k] * xs[l] * us[i]
            + c.t_f * us[j] * us[k] * us[l] * us[i];
        along_x * xs[i] - along_u
    };

    let mut d = DouglasTensor::zeros(n, p.u);
    for b in 0..m {
        for a in 0..m {
            for cc in 0..m {
                for dd in 0..m {
                    let mut lower = [b, cc, dd];
                    lower.sort_unstable();
                    let v = match (a, lower) {
                        (0, [0, 0, 0]) => d0_000(),
                        (0, [0, 0, l]) => d0_00l(l),
                        (0, [0, k, l]) => d0_0kl(k, l),
                        (0, [j, k, l]) => d0_jkl(j, k, l),
                        (i, [0, 0, 0]) => di_000(i),
                        (i, [0, 0, l]) => di_00l(i, l),
                        (i, [0, k, l]) => di_0kl(i, k, l),
                        (i, [j, k, l]) => di_jkl(i, j, k, l),
                    };
                    d.set(b, a, cc, dd, v / p.u);
                }
            }
        }
    }
    Ok(d)
}

/// Third fiber derivatives of `H^A = G^A − y^A/(n+2)·∂G^B/∂y^B` for the
/// given spray jets (order at least 4, in the `n + 1` fiber variables).
pub fn douglas_from_spray_jets(g: &[Jet], y: &TangentVector) -> DouglasTensor {
    let m = g.len();
    let n = m - 1;
    let mut div = g[0].deriv(0);
    for (a, ga) in g.iter().enumerate().skip(1) {
        div = &div + &ga.deriv(a);
    }
    let div = div / (n as f64 + 2.0);
    let order = div.order();
    let yv = y.full();
    let h: Vec<Jet> = (0..m)
        .map(|a| {
            let ya = Jet::variable(m, order, a, yv[a]);
            &g[a].truncate(order) - &(&ya * &div)
        })
        .collect();
    let u = crate::coords::norm(&y.ybar);
    let mut d = DouglasTensor::zeros(n, u);
    let mut alpha = vec![0u8; m];
    for b in 0..m {
        for a in 0..m {
            for c in 0..m {
                for dd in 0..m {
                    alpha.iter_mut().for_each(|v| *v = 0);
                    alpha[b] += 1;
                    alpha[c] += 1;
                    alpha[dd] += 1;
                    d.set(b, a, c, dd, h[a].partial(&alpha));
                }
            }
        }
    }
    d
}

/// Douglas curvature by exact fiber differentiation of the projected spray.
pub fn douglas_oracle(model: &PhiModel, x: &ConfigPoint, y: &TangentVector) -> Result<DouglasTensor> {
    let g = closed_spray_jets(model, x, y, 4)?;
    Ok(douglas_from_spray_jets(&g, y))
}

/// The oracle applied to the projectively related spray `G^A + c·F·y^A`.
pub fn douglas_oracle_shifted(model: &PhiModel, x: &ConfigPoint, y: &TangentVector, c: f64) -> Result<DouglasTensor> {
    let mut g = closed_spray_jets(model, x, y, 4)?;
    let f = finsler_fiber_jet(model, x, y, 4)?;
    let yv = y.full();
    let m = g.len();
    for (a, ga) in g.iter_mut().enumerate() {
        let ya = Jet::variable(m, 4, a, yv[a]);
        *ga = &*ga + &((&f * &ya) * c);
    }
    Ok(douglas_from_spray_jets(&g, y))
}

pub const RESIDUAL_NAMES: [&str; 8] =
    ["z*Psi(U_s/z)", "z*Psi(U_z/z)", "U_zzz", "z*Psi(R_s/z)", "z*Psi(R_z/z)", "R_zzz", "z*Psi(T/z)", "T_zz"];

/// The eight vanishing conditions at one reduced point.
pub fn flatness_residuals_at(model: &PhiModel, p: &ReducedPoint) -> Result<[f64; 8]> {
    let f = rt_fields(model, p, 3)?;
    let z = p.z;
    let zpsi = |t: &SzJet| z * psi(&zm(t, -1)).value();
    Ok([
        zpsi(&f.u.ds()),
        zpsi(&f.u.dz()),
        f.u.partial(0, 3),
        zpsi(&f.r.ds()),
        zpsi(&f.r.dz()),
        f.r.partial(0, 3),
        zpsi(&f.t),
        f.t.partial(0, 2),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct FlatnessResiduals {
    /// Max absolute value of each condition, in the order of [`RESIDUAL_NAMES`].
    pub max_abs: [f64; 8],
    pub worst_points: Vec<Option<ReducedPoint>>,
    pub samples: usize,
}

impl FlatnessResiduals {
    pub fn largest(&self) -> f64 {
        self.max_abs.iter().fold(0.0, |m, &v| m.max(v))
    }

    pub fn named(&self) -> Vec<(&'static str, f64)> {
        RESIDUAL_NAMES.iter().copied().zip(self.max_abs).collect()
    }
}

pub fn flatness_residuals(model: &PhiModel, samples: &SampleSet) -> Result<FlatnessResiduals> {
    if model.n() < 3 {
        return Err(Error::InvalidInput("the vanishing conditions require n >= 3".into()));
    }
    let vals: Vec<[f64; 8]> = samples.points.par_iter().map(|p| flatness_residuals_at(model, p)).collect::<Result<_>>()?;
    let mut out = FlatnessResiduals { max_abs: [0.0; 8], worst_points: vec![None; 8], samples: samples.len() };
    for (p, v) in samples.points.iter().zip(&vals) {
        for k in 0..8 {
            let a = v[k].abs();
            if out.worst_points[k].is_none() || a > out.max_abs[k] {
                out.max_abs[k] = a;
                out.worst_points[k] = Some(*p);
            }
        }
    }
    Ok(out)
}

/// Least-squares coefficients of `U = f1 s²/2 + f2 sz + f3 z²/2 + f4`,
/// `R` of the same form with `g1..g4`, and `T = h1 s + h2 z`.
#[derive(Debug, Clone, Serialize)]
pub struct PolyCoefficients {
    pub x0: f64,
    pub r: f64,
    pub f: [f64; 4],
    pub g: [f64; 4],
    pub h: [f64; 2],
    /// Max pointwise deviation of the three fits.
    pub fit_residual: f64,
    /// Max deviation between the computed `L` and `R + zT − szU` built
    /// from the fitted polynomials.
    pub l_reconstruction_residual: f64,
    pub nodes: usize,
}

/// Two elliptical rings around `(s, z) = (0, 1)` inside `|s| < r`.
pub fn stencil(r: f64, count: usize) -> Vec<(f64, f64)> {
    let per_ring = count.div_ceil(2);
    let mut out = Vec::with_capacity(2 * per_ring);
    for ring in 0..2 {
        let scale = (ring + 1) as f64 / 2.0;
        for j in 0..per_ring {
            let theta = std::f64::consts::TAU * (j as f64 + 0.5 * ring as f64) / per_ring as f64;
            out.push((0.8 * r * scale * theta.cos(), 1.0 + 0.6 * scale * theta.sin()));
        }
    }
    out
}

fn least_squares(design: &DMatrix<f64>, values: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&v| v > 1e-10 * smax).count();
    if rank < design.ncols() {
        return Err(Error::RankDeficient { rank, cols: design.ncols() });
    }
    let coef = svd.solve(values, 1e-10 * smax).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let resid = (design * &coef - values).abs().max();
    Ok((coef, resid))
}

fn quad_row(s: f64, z: f64) -> [f64; 4] {
    [s * s / 2.0, s * z, z * z / 2.0, 1.0]
}

pub fn fit_coefficients(model: &PhiModel, x0: f64, r: f64, sz_samples: usize) -> Result<PolyCoefficients> {
    fit_on_nodes(model, x0, r, &stencil(r, sz_samples))
}

pub fn fit_on_nodes(model: &PhiModel, x0: f64, r: f64, nodes: &[(f64, f64)]) -> Result<PolyCoefficients> {
    if nodes.len() < 12 {
        return Err(Error::InvalidInput(format!("at least 12 (s, z) nodes are needed, got {}", nodes.len())));
    }
    let mut uvals = Vec::new();
    let mut rvals = Vec::new();
    let mut tvals = Vec::new();
    let mut lvals = Vec::new();
    for &(s, z) in nodes {
        let f = rt_fields(model, &ReducedPoint { x0, r, s, z, u: 1.0 }, 0)?;
        uvals.push(f.u.value());
        rvals.push(f.r.value());
        tvals.push(f.t.value());
        lvals.push(f.l.value());
    }
    let k = nodes.len();
    let quad = DMatrix::from_fn(k, 4, |i, j| quad_row(nodes[i].0, nodes[i].1)[j]);
    let lin = DMatrix::from_fn(k, 2, |i, j| if j == 0 { nodes[i].0 } else { nodes[i].1 });
    let (fc, fr) = least_squares(&quad, &DVector::from_vec(uvals))?;
    let (gc, gr) = least_squares(&quad, &DVector::from_vec(rvals))?;
    let (hc, hr) = least_squares(&lin, &DVector::from_vec(tvals))?;
    let poly = |c: &DVector<f64>, s: f64, z: f64| quad_row(s, z).iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>();
    let l_rec = nodes
        .iter()
        .zip(&lvals)
        .map(|(&(s, z), l)| {
            let rebuilt = poly(&gc, s, z) + z * (hc[0] * s + hc[1] * z) - s * z * poly(&fc, s, z);
            (rebuilt - l).abs()
        })
        .fold(0.0, f64::max);
    Ok(PolyCoefficients {
        x0,
        r,
        f: [fc[0], fc[1], fc[2], fc[3]],
        g: [gc[0], gc[1], gc[2], gc[3]],
        h: [hc[0], hc[1]],
        fit_residual: fr.max(gr).max(hr),
        l_reconstruction_residual: l_rec,
        nodes: k,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeResidual {
    pub max_abs: f64,
    pub worst: Option<ReducedPoint>,
    pub samples: usize,
}

/// `r² − s²` below this fraction of `r²` is rejected.
const GAP_FLOOR: f64 = 1e-10;

fn check_gap(p: &ReducedPoint) -> Result<f64> {
    let gap = p.r * p.r - p.s * p.s;
    if gap <= GAP_FLOOR * p.r * p.r {
        return Err(Error::OutOfDomain(format!("s = {} is too close to ±r = ±{}", p.s, p.r)));
    }
    Ok(gap)
}

fn pde_combination(p: &ReducedPoint, psi_grad: [f64; 4], u: f64, l: f64, gap: f64) -> f64 {
    let [px, pr, ps, pz] = psi_grad;
    p.z * px + p.s / p.r * pr + (1.0 - 2.0 * gap * u) * ps - 2.0 * l * pz
}

/// `zψ_x0 + (s/r)ψ_r + [1 − 2(r²−s²)U]ψ_s − 2Lψ_z` with `ψ = √(r²−s²)·Ω`.
pub fn reduced_pde_at(model: &PhiModel, p: &ReducedPoint) -> Result<f64> {
    let gap = check_gap(p)?;
    let p = ReducedPoint { u: 1.0, ..*p };
    let f = spray_fields(model, &p)?;
    let j = model.phi_jet_at(&p, JetOrders::new(2, 1))?;
    let (s, z) = (p.s, p.z);
    let omega_of = |a: u8, b: u8| j.at(a, b, 0, 0) - s * j.at(a, b, 1, 0) - z * j.at(a, b, 0, 1);
    let omega = f.omega;
    let omega_s = -s * j.at(0, 0, 2, 0) - z * j.at(0, 0, 1, 1);
    let omega_z = -s * j.at(0, 0, 1, 1) - z * j.at(0, 0, 0, 2);
    let root = gap.sqrt();
    let grad = [
        root * omega_of(1, 0),
        p.r / root * omega + root * omega_of(0, 1),
        -s / root * omega + root * omega_s,
        root * omega_z,
    ];
    Ok(pde_combination(&p, grad, f.u, f.l, gap))
}

fn max_over(samples: &SampleSet, f: impl Fn(&ReducedPoint) -> Result<f64> + Sync) -> Result<PdeResidual> {
    let vals: Vec<f64> = samples.points.par_iter().map(&f).collect::<Result<_>>()?;
    let mut out = PdeResidual { max_abs: 0.0, worst: None, samples: samples.len() };
    for (p, v) in samples.points.iter().zip(vals) {
        if out.worst.is_none() || v.abs() > out.max_abs {
            out.max_abs = v.abs();
            out.worst = Some(*p);
        }
    }
    Ok(out)
}

pub fn reduced_pde_residual(model: &PhiModel, samples: &SampleSet) -> Result<PdeResidual> {
    max_over(samples, |p| reduced_pde_at(model, p))
}

/// The same operator applied to a supplied `ψ(x0, r, s, z)` while `U` and
/// `L` come from the model.
pub fn reduced_pde_residual_for(model: &PhiModel, psi_expr: &Expr, samples: &SampleSet) -> Result<PdeResidual> {
    let roots: Vec<Expr> = Coord::ALL.iter().map(|&c| psi_expr.diff(c)).collect();
    let tape = Tape::compile(&roots, model.params())?;
    max_over(samples, |p| {
        let gap = check_gap(p)?;
        let f = spray_fields(model, &ReducedPoint { u: 1.0, ..*p })?;
        let g = tape.eval([p.x0, p.r, p.s, p.z])?;
        Ok(pde_combination(p, [g[0], g[1], g[2], g[3]], f.u, f.l, gap))
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectiveFlatness {
    pub sup_u: f64,
    pub sup_l: f64,
    pub sup_p1: f64,
    pub sup_p2: f64,
    pub tolerance: f64,
    pub projectively_flat: bool,
}

pub const PROJECTIVE_TOLERANCE: f64 = 1e-9;

pub fn projective_flatness(model: &PhiModel, samples: &SampleSet) -> Result<ProjectiveFlatness> {
    let vals: Vec<[f64; 4]> = samples
        .points
        .par_iter()
        .map(|p| spray_fields(model, &ReducedPoint { u: 1.0, ..*p }).map(|f| [f.u, f.l, f.p1, f.p2]))
        .collect::<Result<_>>()?;
    let mut sup = [0.0f64; 4];
    for v in &vals {
        for k in 0..4 {
            sup[k] = sup[k].max(v[k].abs());
        }
    }
    let tol = PROJECTIVE_TOLERANCE;
    Ok(ProjectiveFlatness {
        sup_u: sup[0],
        sup_l: sup[1],
        sup_p1: sup[2],
        sup_p2: sup[3],
        tolerance: tol,
        projectively_flat: sup.iter().all(|&v| v < tol),
    })
}

/// Relative defects `|lhs − rhs| / max(1, |lhs|, |rhs|)` of the radial
/// operator identities for one `Θ` (a jet of order at least 4).
pub fn psi_identity_defects(theta: &SzJet) -> Vec<(&'static str, f64)> {
    let t = theta;
    let (z0, s0) = (t.base().1, t.base().0);
    let ts = t.ds();
    let tz = t.dz();
    let v = |j: SzJet| j.value();
    let mut out = Vec::new();
    let mut check = |name: &'static str, lhs: f64, rhs: f64| {
        out.push((name, (lhs - rhs).abs() / 1f64.max(lhs.abs()).max(rhs.abs())));
    };
    check("psi of psi", v(psi(&psi(t))), v(-psi(t)) - s0 * v(psi(&ts)) - z0 * v(psi(&tz)));
    for m in [-2, -1, 1, 2, 3] {
        let shifted = v(psi(&zm(t, m))) / z0.powi(m);
        check("power shift", shifted, v(psi(t)) - m as f64 * t.value());
        check("power step", shifted, v(psi(&zm(t, m - 1))) / z0.powi(m - 1) - t.value());
    }
    check(
        "double shift by z^2",
        v(psi(&zm(&psi(&zm(t, -2)), 2))),
        -s0 * z0 * v(psi(&zm(&ts, -1))) - z0 * z0 * v(psi(&zm(&tz, -1))),
    );
    check(
        "double shift by z",
        v(psi(&zm(&psi(&zm(t, -1)), 2))) / z0,
        -s0 * v(psi(&ts)) - z0 * v(psi(&tz)) - z0 * v(psi(&zm(t, -1))),
    );
    check("z-derivative commutator", v(psi(&tz)), v(psi(t).dz()) + tz.value());
    check("z times z-derivative", z0 * v(psi(t).dz()), v(psi(&zm(&tz, 1))));
    check("s-derivative commutator", v(psi(t).ds()), v(psi(&ts)) - ts.value());
    check("s-derivative of the z-quotient", z0 * v(psi(&zm(t, -1)).ds()), v(psi(&ts)));
    check("z-derivative of the z-quotient", v(zm(&psi(&zm(t, -1)), 1).dz()), v(psi(&tz)));
    check(
        "nested s-shift",
        v(psi(&zm(&psi(&zm(&ts, -1)), 2))),
        z0 * v(psi(&zm(&psi(&zm(t, -2)), 2)).ds()),
    );
    check(
        "s-derivative of the double shift",
        v(psi(&zm(&psi(&zm(t, -2)), 2)).ds()),
        v(psi(&zm(&psi(&zm(&ts, -1)), 1))) - z0 * v(psi(&zm(&ts, -1))),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coords::{embed, random_orthogonal};
    use std::collections::BTreeMap;

    fn model(text: &str) -> PhiModel {
        PhiModel::parse(text, BTreeMap::new(), 3).unwrap()
    }

    fn point(seed: u64, z: f64) -> (ConfigPoint, TangentVector) {
        let p = ReducedPoint { x0: 0.15, r: 0.55, s: -0.2, z, u: 1.3 };
        embed(&p, &random_orthogonal(seed, 3))
    }

    fn poly_theta(s0: f64, z0: f64) -> SzJet {
        let s = SzJet::s(s0, z0, 6);
        let z = SzJet::z(s0, z0, 6);
        // 1 + s - 2z + 3 s^2 z - s z^3 + 0.5 z^4
        let z2 = &z * &z;
        let a = (s.clone() + 1.0) - z.clone() * 2.0;
        let b = (&(&s * &s) * &z) * 3.0 - &(&s * &z2) * &z;
        &(&a + &b) + &((&z2 * &z2) * 0.5)
    }

    #[test]
    fn psi_examples() {
        let s = SzJet::s(1.0, 1.0, 4);
        let z = SzJet::z(1.0, 1.0, 4);
        assert_eq!(psi_apply(&(&s * &s)).unwrap().value(), -2.0);
        assert_eq!(psi_apply(&(&s * &z)).unwrap().value(), -2.0);
        let theta = &(&s * &s) * &z;
        let lhs = psi(&theta.dz()).value();
        let rhs = psi(&theta).dz().value() + theta.dz().value();
        assert_eq!(lhs, -2.0);
        assert_eq!(rhs, -2.0);
        assert!(psi_apply(&SzJet::constant(1.0, 1.0, 0, 1.0)).is_err());
    }

    #[test]
    fn identities_hold_for_a_fixed_polynomial() {
        for d in psi_identity_defects(&poly_theta(0.3, -0.7)) {
            assert!(d.1 < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn euclidean_has_no_projected_fields() {
        let m = model("sqrt(1+z^2)");
        let f = rt_fields(&m, &ReducedPoint { x0: 0.0, r: 0.5, s: 0.1, z: 0.4, u: 1.0 }, 3).unwrap();
        for j in [&f.r, &f.t, &f.u, &f.l] {
            assert!(j.jet().coeffs().iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn rt_identity() {
        let m = model("sqrt(1+r^2-s^2+exp(x0)*z^2) + s/(1+r^2) + 0.1*s*z^2");
        let p = ReducedPoint { x0: 0.1, r: 0.6, s: 0.2, z: 0.7, u: 1.0 };
        let f = rt_fields(&m, &p, 2).unwrap();
        let lhs = f.r.value() + p.z * f.t.value();
        let rhs = f.l.value() + p.s * p.z * f.u.value();
        assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn closed_matches_oracle_for_non_douglas_field() {
        let m = model("sqrt(1+z^2)+0.1*s*z^2");
        let (x, y) = point(3, 0.8);
        let a = douglas_closed(&m, &x, &y).unwrap();
        let b = douglas_oracle(&m, &x, &y).unwrap();
        assert!(b.max_abs() > 1e-4);
        let cmp = a.compare(&b, 1e-7, 1e-10);
        assert!(cmp.passes(), "{cmp:?}");
    }

    #[test]
    fn euclidean_douglas_vanishes() {
        let m = model("sqrt(1+z^2)");
        let (x, y) = point(1, 0.5);
        assert!(douglas_oracle(&m, &x, &y).unwrap().max_abs() < 1e-12);
        assert_eq!(douglas_closed(&m, &x, &y).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn z_floor_is_enforced() {
        let m = model("sqrt(1+z^2)");
        let (x, y) = point(1, 1e-4);
        assert!(matches!(douglas_closed(&m, &x, &y), Err(Error::OutOfDomain(_))));
        assert!(douglas_oracle(&m, &x, &y).is_ok());
    }

    #[test]
    fn oracle_symmetry_homogeneity_and_projective_invariance() {
        let m = model("sqrt(1+r^2-s^2+z^2)+0.1*z^3/(1+s^2)");
        let (x, y) = point(7, -0.6);
        let d1 = douglas_oracle(&m, &x, &y).unwrap();
        assert!(d1.max_lower_asymmetry() < 1e-10);
        let d2 = douglas_oracle(&m, &x, &y.scaled(2.0)).unwrap();
        for (a, b) in d1.comps.iter().zip(&d2.comps) {
            assert!((0.5 * a - b).abs() <= 1e-9 * a.abs().max(1e-6));
        }
        let d3 = douglas_oracle_shifted(&m, &x, &y, 0.37).unwrap();
        assert!(d3.compare(&d1, 0.0, 1e-8).passes());
    }

    #[test]
    fn derivative_identities_in_full_coordinates() {
        let x = ConfigPoint::new(0.2, vec![0.4, -0.3, 0.25]);
        let y = TangentVector::new(0.7, vec![0.9, 0.3, -0.5]);
        let p = reduce(&x, &y).unwrap();
        let fj = crate::spray::fiber_jets(&x, &y, &p, 2);
        let n = 3;
        let e = |k: usize| {
            let mut a = vec![0u8; n + 1];
            a[k] = 1;
            a
        };
        let ui: Vec<f64> = (1..=n).map(|i| fj.u.partial(&e(i))).collect();
        let si: Vec<f64> = (1..=n).map(|i| fj.ds.partial(&e(i))).collect();
        let zi: Vec<f64> = (1..=n).map(|i| fj.dz.partial(&e(i))).collect();
        for i in 0..n {
            assert!((ui[i] - y.ybar[i] / p.u).abs() < 1e-12);
            assert!((si[i] - (x.xbar[i] - p.s * ui[i]) / p.u).abs() < 1e-12);
            assert!((zi[i] + p.z / p.u * ui[i]).abs() < 1e-12);
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let gap = p.r * p.r - p.s * p.s;
        assert!((dot(&ui, &ui) - 1.0).abs() < 1e-12);
        assert!((dot(&ui, &x.xbar) - p.s).abs() < 1e-12);
        assert!((dot(&si, &x.xbar) - gap / p.u).abs() < 1e-12);
        assert!(dot(&si, &ui).abs() < 1e-12);
        assert!((p.u * dot(&zi, &x.xbar) + p.s * p.z).abs() < 1e-12);
        assert!((dot(&zi, &ui) + p.z / p.u).abs() < 1e-12);
        assert!((dot(&si, &si) - gap / (p.u * p.u)).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_constant_u() {
        let m = model("sqrt(exp(x0)^2*exp(r^2)*z^2+1)/exp(r^2/2) + exp(x0)*z");
        let c = fit_coefficients(&m, 0.3, 0.5, 12).unwrap();
        assert!((c.f[3] - 0.5).abs() < 1e-9, "{c:?}");
        assert!((c.h[0] - 0.4).abs() < 1e-9 && (c.h[1] - 0.2).abs() < 1e-9, "{c:?}");
        assert!((c.g[1] - 0.6).abs() < 1e-9 && (c.g[2] - 0.6).abs() < 1e-9, "{c:?}");
        assert!(c.fit_residual < 1e-9);
    }

    #[test]
    fn degenerate_nodes_are_rejected() {
        let m = model("sqrt(1+z^2)");
        let nodes: Vec<(f64, f64)> = (0..12).map(|i| (0.01 * i as f64, 1.0)).collect();
        assert!(matches!(fit_on_nodes(&m, 0.0, 0.5, &nodes), Err(Error::RankDeficient { .. })));
        assert!(fit_coefficients(&m, 0.0, 0.5, 6).is_err());
    }

    #[test]
    fn reduced_pde_gap_floor() {
        let m = model("sqrt(1+z^2)");
        assert!(reduced_pde_at(&m, &ReducedPoint { x0: 0.0, r: 0.5, s: 0.5, z: 0.3, u: 1.0 }).is_err());
        let v = reduced_pde_at(&m, &ReducedPoint { x0: 0.0, r: 0.5, s: 0.2, z: 0.3, u: 1.0 }).unwrap();
        assert!(v.abs() < 1e-12);
    }
}
