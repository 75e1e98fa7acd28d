//! Command-line driver: configuration, sampling sweeps, report emission.

pub mod config;
pub mod geodesic;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use cylfin::catalog::{catalog, catalog_instance_unchecked, verify_instance, VerifyOptions};
use cylfin::coords::{symmetry_check_with, ConfigPoint, ReducedPoint, SampleSet, TangentVector};
use cylfin::douglas::{
    douglas_closed, douglas_oracle, douglas_oracle_shifted, fit_coefficients, flatness_residuals, projective_flatness,
    reduced_pde_residual, reduced_pde_residual_for, Z_FLOOR,
};
use cylfin::expr::parse;
use cylfin::finsler::{metric_tensor, validity_scan, GridSpec, PhiModel};
use cylfin::report::{CheckResult, Discrepancy, WorstPoint};
use cylfin::spray::{divergence_oracle, spray_coefficients, spray_divergence, spray_oracle_pq};

use config::{CommonArgs, Format, RunConfig, Source};
use geodesic::geodesic_integrate;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cylfin", version, about = "Spray and Douglas curvature checks for cylindrically symmetric Finsler metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Strong convexity scan of phi on a grid, and the determinant identity at random points
    Validate(CommonArgs),
    /// Closed-form spray against the derivative oracle
    Spray(CommonArgs),
    /// Douglas curvature: vanishing and closed form against the oracle
    Douglas(CommonArgs),
    /// The eight vanishing conditions on R, T and U
    Flatness(CommonArgs),
    /// Polynomial coefficients of U, R and T at fixed (x0, r)
    Fit(FitArgs),
    /// Residual of the reduced first-order PDE for psi
    ReducedPde(PdeArgs),
    /// RK4 geodesic trace with F conservation
    Geodesic(GeodesicArgs),
    /// Rotation invariance, homogeneity and projective invariance
    Symcheck(CommonArgs),
    /// Full verification of the built-in catalog
    Examples(CommonArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Defaults to the midpoint of the x0 interval
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    /// Defaults to rho/2
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value_t = 16)]
    nodes: usize,
}

#[derive(Debug, Args)]
struct PdeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Use this psi(x0, r, s, z) instead of sqrt(r^2-s^2)*Omega
    #[arg(long)]
    psi: Option<String>,
}

#[derive(Debug, Args)]
struct GeodesicArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Initial point x0,x1,..,xn
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    /// Initial velocity y0,y1,..,yn
    #[arg(long, allow_hyphen_values = true)]
    y: String,
    #[arg(long = "t-end", default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    pub checks: Vec<CheckResult>,
    pub discrepancies: Vec<Discrepancy>,
    pub data: Value,
    pub passed: bool,
    pub timing_ms: f64,
}

impl Report {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["check", "max_abs", "tolerance", "passed"]).expect("in-memory write");
        for c in &self.checks {
            w.write_record([c.name.clone(), format!("{:e}", c.max_abs), format!("{:e}", c.tolerance), c.passed.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }
}

/// Result of one invocation.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub report: Option<Report>,
    pub stdout: String,
    pub stderr: String,
}

struct Body {
    checks: Vec<CheckResult>,
    discrepancies: Vec<Discrepancy>,
    data: Value,
    /// Replaces the report on stdout (`--format csv` geodesic traces).
    raw: Option<String>,
}

impl Body {
    fn new(checks: Vec<CheckResult>, data: Value) -> Self {
        Body { checks, discrepancies: Vec::new(), data, raw: None }
    }
}

pub fn run_command<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    Outcome { code: EXIT_PASS, report: None, stdout: text, stderr: String::new() }
                }
                _ => Outcome { code: EXIT_USAGE, report: None, stdout: String::new(), stderr: text },
            };
        }
    };
    match execute(cli) {
        Ok(o) => o,
        Err(e) => Outcome { code: EXIT_USAGE, report: None, stdout: String::new(), stderr: format!("error: {e:#}\n") },
    }
}

fn execute(cli: Cli) -> anyhow::Result<Outcome> {
    let (name, common) = match &cli.command {
        Command::Validate(c) => ("validate", c),
        Command::Spray(c) => ("spray", c),
        Command::Douglas(c) => ("douglas", c),
        Command::Flatness(c) => ("flatness", c),
        Command::Fit(a) => ("fit", &a.common),
        Command::ReducedPde(a) => ("reduced-pde", &a.common),
        Command::Geodesic(a) => ("geodesic", &a.common),
        Command::Symcheck(c) => ("symcheck", c),
        Command::Examples(c) => ("examples", c),
    };
    let cfg = RunConfig::resolve(common, matches!(cli.command, Command::Examples(_)))?;
    let start = Instant::now();
    let run = || -> anyhow::Result<Body> {
        match &cli.command {
            Command::Validate(_) => validate(&cfg),
            Command::Spray(_) => spray(&cfg),
            Command::Douglas(_) => douglas(&cfg),
            Command::Flatness(_) => flatness(&cfg),
            Command::Fit(a) => fit(&cfg, a),
            Command::ReducedPde(a) => reduced_pde(&cfg, a),
            Command::Geodesic(a) => geodesic(&cfg, a),
            Command::Symcheck(_) => symcheck(&cfg),
            Command::Examples(_) => examples(&cfg),
        }
    };
    let body = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build().context("building the thread pool")?.install(run),
        None => run(),
    }?;
    let passed = body.checks.iter().all(|c| c.passed);
    let report = Report {
        tool: "cylfin",
        version: env!("CARGO_PKG_VERSION"),
        command: name.to_string(),
        config: cfg.clone(),
        checks: body.checks,
        discrepancies: body.discrepancies,
        data: body.data,
        passed,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    let text = match (&body.raw, cfg.format) {
        (Some(raw), _) => raw.clone(),
        (None, Format::Json) => report.to_json(),
        (None, Format::Csv) => report.to_csv(),
    };
    let mut stdout = String::new();
    match &cfg.out {
        Some(path) => std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => stdout = text,
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let stderr = if failed.is_empty() { String::new() } else { format!("failed checks: {}\n", failed.join(", ")) };
    Ok(Outcome { code: if passed { EXIT_PASS } else { EXIT_CHECK_FAILED }, report: Some(report), stdout, stderr })
}

/// Parallel sweep over embedded samples; returns the max of `f` and the
/// point where it occurs.
fn sweep<F>(samples: &SampleSet, n: usize, f: F) -> cylfin::Result<(f64, Option<WorstPoint>)>
where
    F: Fn(&ConfigPoint, &TangentVector, &ReducedPoint) -> cylfin::Result<f64> + Sync,
{
    let vals: Vec<(f64, ConfigPoint, TangentVector)> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = samples.embedded(i, n);
            let v = f(&x, &y, &samples.points[i])?;
            Ok((if v.is_nan() { f64::INFINITY } else { v }, x, y))
        })
        .collect::<cylfin::Result<_>>()?;
    let mut best = (0.0f64, None);
    for (i, (v, x, y)) in vals.into_iter().enumerate() {
        if best.1.is_none() || v > best.0 {
            best = (v, Some(WorstPoint::full(samples.points[i], x, y)));
        }
    }
    Ok(best)
}

fn samples(cfg: &RunConfig, model: &PhiModel) -> anyhow::Result<SampleSet> {
    Ok(model.sample_valid(cfg.samples, cfg.seed()?)?)
}

fn validate(cfg: &RunConfig) -> anyhow::Result<Body> {
    let model = cfg.model()?;
    let scan = validity_scan(&model, &GridSpec::standard(&model));
    let mut checks = vec![CheckResult {
        name: "validity".into(),
        max_abs: scan.violation_count as f64,
        tolerance: 1.0,
        passed: scan.valid,
        worst: None,
        detail: Some(format!("{} violations among {} grid points", scan.violation_count, scan.points)),
    }];
    if cfg.seed.is_some() && scan.valid {
        let set = samples(cfg, &model)?;
        let (v, w) = sweep(&set, model.n(), |x, y, _| {
            let g = metric_tensor(&model, x, y)?;
            let det = g.determinant();
            Ok((det - g.determinant_closed_form()).abs() / det.abs())
        })?;
        checks.push(CheckResult::below("determinant identity", v, cfg.tol_or(1e-9), w));
    }
    Ok(Body::new(checks, serde_json::to_value(&scan)?))
}

fn spray(cfg: &RunConfig) -> anyhow::Result<Body> {
    let model = cfg.model()?;
    let set = samples(cfg, &model)?;
    let tol = cfg.tol_or(1e-8);
    let (v, w) = sweep(&set, model.n(), |x, y, _| {
        Ok(spray_coefficients(&model, x, y)?.relative_error(&spray_oracle_pq(&model, x, y)?, 1e-12))
    })?;
    let (dv, dw) = sweep(&set, model.n(), |x, y, _| {
        let o = divergence_oracle(&model, x, y)?;
        Ok((spray_divergence(&model, x, y)? - o).abs() / o.abs().max(1.0))
    })?;
    Ok(Body::new(
        vec![CheckResult::below("spray cross-oracle", v, tol, w), CheckResult::below("divergence cross-oracle", dv, tol, dw)],
        json!({ "samples": set.len() }),
    ))
}

fn douglas(cfg: &RunConfig) -> anyhow::Result<Body> {
    let model = cfg.model()?;
    let set = samples(cfg, &model)?;
    let (dmax, dw) = sweep(&set, model.n(), |x, y, _| Ok(douglas_oracle(&model, x, y)?.max_abs()))?;
    let (ratio, rw) = sweep(&set, model.n(), |x, y, p| {
        if p.z.abs() < Z_FLOOR {
            return Ok(0.0);
        }
        let oracle = douglas_oracle(&model, x, y)?;
        Ok(douglas_closed(&model, x, y)?.compare(&oracle, 1e-7, 1e-10).worst_ratio)
    })?;
    let mut closed = CheckResult::below("douglas closed vs oracle", ratio, 1.0, rw)
        .with_detail("max over points of |closed - oracle| / max(1e-10, 1e-7 |oracle|)");
    closed.passed = ratio <= 1.0;
    let pf = projective_flatness(&model, &set)?;
    Ok(Body::new(
        vec![CheckResult::below("douglas vanishing", dmax, cfg.tol_or(1e-9), dw), closed],
        json!({ "samples": set.len(), "projective_flatness": pf }),
    ))
}

fn flatness(cfg: &RunConfig) -> anyhow::Result<Body> {
    let model = cfg.model()?;
    let set = samples(cfg, &model)?;
    let res = flatness_residuals(&model, &set)?;
    let tol = cfg.tol_or(1e-9);
    let checks = res
        .named()
        .into_iter()
        .zip(&res.worst_points)
        .map(|((name, v), w)| CheckResult::below(name, v, tol, w.map(WorstPoint::reduced)))
        .collect();
    Ok(Body::new(checks, json!({ "samples": set.len() })))
}

fn fit(cfg: &RunConfig, a: &FitArgs) -> anyhow::Result<Body> {
    let model = cfg.model()?;
    let x0 = a.x0.unwrap_or(0.5 * (cfg.x0_interval.0 + cfg.x0_interval.1));
    let r = a.r.unwrap_or(0.5 * cfg.rho);
    let c = fit_coefficients(&model, x0, r, a.nodes)?;
    let worst = c.fit_residual.max(c.l_reconstruction_residual);
    Ok(Body::new(vec![CheckResult::below("fit residual", worst, cfg.tol_or(1e-9), None)], serde_json::to_value(&c)?))
}

fn reduced_pde(cfg: &RunConfig, a: &PdeArgs) -> anyhow::Result<Body> {
    let model = cfg.model()?;
    let set = samples(cfg, &model)?;
    let res = match &a.psi {
        Some(text) => reduced_pde_residual_for(&model, &parse(text)?, &set)?,
        None => reduced_pde_residual(&model, &set)?,
    };
    Ok(Body::new(
        vec![CheckResult::below("reduced pde", res.max_abs, cfg.tol_or(1e-8), res.worst.map(WorstPoint::reduced))],
        json!({ "samples": set.len(), "psi": a.psi }),
    ))
}

fn parse_vector(text: &str, n: usize, what: &str) -> anyhow::Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| anyhow!("{what}: `{t}` is not a number ({e})")))
        .collect::<anyhow::Result<_>>()?;
    if v.len() != n + 1 {
        bail!("{what} needs {} comma-separated components for n = {n}, got {}", n + 1, v.len());
    }
    Ok(v)
}

fn geodesic(cfg: &RunConfig, a: &GeodesicArgs) -> anyhow::Result<Body> {
    let model = cfg.model()?;
    let x = ConfigPoint::from_full(&parse_vector(&a.x, cfg.n, "--x")?);
    let y = TangentVector::from_full(&parse_vector(&a.y, cfg.n, "--y")?);
    let trace = geodesic_integrate(&model, &x, &y, a.t_end, a.steps)?;
    let drift = trace.drift();
    let checks = vec![CheckResult::below("F drift", drift, cfg.tol_or(1e-6), None)];
    let body = match cfg.format {
        Format::Csv => {
            let mut buf = Vec::new();
            trace.write_csv(&mut buf)?;
            let mut b = Body::new(checks, json!({ "steps": a.steps, "t_end": a.t_end, "drift": drift }));
            b.raw = Some(String::from_utf8(buf)?);
            b
        }
        Format::Json => Body::new(checks, json!({ "steps": a.steps, "t_end": a.t_end, "drift": drift, "trace": trace })),
    };
    Ok(body)
}

const SCALE: f64 = 2.5;

fn symcheck(cfg: &RunConfig) -> anyhow::Result<Body> {
    let model = cfg.model()?;
    let n = model.n();
    let seed = cfg.seed()?;
    let sym = symmetry_check_with(n, &model.region(), cfg.samples, seed, |x, y| model.finsler(x, y))?;
    let sym_worst = sym.worst.map(|(x, y)| {
        let p = cylfin::coords::reduce(&x, &y).expect("sampled points reduce");
        WorstPoint::full(p, x, y)
    });
    let set = samples(cfg, &model)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let (f, fw) = sweep(&set, n, |x, y, _| Ok(rel(model.finsler(x, &y.scaled(SCALE))?, SCALE * model.finsler(x, y)?)))?;
    let (g, gw) = sweep(&set, n, |x, y, _| {
        let a = spray_coefficients(&model, x, &y.scaled(SCALE))?.full();
        let b = spray_coefficients(&model, x, y)?.full();
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Ok(a.iter().zip(&b).map(|(p, q)| (p - SCALE * SCALE * q).abs()).fold(0.0, f64::max) / scale)
    })?;
    let (d, dw) = sweep(&set, n, |x, y, _| {
        Ok(rel(spray_divergence(&model, x, &y.scaled(SCALE))?, SCALE * spray_divergence(&model, x, y)?))
    })?;
    let (dd, ddw) = sweep(&set, n, |x, y, _| {
        let a = douglas_oracle(&model, x, &y.scaled(SCALE))?;
        let b = douglas_oracle(&model, x, y)?;
        let diff = a.comps.iter().zip(&b.comps).map(|(p, q)| (SCALE * p - q).abs()).fold(0.0, f64::max);
        Ok(diff / b.max_abs().max(1.0))
    })?;
    let (pi, piw) = sweep(&set, n, |x, y, _| {
        let a = douglas_oracle_shifted(&model, x, y, 0.37)?;
        let b = douglas_oracle(&model, x, y)?;
        Ok(a.comps.iter().zip(&b.comps).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
    })?;
    Ok(Body::new(
        vec![
            CheckResult::below("rotation invariance of F", sym.max_deviation, cfg.tol_or(1e-12), sym_worst),
            CheckResult::below("homogeneity of F", f, 1e-10, fw),
            CheckResult::below("homogeneity of G", g, 1e-10, gw),
            CheckResult::below("homogeneity of divergence", d, 1e-10, dw),
            CheckResult::below("homogeneity of Douglas", dd, 1e-10, ddw),
            CheckResult::below("projective invariance of Douglas", pi, 1e-8, piw),
        ],
        json!({ "samples": set.len(), "scale": SCALE }),
    ))
}

fn examples(cfg: &RunConfig) -> anyhow::Result<Body> {
    let seed = cfg.seed()?;
    let ids: Vec<&str> = match &cfg.source {
        Source::Phi(_) => bail!("`examples` runs catalog entries; use --catalog <id> or no profile"),
        Source::Catalog(id) if !id.is_empty() => vec![id.as_str()],
        Source::Catalog(_) => catalog().iter().map(|e| e.id).collect(),
    };
    if ids.len() > 1 && !cfg.params.is_empty() {
        bail!("--param needs --catalog when running `examples`");
    }
    let opts = VerifyOptions { samples: cfg.samples, reference_points: 20, seed };
    let mut body = Body::new(Vec::new(), Value::Null);
    let mut entries = Vec::new();
    for id in ids {
        let params = if cfg.params.is_empty() { BTreeMap::new() } else { cfg.params.clone() };
        let inst = catalog_instance_unchecked(id, &params, cfg.n)?.with_domain(cfg.rho, cfg.x0_interval)?;
        let rep = verify_instance(&inst, &opts);
        entries.push(json!({
            "id": rep.id,
            "params": rep.params,
            "passed": rep.passed,
            "douglas_expected": rep.douglas_expected,
            "projectively_flat_expected": rep.projectively_flat_expected,
            "projectively_flat": rep.projectively_flat,
        }));
        for mut c in rep.checks {
            c.name = format!("{}: {}", rep.id, c.name);
            body.checks.push(c);
        }
        body.discrepancies.extend(rep.discrepancies);
    }
    body.data = json!({ "entries": entries });
    Ok(body)
}
