//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use cylfin::catalog::catalog_instance_unchecked;
use cylfin::expr::{parse, Bindings};
use cylfin::finsler::PhiModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Profile phi(x0, r, s, z) as an expression
    #[arg(long, conflicts_with = "catalog")]
    pub phi: Option<String>,
    /// Built-in profile id (see `examples`)
    #[arg(long)]
    pub catalog: Option<String>,
    /// Parameter binding; repeatable. Function-valued parameters take expressions.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    /// Dimension of the ball factor
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Ball radius
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long = "x0-min", allow_hyphen_values = true)]
    pub x0_min: Option<f64>,
    #[arg(long = "x0-max", allow_hyphen_values = true)]
    pub x0_max: Option<f64>,
    /// TOML file with the same keys as the flags; flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    phi: Option<String>,
    catalog: Option<String>,
    #[serde(default)]
    params: BTreeMap<String, toml::Value>,
    n: Option<usize>,
    samples: Option<usize>,
    seed: Option<u64>,
    tol: Option<f64>,
    out: Option<PathBuf>,
    format: Option<Format>,
    threads: Option<usize>,
    rho: Option<f64>,
    x0_min: Option<f64>,
    x0_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Phi(String),
    Catalog(String),
}

/// Fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub source: Source,
    pub params: BTreeMap<String, String>,
    pub n: usize,
    pub rho: f64,
    pub x0_interval: (f64, f64),
    pub samples: usize,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
}

pub const DEFAULT_N: usize = 3;
pub const DEFAULT_SAMPLES: usize = 100;

fn read_file(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn value_text(v: &toml::Value) -> anyhow::Result<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(format!("{f:?}")),
        other => bail!("parameter values must be numbers or expression strings, got {other}"),
    }
}

impl RunConfig {
    /// Merges the config file (if any) under the flags. `source_optional`
    /// lets `examples` run without a profile.
    pub fn resolve(args: &CommonArgs, source_optional: bool) -> anyhow::Result<RunConfig> {
        let file = match &args.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let source = match (&args.phi, &args.catalog) {
            (Some(p), _) => Some(Source::Phi(p.clone())),
            (None, Some(c)) => Some(Source::Catalog(c.clone())),
            (None, None) => match (&file.phi, &file.catalog) {
                (Some(_), Some(_)) => bail!("the config file sets both `phi` and `catalog`"),
                (Some(p), None) => Some(Source::Phi(p.clone())),
                (None, Some(c)) => Some(Source::Catalog(c.clone())),
                (None, None) => None,
            },
        };
        let source = match source {
            Some(s) => s,
            None if source_optional => Source::Catalog(String::new()),
            None => bail!("one of --phi or --catalog is required"),
        };
        let mut params = BTreeMap::new();
        for (k, v) in &file.params {
            params.insert(k.clone(), value_text(v)?);
        }
        for p in &args.params {
            let (k, v) = p.split_once('=').ok_or_else(|| anyhow!("--param expects NAME=VALUE, got `{p}`"))?;
            let k = k.trim();
            if k.is_empty() {
                bail!("--param expects NAME=VALUE, got `{p}`");
            }
            params.insert(k.to_string(), v.trim().to_string());
        }
        let cfg = RunConfig {
            source,
            params,
            n: args.n.or(file.n).unwrap_or(DEFAULT_N),
            rho: args.rho.or(file.rho).unwrap_or(1.0),
            x0_interval: (args.x0_min.or(file.x0_min).unwrap_or(-1.0), args.x0_max.or(file.x0_max).unwrap_or(1.0)),
            samples: args.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
            seed: args.seed.or(file.seed),
            tol: args.tol.or(file.tol),
            out: args.out.clone().or(file.out),
            format: args.format.or(file.format).unwrap_or(Format::Json),
            threads: args.threads.or(file.threads),
        };
        if let Some(t) = cfg.tol {
            if !(t > 0.0) {
                bail!("--tol must be positive, got {t}");
            }
        }
        if cfg.samples == 0 {
            bail!("--samples must be at least 1");
        }
        if cfg.threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| anyhow!("--seed is required for randomized checks"))
    }

    pub fn tol_or(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }

    pub fn model(&self) -> anyhow::Result<PhiModel> {
        match &self.source {
            Source::Phi(text) => {
                let mut values = BTreeMap::new();
                for (k, v) in &self.params {
                    let e = parse(v).with_context(|| format!("parameter `{k}`"))?;
                    let x = e
                        .evaluate(&Bindings::new())
                        .with_context(|| format!("parameter `{k}` must be a constant when used with --phi"))?;
                    values.insert(k.clone(), x);
                }
                Ok(PhiModel::parse(text, values, self.n)?
                    .with_rho(self.rho)
                    .with_x0_interval(self.x0_interval.0, self.x0_interval.1))
            }
            Source::Catalog(id) => {
                Ok(catalog_instance_unchecked(id, &self.params, self.n)?.with_domain(self.rho, self.x0_interval)?.model)
            }
        }
    }
}
