use std::f64::consts::PI;

use clap::{Args, ValueEnum};
use conevac::asymptotics::RadialGrid;
use conevac::{Component, ConeGeometry, Coupling, Geometry, Precision, SplitAxis, SplitConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Exactly one of these selects the geometry.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryArgs {
    /// Cone angle in radians.
    #[arg(long, allow_hyphen_values = true)]
    pub theta1: Option<f64>,
    /// Cone angle as a multiple of pi.
    #[arg(long = "theta1-over-pi", value_name = "X", allow_hyphen_values = true)]
    pub theta1_over_pi: Option<f64>,
    /// Cone of angle 2 pi / K, built from K images.
    #[arg(long = "cone-N", value_name = "K")]
    pub cone_n: Option<u32>,
    /// The infinite-angle (Dowker) space.
    #[arg(long)]
    pub dowker: bool,
    /// Dirichlet wedge of this opening angle in radians.
    #[arg(long = "wedge-alpha", value_name = "ALPHA", allow_hyphen_values = true)]
    pub wedge_alpha: Option<f64>,
}

impl GeometryArgs {
    fn given(&self) -> usize {
        [
            self.theta1.is_some(),
            self.theta1_over_pi.is_some(),
            self.cone_n.is_some(),
            self.dowker,
            self.wedge_alpha.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count()
    }

    /// These flags if any were given, else `fallback`.
    pub fn or(self, fallback: GeometryArgs) -> GeometryArgs {
        if self.given() > 0 {
            self
        } else {
            fallback
        }
    }

    pub fn resolve(&self) -> Result<Geometry> {
        if self.given() != 1 {
            return Err(CliError::Config(
                "give exactly one of --theta1, --theta1-over-pi, --cone-N, --dowker, --wedge-alpha".into(),
            ));
        }
        let g = if let Some(t) = self.theta1 {
            Geometry::cone(t)?
        } else if let Some(x) = self.theta1_over_pi {
            Geometry::cone(x * PI)?
        } else if let Some(k) = self.cone_n {
            Geometry::Cone(ConeGeometry::from_images(k)?)
        } else if self.dowker {
            Geometry::dowker()
        } else {
            Geometry::wedge(self.wedge_alpha.expect("counted above"))?
        };
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Scan settings, from flags or a JSON file with the same field names.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Ray of a wedge scan in radians; defaults to alpha / 2.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Couplings, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Vec<f64>,
    /// `axial` or `temporal`.
    #[arg(long = "split-axis")]
    pub split_axis: Option<String>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Components to write, comma separated; all by default.
    #[arg(long, value_delimiter = ',')]
    pub components: Vec<String>,
    /// Largest radius; defaults to 0.1 cutoff.
    #[arg(long = "r-max")]
    pub r_max: Option<f64>,
    /// Grid ratio in (0, 1); with --count replaces --r-min and --per-decade.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Smallest radius; defaults to 1e-3 cutoff.
    #[arg(long = "r-min")]
    pub r_min: Option<f64>,
    #[arg(long = "per-decade")]
    pub per_decade: Option<usize>,
    /// `double` or `extended`; defaults to CONEVAC_PRECISION.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file; standard output by default.
    #[arg(long, short)]
    pub output: Option<String>,
    /// JSON file with any of the fields above; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<String>,
}

/// A validated scan.
#[derive(Debug, Clone)]
pub struct Scan {
    pub geometry: Geometry,
    pub theta: Option<f64>,
    pub betas: Vec<f64>,
    pub split: SplitConfig,
    pub components: Vec<Component>,
    pub grid: RadialGrid,
    pub precision: Precision,
    pub format: Format,
    pub output: Option<String>,
}

impl ScanConfig {
    pub fn load(self) -> Result<ScanConfig> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let file: ScanConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
        Ok(self.over(file))
    }

    fn over(self, file: ScanConfig) -> ScanConfig {
        fn vec_or<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
            if a.is_empty() {
                b
            } else {
                a
            }
        }
        ScanConfig {
            geometry: self.geometry.or(file.geometry),
            theta: self.theta.or(file.theta),
            beta: vec_or(self.beta, file.beta),
            split_axis: self.split_axis.or(file.split_axis),
            cutoff: self.cutoff.or(file.cutoff),
            components: vec_or(self.components, file.components),
            r_max: self.r_max.or(file.r_max),
            q: self.q.or(file.q),
            count: self.count.or(file.count),
            r_min: self.r_min.or(file.r_min),
            per_decade: self.per_decade.or(file.per_decade),
            precision: self.precision.or(file.precision),
            format: self.format.or(file.format),
            output: self.output.or(file.output),
            config: None,
        }
    }

    pub fn resolve(self) -> Result<Scan> {
        let geometry = self.geometry.resolve()?;
        let split = split(self.split_axis.as_deref(), self.cutoff)?;
        let theta = match (geometry, self.theta) {
            (Geometry::Wedge { alpha }, Some(t)) if !(t > 0.0 && t < alpha) => {
                return Err(CliError::Config(format!(
                    "wedge ray must satisfy 0 < theta < alpha, got {t}"
                )));
            }
            (Geometry::Wedge { .. }, t) => t,
            (_, Some(_)) => return Err(CliError::Config("--theta applies to wedges only".into())),
            (_, None) => None,
        };
        let betas = if self.beta.is_empty() { vec![0.0] } else { self.beta };
        if let Some(b) = betas.iter().find(|b| !b.is_finite()) {
            return Err(CliError::Config(format!("coupling must be finite, got {b}")));
        }
        let components = if self.components.is_empty() {
            Component::ALL.to_vec()
        } else {
            let mut c = self
                .components
                .iter()
                .map(|s| s.parse::<Component>())
                .collect::<conevac::Result<Vec<_>>>()?;
            c.sort();
            c.dedup();
            c
        };
        let z = split.cutoff;
        let r_max = self.r_max.unwrap_or(0.1 * z);
        let grid = match (self.q, self.count) {
            (Some(q), Some(count)) => {
                if self.r_min.is_some() || self.per_decade.is_some() {
                    return Err(CliError::Config("--q/--count exclude --r-min/--per-decade".into()));
                }
                RadialGrid::new(r_max, q, count)?
            }
            (None, None) => RadialGrid::covering(self.r_min.unwrap_or(1e-3 * z), r_max, self.per_decade.unwrap_or(10))?,
            _ => return Err(CliError::Config("--q and --count go together".into())),
        };
        Ok(Scan {
            geometry,
            theta,
            betas,
            split,
            components,
            grid,
            precision: precision(self.precision.as_deref())?,
            format: self.format.unwrap_or_default(),
            output: self.output,
        })
    }
}

impl Scan {
    pub fn couplings(&self) -> impl Iterator<Item = Coupling> + '_ {
        self.betas.iter().map(|&b| Coupling::new(b))
    }
}

pub fn split(axis: Option<&str>, cutoff: Option<f64>) -> Result<SplitConfig> {
    let axis: SplitAxis = axis.unwrap_or("axial").parse()?;
    Ok(SplitConfig::new(axis, cutoff.unwrap_or(1.0))?)
}

/// The named mode, else the environment default.
pub fn precision(name: Option<&str>) -> Result<Precision> {
    match name {
        Some(s) => s.parse().map_err(CliError::Config),
        None => Ok(Precision::from_env()),
    }
}

/// `LO,HI` pairs.
pub fn window(v: &[f64]) -> Result<Option<(f64, f64)>> {
    match v {
        [] => Ok(None),
        [lo, hi] if *lo > 0.0 && lo < hi => Ok(Some((*lo, *hi))),
        _ => Err(CliError::Config(format!(
            "window must be LO,HI with 0 < LO < HI, got {v:?}"
        ))),
    }
}
