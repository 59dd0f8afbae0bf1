use std::collections::BTreeMap;

use conevac::asymptotics::{CurveMeta, RadialCurve, RadialGrid};
use conevac::{Component, Coupling, Geometry, Precision, SplitAxis, SplitConfig};
use serde::{Deserialize, Serialize};

use crate::config::Format;
use crate::error::{CliError, Result};

/// Configuration recorded alongside scan rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub version: String,
    pub geometry: Geometry,
    /// Cone angle; infinite for the Dowker space, absent for wedges.
    #[serde(with = "angle")]
    pub theta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<f64>,
    pub beta: Vec<f64>,
    pub cutoff: f64,
    pub split_axis: SplitAxis,
    pub precision: Precision,
    pub r_max: f64,
    pub q: f64,
    pub count: usize,
    pub components: Vec<Component>,
}

/// `inf` is not a JSON number, so the Dowker angle is written as a string.
mod angle {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) if t.is_finite() => Repr::Number(*t).serialize(s),
            Some(_) => Repr::Text("inf".into()).serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Number(t)) => Ok(Some(t)),
            Some(Repr::Text(t)) => t.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

impl Meta {
    pub fn new(
        geometry: Geometry,
        theta: Option<f64>,
        beta: Vec<f64>,
        split: SplitConfig,
        precision: Precision,
        grid: RadialGrid,
        components: Vec<Component>,
    ) -> Self {
        let (theta1, alpha, theta) = match geometry {
            Geometry::Cone(c) => (Some(c.theta1().unwrap_or(f64::INFINITY)), None, None),
            Geometry::Wedge { alpha } => (None, Some(alpha), Some(theta.unwrap_or(alpha / 2.0))),
        };
        Meta {
            version: conevac::VERSION.to_string(),
            geometry,
            theta1,
            alpha,
            theta,
            beta,
            cutoff: split.cutoff,
            split_axis: split.axis,
            precision,
            r_max: grid.r_max,
            q: grid.q,
            count: grid.count,
            components,
        }
    }

    pub fn split(&self) -> Result<SplitConfig> {
        Ok(SplitConfig::new(self.split_axis, self.cutoff)?)
    }

    fn header(&self) -> Result<Vec<(&'static str, String)>> {
        let list = |v: &[f64]| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(",");
        let geometry = serde_json::to_string(&self.geometry).map_err(|e| CliError::Config(e.to_string()))?;
        let mut h = vec![("version", self.version.clone()), ("geometry", geometry)];
        if let Some(t) = self.theta1 {
            h.push(("theta1", num(t)));
        }
        if let Some(a) = self.alpha {
            h.push(("alpha", num(a)));
        }
        if let Some(t) = self.theta {
            h.push(("theta", num(t)));
        }
        h.extend([
            ("beta", list(&self.beta)),
            ("cutoff", num(self.cutoff)),
            ("split_axis", self.split_axis.name().to_string()),
            ("precision", self.precision.name().to_string()),
            ("r_max", num(self.r_max)),
            ("q", num(self.q)),
            ("count", self.count.to_string()),
            (
                "components",
                self.components.iter().map(|c| c.name()).collect::<Vec<_>>().join(","),
            ),
        ]);
        Ok(h)
    }

    fn from_header(h: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            h.get(k)
                .map(String::as_str)
                .ok_or_else(|| CliError::Config(format!("header lacks `{k}`")))
        };
        let f = |k: &str| -> Result<f64> { parse_num(get(k)?) };
        let opt = |k: &str| -> Result<Option<f64>> { h.get(k).map(|v| parse_num(v)).transpose() };
        let geometry: Geometry =
            serde_json::from_str(get("geometry")?).map_err(|e| CliError::Config(format!("header geometry: {e}")))?;
        Ok(Meta {
            version: get("version")?.to_string(),
            geometry,
            theta1: opt("theta1")?,
            alpha: opt("alpha")?,
            theta: opt("theta")?,
            beta: get("beta")?.split(',').map(parse_num).collect::<Result<_>>()?,
            cutoff: f("cutoff")?,
            split_axis: get("split_axis")?.parse()?,
            precision: get("precision")?.parse().map_err(CliError::Config)?,
            r_max: f("r_max")?,
            q: f("q")?,
            count: get("count")?
                .parse()
                .map_err(|e| CliError::Config(format!("header count: {e}")))?,
            components: get("components")?
                .split(',')
                .map(|s| s.parse::<Component>())
                .collect::<conevac::Result<_>>()?,
        })
    }
}

/// One `(r, β)` point; components not written are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub r: f64,
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t00: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tperp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tzz: Option<f64>,
}

impl Row {
    pub fn new(r: f64, beta: f64, values: [f64; 4], components: &[Component]) -> Self {
        let pick = |c: Component| components.contains(&c).then_some(values[c.index()]);
        Row {
            r,
            beta: Some(beta),
            t00: pick(Component::T00),
            trr: pick(Component::Trr),
            tperp: pick(Component::Tperp),
            tzz: pick(Component::Tzz),
        }
    }

    pub fn get(&self, c: Component) -> Option<f64> {
        match c {
            Component::T00 => self.t00,
            Component::Trr => self.trr,
            Component::Tperp => self.tperp,
            Component::Tzz => self.tzz,
        }
    }

    fn set(&mut self, c: Component, v: f64) {
        match c {
            Component::T00 => self.t00 = Some(v),
            Component::Trr => self.trr = Some(v),
            Component::Tperp => self.tperp = Some(v),
            Component::Tzz => self.tzz = Some(v),
        }
    }
}

/// Scan output: optional configuration and rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub meta: Option<Meta>,
    pub rows: Vec<Row>,
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("not a number: `{s}`")))
}

impl Table {
    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
                s.push('\n');
                Ok(s)
            }
        }
    }

    fn columns(&self) -> Vec<Component> {
        match &self.meta {
            Some(m) => m.components.clone(),
            None => Component::ALL
                .into_iter()
                .filter(|&c| self.rows.iter().any(|r| r.get(c).is_some()))
                .collect(),
        }
    }

    fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        if let Some(m) = &self.meta {
            for (k, v) in m.header()? {
                out += &format!("# {k} = {v}\n");
            }
        }
        let cols = self.columns();
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Config(e.to_string());
        let mut names = vec!["r", "beta"];
        names.extend(cols.iter().map(|c| c.name()));
        w.write_record(&names).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![num(row.r), row.beta.map(num).unwrap_or_default()];
            rec.extend(cols.iter().map(|&c| row.get(c).map(num).unwrap_or_default()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
        out += &String::from_utf8(bytes).expect("ascii output");
        Ok(out)
    }

    /// Reads either format; JSON is recognised by a leading `{`.
    pub fn parse(text: &str) -> Result<Table> {
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad JSON table: {e}")));
        }
        let mut header = BTreeMap::new();
        for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
            if let Some((k, v)) = line.split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let meta = if header.is_empty() {
            None
        } else {
            Some(Meta::from_header(&header)?)
        };
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let csv_err = |e: csv::Error| CliError::Config(format!("bad CSV table: {e}"));
        let names: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let find = |n: &str| names.iter().position(|h| h == n);
        let r_col = find("r").ok_or_else(|| CliError::Config("table lacks an `r` column".into()))?;
        let beta_col = find("beta");
        let comp_cols: Vec<(Component, usize)> = Component::ALL
            .into_iter()
            .filter_map(|c| find(c.name()).map(|i| (c, i)))
            .collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let cell = |i: usize| rec.get(i).filter(|s| !s.is_empty());
            let mut row = Row {
                r: parse_num(cell(r_col).unwrap_or(""))?,
                beta: beta_col.and_then(cell).map(parse_num).transpose()?,
                t00: None,
                trr: None,
                tperp: None,
                tzz: None,
            };
            for &(c, i) in &comp_cols {
                if let Some(v) = cell(i) {
                    row.set(c, parse_num(v)?);
                }
            }
            rows.push(row);
        }
        Ok(Table { meta, rows })
    }

    /// Rows at one coupling as a curve; `beta` may be omitted when the table
    /// holds a single coupling.
    pub fn curve(&self, component: Component, beta: Option<f64>) -> Result<RadialCurve> {
        let mut betas: Vec<Option<f64>> = self.rows.iter().map(|r| r.beta).collect();
        betas.dedup();
        let beta = match beta {
            Some(b) => Some(b),
            None if betas.len() <= 1 => betas.first().copied().flatten(),
            None => {
                return Err(CliError::Config(
                    "table holds several couplings; choose one with --beta".into(),
                ))
            }
        };
        let samples = self
            .rows
            .iter()
            .filter(|r| beta.is_none() || r.beta == beta)
            .map(|r| {
                r.get(component)
                    .map(|v| (r.r, v))
                    .ok_or_else(|| CliError::Config(format!("row at r = {} lacks {component}", r.r)))
            })
            .collect::<Result<Vec<_>>>()?;
        if samples.is_empty() {
            return Err(CliError::Config(format!("no rows at beta = {beta:?}")));
        }
        let meta = match (&self.meta, beta) {
            (Some(m), Some(b)) => Some(CurveMeta {
                geometry: m.geometry,
                coupling: Coupling::new(b),
                split: m.split()?,
                component,
            }),
            _ => None,
        };
        Ok(RadialCurve::new(samples, meta)?)
    }
}
