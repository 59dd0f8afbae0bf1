mod config;
mod error;
mod table;

use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conevac::asymptotics::{beta_root, FitOptions, FitRegistry, FitResult, PowerModel, ROOT_WINDOW};
use conevac::kernels::{renormalized_kernel, GreenFunction, JetSpec, Kernel, Var};
use conevac::stress::stress_components_in;
use conevac::verify::{self, Level};
use conevac::{Component, Jet, PointPair};
use serde::Serialize;

use config::{GeometryArgs, ScanConfig};
use error::{CliError, Result};
use table::{num, Meta, Row, Table};

/// Vacuum stress near the axis of cones, wedges and the Dowker space.
#[derive(Debug, Parser)]
#[command(name = "conevac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a kernel and its derivatives at one pair of points.
    Kernel(KernelArgs),
    /// Tabulate stress components on a radial grid.
    Scan(ScanConfig),
    /// Fit the small-radius law of one component of a scan.
    Fit(FitArgs),
    /// Coupling at which the leading singular amplitude vanishes.
    BetaRoot(BetaRootArgs),
    /// Run the invariant suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    rp: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    thetap: f64,
    /// Sets theta to this value and thetap to 0.
    #[arg(long, conflicts_with_all = ["theta", "thetap"], allow_hyphen_values = true)]
    dtheta: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    dt: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    dz: f64,
    /// Highest total derivative order to print.
    #[arg(long, default_value_t = 0)]
    order: usize,
    /// Subtract the flat kernel.
    #[arg(long)]
    renormalized: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Scan output, CSV or JSON.
    input: String,
    #[arg(long, default_value = "trr")]
    component: String,
    /// Coupling to fit when the scan holds several.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Fit model: `power` or `log-corrected`.
    #[arg(long, default_value = PowerModel::NAME)]
    model: String,
    /// Radii `LO,HI` to fit; defaults to [1e-3, 1e-1] cutoff.
    #[arg(long, value_delimiter = ',')]
    window: Vec<f64>,
    /// Drop the r^2 background term.
    #[arg(long = "no-r2")]
    no_r2: bool,
    /// Add a linear background term.
    #[arg(long)]
    r1: bool,
    /// Largest acceptable relative residual.
    #[arg(long = "residual-bound")]
    residual_bound: Option<f64>,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BetaRootArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Components, comma separated; all by default.
    #[arg(long, value_delimiter = ',')]
    component: Vec<String>,
    #[arg(long = "split-axis")]
    split_axis: Option<String>,
    #[arg(long)]
    cutoff: Option<f64>,
    /// Radii `LO,HI`; defaults to [1e-4, 1e-2] cutoff.
    #[arg(long, value_delimiter = ',')]
    window: Vec<f64>,
    /// `double` or `extended`; defaults to CONEVAC_PRECISION.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// `quick` or `full`.
    #[arg(default_value = "quick")]
    level: String,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("conevac: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Kernel(a) => kernel(a),
        Command::Scan(c) => scan(c),
        Command::Fit(a) => fit(a),
        Command::BetaRoot(a) => roots(a),
        Command::Verify(a) => verify(a),
    }
}

fn emit(text: &str, path: Option<&str>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("stdout", e)),
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn kernel(a: KernelArgs) -> Result<()> {
    let geom = a.geometry.resolve()?;
    let (theta, thetap) = match a.dtheta {
        Some(d) => (d, 0.0),
        None => (a.theta, a.thetap),
    };
    let pair = PointPair::new(a.r, a.rp, theta, thetap, a.dt, a.dz);
    pair.validate()?;
    let spec = JetSpec::all(a.order);
    let at = "the requested point";
    let jet = if a.renormalized {
        renormalized_kernel(&geom, &pair, &spec)
    } else {
        let green = geom.green();
        <dyn GreenFunction as Kernel<Jet<f64>>>::eval(green.as_ref(), &pair.args::<f64>().seed(&spec))
    }
    .map_err(|e| CliError::eval(at, e))?;
    let mut out = String::new();
    let layout = jet.layout().cloned();
    match layout {
        Some(layout) => {
            for i in 0..layout.len() {
                let alpha = layout.multi_index(i);
                out += &format!("{} = {}\n", label(alpha), num(jet.derivative(alpha)));
            }
        }
        None => out += &format!("value = {}\n", num(jet.derivative(&[]))),
    }
    emit(&out, None)
}

/// `value`, or `d_r^1 d_theta^2` for a multi-index over all six variables.
fn label(alpha: &[u8]) -> String {
    let parts: Vec<String> = Var::ALL
        .iter()
        .zip(alpha)
        .filter(|(_, &k)| k > 0)
        .map(|(v, k)| format!("d_{}^{k}", v.name()))
        .collect();
    if parts.is_empty() {
        "value".into()
    } else {
        parts.join(" ")
    }
}

fn scan(c: ScanConfig) -> Result<()> {
    let s = c.load()?.resolve()?;
    let radii = s.grid.radii();
    let mut rows = Vec::with_capacity(radii.len() * s.betas.len());
    for coupling in s.couplings() {
        for &r in &radii {
            let at = || {
                format!(
                    "row {} (r = {}, beta = {})",
                    rows.len() + 1,
                    num(r),
                    num(coupling.beta())
                )
            };
            let p = stress_components_in(s.precision, &s.geometry, coupling, r, s.theta, &s.split)
                .map_err(|e| CliError::eval(at(), e))?;
            rows.push(Row::new(r, coupling.beta(), p.values(), &s.components));
        }
    }
    let meta = Meta::new(
        s.geometry,
        s.theta,
        s.betas.clone(),
        s.split,
        s.precision,
        s.grid,
        s.components.clone(),
    );
    let table = Table { meta: Some(meta), rows };
    emit(&table.render(s.format)?, s.output.as_deref())
}

fn fit(a: FitArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let table = Table::parse(&text)?;
    let component: Component = a.component.parse()?;
    let curve = table.curve(component, a.beta)?;
    let defaults = FitOptions::default();
    let opts = FitOptions {
        window: config::window(&a.window)?,
        r2_term: !a.no_r2,
        r1_term: a.r1,
        residual_bound: a.residual_bound.unwrap_or(defaults.residual_bound),
    };
    let model = FitRegistry::standard().get(&a.model)?;
    let result = model.fit(&curve, &opts).map_err(CliError::fit)?;
    let out = if a.json { json(&result)? } else { describe_fit(&result) };
    emit(&out, None)
}

fn describe_fit(f: &FitResult) -> String {
    let mut s = format!("model = {}\n", f.model);
    s += &format!("gamma = {} +- {:.1e}\n", num(f.gamma), f.gamma_err);
    s += &format!("B = {} +- {:.1e}\n", num(f.amplitude), f.amplitude_err);
    s += &format!("A = {}\n", num(f.background.constant));
    if let Some(c) = f.background.r2 {
        s += &format!("C = {}\n", num(c));
    }
    if let Some(d) = f.background.r1 {
        s += &format!("D = {}\n", num(d));
    }
    s += &format!("residual = {:.3e}\n", f.residual);
    s += &format!("window = [{}, {}]\n", num(f.window.0), num(f.window.1));
    s += &format!("samples = {}\n", f.samples);
    s
}

fn roots(a: BetaRootArgs) -> Result<()> {
    let geom = a.geometry.resolve()?;
    let split = config::split(a.split_axis.as_deref(), a.cutoff)?;
    let precision = config::precision(a.precision.as_deref())?;
    let window = config::window(&a.window)?.unwrap_or((ROOT_WINDOW.0 * split.cutoff, ROOT_WINDOW.1 * split.cutoff));
    let components = if a.component.is_empty() {
        Component::ALL.to_vec()
    } else {
        a.component
            .iter()
            .map(|s| s.parse())
            .collect::<conevac::Result<Vec<Component>>>()?
    };
    let mut found = Vec::new();
    for c in components {
        found.push(beta_root(&geom, c, &split, window, precision).map_err(CliError::fit)?);
    }
    let out = if a.json {
        json(&found)?
    } else {
        found
            .iter()
            .map(|r| {
                format!(
                    "{}: beta* = {:.6} +- {:.1e} (gamma = {:.6})\n",
                    r.component, r.beta, r.uncertainty, r.gamma
                )
            })
            .collect()
    };
    emit(&out, None)
}

fn verify(a: VerifyArgs) -> Result<()> {
    let level: Level = a.level.parse()?;
    let report = verify::run(level);
    let out = if a.json {
        json(&report)?
    } else {
        let mut s: String = report.checks.iter().map(|c| format!("{c}\n")).collect();
        let failed = report.failures().count();
        s += &format!(
            "{} {level}: {} checks, {failed} failed\n",
            if failed == 0 { "PASS" } else { "FAIL" },
            report.checks.len()
        );
        s
    };
    emit(&out, None)?;
    let failed = report.failures().count();
    if failed > 0 {
        return Err(CliError::Verify {
            failed,
            total: report.checks.len(),
        });
    }
    Ok(())
}
