//! Invariant suites behind the `verify` command.
//!
//! Every check draws its sample points from a fixed seed, so a report is
//! reproducible. Kernel checks obtain their Green functions from a
//! [`KernelSource`], which lets a caller substitute a modified kernel and
//! confirm that the suite notices.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    analyticity_probe, beta_root, fit_log_corrected, fit_power_model, local_log_slope, log_plateau, radial_scan,
    singularity_comparison, FitOptions, RadialCurve, RadialGrid, VerdictKind, ROOT_WINDOW,
};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::kernels::{
    cone_by_dowker_sum, cone_by_flat_images, geodesic_eta, ConeGeometry, ConeKernel, DowkerKernel, FlatKernel,
    Geometry, GreenFunction, JetSpec, Kernel, KernelArgs, PointPair, SumControl, WedgeKernel,
};
use crate::oracles::{fd_jet, fd_kernel_jet, fd_stress_components, image_sum_reference, richardson, FDSpec};
use crate::scalar::{Dd, Precision, Scalar};
use crate::stress::{
    conservation_residual_in, stress_components_in, trace, Component, Coupling, SplitConfig, StressPoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Reduced point counts; the exponent matrix is skipped.
    #[default]
    Quick,
    Full,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Quick => "quick",
            Level::Full => "full",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            _ => Err(Error::Config(format!("unknown verify level `{s}` (quick or full)"))),
        }
    }
}

/// Green functions under test.
pub trait KernelSource: Send + Sync {
    fn flat(&self) -> Arc<dyn GreenFunction>;
    /// The general cone formula, used even at ν = 1.
    fn cone(&self, geom: ConeGeometry) -> Result<Arc<dyn GreenFunction>>;
    fn dowker(&self) -> Arc<dyn GreenFunction>;
    fn wedge(&self, alpha: f64) -> Arc<dyn GreenFunction>;
}

/// The kernels this crate ships.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShippedKernels;

impl KernelSource for ShippedKernels {
    fn flat(&self) -> Arc<dyn GreenFunction> {
        Arc::new(FlatKernel)
    }
    fn cone(&self, geom: ConeGeometry) -> Result<Arc<dyn GreenFunction>> {
        Ok(Arc::new(ConeKernel::new(geom)?))
    }
    fn dowker(&self) -> Arc<dyn GreenFunction> {
        Arc::new(DowkerKernel)
    }
    fn wedge(&self, alpha: f64) -> Arc<dyn GreenFunction> {
        Arc::new(WedgeKernel::new(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}.{} ({:.2} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub level: Level,
    pub version: String,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, module: &str, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.module == module && c.name == name)
    }
}

/// Outcome of one check before timing is attached.
struct Finding {
    passed: bool,
    detail: String,
}

impl Finding {
    fn bound(worst: f64, tol: f64, what: &str) -> Self {
        Finding {
            passed: worst <= tol,
            detail: format!("{what}: worst {worst:.3e}, bound {tol:.0e}"),
        }
    }

    fn all(parts: Vec<Finding>) -> Self {
        Finding {
            passed: parts.iter().all(|p| p.passed),
            detail: parts.into_iter().map(|p| p.detail).collect::<Vec<_>>().join("; "),
        }
    }

    fn flag(passed: bool, detail: String) -> Self {
        Finding { passed, detail }
    }
}

struct Ctx<'a> {
    level: Level,
    source: &'a dyn KernelSource,
}

impl Ctx<'_> {
    fn count(&self, quick: usize, full: usize) -> usize {
        match self.level {
            Level::Quick => quick,
            Level::Full => full,
        }
    }

    fn rng(&self, salt: u64) -> StdRng {
        StdRng::seed_from_u64(0x5eed_0000 + salt)
    }
}

type CheckFn = fn(&Ctx) -> Result<Finding>;

struct Check {
    module: &'static str,
    name: &'static str,
    full_only: bool,
    run: CheckFn,
}

const fn check(module: &'static str, name: &'static str, run: CheckFn) -> Check {
    Check {
        module,
        name,
        full_only: false,
        run,
    }
}

const CHECKS: &[Check] = &[
    check("kernels", "worked_values", worked_values),
    check("kernels", "flat_reduction", flat_reduction),
    check("kernels", "exchange_symmetry", exchange_symmetry),
    check("kernels", "periodicity", periodicity),
    check("kernels", "image_identity", image_identity),
    check("kernels", "periodicity_sum", periodicity_sum),
    check("kernels", "wedge_walls", wedge_walls),
    check("kernels", "jets_vs_fd", jets_vs_fd),
    check("kernels", "eta_stability", eta_stability),
    check("stress", "flat_vanishes", flat_vanishes),
    check("stress", "beta_affinity", beta_affinity),
    check("stress", "scaling", scaling),
    check("stress", "split_swap", split_swap),
    check("stress", "wedge_reflection", wedge_reflection),
    check("stress", "fd_assembly", fd_assembly),
    check("stress", "power_regime_ratio", power_regime_ratio),
    check("stress", "conservation_limit", conservation_limit),
    check("stress", "conformal_trace_limit", conformal_trace_limit),
    check("asymptotics", "estimator_exactness", estimator_exactness),
    check("asymptotics", "probe_verdicts", probe_verdicts),
    check("asymptotics", "beta_roots", beta_roots),
    check("asymptotics", "dowker_law", dowker_law),
    check("asymptotics", "singularity_ordering", singularity_ordering),
    check("asymptotics", "wedge_verdicts", wedge_verdicts),
    Check {
        module: "asymptotics",
        name: "exponent_matrix",
        full_only: true,
        run: exponent_matrix,
    },
    check("oracles", "finite_differences", finite_differences),
    check("oracles", "richardson_synthetic", richardson_synthetic),
    check("oracles", "phi_squared_limit", phi_squared_limit),
    check("oracles", "diagonal_limit", diagonal_limit),
];

/// Names `module.check` of every check run at `level`.
pub fn check_names(level: Level) -> Vec<String> {
    CHECKS
        .iter()
        .filter(|c| level == Level::Full || !c.full_only)
        .map(|c| format!("{}.{}", c.module, c.name))
        .collect()
}

pub fn run(level: Level) -> Report {
    run_with(level, &ShippedKernels)
}

pub fn run_with(level: Level, source: &dyn KernelSource) -> Report {
    run_selected(level, source, |_, _| true)
}

/// Runs the checks for which `select(module, name)` holds.
pub fn run_selected(level: Level, source: &dyn KernelSource, select: impl Fn(&str, &str) -> bool) -> Report {
    let ctx = Ctx { level, source };
    let checks = CHECKS
        .iter()
        .filter(|c| (level == Level::Full || !c.full_only) && select(c.module, c.name))
        .map(|c| {
            let start = Instant::now();
            let finding = (c.run)(&ctx).unwrap_or_else(|e| Finding::flag(false, format!("error: {e}")));
            CheckResult {
                module: c.module.to_string(),
                name: c.name.to_string(),
                passed: finding.passed,
                detail: finding.detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Report {
        level,
        version: crate::VERSION.to_string(),
        checks,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

fn eval(k: &dyn GreenFunction, pair: &PointPair) -> Result<f64> {
    <dyn GreenFunction as Kernel<f64>>::eval(k, &pair.args())
}

/// Generic pair away from coincidence.
fn random_pair(rng: &mut StdRng) -> PointPair {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    PointPair::new(
        rng.random_range(0.2..3.0),
        rng.random_range(0.2..3.0),
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
        rng.random_range(-1.0..1.0),
        sign * rng.random_range(0.2..2.0),
    )
}

fn random_cone(rng: &mut StdRng) -> ConeGeometry {
    ConeGeometry::new(rng.random_range(0.5..20.0)).expect("positive angle")
}

/// `1/(4π² s²)` with the chordal distance written out directly.
fn flat_closed_form(p: &PointPair) -> f64 {
    let s2 = p.dt * p.dt + p.dz * p.dz + p.r * p.r + p.rp * p.rp - 2.0 * p.r * p.rp * (p.theta - p.thetap).cos();
    1.0 / (4.0 * PI * PI * s2)
}

fn worked_values(ctx: &Ctx) -> Result<Finding> {
    let axial = PointPair::axial(1.0, 1.0, 0.0, 1.0);
    let opposite = PointPair::axial(1.0, 1.0, PI, 1.0);
    let half = PointPair::new(1.0, 1.0, PI / 2.0, PI / 2.0, 0.0, 1.0);
    let flat = ctx.source.flat();
    let cone2 = ctx.source.cone(ConeGeometry::from_images(2)?)?;
    let rows = [
        ("flat axial", eval(flat.as_ref(), &axial)?, 1.0 / (4.0 * PI * PI)),
        ("flat opposite", eval(flat.as_ref(), &opposite)?, 1.0 / (20.0 * PI * PI)),
        ("cone nu=2", eval(cone2.as_ref(), &axial)?, 0.030_396_355_092_701_333),
        (
            "dowker",
            eval(ctx.source.dowker().as_ref(), &axial)?,
            0.023_540_678_178_154_17,
        ),
        (
            "half-space",
            eval(ctx.source.wedge(PI).as_ref(), &half)?,
            0.020_264_236_728_467_554,
        ),
    ];
    let worst = rows.iter().map(|(_, a, b)| rel(*a, *b)).fold(0.0, f64::max);
    Ok(Finding::bound(worst, 1e-14, "five reference values"))
}

fn flat_reduction(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(1);
    let flat = ctx.source.flat();
    let cone = ctx.source.cone(ConeGeometry::flat())?;
    let n = 1000;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let p = random_pair(&mut rng);
        let reference = flat_closed_form(&p);
        worst = worst
            .max(rel(eval(cone.as_ref(), &p)?, reference))
            .max(rel(eval(flat.as_ref(), &p)?, reference));
    }
    Ok(Finding::bound(
        worst,
        1e-12,
        &format!("cone(nu=1) and flat vs 1/(4 pi^2 s^2), {n} pairs"),
    ))
}

fn exchange_symmetry(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(2);
    let n = ctx.count(200, 1000);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let p = random_pair(&mut rng);
        let swapped = PointPair::new(p.rp, p.r, p.thetap, p.theta, -p.dt, -p.dz);
        let alpha = rng.random_range(0.3..6.0);
        let kernels = [
            ctx.source.flat(),
            ctx.source.cone(random_cone(&mut rng))?,
            ctx.source.dowker(),
            ctx.source.wedge(alpha),
        ];
        for k in &kernels {
            worst = worst.max(rel(eval(k.as_ref(), &p)?, eval(k.as_ref(), &swapped)?));
        }
    }
    Ok(Finding::bound(worst, 1e-13, &format!("four kernels, {n} pairs")))
}

fn periodicity(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(3);
    let n = ctx.count(200, 1000);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let geom = random_cone(&mut rng);
        let k = ctx.source.cone(geom)?;
        let p = random_pair(&mut rng);
        let t1 = geom.theta1().expect("finite");
        let shifted = PointPair {
            theta: p.theta + t1,
            ..p
        };
        worst = worst.max(rel(eval(k.as_ref(), &p)?, eval(k.as_ref(), &shifted)?));
    }
    Ok(Finding::bound(worst, 1e-11, &format!("{n} random cones and pairs")))
}

fn image_identity(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(4);
    let n = ctx.count(50, 200);
    let mut worst = 0.0f64;
    let mut bitwise = true;
    for images in 1..=6u32 {
        let k = ctx.source.cone(ConeGeometry::from_images(images)?)?;
        for _ in 0..n {
            let p = random_pair(&mut rng);
            let reference = image_sum_reference(images, &p)?;
            bitwise &= cone_by_flat_images(images, &p)? == reference;
            worst = worst.max(rel(eval(k.as_ref(), &p)?, reference));
        }
    }
    Ok(Finding::all(vec![
        Finding::bound(
            worst,
            1e-12,
            &format!("cone(2pi/N) vs N flat images, N = 1..6, {n} pairs each"),
        ),
        Finding::flag(bitwise, format!("image sums bitwise identical: {bitwise}")),
    ]))
}

fn periodicity_sum(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(5);
    let n = ctx.count(20, 100);
    let ctl = SumControl::default();
    let mut worst = 0.0f64;
    for theta1 in [PI / 2.0, 1.0, 2.0 * PI, 9.0] {
        let geom = ConeGeometry::new(theta1)?;
        let k = ctx.source.cone(geom)?;
        for _ in 0..n {
            let p = random_pair(&mut rng);
            worst = worst.max(rel(cone_by_dowker_sum(&geom, &p, &ctl)?, eval(k.as_ref(), &p)?));
        }
    }
    Ok(Finding::bound(
        worst,
        1e-10,
        &format!("theta1 in {{pi/2, 1, 2pi, 9}}, {n} pairs each"),
    ))
}

fn wedge_walls(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(6);
    let n = ctx.count(200, 1000);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let alpha = rng.random_range(0.3..2.0 * PI);
        let k = ctx.source.wedge(alpha);
        let p = random_pair(&mut rng);
        let thetap = rng.random_range(0.0..alpha);
        let scale = flat_closed_form(&PointPair {
            theta: 0.0,
            thetap,
            ..p
        });
        for wall in [0.0, alpha] {
            let on_wall = PointPair {
                theta: wall,
                thetap,
                ..p
            };
            worst = worst.max(eval(k.as_ref(), &on_wall)?.abs() / scale);
        }
    }
    Ok(Finding::bound(
        worst,
        1e-13,
        &format!("|wedge| on both walls relative to flat, {n} pairs"),
    ))
}

/// Largest per-order relative deviation between two jets of the same layout.
fn jet_deviation(exact: &Jet<f64>, approx: &Jet<f64>) -> f64 {
    let layout = exact.layout().expect("seeded jet");
    let mut worst = 0.0f64;
    for order in 1..=layout.order() {
        let idx: Vec<usize> = (0..layout.len())
            .filter(|&i| layout.multi_index(i).iter().map(|&a| a as usize).sum::<usize>() == order)
            .collect();
        let a: Vec<f64> = idx.iter().map(|&i| exact.derivative(layout.multi_index(i))).collect();
        let b: Vec<f64> = idx.iter().map(|&i| approx.derivative(layout.multi_index(i))).collect();
        worst = worst.max(max_rel(&a, &b));
    }
    worst
}

fn jets_vs_fd(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(7);
    let n = ctx.count(10, 100);
    let spec = JetSpec::all(2);
    let vars = [0, 1, 2, 3, 4, 5];
    let mut parts = Vec::new();
    for name in ["flat", "cone", "dowker", "wedge"] {
        let mut worst = 0.0f64;
        for _ in 0..n {
            let k = match name {
                "flat" => ctx.source.flat(),
                "cone" => ctx.source.cone(random_cone(&mut rng))?,
                "dowker" => ctx.source.dowker(),
                _ => ctx.source.wedge(rng.random_range(0.3..2.0 * PI)),
            };
            let p = random_pair(&mut rng);
            let args: KernelArgs<Jet<f64>> = p.args::<f64>().seed(&spec);
            let exact = <dyn GreenFunction as Kernel<Jet<f64>>>::eval(k.as_ref(), &args)?;
            let fd = fd_kernel_jet(k.as_ref(), &p, &vars, 2, FDSpec::for_order(2))?;
            worst = worst.max(jet_deviation(&exact, &fd.jet));
        }
        parts.push(Finding::bound(worst, 1e-6, &format!("{name}, {n} points")));
    }
    Ok(Finding::all(parts))
}

fn eta_stability(ctx: &Ctx) -> Result<Finding> {
    let n = ctx.count(50, 400);
    let mut worst = 0.0f64;
    for i in 0..n {
        // cosh η - 1 = dz²/2 at r = r' = 1
        let x = 10f64.powf(-14.0 + 20.0 * i as f64 / (n - 1) as f64);
        let dz = (2.0 * x).sqrt();
        let eta = geodesic_eta(&PointPair::axial(1.0, 1.0, 0.0, dz))?;
        let d = Dd::from(dz);
        let xd = d.square().scale(0.5);
        let one = Dd::from(1.0);
        let by_asinh = {
            let s = xd.scale(0.5).sqrt();
            (s + (s.square() + one).sqrt()).ln().scale(2.0)
        };
        let by_acosh = {
            let c = one + xd;
            (c + (xd * (xd + one.scale(2.0))).sqrt()).ln()
        };
        worst = worst
            .max(rel(by_asinh.value(), by_acosh.value()))
            .max(rel(eta, by_acosh.value()));
    }
    Ok(Finding::bound(
        worst,
        1e-13,
        &format!("cosh(eta) - 1 in [1e-14, 1e6], {n} points"),
    ))
}

fn random_setup(rng: &mut StdRng) -> (Geometry, f64, SplitConfig) {
    let geom = Geometry::cone(rng.random_range(0.5..20.0)).expect("positive angle");
    let r = rng.random_range(0.05..3.0);
    let split = if rng.random_bool(0.5) {
        SplitConfig::axial(rng.random_range(0.1..2.0))
    } else {
        SplitConfig::temporal(rng.random_range(0.1..2.0))
    }
    .expect("positive cutoff");
    (geom, r, split)
}

fn stress(geom: &Geometry, beta: f64, r: f64, split: &SplitConfig) -> Result<StressPoint> {
    stress_components_in(Precision::Double, geom, Coupling::new(beta), r, None, split)
}

fn flat_vanishes(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(10);
    let flat = Geometry::cone(2.0 * PI)?;
    let mut nonzero = 0;
    let n = ctx.count(50, 200);
    for _ in 0..n {
        let (_, r, split) = random_setup(&mut rng);
        let s = stress(&flat, rng.random_range(-1.0..1.0), r, &split)?;
        if s.values() != [0.0; 4] {
            nonzero += 1;
        }
    }
    Ok(Finding::flag(
        nonzero == 0,
        format!("{nonzero} of {n} flat points with a nonzero component"),
    ))
}

fn beta_affinity(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(11);
    let n = ctx.count(20, 100);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (geom, r, split) = random_setup(&mut rng);
        let beta = rng.random_range(-2.0..2.0);
        let s0 = stress(&geom, 0.0, r, &split)?.values();
        let s1 = stress(&geom, 1.0, r, &split)?.values();
        let sb = stress(&geom, beta, r, &split)?.values();
        let interp: Vec<f64> = s0.iter().zip(&s1).map(|(a, b)| a + beta * (b - a)).collect();
        worst = worst.max(max_rel(&sb, &interp));
    }
    Ok(Finding::bound(
        worst,
        1e-12,
        &format!("{n} random cones, radii, cutoffs and couplings"),
    ))
}

fn scaling(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(12);
    let n = ctx.count(20, 100);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (geom, r, split) = random_setup(&mut rng);
        let beta = rng.random_range(-1.0..1.0);
        let base = stress(&geom, beta, r, &split)?.values();
        let scaled = stress(&geom, beta, 2.0 * r, &split.with_cutoff(2.0 * split.cutoff)?)?.values();
        let back: Vec<f64> = scaled.iter().map(|v| 16.0 * v).collect();
        worst = worst.max(max_rel(&base, &back));
    }
    Ok(Finding::bound(worst, 1e-12, &format!("lambda = 2, {n} points")))
}

fn split_swap(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(13);
    let n = ctx.count(20, 100);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (geom, r, split) = random_setup(&mut rng);
        let beta = rng.random_range(-1.0..1.0);
        let a = stress(&geom, beta, r, &SplitConfig::axial(split.cutoff)?)?;
        let t = stress(&geom, beta, r, &SplitConfig::temporal(split.cutoff)?)?;
        worst = worst.max(max_rel(
            &[a.t00, a.trr, a.tperp, a.tzz],
            &[t.tzz, t.trr, t.tperp, t.t00],
        ));
    }
    Ok(Finding::bound(
        worst,
        1e-14,
        &format!("t00 <-> tzz under axis swap, {n} points"),
    ))
}

fn wedge_reflection(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(14);
    let n = ctx.count(20, 100);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let alpha = rng.random_range(0.3..2.0 * PI);
        let geom = Geometry::wedge(alpha)?;
        let theta = rng.random_range(0.05..0.95) * alpha;
        let (_, r, split) = random_setup(&mut rng);
        let beta = rng.random_range(-1.0..1.0);
        let c = Coupling::new(beta);
        let a = stress_components_in(Precision::Double, &geom, c, r, Some(theta), &split)?.values();
        let b = stress_components_in(Precision::Double, &geom, c, r, Some(alpha - theta), &split)?.values();
        worst = worst.max(max_rel(&a, &b));
    }
    Ok(Finding::bound(
        worst,
        1e-12,
        &format!("theta <-> alpha - theta, {n} points"),
    ))
}

fn fd_assembly(ctx: &Ctx) -> Result<Finding> {
    let mut rng = ctx.rng(15);
    let n = ctx.count(4, 25);
    let mut worst = 0.0f64;
    for i in 0..n {
        let (cone, r, split) = random_setup(&mut rng);
        let (geom, theta) = match i % 3 {
            0 => (cone, 0.0),
            1 => (Geometry::dowker(), 0.0),
            _ => {
                let alpha = rng.random_range(0.5..2.0 * PI);
                (Geometry::wedge(alpha)?, rng.random_range(0.2..0.8) * alpha)
            }
        };
        let c = Coupling::new(rng.random_range(-1.0..1.0));
        let exact = stress_components_in(Precision::Double, &geom, c, r, Some(theta), &split)?.values();
        let fd = fd_stress_components(&geom, c, r, theta, &split)?;
        worst = worst.max(max_rel(&exact, &fd.components));
    }
    Ok(Finding::bound(
        worst,
        1e-6,
        &format!("cones, Dowker and wedges, {n} points"),
    ))
}

fn power_regime_ratio(_ctx: &Ctx) -> Result<Finding> {
    let geom = Geometry::cone(1.5 * PI)?;
    let split = SplitConfig::axial(1e-3)?;
    let s = stress_components_in(Precision::Extended, &geom, Coupling::new(0.3), 1.0, None, &split)?;
    let ratio = s.tperp / s.trr;
    Ok(Finding::bound(
        (ratio + 3.0).abs() / 3.0,
        1e-4,
        &format!("tperp/trr = {ratio:.8} at z/r = 1e-3"),
    ))
}

/// Residual at `r = 1` for cutoffs `2^-k`, extrapolated to zero cutoff.
fn conservation_limit(ctx: &Ctx) -> Result<Finding> {
    let mut parts = Vec::new();
    let cases: &[(f64, f64)] = match ctx.level {
        Level::Quick => &[(PI, 0.3)],
        Level::Full => &[(PI, 0.3), (1.5 * PI, 0.0), (4.0 * PI, -0.25)],
    };
    for &(theta1, beta) in cases {
        let geom = Geometry::cone(theta1)?;
        let c = Coupling::new(beta);
        let seq = (3..=9)
            .map(|k| {
                let z = 0.5f64.powi(k);
                Ok((
                    z,
                    conservation_residual_in(Precision::Extended, &geom, c, 1.0, &SplitConfig::axial(z)?)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let limit = richardson(&seq, 2.0)?;
        let s = stress_components_in(Precision::Extended, &geom, c, 1.0, None, &SplitConfig::axial(seq[6].0)?)?;
        let scale = s.trr.abs().max(s.tperp.abs());
        let mut f = Finding::bound(
            limit.limit.abs() / scale,
            1e-6,
            &format!("theta1 = {theta1:.4}, beta = {beta}: |limit|/|T|"),
        );
        f.detail += &format!(", residual at z = 1/8 is {:.3e}", seq[0].1);
        parts.push(f);
    }
    Ok(Finding::all(parts))
}

fn conformal_trace_limit(_ctx: &Ctx) -> Result<Finding> {
    let geom = Geometry::cone(1.5 * PI)?;
    let seq = (2..=7)
        .map(|k| {
            let z = 0.5f64.powi(k);
            let s = stress_components_in(
                Precision::Extended,
                &geom,
                Coupling::conformal(),
                1.0,
                None,
                &SplitConfig::axial(z)?,
            )?;
            Ok((z, trace(&s)))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = stress_components_in(
        Precision::Extended,
        &geom,
        Coupling::conformal(),
        1.0,
        None,
        &SplitConfig::axial(0.25)?,
    )?
    .trr
    .abs();
    let worst = seq.iter().map(|(_, t)| t.abs()).fold(0.0, f64::max);
    let limit = richardson(&seq, 2.0).map(|e| e.limit).unwrap_or(worst);
    Ok(Finding::bound(
        limit.abs().max(worst) / scale,
        1e-12,
        "conformal trace over |trr|, z in [1/128, 1/4]",
    ))
}

fn estimator_exactness(_ctx: &Ctx) -> Result<Finding> {
    let grid = RadialGrid::covering(1e-3, 1e-1, 10)?;
    let pure = RadialCurve::from_fn(&grid, |r| 2.5 * r.powf(0.7))?;
    let slope_err = local_log_slope(&pure)?
        .iter()
        .map(|(_, g)| (g - 0.7).abs() / 0.7)
        .fold(0.0, f64::max);
    let with_constant = RadialCurve::from_fn(&grid, |r| 5.0 * r.powf(0.3) + 7.0)?;
    let opts = FitOptions {
        r2_term: false,
        ..FitOptions::default()
    };
    let fit = fit_power_model(&with_constant, &opts)?;
    let fit_err = rel(fit.gamma, 0.3)
        .max(rel(fit.amplitude, 5.0))
        .max(rel(fit.background.constant, 7.0));
    Ok(Finding::all(vec![
        Finding::bound(slope_err, 1e-8, "local slope of 2.5 r^0.7"),
        Finding::bound(fit_err, 1e-8, "fit of 5 r^0.3 + 7"),
    ]))
}

fn probe(geom: &Geometry, precision: Precision) -> Result<(VerdictKind, Option<f64>)> {
    let v = analyticity_probe(
        geom,
        Coupling::new(0.0),
        Component::Trr,
        &SplitConfig::axial(1.0)?,
        8,
        precision,
    )?;
    Ok((v.kind, v.gamma))
}

fn probe_verdicts(ctx: &Ctx) -> Result<Finding> {
    let mut cases: Vec<(&str, Geometry, VerdictKind)> = vec![
        ("pi", Geometry::cone(PI)?, VerdictKind::Analytic),
        ("3pi/2", Geometry::cone(1.5 * PI)?, VerdictKind::FiniteNonanalytic),
        ("4pi", Geometry::cone(4.0 * PI)?, VerdictKind::Divergent),
    ];
    if ctx.level == Level::Full {
        cases.extend([
            ("2pi/3", Geometry::cone(2.0 * PI / 3.0)?, VerdictKind::Analytic),
            ("2pi", Geometry::cone(2.0 * PI)?, VerdictKind::Analytic),
            ("8pi", Geometry::cone(8.0 * PI)?, VerdictKind::Divergent),
            ("dowker", Geometry::dowker(), VerdictKind::Divergent),
        ]);
    }
    let mut parts = Vec::new();
    for (name, geom, want) in cases {
        let (kind, gamma) = probe(&geom, Precision::Extended)?;
        parts.push(Finding::flag(
            kind == want,
            format!("{name}: {kind} (want {want}), gamma {gamma:?}"),
        ));
    }
    if ctx.level == Level::Full {
        let (kind, _) = probe(&Geometry::cone(4.0 * PI / 3.0)?, Precision::Extended)?;
        parts.push(Finding::flag(
            kind != VerdictKind::Divergent,
            format!("4pi/3: {kind} (not DIVERGENT)"),
        ));
    }
    Ok(Finding::all(parts))
}

fn beta_roots(ctx: &Ctx) -> Result<Finding> {
    let geom = Geometry::cone(1.5 * PI)?;
    let split = SplitConfig::axial(1.0)?;
    let components: &[Component] = match ctx.level {
        Level::Quick => &[Component::Trr, Component::T00],
        Level::Full => &Component::ALL,
    };
    let mut parts = Vec::new();
    for &c in components {
        let want = match c {
            Component::Trr | Component::Tperp => -0.25,
            _ => 0.0,
        };
        let root = beta_root(&geom, c, &split, ROOT_WINDOW, Precision::Extended)?;
        let mut f = Finding::bound(
            (root.beta - want).abs(),
            1e-3,
            &format!(
                "{c}: beta* = {:.6} +- {:.1e}, |beta* - ({want})|",
                root.beta, root.uncertainty
            ),
        );
        if ctx.level == Level::Full {
            let other = beta_root(&geom, c, &split, (1e-6, 1e-4), Precision::Extended)?;
            let gap = (other.beta - root.beta).abs();
            let agree = gap <= root.uncertainty + other.uncertainty;
            f.passed &= agree;
            f.detail += &format!(", disjoint window [1e-6, 1e-4] differs by {gap:.1e} (agree: {agree})");
        }
        parts.push(f);
    }
    Ok(Finding::all(parts))
}

/// Dowker scan window: the logarithm converges slowly, so it spans six decades.
pub const DOWKER_WINDOW: (f64, f64) = (1e-8, 1e-2);

fn dowker_law(_ctx: &Ctx) -> Result<Finding> {
    let split = SplitConfig::axial(1.0)?;
    let grid = RadialGrid::covering(DOWKER_WINDOW.0, DOWKER_WINDOW.1, 10)?;
    let curve = radial_scan(
        &Geometry::dowker(),
        Coupling::new(0.0),
        Component::Trr,
        &split,
        &grid,
        Precision::Double,
    )?;
    let plateau = log_plateau(&curve, split.cutoff)?;
    let opts = FitOptions {
        window: Some(DOWKER_WINDOW),
        residual_bound: f64::INFINITY,
        ..FitOptions::default()
    };
    let power = fit_power_model(&curve, &opts)?;
    let log = fit_log_corrected(&curve, &opts)?;
    let gain = power.residual / log.residual;
    Ok(Finding::all(vec![
        Finding::flag(
            plateau.variation < 0.05 && plateau.value != 0.0,
            format!(
                "v r^2 ln^2(r/z) -> {:.6e}, last-decade variation {:.1e}",
                plateau.value, plateau.variation
            ),
        ),
        Finding::flag(
            gain >= 10.0,
            format!(
                "power residual {:.2e} / log residual {:.2e} = {gain:.0}",
                power.residual, log.residual
            ),
        ),
    ]))
}

fn singularity_ordering(_ctx: &Ctx) -> Result<Finding> {
    let list = [None, Some(8.0 * PI), Some(4.0 * PI), Some(1.5 * PI)];
    let report = singularity_comparison(
        &list,
        Coupling::new(0.0),
        Component::Trr,
        &SplitConfig::axial(1.0)?,
        Precision::Extended,
    )?;
    let order: Vec<String> = report
        .entries
        .iter()
        .map(|e| match e.theta1 {
            None => "dowker".to_string(),
            Some(t) => format!("{:.3}pi (gamma {:.3})", t / PI, e.gamma),
        })
        .collect();
    let sorted = report.entries.iter().map(|e| e.theta1).collect::<Vec<_>>() == list;
    Ok(Finding::flag(
        report.consistent && sorted,
        format!("most singular first: {}", order.join(", ")),
    ))
}

fn wedge_verdicts(_ctx: &Ctx) -> Result<Finding> {
    let mut parts = Vec::new();
    for (name, alpha, divergent) in [("pi/2", PI / 2.0, false), ("pi", PI, false), ("3pi/2", 1.5 * PI, true)] {
        let (kind, gamma) = probe(&Geometry::wedge(alpha)?, Precision::Extended)?;
        let ok = (kind == VerdictKind::Divergent) == divergent
            && (!divergent || gamma.is_some_and(|g| (g + 2.0 / 3.0).abs() < 2.0 / 3.0 * 0.02));
        parts.push(Finding::flag(ok, format!("alpha = {name}: {kind}, gamma {gamma:?}")));
    }
    Ok(Finding::all(parts))
}

/// Exponent of trr at β = 0 over the default window, against 4π/θ₁ - 2.
pub fn exponent_row(theta1: f64, precision: Precision) -> Result<(f64, f64)> {
    let split = SplitConfig::axial(1.0)?;
    let grid = RadialGrid::covering(1e-3, 1e-1, 10)?;
    let curve = radial_scan(
        &Geometry::cone(theta1)?,
        Coupling::new(0.0),
        Component::Trr,
        &split,
        &grid,
        precision,
    )?;
    let opts = FitOptions {
        residual_bound: f64::INFINITY,
        ..FitOptions::default()
    };
    let fit = fit_power_model(&curve, &opts)?;
    Ok((fit.gamma, 4.0 * PI / theta1 - 2.0))
}

fn exponent_matrix(_ctx: &Ctx) -> Result<Finding> {
    let mut parts = Vec::new();
    for (name, theta1) in [
        ("4pi/3", 4.0 * PI / 3.0),
        ("3pi/2", 1.5 * PI),
        ("4pi", 4.0 * PI),
        ("8pi", 8.0 * PI),
    ] {
        let (gamma, want) = exponent_row(theta1, Precision::Extended)?;
        parts.push(Finding::bound(
            (gamma / want - 1.0).abs(),
            0.02,
            &format!("{name}: gamma {gamma:.5} vs {want:.5}, relative error"),
        ));
    }
    Ok(Finding::all(parts))
}

fn finite_differences(_ctx: &Ctx) -> Result<Finding> {
    let e = fd_jet(
        |x: &[f64]| Ok(x[0].exp() * x[1].sin()),
        &[0.3, 1.1],
        &[0, 1],
        2,
        FDSpec::for_order(2),
    )?;
    let (a, b) = (0.3f64.exp(), 1.1f64.sin());
    let c = 1.1f64.cos();
    let worst = rel(e.jet.derivative(&[1, 0]), a * b)
        .max(rel(e.jet.derivative(&[0, 1]), a * c))
        .max(rel(e.jet.derivative(&[1, 1]), a * c))
        .max(rel(e.jet.derivative(&[0, 2]), -a * b));
    Ok(Finding::bound(worst, 1e-7, "partials of exp(x) sin(y)"))
}

fn richardson_synthetic(_ctx: &Ctx) -> Result<Finding> {
    let seq: Vec<(f64, f64)> = (0..6)
        .map(|k| {
            let h = 0.5f64.powi(k);
            (h, 1.0 + h * h - 0.3 * h.powi(4))
        })
        .collect();
    let e = richardson(&seq, 2.0)?;
    Ok(Finding::all(vec![
        Finding::bound((e.limit - 1.0).abs(), 1e-14, "limit of 1 + h^2 - 0.3 h^4"),
        Finding::bound((e.observed_order - 2.0).abs(), 0.1, "observed order vs 2"),
    ]))
}

fn phi_squared_limit(_ctx: &Ctx) -> Result<Finding> {
    let geom = ConeGeometry::from_images(2)?;
    let seq = (1..=6)
        .map(|k| {
            let z = 0.5f64.powi(k);
            Ok((z, crate::kernels::phi_squared(&geom, 1.0, z)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let e = richardson(&seq, 2.0)?;
    let want = 1.0 / (16.0 * PI * PI);
    Ok(Finding::bound(
        rel(e.limit, want),
        1e-3,
        &format!("nu = 2, r = 1: {:.10} vs 1/(16 pi^2)", e.limit),
    ))
}

fn diagonal_limit(ctx: &Ctx) -> Result<Finding> {
    let geom = ConeGeometry::from_images(2)?;
    let k = ctx.source.cone(geom)?;
    let flat = ctx.source.flat();
    let seq = (3..=6)
        .map(|j| {
            let r = 10f64.powi(-j);
            let p = PointPair::axial(r, r, 0.0, 1.0);
            Ok((r, eval(k.as_ref(), &p)? - eval(flat.as_ref(), &p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let e = richardson(&seq, 2.0)?;
    let want = 1.0 / (4.0 * PI * PI);
    Ok(Finding::bound(
        rel(e.limit, want),
        1e-6,
        &format!("nu = 2, z = 1, r -> 0: {:.10} vs 1/(4 pi^2)", e.limit),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, KernelArgs};

    /// A cone kernel off by a constant factor.
    #[derive(Debug)]
    struct Scaled(ConeKernel);

    impl<S: Scalar> Kernel<S> for Scaled {
        fn eval(&self, args: &KernelArgs<S>) -> Result<S> {
            Ok(Kernel::<S>::eval(&self.0, args)?.scale(1.01))
        }
    }

    impl GreenFunction for Scaled {
        fn name(&self) -> &'static str {
            "scaled"
        }
    }

    struct ScaledCones;

    impl KernelSource for ScaledCones {
        fn flat(&self) -> Arc<dyn GreenFunction> {
            ShippedKernels.flat()
        }
        fn cone(&self, geom: ConeGeometry) -> Result<Arc<dyn GreenFunction>> {
            Ok(Arc::new(Scaled(ConeKernel::new(geom)?)))
        }
        fn dowker(&self) -> Arc<dyn GreenFunction> {
            ShippedKernels.dowker()
        }
        fn wedge(&self, alpha: f64) -> Arc<dyn GreenFunction> {
            ShippedKernels.wedge(alpha)
        }
    }

    #[test]
    fn quick_suite_passes() {
        let report = run(Level::Quick);
        let failures: Vec<String> = report.failures().map(|c| c.to_string()).collect();
        assert!(failures.is_empty(), "{failures:#?}");
        assert_eq!(report.checks.len(), check_names(Level::Quick).len());
    }

    #[test]
    fn quick_is_a_subset_of_full() {
        let full = check_names(Level::Full);
        let quick = check_names(Level::Quick);
        assert!(quick.len() < full.len());
        assert!(quick.iter().all(|n| full.contains(n)));
    }

    #[test]
    fn scaled_kernel_fails_flat_reduction() {
        let report = run_selected(Level::Quick, &ScaledCones, |m, n| {
            m == "kernels" && n == "flat_reduction"
        });
        assert_eq!(report.checks.len(), 1);
        assert!(!report.checks[0].passed, "{}", report.checks[0]);
    }

    #[test]
    fn level_round_trips() {
        for level in [Level::Quick, Level::Full] {
            assert_eq!(level.to_string().parse::<Level>().unwrap(), level);
        }
        assert!("slow".parse::<Level>().is_err());
    }
}
