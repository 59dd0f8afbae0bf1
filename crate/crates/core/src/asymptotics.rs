//! Small-radius behaviour of stress components: radial scans, exponent
//! fits, the log-corrected law of the Dowker space, analyticity verdicts and
//! the couplings at which the leading amplitude vanishes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, Layout};
use crate::kernels::{ConeGeometry, Geometry, GreenFunction, KernelScalar};
use crate::scalar::{Dd, Precision, Scalar};
use crate::stress::{
    assemble, derivative_table_with, stress_components_in, Component, Coupling, SplitConfig, StressPoint,
};

/// Geometric grid `r_k = r_max q^k`, `k = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub r_max: f64,
    pub q: f64,
    pub count: usize,
}

impl RadialGrid {
    pub fn new(r_max: f64, q: f64, count: usize) -> Result<Self> {
        if !(r_max > 0.0) || !(q > 0.0 && q < 1.0) || count < 2 {
            return Err(Error::Config(format!(
                "grid needs r_max > 0, 0 < q < 1, count >= 2 (got {r_max}, {q}, {count})"
            )));
        }
        Ok(RadialGrid { r_max, q, count })
    }

    /// Grid from `r_max` down to `r_min` with `per_decade` points per decade.
    pub fn covering(r_min: f64, r_max: f64, per_decade: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_min < r_max) || per_decade == 0 {
            return Err(Error::Config(format!("bad grid range [{r_min}, {r_max}]")));
        }
        let decades = (r_max / r_min).log10();
        let count = (decades * per_decade as f64).round() as usize + 1;
        RadialGrid::new(r_max, (r_min / r_max).powf(1.0 / (count - 1) as f64), count)
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.r_max * self.q.powi(k as i32)).collect()
    }
}

/// What a curve was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub geometry: Geometry,
    pub coupling: Coupling,
    pub split: SplitConfig,
    pub component: Component,
}

/// Samples `(r, value)` with `r` strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialCurve {
    pub meta: Option<CurveMeta>,
    samples: Vec<(f64, f64)>,
}

impl RadialCurve {
    pub fn new(samples: Vec<(f64, f64)>, meta: Option<CurveMeta>) -> Result<Self> {
        for (r, v) in &samples {
            if !(*r > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("bad sample ({r}, {v})")));
            }
        }
        if samples.windows(2).any(|w| w[1].0 >= w[0].0) {
            return Err(Error::Config("radii must be strictly decreasing".into()));
        }
        Ok(RadialCurve { meta, samples })
    }

    /// Synthetic curve `v(r)` on a grid.
    pub fn from_fn(grid: &RadialGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        RadialCurve::new(grid.radii().into_iter().map(|r| (r, f(r))).collect(), None)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.meta.map(|m| m.split.cutoff)
    }

    /// Samples with `r_min <= r <= r_max` (up to rounding of the grid).
    pub fn window(&self, r_min: f64, r_max: f64) -> Vec<(f64, f64)> {
        let tol = 1e-9;
        self.samples
            .iter()
            .copied()
            .filter(|(r, _)| *r >= r_min * (1.0 - tol) && *r <= r_max * (1.0 + tol))
            .collect()
    }
}

/// Every stress component on a radial grid, in grid order.
pub fn scan_points(
    geom: &Geometry,
    coupling: Coupling,
    split: &SplitConfig,
    grid: &RadialGrid,
    precision: Precision,
) -> Result<Vec<StressPoint>> {
    split.validate()?;
    grid.radii()
        .par_iter()
        .map(|&r| stress_components_in(precision, geom, coupling, r, None, split))
        .collect()
}

/// One component on a radial grid; the grid must stay inside the cutoff.
pub fn radial_scan(
    geom: &Geometry,
    coupling: Coupling,
    component: Component,
    split: &SplitConfig,
    grid: &RadialGrid,
    precision: Precision,
) -> Result<RadialCurve> {
    if grid.count < 8 {
        return Err(Error::Config(format!(
            "radial scans need at least 8 points, got {}",
            grid.count
        )));
    }
    if !(grid.r_max < split.cutoff) {
        return Err(Error::Config(format!(
            "scan must probe r below the cutoff (r_max = {}, cutoff = {})",
            grid.r_max, split.cutoff
        )));
    }
    let pts = scan_points(geom, coupling, split, grid, precision)?;
    let samples = pts.iter().map(|p| (p.at.r, p.get(component))).collect();
    RadialCurve::new(
        samples,
        Some(CurveMeta {
            geometry: *geom,
            coupling,
            split: *split,
            component,
        }),
    )
}

/// `ln|v_{k+1}/v_{k-1}| / ln(r_{k+1}/r_{k-1})` at interior samples.
pub fn local_log_slope(curve: &RadialCurve) -> Result<Vec<(f64, f64)>> {
    log_slopes(curve.samples())
}

fn log_slopes(s: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    for w in s.windows(2) {
        if w[0].1 == 0.0 || w[0].1.signum() != w[1].1.signum() {
            return Err(Error::Window { r: w[1].0 });
        }
    }
    Ok(s.windows(3)
        .map(|w| {
            let g = (w[2].1 / w[0].1).abs().ln() / (w[2].0 / w[0].0).ln();
            (w[1].0, g)
        })
        .collect())
}

/// Fit configuration shared by all models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// `(r_min, r_max)`; defaults to `[1e-3, 1e-1]` times the cutoff, or the
    /// whole curve without one.
    pub window: Option<(f64, f64)>,
    pub r2_term: bool,
    pub r1_term: bool,
    pub residual_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            window: None,
            r2_term: true,
            r1_term: false,
            residual_bound: 1e-2,
        }
    }
}

impl FitOptions {
    fn resolve_window(&self, curve: &RadialCurve) -> (f64, f64) {
        if let Some(w) = self.window {
            return w;
        }
        match curve.cutoff() {
            Some(z) => (1e-3 * z, 1e-1 * z),
            None => {
                let s = curve.samples();
                (s[s.len() - 1].0, s[0].0)
            }
        }
    }
}

/// Analytic terms accompanying the singular one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Background {
    pub constant: f64,
    pub r2: Option<f64>,
    pub r1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub gamma: f64,
    pub gamma_err: f64,
    pub amplitude: f64,
    pub amplitude_err: f64,
    pub background: Background,
    /// Largest relative deviation over the window.
    pub residual: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// A strategy for fitting small-radius behaviour.
pub trait FitModel: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, curve: &RadialCurve, opts: &FitOptions) -> Result<FitResult>;
}

/// `A + B r^γ (+ C r²) (+ D r)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PowerModel;

impl PowerModel {
    pub const NAME: &'static str = "power";
}

impl FitModel for PowerModel {
    fn name(&self) -> &'static str {
        Self::NAME
    }
    fn fit(&self, curve: &RadialCurve, opts: &FitOptions) -> Result<FitResult> {
        fit_power_model(curve, opts)
    }
}

/// `A + B / (r ln(r/z))²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogCorrectedModel;

impl LogCorrectedModel {
    pub const NAME: &'static str = "log-corrected";
}

impl FitModel for LogCorrectedModel {
    fn name(&self) -> &'static str {
        Self::NAME
    }
    fn fit(&self, curve: &RadialCurve, opts: &FitOptions) -> Result<FitResult> {
        fit_log_corrected(curve, opts)
    }
}

/// Fit models registered by name.
#[derive(Debug, Clone)]
pub struct FitRegistry {
    models: BTreeMap<String, Arc<dyn FitModel>>,
}

impl FitRegistry {
    pub fn standard() -> Self {
        let mut reg = FitRegistry {
            models: BTreeMap::new(),
        };
        reg.register(Arc::new(PowerModel));
        reg.register(Arc::new(LogCorrectedModel));
        reg
    }

    pub fn register(&mut self, model: Arc<dyn FitModel>) {
        self.models.insert(model.name().to_string(), model);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FitModel>> {
        self.models
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown fit model `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }
}

impl Default for FitRegistry {
    fn default() -> Self {
        FitRegistry::standard()
    }
}

/// Window data scaled to `x = r / r_ref` with relative weights.
struct FitData {
    x: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    r_ref: f64,
    window: (f64, f64),
}

impl FitData {
    fn new(curve: &RadialCurve, opts: &FitOptions, min_samples: usize) -> Result<Self> {
        let (lo, hi) = opts.resolve_window(curve);
        let s = curve.window(lo, hi);
        if s.len() < min_samples {
            return Err(Error::Config(format!(
                "fit window [{lo:e}, {hi:e}] holds {} samples, need {min_samples}",
                s.len()
            )));
        }
        let r_ref = s[0].0;
        let vmax = s.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
        if vmax == 0.0 {
            return Err(Error::NonIdentifiable {
                signal: 0.0,
                floor: 0.0,
            });
        }
        Ok(FitData {
            x: s.iter().map(|p| p.0 / r_ref).collect(),
            v: s.iter().map(|p| p.1).collect(),
            w: s.iter().map(|p| 1.0 / p.1.abs().max(1e-300 * vmax)).collect(),
            r_ref,
            window: (s[s.len() - 1].0, s[0].0),
        })
    }

    fn n(&self) -> usize {
        self.x.len()
    }
}

/// Linear basis functions next to the constant and the singular term.
fn extra_terms(opts: &FitOptions) -> Vec<f64> {
    let mut p = Vec::new();
    if opts.r2_term {
        p.push(2.0);
    }
    if opts.r1_term {
        p.push(1.0);
    }
    p
}

/// Weighted linear least squares for `A + B x^γ + Σ c_j x^{p_j}`.
struct LinearFit {
    coef: Vec<f64>,
    cov_unscaled: DMatrix<f64>,
    ssr: f64,
}

fn linear_fit(d: &FitData, gamma: f64, extra: &[f64]) -> Option<LinearFit> {
    let m = 2 + extra.len();
    let mut a = DMatrix::zeros(d.n(), m);
    let mut b = DVector::zeros(d.n());
    for i in 0..d.n() {
        let w = d.w[i];
        a[(i, 0)] = w;
        a[(i, 1)] = w * d.x[i].powf(gamma);
        for (j, p) in extra.iter().enumerate() {
            a[(i, 2 + j)] = w * d.x[i].powf(*p);
        }
        b[i] = w * d.v[i];
    }
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&b, 1e-14).ok()?;
    let res = &a * &coef - &b;
    let cov = (a.transpose() * &a).try_inverse()?;
    Some(LinearFit {
        coef: coef.iter().copied().collect(),
        cov_unscaled: cov,
        ssr: res.norm_squared(),
    })
}

fn model_value(x: f64, gamma: f64, coef: &[f64], extra: &[f64]) -> f64 {
    let mut m = coef[0] + coef[1] * x.powf(gamma);
    for (c, p) in coef[2..].iter().zip(extra) {
        m += c * x.powf(*p);
    }
    m
}

fn max_rel_residual(d: &FitData, f: impl Fn(f64) -> f64) -> f64 {
    (0..d.n())
        .map(|i| (f(d.x[i]) - d.v[i]).abs() * d.w[i])
        .fold(0.0, f64::max)
}

/// Starting exponent: log slope of the differenced curve (which removes the
/// constant), cross-checked against a coarse scan of the projected residual.
fn initial_gamma(d: &FitData, extra: &[f64]) -> f64 {
    let mut candidates = Vec::new();
    let diffs: Vec<(f64, f64)> =
        d.x.windows(2)
            .zip(d.v.windows(2))
            .map(|(x, v)| ((x[0] * x[1]).sqrt(), v[0] - v[1]))
            .collect();
    if let Ok(slopes) = log_slopes(&diffs) {
        let tail = &slopes[slopes.len().saturating_sub(3)..];
        if !tail.is_empty() {
            candidates.push(tail.iter().map(|s| s.1).sum::<f64>() / tail.len() as f64);
        }
    }
    candidates.extend((-40..=40).map(|k| k as f64 * 0.1 + 0.05));
    candidates
        .into_iter()
        .filter(|g| g.is_finite())
        .filter_map(|g| linear_fit(d, g, extra).map(|f| (g, f.ssr)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(g, _)| g)
        .unwrap_or(-1.0)
}

/// Exponent step below `tol` (absolute, or relative beyond 1) and linear
/// steps below `tol` relative.
fn step_below(step: &DVector<f64>, p: &[f64], tol: f64) -> bool {
    step[0].abs() <= tol * p[0].abs().max(1.0) && step.iter().zip(p).skip(1).all(|(s, a)| s.abs() <= tol * a.abs())
}

/// Levenberg-Marquardt over `(γ, A, B, c_j)` with relative residuals.
fn levenberg_marquardt(d: &FitData, gamma0: f64, extra: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
    let lin = linear_fit(d, gamma0, extra).ok_or_else(|| Error::FitDiverged("singular design matrix".into()))?;
    let np = 1 + lin.coef.len();
    let mut p: Vec<f64> = std::iter::once(gamma0).chain(lin.coef).collect();
    let residuals = |p: &[f64]| -> DVector<f64> {
        DVector::from_iterator(
            d.n(),
            (0..d.n()).map(|i| d.w[i] * (model_value(d.x[i], p[0], &p[1..], extra) - d.v[i])),
        )
    };
    let jacobian = |p: &[f64]| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(d.n(), np);
        for i in 0..d.n() {
            let w = d.w[i];
            let xg = d.x[i].powf(p[0]);
            j[(i, 0)] = w * p[2] * xg * d.x[i].ln();
            j[(i, 1)] = w;
            j[(i, 2)] = w * xg;
            for (k, e) in extra.iter().enumerate() {
                j[(i, 3 + k)] = w * d.x[i].powf(*e);
            }
        }
        j
    };
    let mut res = residuals(&p);
    let mut ssr = res.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let j = jacobian(&p);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &res;
        let mut damped = jtj.clone();
        for k in 0..np {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&(-g)) else {
            lambda *= 10.0;
            continue;
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
        let tres = residuals(&trial);
        let tssr = tres.norm_squared();
        let small = step_below(&step, &p, 1e-10);
        if tssr <= ssr {
            p = trial;
            res = tres;
            ssr = tssr;
            lambda = (lambda / 10.0).max(1e-12);
            if small || ssr == 0.0 {
                let jf = jacobian(&p);
                let cov = (jf.transpose() * &jf)
                    .try_inverse()
                    .unwrap_or_else(|| DMatrix::zeros(np, np));
                return Ok((p, cov, ssr));
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                if step_below(&step, &p, 1e-8) {
                    let jf = jacobian(&p);
                    let cov = (jf.transpose() * &jf)
                        .try_inverse()
                        .unwrap_or_else(|| DMatrix::zeros(np, np));
                    return Ok((p, cov, ssr));
                }
                return Err(Error::FitDiverged(format!("damping exhausted at gamma = {}", p[0])));
            }
        }
    }
    Err(Error::FitDiverged(format!(
        "no convergence after 500 iterations (gamma = {})",
        p[0]
    )))
}

fn noise_floor_check(amplitude_at_rmax: f64, constant: f64) -> Result<()> {
    let floor = 1e3 * f64::EPSILON * constant.abs();
    if amplitude_at_rmax.abs() < floor || amplitude_at_rmax == 0.0 {
        return Err(Error::NonIdentifiable {
            signal: amplitude_at_rmax.abs(),
            floor,
        });
    }
    Ok(())
}

fn result_from(
    model: &str,
    d: &FitData,
    gamma: f64,
    gamma_err: f64,
    coef: &[f64],
    coef_err: &[f64],
    extra: &[f64],
) -> FitResult {
    // undo the x = r / r_ref scaling
    let scale_b = d.r_ref.powf(-gamma);
    let mut background = Background {
        constant: coef[0],
        ..Default::default()
    };
    for (c, p) in coef[2..].iter().zip(extra) {
        let v = c * d.r_ref.powf(-p);
        if *p == 2.0 {
            background.r2 = Some(v);
        } else {
            background.r1 = Some(v);
        }
    }
    let residual = max_rel_residual(d, |x| model_value(x, gamma, coef, extra));
    FitResult {
        model: model.to_string(),
        gamma,
        gamma_err,
        amplitude: coef[1] * scale_b,
        amplitude_err: coef_err[1] * scale_b.abs(),
        background,
        residual,
        window: d.window,
        samples: d.n(),
    }
}

/// Nonlinear least-squares fit of `A + B r^γ (+ C r²) (+ D r)`.
pub fn fit_power_model(curve: &RadialCurve, opts: &FitOptions) -> Result<FitResult> {
    let extra = extra_terms(opts);
    let d = FitData::new(curve, opts, 6.max(3 + extra.len()))?;
    let g0 = initial_gamma(&d, &extra);
    let (p, cov, ssr) = levenberg_marquardt(&d, g0, &extra)?;
    let dof = (d.n() - p.len()).max(1) as f64;
    let s2 = ssr / dof;
    let errs: Vec<f64> = (0..p.len()).map(|k| (s2 * cov[(k, k)]).max(0.0).sqrt()).collect();
    noise_floor_check(p[2], p[1])?;
    let fit = result_from(PowerModel::NAME, &d, p[0], errs[0], &p[1..], &errs[1..], &extra);
    if !(fit.residual <= opts.residual_bound) {
        return Err(Error::FitResidual {
            residual: fit.residual,
            bound: opts.residual_bound,
        });
    }
    Ok(fit)
}

/// Linear fit of the same model with the exponent held at `gamma`.
pub fn fit_fixed_exponent(curve: &RadialCurve, gamma: f64, opts: &FitOptions) -> Result<FitResult> {
    let extra = extra_terms(opts);
    let d = FitData::new(curve, opts, 3 + extra.len())?;
    let lin = linear_fit(&d, gamma, &extra).ok_or_else(|| Error::FitDiverged("singular design matrix".into()))?;
    let dof = (d.n() - lin.coef.len()).max(1) as f64;
    let s2 = lin.ssr / dof;
    let errs: Vec<f64> = (0..lin.coef.len())
        .map(|k| (s2 * lin.cov_unscaled[(k, k)]).max(0.0).sqrt())
        .collect();
    Ok(result_from(PowerModel::NAME, &d, gamma, 0.0, &lin.coef, &errs, &extra))
}

/// `v r² ln²(r/z)` near the smallest radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPlateau {
    pub value: f64,
    /// `(max - min) / |mean|` over the last decade of the curve.
    pub variation: f64,
}

pub fn log_plateau(curve: &RadialCurve, cutoff: f64) -> Result<LogPlateau> {
    let s = curve.samples();
    let r_min = s.last().ok_or_else(|| Error::Config("empty curve".into()))?.0;
    let vals: Vec<f64> = s
        .iter()
        .filter(|(r, _)| *r <= 10.0 * r_min * (1.0 + 1e-9))
        .map(|(r, v)| v * (r * (r / cutoff).ln()).powi(2))
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(LogPlateau {
        value: *vals.last().expect("nonempty"),
        variation: (hi - lo) / mean.abs(),
    })
}

/// Fit of `A + B / (r ln(r/z))²`; `gamma` is reported as -2.
pub fn fit_log_corrected(curve: &RadialCurve, opts: &FitOptions) -> Result<FitResult> {
    let z = curve
        .cutoff()
        .ok_or_else(|| Error::Config("log-corrected fit needs the cutoff of the curve".into()))?;
    let d = FitData::new(curve, opts, 4)?;
    let n = d.n();
    let basis = |x: f64| {
        let r = x * d.r_ref;
        1.0 / (r * (r / z).ln()).powi(2)
    };
    let mut a = DMatrix::zeros(n, 2);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        a[(i, 0)] = d.w[i];
        a[(i, 1)] = d.w[i] * basis(d.x[i]);
        b[i] = d.w[i] * d.v[i];
    }
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::FitDiverged(e.to_string()))?;
    let ssr = (&a * &coef - &b).norm_squared();
    let cov = (a.transpose() * &a)
        .try_inverse()
        .ok_or_else(|| Error::FitDiverged("singular design matrix".into()))?;
    let s2 = ssr / (n - 2).max(1) as f64;
    let plateau = log_plateau(curve, z)?;
    if plateau.value == 0.0 {
        return Err(Error::NonIdentifiable {
            signal: 0.0,
            floor: 0.0,
        });
    }
    let residual = max_rel_residual(&d, |x| coef[0] + coef[1] * basis(x));
    let fit = FitResult {
        model: LogCorrectedModel::NAME.to_string(),
        gamma: -2.0,
        gamma_err: 0.0,
        amplitude: coef[1],
        amplitude_err: (s2 * cov[(1, 1)]).sqrt(),
        background: Background {
            constant: coef[0],
            ..Default::default()
        },
        residual,
        window: d.window,
        samples: n,
    };
    if !(fit.residual <= opts.residual_bound) {
        return Err(Error::FitResidual {
            residual: fit.residual,
            bound: opts.residual_bound,
        });
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictKind {
    Analytic,
    FiniteNonanalytic,
    Divergent,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictKind::Analytic => "ANALYTIC",
            VerdictKind::FiniteNonanalytic => "FINITE_NONANALYTIC",
            VerdictKind::Divergent => "DIVERGENT",
        })
    }
}

/// Growth of one radial derivative across the probe radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderGrowth {
    pub order: usize,
    pub magnitudes: Vec<f64>,
    /// Ratio of magnitudes between successive radii (one decade apart).
    pub growth: Vec<f64>,
    pub unbounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    /// Exponent implied by the lowest unbounded order.
    pub gamma: Option<f64>,
    pub radii: Vec<f64>,
    pub orders: Vec<OrderGrowth>,
}

/// Radii of the probe, in units of the cutoff.
pub const PROBE_RADII: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

/// Growth factor per decade that counts as unbounded.
pub const UNBOUNDED_GROWTH: f64 = 10.0;

/// Multiple of the roundoff estimate below which a derivative counts as zero.
pub const NOISE_FACTOR: f64 = 1e3;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn radial_derivatives<S>(
    green: &dyn GreenFunction,
    coupling: Coupling,
    component: Component,
    r: f64,
    theta: f64,
    split: &SplitConfig,
    max_order: usize,
) -> Result<Vec<f64>>
where
    S: Scalar,
    Jet<Jet<S>>: KernelScalar,
{
    let inner = Layout::new(1, max_order);
    let rj = Jet::variable(&inner, 0, S::from_f64(r));
    let th = Jet::constant(S::from_f64(theta));
    let table = derivative_table_with(green, rj, th, split)?;
    let c = &assemble(&table, coupling)[component.index()];
    Ok((0..=max_order).map(|k| c.derivative(&[k as u8]).value()).collect())
}

/// Classifies small-radius behaviour from exact radial derivatives up to
/// `max_order`, taken at `r/z` in [`PROBE_RADII`].
///
/// Magnitudes below `NOISE_FACTOR · ε · k! · r^-k · (z^-4 + |value|)` are
/// roundoff and read as zero. An order is unbounded when its magnitude grows
/// by at least [`UNBOUNDED_GROWTH`] over two consecutive decades, all three
/// magnitudes above the floor. The lowest such order `k` and the last growth
/// factor `g` of such a window give `γ = k - log10 g`.
pub fn analyticity_probe(
    geom: &Geometry,
    coupling: Coupling,
    component: Component,
    split: &SplitConfig,
    max_order: usize,
    precision: Precision,
) -> Result<Verdict> {
    if !(4..=24).contains(&max_order) {
        return Err(Error::Config(format!(
            "probe order must lie in 4..=24, got {max_order}"
        )));
    }
    split.validate()?;
    let theta = match geom {
        Geometry::Wedge { alpha } => alpha / 2.0,
        Geometry::Cone(_) => 0.0,
    };
    let green = geom.green();
    let radii: Vec<f64> = PROBE_RADII.iter().map(|x| x * split.cutoff).collect();
    let per_radius: Vec<Vec<f64>> = radii
        .iter()
        .map(|&r| match precision {
            Precision::Double => {
                radial_derivatives::<f64>(green.as_ref(), coupling, component, r, theta, split, max_order)
            }
            Precision::Extended => {
                radial_derivatives::<Dd>(green.as_ref(), coupling, component, r, theta, split, max_order)
            }
        })
        .collect::<Result<_>>()?;
    let eps = precision.epsilon();
    let scale = split.cutoff.powi(-4);
    let orders: Vec<OrderGrowth> = (0..=max_order)
        .map(|k| {
            let magnitudes: Vec<f64> = per_radius
                .iter()
                .zip(&radii)
                .map(|(d, &r)| {
                    let floor = NOISE_FACTOR * eps * factorial(k) * r.powi(-(k as i32)) * (scale + d[0].abs());
                    if d[k].abs() <= floor {
                        0.0
                    } else {
                        d[k].abs()
                    }
                })
                .collect();
            let growth: Vec<f64> = magnitudes
                .windows(2)
                .map(|m| {
                    if m[0] == 0.0 {
                        if m[1] == 0.0 {
                            1.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        m[1] / m[0]
                    }
                })
                .collect();
            let unbounded = growth
                .windows(2)
                .any(|g| g.iter().all(|&x| x.is_finite() && x >= UNBOUNDED_GROWTH));
            OrderGrowth {
                order: k,
                magnitudes,
                growth,
                unbounded,
            }
        })
        .collect();
    let (kind, gamma) = match orders.iter().find(|o| o.unbounded) {
        None => {
            let top = &orders[max_order];
            if top.growth.windows(2).any(|g| g[0] >= 2.0 && g[1] >= 2.0) {
                return Err(Error::Inconclusive(format!(
                    "order {max_order} grows by {:?} per decade, below the threshold {UNBOUNDED_GROWTH}",
                    top.growth
                )));
            }
            (VerdictKind::Analytic, None)
        }
        Some(o) => {
            let last = o
                .growth
                .windows(2)
                .rfind(|g| g.iter().all(|&x| x.is_finite() && x >= UNBOUNDED_GROWTH))
                .expect("unbounded order has a growing window")[1];
            let g = o.order as f64 - last.log10();
            let kind = if g < 0.0 {
                VerdictKind::Divergent
            } else {
                VerdictKind::FiniteNonanalytic
            };
            (kind, Some(g))
        }
    };
    Ok(Verdict {
        kind,
        gamma,
        radii,
        orders,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRoot {
    pub component: Component,
    pub beta: f64,
    pub uncertainty: f64,
    /// Exponent used for both amplitude fits.
    pub gamma: f64,
    pub amplitude_at_0: f64,
    pub amplitude_at_1: f64,
}

/// Root in β of an amplitude that is affine in β, from the amplitudes at
/// β = 0 and β = 1 and their standard errors.
pub fn affine_root(b0: f64, b0_err: f64, b1: f64, b1_err: f64) -> Result<(f64, f64)> {
    let d = b1 - b0;
    if !(d.abs() > 1e-12 * b0.abs().max(b1.abs())) {
        return Err(Error::Degenerate(d));
    }
    let beta = -b0 / d;
    let dd = d * d;
    let err = ((b1 / dd * b0_err).powi(2) + (b0 / dd * b1_err).powi(2)).sqrt();
    Ok((beta, err))
}

/// Amplitude change that would move the model by the largest absolute
/// residual of `fit` somewhere in its window.
fn residual_amplitude_bound(curve: &RadialCurve, fit: &FitResult) -> f64 {
    let (lo, hi) = fit.window;
    let vmax = curve.window(lo, hi).iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
    fit.residual * vmax / (hi.powf(fit.gamma) - lo.powf(fit.gamma)).abs()
}

/// Default β-root window, in units of the cutoff.
pub const ROOT_WINDOW: (f64, f64) = (1e-4, 1e-2);

/// β at which the leading small-radius amplitude of `component` vanishes.
///
/// The exponent comes from a free fit at β = 1. The amplitudes at β = 0 and
/// β = 1 are then refitted with that exponent held fixed, which keeps the
/// fit linear even where the leading amplitude is exactly zero. The
/// uncertainty combines the residual bound on each amplitude with the
/// disagreement between roots from the lower and upper halves of the window.
pub fn beta_root(
    geom: &Geometry,
    component: Component,
    split: &SplitConfig,
    window: (f64, f64),
    precision: Precision,
) -> Result<BetaRoot> {
    let grid = RadialGrid::covering(window.0, window.1, 10)?;
    let curve = |beta: f64| radial_scan(geom, Coupling::new(beta), component, split, &grid, precision);
    let c0 = curve(0.0)?;
    let c1 = curve(1.0)?;
    let full = root_in_window(component, &c0, &c1, window)?;
    let mid = (window.0 * window.1).sqrt();
    let spread = match (
        root_in_window(component, &c0, &c1, (window.0, mid)),
        root_in_window(component, &c0, &c1, (mid, window.1)),
    ) {
        (Ok(lo), Ok(hi)) => (lo.beta - hi.beta).abs(),
        _ => 0.0,
    };
    Ok(BetaRoot {
        uncertainty: full.uncertainty.max(spread),
        ..full
    })
}

fn root_in_window(component: Component, c0: &RadialCurve, c1: &RadialCurve, window: (f64, f64)) -> Result<BetaRoot> {
    let opts = FitOptions {
        window: Some(window),
        ..FitOptions::default()
    };
    let free = fit_power_model(c1, &opts)?;
    let f0 = fit_fixed_exponent(c0, free.gamma, &opts)?;
    let f1 = fit_fixed_exponent(c1, free.gamma, &opts)?;
    let (beta, uncertainty) = affine_root(
        f0.amplitude,
        residual_amplitude_bound(c0, &f0),
        f1.amplitude,
        residual_amplitude_bound(c1, &f1),
    )?;
    Ok(BetaRoot {
        component,
        beta,
        uncertainty,
        gamma: free.gamma,
        amplitude_at_0: f0.amplitude,
        amplitude_at_1: f1.amplitude,
    })
}

/// One row of a singularity ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityEntry {
    /// `None` is the Dowker space.
    pub theta1: Option<f64>,
    pub law: String,
    /// Fitted exponent; -2 for the log-corrected law, +∞ when identically zero.
    pub gamma: f64,
    pub predicted_gamma: Option<f64>,
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    /// Most singular first.
    pub entries: Vec<SingularityEntry>,
    /// Every finite angle has γ > -2 and the Dowker entry (if any) leads.
    pub consistent: bool,
}

/// Orders geometries by small-radius growth of `component`.
pub fn singularity_comparison(
    theta1_list: &[Option<f64>],
    coupling: Coupling,
    component: Component,
    split: &SplitConfig,
    precision: Precision,
) -> Result<SingularityReport> {
    let z = split.cutoff;
    let grid = RadialGrid::covering(1e-3 * z, 1e-1 * z, 10)?;
    let mut entries = Vec::new();
    for theta1 in theta1_list {
        let geom = match theta1 {
            None => ConeGeometry::dowker(),
            Some(t) => ConeGeometry::new(*t)?,
        };
        let g = Geometry::Cone(geom);
        let entry = if geom.is_flat() {
            SingularityEntry {
                theta1: *theta1,
                law: "zero".into(),
                gamma: f64::INFINITY,
                predicted_gamma: None,
                fit: None,
            }
        } else {
            let curve = radial_scan(&g, coupling, component, split, &grid, precision)?;
            let opts = FitOptions {
                residual_bound: f64::INFINITY,
                ..FitOptions::default()
            };
            if geom.is_dowker() {
                let fit = fit_log_corrected(&curve, &opts)?;
                SingularityEntry {
                    theta1: None,
                    law: "(r ln r)^-2".into(),
                    gamma: -2.0,
                    predicted_gamma: None,
                    fit: Some(fit),
                }
            } else {
                let fit = fit_power_model(&curve, &opts)?;
                SingularityEntry {
                    theta1: *theta1,
                    law: "power".into(),
                    gamma: fit.gamma,
                    predicted_gamma: Some(2.0 * geom.nu() - 2.0),
                    fit: Some(fit),
                }
            }
        };
        entries.push(entry);
    }
    // log-corrected -2 sorts before any power law with γ > -2
    entries.sort_by(|a, b| {
        a.gamma
            .total_cmp(&b.gamma)
            .then_with(|| b.theta1.is_none().cmp(&a.theta1.is_none()))
    });
    let finite_ok = entries.iter().filter(|e| e.law == "power").all(|e| e.gamma > -2.0);
    let dowker_leads = entries.iter().all(|e| e.theta1.is_some()) || entries[0].theta1.is_none();
    Ok(SingularityReport {
        entries,
        consistent: finite_ok && dowker_leads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> RadialGrid {
        RadialGrid::covering(1e-3, 1e-1, 10).unwrap()
    }

    #[test]
    fn grid_covers_window() {
        let g = grid();
        let r = g.radii();
        assert_eq!(r.len(), 21);
        assert_relative_eq!(r[0], 1e-1);
        assert_relative_eq!(r[20], 1e-3, max_relative = 1e-13);
        assert!(RadialGrid::new(1.0, 1.5, 10).is_err());
    }

    #[test]
    fn log_slope_examples() {
        let cube = RadialCurve::from_fn(&grid(), |r| r.powi(3)).unwrap();
        for (_, g) in local_log_slope(&cube).unwrap() {
            assert_relative_eq!(g, 3.0, max_relative = 1e-12);
        }
        let flat = RadialCurve::from_fn(&grid(), |_| 2.5).unwrap();
        assert!(local_log_slope(&flat).unwrap().iter().all(|(_, g)| *g == 0.0));
        let fine = RadialGrid::covering(1e-6, 1e-1, 10).unwrap();
        let mixed = RadialCurve::from_fn(&fine, |r| 1.0 / r + r).unwrap();
        let s = local_log_slope(&mixed).unwrap();
        let (r, g) = s[s.len() - 1];
        // exact estimator on r^-1 + r at the neighbours r q^{±1}
        let q = fine.q;
        let exact = ((1.0 / (r * q) + r * q) / (q / r + r / q)).ln() / (q * q).ln();
        assert_relative_eq!(g, exact, max_relative = 1e-10);
        assert!((g + 1.0).abs() < 1e-9);
        let alt = RadialCurve::from_fn(&grid(), |r| (r * 100.0).sin()).unwrap();
        assert!(matches!(local_log_slope(&alt), Err(Error::Window { .. })));
    }

    #[test]
    fn power_fit_recovers_synthetic() {
        let pure = RadialCurve::from_fn(&grid(), |r| 5.0 * r.powf(0.3)).unwrap();
        let f = fit_power_model(
            &pure,
            &FitOptions {
                r2_term: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_relative_eq!(f.gamma, 0.3, max_relative = 1e-8);
        assert_relative_eq!(f.amplitude, 5.0, max_relative = 1e-8);
        let offset = RadialCurve::from_fn(&grid(), |r| 5.0 * r.powf(0.3) + 7.0).unwrap();
        let f = fit_power_model(&offset, &FitOptions::default()).unwrap();
        assert_relative_eq!(f.gamma, 0.3, max_relative = 1e-8);
        assert_relative_eq!(f.amplitude, 5.0, max_relative = 1e-8);
        assert_relative_eq!(f.background.constant, 7.0, max_relative = 1e-8);
        let neg = RadialCurve::from_fn(&grid(), |r| -0.2 / r + 3.0 + 4.0 * r * r).unwrap();
        let f = fit_power_model(&neg, &FitOptions::default()).unwrap();
        assert_relative_eq!(f.gamma, -1.0, max_relative = 1e-8);
        assert_relative_eq!(f.amplitude, -0.2, max_relative = 1e-8);
        assert_relative_eq!(f.background.r2.unwrap(), 4.0, max_relative = 1e-5);
    }

    #[test]
    fn power_fit_rejects_noise_level_amplitude() {
        let c = RadialCurve::from_fn(&grid(), |r| 1.0 + 1e-15 * r).unwrap();
        assert!(matches!(
            fit_power_model(&c, &FitOptions::default()),
            Err(Error::NonIdentifiable { .. }) | Err(Error::FitDiverged(_))
        ));
        let short = RadialCurve::from_fn(&RadialGrid::new(0.1, 0.5, 4).unwrap(), |r| r).unwrap();
        assert!(fit_power_model(&short, &FitOptions::default()).is_err());
    }

    #[test]
    fn log_corrected_synthetic() {
        let z = 1.0;
        let g = RadialGrid::covering(1e-6, 1e-1, 8).unwrap();
        let mut c = RadialCurve::from_fn(&g, |r| 0.7 / (r * (r / z).ln()).powi(2)).unwrap();
        c.meta = Some(CurveMeta {
            geometry: Geometry::dowker(),
            coupling: Coupling::new(0.0),
            split: SplitConfig::axial(z).unwrap(),
            component: Component::Trr,
        });
        let f = fit_log_corrected(
            &c,
            &FitOptions {
                window: Some((1e-6, 1e-1)),
                ..Default::default()
            },
        )
        .unwrap();
        assert_relative_eq!(f.amplitude, 0.7, max_relative = 1e-2);
        let p = log_plateau(&c, z).unwrap();
        assert_relative_eq!(p.value, 0.7, max_relative = 1e-12);
        assert!(p.variation < 1e-12);
    }

    #[test]
    fn affine_root_synthetic() {
        let amp = |beta: f64| 3.0 * (1.0 + 4.0 * beta);
        let (b, _) = affine_root(amp(0.0), 0.0, amp(1.0), 0.0).unwrap();
        assert_eq!(b, -0.25);
        assert!(matches!(affine_root(2.0, 0.0, 2.0, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fixed_exponent_amplitude_root_on_synthetic_curves() {
        let g = grid();
        let curve = |beta: f64| {
            RadialCurve::from_fn(&g, |r| 2.0 + (1.0 + 4.0 * beta) * r.powf(2.0 / 3.0) + 0.5 * r * r).unwrap()
        };
        let opts = FitOptions::default();
        let f0 = fit_fixed_exponent(&curve(0.0), 2.0 / 3.0, &opts).unwrap();
        let f1 = fit_fixed_exponent(&curve(1.0), 2.0 / 3.0, &opts).unwrap();
        let (b, _) = affine_root(f0.amplitude, f0.amplitude_err, f1.amplitude, f1.amplitude_err).unwrap();
        assert!((b + 0.25).abs() < 1e-10);
    }

    #[test]
    fn flat_scan_is_zero() {
        let split = SplitConfig::axial(1.0).unwrap();
        let c = radial_scan(
            &Geometry::Cone(ConeGeometry::flat()),
            Coupling::new(0.0),
            Component::Trr,
            &split,
            &grid(),
            Precision::Double,
        )
        .unwrap();
        assert!(c.samples().iter().all(|s| s.1 == 0.0));
        assert!(radial_scan(
            &Geometry::Cone(ConeGeometry::flat()),
            Coupling::new(0.0),
            Component::Trr,
            &split,
            &RadialGrid::new(2.0, 0.5, 10).unwrap(),
            Precision::Double
        )
        .is_err());
    }

    #[test]
    fn registry_names() {
        let reg = FitRegistry::standard();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["log-corrected", "power"]);
        assert_eq!(reg.get("power").unwrap().name(), "power");
        assert!(reg.get("spline").is_err());
    }
}
