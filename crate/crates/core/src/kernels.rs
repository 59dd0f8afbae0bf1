//! Euclidean two-point functions of a massless scalar in 3+1 dimensions on
//! cones, the Dowker space and wedges.
//!
//! Every kernel is normalized so that flat space gives `1/(4π² s²)`. The
//! closed forms are written once against [`Scalar`]; exact derivatives come
//! from evaluating them on [`Jet`]s.
//!
//! The cone kernel is evaluated in the variables
//!
//! ```text
//! g = (r - r')² + Δt² + Δz²      h = (r + r')² + Δt² + Δz²
//! u = e^{-η} = 4 r r' / (√g + √h)²
//! G_ν = ν/(4π²) · (1 - u^{2ν}) / ( √g √h · ((1 - u^ν)² + 4 sin²(νΔθ/2) u^ν) )
//! ```
//!
//! which equals `ν sinh(νη) / (8π² r r' sinh η (cosh νη - cos νΔθ))` but keeps
//! the non-integer powers `(r r')^ν` isolated as they approach the axis.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, Layout};
use crate::scalar::{Dd, Scalar};

/// Below this `sinh²(η/2)` (η < 1e-4) the even Taylor series in η are used.
const SMALL_Q: f64 = 2.5e-9;

/// Opening angle θ₁ of a cone; `None` is the Dowker space (θ₁ = ∞).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeGeometry {
    theta1: Option<f64>,
    nu: f64,
}

impl ConeGeometry {
    pub fn new(theta1: f64) -> Result<Self> {
        if !(theta1 > 0.0) || !theta1.is_finite() {
            return Err(Error::Domain(format!("cone angle must be positive, got {theta1}")));
        }
        Ok(ConeGeometry {
            theta1: Some(theta1),
            nu: 2.0 * PI / theta1,
        })
    }

    /// Cone with order ν = 2π/θ₁ given exactly.
    pub fn from_order(nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::Domain(format!("cone order must be positive, got {nu}")));
        }
        Ok(ConeGeometry {
            theta1: Some(2.0 * PI / nu),
            nu,
        })
    }

    /// θ₁ = 2π/N, reachable from flat space by N images.
    pub fn from_images(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("image count must be at least 1".into()));
        }
        Self::from_order(n as f64)
    }

    pub fn dowker() -> Self {
        ConeGeometry { theta1: None, nu: 0.0 }
    }

    pub fn flat() -> Self {
        ConeGeometry {
            theta1: Some(2.0 * PI),
            nu: 1.0,
        }
    }

    pub fn theta1(&self) -> Option<f64> {
        self.theta1
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn is_dowker(&self) -> bool {
        self.theta1.is_none()
    }

    pub fn is_flat(&self) -> bool {
        self.nu == 1.0
    }

    pub fn green(&self) -> Arc<dyn GreenFunction> {
        match self.theta1 {
            None => Arc::new(DowkerKernel),
            Some(_) if self.is_flat() => Arc::new(FlatKernel),
            Some(theta1) => Arc::new(ConeKernel { nu: self.nu, theta1 }),
        }
    }
}

impl fmt::Display for ConeGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.theta1 {
            None => write!(f, "dowker"),
            Some(t) => write!(f, "cone(theta1={t:.17e})"),
        }
    }
}

/// Any geometry whose stress can be assembled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    Cone(ConeGeometry),
    /// Dirichlet wedge of opening `alpha`, built from the cone θ₁ = 2α.
    Wedge {
        alpha: f64,
    },
}

impl Geometry {
    pub fn cone(theta1: f64) -> Result<Self> {
        ConeGeometry::new(theta1).map(Geometry::Cone)
    }

    pub fn dowker() -> Self {
        Geometry::Cone(ConeGeometry::dowker())
    }

    pub fn wedge(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("wedge angle must be positive, got {alpha}")));
        }
        Ok(Geometry::Wedge { alpha })
    }

    pub fn green(&self) -> Arc<dyn GreenFunction> {
        match self {
            Geometry::Cone(c) => c.green(),
            Geometry::Wedge { alpha } => Arc::new(WedgeKernel::new(*alpha)),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Geometry::Cone(c) if c.is_flat())
    }

    pub fn is_wedge(&self) -> bool {
        matches!(self, Geometry::Wedge { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Geometry::Cone(c) => c.to_string(),
            Geometry::Wedge { alpha } => format!("wedge(alpha={alpha:.17e})"),
        }
    }
}

/// Two spacetime points in cylindrical coordinates, reduced by translation
/// invariance to temporal and axial separations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub r: f64,
    pub rp: f64,
    pub theta: f64,
    pub thetap: f64,
    pub dt: f64,
    pub dz: f64,
}

impl PointPair {
    pub fn new(r: f64, rp: f64, theta: f64, thetap: f64, dt: f64, dz: f64) -> Self {
        PointPair {
            r,
            rp,
            theta,
            thetap,
            dt,
            dz,
        }
    }

    /// Same-ray pair separated by `dtheta` in angle and `dz` along the axis.
    pub fn axial(r: f64, rp: f64, dtheta: f64, dz: f64) -> Self {
        PointPair::new(r, rp, dtheta, 0.0, 0.0, dz)
    }

    pub fn dtheta(&self) -> f64 {
        self.theta - self.thetap
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.rp > 0.0) {
            return Err(Error::Domain(format!(
                "radii must be positive (r = {}, r' = {})",
                self.r, self.rp
            )));
        }
        Ok(())
    }

    pub fn args<S: Scalar>(&self) -> KernelArgs<S> {
        KernelArgs {
            r: S::from_f64(self.r),
            rp: S::from_f64(self.rp),
            theta: S::from_f64(self.theta),
            thetap: S::from_f64(self.thetap),
            dt: S::from_f64(self.dt),
            dz: S::from_f64(self.dz),
        }
    }
}

/// Differentiation variables of a kernel jet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    R,
    Rp,
    Theta,
    Thetap,
    Dt,
    Dz,
}

impl Var {
    pub const ALL: [Var; 6] = [Var::R, Var::Rp, Var::Theta, Var::Thetap, Var::Dt, Var::Dz];

    pub fn name(self) -> &'static str {
        match self {
            Var::R => "r",
            Var::Rp => "rp",
            Var::Theta => "theta",
            Var::Thetap => "thetap",
            Var::Dt => "dt",
            Var::Dz => "dz",
        }
    }
}

impl std::str::FromStr for Var {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Var::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variable `{s}`")))
    }
}

/// Which variables to differentiate and to what total order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetSpec {
    vars: Vec<Var>,
    order: usize,
}

impl JetSpec {
    pub fn new(vars: &[Var], order: usize) -> Self {
        let mut v = Vec::new();
        for var in vars {
            if !v.contains(var) {
                v.push(*var);
            }
        }
        JetSpec { vars: v, order }
    }

    pub fn value_only() -> Self {
        JetSpec {
            vars: Vec::new(),
            order: 0,
        }
    }

    pub fn all(order: usize) -> Self {
        JetSpec::new(&Var::ALL, order)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn position(&self, var: Var) -> Option<usize> {
        self.vars.iter().position(|v| *v == var)
    }

    /// Multi-index for a list of (variable, power) pairs.
    pub fn multi_index(&self, powers: &[(Var, u8)]) -> Option<Vec<u8>> {
        let mut alpha = vec![0u8; self.vars.len()];
        for (var, p) in powers {
            alpha[self.position(*var)?] += p;
        }
        Some(alpha)
    }
}

/// Kernel arguments in an arbitrary scalar type.
#[derive(Debug, Clone)]
pub struct KernelArgs<S> {
    pub r: S,
    pub rp: S,
    pub theta: S,
    pub thetap: S,
    pub dt: S,
    pub dz: S,
}

impl<S: Scalar> KernelArgs<S> {
    /// Promotes to jets, seeding the variables named in `spec`.
    pub fn seed(&self, spec: &JetSpec) -> KernelArgs<Jet<S>> {
        let layout = (!spec.vars.is_empty()).then(|| Layout::new(spec.vars.len(), spec.order));
        let lift = |x: &S, var: Var| match (&layout, spec.position(var)) {
            (Some(l), Some(i)) => Jet::variable(l, i, x.clone()),
            _ => Jet::constant(x.clone()),
        };
        KernelArgs {
            r: lift(&self.r, Var::R),
            rp: lift(&self.rp, Var::Rp),
            theta: lift(&self.theta, Var::Theta),
            thetap: lift(&self.thetap, Var::Thetap),
            dt: lift(&self.dt, Var::Dt),
            dz: lift(&self.dz, Var::Dz),
        }
    }

    fn check_radii(&self) -> Result<()> {
        let (r, rp) = (self.r.value(), self.rp.value());
        if !(r > 0.0) || !(rp > 0.0) {
            return Err(Error::Domain(format!("radii must be positive (r = {r}, r' = {rp})")));
        }
        Ok(())
    }

    fn with_thetap(&self, thetap: S) -> Self {
        KernelArgs { thetap, ..self.clone() }
    }
}

/// Evaluation of one Green function in one scalar type.
pub trait Kernel<S: Scalar> {
    fn eval(&self, args: &KernelArgs<S>) -> Result<S>;
}

/// A Green function usable with every carrier the pipeline needs.
pub trait GreenFunction:
    Kernel<f64>
    + Kernel<Dd>
    + Kernel<Jet<f64>>
    + Kernel<Jet<Dd>>
    + Kernel<Jet<Jet<f64>>>
    + Kernel<Jet<Jet<Dd>>>
    + fmt::Debug
    + Send
    + Sync
{
    fn name(&self) -> &'static str;

    /// True when the kernel is the flat-space one, so its renormalized
    /// version vanishes identically.
    fn is_flat(&self) -> bool {
        false
    }
}

/// Scalars through which a `dyn GreenFunction` can be evaluated.
pub trait KernelScalar: Scalar {
    fn eval_green(green: &dyn GreenFunction, args: &KernelArgs<Self>) -> Result<Self>;
}

macro_rules! kernel_scalar {
    ($($t:ty),*) => {$(
        impl KernelScalar for $t {
            fn eval_green(green: &dyn GreenFunction, args: &KernelArgs<Self>) -> Result<Self> {
                <dyn GreenFunction as Kernel<$t>>::eval(green, args)
            }
        }
    )*};
}

kernel_scalar!(f64, Dd, Jet<f64>, Jet<Dd>, Jet<Jet<f64>>, Jet<Jet<Dd>>);

macro_rules! green_function {
    ($ty:ty, $name:expr, $eval:expr) => {
        impl<S: Scalar> Kernel<S> for $ty {
            fn eval(&self, args: &KernelArgs<S>) -> Result<S> {
                #[allow(clippy::redundant_closure_call)]
                ($eval)(self, args)
            }
        }
    };
}

/// Shared geometric quantities of a pair.
struct Separation<S> {
    dth: S,
    g: S,
    h: S,
    q: S,
}

fn separation<S: Scalar>(a: &KernelArgs<S>) -> Result<Separation<S>> {
    a.check_radii()?;
    let dth = a.theta.clone() - a.thetap.clone();
    let rho2 = a.dt.square() + a.dz.square();
    let dr = a.r.clone() - a.rp.clone();
    let sr = a.r.clone() + a.rp.clone();
    let g = dr.square() + rho2.clone();
    let h = sr.square() + rho2;
    let q = g.clone() / (a.r.clone() * a.rp.clone()).scale(4.0);
    Ok(Separation { dth, g, h, q })
}

/// η² as an even series in `q = sinh²(η/2)`, valid for q below `SMALL_Q`.
fn eta_squared_small<S: Scalar>(q: &S) -> S {
    let q2 = q.square();
    q.scale(4.0) - q2.scale(4.0 / 3.0) + (q2 * q.clone()).scale(32.0 / 45.0)
}

fn four_pi_sq<S: Scalar>() -> S {
    S::pi().square().scale(4.0)
}

/// Flat space, θ₁ = 2π.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatKernel;

fn flat_value<S: Scalar>(a: &KernelArgs<S>) -> Result<S> {
    let sep = separation(a)?;
    let half = sep.dth.scale(0.5).sin();
    let s2 = sep.g + (a.r.clone() * a.rp.clone()).scale(4.0) * half.square();
    if s2.value() == 0.0 {
        return Err(Error::Coincidence);
    }
    Ok((four_pi_sq::<S>() * s2).recip())
}

green_function!(FlatKernel, "flat", |_k: &FlatKernel, a| flat_value(a));

impl GreenFunction for FlatKernel {
    fn name(&self) -> &'static str {
        "flat"
    }
    fn is_flat(&self) -> bool {
        true
    }
}

/// Cone of order ν = 2π/θ₁.
#[derive(Debug, Clone, Copy)]
pub struct ConeKernel {
    nu: f64,
    theta1: f64,
}

impl ConeKernel {
    pub fn new(geom: ConeGeometry) -> Result<Self> {
        match geom.theta1() {
            Some(theta1) => Ok(ConeKernel { nu: geom.nu(), theta1 }),
            None => Err(Error::Domain("cone kernel needs a finite angle".into())),
        }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn theta1(&self) -> f64 {
        self.theta1
    }
}

fn cone_value<S: Scalar>(nu: f64, a: &KernelArgs<S>) -> Result<S> {
    let sep = separation(a)?;
    let sin_half = sep.dth.scale(0.5 * nu).sin();
    let s2 = sin_half.square();
    if sep.g.value() == 0.0 && s2.value() <= 16.0 * f64::EPSILON * f64::EPSILON {
        return Err(Error::Coincidence);
    }
    let rrp = a.r.clone() * a.rp.clone();
    if sep.q.value() < SMALL_Q {
        // ν · sinh(νη)/sinh η and sinh²(νη/2) as even series in η
        let e2 = eta_squared_small(&sep.q);
        let e4 = e2.square();
        let n2 = nu * nu;
        let ratio =
            (S::from_f64(1.0) + e2.scale((n2 - 1.0) / 6.0) + e4.scale((3.0 * n2 * n2 - 10.0 * n2 + 7.0) / 360.0))
                .scale(n2);
        let sh2 = e2.scale(n2 / 4.0) + e4.scale(n2 * n2 / 48.0) + (e4 * e2).scale(n2 * n2 * n2 / 1440.0);
        let denom = (sh2 + s2).scale(2.0) * rrp * S::pi().square().scale(8.0);
        return Ok(ratio / denom);
    }
    let ra = sep.g.sqrt();
    let rb = sep.h.sqrt();
    let u = rrp.scale(4.0) / (ra.clone() + rb.clone()).square();
    let un = u.powf(nu);
    let one_minus = if un.value() < 0.5 {
        S::from_f64(1.0) - un.clone()
    } else {
        let eta = (ra.clone() * (ra.clone() + rb.clone()) / rrp.scale(2.0)).ln1p();
        -(-eta.scale(nu)).expm1()
    };
    let num = one_minus.clone() * (S::from_f64(1.0) + un.clone());
    let den = ra * rb * (one_minus.square() + s2.scale(4.0) * un);
    Ok(num.scale(nu) / (den * four_pi_sq::<S>()))
}

green_function!(ConeKernel, "cone", |k: &ConeKernel, a| cone_value(k.nu, a));

impl GreenFunction for ConeKernel {
    fn name(&self) -> &'static str {
        "cone"
    }
    fn is_flat(&self) -> bool {
        self.nu == 1.0
    }
}

/// The universal cover (θ₁ = ∞).
#[derive(Debug, Clone, Copy, Default)]
pub struct DowkerKernel;

fn dowker_value<S: Scalar>(a: &KernelArgs<S>) -> Result<S> {
    let sep = separation(a)?;
    let d2 = sep.dth.square();
    if sep.g.value() == 0.0 && d2.value() == 0.0 {
        return Err(Error::Coincidence);
    }
    let rrp = a.r.clone() * a.rp.clone();
    if sep.q.value() < SMALL_Q {
        let e2 = eta_squared_small(&sep.q);
        let eta_over_sinh = S::from_f64(1.0) - e2.scale(1.0 / 6.0) + e2.square().scale(7.0 / 360.0);
        return Ok(eta_over_sinh / (four_pi_sq::<S>() * rrp * (e2 + d2)));
    }
    let ra = sep.g.sqrt();
    let rb = sep.h.sqrt();
    let eta = (ra.clone() * (ra.clone() + rb.clone()) / rrp.scale(2.0)).ln1p();
    let den = four_pi_sq::<S>() * ra * rb * (eta.square() + d2);
    Ok(eta.scale(2.0) / den)
}

green_function!(DowkerKernel, "dowker", |_k: &DowkerKernel, a| dowker_value(a));

impl GreenFunction for DowkerKernel {
    fn name(&self) -> &'static str {
        "dowker"
    }
}

/// Dirichlet wedge of opening α: the 2α cone minus its reflection θ' → -θ'.
#[derive(Debug, Clone, Copy)]
pub struct WedgeKernel {
    alpha: f64,
    nu: f64,
}

impl WedgeKernel {
    pub fn new(alpha: f64) -> Self {
        WedgeKernel { alpha, nu: PI / alpha }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

fn wedge_value<S: Scalar>(nu: f64, a: &KernelArgs<S>) -> Result<S> {
    let direct = cone_value(nu, a)?;
    let image = cone_value(nu, &a.with_thetap(-a.thetap.clone()))?;
    Ok(direct - image)
}

green_function!(WedgeKernel, "wedge", |k: &WedgeKernel, a| wedge_value(k.nu, a));

impl GreenFunction for WedgeKernel {
    fn name(&self) -> &'static str {
        "wedge"
    }
}

/// Parameters a named geometry may consume.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub theta1: Option<f64>,
    pub nu: Option<f64>,
    pub images: Option<u32>,
    pub alpha: Option<f64>,
}

type GeometryBuilder = Box<dyn Fn(&GeometryParams) -> Result<Geometry> + Send + Sync>;

/// Geometries registered by name and resolved at run time.
pub struct KernelRegistry {
    builders: BTreeMap<String, GeometryBuilder>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        KernelRegistry {
            builders: BTreeMap::new(),
        }
    }

    /// `flat`, `cone`, `dowker` and `wedge`.
    pub fn standard() -> Self {
        let mut reg = KernelRegistry::empty();
        reg.register("flat", |_| Ok(Geometry::Cone(ConeGeometry::flat())));
        reg.register("cone", |p| {
            let g = match (p.theta1, p.nu, p.images) {
                (Some(t), None, None) => ConeGeometry::new(t)?,
                (None, Some(nu), None) => ConeGeometry::from_order(nu)?,
                (None, None, Some(n)) => ConeGeometry::from_images(n)?,
                _ => return Err(Error::Config("cone needs exactly one of theta1, nu, images".into())),
            };
            Ok(Geometry::Cone(g))
        });
        reg.register("dowker", |_| Ok(Geometry::dowker()));
        reg.register("wedge", |p| {
            let alpha = p.alpha.ok_or_else(|| Error::Config("wedge needs alpha".into()))?;
            Geometry::wedge(alpha)
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, builder: F)
    where
        F: Fn(&GeometryParams) -> Result<Geometry> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Box::new(builder));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, params: &GeometryParams) -> Result<Geometry> {
        let b = self
            .builders
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown geometry `{name}`")))?;
        b(params)
    }
}

impl Default for KernelRegistry {
    fn default() -> Self {
        KernelRegistry::standard()
    }
}

/// Truncation control for image and periodicity sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumControl {
    pub tolerance: f64,
    pub max_terms: usize,
}

impl SumControl {
    pub fn new(tolerance: f64, max_terms: usize) -> Result<Self> {
        if !(tolerance > 0.0) || max_terms < 1 {
            return Err(Error::Config(format!(
                "need tolerance > 0 and max_terms >= 1 (got {tolerance}, {max_terms})"
            )));
        }
        Ok(SumControl { tolerance, max_terms })
    }
}

impl Default for SumControl {
    fn default() -> Self {
        SumControl {
            tolerance: 1e-12,
            max_terms: 4_000_000,
        }
    }
}

/// Hyperbolic separation: `cosh η = (r² + r'² + Δt² + Δz²)/(2 r r')`.
pub fn geodesic_eta(pair: &PointPair) -> Result<f64> {
    pair.validate()?;
    let num = pair.dt * pair.dt + pair.dz * pair.dz + (pair.r - pair.rp).powi(2);
    Ok(2.0 * (num / (4.0 * pair.r * pair.rp)).sqrt().asinh())
}

fn jet_of<K: Kernel<Jet<f64>> + ?Sized>(k: &K, pair: &PointPair, spec: &JetSpec) -> Result<Jet<f64>> {
    pair.validate()?;
    k.eval(&pair.args::<f64>().seed(spec))
}

pub fn flat_kernel(pair: &PointPair, spec: &JetSpec) -> Result<Jet<f64>> {
    jet_of(&FlatKernel, pair, spec)
}

pub fn cone_kernel(geom: &ConeGeometry, pair: &PointPair, spec: &JetSpec) -> Result<Jet<f64>> {
    jet_of(&ConeKernel::new(*geom)?, pair, spec)
}

pub fn dowker_kernel(pair: &PointPair, spec: &JetSpec) -> Result<Jet<f64>> {
    jet_of(&DowkerKernel, pair, spec)
}

pub fn wedge_kernel(alpha: f64, pair: &PointPair, spec: &JetSpec) -> Result<Jet<f64>> {
    Geometry::wedge(alpha)?;
    jet_of(&WedgeKernel::new(alpha), pair, spec)
}

/// Geometry kernel minus the flat kernel, in any supported carrier.
pub fn renormalized<S: KernelScalar>(green: &dyn GreenFunction, args: &KernelArgs<S>) -> Result<S> {
    if green.is_flat() {
        args.check_radii()?;
        return Ok(S::from_f64(0.0) * args.r.clone());
    }
    let full = S::eval_green(green, args)?;
    let flat = <FlatKernel as Kernel<S>>::eval(&FlatKernel, args)?;
    Ok(full - flat)
}

/// Flat-subtracted jet; finite on the split diagonal.
pub fn renormalized_kernel(geom: &Geometry, pair: &PointPair, spec: &JetSpec) -> Result<Jet<f64>> {
    pair.validate()?;
    renormalized(geom.green().as_ref(), &pair.args::<f64>().seed(spec))
}

/// ⟨φ²⟩ diagnostic: the renormalized kernel at r = r', Δθ = 0, Δz = z.
pub fn phi_squared(geom: &ConeGeometry, r: f64, z: f64) -> Result<f64> {
    let pair = PointPair::axial(r, r, 0.0, z);
    pair.validate()?;
    renormalized(geom.green().as_ref(), &pair.args::<f64>())
}

/// Σ_{n=0}^{N-1} flat(Δθ + 2πn/N), summed in increasing n.
pub fn cone_by_flat_images(n: u32, pair: &PointPair) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("image count must be at least 1".into()));
    }
    pair.validate()?;
    let mut sum = 0.0;
    for k in 0..n {
        let shifted = PointPair {
            thetap: pair.thetap - 2.0 * PI * k as f64 / n as f64,
            ..*pair
        };
        sum += <FlatKernel as Kernel<f64>>::eval(&FlatKernel, &shifted.args())?;
    }
    Ok(sum)
}

/// Cone kernel as the periodicity sum Σ_n dowker(Δθ + nθ₁).
///
/// Terms are added center outward, `+n` paired with `-n`, and the remaining
/// tails are replaced by their midpoint-rule integrals plus the first
/// Euler-Maclaurin correction. The cutoff doubles until the estimated error
/// of that replacement falls below `ctl.tolerance` relative to the sum.
pub fn cone_by_dowker_sum(geom: &ConeGeometry, pair: &PointPair, ctl: &SumControl) -> Result<f64> {
    let period = geom
        .theta1()
        .ok_or_else(|| Error::Domain("periodicity sum needs a finite angle".into()))?;
    pair.validate()?;
    let eta = geodesic_eta(pair)?;
    // the terms are A / (η² + y²)
    let amp = if eta == 0.0 { 1.0 } else { eta / eta.sinh() } / (4.0 * PI * PI * pair.r * pair.rp);
    let x = pair.dtheta() - period * (pair.dtheta() / period).round();
    let term = |n: i64| -> Result<f64> {
        let p = PointPair {
            theta: x + n as f64 * period,
            thetap: 0.0,
            ..*pair
        };
        <DowkerKernel as Kernel<f64>>::eval(&DowkerKernel, &p.args())
    };
    // ∫_y^∞ A/(η²+s²) ds and d/dy of the integrand
    let integral = |y: f64| {
        if eta == 0.0 {
            amp / y
        } else {
            amp * (eta / y).atan() / eta
        }
    };
    let slope = |y: f64| -2.0 * amp * y / (eta * eta + y * y).powi(2);
    let tail = |n: i64| -> (f64, f64) {
        let mut est = 0.0;
        let mut err = 0.0;
        for y in [(n as f64 + 0.5) * period + x, (n as f64 + 0.5) * period - x] {
            let corr = period / 24.0 * slope(y);
            est += integral(y) / period + corr;
            err += (corr * (period / y).powi(2)).abs();
        }
        (est, err)
    };

    let mut sum = term(0)?;
    let mut n_done: i64 = 0;
    let mut n_target: i64 = 8.max(((x.abs() + eta) / period).ceil() as i64 + 2);
    loop {
        while n_done < n_target {
            n_done += 1;
            sum += term(n_done)? + term(-n_done)?;
        }
        let (est, err) = tail(n_done);
        let total = sum + est;
        if err <= ctl.tolerance * total.abs() {
            return Ok(total);
        }
        let next = n_target * 2;
        if (2 * next + 1) as usize > ctl.max_terms {
            return Err(Error::NonConvergence {
                tolerance: ctl.tolerance,
                terms: (2 * n_done + 1) as usize,
            });
        }
        n_target = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FLAT_AXIAL: f64 = 0.025_330_295_910_584_444; // 1/(4π²)
    const FLAT_OPPOSITE: f64 = 0.005_066_059_182_116_889; // 1/(20π²)

    fn value(j: Jet<f64>) -> f64 {
        *j.base()
    }

    #[test]
    fn eta_examples() {
        assert_eq!(geodesic_eta(&PointPair::axial(1.0, 1.0, 0.0, 0.0)).unwrap(), 0.0);
        let e = geodesic_eta(&PointPair::axial(1.0, 1.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(e, 1.5f64.acosh(), max_relative = 1e-15);
        assert_relative_eq!(e, 0.962_423_650_1, max_relative = 1e-10);
        let scaled = geodesic_eta(&PointPair::axial(3.5, 3.5, 0.0, 3.5)).unwrap();
        assert_relative_eq!(scaled, e, max_relative = 1e-15);
        assert!(geodesic_eta(&PointPair::axial(0.0, 1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn flat_kernel_examples() {
        let v = value(flat_kernel(&PointPair::axial(1.0, 1.0, 0.0, 1.0), &JetSpec::value_only()).unwrap());
        assert_relative_eq!(v, FLAT_AXIAL, max_relative = 1e-15);
        let v = value(flat_kernel(&PointPair::axial(1.0, 1.0, PI, 1.0), &JetSpec::value_only()).unwrap());
        assert_relative_eq!(v, FLAT_OPPOSITE, max_relative = 1e-15);
        let spec = JetSpec::new(&[Var::Dz], 1);
        let j = flat_kernel(&PointPair::axial(1.0, 1.0, 0.0, 1.0), &spec).unwrap();
        assert_relative_eq!(j.derivative(&[1]), -2.0 * FLAT_AXIAL, max_relative = 1e-14);
        assert_eq!(
            flat_kernel(&PointPair::axial(1.0, 1.0, 0.0, 0.0), &JetSpec::value_only()).unwrap_err(),
            Error::Coincidence
        );
    }

    #[test]
    fn cone_kernel_examples() {
        let pair = PointPair::axial(1.0, 1.0, 0.0, 1.0);
        let two = ConeGeometry::from_images(2).unwrap();
        let v = value(cone_kernel(&two, &pair, &JetSpec::value_only()).unwrap());
        assert_relative_eq!(v, FLAT_AXIAL + FLAT_OPPOSITE, max_relative = 1e-14);
        assert_relative_eq!(v, 0.030_396_355_092_701_331, max_relative = 1e-14);
        // periodic in Δθ with period θ₁
        let g = ConeGeometry::new(1.3).unwrap();
        let p1 = PointPair::axial(0.7, 1.1, 0.4, 0.3);
        let p2 = PointPair::axial(0.7, 1.1, 0.4 + 1.3, 0.3);
        let a = value(cone_kernel(&g, &p1, &JetSpec::value_only()).unwrap());
        let b = value(cone_kernel(&g, &p2, &JetSpec::value_only()).unwrap());
        assert_relative_eq!(a, b, max_relative = 1e-13);
        assert!(cone_kernel(&ConeGeometry::dowker(), &p1, &JetSpec::value_only()).is_err());
    }

    #[test]
    fn cone_coincidence_only_on_true_diagonal() {
        let g = ConeGeometry::from_images(2).unwrap();
        let diag = PointPair::axial(1.0, 1.0, 0.0, 0.0);
        assert_eq!(
            cone_kernel(&g, &diag, &JetSpec::value_only()).unwrap_err(),
            Error::Coincidence
        );
        // η = 0 but νΔθ ≠ 0 (mod 2π): finite, equals the single flat image
        let off = PointPair::axial(1.0, 1.0, PI / 2.0, 0.0);
        let v = value(cone_kernel(&g, &off, &JetSpec::value_only()).unwrap());
        let img = value(flat_kernel(&off, &JetSpec::value_only()).unwrap())
            + value(flat_kernel(&PointPair::axial(1.0, 1.0, 1.5 * PI, 0.0), &JetSpec::value_only()).unwrap());
        assert_relative_eq!(v, img, max_relative = 1e-14);
    }

    #[test]
    fn small_eta_branch_is_continuous() {
        let g = ConeGeometry::new(2.3).unwrap();
        for &dz in &[0.99e-4, 1.01e-4, 2e-4] {
            let p = PointPair::axial(1.0, 1.0, 0.6, dz);
            let a = value(cone_kernel(&g, &p, &JetSpec::value_only()).unwrap());
            let sum = cone_by_dowker_sum(&g, &p, &SumControl::default()).unwrap();
            assert_relative_eq!(a, sum, max_relative = 1e-11);
        }
    }

    #[test]
    fn dowker_examples() {
        let pair = PointPair::axial(1.0, 1.0, 0.0, 1.0);
        let v = value(dowker_kernel(&pair, &JetSpec::value_only()).unwrap());
        let eta = 1.5f64.acosh();
        assert_relative_eq!(v, 1.0 / (4.0 * PI * PI * eta.sinh() * eta), max_relative = 1e-14);
        assert_relative_eq!(v, 0.023_540_678_178_154_17, max_relative = 1e-14);
        let mut last = v;
        for k in 1..20 {
            let d = k as f64 * 0.7;
            let plus = value(dowker_kernel(&PointPair::axial(1.0, 1.0, d, 1.0), &JetSpec::value_only()).unwrap());
            let minus = value(dowker_kernel(&PointPair::axial(1.0, 1.0, -d, 1.0), &JetSpec::value_only()).unwrap());
            assert_eq!(plus, minus);
            assert!(plus < last);
            last = plus;
        }
    }

    #[test]
    fn periodicity_sum_examples() {
        let pair = PointPair::axial(1.0, 1.0, 0.0, 1.0);
        let ctl = SumControl::new(1e-10, 10_000_000).unwrap();
        let flat = cone_by_dowker_sum(&ConeGeometry::flat(), &pair, &ctl).unwrap();
        assert_relative_eq!(flat, FLAT_AXIAL, max_relative = 1e-10);
        let two = cone_by_dowker_sum(&ConeGeometry::new(PI).unwrap(), &pair, &ctl).unwrap();
        assert_relative_eq!(two, FLAT_AXIAL + FLAT_OPPOSITE, max_relative = 1e-10);
        let tight = SumControl::new(1e-14, 50).unwrap();
        assert!(matches!(
            cone_by_dowker_sum(&ConeGeometry::new(0.5).unwrap(), &pair, &tight),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn periodicity_terms_obey_tail_bound() {
        let pair = PointPair::axial(0.8, 1.3, 0.4, 0.6);
        let eta = geodesic_eta(&pair).unwrap();
        let theta1 = 1.7;
        for n in 1..200 {
            let y = n as f64 * theta1;
            if y <= pair.dtheta().abs() + eta {
                continue;
            }
            let p = PointPair::axial(0.8, 1.3, pair.dtheta() + y, 0.6);
            let t = value(dowker_kernel(&p, &JetSpec::value_only()).unwrap());
            let bound = 2.0 * eta / (8.0 * PI * PI * pair.r * pair.rp * eta.sinh() * (y - pair.dtheta().abs()).powi(2));
            assert!(t <= bound, "n = {n}");
        }
    }

    #[test]
    fn flat_images_examples() {
        let pair = PointPair::axial(1.0, 1.0, 0.0, 1.0);
        assert_relative_eq!(cone_by_flat_images(1, &pair).unwrap(), FLAT_AXIAL, max_relative = 1e-15);
        assert_relative_eq!(
            cone_by_flat_images(2, &pair).unwrap(),
            FLAT_AXIAL + FLAT_OPPOSITE,
            max_relative = 1e-15
        );
        let p = PointPair::new(0.6, 1.4, 0.3, -0.2, 0.1, 0.5);
        let three = ConeGeometry::from_images(3).unwrap();
        let direct = value(cone_kernel(&three, &p, &JetSpec::value_only()).unwrap());
        assert_relative_eq!(cone_by_flat_images(3, &p).unwrap(), direct, max_relative = 1e-12);
    }

    #[test]
    fn wedge_examples() {
        let alpha = 2.2;
        for &tp in &[0.3, 1.0, 2.0] {
            let on0 = PointPair::new(0.9, 1.1, 0.0, tp, 0.0, 0.4);
            let on_alpha = PointPair::new(0.9, 1.1, alpha, tp, 0.0, 0.4);
            let v0 = value(wedge_kernel(alpha, &on0, &JetSpec::value_only()).unwrap());
            let va = value(wedge_kernel(alpha, &on_alpha, &JetSpec::value_only()).unwrap());
            assert!(v0.abs() < 1e-16, "{v0}");
            assert!(va.abs() < 1e-15, "{va}");
        }
        let half = PointPair::new(1.0, 1.0, PI / 2.0, PI / 2.0, 0.0, 1.0);
        let v = value(wedge_kernel(PI, &half, &JetSpec::value_only()).unwrap());
        assert_relative_eq!(v, FLAT_AXIAL - FLAT_OPPOSITE, max_relative = 1e-14);
        assert_relative_eq!(v, 0.020_264_2, max_relative = 1e-5);
    }

    #[test]
    fn renormalized_examples() {
        let pair = PointPair::axial(1.0, 1.0, 0.0, 1.0);
        let flat = renormalized_kernel(&Geometry::Cone(ConeGeometry::flat()), &pair, &JetSpec::all(2)).unwrap();
        assert!(flat.coefficients().iter().all(|c| *c == 0.0));
        let two = Geometry::Cone(ConeGeometry::from_images(2).unwrap());
        let v = value(renormalized_kernel(&two, &pair, &JetSpec::value_only()).unwrap());
        assert_relative_eq!(v, FLAT_OPPOSITE, max_relative = 1e-13);
    }

    #[test]
    fn phi_squared_scaling_and_flat() {
        let g = ConeGeometry::new(1.9).unwrap();
        let a = phi_squared(&g, 0.8, 0.3).unwrap();
        let b = phi_squared(&g, 1.6, 0.6).unwrap();
        assert_relative_eq!(b, a / 4.0, max_relative = 1e-13);
        assert_eq!(phi_squared(&ConeGeometry::flat(), 1.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn registry_resolves_names() {
        let reg = KernelRegistry::standard();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, ["cone", "dowker", "flat", "wedge"]);
        let g = reg
            .build(
                "cone",
                &GeometryParams {
                    images: Some(3),
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(g, Geometry::Cone(ConeGeometry::from_images(3).unwrap()));
        assert!(reg.build("wedge", &GeometryParams::default()).is_err());
        assert!(reg.build("sphere", &GeometryParams::default()).is_err());
        assert_eq!(
            reg.build("dowker", &GeometryParams::default()).unwrap().green().name(),
            "dowker"
        );
    }
}
