//! Point-split assembly of the diagonal vacuum stress `T_00, T_rr, T_⊥⊥, T_zz`.
//!
//! With `W` the flat-subtracted kernel and `ξ = β + 1/4`, every component is
//!
//! ```text
//! T_ab = (1 - 2ξ) ∂_a∂_b' W + (2ξ - 1/2) δ_ab Σ_λ ∂_λ∂_λ' W - 2ξ ∇_a∇_b W
//! ```
//!
//! in Euclidean signature, evaluated at `r = r'`, `θ = θ'` with the points
//! separated by the cutoff along `z` (or along Euclidean time). One-sided
//! second derivatives enter through the average over both points, and the
//! tangential one carries the connection term `(1/r) ∂_r`.
//!
//! With this convention the Dirichlet half-space energy density at `β = 0`
//! is negative.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::kernels::{renormalized, Geometry, GreenFunction, JetSpec, KernelArgs, KernelScalar, Var};
use crate::scalar::{Dd, Precision, Scalar};

/// Curvature coupling, stored as `β = ξ - 1/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    beta: f64,
}

impl Coupling {
    pub fn new(beta: f64) -> Self {
        Coupling { beta }
    }

    pub fn from_xi(xi: f64) -> Self {
        Coupling { beta: xi - 0.25 }
    }

    pub fn minimal() -> Self {
        Coupling::new(-0.25)
    }

    pub fn conformal() -> Self {
        Coupling::new(-1.0 / 12.0)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn xi(&self) -> f64 {
        self.beta + 0.25
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitAxis {
    Axial,
    Temporal,
}

impl SplitAxis {
    pub fn name(self) -> &'static str {
        match self {
            SplitAxis::Axial => "axial",
            SplitAxis::Temporal => "temporal",
        }
    }
}

impl std::str::FromStr for SplitAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" | "z" => Ok(SplitAxis::Axial),
            "temporal" | "t" => Ok(SplitAxis::Temporal),
            _ => Err(Error::Config(format!("unknown split axis `{s}`"))),
        }
    }
}

/// Direction and length of the point splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub axis: SplitAxis,
    pub cutoff: f64,
}

impl SplitConfig {
    pub fn new(axis: SplitAxis, cutoff: f64) -> Result<Self> {
        let s = SplitConfig { axis, cutoff };
        s.validate()?;
        Ok(s)
    }

    pub fn axial(cutoff: f64) -> Result<Self> {
        SplitConfig::new(SplitAxis::Axial, cutoff)
    }

    pub fn temporal(cutoff: f64) -> Result<Self> {
        SplitConfig::new(SplitAxis::Temporal, cutoff)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(Error::Domain(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        Ok(())
    }

    pub fn with_cutoff(&self, cutoff: f64) -> Result<Self> {
        SplitConfig::new(self.axis, cutoff)
    }

    /// `(Δt, Δz)` of the split.
    pub fn separations<C: Scalar>(&self) -> (C, C) {
        let c = C::from_f64(self.cutoff);
        let zero = C::from_f64(0.0);
        match self.axis {
            SplitAxis::Axial => (zero, c),
            SplitAxis::Temporal => (c, zero),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    T00,
    Trr,
    Tperp,
    Tzz,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::T00, Component::Trr, Component::Tperp, Component::Tzz];

    pub fn name(self) -> &'static str {
        match self {
            Component::T00 => "t00",
            Component::Trr => "trr",
            Component::Tperp => "tperp",
            Component::Tzz => "tzz",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown component `{s}`")))
    }
}

/// Where a stress value was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub r: f64,
    pub theta: Option<f64>,
    pub geometry: Geometry,
    pub coupling: Coupling,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressPoint {
    pub t00: f64,
    pub trr: f64,
    pub tperp: f64,
    pub tzz: f64,
    pub at: EvalRecord,
}

impl StressPoint {
    pub fn get(&self, c: Component) -> f64 {
        self.values()[c.index()]
    }

    pub fn values(&self) -> [f64; 4] {
        [self.t00, self.trr, self.tperp, self.tzz]
    }
}

/// Diagonal limits of second derivatives of the renormalized kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTable<C = f64> {
    /// W itself.
    pub value: C,
    /// d²W/dΔt².
    pub dt_dt: C,
    /// d²W/dΔz².
    pub dz_dz: C,
    /// ∂_r ∂_r' W.
    pub r_rp: C,
    /// ½ (∂_r² + ∂_r'²) W.
    pub r_r_sym: C,
    /// (1/r²) ∂_θ ∂_θ' W.
    pub th_thp: C,
    /// ½ ((1/r²) ∂_θ² + (1/r'²) ∂_θ'²) W.
    pub th_th_sym: C,
    /// (1/r) ½ (∂_r + ∂_r') W.
    pub radial_connection: C,
    /// Σ_λ ∂_λ ∂_λ' W over orthonormal directions.
    pub cross_trace: C,
}

impl<C: Scalar> DerivativeTable<C> {
    fn map<D>(&self, f: impl Fn(&C) -> D) -> DerivativeTable<D> {
        DerivativeTable {
            value: f(&self.value),
            dt_dt: f(&self.dt_dt),
            dz_dz: f(&self.dz_dz),
            r_rp: f(&self.r_rp),
            r_r_sym: f(&self.r_r_sym),
            th_thp: f(&self.th_thp),
            th_th_sym: f(&self.th_th_sym),
            radial_connection: f(&self.radial_connection),
            cross_trace: f(&self.cross_trace),
        }
    }

    pub fn entries(&self) -> [&C; 9] {
        [
            &self.value,
            &self.dt_dt,
            &self.dz_dz,
            &self.r_rp,
            &self.r_r_sym,
            &self.th_thp,
            &self.th_th_sym,
            &self.radial_connection,
            &self.cross_trace,
        ]
    }
}

fn partial<C: Scalar>(jet: &Jet<C>, spec: &JetSpec, powers: &[(Var, u8)]) -> C {
    let alpha = spec.multi_index(powers).expect("all variables seeded");
    jet.derivative(&alpha)
}

/// Reads the table off an order-2 jet in all six variables.
fn table_from_jet<C: Scalar>(w: &Jet<C>, spec: &JetSpec, r: &C) -> DerivativeTable<C> {
    use Var::*;
    let d = |p: &[(Var, u8)]| partial(w, spec, p);
    let inv_r = r.recip();
    let inv_r2 = inv_r.square();
    let dt_dt = d(&[(Dt, 2)]);
    let dz_dz = d(&[(Dz, 2)]);
    let r_rp = d(&[(R, 1), (Rp, 1)]);
    let th_thp = d(&[(Theta, 1), (Thetap, 1)]) * inv_r2.clone();
    let cross_trace = r_rp.clone() + th_thp.clone() - dt_dt.clone() - dz_dz.clone();
    DerivativeTable {
        value: d(&[]),
        dt_dt,
        dz_dz,
        r_rp,
        r_r_sym: (d(&[(R, 2)]) + d(&[(Rp, 2)])).scale(0.5),
        th_thp,
        th_th_sym: ((d(&[(Theta, 2)]) + d(&[(Thetap, 2)])) * inv_r2).scale(0.5),
        radial_connection: (d(&[(R, 1)]) + d(&[(Rp, 1)])).scale(0.5) * inv_r,
        cross_trace,
    }
}

/// Table from any order-2 jet of the renormalized kernel laid out as `spec`.
pub fn derivative_table_from_jet(w: &Jet<f64>, spec: &JetSpec, r: f64) -> DerivativeTable {
    table_from_jet(w, spec, &r)
}

/// Table at the split diagonal, generic over the coefficient carrier.
pub fn derivative_table_with<C>(
    green: &dyn GreenFunction,
    r: C,
    theta: C,
    split: &SplitConfig,
) -> Result<DerivativeTable<C>>
where
    C: Scalar,
    Jet<C>: KernelScalar,
{
    split.validate()?;
    let (dt, dz) = split.separations::<C>();
    let args = KernelArgs {
        r: r.clone(),
        rp: r.clone(),
        theta: theta.clone(),
        thetap: theta,
        dt,
        dz,
    };
    let spec = JetSpec::all(2);
    let w = renormalized(green, &args.seed(&spec))?;
    Ok(table_from_jet(&w, &spec, &r))
}

/// Components `[t00, trr, tperp, tzz]` from a derivative table.
pub fn assemble<C: Scalar>(t: &DerivativeTable<C>, coupling: Coupling) -> [C; 4] {
    let xi = coupling.xi();
    let cross = 1.0 - 2.0 * xi;
    let trace = t.cross_trace.scale(2.0 * xi - 0.5);
    let one_sided = -2.0 * xi;
    let comp = |mixed: &C, single: &C| mixed.scale(cross) + trace.clone() + single.scale(one_sided);
    [
        comp(&-t.dt_dt.clone(), &t.dt_dt),
        comp(&t.r_rp, &t.r_r_sym),
        comp(&t.th_thp, &(t.th_th_sym.clone() + t.radial_connection.clone())),
        comp(&-t.dz_dz.clone(), &t.dz_dz),
    ]
}

fn check_point(geom: &Geometry, r: f64, theta: Option<f64>) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    match *geom {
        Geometry::Wedge { alpha } => {
            let th = theta.unwrap_or(alpha / 2.0);
            if !(th > 0.0 && th < alpha) {
                return Err(Error::Domain(format!(
                    "wedge angle {th} is not strictly between the walls 0 and {alpha}"
                )));
            }
            Ok(th)
        }
        Geometry::Cone(_) => Ok(theta.unwrap_or(0.0)),
    }
}

fn components_in<C>(
    green: &dyn GreenFunction,
    coupling: Coupling,
    r: f64,
    theta: f64,
    split: &SplitConfig,
) -> Result<[f64; 4]>
where
    C: Scalar,
    Jet<C>: KernelScalar,
{
    let t = derivative_table_with(green, C::from_f64(r), C::from_f64(theta), split)?;
    let v = assemble(&t, coupling);
    let out = [v[0].value(), v[1].value(), v[2].value(), v[3].value()];
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("stress at r = {r:e}")));
    }
    Ok(out)
}

/// Table at the split diagonal in binary64. `theta` is needed for wedges.
pub fn derivative_table(geom: &Geometry, r: f64, theta: Option<f64>, split: &SplitConfig) -> Result<DerivativeTable> {
    let th = check_point(geom, r, theta)?;
    derivative_table_with(geom.green().as_ref(), r, th, split)
}

/// Table computed in the given precision and rounded to binary64.
pub fn derivative_table_in(
    precision: Precision,
    geom: &Geometry,
    r: f64,
    theta: Option<f64>,
    split: &SplitConfig,
) -> Result<DerivativeTable> {
    let th = check_point(geom, r, theta)?;
    let green = geom.green();
    match precision {
        Precision::Double => derivative_table_with(green.as_ref(), r, th, split),
        Precision::Extended => {
            derivative_table_with(green.as_ref(), Dd::from(r), Dd::from(th), split).map(|t| t.map(Dd::value))
        }
    }
}

/// Full evaluation; wedges default to the bisecting ray `θ = α/2`.
pub fn stress_components_in(
    precision: Precision,
    geom: &Geometry,
    coupling: Coupling,
    r: f64,
    theta: Option<f64>,
    split: &SplitConfig,
) -> Result<StressPoint> {
    let th = check_point(geom, r, theta)?;
    let green = geom.green();
    let v = match precision {
        Precision::Double => components_in::<f64>(green.as_ref(), coupling, r, th, split)?,
        Precision::Extended => components_in::<Dd>(green.as_ref(), coupling, r, th, split)?,
    };
    Ok(StressPoint {
        t00: v[0],
        trr: v[1],
        tperp: v[2],
        tzz: v[3],
        at: EvalRecord {
            r,
            theta: geom.is_wedge().then_some(th),
            geometry: *geom,
            coupling,
            split: *split,
        },
    })
}

pub fn stress_components(geom: &Geometry, coupling: Coupling, r: f64, split: &SplitConfig) -> Result<StressPoint> {
    stress_components_in(Precision::Double, geom, coupling, r, None, split)
}

pub fn wedge_stress(alpha: f64, coupling: Coupling, r: f64, theta: f64, split: &SplitConfig) -> Result<StressPoint> {
    let geom = Geometry::wedge(alpha)?;
    stress_components_in(Precision::Double, &geom, coupling, r, Some(theta), split)
}

/// `t00 + trr + tperp + tzz`.
pub fn trace(sp: &StressPoint) -> f64 {
    sp.t00 + sp.trr + sp.tperp + sp.tzz
}

/// Step in `ln r` of the conservation stencil.
pub const CONSERVATION_STEP: f64 = 1e-2;

/// `d(trr)/dr + (trr - tperp)/r` with a centered 5-point stencil in `ln r`.
pub fn conservation_residual(geom: &Geometry, coupling: Coupling, r: f64, split: &SplitConfig) -> Result<f64> {
    conservation_residual_in(Precision::Double, geom, coupling, r, split)
}

pub fn conservation_residual_in(
    precision: Precision,
    geom: &Geometry,
    coupling: Coupling,
    r: f64,
    split: &SplitConfig,
) -> Result<f64> {
    let h = CONSERVATION_STEP;
    let trr = |k: f64| -> Result<f64> {
        Ok(stress_components_in(precision, geom, coupling, r * (k * h).exp(), None, split)?.trr)
    };
    let d_dlnr = (trr(-2.0)? - 8.0 * trr(-1.0)? + 8.0 * trr(1.0)? - trr(2.0)?) / (12.0 * h);
    let here = stress_components_in(precision, geom, coupling, r, None, split)?;
    Ok((d_dlnr + here.trr - here.tperp) / r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::ConeGeometry;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn cone(theta1: f64) -> Geometry {
        Geometry::cone(theta1).unwrap()
    }

    #[test]
    fn coupling_values() {
        assert_eq!(Coupling::minimal().xi(), 0.0);
        assert_eq!(Coupling::new(0.0).xi(), 0.25);
        assert_relative_eq!(Coupling::conformal().xi(), 1.0 / 6.0, max_relative = 1e-15);
        assert_eq!(Coupling::from_xi(0.3).beta(), 0.3 - 0.25);
    }

    #[test]
    fn flat_table_and_stress_vanish() {
        let split = SplitConfig::axial(1.0).unwrap();
        let flat = Geometry::Cone(ConeGeometry::flat());
        let t = derivative_table(&flat, 0.7, None, &split).unwrap();
        assert!(t.entries().iter().all(|e| **e == 0.0));
        let s = stress_components(&flat, Coupling::new(0.3), 0.7, &split).unwrap();
        assert_eq!(s.values(), [0.0; 4]);
        assert_eq!(trace(&s), 0.0);
    }

    #[test]
    fn table_value_matches_renormalized_kernel() {
        let split = SplitConfig::axial(1.0).unwrap();
        let t = derivative_table(&cone(PI), 1.0, None, &split).unwrap();
        assert_relative_eq!(t.value, 0.005_066_059_182_116_889, max_relative = 1e-13);
        let neg = derivative_table(
            &cone(PI),
            1.0,
            None,
            &SplitConfig {
                axis: SplitAxis::Axial,
                cutoff: -1.0,
            },
        );
        assert!(neg.is_err());
    }

    #[test]
    fn table_even_in_cutoff_sign() {
        let g = cone(2.5);
        let t = derivative_table_with(g.green().as_ref(), 0.6, 0.0, &SplitConfig::axial(0.8).unwrap()).unwrap();
        let spec = JetSpec::all(2);
        let args = KernelArgs {
            r: 0.6,
            rp: 0.6,
            theta: 0.0,
            thetap: 0.0,
            dt: 0.0,
            dz: -0.8,
        };
        let w = renormalized(g.green().as_ref(), &args.seed(&spec)).unwrap();
        let m = table_from_jet(&w, &spec, &0.6);
        for (a, b) in t.entries().iter().zip(m.entries()) {
            assert_relative_eq!(**a, *b, max_relative = 1e-14);
        }
    }

    #[test]
    fn beta_affinity_and_scaling() {
        let g = cone(3.0 * PI / 2.0);
        let split = SplitConfig::axial(1.0).unwrap();
        let s0 = stress_components(&g, Coupling::new(0.0), 0.3, &split).unwrap();
        let s1 = stress_components(&g, Coupling::new(1.0), 0.3, &split).unwrap();
        let sh = stress_components(&g, Coupling::new(0.5), 0.3, &split).unwrap();
        for c in Component::ALL {
            let affine = s0.get(c) + 0.5 * (s1.get(c) - s0.get(c));
            assert_relative_eq!(sh.get(c), affine, max_relative = 1e-13, epsilon = 1e-15);
        }
        let big = stress_components(&g, Coupling::new(0.0), 0.6, &SplitConfig::axial(2.0).unwrap()).unwrap();
        for c in Component::ALL {
            assert_relative_eq!(big.get(c), s0.get(c) / 16.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn split_axis_swap() {
        let g = cone(4.0 * PI);
        let beta = Coupling::new(0.17);
        let z = stress_components(&g, beta, 0.4, &SplitConfig::axial(0.9).unwrap()).unwrap();
        let t = stress_components(&g, beta, 0.4, &SplitConfig::temporal(0.9).unwrap()).unwrap();
        assert_eq!(z.t00, t.tzz);
        assert_eq!(z.tzz, t.t00);
        assert_eq!(z.trr, t.trr);
        assert_eq!(z.tperp, t.tperp);
    }

    #[test]
    fn extended_precision_agrees() {
        let g = cone(1.7);
        let split = SplitConfig::axial(1.0).unwrap();
        let a = stress_components_in(Precision::Double, &g, Coupling::new(0.1), 0.2, None, &split).unwrap();
        let b = stress_components_in(Precision::Extended, &g, Coupling::new(0.1), 0.2, None, &split).unwrap();
        for c in Component::ALL {
            assert_relative_eq!(a.get(c), b.get(c), max_relative = 1e-11);
        }
    }

    /// Half-space oracle in Cartesian coordinates: the renormalized kernel is
    /// `-1/(4π² D)` with `D = (y + y')² + Δx² + Δt² + Δz²`, `y` the distance
    /// to the wall.
    fn half_space(y: f64, c: f64, xi: f64) -> [f64; 4] {
        let k = 1.0 / (4.0 * PI * PI);
        let d = 4.0 * y * y + c * c;
        let w_d = k / (d * d);
        let w_dd = -2.0 * k / (d * d * d);
        // normal direction: ∂_y∂_y' = ∂_y² = W_DD (2(y+y'))² + 2 W_D
        let yy = w_dd * 16.0 * y * y + 2.0 * w_d;
        // transverse separation x, t: second derivative 2 W_D at zero separation
        let flat_dir = 2.0 * w_d;
        let zz = w_dd * 4.0 * c * c + 2.0 * w_d;
        let cross = yy - flat_dir - flat_dir - zz;
        let t = |mixed: f64, single: f64| (1.0 - 2.0 * xi) * mixed + (2.0 * xi - 0.5) * cross - 2.0 * xi * single;
        [t(-flat_dir, flat_dir), t(yy, yy), t(-flat_dir, flat_dir), t(-zz, zz)]
    }

    #[test]
    fn half_space_wedge_matches_cartesian_images() {
        for &(r, c, beta) in &[(1.0, 0.3, 0.0), (0.7, 1.1, -0.25), (2.0, 0.5, 0.4)] {
            let split = SplitConfig::axial(c).unwrap();
            let s = wedge_stress(PI, Coupling::new(beta), r, PI / 2.0, &split).unwrap();
            let o = half_space(r, c, beta + 0.25);
            let scale = o.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in s.values().iter().zip(o) {
                assert_relative_eq!(*a, b, max_relative = 1e-11, epsilon = 1e-12 * scale);
            }
        }
        let s = wedge_stress(
            PI,
            Coupling::new(0.0),
            1.0,
            PI / 2.0,
            &SplitConfig::axial(1e-3).unwrap(),
        )
        .unwrap();
        assert!(s.t00 < 0.0);
    }

    #[test]
    fn wedge_reflection_and_walls() {
        let split = SplitConfig::axial(1.0).unwrap();
        let alpha = 2.3;
        let a = wedge_stress(alpha, Coupling::new(0.2), 0.5, 0.7, &split).unwrap();
        let b = wedge_stress(alpha, Coupling::new(0.2), 0.5, alpha - 0.7, &split).unwrap();
        for c in Component::ALL {
            assert_relative_eq!(a.get(c), b.get(c), max_relative = 1e-12);
        }
        assert!(wedge_stress(alpha, Coupling::new(0.0), 0.5, 0.0, &split).is_err());
        assert!(wedge_stress(alpha, Coupling::new(0.0), 0.5, alpha, &split).is_err());
    }

    #[test]
    fn trace_is_proportional_to_cross_term() {
        let g = cone(2.0);
        let split = SplitConfig::axial(0.5).unwrap();
        let t = derivative_table(&g, 0.8, None, &split).unwrap();
        for &beta in &[-0.25, 0.0, 0.3] {
            let c = Coupling::new(beta);
            let s = stress_components(&g, c, 0.8, &split).unwrap();
            let expected = (6.0 * c.xi() - 1.0) * t.cross_trace;
            assert_relative_eq!(trace(&s), expected, epsilon = 1e-10 * t.cross_trace.abs());
        }
    }

    #[test]
    fn conservation_vanishes_for_flat() {
        let flat = Geometry::Cone(ConeGeometry::flat());
        let r = conservation_residual(&flat, Coupling::new(0.0), 1.0, &SplitConfig::axial(0.5).unwrap()).unwrap();
        assert_eq!(r, 0.0);
    }
}
