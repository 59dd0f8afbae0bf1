//! Brute-force cross-checks that share no code path with the jets:
//! central finite differences, Richardson extrapolation and explicit flat
//! image sums.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, Layout};
use crate::kernels::{renormalized, FlatKernel, Geometry, JetSpec, Kernel, PointPair};
use crate::scalar::{Dd, Scalar};
use crate::stress::{assemble, derivative_table_from_jet, Coupling, SplitConfig};

/// Finite-difference step (relative to the coordinate scale) and stencil order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FDSpec {
    pub step: f64,
    pub stencil: u8,
}

impl FDSpec {
    pub fn new(step: f64, stencil: u8) -> Result<Self> {
        if !(step > 0.0) || !(stencil == 2 || stencil == 4) {
            return Err(Error::Config(format!(
                "finite differences need step > 0 and stencil 2 or 4 (got {step}, {stencil})"
            )));
        }
        Ok(FDSpec { step, stencil })
    }

    /// Fourth-order stencil with step `ε^{1/(order+4)}`, which balances the
    /// `h^4` truncation error against roundoff `ε/h^order`.
    pub fn for_order(order: usize) -> Self {
        FDSpec {
            step: f64::EPSILON.powf(1.0 / (order as f64 + 4.0)),
            stencil: 4,
        }
    }
}

/// Finite-difference jet together with the disagreement between step `h`
/// and step `2h`.
#[derive(Debug, Clone)]
pub struct FdEstimate {
    pub jet: Jet<f64>,
    pub disagreement: f64,
}

impl FdEstimate {
    pub fn is_stable(&self) -> bool {
        self.disagreement <= 1e-4
    }
}

/// (offset in steps, weight) for the `p`-th derivative.
fn stencil(p: u8, accuracy: u8) -> &'static [(f64, f64)] {
    match (p, accuracy) {
        (0, _) => &[(0.0, 1.0)],
        (1, 2) => &[(-1.0, -0.5), (1.0, 0.5)],
        (1, _) => &[
            (-2.0, 1.0 / 12.0),
            (-1.0, -8.0 / 12.0),
            (1.0, 8.0 / 12.0),
            (2.0, -1.0 / 12.0),
        ],
        (2, 2) => &[(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)],
        (2, _) => &[
            (-2.0, -1.0 / 12.0),
            (-1.0, 16.0 / 12.0),
            (0.0, -30.0 / 12.0),
            (1.0, 16.0 / 12.0),
            (2.0, -1.0 / 12.0),
        ],
        _ => unreachable!("derivative order checked by caller"),
    }
}

struct Stencil<'a, F> {
    f: &'a F,
    point: &'a [f64],
    vars: &'a [usize],
    steps: &'a [f64],
    accuracy: u8,
}

impl<F: Fn(&[f64]) -> Result<f64>> Stencil<'_, F> {
    /// Tensor product of one-dimensional stencils, one per variable.
    fn apply(&self, alpha: &[u8], depth: usize, weight: f64, x: &mut [f64]) -> Result<f64> {
        if depth == self.vars.len() {
            return Ok(weight * (self.f)(x)?);
        }
        let v = self.vars[depth];
        let h = self.steps[depth];
        let p = alpha[depth];
        let mut acc = 0.0;
        for &(off, w) in stencil(p, self.accuracy) {
            x[v] = self.point[v] + off * h;
            acc += self.apply(alpha, depth + 1, weight * w / h.powi(p as i32), x)?;
        }
        x[v] = self.point[v];
        Ok(acc)
    }
}

fn fd_with_steps<F>(
    f: &F,
    point: &[f64],
    vars: &[usize],
    layout: &std::sync::Arc<Layout>,
    steps: &[f64],
    accuracy: u8,
) -> Result<Jet<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let st = Stencil {
        f,
        point,
        vars,
        steps,
        accuracy,
    };
    let mut x = point.to_vec();
    let mut err = None;
    let jet = Jet::from_derivatives(layout, |alpha| match st.apply(alpha, 0, 1.0, &mut x) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(jet),
    }
}

/// Central-difference estimate of all mixed partials of `f` in the
/// coordinates `vars` (indices into `point`) up to total `order` ≤ 2.
///
/// Steps are `spec.step` times `|x|` (or 1 where the coordinate is zero).
pub fn fd_jet<F>(f: F, point: &[f64], vars: &[usize], order: usize, spec: FDSpec) -> Result<FdEstimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let scales: Vec<f64> = vars
        .iter()
        .map(|&v| match point.get(v) {
            Some(&x) if x != 0.0 => x.abs(),
            _ => 1.0,
        })
        .collect();
    fd_jet_scaled(f, point, vars, &scales, order, spec)
}

/// `fd_jet` with the step of each variable set to `spec.step` times the
/// matching entry of `scales`.
pub fn fd_jet_scaled<F>(
    f: F,
    point: &[f64],
    vars: &[usize],
    scales: &[f64],
    order: usize,
    spec: FDSpec,
) -> Result<FdEstimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    FDSpec::new(spec.step, spec.stencil)?;
    if order > 2 {
        return Err(Error::Config(format!(
            "finite-difference jets support order <= 2, got {order}"
        )));
    }
    if vars.is_empty() || vars.iter().any(|&v| v >= point.len()) || scales.len() != vars.len() {
        return Err(Error::Config("finite-difference variables out of range".into()));
    }
    let layout = Layout::new(vars.len(), order);
    let steps: Vec<f64> = scales.iter().map(|s| spec.step * s).collect();
    let jet = fd_with_steps(&f, point, vars, &layout, &steps, spec.stencil)?;
    let wide: Vec<f64> = steps.iter().map(|h| 2.0 * h).collect();
    let check = fd_with_steps(&f, point, vars, &layout, &wide, spec.stencil)?;
    let scale = jet.coefficients().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let disagreement = jet
        .coefficients()
        .iter()
        .zip(check.coefficients())
        .map(|(a, b)| (a - b).abs() / scale.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(FdEstimate { jet, disagreement })
}

/// `fd_jet` over the six kernel coordinates `(r, r', θ, θ', Δt, Δz)`.
///
/// Lengths are stepped relative to `L = min(r, r', s)`, with `s` the chordal
/// distance of the pair, and angles relative to `min(1, L / max(r, r'))`.
/// Kernel values are taken in double-double.
pub fn fd_kernel_jet<K>(kernel: &K, pair: &PointPair, vars: &[usize], order: usize, spec: FDSpec) -> Result<FdEstimate>
where
    K: Kernel<Dd> + ?Sized,
{
    let point = [pair.r, pair.rp, pair.theta, pair.thetap, pair.dt, pair.dz];
    let half = 0.5 * (pair.theta - pair.thetap);
    let chord = ((pair.r - pair.rp).powi(2)
        + pair.dt * pair.dt
        + pair.dz * pair.dz
        + 4.0 * pair.r * pair.rp * half.sin().powi(2))
    .sqrt();
    let length = pair.r.min(pair.rp).min(chord);
    let angle = (length / pair.r.max(pair.rp)).min(1.0);
    let scales: Vec<f64> = vars
        .iter()
        .map(|&v| match v {
            2 | 3 => angle,
            _ => length,
        })
        .collect();
    fd_jet_scaled(
        |x: &[f64]| {
            Ok(kernel
                .eval(&PointPair::new(x[0], x[1], x[2], x[3], x[4], x[5]).args::<Dd>())?
                .value())
        },
        &point,
        vars,
        &scales,
        order,
        spec,
    )
}

/// Components `[t00, trr, tperp, tzz]` from a finite-difference table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdStress {
    pub components: [f64; 4],
    pub disagreement: f64,
}

/// Stress components assembled from a finite-difference jet of the
/// renormalized kernel instead of the exact one. Kernel values are taken in
/// double-double so the flat subtraction does not feed roundoff into the
/// stencil.
pub fn fd_stress_components(
    geom: &Geometry,
    coupling: Coupling,
    r: f64,
    theta: f64,
    split: &SplitConfig,
) -> Result<FdStress> {
    split.validate()?;
    let green = geom.green();
    let (dt, dz) = split.separations::<f64>();
    let est = fd_jet(
        |x: &[f64]| {
            let args = PointPair::new(x[0], x[1], x[2], x[3], x[4], x[5]).args::<Dd>();
            Ok(renormalized(green.as_ref(), &args)?.value())
        },
        &[r, r, theta, theta, dt, dz],
        &[0, 1, 2, 3, 4, 5],
        2,
        FDSpec::for_order(2),
    )?;
    let table = derivative_table_from_jet(&est.jet, &JetSpec::all(2), r);
    Ok(FdStress {
        components: assemble(&table, coupling),
        disagreement: est.disagreement,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrapolation {
    pub limit: f64,
    /// Convergence order seen in the raw sequence.
    pub observed_order: f64,
    pub error_estimate: f64,
}

/// Iterated Richardson elimination of errors `h^p, h^{2p}, …` (Neville
/// interpolation in `h^p` evaluated at zero).
///
/// The returned limit is the diagonal entry whose change from its
/// predecessor is smallest; that change is the error estimate.
pub fn richardson(seq: &[(f64, f64)], p: f64) -> Result<Extrapolation> {
    if seq.len() < 3 {
        return Err(Error::Extrapolation(format!(
            "need at least 3 entries, got {}",
            seq.len()
        )));
    }
    if !(p > 0.0) {
        return Err(Error::Extrapolation(format!("order must be positive, got {p}")));
    }
    for w in seq.windows(2) {
        if !(w[1].0 > 0.0 && w[1].0 < w[0].0) {
            return Err(Error::Extrapolation("steps must decrease and stay positive".into()));
        }
    }
    let n = seq.len();
    let h: Vec<f64> = seq.iter().map(|e| e.0).collect();
    let mut table: Vec<Vec<f64>> = seq.iter().map(|e| vec![e.1]).collect();
    for k in 1..n {
        for i in k..n {
            let ratio = (h[i - k] / h[i]).powf(p);
            let prev = table[i][k - 1];
            let next = prev + (prev - table[i - 1][k - 1]) / (ratio - 1.0);
            table[i].push(next);
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| table[i][i]).collect();
    let (best, err) = (1..n)
        .map(|i| (i, (diag[i] - diag[i - 1]).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least two diagonal entries");
    let first = (diag[1] - diag[0]).abs();
    let last = (diag[n - 1] - diag[n - 2]).abs();
    if !diag.iter().all(|d| d.is_finite()) || (best == 1 && last > first && n > 3) {
        return Err(Error::Extrapolation("successive estimates diverge".into()));
    }
    let v = |i: usize| seq[i].1;
    let d1 = (v(n - 2) - v(n - 3)).abs();
    let d2 = (v(n - 1) - v(n - 2)).abs();
    let observed_order = if d1 > 0.0 && d2 > 0.0 {
        (d1 / d2).ln() / (h[n - 2] / h[n - 1]).ln()
    } else {
        f64::INFINITY
    };
    Ok(Extrapolation {
        limit: diag[best],
        observed_order,
        error_estimate: err,
    })
}

/// Σ_{k=0}^{N-1} of the flat kernel at Δθ + 2πk/N, summed in increasing k.
pub fn image_sum_reference(n: u32, pair: &PointPair) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("image count must be at least 1".into()));
    }
    (0..n).try_fold(0.0, |acc, k| {
        let shift = 2.0 * PI * k as f64 / n as f64;
        let image = PointPair::new(pair.r, pair.rp, pair.theta, pair.thetap - shift, pair.dt, pair.dz);
        Ok(acc + FlatKernel.eval(&image.args::<f64>())?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{
        cone_by_flat_images, cone_kernel, flat_kernel, phi_squared, renormalized_kernel, ConeGeometry, ConeKernel,
        Geometry, JetSpec, Var,
    };
    use approx::assert_relative_eq;

    #[test]
    fn square_derivative() {
        let e = fd_jet(|x: &[f64]| Ok(x[0] * x[0]), &[3.0], &[0], 1, FDSpec::for_order(1)).unwrap();
        assert_relative_eq!(e.jet.derivative(&[1]), 6.0, max_relative = 1e-8);
        assert!(e.is_stable());
        let e = fd_jet(
            |x: &[f64]| Ok(x[0] * x[1].sin()),
            &[1.5, 0.4],
            &[0, 1],
            2,
            FDSpec::for_order(2),
        )
        .unwrap();
        assert_relative_eq!(e.jet.derivative(&[1, 1]), 0.4f64.cos(), max_relative = 1e-8);
        assert_relative_eq!(e.jet.derivative(&[0, 2]), -1.5 * 0.4f64.sin(), max_relative = 1e-7);
        assert!(FDSpec::new(1e-3, 3).is_err());
        assert!(fd_jet(|x: &[f64]| Ok(x[0]), &[1.0], &[0], 3, FDSpec::for_order(3)).is_err());
    }

    #[test]
    fn fd_matches_flat_dz_jet() {
        let pair = PointPair::axial(1.0, 1.0, 0.0, 1.0);
        let exact = flat_kernel(&pair, &JetSpec::new(&[Var::Dz], 1))
            .unwrap()
            .derivative(&[1]);
        let fd = fd_kernel_jet(&FlatKernel, &pair, &[5], 1, FDSpec::for_order(1)).unwrap();
        assert_relative_eq!(fd.jet.derivative(&[1]), exact, max_relative = 1e-6);
    }

    #[test]
    fn fd_matches_cone_mixed_radial() {
        let pair = PointPair::new(0.8, 1.3, 0.4, -0.3, 0.2, 0.7);
        let geom = ConeGeometry::from_images(2).unwrap();
        let exact = cone_kernel(&geom, &pair, &JetSpec::new(&[Var::R, Var::Rp], 2)).unwrap();
        let fd = fd_kernel_jet(&ConeKernel::new(geom).unwrap(), &pair, &[0, 1], 2, FDSpec::for_order(2)).unwrap();
        assert_relative_eq!(
            fd.jet.derivative(&[1, 1]),
            exact.derivative(&[1, 1]),
            max_relative = 1e-6
        );
    }

    #[test]
    fn richardson_synthetic() {
        let seq: Vec<_> = (0..6)
            .map(|k| {
                let h = 0.5f64.powi(k);
                (h, 1.0 + h * h)
            })
            .collect();
        let e = richardson(&seq, 2.0).unwrap();
        assert_relative_eq!(e.limit, 1.0, max_relative = 1e-15);
        assert_relative_eq!(e.observed_order, 2.0, max_relative = 1e-10);
        let seq: Vec<_> = (0..6)
            .map(|k| {
                let h = 0.5f64.powi(k);
                (h, 2.0 - 3.0 * h.powi(3) + h.powi(6))
            })
            .collect();
        let e = richardson(&seq, 3.0).unwrap();
        assert_relative_eq!(e.limit, 2.0, max_relative = 1e-13);
        assert!((e.observed_order - 3.0).abs() < 0.1);
        assert!(richardson(&seq[..2], 2.0).is_err());
    }

    #[test]
    fn phi_squared_limit() {
        let g = ConeGeometry::from_images(2).unwrap();
        let seq: Vec<_> = (1..=6)
            .map(|k| {
                let z = 0.5f64.powi(k);
                (z, phi_squared(&g, 1.0, z).unwrap())
            })
            .collect();
        let e = richardson(&seq, 2.0).unwrap();
        let expected = 3.0 / (48.0 * PI * PI);
        assert_relative_eq!(expected, 0.006_332_573_977_646_111, max_relative = 1e-15);
        assert_relative_eq!(e.limit, expected, max_relative = 1e-8);
    }

    #[test]
    fn renormalized_diagonal_axis_limit() {
        let g = Geometry::Cone(ConeGeometry::from_images(2).unwrap());
        let seq: Vec<_> = (1..=6)
            .map(|k| {
                let r = 0.5f64.powi(k);
                let pair = PointPair::axial(r, r, 0.0, 1.0);
                (
                    r,
                    *renormalized_kernel(&g, &pair, &JetSpec::value_only()).unwrap().base(),
                )
            })
            .collect();
        let e = richardson(&seq, 2.0).unwrap();
        assert_relative_eq!(e.limit, 1.0 / (4.0 * PI * PI), max_relative = 1e-8);
    }

    #[test]
    fn image_sums() {
        let pair = PointPair::axial(1.0, 1.0, 0.0, 1.0);
        assert_eq!(image_sum_reference(1, &pair).unwrap(), 1.0 / (4.0 * PI * PI));
        assert_relative_eq!(
            image_sum_reference(2, &pair).unwrap(),
            0.030_396_355_092_701_331,
            max_relative = 1e-15
        );
        let p = PointPair::new(0.4, 1.7, 1.1, 0.2, -0.3, 0.9);
        for n in 1..=6 {
            let a = image_sum_reference(n, &p).unwrap();
            assert_eq!(a, cone_by_flat_images(n, &p).unwrap());
            let c = *cone_kernel(&ConeGeometry::from_images(n).unwrap(), &p, &JetSpec::value_only())
                .unwrap()
                .base();
            assert_relative_eq!(a, c, max_relative = 1e-12);
        }
    }
}
