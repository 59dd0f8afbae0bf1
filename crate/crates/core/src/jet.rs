//! Truncated multivariate Taylor polynomials ("jets").
//!
//! A [`Jet`] stores Taylor coefficients `f^(α)(x0) / α!` for every
//! multi-index `|α| <= order`. Arithmetic propagates them exactly, so any
//! closed form written against [`Scalar`] yields its mixed partials for free.
//! Because `Jet<S>` is itself a [`Scalar`], jets nest: `Jet<Jet<f64>>`
//! differentiates an expression that already carries derivatives.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::scalar::Scalar;

/// Multi-index enumeration and product table shared by jets of one shape.
pub struct Layout {
    nvars: usize,
    order: usize,
    indices: Vec<Vec<u8>>,
    lookup: HashMap<Vec<u8>, usize>,
    products: Vec<(u32, u32, u32)>,
}

impl Layout {
    pub fn new(nvars: usize, order: usize) -> Arc<Self> {
        assert!(nvars >= 1, "a jet needs at least one variable");
        let mut indices = Vec::new();
        for degree in 0..=order {
            let mut cur = vec![0u8; nvars];
            compositions(degree, 0, &mut cur, &mut indices);
        }
        let lookup: HashMap<Vec<u8>, usize> = indices.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let degree = |a: &Vec<u8>| a.iter().map(|&d| d as usize).sum::<usize>();
        let mut products = Vec::new();
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                if degree(a) + degree(b) > order {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                products.push((i as u32, j as u32, lookup[&sum] as u32));
            }
        }
        Arc::new(Layout {
            nvars,
            order,
            indices,
            lookup,
            products,
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    pub fn multi_index(&self, i: usize) -> &[u8] {
        &self.indices[i]
    }

    fn compatible(&self, other: &Layout) -> bool {
        self.nvars == other.nvars && self.order == other.order
    }
}

impl fmt::Debug for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Layout(nvars={}, order={})", self.nvars, self.order)
    }
}

fn compositions(remaining: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining as u8;
        out.push(cur.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        cur[pos] = k as u8;
        compositions(remaining - k, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Value plus mixed partial derivatives up to a fixed total order.
///
/// A jet without a layout is a plain constant; it broadcasts against any
/// layout in arithmetic.
#[derive(Clone)]
pub struct Jet<S> {
    layout: Option<Arc<Layout>>,
    coeffs: Vec<S>,
}

impl<S: Scalar> Jet<S> {
    pub fn constant(x: S) -> Self {
        Jet {
            layout: None,
            coeffs: vec![x],
        }
    }

    /// Constant carried on an explicit layout (all derivatives zero).
    pub fn lift(layout: &Arc<Layout>, x: S) -> Self {
        let mut coeffs = vec![S::from_f64(0.0); layout.len()];
        coeffs[0] = x;
        Jet {
            layout: Some(layout.clone()),
            coeffs,
        }
    }

    /// The independent variable number `var`, expanded around `at`.
    pub fn variable(layout: &Arc<Layout>, var: usize, at: S) -> Self {
        assert!(var < layout.nvars(), "variable index out of range");
        let mut j = Jet::lift(layout, at);
        if layout.order() >= 1 {
            let mut alpha = vec![0u8; layout.nvars()];
            alpha[var] = 1;
            let i = layout.index_of(&alpha).expect("first-order index");
            j.coeffs[i] = S::from_f64(1.0);
        }
        j
    }

    /// Jet whose mixed partials `∂^α f` are given by `deriv(α)`.
    pub fn from_derivatives(layout: &Arc<Layout>, mut deriv: impl FnMut(&[u8]) -> S) -> Self {
        let coeffs = (0..layout.len())
            .map(|i| {
                let alpha = layout.multi_index(i);
                let fact: f64 = alpha
                    .iter()
                    .map(|&a| (1..=a as u32).map(f64::from).product::<f64>())
                    .product();
                deriv(alpha).scale(1.0 / fact)
            })
            .collect();
        Jet {
            layout: Some(layout.clone()),
            coeffs,
        }
    }

    pub fn layout(&self) -> Option<&Arc<Layout>> {
        self.layout.as_ref()
    }

    pub fn order(&self) -> usize {
        self.layout.as_ref().map_or(0, |l| l.order())
    }

    /// The plain function value (zero multi-index coefficient).
    pub fn base(&self) -> &S {
        &self.coeffs[0]
    }

    /// Taylor coefficient `f^(α) / α!`; zero for indices beyond the order.
    pub fn coeff(&self, alpha: &[u8]) -> S {
        if alpha.iter().all(|&a| a == 0) {
            return self.coeffs[0].clone();
        }
        match &self.layout {
            Some(l) => match l.index_of(alpha) {
                Some(i) => self.coeffs[i].clone(),
                None => S::from_f64(0.0),
            },
            None => S::from_f64(0.0),
        }
    }

    /// Mixed partial derivative `∂^α f`.
    pub fn derivative(&self, alpha: &[u8]) -> S {
        let fact: f64 = alpha
            .iter()
            .map(|&a| (1..=a as u32).map(f64::from).product::<f64>())
            .product();
        self.coeff(alpha).scale(fact)
    }

    pub fn coefficients(&self) -> &[S] {
        &self.coeffs
    }

    fn zeros_like(layout: &Option<Arc<Layout>>) -> Vec<S> {
        vec![S::from_f64(0.0); layout.as_ref().map_or(1, |l| l.len())]
    }

    fn merged_layout(&self, other: &Jet<S>) -> Option<Arc<Layout>> {
        match (&self.layout, &other.layout) {
            (Some(a), Some(b)) => {
                assert!(
                    Arc::ptr_eq(a, b) || a.compatible(b),
                    "jet layouts differ: {a:?} vs {b:?}"
                );
                Some(a.clone())
            }
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        }
    }

    /// `Σ_k taylor[k] · h^k` where `h = self - self.base()`.
    fn compose(&self, taylor: &[S]) -> Jet<S> {
        let Some(layout) = &self.layout else {
            return Jet::constant(taylor[0].clone());
        };
        let mut h = self.clone();
        h.coeffs[0] = S::from_f64(0.0);
        let top = layout.order().min(taylor.len() - 1);
        let mut acc = Jet::lift(layout, taylor[top].clone());
        for k in (0..top).rev() {
            acc = acc * h.clone();
            acc.coeffs[0] = acc.coeffs[0].clone() + taylor[k].clone();
        }
        acc
    }

    fn order_for_series(&self) -> usize {
        self.order()
    }
}

/// `1/k!` for `k = 0..=n` in the scalar's own precision.
fn inv_factorials<S: Scalar>(n: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(n + 1);
    let mut f = S::from_f64(1.0);
    out.push(f.clone());
    for k in 1..=n {
        f = f / S::from_f64(k as f64);
        out.push(f.clone());
    }
    out
}

/// Generalized binomial coefficients `C(p, k)` for `k = 0..=n`.
fn binomials<S: Scalar>(p: f64, n: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(n + 1);
    let mut b = S::from_f64(1.0);
    out.push(b.clone());
    for k in 1..=n {
        b = b * S::from_f64(p - (k - 1) as f64) / S::from_f64(k as f64);
        out.push(b.clone());
    }
    out
}

impl<S: Scalar> fmt::Debug for Jet<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.layout {
            None => write!(f, "Jet::constant({:?})", self.coeffs[0]),
            Some(l) => {
                let mut m = f.debug_map();
                for (i, c) in self.coeffs.iter().enumerate() {
                    m.entry(&l.multi_index(i), c);
                }
                m.finish()
            }
        }
    }
}

impl<S: Scalar> Add for Jet<S> {
    type Output = Jet<S>;
    fn add(self, o: Jet<S>) -> Jet<S> {
        let layout = self.merged_layout(&o);
        let mut out = Jet::<S>::zeros_like(&layout);
        for (i, c) in self.coeffs.into_iter().enumerate() {
            out[i] = c;
        }
        for (i, c) in o.coeffs.into_iter().enumerate() {
            out[i] = out[i].clone() + c;
        }
        Jet { layout, coeffs: out }
    }
}

impl<S: Scalar> Sub for Jet<S> {
    type Output = Jet<S>;
    fn sub(self, o: Jet<S>) -> Jet<S> {
        self + (-o)
    }
}

impl<S: Scalar> Neg for Jet<S> {
    type Output = Jet<S>;
    fn neg(self) -> Jet<S> {
        Jet {
            layout: self.layout,
            coeffs: self.coeffs.into_iter().map(|c| -c).collect(),
        }
    }
}

impl<S: Scalar> Mul for Jet<S> {
    type Output = Jet<S>;
    fn mul(self, o: Jet<S>) -> Jet<S> {
        match (&self.layout, &o.layout) {
            (None, _) => {
                let k = self.coeffs[0].clone();
                Jet {
                    layout: o.layout,
                    coeffs: o.coeffs.into_iter().map(|c| k.clone() * c).collect(),
                }
            }
            (_, None) => {
                let k = o.coeffs[0].clone();
                Jet {
                    layout: self.layout,
                    coeffs: self.coeffs.into_iter().map(|c| c * k.clone()).collect(),
                }
            }
            (Some(_), Some(_)) => {
                let layout = self.merged_layout(&o);
                let l = layout.as_ref().expect("layout");
                let mut out = Jet::<S>::zeros_like(&layout);
                for &(i, j, k) in &l.products {
                    let (i, j, k) = (i as usize, j as usize, k as usize);
                    out[k] = out[k].clone() + self.coeffs[i].clone() * o.coeffs[j].clone();
                }
                Jet { layout, coeffs: out }
            }
        }
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl<S: Scalar> Div for Jet<S> {
    type Output = Jet<S>;
    fn div(self, o: Jet<S>) -> Jet<S> {
        if o.layout.is_none() {
            let k = o.coeffs[0].clone().recip();
            return Jet {
                layout: self.layout,
                coeffs: self.coeffs.into_iter().map(|c| c * k.clone()).collect(),
            };
        }
        self * o.recip()
    }
}

impl<S: Scalar> Scalar for Jet<S> {
    fn from_f64(x: f64) -> Self {
        Jet::constant(S::from_f64(x))
    }

    fn value(&self) -> f64 {
        self.coeffs[0].value()
    }

    fn epsilon() -> f64 {
        S::epsilon()
    }

    fn pi() -> Self {
        Jet::constant(S::pi())
    }

    fn exp(&self) -> Self {
        let n = self.order_for_series();
        let e = self.coeffs[0].exp();
        let t: Vec<S> = inv_factorials::<S>(n).into_iter().map(|f| e.clone() * f).collect();
        self.compose(&t)
    }

    fn expm1(&self) -> Self {
        let n = self.order_for_series();
        let x0 = &self.coeffs[0];
        let e = x0.exp();
        let mut t: Vec<S> = inv_factorials::<S>(n).into_iter().map(|f| e.clone() * f).collect();
        t[0] = x0.expm1();
        self.compose(&t)
    }

    fn ln(&self) -> Self {
        let x0 = self.coeffs[0].clone();
        log_series(self, x0.ln(), x0)
    }

    fn ln1p(&self) -> Self {
        let x0 = self.coeffs[0].clone();
        let y = x0.clone() + S::from_f64(1.0);
        log_series(self, x0.ln1p(), y)
    }

    fn sqrt(&self) -> Self {
        self.power_series(0.5, self.coeffs[0].sqrt())
    }

    fn sin(&self) -> Self {
        let x0 = &self.coeffs[0];
        let (s, c) = (x0.sin(), x0.cos());
        let cycle = [s.clone(), c.clone(), -s, -c];
        self.trig_series(&cycle)
    }

    fn cos(&self) -> Self {
        let x0 = &self.coeffs[0];
        let (s, c) = (x0.sin(), x0.cos());
        let cycle = [c.clone(), -s.clone(), -c, s];
        self.trig_series(&cycle)
    }

    fn recip(&self) -> Self {
        let n = self.order_for_series();
        let inv = self.coeffs[0].recip();
        let mut t = Vec::with_capacity(n + 1);
        let mut p = inv.clone();
        for k in 0..=n {
            t.push(if k % 2 == 0 { p.clone() } else { -p.clone() });
            p = p * inv.clone();
        }
        self.compose(&t)
    }

    fn powf(&self, p: f64) -> Self {
        let x0 = &self.coeffs[0];
        self.power_series(p, x0.powf(p))
    }
}

impl<S: Scalar> Jet<S> {
    /// Taylor expansion of `x^p` around the base point, given `x0^p`.
    fn power_series(&self, p: f64, head: S) -> Self {
        let n = self.order_for_series();
        let inv = self.coeffs[0].recip();
        let binom = binomials::<S>(p, n);
        let mut t = Vec::with_capacity(n + 1);
        let mut acc = head;
        for b in binom {
            t.push(b * acc.clone());
            acc = acc * inv.clone();
        }
        self.compose(&t)
    }

    fn trig_series(&self, cycle: &[S; 4]) -> Self {
        let n = self.order_for_series();
        let t: Vec<S> = inv_factorials::<S>(n)
            .into_iter()
            .enumerate()
            .map(|(k, f)| cycle[k % 4].clone() * f)
            .collect();
        self.compose(&t)
    }
}

/// Series of `ln(y0 + h)` with `head = ln(y0)`.
fn log_series<S: Scalar>(x: &Jet<S>, head: S, y0: S) -> Jet<S> {
    let n = x.order_for_series();
    let inv = y0.recip();
    let mut t = Vec::with_capacity(n + 1);
    t.push(head);
    let mut p = inv.clone();
    for k in 1..=n {
        let c = p.clone() / S::from_f64(k as f64);
        t.push(if k % 2 == 1 { c } else { -c });
        p = p * inv.clone();
    }
    x.compose(&t)
}

impl<S> std::ops::Index<usize> for Jet<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.coeffs[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn univariate(order: usize, at: f64) -> Jet<f64> {
        let l = Layout::new(1, order);
        Jet::variable(&l, 0, at)
    }

    #[test]
    fn layout_counts_match_binomial() {
        // C(n + k, k) multi-indices of total degree <= k in n variables
        assert_eq!(Layout::new(6, 2).len(), 28);
        assert_eq!(Layout::new(2, 4).len(), 15);
        assert_eq!(Layout::new(1, 5).len(), 6);
        let l = Layout::new(3, 2);
        assert_eq!(l.multi_index(0), &[0, 0, 0]);
        assert!(l.index_of(&[1, 1, 0]).is_some());
        assert!(l.index_of(&[2, 1, 0]).is_none());
    }

    #[test]
    fn exp_taylor_series() {
        let r = univariate(5, 0.0).exp();
        let expect = [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0];
        for (k, e) in expect.iter().enumerate() {
            assert_relative_eq!(r.coefficients()[k], *e, epsilon = 1e-15);
        }
    }

    #[test]
    fn ln_and_powf_derivatives() {
        let x = univariate(4, 2.0);
        let l = x.ln();
        // d^k/dx^k ln x = (-1)^(k+1) (k-1)! / x^k
        assert_relative_eq!(l.derivative(&[1]), 0.5, epsilon = 1e-15);
        assert_relative_eq!(l.derivative(&[2]), -0.25, epsilon = 1e-15);
        assert_relative_eq!(l.derivative(&[3]), 2.0 / 8.0, epsilon = 1e-15);
        let p = x.powf(1.5);
        assert_relative_eq!(p.derivative(&[2]), 0.75 * 2f64.powf(-0.5), epsilon = 1e-14);
        // integer exponents truncate exactly
        let q = univariate(6, 3.0).powf(2.0);
        assert_eq!(q.derivative(&[3]), 0.0);
        assert_eq!(q.derivative(&[2]), 2.0);
    }

    #[test]
    fn mixed_partials_of_product() {
        let l = Layout::new(2, 3);
        let x = Jet::variable(&l, 0, 1.5);
        let y = Jet::variable(&l, 1, -0.5);
        // f = x^2 y sin(y)
        let f = x.clone() * x * y.clone() * y.sin();
        let (xv, yv) = (1.5f64, -0.5f64);
        let g = |y: f64| y * y.sin();
        let gp = |y: f64| y.sin() + y * y.cos();
        let gpp = |y: f64| 2.0 * y.cos() - y * y.sin();
        assert_relative_eq!(f.derivative(&[0, 0]), xv * xv * g(yv), epsilon = 1e-15);
        assert_relative_eq!(f.derivative(&[1, 1]), 2.0 * xv * gp(yv), epsilon = 1e-14);
        assert_relative_eq!(f.derivative(&[2, 1]), 2.0 * gp(yv), epsilon = 1e-14);
        assert_relative_eq!(f.derivative(&[0, 2]), xv * xv * gpp(yv), epsilon = 1e-14);
    }

    #[test]
    fn nested_jets_differentiate_derivatives() {
        // outer: d/dy ; inner: d/dx ; f = exp(x*y)
        let inner = Layout::new(1, 3);
        let outer = Layout::new(1, 2);
        let x = Jet::variable(&inner, 0, 0.3);
        let y = Jet::variable(&outer, 0, Jet::<f64>::lift(&inner, 0.7));
        let xo = Jet::lift(&outer, x);
        let f = (xo * y).exp();
        // ∂_y f = x e^{xy}; its x-derivative = (1 + xy) e^{xy}
        let dy = f.derivative(&[1]);
        let e = (0.3f64 * 0.7).exp();
        assert_relative_eq!(dy.derivative(&[0]), 0.3 * e, epsilon = 1e-15);
        assert_relative_eq!(dy.derivative(&[1]), (1.0 + 0.21) * e, epsilon = 1e-14);
    }

    #[test]
    fn constants_broadcast() {
        let x = univariate(2, 1.0);
        let c = Jet::<f64>::from_f64(3.0);
        let y = c.clone() * x.clone() + c.clone();
        assert_eq!(y.derivative(&[0]), 6.0);
        assert_eq!(y.derivative(&[1]), 3.0);
        let z = x / c;
        assert_relative_eq!(z.derivative(&[1]), 1.0 / 3.0);
    }

    #[test]
    fn recip_sin_cos_sqrt_series() {
        let x = univariate(3, 0.4);
        let r = x.recip();
        assert_relative_eq!(r.derivative(&[2]), 2.0 / 0.4f64.powi(3), epsilon = 1e-13);
        let s = x.sin();
        assert_relative_eq!(s.derivative(&[3]), -0.4f64.cos(), epsilon = 1e-14);
        let c = x.cos();
        assert_relative_eq!(c.derivative(&[1]), -0.4f64.sin(), epsilon = 1e-14);
        let q = x.sqrt();
        assert_relative_eq!(q.derivative(&[1]), 0.5 / 0.4f64.sqrt(), epsilon = 1e-14);
        let m = x.expm1();
        assert_relative_eq!(m.derivative(&[0]), 0.4f64.exp_m1(), epsilon = 1e-15);
        let p = x.ln1p();
        assert_relative_eq!(p.derivative(&[2]), -1.0 / 1.4f64.powi(2), epsilon = 1e-14);
    }
}
