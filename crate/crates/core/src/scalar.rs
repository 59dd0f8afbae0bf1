//! Arithmetic carriers shared by every kernel.
//!
//! All closed forms are written once against [`Scalar`] and evaluated with
//! plain `f64`, with the double-double [`Dd`] type for validation runs, or
//! with [`Jet`](crate::jet::Jet) carriers built on either of them.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Field operations plus the handful of elementary functions the kernels use.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;

    /// Leading binary64 approximation of the value (constant part for jets).
    fn value(&self) -> f64;

    /// Unit roundoff of the underlying real arithmetic.
    fn epsilon() -> f64;

    fn pi() -> Self;
    fn exp(&self) -> Self;
    fn expm1(&self) -> Self;
    fn ln(&self) -> Self;
    fn ln1p(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn recip(&self) -> Self;
    fn powf(&self, p: f64) -> Self;

    fn powi(&self, n: u32) -> Self {
        let mut acc = Self::from_f64(1.0);
        for _ in 0..n {
            acc = acc * self.clone();
        }
        acc
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }

    fn scale(&self, k: f64) -> Self {
        self.clone() * Self::from_f64(k)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn epsilon() -> f64 {
        f64::EPSILON
    }
    fn pi() -> Self {
        std::f64::consts::PI
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn expm1(&self) -> Self {
        f64::exp_m1(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn ln1p(&self) -> Self {
        f64::ln_1p(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn recip(&self) -> Self {
        1.0 / *self
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn powi(&self, n: u32) -> Self {
        f64::powi(*self, n as i32)
    }
}

/// Run-time arithmetic selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Extended,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Double => "double",
            Precision::Extended => "extended",
        }
    }

    pub fn epsilon(self) -> f64 {
        match self {
            Precision::Double => f64::EPSILON,
            Precision::Extended => Dd::EPS,
        }
    }

    /// Reads `CONEVAC_PRECISION` (`double` or `extended`); anything else is `Double`.
    pub fn from_env() -> Self {
        match std::env::var("CONEVAC_PRECISION").as_deref() {
            Ok("extended") => Precision::Extended,
            _ => Precision::Double,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double" | "f64" => Ok(Precision::Double),
            "extended" | "dd" => Ok(Precision::Extended),
            other => Err(format!("unknown precision mode `{other}`")),
        }
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`: about 106 significand
/// bits, i.e. 31-32 decimal digits.
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const MAX_SERIES_TERMS: usize = 40;

impl Dd {
    pub const EPS: f64 = 4.93038065763132e-32; // 2^-104
    pub const PI: Dd = Dd::new(std::f64::consts::PI, 1.2246467991473532e-16);
    pub const FRAC_PI_2: Dd = Dd::new(std::f64::consts::FRAC_PI_2, 6.123233995736766e-17);
    pub const LN_2: Dd = Dd::new(std::f64::consts::LN_2, 2.3190468138462996e-17);

    pub const fn new(hi: f64, lo: f64) -> Self {
        Dd { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (h, l) = quick_two_sum(hi, lo);
        Dd { hi: h, lo: l }
    }

    fn add_dd(self, o: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, o.hi);
        let (t1, t2) = two_sum(self.lo, o.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        Dd::renorm(s1, s2 + t2)
    }

    fn mul_dd(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        Dd::renorm(p, e)
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        Dd::renorm(p, e + self.lo * b)
    }

    fn div_dd(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o.mul_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o.mul_f64(q2);
        let q3 = r.hi / o.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Dd::new(q1, q2) + Dd::from(q3)
    }

    fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd::new(self.hi * f, self.lo * f)
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn round_nearest(self) -> f64 {
        let r = self.hi.round();
        if r == self.hi {
            // hi is integral, lo decides the tie direction
            let lr = self.lo.round();
            r + lr
        } else if (r - self.hi).abs() == 0.5 {
            if self.lo < 0.0 && r > self.hi {
                r - 1.0
            } else if self.lo > 0.0 && r < self.hi {
                r + 1.0
            } else {
                r
            }
        } else {
            r
        }
    }

    /// exp(x) - 1 for |x| <= 1/2 by direct Taylor summation.
    fn expm1_small(self) -> Dd {
        let mut term = self;
        let mut sum = self;
        let mut k = 2;
        while k < MAX_SERIES_TERMS {
            term = term * self / Dd::from(k as f64);
            let t = term;
            sum = sum + t;
            if t.hi.abs() <= Dd::EPS * 1e-2 * sum.hi.abs() {
                break;
            }
            k += 1;
        }
        sum
    }

    fn exp_dd(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::from(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::from(0.0);
        }
        let k = (self.hi / Dd::LN_2.hi).round();
        let r = self - Dd::LN_2.mul_f64(k);
        // exp(r) = (1 + expm1(r / 2^8))^(2^8)
        let s = r.ldexp(-8);
        let mut e = s.expm1_small();
        for _ in 0..8 {
            // (1+e)^2 - 1 = e*(2+e)
            e = e * (e + Dd::from(2.0));
        }
        (e + Dd::from(1.0)).ldexp(k as i32)
    }

    fn ln_dd(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::from(if self.hi == 0.0 { f64::NEG_INFINITY } else { f64::NAN });
        }
        let mut y = Dd::from(self.hi.ln());
        // Newton: y <- y + x*exp(-y) - 1
        for _ in 0..2 {
            y = y + self * (-y).exp_dd() - Dd::from(1.0);
        }
        y
    }

    /// sin and cos of |x| <= pi/4 by Taylor summation.
    fn sin_cos_small(self) -> (Dd, Dd) {
        let x2 = self * self;
        let mut s = self;
        let mut term = self;
        let mut k = 3;
        while k < MAX_SERIES_TERMS {
            term = -(term * x2) / Dd::from(((k - 1) * k) as f64);
            let t = term;
            s = s + t;
            if t.hi.abs() <= Dd::EPS * 1e-2 * s.hi.abs().max(1e-300) {
                break;
            }
            k += 2;
        }
        // cos via sqrt(1 - s^2) loses accuracy near 0; sum the series directly
        let mut c = Dd::from(1.0);
        let mut term = Dd::from(1.0);
        let mut k = 2;
        while k < MAX_SERIES_TERMS {
            term = -(term * x2) / Dd::from(((k - 1) * k) as f64);
            let t = term;
            c = c + t;
            if t.hi.abs() <= Dd::EPS * 1e-2 {
                break;
            }
            k += 2;
        }
        (s, c)
    }

    fn reduce_quadrant(self) -> (Dd, i64) {
        let q = (self / Dd::FRAC_PI_2).round_nearest();
        let r = self - Dd::FRAC_PI_2.mul_f64(q);
        (r, q as i64)
    }

    fn sin_dd(self) -> Dd {
        let (r, q) = self.reduce_quadrant();
        let (s, c) = r.sin_cos_small();
        match q.rem_euclid(4) {
            0 => s,
            1 => c,
            2 => -s,
            _ => -c,
        }
    }

    fn cos_dd(self) -> Dd {
        let (r, q) = self.reduce_quadrant();
        let (s, c) = r.sin_cos_small();
        match q.rem_euclid(4) {
            0 => c,
            1 => -s,
            2 => -c,
            _ => s,
        }
    }

    fn sqrt_dd(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::from(if self.hi == 0.0 { 0.0 } else { f64::NAN });
        }
        let y = self.hi.sqrt();
        let (p, e) = two_prod(y, y);
        let r = (self - Dd::new(p, e)).hi;
        Dd::from(y) + Dd::from(r / (2.0 * y))
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}", self.hi)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        self.add_dd(o)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self.add_dd(-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        self.mul_dd(o)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        self.div_dd(o)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd::new(-self.hi, -self.lo)
    }
}

impl Scalar for Dd {
    fn from_f64(x: f64) -> Self {
        Dd::from(x)
    }
    fn value(&self) -> f64 {
        self.hi + self.lo
    }
    fn epsilon() -> f64 {
        Dd::EPS
    }
    fn pi() -> Self {
        Dd::PI
    }
    fn exp(&self) -> Self {
        self.exp_dd()
    }
    fn expm1(&self) -> Self {
        if self.hi.abs() <= 0.5 {
            self.expm1_small()
        } else {
            self.exp_dd() - Dd::from(1.0)
        }
    }
    fn ln(&self) -> Self {
        self.ln_dd()
    }
    fn ln1p(&self) -> Self {
        if self.hi.abs() > 0.5 {
            return (*self + Dd::from(1.0)).ln_dd();
        }
        // Newton on expm1(y) = x
        let mut y = Dd::from(self.hi.ln_1p());
        for _ in 0..2 {
            let e = y.expm1();
            y = y - (e - *self) / (e + Dd::from(1.0));
        }
        y
    }
    fn sqrt(&self) -> Self {
        self.sqrt_dd()
    }
    fn sin(&self) -> Self {
        self.sin_dd()
    }
    fn cos(&self) -> Self {
        self.cos_dd()
    }
    fn recip(&self) -> Self {
        Dd::from(1.0) / *self
    }
    fn powf(&self, p: f64) -> Self {
        if p == p.trunc() && p.abs() <= 64.0 {
            let v = Scalar::powi(self, p.abs() as u32);
            return if p < 0.0 { v.recip() } else { v };
        }
        (self.ln_dd().mul_f64(p)).exp_dd()
    }
    fn powi(&self, n: u32) -> Self {
        let mut base = *self;
        let mut acc = Dd::from(1.0);
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }
}
