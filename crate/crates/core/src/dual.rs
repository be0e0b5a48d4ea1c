//! Forward-mode automatic differentiation with multi-lane dual numbers.
//!
//! A [`Dual<K>`] carries a primal value together with `K` directional
//! derivatives, so one evaluation sweep of a generic kernel produces `K`
//! partial derivatives at once. Seeding unit directions over chunks of the
//! input vector yields full gradients and Jacobians; see [`gradient`].
//!
//! Comparison operators act on the primal part only, which gives branching
//! code (`max`, clamps, log-sum-exp shifts) the same control flow as the
//! plain floating-point evaluation.

use crate::scalar::Scalar;
use num_traits::{Float, FloatConst, Num, NumCast, One, ToPrimitive, Zero};
use std::num::FpCategory;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

/// Dual number with `K` derivative lanes.
#[derive(Clone, Copy, Debug)]
pub struct Dual<const K: usize> {
    /// Primal value.
    pub re: f64,
    /// Directional derivatives.
    pub du: [f64; K],
}

impl<const K: usize> Dual<K> {
    /// A constant: value `x`, all derivative lanes zero.
    #[inline]
    pub fn constant(x: f64) -> Self {
        Self { re: x, du: [0.0; K] }
    }

    /// A variable seeded with derivative 1 in `lane`.
    #[inline]
    pub fn variable(x: f64, lane: usize) -> Self {
        let mut du = [0.0; K];
        du[lane] = 1.0;
        Self { re: x, du }
    }

    #[inline]
    fn map(self, value: f64, scale: f64) -> Self {
        let mut du = self.du;
        for d in du.iter_mut() {
            *d *= scale;
        }
        Self { re: value, du }
    }

    #[inline]
    fn zip(self, other: Self, value: f64, ls: f64, rs: f64) -> Self {
        let mut du = [0.0; K];
        for ((d, a), b) in du.iter_mut().zip(self.du.iter()).zip(other.du.iter()) {
            *d = ls * a + rs * b;
        }
        Self { re: value, du }
    }
}

impl<const K: usize> PartialEq for Dual<K> {
    #[inline]
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl<const K: usize> PartialOrd for Dual<K> {
    #[inline]
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<const K: usize> Add for Dual<K> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.zip(rhs, self.re + rhs.re, 1.0, 1.0)
    }
}

impl<const K: usize> Sub for Dual<K> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.zip(rhs, self.re - rhs.re, 1.0, -1.0)
    }
}

impl<const K: usize> Mul for Dual<K> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.zip(rhs, self.re * rhs.re, rhs.re, self.re)
    }
}

impl<const K: usize> Div for Dual<K> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        self.zip(rhs, self.re * inv, inv, -self.re * inv * inv)
    }
}

impl<const K: usize> Rem for Dual<K> {
    type Output = Self;
    #[inline]
    fn rem(self, rhs: Self) -> Self {
        // a % b = a - trunc(a/b) * b; trunc has zero derivative a.e.
        let q = (self.re / rhs.re).trunc();
        self.zip(rhs, self.re % rhs.re, 1.0, -q)
    }
}

impl<const K: usize> Neg for Dual<K> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.map(-self.re, -1.0)
    }
}

impl<const K: usize> Zero for Dual<K> {
    #[inline]
    fn zero() -> Self {
        Self::constant(0.0)
    }
    #[inline]
    fn is_zero(&self) -> bool {
        self.re == 0.0
    }
}

impl<const K: usize> One for Dual<K> {
    #[inline]
    fn one() -> Self {
        Self::constant(1.0)
    }
}

impl<const K: usize> Num for Dual<K> {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;

    fn from_str_radix(str: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(str, radix).map(Self::constant)
    }
}

impl<const K: usize> ToPrimitive for Dual<K> {
    fn to_i64(&self) -> Option<i64> {
        self.re.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.re.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.re)
    }
}

impl<const K: usize> NumCast for Dual<K> {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Self::constant)
    }
}

impl<const K: usize> Float for Dual<K> {
    fn nan() -> Self {
        Self::constant(f64::NAN)
    }
    fn infinity() -> Self {
        Self::constant(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Self::constant(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Self::constant(-0.0)
    }
    fn min_value() -> Self {
        Self::constant(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Self::constant(f64::MIN_POSITIVE)
    }
    fn max_value() -> Self {
        Self::constant(f64::MAX)
    }
    fn epsilon() -> Self {
        Self::constant(f64::EPSILON)
    }

    fn is_nan(self) -> bool {
        self.re.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.re.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite()
    }
    fn is_normal(self) -> bool {
        self.re.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.re.classify()
    }

    fn floor(self) -> Self {
        self.map(self.re.floor(), 0.0)
    }
    fn ceil(self) -> Self {
        self.map(self.re.ceil(), 0.0)
    }
    fn round(self) -> Self {
        self.map(self.re.round(), 0.0)
    }
    fn trunc(self) -> Self {
        self.map(self.re.trunc(), 0.0)
    }
    fn fract(self) -> Self {
        self.map(self.re.fract(), 1.0)
    }

    fn abs(self) -> Self {
        if self.re < 0.0 {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Self::constant(self.re.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.re.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.re.is_sign_negative()
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        let inv = 1.0 / self.re;
        self.map(inv, -inv * inv)
    }

    fn powi(self, n: i32) -> Self {
        let scale = n as f64 * self.re.powi(n - 1);
        self.map(self.re.powi(n), scale)
    }

    fn powf(self, n: Self) -> Self {
        let value = self.re.powf(n.re);
        // d(a^b) = a^b * (b' ln a + b a'/a)
        let mut du = [0.0; K];
        let ln_a = self.re.ln();
        let ratio = n.re / self.re;
        for ((d, a), b) in du.iter_mut().zip(self.du.iter()).zip(n.du.iter()) {
            *d = value * (b * ln_a + ratio * a);
        }
        Self { re: value, du }
    }

    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.map(s, 0.5 / s)
    }
    fn cbrt(self) -> Self {
        let c = self.re.cbrt();
        self.map(c, 1.0 / (3.0 * c * c))
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        self.map(e, e)
    }
    fn exp2(self) -> Self {
        let e = self.re.exp2();
        self.map(e, e * std::f64::consts::LN_2)
    }
    fn exp_m1(self) -> Self {
        self.map(self.re.exp_m1(), self.re.exp())
    }

    fn ln(self) -> Self {
        self.map(self.re.ln(), 1.0 / self.re)
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.map(self.re.log2(), 1.0 / (self.re * std::f64::consts::LN_2))
    }
    fn log10(self) -> Self {
        self.map(self.re.log10(), 1.0 / (self.re * std::f64::consts::LN_10))
    }
    fn ln_1p(self) -> Self {
        self.map(self.re.ln_1p(), 1.0 / (1.0 + self.re))
    }

    fn max(self, other: Self) -> Self {
        if self.re >= other.re || other.re.is_nan() {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self.re <= other.re || other.re.is_nan() {
            self
        } else {
            other
        }
    }
    fn abs_sub(self, other: Self) -> Self {
        if self.re > other.re {
            self - other
        } else {
            Self::zero()
        }
    }

    fn hypot(self, other: Self) -> Self {
        let h = self.re.hypot(other.re);
        self.zip(other, h, self.re / h, other.re / h)
    }

    fn sin(self) -> Self {
        self.map(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.map(self.re.cos(), -self.re.sin())
    }
    fn tan(self) -> Self {
        let c = self.re.cos();
        self.map(self.re.tan(), 1.0 / (c * c))
    }
    fn asin(self) -> Self {
        self.map(self.re.asin(), 1.0 / (1.0 - self.re * self.re).sqrt())
    }
    fn acos(self) -> Self {
        self.map(self.re.acos(), -1.0 / (1.0 - self.re * self.re).sqrt())
    }
    fn atan(self) -> Self {
        self.map(self.re.atan(), 1.0 / (1.0 + self.re * self.re))
    }
    fn atan2(self, other: Self) -> Self {
        let denom = self.re * self.re + other.re * other.re;
        self.zip(other, self.re.atan2(other.re), other.re / denom, -self.re / denom)
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }

    fn sinh(self) -> Self {
        self.map(self.re.sinh(), self.re.cosh())
    }
    fn cosh(self) -> Self {
        self.map(self.re.cosh(), self.re.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.map(t, 1.0 - t * t)
    }
    fn asinh(self) -> Self {
        self.map(self.re.asinh(), 1.0 / (self.re * self.re + 1.0).sqrt())
    }
    fn acosh(self) -> Self {
        self.map(self.re.acosh(), 1.0 / (self.re * self.re - 1.0).sqrt())
    }
    fn atanh(self) -> Self {
        self.map(self.re.atanh(), 1.0 / (1.0 - self.re * self.re))
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        self.re.integer_decode()
    }
}

impl<const K: usize> FloatConst for Dual<K> {
    fn E() -> Self {
        Self::constant(std::f64::consts::E)
    }
    fn FRAC_1_PI() -> Self {
        Self::constant(std::f64::consts::FRAC_1_PI)
    }
    fn FRAC_1_SQRT_2() -> Self {
        Self::constant(std::f64::consts::FRAC_1_SQRT_2)
    }
    fn FRAC_2_PI() -> Self {
        Self::constant(std::f64::consts::FRAC_2_PI)
    }
    fn FRAC_2_SQRT_PI() -> Self {
        Self::constant(std::f64::consts::FRAC_2_SQRT_PI)
    }
    fn FRAC_PI_2() -> Self {
        Self::constant(std::f64::consts::FRAC_PI_2)
    }
    fn FRAC_PI_3() -> Self {
        Self::constant(std::f64::consts::FRAC_PI_3)
    }
    fn FRAC_PI_4() -> Self {
        Self::constant(std::f64::consts::FRAC_PI_4)
    }
    fn FRAC_PI_6() -> Self {
        Self::constant(std::f64::consts::FRAC_PI_6)
    }
    fn FRAC_PI_8() -> Self {
        Self::constant(std::f64::consts::FRAC_PI_8)
    }
    fn LN_10() -> Self {
        Self::constant(std::f64::consts::LN_10)
    }
    fn LN_2() -> Self {
        Self::constant(std::f64::consts::LN_2)
    }
    fn LOG10_E() -> Self {
        Self::constant(std::f64::consts::LOG10_E)
    }
    fn LOG2_E() -> Self {
        Self::constant(std::f64::consts::LOG2_E)
    }
    fn PI() -> Self {
        Self::constant(std::f64::consts::PI)
    }
    fn SQRT_2() -> Self {
        Self::constant(std::f64::consts::SQRT_2)
    }
}

impl<const K: usize> Scalar for Dual<K> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }

    #[inline]
    fn value(self) -> f64 {
        self.re
    }
}

/// Gradient of `f` at `x` by seeded forward sweeps, `K` lanes per sweep.
pub fn gradient<const K: usize, F>(f: F, x: &[f64]) -> Vec<f64>
where
    F: Fn(&[Dual<K>]) -> Dual<K>,
{
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut args: Vec<Dual<K>> = x.iter().map(|&v| Dual::constant(v)).collect();
    let mut start = 0;
    while start < n {
        let width = K.min(n - start);
        for lane in 0..width {
            args[start + lane] = Dual::variable(x[start + lane], lane);
        }
        let out = f(&args);
        grad[start..start + width].copy_from_slice(&out.du[..width]);
        for lane in 0..width {
            args[start + lane] = Dual::constant(x[start + lane]);
        }
        start += width;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    type D = Dual<2>;

    fn d(x: f64) -> D {
        Dual::variable(x, 0)
    }

    fn check<F, G>(f: F, df: G, x: f64, tol: f64)
    where
        F: Fn(D) -> D,
        G: Fn(f64) -> f64,
    {
        let out = f(d(x));
        let expected = df(x);
        assert!(
            (out.du[0] - expected).abs() <= tol * expected.abs().max(1.0),
            "x = {x}, got {}, expected {expected}",
            out.du[0]
        );
    }

    #[test]
    fn arithmetic_rules() {
        let x = d(1.7);
        let y = Dual::<2>::variable(-0.4, 1);
        let z = x * y + x / y - y;
        // d/dx (xy + x/y - y) = y + 1/y
        assert!((z.du[0] - (-0.4 + 1.0 / -0.4)).abs() < 1e-14);
        // d/dy = x - x/y^2 - 1
        assert!((z.du[1] - (1.7 - 1.7 / 0.16 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn transcendental_rules() {
        check(|x| x.exp(), f64::exp, 0.7, 1e-12);
        check(|x| x.ln(), |x| 1.0 / x, 2.3, 1e-12);
        check(|x| x.sqrt(), |x| 0.5 / x.sqrt(), 4.2, 1e-12);
        check(|x| x.sin(), f64::cos, 1.1, 1e-12);
        check(|x| x.tanh(), |x| 1.0 - x.tanh().powi(2), 0.3, 1e-12);
        check(|x| x.ln_1p(), |x| 1.0 / (1.0 + x), 0.25, 1e-12);
        check(|x| x.powi(3), |x| 3.0 * x * x, -1.3, 1e-12);
        check(|x| x.recip(), |x| -1.0 / (x * x), 0.8, 1e-12);
    }

    #[test]
    fn comparisons_use_primal_only() {
        let a = Dual::<2> { re: 1.0, du: [5.0, 0.0] };
        let b = Dual::<2> { re: 1.0, du: [0.0, 7.0] };
        assert_eq!(a, b);
        assert!(a >= b);
        let c = Dual::<2>::constant(2.0);
        assert_eq!(Float::max(a, c).re, 2.0);
        assert_eq!(Float::min(a, c).re, 1.0);
    }

    #[test]
    fn max_keeps_branch_derivative() {
        let a = d(3.0);
        let b = Dual::<2>::variable(1.0, 1);
        let m = Float::max(a, b);
        assert_eq!(m.du, [1.0, 0.0]);
    }

    #[test]
    fn gradient_matches_analytic() {
        let f = |z: &[Dual<3>]| z[0] * z[1] + z[2].exp() * z[0] - z[1].sin();
        let x = [0.3, -1.2, 0.9];
        let g = gradient(f, &x);
        let e9 = 0.9f64.exp();
        assert!((g[0] - (-1.2 + e9)).abs() < 1e-13);
        assert!((g[1] - (0.3 - (-1.2f64).cos())).abs() < 1e-13);
        assert!((g[2] - 0.3 * e9).abs() < 1e-13);
    }

    #[test]
    fn gradient_chunks_cover_all_lanes() {
        // 7 variables with 3 lanes forces uneven chunking.
        let f = |z: &[Dual<3>]| {
            let mut acc = Dual::constant(0.0);
            for (i, v) in z.iter().enumerate() {
                acc = acc + *v * Dual::constant((i + 1) as f64);
            }
            acc
        };
        let x = [1.0; 7];
        let g = gradient(f, &x);
        for (i, gi) in g.iter().enumerate() {
            assert!((gi - (i + 1) as f64).abs() < 1e-15);
        }
    }
}
