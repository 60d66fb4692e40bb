//! Third-order Taylor jets in the three spatial coordinates.
//!
//! Scalar fields (parameters and the layer function) are evaluated on these jets so that
//! value, gradient, Hessian and third derivatives come out of a single evaluation.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taylor3<T> {
    pub v: T,
    pub g: [T; 3],
    pub h: [[T; 3]; 3],
    pub t: [[[T; 3]; 3]; 3],
}

impl<T: Real> Taylor3<T> {
    pub fn cst(v: T) -> Self {
        Taylor3 { v, g: [T::zero(); 3], h: [[T::zero(); 3]; 3], t: [[[T::zero(); 3]; 3]; 3] }
    }

    /// Coordinate variable `i` evaluated at `value`.
    pub fn var(value: T, i: usize) -> Self {
        let mut r = Self::cst(value);
        r.g[i] = T::one();
        r
    }

    /// The three coordinate variables at point `x`.
    pub fn point(x: [T; 3]) -> [Self; 3] {
        [Self::var(x[0], 0), Self::var(x[1], 1), Self::var(x[2], 2)]
    }

    /// Applies a scalar function with value `f0` and derivatives `f1, f2, f3` at `self.v`.
    pub fn chain(&self, f0: T, f1: T, f2: T, f3: T) -> Self {
        let u = self;
        let mut r = Self::cst(f0);
        for i in 0..3 {
            r.g[i] = f1 * u.g[i];
        }
        for i in 0..3 {
            for j in 0..3 {
                r.h[i][j] = f1 * u.h[i][j] + f2 * u.g[i] * u.g[j];
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    r.t[i][j][k] = f1 * u.t[i][j][k]
                        + f2 * (u.h[i][j] * u.g[k] + u.h[i][k] * u.g[j] + u.h[j][k] * u.g[i])
                        + f3 * u.g[i] * u.g[j] * u.g[k];
                }
            }
        }
        r
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s, -c)
    }
    pub fn cos(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c, s)
    }
    pub fn exp(&self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e, e)
    }
    pub fn ln(&self) -> Self {
        let r = T::one() / self.v;
        self.chain(self.v.ln(), r, -r * r, T::lit(2.0) * r * r * r)
    }
    pub fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        let f1 = T::lit(0.5) / s;
        let f2 = -T::lit(0.5) * f1 / self.v;
        let f3 = -T::lit(1.5) * f2 / self.v;
        self.chain(s, f1, f2, f3)
    }
    pub fn tanh(&self) -> Self {
        let th = self.v.tanh();
        let s = T::one() - th * th;
        self.chain(th, s, -T::lit(2.0) * th * s, s * (T::lit(6.0) * th * th - T::lit(2.0)))
    }
    pub fn recip(&self) -> Self {
        let r = T::one() / self.v;
        self.chain(r, -r * r, T::lit(2.0) * r * r * r, -T::lit(6.0) * r * r * r * r)
    }
    /// Real power with constant exponent.
    pub fn powf(&self, p: T) -> Self {
        let x = self.v;
        let two = T::lit(2.0);
        self.chain(
            x.powf(p),
            p * x.powf(p - T::one()),
            p * (p - T::one()) * x.powf(p - two),
            p * (p - T::one()) * (p - two) * x.powf(p - two - T::one()),
        )
    }
    pub fn powi(&self, n: i32) -> Self {
        let mut acc = Self::cst(T::one());
        let base = if n < 0 { self.recip() } else { *self };
        for _ in 0..n.unsigned_abs() {
            acc = acc * base;
        }
        acc
    }
}

impl<T: Real> Add for Taylor3<T> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for i in 0..3 {
            self.g[i] += o.g[i];
            for j in 0..3 {
                self.h[i][j] += o.h[i][j];
                for k in 0..3 {
                    self.t[i][j][k] += o.t[i][j][k];
                }
            }
        }
        self
    }
}
impl<T: Real> Neg for Taylor3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self * (-T::one())
    }
}
impl<T: Real> Sub for Taylor3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}
impl<T: Real> Mul for Taylor3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (u, w) = (&self, &o);
        let mut r = Self::cst(u.v * w.v);
        for i in 0..3 {
            r.g[i] = u.v * w.g[i] + u.g[i] * w.v;
        }
        for i in 0..3 {
            for j in 0..3 {
                r.h[i][j] = u.v * w.h[i][j] + u.g[i] * w.g[j] + u.g[j] * w.g[i] + u.h[i][j] * w.v;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    r.t[i][j][k] = u.v * w.t[i][j][k]
                        + u.g[i] * w.h[j][k]
                        + u.g[j] * w.h[i][k]
                        + u.g[k] * w.h[i][j]
                        + u.h[j][k] * w.g[i]
                        + u.h[i][k] * w.g[j]
                        + u.h[i][j] * w.g[k]
                        + u.t[i][j][k] * w.v;
                }
            }
        }
        r
    }
}
impl<T: Real> Div for Taylor3<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}
impl<T: Real> Mul<T> for Taylor3<T> {
    type Output = Self;
    fn mul(mut self, s: T) -> Self {
        self.v *= s;
        for i in 0..3 {
            self.g[i] *= s;
            for j in 0..3 {
                self.h[i][j] *= s;
                for k in 0..3 {
                    self.t[i][j][k] *= s;
                }
            }
        }
        self
    }
}
impl<T: Real> Div<T> for Taylor3<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        self * (T::one() / s)
    }
}
impl<T: Real> Add<T> for Taylor3<T> {
    type Output = Self;
    fn add(mut self, s: T) -> Self {
        self.v += s;
        self
    }
}
impl<T: Real> Sub<T> for Taylor3<T> {
    type Output = Self;
    fn sub(mut self, s: T) -> Self {
        self.v -= s;
        self
    }
}

macro_rules! impl_left_scalar {
    ($t:ty) => {
        impl Mul<Taylor3<$t>> for $t {
            type Output = Taylor3<$t>;
            fn mul(self, o: Taylor3<$t>) -> Taylor3<$t> {
                o * self
            }
        }
        impl Add<Taylor3<$t>> for $t {
            type Output = Taylor3<$t>;
            fn add(self, o: Taylor3<$t>) -> Taylor3<$t> {
                o + self
            }
        }
        impl Sub<Taylor3<$t>> for $t {
            type Output = Taylor3<$t>;
            fn sub(self, o: Taylor3<$t>) -> Taylor3<$t> {
                -o + self
            }
        }
        impl Div<Taylor3<$t>> for $t {
            type Output = Taylor3<$t>;
            fn div(self, o: Taylor3<$t>) -> Taylor3<$t> {
                o.recip() * self
            }
        }
    };
}
impl_left_scalar!(f32);
impl_left_scalar!(f64);

#[cfg(test)]
mod tests {
    use super::*;

    fn field(p: [Taylor3<f64>; 3]) -> Taylor3<f64> {
        let [x, y, z] = p;
        (x * y).sin() + (z * 0.5).exp() / (1.0 + x * x) + (y * y + 1.0).sqrt()
    }

    fn plain(x: f64, y: f64, z: f64) -> f64 {
        (x * y).sin() + (z * 0.5).exp() / (1.0 + x * x) + (y * y + 1.0).sqrt()
    }

    #[test]
    fn third_derivative_matches_nested_differences() {
        let p = [0.3, -0.7, 0.4];
        let j = field(Taylor3::point(p));
        let e = 1e-3;
        // d³/dx dy dz by a central 8-point stencil
        let mut acc = 0.0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    acc += sx * sy * sz * plain(p[0] + sx * e, p[1] + sy * e, p[2] + sz * e);
                }
            }
        }
        let fd = acc / (8.0 * e * e * e);
        assert!((j.t[0][1][2] - fd).abs() < 1e-5, "{} vs {}", j.t[0][1][2], fd);
        let fdx = (plain(p[0] + 1e-6, p[1], p[2]) - plain(p[0] - 1e-6, p[1], p[2])) / 2e-6;
        assert!((j.g[0] - fdx).abs() < 1e-8);
        // symmetric third derivative
        assert!((j.t[0][1][2] - j.t[2][0][1]).abs() < 1e-12);
    }

    #[test]
    fn pure_third_derivative_of_power() {
        let x = Taylor3::var(1.7_f64, 0);
        let j = x.powf(3.5);
        let exact = 3.5 * 2.5 * 1.5 * 1.7_f64.powf(0.5);
        assert!((j.t[0][0][0] - exact).abs() < 1e-12);
        let k = x.powi(-2);
        assert!((k.t[0][0][0] - (-24.0 / 1.7_f64.powi(5))).abs() < 1e-12);
    }
}
