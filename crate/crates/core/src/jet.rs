//! Forward-mode jets over the six phase-space coordinates (x₁,x₂,x₃,ξ₁,ξ₂,ξ₃).
//!
//! The Hamiltonians are written once against [`PhaseScalar`] and evaluated with plain
//! scalars, first-order jets (gradients) or second-order jets (gradients and Hessians).

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::Float;

use crate::real::Real;
use crate::taylor::Taylor3;

/// Arithmetic needed to evaluate a Hamiltonian at a phase point.
pub trait PhaseScalar<T: Real>:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Mul<T, Output = Self>
    + Add<T, Output = Self>
{
    fn cst(c: T) -> Self;
    fn val(&self) -> T;
    /// Applies a scalar function given its value and first two derivatives at `self.val()`.
    fn chain(self, f0: T, f1: T, f2: T) -> Self;
    /// Lifts a spatial field jet (value, gradient, Hessian in x).
    fn from_field(f: &Taylor3<T>) -> Self;
    /// Lifts the gradient component `i` of a spatial field jet (needs third derivatives).
    fn from_field_grad(f: &Taylor3<T>, i: usize) -> Self;
    /// Phase coordinate with index 0..6.
    fn coord(value: T, index: usize) -> Self;

    fn psqrt(self) -> Self {
        let v = self.val();
        let s = v.sqrt();
        let f1 = T::lit(0.5) / s;
        let f2 = -T::lit(0.25) / (s * v);
        self.chain(s, f1, f2)
    }
    fn precip(self) -> Self {
        let v = self.val();
        let r = T::one() / v;
        self.chain(r, -r * r, T::lit(2.0) * r * r * r)
    }
    fn psq(self) -> Self {
        self * self
    }
}

impl<T: Real> PhaseScalar<T> for T {
    fn cst(c: T) -> Self {
        c
    }
    fn val(&self) -> T {
        *self
    }
    fn chain(self, f0: T, _f1: T, _f2: T) -> Self {
        f0
    }
    fn from_field(f: &Taylor3<T>) -> Self {
        f.v
    }
    fn from_field_grad(f: &Taylor3<T>, i: usize) -> Self {
        f.g[i]
    }
    fn coord(value: T, _index: usize) -> Self {
        value
    }
    fn psqrt(self) -> Self {
        Float::sqrt(self)
    }
    fn precip(self) -> Self {
        T::one() / self
    }
}

/// Value and gradient over the six phase coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Jet1<T> {
    pub v: T,
    pub g: [T; 6],
}

/// Value, gradient and Hessian over the six phase coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Jet2<T> {
    pub v: T,
    pub g: [T; 6],
    pub h: [[T; 6]; 6],
}

impl<T: Real> Add for Jet1<T> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for i in 0..6 {
            self.g[i] += o.g[i];
        }
        self
    }
}
impl<T: Real> Sub for Jet1<T> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for i in 0..6 {
            self.g[i] -= o.g[i];
        }
        self
    }
}
impl<T: Real> Mul for Jet1<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut g = [T::zero(); 6];
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = self.v * o.g[i] + o.v * self.g[i];
        }
        Jet1 { v: self.v * o.v, g }
    }
}
impl<T: Real> Div for Jet1<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        self * o.precip()
    }
}
impl<T: Real> Neg for Jet1<T> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for gi in self.g.iter_mut() {
            *gi = -*gi;
        }
        self
    }
}
impl<T: Real> Mul<T> for Jet1<T> {
    type Output = Self;
    #[inline]
    fn mul(mut self, s: T) -> Self {
        self.v *= s;
        for gi in self.g.iter_mut() {
            *gi *= s;
        }
        self
    }
}
impl<T: Real> Add<T> for Jet1<T> {
    type Output = Self;
    #[inline]
    fn add(mut self, s: T) -> Self {
        self.v += s;
        self
    }
}

impl<T: Real> PhaseScalar<T> for Jet1<T> {
    fn cst(c: T) -> Self {
        Jet1 { v: c, g: [T::zero(); 6] }
    }
    fn val(&self) -> T {
        self.v
    }
    #[inline]
    fn chain(self, f0: T, f1: T, _f2: T) -> Self {
        let mut g = self.g;
        for gi in g.iter_mut() {
            *gi *= f1;
        }
        Jet1 { v: f0, g }
    }
    fn from_field(f: &Taylor3<T>) -> Self {
        let mut g = [T::zero(); 6];
        g[..3].copy_from_slice(&f.g);
        Jet1 { v: f.v, g }
    }
    fn from_field_grad(f: &Taylor3<T>, i: usize) -> Self {
        let mut g = [T::zero(); 6];
        g[..3].copy_from_slice(&f.h[i]);
        Jet1 { v: f.g[i], g }
    }
    fn coord(value: T, index: usize) -> Self {
        let mut g = [T::zero(); 6];
        g[index] = T::one();
        Jet1 { v: value, g }
    }
}

impl<T: Real> Add for Jet2<T> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for i in 0..6 {
            self.g[i] += o.g[i];
            for j in 0..6 {
                self.h[i][j] += o.h[i][j];
            }
        }
        self
    }
}
impl<T: Real> Sub for Jet2<T> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for i in 0..6 {
            self.g[i] -= o.g[i];
            for j in 0..6 {
                self.h[i][j] -= o.h[i][j];
            }
        }
        self
    }
}
impl<T: Real> Mul for Jet2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut r = Jet2 { v: self.v * o.v, g: [T::zero(); 6], h: [[T::zero(); 6]; 6] };
        for i in 0..6 {
            r.g[i] = self.v * o.g[i] + o.v * self.g[i];
        }
        for i in 0..6 {
            for j in i..6 {
                let hij = self.v * o.h[i][j]
                    + o.v * self.h[i][j]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
                r.h[i][j] = hij;
                r.h[j][i] = hij;
            }
        }
        r
    }
}
impl<T: Real> Div for Jet2<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        self * o.precip()
    }
}
impl<T: Real> Neg for Jet2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self * (-T::one())
    }
}
impl<T: Real> Mul<T> for Jet2<T> {
    type Output = Self;
    #[inline]
    fn mul(mut self, s: T) -> Self {
        self.v *= s;
        for i in 0..6 {
            self.g[i] *= s;
            for j in 0..6 {
                self.h[i][j] *= s;
            }
        }
        self
    }
}
impl<T: Real> Add<T> for Jet2<T> {
    type Output = Self;
    #[inline]
    fn add(mut self, s: T) -> Self {
        self.v += s;
        self
    }
}

impl<T: Real> PhaseScalar<T> for Jet2<T> {
    fn cst(c: T) -> Self {
        Jet2 { v: c, g: [T::zero(); 6], h: [[T::zero(); 6]; 6] }
    }
    fn val(&self) -> T {
        self.v
    }
    #[inline]
    fn chain(self, f0: T, f1: T, f2: T) -> Self {
        let mut r = Jet2 { v: f0, g: [T::zero(); 6], h: [[T::zero(); 6]; 6] };
        for i in 0..6 {
            r.g[i] = f1 * self.g[i];
        }
        for i in 0..6 {
            for j in i..6 {
                let hij = f1 * self.h[i][j] + f2 * self.g[i] * self.g[j];
                r.h[i][j] = hij;
                r.h[j][i] = hij;
            }
        }
        r
    }
    fn from_field(f: &Taylor3<T>) -> Self {
        let mut r = Self::cst(f.v);
        for i in 0..3 {
            r.g[i] = f.g[i];
            for j in 0..3 {
                r.h[i][j] = f.h[i][j];
            }
        }
        r
    }
    fn from_field_grad(f: &Taylor3<T>, k: usize) -> Self {
        let mut r = Self::cst(f.g[k]);
        for i in 0..3 {
            r.g[i] = f.h[k][i];
            for j in 0..3 {
                r.h[i][j] = f.t[k][i][j];
            }
        }
        r
    }
    fn coord(value: T, index: usize) -> Self {
        let mut r = Self::cst(value);
        r.g[index] = T::one();
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<S: PhaseScalar<f64>>(a: S, b: S) -> S {
        (a * b + a.psq()).psqrt() / (b + 2.0)
    }

    #[test]
    fn jet2_matches_finite_differences() {
        let (x0, y0) = (0.7, 1.3);
        let j = f(Jet2::coord(x0, 0), Jet2::coord(y0, 3));
        let e = 1e-5;
        let fx = |x: f64, y: f64| f(x, y);
        let dx = (fx(x0 + e, y0) - fx(x0 - e, y0)) / (2.0 * e);
        let dy = (fx(x0, y0 + e) - fx(x0, y0 - e)) / (2.0 * e);
        let dxy = (fx(x0 + e, y0 + e) - fx(x0 + e, y0 - e) - fx(x0 - e, y0 + e) + fx(x0 - e, y0 - e))
            / (4.0 * e * e);
        assert!((j.v - fx(x0, y0)).abs() < 1e-15);
        assert!((j.g[0] - dx).abs() < 1e-8);
        assert!((j.g[3] - dy).abs() < 1e-8);
        assert!((j.h[0][3] - dxy).abs() < 1e-5);
        let j1 = f(Jet1::coord(x0, 0), Jet1::coord(y0, 3));
        assert!((j1.g[0] - j.g[0]).abs() < 1e-15);
    }
}
