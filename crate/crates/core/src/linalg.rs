//! Fixed-size vectors and matrices used by the phase-space code.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }
    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }
    pub fn unit(i: usize) -> Self {
        let mut v = Self::zero();
        v.0[i] = T::one();
        v
    }
    pub fn from_f64(a: [f64; 3]) -> Self {
        Vec3([T::lit(a[0]), T::lit(a[1]), T::lit(a[2])])
    }
    pub fn to_f64(self) -> [f64; 3] {
        [self.0[0].as_f64(), self.0[1].as_f64(), self.0[2].as_f64()]
    }
    pub fn dot(self, o: Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }
    pub fn cross(self, o: Self) -> Self {
        let a = self.0;
        let b = o.0;
        Vec3([
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ])
    }
    pub fn norm2(self) -> T {
        self.dot(self)
    }
    pub fn norm(self) -> T {
        self.norm2().sqrt()
    }
    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }
    pub fn max_abs(self) -> T {
        self.0[0].abs().max(self.0[1].abs()).max(self.0[2].abs())
    }
    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Vec3([f(self.0[0]), f(self.0[1]), f(self.0[2])])
    }
    pub fn outer(self, o: Self) -> Mat3<T> {
        let mut m = Mat3::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[i] * o.0[j];
            }
        }
        m
    }

    /// Two unit vectors completing `self` (assumed unit) to a right-handed orthonormal frame.
    pub fn orthonormal_complement(self) -> (Self, Self) {
        let a = if self.0[0].abs() < T::lit(0.6) {
            Vec3::unit(0)
        } else if self.0[1].abs() < T::lit(0.6) {
            Vec3::unit(1)
        } else {
            Vec3::unit(2)
        };
        let e1 = (a - self * self.dot(a)).normalized();
        let e2 = self.cross(e1);
        (e1, e2)
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}
impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}
impl<T: Real> SubAssign for Vec3<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}
impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}
impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}
impl<T> IndexMut<usize> for Vec3<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Mat3<T> {
    pub fn zero() -> Self {
        Mat3([[T::zero(); 3]; 3])
    }
    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i] = T::one();
        }
        m
    }
    pub fn scaled_identity(s: T) -> Self {
        Self::identity() * s
    }
    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][0] = c0.0[i];
            m.0[i][1] = c1.0[i];
            m.0[i][2] = c2.0[i];
        }
        m
    }
    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }
    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3(self.0[i])
    }
    pub fn transpose(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3([self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v)])
    }
    /// `vᵀ M`.
    pub fn vec_mul(&self, v: Vec3<T>) -> Vec3<T> {
        self.transpose().mul_vec(v)
    }
    pub fn matmul(&self, o: &Self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s += self.0[i][k] * o.0[k][j];
                }
                m.0[i][j] = s;
            }
        }
        m
    }
    pub fn det(&self) -> T {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        let scale = self.frobenius().powi(3);
        if d == T::zero() || !d.is_finite() || d.abs() <= T::epsilon() * scale {
            return None;
        }
        let a = &self.0;
        let mut m = Self::zero();
        m.0[0][0] = a[1][1] * a[2][2] - a[1][2] * a[2][1];
        m.0[0][1] = a[0][2] * a[2][1] - a[0][1] * a[2][2];
        m.0[0][2] = a[0][1] * a[1][2] - a[0][2] * a[1][1];
        m.0[1][0] = a[1][2] * a[2][0] - a[1][0] * a[2][2];
        m.0[1][1] = a[0][0] * a[2][2] - a[0][2] * a[2][0];
        m.0[1][2] = a[0][2] * a[1][0] - a[0][0] * a[1][2];
        m.0[2][0] = a[1][0] * a[2][1] - a[1][1] * a[2][0];
        m.0[2][1] = a[0][1] * a[2][0] - a[0][0] * a[2][1];
        m.0[2][2] = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        Some(m * (T::one() / d))
    }
    pub fn frobenius(&self) -> T {
        let mut s = T::zero();
        for r in &self.0 {
            for &v in r {
                s += v * v;
            }
        }
        s.sqrt()
    }
    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
    pub fn sym_eigenvalues(&self) -> [T; 3] {
        let (vals, _) = self.sym_eigen();
        vals
    }

    /// Eigen-decomposition of a symmetric matrix; eigenvectors are the columns of the result.
    pub fn sym_eigen(&self) -> ([T; 3], Mat3<T>) {
        let mut a = self.0;
        let mut v = Self::identity().0;
        for _sweep in 0..50 {
            let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
            let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
            if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
                break;
            }
            for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                if a[p][q] == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
                let t = crate::real::sgn(theta) / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap_or(std::cmp::Ordering::Equal));
        let vals = [a[idx[0]][idx[0]], a[idx[1]][idx[1]], a[idx[2]][idx[2]]];
        let mut vecs = Self::zero();
        for (c, &i) in idx.iter().enumerate() {
            for r in 0..3 {
                vecs.0[r][c] = v[r][i];
            }
        }
        (vals, vecs)
    }

    /// Singular values in ascending order.
    pub fn singular_values(&self) -> [T; 3] {
        let ata = self.transpose().matmul(self);
        let e = ata.sym_eigenvalues();
        [e[0].max(T::zero()).sqrt(), e[1].max(T::zero()).sqrt(), e[2].max(T::zero()).sqrt()]
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut m = self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] += o.0[i][j];
            }
        }
        m
    }
}
impl<T: Real> Sub for Mat3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut m = self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] -= o.0[i][j];
            }
        }
        m
    }
}
impl<T: Real> Mul<T> for Mat3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        let mut m = self;
        for r in m.0.iter_mut() {
            for v in r.iter_mut() {
                *v *= s;
            }
        }
        m
    }
}

/// Row-major 6x6 matrix on phase space, ordered (x, ξ).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat6<T>(pub [[T; 6]; 6]);

impl<T: Real> Mat6<T> {
    pub fn zero() -> Self {
        Mat6([[T::zero(); 6]; 6])
    }
    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..6 {
            m.0[i][i] = T::one();
        }
        m
    }
    /// Canonical symplectic form Ω = [[0, I], [−I, 0]].
    pub fn omega() -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i + 3] = T::one();
            m.0[i + 3][i] = -T::one();
        }
        m
    }
    pub fn from_slice(s: &[T]) -> Self {
        let mut m = Self::zero();
        for i in 0..6 {
            m.0[i].copy_from_slice(&s[6 * i..6 * i + 6]);
        }
        m
    }
    pub fn write_slice(&self, s: &mut [T]) {
        for i in 0..6 {
            s[6 * i..6 * i + 6].copy_from_slice(&self.0[i]);
        }
    }
    pub fn transpose(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..6 {
            for j in 0..6 {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }
    pub fn matmul(&self, o: &Self) -> Self {
        let mut m = Self::zero();
        for i in 0..6 {
            for k in 0..6 {
                let a = self.0[i][k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..6 {
                    m.0[i][j] += a * o.0[k][j];
                }
            }
        }
        m
    }
    pub fn mul_vec(&self, v: &[T; 6]) -> [T; 6] {
        let mut out = [T::zero(); 6];
        for i in 0..6 {
            let mut s = T::zero();
            for j in 0..6 {
                s += self.0[i][j] * v[j];
            }
            out[i] = s;
        }
        out
    }
    /// 3x3 block (bi, bj) with block indices in {0 = x, 1 = ξ}.
    pub fn block(&self, bi: usize, bj: usize) -> Mat3<T> {
        let mut m = Mat3::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[3 * bi + i][3 * bj + j];
            }
        }
        m
    }
    pub fn set_block(&mut self, bi: usize, bj: usize, b: &Mat3<T>) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[3 * bi + i][3 * bj + j] = b.0[i][j];
            }
        }
    }
    /// Inverse of a symplectic matrix: −Ω Mᵀ Ω.
    pub fn symplectic_inverse(&self) -> Self {
        let o = Self::omega();
        let mut r = o.matmul(&self.transpose()).matmul(&o);
        for row in r.0.iter_mut() {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
        r
    }
    /// General inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Self> {
        let mut a = self.0;
        let mut inv = Self::identity().0;
        for c in 0..6 {
            let mut p = c;
            for r in c + 1..6 {
                if a[r][c].abs() > a[p][c].abs() {
                    p = r;
                }
            }
            if a[p][c] == T::zero() {
                return None;
            }
            a.swap(c, p);
            inv.swap(c, p);
            let d = T::one() / a[c][c];
            for j in 0..6 {
                a[c][j] *= d;
                inv[c][j] *= d;
            }
            for r in 0..6 {
                if r != c {
                    let f = a[r][c];
                    if f != T::zero() {
                        for j in 0..6 {
                            a[r][j] -= f * a[c][j];
                            inv[r][j] -= f * inv[c][j];
                        }
                    }
                }
            }
        }
        Some(Mat6(inv))
    }
    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for r in &self.0 {
            for &v in r {
                m = m.max(v.abs());
            }
        }
        m
    }
    pub fn sub(&self, o: &Self) -> Self {
        let mut m = *self;
        for i in 0..6 {
            for j in 0..6 {
                m.0[i][j] -= o.0[i][j];
            }
        }
        m
    }
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c] == 0.0 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Least-squares fit of `y ≈ Σ c_k basis_k(x)` through the normal equations.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = rows.first()?.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (r, yi) in rows.iter().zip(y) {
        for i in 0..m {
            b[i] += r[i] * yi;
            for j in 0..m {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    solve_dense(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat3_inverse_roundtrip() {
        let m = Mat3([[2.0, 1.0, 0.5], [0.3, 3.0, -1.0], [0.0, 0.2, 1.5]]);
        let p = m.matmul(&m.inverse().unwrap());
        assert!((p - Mat3::identity()).frobenius() < 1e-14);
    }

    #[test]
    fn sym_eigen_reconstructs() {
        let m = Mat3([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]]);
        let (vals, vecs) = m.sym_eigen();
        for (c, &lam) in vals.iter().enumerate() {
            let v = vecs.col(c);
            assert!((m.mul_vec(v) - v * lam).norm() < 1e-12);
        }
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
    }

    #[test]
    fn mat6_inverse_and_symplectic_inverse_agree_on_symplectic_input() {
        let mut m = Mat6::<f64>::identity();
        let s = Mat3([[1.0, 0.2, 0.0], [0.2, 2.0, 0.1], [0.0, 0.1, 0.5]]);
        m.set_block(0, 1, &s);
        let a = m.inverse().unwrap();
        let b = m.symplectic_inverse();
        assert!(a.sub(&b).max_abs() < 1e-14);
    }
}
