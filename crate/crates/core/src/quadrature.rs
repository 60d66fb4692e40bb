//! Gauss–Legendre rules, great-circle and sphere quadratures.

use crate::linalg::Vec3;
use crate::real::Real;

/// Gauss–Legendre nodes and weights on [-1, 1], computed in f64 by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let m = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    (x.iter().map(|t| m + r * t).collect(), w.iter().map(|v| v * r).collect())
}

/// Composite Gauss–Legendre over consecutive breakpoints.
pub fn composite_gauss(breaks: &[f64], per_panel: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for p in breaks.windows(2) {
        let (x, w) = gauss_legendre_on(per_panel, p[0], p[1]);
        xs.extend(x);
        ws.extend(w);
    }
    (xs, ws)
}

#[derive(Clone, Debug)]
pub struct SphereNode<T> {
    pub omega: Vec3<T>,
    pub weight: T,
}

/// Quadrature on the unit sphere as a product rule in (s = axis·ω, φ).
#[derive(Clone, Debug)]
pub struct SphereQuadrature<T> {
    pub nodes: Vec<SphereNode<T>>,
}

impl<T: Real> SphereQuadrature<T> {
    /// Product rule about `axis`: Gauss–Legendre in s on each of the given s-panels, trapezoid in φ.
    pub fn about_axis(axis: Vec3<T>, s_nodes: &[f64], s_weights: &[f64], n_phi: usize) -> Self {
        let a = axis.normalized();
        let (e1, e2) = a.orthonormal_complement();
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(s_nodes.len() * n_phi);
        for (s, ws) in s_nodes.iter().zip(s_weights) {
            let rho = (1.0 - s * s).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                let omega = a * T::lit(*s) + e1 * T::lit(rho * phi.cos()) + e2 * T::lit(rho * phi.sin());
                nodes.push(SphereNode { omega, weight: T::lit(ws * dphi) });
            }
        }
        SphereQuadrature { nodes }
    }

    /// Full sphere: `n_s` Gauss nodes in s ∈ [-1, 1] times `n_phi` azimuths.
    pub fn full(axis: Vec3<T>, n_s: usize, n_phi: usize) -> Self {
        let (s, w) = gauss_legendre(n_s);
        Self::about_axis(axis, &s, &w, n_phi)
    }

    /// Band |axis·ω| ≤ smax, with `n_s` Gauss nodes across it.
    pub fn band(axis: Vec3<T>, smax: f64, n_s: usize, n_phi: usize) -> Self {
        let (s, w) = gauss_legendre_on(n_s, -smax, smax);
        Self::about_axis(axis, &s, &w, n_phi)
    }

    pub fn total_weight(&self) -> T {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

/// Trapezoid nodes on the great circle orthogonal to `normal`; weights sum to 2π.
pub fn great_circle<T: Real>(normal: Vec3<T>, n: usize) -> Vec<(Vec3<T>, T)> {
    let (e1, e2) = normal.normalized().orthonormal_complement();
    let w = T::lit(2.0 * std::f64::consts::PI / n as f64);
    (0..n)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            (e1 * T::lit(phi.cos()) + e2 * T::lit(phi.sin()), w)
        })
        .collect()
}

/// Composite Simpson weights for `n` (odd) equally spaced samples with spacing `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd sample count ≥ 3");
    let mut w = vec![0.0; n];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = if i == 0 || i == n - 1 {
            h / 3.0
        } else if i % 2 == 1 {
            4.0 * h / 3.0
        } else {
            2.0 * h / 3.0
        };
    }
    w
}

/// Adaptive Simpson on [a, b] to absolute tolerance `tol`; used as an independent oracle.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 2, 5, 8, 33] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((q - exact).abs() < 1e-13, "n={n}");
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn sphere_rule_area_and_second_moments() {
        let q = SphereQuadrature::<f64>::full(Vec3::new(0.3, -0.2, 0.9), 16, 32);
        assert!((q.total_weight() - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        let m: f64 = q.nodes.iter().map(|n| n.weight * n.omega[0] * n.omega[0]).sum();
        assert!((m - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn circle_and_simpson() {
        let c = great_circle(Vec3::new(0.0, 0.0, 1.0_f64), 64);
        let s: f64 = c.iter().map(|(w, wt)| wt * w[0] * w[0]).sum();
        assert!((s - std::f64::consts::PI).abs() < 1e-12);
        let w = simpson_weights(11, 0.1);
        let v: f64 = w.iter().enumerate().map(|(i, wi)| wi * (0.1 * i as f64).powi(3)).sum();
        assert!((v - 0.25).abs() < 1e-14);
        let a = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert!((a - (1f64.exp() - 1.0)).abs() < 1e-11);
    }
}
