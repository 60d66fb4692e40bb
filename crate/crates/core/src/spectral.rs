//! Periodic grids and n-dimensional FFTs.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::real::Real;

/// Row-major periodic grid on ∏[0, len_a) with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicGrid {
    pub n: Vec<usize>,
    pub len: Vec<f64>,
}

impl PeriodicGrid {
    pub fn new(n: Vec<usize>, len: Vec<f64>) -> Self {
        assert_eq!(n.len(), len.len());
        PeriodicGrid { n, len }
    }

    pub fn cube(dim: usize, n: usize, len: f64) -> Self {
        Self::new(vec![n; dim], vec![len; dim])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn total(&self) -> usize {
        self.n.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.len[axis] / self.n[axis] as f64
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for a in (0..self.dim().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.n[a + 1];
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.n[a];
            flat /= self.n[a];
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().enumerate().map(|(a, i)| *i as f64 * self.spacing(a)).collect()
    }

    /// Angular frequency of FFT bin `i` along `axis` (Nyquist bin mapped to the negative side).
    pub fn freq(&self, axis: usize, i: usize) -> f64 {
        let n = self.n[axis];
        let s = if i < n.div_ceil(2) { i as f64 } else { i as f64 - n as f64 };
        2.0 * std::f64::consts::PI * s / self.len[axis]
    }

    pub fn wavevector(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().enumerate().map(|(a, i)| self.freq(a, *i)).collect()
    }
}

fn fft_axis<T: Real>(planner: &mut FftPlanner<T>, data: &mut [Complex<T>], dims: &[usize], axis: usize, inverse: bool) {
    let n = dims[axis];
    if n == 1 {
        return;
    }
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = data[base + k * stride];
            }
            fft.process(&mut buf);
            for (k, b) in buf.iter().enumerate() {
                data[base + k * stride] = *b;
            }
        }
    }
}

/// Unnormalized forward transform over all axes.
pub fn fft_nd<T: Real>(data: &mut [Complex<T>], dims: &[usize]) {
    let mut planner = FftPlanner::new();
    for a in 0..dims.len() {
        fft_axis(&mut planner, data, dims, a, false);
    }
}

/// Inverse transform over all axes, normalized so that `ifft_nd(fft_nd(u)) = u`.
pub fn ifft_nd<T: Real>(data: &mut [Complex<T>], dims: &[usize]) {
    let mut planner = FftPlanner::new();
    for a in 0..dims.len() {
        fft_axis(&mut planner, data, dims, a, true);
    }
    let s = T::one() / T::from_usize_lossy(data.len());
    for v in data.iter_mut() {
        *v = *v * s;
    }
}

/// Applies a Fourier multiplier m(k) on a periodic grid.
pub fn apply_multiplier<T: Real>(grid: &PeriodicGrid, u: &[Complex<T>], m: impl Fn(&[f64]) -> Complex<T>) -> Vec<Complex<T>> {
    let mut v = u.to_vec();
    fft_nd(&mut v, &grid.n);
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = *vi * m(&grid.wavevector(i));
    }
    ifft_nd(&mut v, &grid.n);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_derivative() {
        let g = PeriodicGrid::new(vec![8, 6, 4], vec![2.0 * std::f64::consts::PI; 3]);
        let u: Vec<Complex<f64>> = (0..g.total())
            .map(|i| {
                let x = g.point(i);
                Complex::new((2.0 * x[0]).sin() * x[1].cos() + x[2].cos(), 0.0)
            })
            .collect();
        let mut v = u.clone();
        fft_nd(&mut v, &g.n);
        ifft_nd(&mut v, &g.n);
        assert!(u.iter().zip(&v).all(|(a, b)| (a - b).norm() < 1e-13));
        let du = apply_multiplier(&g, &u, |k| Complex::new(0.0, k[0]));
        for (i, d) in du.iter().enumerate() {
            let x = g.point(i);
            assert!((d.re - 2.0 * (2.0 * x[0]).cos() * x[1].cos()).abs() < 1e-12);
        }
        assert_eq!(g.freq(0, 4), -4.0);
        assert_eq!(g.freq(1, 2), 2.0);
    }
}
