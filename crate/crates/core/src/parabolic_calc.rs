//! Symbol classes S^{m,k} relative to Σ = span dx_n (last coordinate labels the leaves),
//! estimate fitting over dyadic frequency shells, inverse parabolic symbols, left quantization
//! on periodic grids and parametrix residual probes.
//!
//! This module works in `f64`: symbols are arbitrary closures and all checks are numerical.

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::spectral::{fft_nd, ifft_nd, PeriodicGrid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParabolicError {
    #[error("symbol is not parabolic: {0}")]
    NotParabolic(String),
    #[error("grid {dims:?} too large for full left quantization (limit: 2 axes or 24³ points)")]
    GridTooLarge { dims: Vec<usize> },
    #[error("dimension mismatch: symbol has {symbol}, grid has {grid}")]
    Dimension { symbol: usize, grid: usize },
    #[error("decay fit failed: {0}")]
    Fit(String),
}

pub type SymbolFn = Arc<dyn Fn(&[f64], &[f64]) -> C64 + Send + Sync>;
pub type CoefFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which base coordinates a symbol depends on; drives the quantization fast paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum XDependence {
    None,
    First,
    Full,
}

/// Chart in which the last coordinate labels the leaves, so Σ = {ζ' = 0}.
#[derive(Clone, Copy, Debug)]
pub struct FoliatedChart {
    pub dim: usize,
}

impl FoliatedChart {
    /// Homogeneous degree-0 defining functions ζ'/|ζ|.
    pub fn p(&self, zeta: &[f64]) -> Vec<f64> {
        let r = self.r(zeta);
        zeta[..self.dim - 1].iter().map(|z| z / r).collect()
    }

    pub fn r(&self, zeta: &[f64]) -> f64 {
        norm(zeta)
    }

    pub fn contains(&self, zeta: &[f64], tol: f64) -> bool {
        norm(&zeta[..self.dim - 1]) <= tol * self.r(zeta)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// d_Σ = (|ζ'|²/|ζ|² + 1/|ζ|)^{1/2} with ζ' all but the last component.
pub fn d_sigma(zeta: &[f64]) -> f64 {
    let r = norm(zeta);
    let t = norm(&zeta[..zeta.len() - 1]);
    ((t * t) / (r * r) + 1.0 / r).sqrt()
}

/// A symbol with its claimed orders (m, k).
#[derive(Clone)]
pub struct SmkSymbol {
    pub dim: usize,
    pub m: f64,
    pub k: f64,
    pub x_dep: XDependence,
    f: SymbolFn,
}

impl std::fmt::Debug for SmkSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SmkSymbol(dim={}, m={}, k={}, {:?})", self.dim, self.m, self.k, self.x_dep)
    }
}

const X_STEP: f64 = 1e-2;
const Z_STEP: f64 = 2e-2;

fn d4(f: impl Fn(f64) -> C64, h: f64) -> C64 {
    (f(-2.0 * h) - f(-h) * 8.0 + f(h) * 8.0 - f(2.0 * h)) / (12.0 * h)
}

impl SmkSymbol {
    pub fn new(dim: usize, m: f64, k: f64, x_dep: XDependence, f: impl Fn(&[f64], &[f64]) -> C64 + Send + Sync + 'static) -> Self {
        SmkSymbol { dim, m, k, x_dep, f: Arc::new(f) }
    }

    pub fn eval(&self, x: &[f64], zeta: &[f64]) -> C64 {
        (self.f)(x, zeta)
    }

    pub fn with_orders(&self, m: f64, k: f64) -> Self {
        SmkSymbol { m, k, ..self.clone() }
    }

    pub fn product(&self, o: &SmkSymbol) -> Self {
        let (a, b) = (self.f.clone(), o.f.clone());
        SmkSymbol::new(self.dim, self.m + o.m, self.k + o.k, self.x_dep.max(o.x_dep), move |x, z| a(x, z) * b(x, z))
    }

    /// ∂_{x_j} a: stays in S^{m,k}.
    pub fn tangent_derivative(&self, j: usize) -> Self {
        let a = self.f.clone();
        SmkSymbol::new(self.dim, self.m, self.k, self.x_dep, move |x, z| {
            d4(
                |t| {
                    let mut y = x.to_vec();
                    y[j] += t;
                    a(&y, z)
                },
                X_STEP,
            )
        })
    }

    /// |ζ|∂_{ζ_j} a: lands in S^{m,k−1}.
    pub fn transverse_derivative(&self, j: usize) -> Self {
        let a = self.f.clone();
        SmkSymbol::new(self.dim, self.m, self.k - 1.0, self.x_dep, move |x, z| {
            let h = Z_STEP * norm(z) * d_sigma(z);
            d4(
                |t| {
                    let mut w = z.to_vec();
                    w[j] += t;
                    a(x, &w)
                },
                h,
            ) * norm(z)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VField {
    Dx(usize),
    W(usize),
}

fn apply_fields(a: &SmkSymbol, ops: &[VField], x: &[f64], z: &[f64], hz: f64) -> C64 {
    match ops.split_first() {
        None => a.eval(x, z),
        Some((VField::Dx(j), rest)) => d4(
            |t| {
                let mut y = x.to_vec();
                y[*j] += t;
                apply_fields(a, rest, &y, z, hz)
            },
            X_STEP,
        ),
        Some((VField::W(j), rest)) => {
            d4(
                |t| {
                    let mut w = z.to_vec();
                    w[*j] += t;
                    apply_fields(a, rest, x, &w, hz)
                },
                hz,
            ) * norm(z)
        }
    }
}

fn multisets(n: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().copied().unwrap_or(0);
            for i in start..n {
                let mut t: Vec<usize> = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[derive(Clone, Debug)]
pub struct MembershipConfig {
    pub dyads: Vec<f64>,
    pub max_order: usize,
    /// Constants over the top three dyads may not exceed the first of them by more than this factor.
    pub plateau_factor: f64,
    /// Largest tolerated log₂ growth of the constant per dyad over the top three dyads.
    pub max_growth: f64,
    pub x_samples: Vec<f64>,
}

impl Default for MembershipConfig {
    fn default() -> Self {
        MembershipConfig {
            dyads: (4..=10).map(|j| 2f64.powi(j)).collect(),
            max_order: 3,
            plateau_factor: 4.0,
            max_growth: 0.25,
            x_samples: vec![0.3, 1.7, 4.1],
        }
    }
}

#[derive(Clone, Debug)]
pub struct MembershipReport {
    pub m: f64,
    pub k: f64,
    pub dyads: Vec<f64>,
    /// max |W^αV^β a| / (r^m d_Σ^{k−|α|}) per dyad.
    pub constants: Vec<f64>,
    pub plateau_ratio: f64,
    pub growth_per_dyad: f64,
    pub passed: bool,
}

/// Frequency samples on the shell |ζ| = r: transverse offsets from Σ through the parabolic
/// scale r^{-1/2} up to fully transverse, both signs of ζ_n.
fn shell_samples(dim: usize, r: f64) -> Vec<Vec<f64>> {
    let q = r.powf(-0.5);
    let sins: Vec<f64> = [0.0, 0.25 * q, q, 4.0 * q, 0.1, 0.3, 0.6, 0.9, 1.0].into_iter().filter(|s| *s <= 1.0).collect();
    let mut dirs = vec![{
        let mut e = vec![0.0; dim];
        if dim > 1 {
            e[0] = 1.0;
        }
        e
    }];
    if dim > 2 {
        let mut e = vec![0.0; dim];
        e[0] = 0.6;
        e[1] = 0.8;
        dirs.push(e);
    }
    let mut out = Vec::new();
    for e in &dirs {
        for &s in &sins {
            let c = (1.0 - s * s).max(0.0).sqrt();
            for sign in [1.0, -1.0] {
                if c == 0.0 && sign < 0.0 {
                    continue;
                }
                let mut z: Vec<f64> = e.iter().map(|v| v * s * r).collect();
                z[dim - 1] = sign * c * r;
                out.push(z);
            }
        }
    }
    out
}

/// Fits the constants in |W^αV^β a| ≤ C r^m d_Σ^{k−|α|} over dyadic shells for all field
/// products up to `max_order`, and accepts when they plateau over the top three dyads.
pub fn smk_membership_test(a: &SmkSymbol, m: f64, k: f64, cfg: &MembershipConfig) -> MembershipReport {
    let d = a.dim;
    let mut fields: Vec<VField> = (0..d).map(VField::W).collect();
    match a.x_dep {
        XDependence::None => {}
        XDependence::First => fields.push(VField::Dx(0)),
        XDependence::Full => fields.extend((0..d).map(VField::Dx)),
    }
    let xs: Vec<Vec<f64>> = match a.x_dep {
        XDependence::None => vec![vec![0.0; d]],
        _ => cfg.x_samples.iter().map(|v| (0..d).map(|i| v + 0.37 * i as f64).collect()).collect(),
    };
    let seqs = multisets(fields.len(), cfg.max_order);
    let mut constants = Vec::new();
    for &r in &cfg.dyads {
        let mut c = 0.0f64;
        for z in shell_samples(d, r) {
            let ds = d_sigma(&z);
            let hz = Z_STEP * r * ds;
            for x in &xs {
                for s in &seqs {
                    let ops: Vec<VField> = s.iter().map(|i| fields[*i]).collect();
                    let alpha = ops.iter().filter(|o| matches!(o, VField::W(_))).count() as f64;
                    let v = apply_fields(a, &ops, x, &z, hz).norm();
                    c = c.max(v / (r.powf(m) * ds.powf(k - alpha)));
                }
            }
        }
        constants.push(c);
    }
    let top = &constants[constants.len().saturating_sub(3)..];
    let hi = top.iter().copied().fold(0.0f64, f64::max);
    // later shells may not exceed the first of the top three by more than the plateau factor
    let plateau_ratio = if hi == 0.0 { 1.0 } else { hi / top[0] };
    let growth = top.windows(2).map(|w| if w[1] == 0.0 { f64::NEG_INFINITY } else { (w[1] / w[0]).log2() }).fold(f64::NEG_INFINITY, f64::max);
    let growth_per_dyad = if hi == 0.0 { 0.0 } else { growth };
    MembershipReport {
        m,
        k,
        dyads: cfg.dyads.clone(),
        constants,
        plateau_ratio,
        growth_per_dyad,
        passed: plateau_ratio.is_finite() && plateau_ratio <= cfg.plateau_factor && growth_per_dyad < cfg.max_growth,
    }
}

/// Inclusion S^{m,k} ⊂ S^{m',k'}.
pub fn included(m: f64, k: f64, m2: f64, k2: f64) -> bool {
    m <= m2 && m - k / 2.0 <= m2 - k2 / 2.0
}

/// p = p_m + i p_{m−1} with p_m ≥ 0 vanishing quadratically on Σ.
#[derive(Clone)]
pub struct ParabolicSymbol {
    pub dim: usize,
    pub m: f64,
    pub x_dep: XDependence,
    pub pm: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    pub pm1: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
}

impl ParabolicSymbol {
    pub fn eval(&self, x: &[f64], z: &[f64]) -> C64 {
        C64::new((self.pm)(x, z), (self.pm1)(x, z))
    }

    pub fn as_smk(&self) -> SmkSymbol {
        let s = self.clone();
        SmkSymbol::new(self.dim, self.m, 2.0, self.x_dep, move |x, z| s.eval(x, z))
    }
}

#[derive(Clone, Debug)]
pub struct LowerBound {
    pub dyads: Vec<f64>,
    /// min |p| / (r^m d_Σ²) per dyad.
    pub constants: Vec<f64>,
    pub c: f64,
}

/// q = 1/p with the verified lower bound |p| ≥ c r^m d_Σ², declared in S^{−m,−2}.
/// When p_m vanishes at every sample, p = i p_{m−1} is treated as elliptic of order m − 1:
/// the bound checked is |p| ≥ c r^{m−1} and q is declared in S^{1−m,0}.
pub fn inverse_parabolic(p: &ParabolicSymbol, cfg: &MembershipConfig) -> Result<(SmkSymbol, LowerBound), ParabolicError> {
    let xs: Vec<Vec<f64>> = match p.x_dep {
        XDependence::None => vec![vec![0.0; p.dim]],
        _ => cfg.x_samples.iter().map(|v| vec![*v; p.dim]).collect(),
    };
    let mut pm_max = 0.0f64;
    for &r in &cfg.dyads {
        for z in shell_samples(p.dim, r) {
            for x in &xs {
                let pm = (p.pm)(x, &z);
                if pm < -1e-12 * r.powf(p.m) {
                    return Err(ParabolicError::NotParabolic(format!("p_m = {pm} < 0 at ζ = {z:?}")));
                }
                pm_max = pm_max.max(pm.abs());
            }
        }
    }
    let elliptic = pm_max == 0.0;
    let mut constants = Vec::new();
    for &r in &cfg.dyads {
        let mut c = f64::INFINITY;
        for z in shell_samples(p.dim, r) {
            let scale = if elliptic { r.powf(p.m - 1.0) } else { r.powf(p.m) * d_sigma(&z).powi(2) };
            for x in &xs {
                c = c.min(p.eval(x, &z).norm() / scale);
            }
        }
        constants.push(c);
    }
    let c = constants.iter().copied().fold(f64::INFINITY, f64::min);
    let n = constants.len();
    if c <= 0.0 || !c.is_finite() || (n >= 2 && constants[n - 1] < constants[n - 2] * 2f64.powf(-cfg.max_growth)) {
        return Err(ParabolicError::NotParabolic(format!("lower bound constants {constants:?} degenerate")));
    }
    let s = p.clone();
    let (m, k) = if elliptic { (1.0 - p.m, 0.0) } else { (-p.m, -2.0) };
    let q = SmkSymbol::new(p.dim, m, k, p.x_dep, move |x, z| s.eval(x, z).inv());
    Ok((q, LowerBound { dyads: cfg.dyads.clone(), constants, c }))
}

/// Left quantization (a(x,D)u)(x) = N⁻¹ Σ_k a(x,k) û(k) e^{ik·x} on a periodic grid.
pub fn quantize(a: &SmkSymbol, grid: &PeriodicGrid, u: &[C64]) -> Result<Vec<C64>, ParabolicError> {
    if a.dim != grid.dim() {
        return Err(ParabolicError::Dimension { symbol: a.dim, grid: grid.dim() });
    }
    let total = grid.total();
    let mut uh = u.to_vec();
    fft_nd(&mut uh, &grid.n);
    let zero = vec![0.0; grid.dim()];
    let ks: Vec<Vec<f64>> = (0..total).map(|i| grid.wavevector(i)).collect();
    match a.x_dep {
        XDependence::None => {
            for (v, k) in uh.iter_mut().zip(&ks) {
                *v *= a.eval(&zero, k);
            }
            ifft_nd(&mut uh, &grid.n);
            Ok(uh)
        }
        XDependence::First => {
            let n0 = grid.n[0];
            let rest: usize = total / n0;
            let rest_dims: Vec<usize> = if grid.dim() > 1 { grid.n[1..].to_vec() } else { vec![1] };
            let mut out = vec![C64::new(0.0, 0.0); total];
            let h0 = grid.spacing(0);
            for i in 0..n0 {
                let mut x = zero.clone();
                x[0] = i as f64 * h0;
                let mut s = vec![C64::new(0.0, 0.0); rest];
                for k0 in 0..n0 {
                    let ph = C64::from_polar(1.0, grid.freq(0, k0) * x[0]);
                    for (j, sj) in s.iter_mut().enumerate() {
                        let idx = k0 * rest + j;
                        *sj += a.eval(&x, &ks[idx]) * uh[idx] * ph;
                    }
                }
                ifft_nd(&mut s, &rest_dims);
                let scale = 1.0 / n0 as f64;
                for (j, sj) in s.iter().enumerate() {
                    out[i * rest + j] = sj * scale;
                }
            }
            Ok(out)
        }
        XDependence::Full => {
            if grid.dim() > 2 && total > 24 * 24 * 24 {
                return Err(ParabolicError::GridTooLarge { dims: grid.n.clone() });
            }
            let inv = 1.0 / total as f64;
            Ok((0..total)
                .map(|j| {
                    let x = grid.point(j);
                    let mut acc = C64::new(0.0, 0.0);
                    for (idx, k) in ks.iter().enumerate() {
                        let ph: f64 = k.iter().zip(&x).map(|(k, x)| k * x).sum();
                        acc += a.eval(&x, k) * uh[idx] * C64::from_polar(1.0, ph);
                    }
                    acc * inv
                })
                .collect())
        }
    }
}

/// Heat-type model problem on the periodic square [0, 2π)² in (x, t):
/// p = a(x)ξ² + i b(x)τ, i.e. N = b(x)∂_t − a(x)∂_x², with Σ = span dt.
#[derive(Clone)]
pub struct HeatProblem {
    pub n: usize,
    pub a: CoefFn,
    pub b: CoefFn,
    /// Frequencies with |ζ| below this are dropped from the parametrix.
    pub low_cut: f64,
}

impl HeatProblem {
    pub fn new(n: usize, a: impl Fn(f64) -> f64 + Send + Sync + 'static, b: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        HeatProblem { n, a: Arc::new(a), b: Arc::new(b), low_cut: 2.0 }
    }

    pub fn grid(&self) -> PeriodicGrid {
        PeriodicGrid::cube(2, self.n, 2.0 * std::f64::consts::PI)
    }

    pub fn symbol(&self) -> ParabolicSymbol {
        let (a, b) = (self.a.clone(), self.b.clone());
        ParabolicSymbol {
            dim: 2,
            m: 2.0,
            x_dep: XDependence::First,
            pm: Arc::new(move |x, z| a(x[0]) * z[0] * z[0]),
            pm1: Arc::new(move |x, z| b(x[0]) * z[1]),
        }
    }

    /// Exact application of the differential operator via spectral derivatives.
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let g = self.grid();
        let mut uh = u.to_vec();
        fft_nd(&mut uh, &g.n);
        let mut dxx = uh.clone();
        let mut dt = uh;
        for i in 0..g.total() {
            let k = g.wavevector(i);
            dxx[i] *= k[0] * k[0];
            dt[i] *= C64::new(0.0, k[1]);
        }
        ifft_nd(&mut dxx, &g.n);
        ifft_nd(&mut dt, &g.n);
        (0..g.total())
            .map(|i| {
                let x = g.point(i)[0];
                dxx[i] * (self.a)(x) + dt[i] * (self.b)(x)
            })
            .collect()
    }

    pub fn parametrix(&self) -> SmkSymbol {
        let p = self.symbol();
        let cut = self.low_cut;
        SmkSymbol::new(2, -2.0, -2.0, XDependence::First, move |x, z| if norm(z) < cut { C64::new(0.0, 0.0) } else { p.eval(x, z).inv() })
    }
}

#[derive(Clone, Debug)]
pub struct ResidualReport {
    pub zetas: Vec<f64>,
    pub sin_theta: f64,
    pub width: f64,
    /// ‖(QN − Id)u‖ / ‖u‖ per probe frequency.
    pub residuals: Vec<f64>,
    pub exponent: f64,
}

/// Applies Q∘N − Id to modulated Gaussians e^{iζ·y}φ(y − y₀) with |ζ| in `zetas` at a fixed
/// angle to Σ and fits the log-log decay of the relative residual.
pub fn parametrix_residual(problem: &HeatProblem, zetas: &[f64], sin_theta: f64, width: f64) -> Result<ResidualReport, ParabolicError> {
    let g = problem.grid();
    let q = problem.parametrix();
    let y0 = std::f64::consts::PI;
    let mut residuals = Vec::new();
    for &r in zetas {
        let zeta = [r * sin_theta, r * (1.0 - sin_theta * sin_theta).sqrt()];
        let u: Vec<C64> = (0..g.total())
            .map(|i| {
                let y = g.point(i);
                let d = [y[0] - y0, y[1] - y0];
                C64::from_polar((-(d[0] * d[0] + d[1] * d[1]) / (2.0 * width * width)).exp(), zeta[0] * d[0] + zeta[1] * d[1])
            })
            .collect();
        let nu = problem.apply(&u);
        let qn = quantize(&q, &g, &nu)?;
        let num: f64 = qn.iter().zip(&u).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = u.iter().map(|a| a.norm_sqr()).sum();
        residuals.push((num / den).sqrt());
    }
    let exponent = loglog_slope(zetas, &residuals).ok_or_else(|| ParabolicError::Fit(format!("residuals {residuals:?}")))?;
    Ok(ResidualReport { zetas: zetas.to_vec(), sin_theta, width, residuals, exponent })
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || ys.iter().any(|y| *y <= 0.0 || !y.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Chebyshev interpolant on [0, 1].
#[derive(Clone, Debug)]
pub struct Chebyshev {
    coef: Vec<f64>,
}

impl Chebyshev {
    pub fn fit(n: usize, mut f: impl FnMut(f64) -> f64) -> Self {
        let pi = std::f64::consts::PI;
        let vals: Vec<f64> = (0..n).map(|j| f(0.5 * (1.0 + (pi * (j as f64 + 0.5) / n as f64).cos()))).collect();
        let coef = (0..n)
            .map(|k| {
                let s: f64 = vals.iter().enumerate().map(|(j, v)| v * (pi * k as f64 * (j as f64 + 0.5) / n as f64).cos()).sum();
                s * 2.0 / n as f64 * if k == 0 { 0.5 } else { 1.0 }
            })
            .collect();
        Chebyshev { coef }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let y = 2.0 * t - 1.0;
        let (mut b1, mut b2) = (0.0, 0.0);
        for c in self.coef.iter().skip(1).rev() {
            let b0 = 2.0 * y * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        y * b1 - b2 + self.coef[0]
    }
}

/// Frozen-coefficient parabolic symbol |ζ|³σ(N^{E²}_−) at x in a chart with the layer normal
/// along the last axis: p₂ = |ζ|² a₋₁(ζ̂), p₁ = C ζ_n with a₋₂(x, sξ̄) = i sgn(s) C.
pub fn ne2_parabolic_symbol(
    pl: &crate::pseudolin::PseudoLin<f64>,
    x: crate::linalg::Vec3<f64>,
) -> Result<ParabolicSymbol, crate::symbols::SymbolError> {
    use crate::material_model::Param;
    let loc = pl.base.local(x);
    let axis = loc.axis();
    let (e1, _) = axis.orthonormal_complement();
    let mut err = None;
    // a₋₁ vanishes linearly in t = |ζ'|²/|ζ|²; interpolate a₋₁/t so that p₂ is exactly zero on Σ
    let cheb = Chebyshev::fit(32, |t| {
        let dir = axis * (1.0 - t).max(0.0).sqrt() + e1 * t.sqrt();
        match crate::symbols::principal_coefficient(pl, Param::E2, x, dir, 256) {
            Ok(v) => v / t,
            Err(e) => {
                err = Some(e);
                0.0
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let c = crate::symbols::subprincipal_prediction(pl, Param::E2, x, 1.0, 256)?.a_m2.im;
    Ok(ParabolicSymbol {
        dim: 3,
        m: 2.0,
        x_dep: XDependence::None,
        pm: Arc::new(move |_, z| {
            let r2: f64 = z.iter().map(|v| v * v).sum();
            let t2 = z[0] * z[0] + z[1] * z[1];
            t2 * cheb.eval(t2 / r2)
        }),
        pm1: Arc::new(move |_, z| c * z[2]),
    })
}
