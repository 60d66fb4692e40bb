//! Support width, quantitative Poincaré checks and linearized recovery experiments.
//!
//! Recovery uses the normal operators of a homogeneous TI background, which act as exact Fourier
//! multipliers σ^ν_±(ζ)·iζ on the gradient of the unknown. Fields live on a zero-padded periodic
//! box (padding factor 2) so that convolution wrap-around never reaches the support.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{GridField, GridSpec};
use crate::linalg::{Mat3, Vec3};
use crate::material_model::{MaterialModel, Mode, Param};
use crate::pseudolin::{Cutoff, PseudoError, PseudoLin, RayQuadrature, SphereRule};
use crate::spectral::{fft_nd, ifft_nd, PeriodicGrid};
use crate::symbols::{principal_coefficient, SymbolError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InversionError {
    #[error("spectral recovery needs a homogeneous background; `{0}` is not constant")]
    Heterogeneous(&'static str),
    #[error("unknown scenario `{0}`")]
    Scenario(String),
    #[error("conjugate gradient stagnated after {iterations} iterations (relative residual {residual:e})")]
    Stagnation { iterations: usize, residual: f64 },
    #[error("field has {got} samples, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
}

/// Support point cloud and its width: the smallest extent over all directions.
#[derive(Clone, Debug)]
pub struct SupportWidth {
    pub points: usize,
    pub width: f64,
    pub direction: [f64; 3],
}

fn extent(pts: &[Vec3<f64>], n: Vec3<f64>) -> f64 {
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
        let s = p.dot(n);
        (l.min(s), h.max(s))
    });
    hi - lo
}

/// Uniform random rotation (Shoemake's quaternion method).
pub fn random_rotation(rng: &mut impl Rng) -> Mat3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = 2.0 * std::f64::consts::PI;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    Mat3([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

/// Width of a point cloud: minimum over sampled rotations of the smallest bounding-box side,
/// followed by a pattern search on the sphere of directions around the best candidates.
pub fn width_of_points(pts: &[[f64; 3]], n_rot: usize, seed: u64) -> SupportWidth {
    width_of_cells(pts, 0.0, n_rot, seed)
}

/// As [`width_of_points`] with every point standing for a ball of diameter `cell`.
pub fn width_of_cells(pts: &[[f64; 3]], cell: f64, n_rot: usize, seed: u64) -> SupportWidth {
    if pts.is_empty() {
        return SupportWidth { points: 0, width: 0.0, direction: [0.0, 0.0, 1.0] };
    }
    let pts: Vec<Vec3<f64>> = pts.iter().map(|p| Vec3(*p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cands: Vec<(f64, Vec3<f64>)> = Vec::new();
    for r in 0..n_rot.max(1) {
        let rot = if r == 0 { Mat3::identity() } else { random_rotation(&mut rng) };
        for i in 0..3 {
            let n = rot.row(i);
            cands.push((extent(&pts, n), n));
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = cands[0];
    for &(mut w, mut n) in cands.iter().take(5) {
        let mut step = 0.1;
        while step > 1e-7 {
            let (e1, e2) = n.orthonormal_complement();
            let mut improved = false;
            for d in [e1, e2, -e1, -e2] {
                let m = (n + d * step).normalized();
                let wm = extent(&pts, m);
                if wm < w {
                    w = wm;
                    n = m;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if w < best.0 {
            best = (w, n);
        }
    }
    SupportWidth { points: pts.len(), width: best.0 + cell, direction: best.1 .0 }
}

pub fn support_points(u: &GridField<f64>, threshold: f64) -> Vec<[f64; 3]> {
    (0..u.spec.len()).filter(|&i| u.data[i].abs() > threshold).map(|i| u.spec.node(i)).collect()
}

/// Width of {|u| > threshold}, each node standing for a cell of the grid spacing.
pub fn width(u: &GridField<f64>, threshold: f64, n_rot: usize, seed: u64) -> SupportWidth {
    let h = u.spec.spacing.iter().fold(0.0f64, |a, b| a.max(*b));
    width_of_cells(&support_points(u, threshold), h, n_rot, seed)
}

/// Zero-padded periodic embedding of a node grid.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub spec: GridSpec,
    pub torus: PeriodicGrid,
}

impl Embedding {
    pub fn new(spec: GridSpec, pad: usize) -> Self {
        let n: Vec<usize> = spec.dims.iter().map(|d| d * pad).collect();
        let len: Vec<f64> = (0..3).map(|a| n[a] as f64 * spec.spacing[a]).collect();
        Embedding { spec, torus: PeriodicGrid::new(n, len) }
    }

    fn torus_index(&self, idx: usize) -> usize {
        let [i, j, k] = self.spec.ijk(idx);
        (i * self.torus.n[1] + j) * self.torus.n[2] + k
    }

    pub fn embed(&self, u: &[f64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.torus.total()];
        for (idx, v) in u.iter().enumerate() {
            out[self.torus_index(idx)] = C64::new(*v, 0.0);
        }
        out
    }

    pub fn restrict(&self, v: &[C64]) -> Vec<f64> {
        (0..self.spec.len()).map(|idx| v[self.torus_index(idx)].re).collect()
    }

    pub fn spectrum(&self, u: &[f64]) -> Vec<C64> {
        let mut v = self.embed(u);
        fft_nd(&mut v, &self.torus.n);
        v
    }

    /// Σ w(ζ)|û(ζ)|² normalized so that w ≡ 1 gives h³Σ|u|².
    pub fn weighted_norm2(&self, uh: &[C64], w: impl Fn(f64) -> f64) -> f64 {
        let n = self.torus.total() as f64;
        let cell = self.spec.cell_volume();
        uh.iter()
            .enumerate()
            .map(|(i, v)| {
                let k = self.torus.wavevector(i);
                w(k.iter().map(|x| x * x).sum()) * v.norm_sqr()
            })
            .sum::<f64>()
            * cell
            / n
    }
}

#[derive(Clone, Debug)]
pub struct PoincareReport {
    pub l2: f64,
    pub grad_l2: f64,
    pub h_half: f64,
    pub h1: f64,
    pub width: f64,
    /// ‖u‖ / (w/√2 ‖∇u‖).
    pub ratio_l2: f64,
    /// ‖u‖_{H^{1/2}} / ((w²/2 + w/√2)^{1/2} ‖∇u‖).
    pub ratio_h_half: f64,
    /// ‖u‖²_{H^{1/2}} ≤ ‖u‖_{L²}‖u‖_{H¹}.
    pub interpolation_holds: bool,
}

/// Discrete norms from the spectrum on a 2×-padded torus and the two Poincaré ratios.
pub fn poincare_check(u: &GridField<f64>, width_override: Option<f64>) -> PoincareReport {
    let emb = Embedding::new(u.spec.clone(), 2);
    let uh = emb.spectrum(&u.data);
    let l2 = emb.weighted_norm2(&uh, |_| 1.0).sqrt();
    let grad = emb.weighted_norm2(&uh, |k2| k2).sqrt();
    let h_half = emb.weighted_norm2(&uh, |k2| (1.0 + k2).sqrt()).sqrt();
    let h1 = emb.weighted_norm2(&uh, |k2| 1.0 + k2).sqrt();
    let maxu = u.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let w = width_override.unwrap_or_else(|| width(u, 1e-12 * maxu, 200, 7).width);
    let s2 = std::f64::consts::SQRT_2;
    PoincareReport {
        l2,
        grad_l2: grad,
        h_half,
        h1,
        width: w,
        ratio_l2: l2 / (w / s2 * grad),
        ratio_h_half: h_half / ((w * w / 2.0 + w / s2).sqrt() * grad),
        interpolation_holds: h_half * h_half <= l2 * h1 * (1.0 + 1e-12),
    }
}

/// a₋₁(ζ̂) of a homogeneous TI model tabulated in t = sin² of the angle between ζ and the axis.
#[derive(Clone, Debug)]
pub struct SymbolTable {
    axis: Vec3<f64>,
    vals: Vec<f64>,
}

impl SymbolTable {
    pub fn build(model: &MaterialModel<f64>, mode: Mode, nu: Param, cutoff: Cutoff, n: usize) -> Result<Self, SymbolError> {
        let x = Vec3::zero();
        let axis = model.local(x).axis();
        let (e1, _) = axis.orthonormal_complement();
        let pl = PseudoLin::new(model, model, mode).with_cutoff(cutoff);
        let vals = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                principal_coefficient(&pl, nu, x, axis * (1.0 - t).max(0.0).sqrt() + e1 * t.sqrt(), 256)
            })
            .collect::<Result<_, _>>()?;
        Ok(SymbolTable { axis, vals })
    }

    /// σ(ζ) = a₋₁(ζ̂)/|ζ| (zero at ζ = 0).
    pub fn eval(&self, zeta: [f64; 3]) -> f64 {
        let z = Vec3(zeta);
        let r2 = z.norm2();
        if r2 == 0.0 {
            return 0.0;
        }
        let c = z.dot(self.axis);
        let t = (1.0 - c * c / r2).clamp(0.0, 1.0);
        let s = t * (self.vals.len() - 1) as f64;
        let i = (s.floor() as usize).min(self.vals.len() - 2);
        let f = s - i as f64;
        (self.vals[i] * (1.0 - f) + self.vals[i + 1] * f) / r2.sqrt()
    }
}

fn check_homogeneous(m: &MaterialModel<f64>) -> Result<(), InversionError> {
    for (name, f) in [("a11", &m.a11), ("a33", &m.a33), ("a55", &m.a55), ("a66", &m.a66), ("E2", &m.e2)] {
        if !f.is_constant() {
            return Err(InversionError::Heterogeneous(name));
        }
    }
    let g = m.layer.gradient(Vec3::zero());
    for p in [Vec3::new(0.3, -0.2, 0.1), Vec3::new(-0.4, 0.4, -0.3)] {
        if (m.layer.gradient(p) - g).norm() > 1e-12 * g.norm() {
            return Err(InversionError::Heterogeneous("layer"));
        }
    }
    Ok(())
}

/// Which parameters are unknown and which travel-time data are used.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    One { nu: Param, mode: Mode },
    /// Two unknowns from combined qP and qSV data, the third parameter known.
    Two { unknowns: [Param; 2] },
    /// The relationship's target parameter is f(other two), linearized with constant f̃.
    Functional { target: Param, ftilde: [f64; 3] },
}

impl Scenario {
    /// `one:a11:qp`, `two:a33,e2`, `func:a33:0.5,0,0.2` (f̃ indexed a11, a33, E²).
    pub fn parse(s: &str) -> Result<Self, InversionError> {
        let bad = || InversionError::Scenario(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let pair = |t: &str| -> Result<[Param; 2], InversionError> {
            let v: Vec<Param> = t.split(',').map(|p| Param::parse(p.trim()).ok_or_else(bad)).collect::<Result<_, _>>()?;
            if v.len() != 2 || v[0] == v[1] {
                return Err(bad());
            }
            Ok([v[0], v[1]])
        };
        match parts.as_slice() {
            ["one", nu, mode] => Ok(Scenario::One { nu: Param::parse(nu).ok_or_else(bad)?, mode: Mode::parse(mode).ok_or_else(bad)? }),
            ["two", p] => Ok(Scenario::Two { unknowns: pair(p)? }),
            ["func", t, f] => {
                let v: Vec<f64> = f.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
                if v.len() != 3 {
                    return Err(bad());
                }
                Ok(Scenario::Functional { target: Param::parse(t).ok_or_else(bad)?, ftilde: [v[0], v[1], v[2]] })
            }
            _ => Err(bad()),
        }
    }

    pub fn unknowns(&self) -> Vec<Param> {
        match self {
            Scenario::One { nu, .. } => vec![*nu],
            Scenario::Two { unknowns } => unknowns.to_vec(),
            Scenario::Functional { target, .. } => Param::ALL.iter().copied().filter(|p| p != target).collect(),
        }
    }

    pub fn modes(&self) -> Vec<Mode> {
        match self {
            Scenario::One { mode, .. } => vec![*mode],
            _ => vec![Mode::QP, Mode::QSV],
        }
    }

    /// Coefficients c such that data column k is Σ_ν c[k][ν] N^ν.
    fn columns(&self) -> Vec<[f64; 3]> {
        let unit = |p: Param| {
            let mut c = [0.0; 3];
            c[crate::pseudolin::param_index(p)] = 1.0;
            c
        };
        match self {
            Scenario::Functional { target, ftilde } => {
                let t = crate::pseudolin::param_index(*target);
                self.unknowns()
                    .into_iter()
                    .map(|p| {
                        let mut c = unit(p);
                        c[t] = ftilde[crate::pseudolin::param_index(p)];
                        c
                    })
                    .collect()
            }
            _ => self.unknowns().into_iter().map(unit).collect(),
        }
    }

    /// The (a11, a33)-from-known-E² pair is not expected to be recoverable.
    pub fn expected_ill_posed(&self) -> bool {
        matches!(self, Scenario::Two { unknowns } if unknowns.contains(&Param::A11) && unknowns.contains(&Param::A33))
    }
}

#[derive(Clone, Debug)]
pub struct WeakDirection {
    pub ratio: f64,
    pub sigma_max: f64,
    pub direction: Vec<f64>,
    pub zeta: [f64; 3],
}

/// Multiplier representation of r ↦ (N^ν_mode[∇r])_mode for a homogeneous background.
#[derive(Clone, Debug)]
pub struct ForwardOperator {
    pub emb: Embedding,
    pub scenario: Scenario,
    pub modes: Vec<Mode>,
    /// σ[mode][column] at every torus wavevector.
    sym: Vec<Vec<Vec<f64>>>,
    k2: Vec<f64>,
    axis: Vec3<f64>,
}

impl ForwardOperator {
    pub fn new(model: &MaterialModel<f64>, scenario: Scenario, cutoff: Cutoff, spec: GridSpec) -> Result<Self, InversionError> {
        check_homogeneous(model)?;
        let emb = Embedding::new(spec, 2);
        let modes = scenario.modes();
        let cols = scenario.columns();
        let total = emb.torus.total();
        let wv: Vec<[f64; 3]> = (0..total)
            .map(|i| {
                let k = emb.torus.wavevector(i);
                [k[0], k[1], k[2]]
            })
            .collect();
        let k2 = wv.iter().map(|k| k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).collect();
        // Nyquist bins have no real odd counterpart; dropping them keeps A real and AᵀA exact
        let nyq: Vec<bool> = (0..total)
            .map(|i| emb.torus.multi_index(i).iter().zip(&emb.torus.n).any(|(j, n)| n % 2 == 0 && 2 * j == *n))
            .collect();
        let mut sym = Vec::new();
        for &mode in &modes {
            let tables: Vec<SymbolTable> = Param::ALL.iter().map(|nu| SymbolTable::build(model, mode, *nu, cutoff, 513)).collect::<Result<_, _>>()?;
            let per_col = cols
                .iter()
                .map(|c| {
                    wv.iter()
                        .zip(&nyq)
                        .map(|(k, ny)| if *ny { 0.0 } else { (0..3).filter(|i| c[*i] != 0.0).map(|i| c[i] * tables[i].eval(*k)).sum() })
                        .collect()
                })
                .collect();
            sym.push(per_col);
        }
        let axis = model.local(Vec3::zero()).axis();
        Ok(ForwardOperator { emb, scenario, modes, sym, k2, axis })
    }

    pub fn n_unknowns(&self) -> usize {
        self.sym[0].len()
    }

    fn spectra(&self, fields: &[Vec<f64>]) -> Vec<Vec<C64>> {
        fields.iter().map(|f| self.emb.spectrum(f)).collect()
    }

    /// Data per mode: the three components of Σ_k σ_k(ζ) iζ r̂_k on the whole torus.
    pub fn apply(&self, fields: &[Vec<f64>]) -> Vec<[Vec<f64>; 3]> {
        let rh = self.spectra(fields);
        let torus = &self.emb.torus;
        let total = torus.total();
        self.sym
            .iter()
            .map(|cols| {
                let mut s = vec![C64::new(0.0, 0.0); total];
                for (c, r) in cols.iter().zip(&rh) {
                    for i in 0..total {
                        s[i] += r[i] * c[i];
                    }
                }
                let comp = |j: usize| {
                    let mut v: Vec<C64> = (0..total).map(|i| s[i] * C64::new(0.0, torus.wavevector(i)[j])).collect();
                    ifft_nd(&mut v, &torus.n);
                    v.iter().map(|z| z.re).collect::<Vec<f64>>()
                };
                [comp(0), comp(1), comp(2)]
            })
            .collect()
    }

    /// Adjoint of `apply` restricted to the node grid.
    pub fn adjoint(&self, data: &[[Vec<f64>; 3]]) -> Vec<Vec<f64>> {
        let torus = &self.emb.torus;
        let total = torus.total();
        let mut acc = vec![vec![C64::new(0.0, 0.0); total]; self.n_unknowns()];
        for (cols, d) in self.sym.iter().zip(data) {
            let mut div = vec![C64::new(0.0, 0.0); total];
            for (j, dj) in d.iter().enumerate() {
                let mut v: Vec<C64> = dj.iter().map(|x| C64::new(*x, 0.0)).collect();
                fft_nd(&mut v, &torus.n);
                for i in 0..total {
                    div[i] += v[i] * C64::new(0.0, -torus.wavevector(i)[j]);
                }
            }
            for (a, c) in acc.iter_mut().zip(cols) {
                for i in 0..total {
                    a[i] += div[i] * c[i];
                }
            }
        }
        acc.into_iter()
            .map(|mut v| {
                ifft_nd(&mut v, &torus.n);
                self.emb.restrict(&v)
            })
            .collect()
    }

    /// AᵀA as a matrix-valued multiplier: M_kl(ζ) = |ζ|² Σ_mode σ_k σ_l.
    fn normal(&self, fields: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let rh = self.spectra(fields);
        let total = self.emb.torus.total();
        let n = self.n_unknowns();
        (0..n)
            .map(|k| {
                let mut v = vec![C64::new(0.0, 0.0); total];
                for i in 0..total {
                    let mut s = C64::new(0.0, 0.0);
                    for (l, r) in rh.iter().enumerate() {
                        let m: f64 = self.sym.iter().map(|cols| cols[k][i] * cols[l][i]).sum();
                        s += r[i] * m;
                    }
                    v[i] = s * self.k2[i];
                }
                ifft_nd(&mut v, &self.emb.torus.n);
                self.emb.restrict(&v)
            })
            .collect()
    }

    /// ‖A‖²: the largest eigenvalue of the multiplier M(ζ) over the torus.
    pub fn norm2(&self) -> f64 {
        let n = self.n_unknowns();
        let mut best = 0.0f64;
        for i in 0..self.emb.torus.total() {
            let m = |k: usize, l: usize| self.k2[i] * self.sym.iter().map(|c| c[k][i] * c[l][i]).sum::<f64>();
            let lam = if n == 1 {
                m(0, 0)
            } else {
                let (a, b, d) = (m(0, 0), m(0, 1), m(1, 1));
                0.5 * (a + d) + (0.25 * (a - d).powi(2) + b * b).sqrt()
            };
            best = best.max(lam);
        }
        best
    }

    /// Over torus frequencies at least `min_sin` (sine of the angle) away from Σ: the smallest
    /// ratio of singular values of the symbol matrix [σ_mode,k], its largest singular value and
    /// the unit unknown-space direction attaining it, and that frequency.
    pub fn weakest_direction(&self, min_sin: f64) -> WeakDirection {
        let n = self.n_unknowns();
        let torus = &self.emb.torus;
        let mut worst = WeakDirection { ratio: f64::INFINITY, sigma_max: 0.0, direction: vec![1.0; n], zeta: [0.0; 3] };
        if n == 1 {
            return worst;
        }
        for i in 1..torus.total() {
            let k = torus.wavevector(i);
            let kv = Vec3::new(k[0], k[1], k[2]);
            let c = kv.dot(self.axis) / kv.norm();
            if (1.0 - c * c).max(0.0).sqrt() < min_sin {
                continue;
            }
            let m = |k: usize, l: usize| self.sym.iter().map(|c| c[k][i] * c[l][i]).sum::<f64>();
            let (a, b, d) = (m(0, 0), m(0, 1), m(1, 1));
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
            let (lmin, lmax) = ((mid - rad).max(0.0), mid + rad);
            if lmax <= 0.0 {
                continue;
            }
            let ratio = (lmin / lmax).sqrt();
            if ratio < worst.ratio {
                let v = if b.abs() > 1e-300 { [b, lmin - a] } else if a <= d { [1.0, 0.0] } else { [0.0, 1.0] };
                let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
                worst = WeakDirection { ratio, sigma_max: lmax.sqrt(), direction: vec![v[0] / nv, v[1] / nv], zeta: [k[0], k[1], k[2]] };
            }
        }
        worst
    }
}

/// Settings for a recovery run.
#[derive(Clone, Debug)]
pub struct RecoveryProblem {
    pub op: ForwardOperator,
    /// Nodes where the unknowns may be nonzero.
    pub mask: Vec<bool>,
    /// Tikhonov weight on ‖∇r‖²; `None` uses 1e−6‖A‖²h², i.e. 1e−6‖A‖² on the grid-unit gradient.
    pub lambda_reg: Option<f64>,
    pub cg_tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug)]
pub struct Recovery {
    pub fields: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub lambda: f64,
    /// ‖A r̂ − f‖ / ‖f‖.
    pub data_misfit: f64,
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    // fixed summation order keeps repeated runs bit-identical
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).sum()
}

fn axpy(y: &mut [Vec<f64>], a: f64, x: &[Vec<f64>]) {
    for (yk, xk) in y.iter_mut().zip(x) {
        for (p, q) in yk.iter_mut().zip(xk) {
            *p += a * q;
        }
    }
}

impl RecoveryProblem {
    pub fn new(op: ForwardOperator, mask: Vec<bool>) -> Self {
        RecoveryProblem { op, mask, lambda_reg: None, cg_tol: 1e-10, max_iter: 2000 }
    }

    pub fn lambda(&self) -> f64 {
        let h = self.op.emb.spec.spacing.iter().fold(0.0f64, |a, b| a.max(*b));
        self.lambda_reg.unwrap_or_else(|| 1e-6 * self.op.norm2() * h * h)
    }

    fn mask_fields(&self, f: &mut [Vec<f64>]) {
        for v in f.iter_mut() {
            for (x, m) in v.iter_mut().zip(&self.mask) {
                if !m {
                    *x = 0.0;
                }
            }
        }
    }

    /// GᵀG r for forward differences on the node grid (zero outside the grid).
    fn grad_normal(&self, r: &[f64]) -> Vec<f64> {
        let spec = &self.op.emb.spec;
        let d = spec.dims;
        let mut out = vec![0.0; r.len()];
        for idx in 0..r.len() {
            let c = spec.ijk(idx);
            for a in 0..3 {
                let h2 = spec.spacing[a] * spec.spacing[a];
                let mut nb = |delta: isize| {
                    let j = c[a] as isize + delta;
                    let v = if j < 0 || j >= d[a] as isize {
                        0.0
                    } else {
                        let mut cc = c;
                        cc[a] = j as usize;
                        r[spec.index(cc[0], cc[1], cc[2])]
                    };
                    out[idx] += (r[idx] - v) / h2;
                };
                nb(-1);
                nb(1);
            }
        }
        out
    }

    fn hessian(&self, r: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
        let mut out = self.op.normal(r);
        for (o, rk) in out.iter_mut().zip(r) {
            for (p, q) in o.iter_mut().zip(self.grad_normal(rk)) {
                *p += lambda * q;
            }
        }
        self.mask_fields(&mut out);
        out
    }

    /// Conjugate gradient on (AᵀA + λGᵀG) r = Aᵀf over masked unknowns, started from `init`.
    pub fn recover(&self, data: &[[Vec<f64>; 3]], init: Option<Vec<Vec<f64>>>) -> Result<Recovery, InversionError> {
        let lambda = self.lambda();
        let n = self.op.n_unknowns();
        let len = self.op.emb.spec.len();
        let mut b = self.op.adjoint(data);
        self.mask_fields(&mut b);
        let mut x = init.unwrap_or_else(|| vec![vec![0.0; len]; n]);
        for f in &x {
            if f.len() != len {
                return Err(InversionError::Shape { got: f.len(), expected: len });
            }
        }
        self.mask_fields(&mut x);
        let hx = self.hessian(&x, lambda);
        let mut r: Vec<Vec<f64>> = b.iter().zip(&hx).map(|(b, h)| b.iter().zip(h).map(|(p, q)| p - q).collect()).collect();
        let scale = dot(&b, &b).max(dot(&hx, &hx)).sqrt();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let mut it = 0;
        while it < self.max_iter && rr.sqrt() > self.cg_tol * scale && rr > 0.0 {
            let hp = self.hessian(&p, lambda);
            let alpha = rr / dot(&p, &hp);
            axpy(&mut x, alpha, &p);
            axpy(&mut r, -alpha, &hp);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for (pk, rk) in p.iter_mut().zip(&r) {
                for (a, b) in pk.iter_mut().zip(rk) {
                    *a = b + beta * *a;
                }
            }
            rr = rr_new;
            it += 1;
        }
        let residual = if scale > 0.0 { rr.sqrt() / scale } else { 0.0 };
        if residual > self.cg_tol && it >= self.max_iter && residual > 1e3 * self.cg_tol {
            return Err(InversionError::Stagnation { iterations: it, residual });
        }
        let fit = self.op.apply(&x);
        let (mut num, mut den) = (0.0, 0.0);
        for (a, d) in fit.iter().zip(data) {
            for j in 0..3 {
                for (p, q) in a[j].iter().zip(&d[j]) {
                    num += (p - q).powi(2);
                    den += q * q;
                }
            }
        }
        let data_misfit = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        Ok(Recovery { fields: x, iterations: it, residual, lambda, data_misfit })
    }
}

/// ‖a − b‖ / ‖b‖ for stacked fields.
pub fn relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            num += (p - q).powi(2);
            den += q * q;
        }
    }
    (num / den).sqrt()
}

/// Ray-traced N^ν[∇r] at selected nodes for the same background, for cross-checking the multiplier path.
pub fn apply_rays(model: &MaterialModel<f64>, mode: Mode, nu: Param, cutoff: Cutoff, r: &GridField<f64>, nodes: &GridSpec, rule: SphereRule) -> Result<Vec<[f64; 3]>, InversionError> {
    let pl = PseudoLin::new(model, model, mode).with_cutoff(cutoff).with_source(crate::pseudolin::JacobianSource::Background);
    let quad = RayQuadrature::Mesh { per_step: 6 };
    Ok(pl.apply_on_grid(nu, r, false, nodes, rule, quad)?)
}

/// Slab support |n·x| ≤ half_width within the box |x_i| ≤ extent.
pub fn slab_mask(spec: &GridSpec, normal: [f64; 3], half_width: f64, extent: f64) -> Vec<bool> {
    let n = Vec3(normal).normalized();
    (0..spec.len())
        .map(|i| {
            let x = Vec3(spec.node(i));
            x.dot(n).abs() <= half_width + 1e-12 && (x - n * x.dot(n)).max_abs() <= extent
        })
        .collect()
}

/// Smooth profile cos²(π n·x/(2 half_width)) · Π(1 − (x_i/extent)²)² inside the slab.
pub fn slab_profile(spec: &GridSpec, normal: [f64; 3], half_width: f64, extent: f64, amp: f64) -> Vec<f64> {
    let n = Vec3(normal).normalized();
    (0..spec.len())
        .map(|i| {
            let x = Vec3(spec.node(i));
            let s = x.dot(n);
            let t = x - n * s;
            if s.abs() > half_width || t.max_abs() > extent {
                return 0.0;
            }
            let across = (std::f64::consts::PI * s / (2.0 * half_width)).cos().powi(2);
            let along: f64 = (0..3).map(|a| (1.0 - (t[a] / extent).powi(2)).powi(2)).product();
            amp * across * along
        })
        .collect()
}

/// Random smooth bump fields with a random thin direction, for Poincaré and stability sweeps.
pub fn random_bump(spec: &GridSpec, rng: &mut impl Rng, thickness: f64, extent: f64) -> Vec<f64> {
    let rot = random_rotation(rng);
    let c = Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let radii = [thickness / 2.0, extent * rng.gen_range(0.5..1.0), extent * rng.gen_range(0.5..1.0)];
    let amp = rng.gen_range(0.5..2.0);
    (0..spec.len())
        .map(|i| {
            let d = rot.mul_vec(Vec3(spec.node(i)) - c);
            let q: f64 = (0..3).map(|a| (d[a] / radii[a]).powi(2)).sum();
            if q >= 1.0 {
                0.0
            } else {
                amp * (1.0 - 1.0 / (1.0 - q)).exp()
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StabilityRow {
    pub thickness: f64,
    pub width: f64,
    pub grad: f64,
    pub data_h2: f64,
    pub h_half: f64,
    /// ‖∇u‖ / (‖Au‖_{H²} + ‖u‖_{H^{1/2}}).
    pub constant: f64,
    /// ‖∇u‖ / ‖Au‖_{H²}.
    pub absorbed: f64,
}

/// Empirical stability constants over random thin bumps for a one-unknown operator.
pub fn stability_report(op: &ForwardOperator, thicknesses: &[f64], per_width: usize, seed: u64) -> Vec<StabilityRow> {
    let spec = op.emb.spec.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &th in thicknesses {
        let mut worst: Option<StabilityRow> = None;
        for _ in 0..per_width {
            let u = random_bump(&spec, &mut rng, th, 0.3);
            if u.iter().all(|v| *v == 0.0) {
                continue;
            }
            let uh = op.emb.spectrum(&u);
            let grad = op.emb.weighted_norm2(&uh, |k2| k2).sqrt();
            let h_half = op.emb.weighted_norm2(&uh, |k2| (1.0 + k2).sqrt()).sqrt();
            let data = op.apply(std::slice::from_ref(&u));
            let mut h2 = 0.0;
            for d in &data {
                for comp in d {
                    let mut v: Vec<C64> = comp.iter().map(|x| C64::new(*x, 0.0)).collect();
                    fft_nd(&mut v, &op.emb.torus.n);
                    h2 += op.emb.weighted_norm2(&v, |k2| (1.0 + k2).powi(2));
                }
            }
            // data already live on the torus; weighted_norm2 treats them as embedded node data
            let h2 = h2.sqrt();
            let row = StabilityRow {
                thickness: th,
                width: width_of_points(&(0..spec.len()).filter(|i| u[*i] != 0.0).map(|i| spec.node(i)).collect::<Vec<_>>(), 100, 3).width,
                grad,
                data_h2: h2,
                h_half,
                constant: grad / (h2 + h_half),
                absorbed: grad / h2,
            };
            if worst.as_ref().is_none_or(|w| row.constant > w.constant) {
                worst = Some(row);
            }
        }
        rows.extend(worst);
    }
    rows
}
