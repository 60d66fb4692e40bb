//! Closed-form symbol predictions for the normal operators and their numerical verification.
//!
//! Coefficients returned as `a_{-1}` / `a_{-2}` are the degree-zero factors in
//! σ = a_{-1}|ζ|⁻¹ + a_{-2}|ζ|⁻² + …; `SymbolSample::value` carries the full σ at the given ζ.

use num_complex::Complex;

use crate::linalg::{least_squares, Mat3, Vec3};
use crate::material_model::{Local, MaterialModel, ModelError, Mode, Param};
use crate::pseudolin::{param_index, Cutoff, Cx, PseudoError, PseudoLin, RayQuadrature};
use crate::quadrature::{gauss_legendre, gauss_legendre_on, great_circle, SphereQuadrature};
use crate::raytracer::{PhasePoint, RayError};
use crate::real::{sgn, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SymbolError {
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error("probe frequency |ζ|·h = {zeta_h:.4} exceeds the admissible limit {limit:.4}")]
    ProbeInvalid { zeta_h: f64, limit: f64 },
    #[error("{what} is not defined for mode {mode} and parameter {nu}")]
    NotApplicable { what: &'static str, mode: &'static str, nu: &'static str },
    #[error("parameter bounds violated at x = {x:?}: {detail}")]
    Bounds { x: [f64; 3], detail: String },
    #[error("fit failed: {0}")]
    Fit(String),
}

impl From<ModelError> for SymbolError {
    fn from(e: ModelError) -> Self {
        SymbolError::Pseudo(e.into())
    }
}

impl From<RayError> for SymbolError {
    fn from(e: RayError) -> Self {
        SymbolError::Pseudo(e.into())
    }
}

fn not_applicable(what: &'static str, mode: Mode, nu: Param) -> SymbolError {
    SymbolError::NotApplicable { what, mode: mode.name(), nu: nu.name() }
}

/// A symbol value at (x, ζ) with its order and vanishing order on Σ.
#[derive(Clone, Copy, Debug)]
pub struct SymbolSample<T> {
    pub x: Vec3<T>,
    pub zeta: Vec3<T>,
    pub value: Cx<T>,
    pub order: i32,
    pub vanishing_order: u32,
}

impl<T: Real> SymbolSample<T> {
    /// Scalar symbols act as multiples of the identity.
    pub fn matrix(&self) -> [[Cx<T>; 3]; 3] {
        let z = Complex::new(T::zero(), T::zero());
        let mut m = [[z; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = self.value;
        }
        m
    }
}

/// Σ = span ξ̄: transverse offset ξ_I(ζ)/|ζ| and membership.
pub struct SigmaSet;

impl SigmaSet {
    pub fn transverse<T: Real>(axis: Vec3<T>, zeta: Vec3<T>) -> T {
        let n = axis.normalized();
        let z = zeta.norm();
        (zeta - n * zeta.dot(n)).norm() / z
    }

    pub fn contains<T: Real>(axis: Vec3<T>, zeta: Vec3<T>, tol: T) -> bool {
        Self::transverse(axis, zeta) <= tol
    }
}

/// Vanishing order of σ₋₁(N^ν) on Σ for each branch; `None` where the weight vanishes identically.
pub fn expected_vanishing(mode: Mode, nu: Param) -> Option<u32> {
    match (mode, nu) {
        (Mode::QP, Param::A11) => Some(0),
        (Mode::QSV, Param::A33) => Some(4),
        (Mode::QSH, _) => None,
        _ => Some(2),
    }
}

fn circle_sum<T: Real>(
    normal: Vec3<T>,
    n: usize,
    mut f: impl FnMut(Vec3<T>) -> Result<T, SymbolError>,
) -> Result<T, SymbolError> {
    let mut acc = T::zero();
    for (w, wt) in great_circle(normal, n) {
        acc += wt * f(w)?;
    }
    Ok(acc)
}

/// a₋₁ = 2π ∮_{ζ⊥} χ E^ν(x, ξ(ω)) dS¹ (trapezoid with `n` nodes).
pub fn principal_coefficient<T: Real>(pl: &PseudoLin<T>, nu: Param, x: Vec3<T>, zeta: Vec3<T>, n: usize) -> Result<T, SymbolError> {
    let loc = pl.base.local(x);
    let s = circle_sum(zeta, n, |w| {
        let xi = pl.base.xi_of_omega(pl.mode, x, w)?;
        let chi = pl.cutoff.at(&loc, xi);
        if chi == T::zero() {
            return Ok(T::zero());
        }
        Ok(chi * pl.weight(nu, PhasePoint::new(x, xi))?)
    })?;
    Ok(T::lit(2.0) * T::PI() * s)
}

pub fn principal_prediction<T: Real>(
    pl: &PseudoLin<T>,
    nu: Param,
    x: Vec3<T>,
    zeta: Vec3<T>,
    n: usize,
) -> Result<SymbolSample<T>, SymbolError> {
    let a = principal_coefficient(pl, nu, x, zeta, n)?;
    Ok(SymbolSample {
        x,
        zeta,
        value: Complex::new(a / zeta.norm(), T::zero()),
        order: -1,
        vanishing_order: expected_vanishing(pl.mode, nu).unwrap_or(0),
    })
}

/// Principal symbol of Ñ^ν (a 3-vector acting on scalars): 2π/|ζ| ∮ χ (∂_xE − (∂Ξ̃/∂ξ)⁻¹ ∂Ξ̃/∂x ∂_ξE) dS¹.
pub fn principal_prediction_tilde<T: Real>(
    pl: &PseudoLin<T>,
    nu: Param,
    x: Vec3<T>,
    zeta: Vec3<T>,
    n: usize,
) -> Result<Vec3<T>, SymbolError> {
    let loc = pl.base.local(x);
    let k = param_index(nu);
    let mut acc = Vec3::zero();
    for (w, wt) in great_circle(zeta, n) {
        let xi = pl.base.xi_of_omega(pl.mode, x, w)?;
        let chi = pl.cutoff.at(&loc, xi);
        if chi == T::zero() {
            continue;
        }
        let z = PhasePoint::new(x, xi);
        let wts = pl.weights(z)?;
        let (bx, bxi) = pl.anchor_rows(None, z)?;
        let inv = bxi.inverse().ok_or(PseudoError::Singular { x: x.to_f64() })?;
        let c = wts.dx[k] - inv.mul_vec(bx.mul_vec(wts.dxi[k]));
        acc += c * (chi * wt);
    }
    Ok(acc * (T::lit(2.0) * T::PI() / zeta.norm()))
}

/// Logarithmic mean (b − a)/ln(b/a) of two positive numbers.
pub fn log_mean<T: Real>(a: T, b: T) -> T {
    let r = b / a - T::one();
    if r.abs() < T::lit(1e-6) {
        // series of r/ln(1+r)
        return a * (T::one() + r * T::lit(0.5) - r * r / T::lit(12.0));
    }
    (b - a) / (b / a).ln()
}

fn s_integral<T: Real>(f: impl Fn(T) -> T) -> T {
    let (s, w) = gauss_legendre_on(16, 0.0, 1.0);
    s.iter().zip(&w).map(|(s, w)| T::lit(*w) * f(T::lit(*s))).sum()
}

/// f^ν_±(x): the factor with E^ν = f ξ_T² on the equatorial sphere, as an s-integral between the two models.
pub fn f_equatorial<T: Real>(pl: &PseudoLin<T>, nu: Param, x: Vec3<T>) -> Result<T, SymbolError> {
    let lb = pl.base.local(x);
    let lp = pl.pert.local(x);
    let d0 = lb.a11.v - lb.a55.v;
    let dr = lp.a11.v - lb.a11.v;
    let e0 = lb.e2.v;
    let er = lp.e2.v - lb.e2.v;
    let two = T::lit(2.0);
    match (pl.mode, nu) {
        (Mode::QP, Param::A33) => Ok(two),
        (Mode::QSV, Param::A33) => Ok(T::zero()),
        (Mode::QP, Param::E2) => Ok(-two * s_integral(|s| T::one() / (d0 + s * dr))),
        (Mode::QSV, Param::E2) => Ok(two * s_integral(|s| T::one() / (d0 + s * dr))),
        (Mode::QSV, Param::A11) => Ok(-two * s_integral(|s| (e0 + s * er) / (d0 + s * dr).powi(2))),
        (m, nu) => Err(not_applicable("the equatorial factor f^ν", m, nu)),
    }
}

/// Subprincipal coefficient on Σ from the closed-form circle integrand and from the mean-curvature formula.
#[derive(Clone, Copy, Debug)]
pub struct Subprincipal<T> {
    /// σ₋₂ at ζ = s ξ̄ (value a₋₂/s²).
    pub sample: SymbolSample<T>,
    /// Circle-quadrature a₋₂.
    pub a_m2: Cx<T>,
    /// Mean-curvature closed form of a₋₂.
    pub closed_form: Cx<T>,
}

pub fn subprincipal_prediction<T: Real>(
    pl: &PseudoLin<T>,
    nu: Param,
    x: Vec3<T>,
    s: T,
    n: usize,
) -> Result<Subprincipal<T>, SymbolError> {
    let loc = pl.base.local(x);
    let mode = pl.mode;
    let f = f_equatorial(pl, nu, x)?;
    let a = loc.a_pm(mode);
    let h = loc.h_pm(mode);
    let axis = loc.axis();
    let grad_term = axis.dot(loc.grad_a_pm(mode));
    let four = T::lit(4.0);
    let ratio = T::one() + four * a / h;
    let integral = circle_sum(axis, n, |w| {
        let xi = w * (T::one() / (four * a));
        let chi = pl.cutoff.at(&loc, xi);
        Ok(chi * (loc.curvature(w) / (four * a) * ratio - grad_term / (T::lit(8.0) * a * a)))
    })?;
    let pi = T::PI();
    let a_m2 = Complex::new(T::zero(), sgn(s) * T::lit(2.0) * pi / h * f * integral);
    let closed = Complex::new(
        T::zero(),
        sgn(s) * pi * pi * f / h * (loc.mean_curvature() / a * ratio - grad_term / (T::lit(2.0) * a * a)),
    );
    let zeta = axis * s;
    Ok(Subprincipal {
        sample: SymbolSample { x, zeta, value: a_m2 / (s * s), order: -2, vanishing_order: 0 },
        a_m2,
        closed_form: closed,
    })
}

/// a₋₂ on Σ from the general stationary-phase integrand 2F(∂_tg ∂_∥g − ζ̂·α (∂_∥g)²) with g = ξ_T,
/// evaluating each ingredient directly from the Hamiltonian (no equatorial simplifications).
pub fn subprincipal_from_dynamics<T: Real>(pl: &PseudoLin<T>, nu: Param, x: Vec3<T>, s: T, n: usize) -> Result<Cx<T>, SymbolError> {
    let loc: Local<T> = pl.base.local(x);
    let mode = pl.mode;
    let axis = loc.axis();
    let grad_f = Vec3(loc.layer.g);
    let hf = Mat3(loc.layer.h);
    let d_axis = |v: Vec3<T>| {
        let hv = hf.mul_vec(v);
        (hv - axis * axis.dot(hv)) * (T::one() / grad_f.norm())
    };
    let sg = sgn(s);
    let integral = circle_sum(axis, n, |w| {
        let xi = pl.base.xi_of_omega(mode, x, w)?;
        let chi = pl.cutoff.at(&loc, xi);
        let d = T::lit(1e-3) * xi.norm();
        let ep = pl.weight(nu, PhasePoint::new(x, xi + axis * d))?;
        let em = pl.weight(nu, PhasePoint::new(x, xi - axis * d))?;
        let f = (ep + em) / (T::lit(2.0) * d * d);
        let j = loc.jet1(mode, xi)?;
        let gxi = Vec3::new(j.g[3], j.g[4], j.g[5]);
        let gx = Vec3::new(j.g[0], j.g[1], j.g[2]);
        let dt_g = d_axis(gxi).dot(xi) - axis.dot(gx);
        let hess = pl.base.hess_xi_g(mode, x, xi)?;
        let hinv = hess.inverse().ok_or(PseudoError::Singular { x: x.to_f64() })?;
        let dpar_g = sg * axis.dot(hinv.mul_vec(axis));
        let alpha = pl.base.alpha(mode, x, w)?;
        Ok(T::lit(2.0) * chi * f * (dt_g * dpar_g - sg * axis.dot(alpha) * dpar_g * dpar_g))
    })?;
    Ok(Complex::new(T::zero(), T::lit(2.0) * T::PI() * integral))
}

/// (a_I, a_T) = 4π ∮_{ζ⊥} χ ξ_{I/T}²(ω) dS¹.
pub fn a_it<T: Real>(pl: &PseudoLin<T>, x: Vec3<T>, zeta: Vec3<T>, n: usize) -> Result<(T, T), SymbolError> {
    let loc = pl.base.local(x);
    let mut ai = T::zero();
    let mut at = T::zero();
    for (w, wt) in great_circle(zeta, n) {
        let xi = pl.base.xi_of_omega(pl.mode, x, w)?;
        let chi = pl.cutoff.at(&loc, xi);
        let (xt, xi2) = loc.xi_t_xi_i(xi);
        ai += wt * chi * xi2;
        at += wt * chi * xt * xt;
    }
    let c = T::lit(4.0) * T::PI();
    Ok((c * ai, c * at))
}

/// Uniform parameter bounds that fix the constants in the O(ε²) brackets.
#[derive(Clone, Copy, Debug)]
pub struct ParamBounds {
    pub d11_min: f64,
    pub d11_max: f64,
    pub d33_max: f64,
    pub e2_max: f64,
}

impl ParamBounds {
    /// Bounds enclosing both models at x with a relative margin.
    pub fn around<T: Real>(base: &MaterialModel<T>, pert: &MaterialModel<T>, x: Vec3<T>, margin: f64) -> Self {
        let (lb, lp) = (base.local(x), pert.local(x));
        let d = |l: &Local<T>| (l.a11.v - l.a55.v).as_f64();
        let d3 = |l: &Local<T>| (l.a33.v - l.a55.v).as_f64();
        ParamBounds {
            d11_min: d(&lb).min(d(&lp)) * (1.0 - margin),
            d11_max: d(&lb).max(d(&lp)) * (1.0 + margin),
            d33_max: d3(&lb).max(d3(&lp)) * (1.0 + margin),
            e2_max: lb.e2.v.as_f64().abs().max(lp.e2.v.as_f64().abs()) * (1.0 + margin),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CutoffRow<T> {
    pub mode: Mode,
    pub nu: Param,
    pub leading: T,
    pub lo: T,
    pub hi: T,
}

/// Leading a₋₁ predictions with rigorous brackets for a cutoff supported in |ξ_T| < ε|ξ|.
#[derive(Clone, Debug)]
pub struct CutoffTable<T> {
    pub a_plus_i: T,
    pub a_plus_t: T,
    pub a_minus_i: T,
    pub a_minus_t: T,
    /// Logarithmic mean of a11 − a55 between the models.
    pub d_log: T,
    /// ∫₀¹ (E² + s r_E²)/(a11 + s r11 − a55) ds.
    pub e2_over_d_log: T,
    pub rows: Vec<CutoffRow<T>>,
}

impl<T: Real> CutoffTable<T> {
    pub fn row(&self, mode: Mode, nu: Param) -> Option<&CutoffRow<T>> {
        self.rows.iter().find(|r| r.mode == mode && r.nu == nu)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cutoff_estimate_table<T: Real>(
    base: &MaterialModel<T>,
    pert: &MaterialModel<T>,
    x: Vec3<T>,
    zeta: Vec3<T>,
    cutoff: Cutoff,
    bounds: ParamBounds,
    n: usize,
) -> Result<CutoffTable<T>, SymbolError> {
    let eps = cutoff.eps;
    let (lb, lp) = (base.local(x), pert.local(x));
    for l in [&lb, &lp] {
        let d = (l.a11.v - l.a55.v).as_f64();
        let d3 = (l.a33.v - l.a55.v).as_f64();
        let e = l.e2.v.as_f64().abs();
        if d < bounds.d11_min || d > bounds.d11_max || d3 > bounds.d33_max || e > bounds.e2_max {
            return Err(SymbolError::Bounds { x: x.to_f64(), detail: format!("a11−a55 = {d}, a33−a55 = {d3}, |E²| = {e}") });
        }
    }
    let t_max = if cutoff.profile == crate::pseudolin::CutoffProfile::None || eps >= 1.0 {
        f64::INFINITY
    } else {
        eps * eps / (1.0 - eps * eps)
    };
    let q_max = 4.0 * bounds.e2_max * t_max / (bounds.d11_min * bounds.d11_min);
    if q_max >= 1.0 {
        return Err(SymbolError::Bounds { x: x.to_f64(), detail: format!("ε = {eps} too large for the bracket (q = {q_max})") });
    }
    let dr = 1.0 / (1.0 - q_max).sqrt() - 1.0;
    let de = (dr / bounds.d11_min).max(bounds.d33_max * t_max / (bounds.d11_min * bounds.d11_min));

    let plp = PseudoLin::new(base, pert, Mode::QP).with_cutoff(cutoff);
    let plm = PseudoLin::new(base, pert, Mode::QSV).with_cutoff(cutoff);
    let (api, apt) = a_it(&plp, x, zeta, n)?;
    let (ami, amt) = a_it(&plm, x, zeta, n)?;
    let d0 = lb.a11.v - lb.a55.v;
    let d1 = lp.a11.v - lb.a55.v;
    let d_log = log_mean(d0, d1);
    let (e0, er, rd) = (lb.e2.v, lp.e2.v - lb.e2.v, d1 - d0);
    let e2_over_d_log = s_integral(|s| (e0 + s * er) / (d0 + s * rd));
    let (dr, de) = (T::lit(dr), T::lit(de));
    let half = T::lit(0.5);
    let inv = T::one() / d_log;
    let rows = vec![
        CutoffRow { mode: Mode::QP, nu: Param::A11, leading: api, lo: api, hi: api * (T::one() + dr * half) },
        CutoffRow { mode: Mode::QSV, nu: Param::A11, leading: T::zero(), lo: -ami * dr * half, hi: T::zero() },
        CutoffRow { mode: Mode::QP, nu: Param::A33, leading: apt, lo: apt, hi: apt * (T::one() + dr * half) },
        CutoffRow { mode: Mode::QSV, nu: Param::A33, leading: T::zero(), lo: -amt * dr * half, hi: T::zero() },
        CutoffRow { mode: Mode::QP, nu: Param::E2, leading: -apt * inv, lo: -apt * (inv + de), hi: -apt * (inv - de) },
        CutoffRow { mode: Mode::QSV, nu: Param::E2, leading: amt * inv, lo: amt * (inv - de), hi: amt * (inv + de) },
    ];
    Ok(CutoffTable { a_plus_i: api, a_plus_t: apt, a_minus_i: ami, a_minus_t: amt, d_log, e2_over_d_log, rows })
}

/// Known functional relationship: which parameter is a function of the other two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relationship {
    A33Of,
    E2Of,
    A11Of,
}

impl Relationship {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "a33" | "a33_of" => Some(Relationship::A33Of),
            "e2" | "E2" | "e2_of" => Some(Relationship::E2Of),
            "a11" | "a11_of" => Some(Relationship::A11Of),
            _ => None,
        }
    }

    pub fn target(self) -> Param {
        match self {
            Relationship::A33Of => Param::A33,
            Relationship::E2Of => Param::E2,
            Relationship::A11Of => Param::A11,
        }
    }

    /// The two remaining unknowns, in column order.
    pub fn unknowns(self) -> [Param; 2] {
        match self {
            Relationship::A33Of => [Param::A11, Param::E2],
            Relationship::E2Of => [Param::A11, Param::A33],
            Relationship::A11Of => [Param::A33, Param::E2],
        }
    }
}

/// f̃_ν = ∫₀¹ ∂f/∂ν(p + s r) ds for a gradient of the relationship function, indexed like [`Param::ALL`].
pub fn ftilde<T: Real>(grad: &dyn Fn([T; 3]) -> [T; 3], p: [T; 3], r: [T; 3]) -> [T; 3] {
    let (s, w) = gauss_legendre_on(8, 0.0, 1.0);
    let mut out = [T::zero(); 3];
    for (s, w) in s.iter().zip(&w) {
        let s = T::lit(*s);
        let g = grad([p[0] + s * r[0], p[1] + s * r[1], p[2] + s * r[2]]);
        for k in 0..3 {
            out[k] += T::lit(*w) * g[k];
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct EffectiveSymbols<T> {
    pub relationship: Relationship,
    pub unknowns: [Param; 2],
    /// Rows: qP, qSV; columns: `unknowns`.
    pub matrix: [[T; 2]; 2],
    pub det: T,
    pub nondegenerate: bool,
}

/// Leading effective 2×2 principal-symbol matrix for a functional relationship.
pub fn effective_symbols<T: Real>(table: &CutoffTable<T>, rel: Relationship, ft: [T; 3]) -> EffectiveSymbols<T> {
    let (pi, pt, mi, mt) = (table.a_plus_i, table.a_plus_t, table.a_minus_i, table.a_minus_t);
    let inv = T::one() / table.d_log;
    let (f11, f33, fe) = (ft[0], ft[1], ft[2]);
    let _ = mi;
    let matrix = match rel {
        Relationship::A33Of => [[pi + f11 * pt, (-inv + fe) * pt], [T::zero(), inv * mt]],
        Relationship::E2Of => [[pi - inv * f11 * pt, (T::one() - inv * f33) * pt], [inv * f11 * mt, inv * f33 * mt]],
        Relationship::A11Of => {
            let q = table.e2_over_d_log;
            [[pt + f33 * pi, -inv * pt + fe * pi], [-q * f33 * mt, (inv - q * fe) * mt]]
        }
    };
    let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
    let scale = (matrix[0][0].abs() + matrix[0][1].abs()) * (matrix[1][0].abs() + matrix[1][1].abs());
    EffectiveSymbols {
        relationship: rel,
        unknowns: rel.unknowns(),
        matrix,
        det,
        nondegenerate: det.abs() > T::lit(1e-10) * scale && scale > T::zero(),
    }
}

/// 2×2 principal coefficient matrix [[a₋₁(N^{ν0}_+), a₋₁(N^{ν1}_+)], [a₋₁(N^{ν0}_−), a₋₁(N^{ν1}_−)]].
pub fn two_param_matrix<T: Real>(
    base: &MaterialModel<T>,
    pert: &MaterialModel<T>,
    cutoff: Cutoff,
    unknowns: [Param; 2],
    x: Vec3<T>,
    zeta: Vec3<T>,
    n: usize,
) -> Result<[[T; 2]; 2], SymbolError> {
    let mut m = [[T::zero(); 2]; 2];
    for (r, mode) in [Mode::QP, Mode::QSV].into_iter().enumerate() {
        let pl = PseudoLin::new(base, pert, mode).with_cutoff(cutoff);
        for (c, nu) in unknowns.iter().enumerate() {
            m[r][c] = principal_coefficient(&pl, *nu, x, zeta, n)?;
        }
    }
    Ok(m)
}

/// On Σ, for a11 = f(a33, E²) with constant f̃: the effective matrix built from principal and
/// subprincipal coefficients and its determinant, next to f̃₃₃·a₋₁(N^{11}_+)·a₋₂(N^{E²}_−).
pub fn a11_relation_sigma_det<T: Real>(
    base: &MaterialModel<T>,
    pert: &MaterialModel<T>,
    cutoff: Cutoff,
    ft: [T; 3],
    x: Vec3<T>,
    s: T,
    n: usize,
) -> Result<(Cx<T>, Cx<T>), SymbolError> {
    let plp = PseudoLin::new(base, pert, Mode::QP).with_cutoff(cutoff);
    let plm = PseudoLin::new(base, pert, Mode::QSV).with_cutoff(cutoff);
    let axis = base.local(x).axis();
    let p11 = Complex::new(principal_coefficient(&plp, Param::A11, x, axis, n)?, T::zero());
    let s11 = subprincipal_prediction(&plm, Param::A11, x, s, n)?.a_m2;
    let se = subprincipal_prediction(&plm, Param::E2, x, s, n)?.a_m2;
    let (f33, fe) = (ft[1], ft[2]);
    let m = [[p11 * f33, p11 * fe], [s11 * f33, se + s11 * fe]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    Ok((det, p11 * se * f33))
}

/// Probe settings: grid spacing, Gaussian width in cells and quadrature resolution.
#[derive(Clone, Copy, Debug)]
pub struct ProbeConfig {
    pub h: f64,
    pub width_cells: f64,
    /// Largest admissible |ζ|_∞·h.
    pub max_zeta_h: f64,
    pub n_s: usize,
    pub n_phi: usize,
    /// Half-width of the sphere band around ζ̂^⊥ in units of 1/(w|ζ|).
    pub band_sigmas: f64,
    /// Half-length of the ray window in units of w.
    pub window_sigmas: f64,
    pub t_panels: usize,
    pub per_panel: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            h: 1.0 / 31.0,
            width_cells: 8.0,
            max_zeta_h: std::f64::consts::FRAC_PI_2,
            n_s: 32,
            n_phi: 128,
            band_sigmas: 8.0,
            window_sigmas: 6.0,
            t_panels: 12,
            per_panel: 8,
        }
    }
}

impl ProbeConfig {
    pub fn width(&self) -> f64 {
        self.width_cells * self.h
    }

    /// Largest admissible |ζ| along a direction with unit ∞-norm ratio `r = |ζ̂|_∞`.
    pub fn max_zeta(&self, dir: Vec3<f64>) -> f64 {
        self.max_zeta_h / (self.h * dir.normalized().max_abs())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProbeEstimate<T> {
    pub zeta: Vec3<T>,
    /// Estimated σ(x, ζ) as a 3×3 matrix acting on vector fields.
    pub matrix: [[Cx<T>; 3]; 3],
    /// Trace / 3.
    pub scalar: Cx<T>,
    /// Off-diagonal Frobenius norm over diagonal Frobenius norm.
    pub offdiag_ratio: T,
    pub rays: usize,
}

/// Applies N^ν to the vector probes e_j e^{iζ·(y−x)} φ(y−x), φ Gaussian of width w, and reads
/// off σ(x, ζ) at the centre. Rays carry the base-model flow.
pub fn probe_symbol<T: Real>(pl: &PseudoLin<T>, nu: Param, x: Vec3<T>, zeta: Vec3<T>, cfg: &ProbeConfig) -> Result<ProbeEstimate<T>, SymbolError> {
    let zh = zeta.max_abs().as_f64() * cfg.h;
    if zh > cfg.max_zeta_h * (1.0 + 1e-12) {
        return Err(SymbolError::ProbeInvalid { zeta_h: zh, limit: cfg.max_zeta_h });
    }
    let w = cfg.width();
    let zn = zeta.norm();
    let zhat = zeta.normalized();
    let delta = 1.0 / (w * zn.as_f64());
    let mut smax = (cfg.band_sigmas * delta).min(1.0);
    let axis = pl.base.local(x).axis();
    if T::one() - zhat.dot(axis).abs() < T::lit(1e-12) {
        smax = smax.min(pl.band_limit(x)?.as_f64());
    }
    let (s, sw) = gauss_legendre_on(cfg.n_s, -smax, smax);
    let nodes = SphereQuadrature::about_axis(zhat, &s, &sw, cfg.n_phi).nodes;
    let loc = pl.base.local(x);
    let tracer = pl.base_tracer();
    let k = param_index(nu);
    let tw = cfg.window_sigmas * w;
    let quad = RayQuadrature::Window { t0: -tw, t1: tw, panels: cfg.t_panels, per_panel: cfg.per_panel };
    let zc = Complex::new(T::zero(), T::zero());
    let mut m = [[zc; 3]; 3];
    let inv2w2 = T::lit(0.5 / (w * w));
    let mut rays = 0;
    for sn in &nodes {
        let xi = pl.base.xi_of_omega(pl.mode, x, sn.omega)?;
        let chi = pl.cutoff.at(&loc, xi);
        if chi == T::zero() {
            continue;
        }
        rays += 1;
        let z = PhasePoint::new(x, xi);
        let ray = tracer.ray_through(z)?;
        let rn = pl.ray_nodes(&ray, quad, None)?;
        let mut a = [[zc; 3]; 3];
        for node in &rn {
            let d = node.z.x - x;
            let u = Complex::from_polar((-d.norm2() * inv2w2).exp(), zeta.dot(d));
            let c = u * (-node.w * node.weights.e[k]);
            for (i, row) in a.iter_mut().enumerate() {
                for (j, aij) in row.iter_mut().enumerate() {
                    *aij = *aij + c * node.b_xi.0[i][j];
                }
            }
        }
        let (_, b0) = pl.anchor_rows(Some(&ray), z)?;
        let binv = (b0 * (-T::one())).inverse().ok_or(PseudoError::Singular { x: x.to_f64() })?;
        let f = chi * sn.weight;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = zc;
                for (l, al) in a.iter().enumerate() {
                    acc = acc + al[j] * binv.0[i][l];
                }
                m[i][j] = m[i][j] + acc * f;
            }
        }
    }
    let scalar = (m[0][0] + m[1][1] + m[2][2]) / T::lit(3.0);
    let mut off = T::zero();
    let mut dia = T::zero();
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i == j {
                dia += v.norm_sqr();
            } else {
                off += v.norm_sqr();
            }
        }
    }
    Ok(ProbeEstimate { zeta, matrix: m, scalar, offdiag_ratio: (off / dia).sqrt(), rays })
}

/// |ζ|·(probe response) for homogeneous models, where rays are straight, E^ν is constant along
/// them and the Jacobian factors cancel: ∫_{S²} χE √(2π)(w|ζ|) e^{−(w|ζ| ζ̂·ω)²/2} dω.
/// Tends to a₋₁ as δ = 1/(w|ζ|) → 0 with even powers of δ as corrections.
pub fn probe_homogeneous<T: Real>(pl: &PseudoLin<T>, nu: Param, x: Vec3<T>, zeta_dir: Vec3<T>, delta: f64, n_s: usize, n_phi: usize) -> Result<T, SymbolError> {
    let loc = pl.base.local(x);
    let smax = (10.0 * delta).min(1.0);
    let (s, sw) = gauss_legendre_on(n_s, -smax, smax);
    let nodes = SphereQuadrature::about_axis(zeta_dir.normalized(), &s, &sw, n_phi).nodes;
    let c = (2.0 * std::f64::consts::PI).sqrt() / delta;
    let mut acc = T::zero();
    for (i, sn) in nodes.iter().enumerate() {
        let sp = s[i / n_phi];
        let g = T::lit(c * (-0.5 * (sp / delta).powi(2)).exp());
        let xi = pl.base.xi_of_omega(pl.mode, x, sn.omega)?;
        let chi = pl.cutoff.at(&loc, xi);
        if chi == T::zero() {
            continue;
        }
        acc += sn.weight * g * chi * pl.weight(nu, PhasePoint::new(x, xi))?;
    }
    Ok(acc)
}

/// Extrapolates v(δ) = Σ_k c_k δ^{2k} to δ = 0 through all given samples.
pub fn richardson_even(deltas: &[f64], values: &[f64]) -> Result<f64, SymbolError> {
    let rows: Vec<Vec<f64>> = deltas.iter().map(|d| (0..deltas.len()).map(|k| d.powi(2 * k as i32)).collect()).collect();
    least_squares(&rows, values).map(|c| c[0]).ok_or_else(|| SymbolError::Fit("singular Richardson system".into()))
}

/// Least-squares slope and intercept of log|y| against log x.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), SymbolError> {
    if xs.len() < 2 || ys.iter().any(|y| *y == 0.0 || !y.is_finite()) {
        return Err(SymbolError::Fit("need at least two nonzero samples".into()));
    }
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![1.0, x.ln()]).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    let c = least_squares(&rows, &ly).ok_or_else(|| SymbolError::Fit("degenerate abscissae".into()))?;
    Ok((c[1], c[0]))
}

/// Log-spaced samples on [a, b].
pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1).max(1) as f64)).collect()
}

#[derive(Clone, Debug)]
pub struct TransverseScan {
    pub u: Vec<f64>,
    /// Richardson-extrapolated probe coefficients.
    pub probed: Vec<f64>,
    /// a₋₁ from the circle integral.
    pub predicted: Vec<f64>,
    pub exponent: f64,
}

/// Transverse vanishing scan near Σ on a homogeneous model: for each offset u = ξ_I(ζ)/|ζ| the
/// probe coefficient is extrapolated in δ and the exponent is fitted on log-log axes.
pub fn transverse_scan<T: Real>(
    pl: &PseudoLin<T>,
    nu: Param,
    x: Vec3<T>,
    us: &[f64],
    deltas: &[f64],
    n_s: usize,
    n_phi: usize,
) -> Result<TransverseScan, SymbolError> {
    let axis = pl.base.local(x).axis();
    let (e1, _) = axis.orthonormal_complement();
    let mut probed = Vec::new();
    let mut predicted = Vec::new();
    for &u in us {
        let dir = axis * T::lit((1.0 - u * u).sqrt()) + e1 * T::lit(u);
        let vals: Vec<f64> = deltas
            .iter()
            .map(|d| probe_homogeneous(pl, nu, x, dir, *d, n_s, n_phi).map(|v| v.as_f64()))
            .collect::<Result<_, _>>()?;
        probed.push(richardson_even(deltas, &vals)?);
        predicted.push(principal_coefficient(pl, nu, x, dir, 256)?.as_f64());
    }
    let (exponent, _) = loglog_fit(us, &probed)?;
    Ok(TransverseScan { u: us.to_vec(), probed, predicted, exponent })
}

/// Gauss–Legendre nodes reused by callers that integrate over the homotopy parameter.
pub fn homotopy_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (s, w) = gauss_legendre(n);
    (s.iter().map(|s| 0.5 * (s + 1.0)).collect(), w.iter().map(|w| 0.5 * w).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::pseudolin::CutoffProfile;
    use crate::quadrature::adaptive_simpson;

    fn ti() -> MaterialModel<f64> {
        MaterialModel::homogeneous(3.6, 3.0, 1.0, 1.0, 0.6, [0.0, 0.0, 1.0])
    }

    #[test]
    fn isotropic_principal_matches_circle_oracle() {
        let a = 2.0;
        let m = MaterialModel::<f64>::isotropic(0.0, 1.0);
        let m = MaterialModel { a11: Field::constant(a), a33: Field::constant(a), ..m };
        let pl = PseudoLin::new(&m, &m, Mode::QP).with_cutoff(Cutoff::none());
        let zeta = Vec3::new(3.0, 0.0, 0.0);
        let got = principal_prediction(&pl, Param::A11, Vec3::zero(), zeta, 256).unwrap();
        // E = 2ξ_I², ξ = ω/(4a), circle in the (y, z) plane
        let oracle = adaptive_simpson(&|t: f64| 2.0 * (1.0 - t.sin().powi(2)) / (16.0 * a * a), 0.0, 2.0 * std::f64::consts::PI, 1e-13);
        let expected = 2.0 * std::f64::consts::PI * oracle / 3.0;
        assert!((got.value.re - expected).abs() < 1e-12, "{} vs {expected}", got.value.re);
    }

    #[test]
    fn vanishing_on_sigma_and_sign_table() {
        let m = ti();
        let x = Vec3::zero();
        let axis = Vec3::new(0.0, 0.0, 1.0);
        for (mode, nu) in [(Mode::QSV, Param::A33), (Mode::QP, Param::E2), (Mode::QSV, Param::E2), (Mode::QP, Param::A33)] {
            let pl = PseudoLin::new(&m, &m, mode);
            let a = principal_coefficient(&pl, nu, x, axis, 256).unwrap();
            assert!(a.abs() < 1e-14, "{mode} {nu}: {a}");
        }
        let zeta = Vec3::new(0.3, 0.4, 0.5);
        let sign = |mode, nu| principal_coefficient(&PseudoLin::new(&m, &m, mode), nu, x, zeta, 256).unwrap();
        assert!(sign(Mode::QP, Param::A33) > 0.0);
        assert!(sign(Mode::QP, Param::E2) < 0.0);
        assert!(sign(Mode::QSV, Param::E2) > 0.0);
        assert!(sign(Mode::QSV, Param::A11) < 0.0);
        assert!(sign(Mode::QP, Param::A11) > 0.0);
    }

    #[test]
    fn f_equatorial_matches_weight_limit() {
        let base = ti();
        let pert = base.perturbed(Field::constant(0.2), Field::constant(-0.1), Field::constant(0.15));
        let x = Vec3::zero();
        for (mode, nu) in [(Mode::QP, Param::A33), (Mode::QP, Param::E2), (Mode::QSV, Param::E2), (Mode::QSV, Param::A11)] {
            let pl = PseudoLin::new(&base, &pert, mode);
            let f = f_equatorial(&pl, nu, x).unwrap();
            let xi = Vec3::new(0.3, 0.2, 1e-4);
            let e = pl.weight(nu, PhasePoint::new(x, xi)).unwrap();
            assert!((e / 1e-8 - f).abs() < 1e-5 * f.abs().max(1.0), "{mode} {nu}: {} vs {f}", e / 1e-8);
        }
        // logarithmic mean form for E²
        let pl = PseudoLin::new(&base, &pert, Mode::QP);
        let f = f_equatorial(&pl, Param::E2, x).unwrap();
        assert!((f + 2.0 / log_mean(2.6, 2.8)).abs() < 1e-13);
    }

    #[test]
    fn subprincipal_closed_forms_agree_with_dynamics() {
        // spherical layers, parameters decreasing outward
        let mut m = ti().with_radius(3.0);
        m.layer = Field::expr("sqrt(x^2+y^2+z^2)").unwrap();
        m.a11 = Field::expr("3.9 - 0.3*sqrt(x^2+y^2+z^2)").unwrap();
        m.a55 = Field::expr("1.2 - 0.2*sqrt(x^2+y^2+z^2)").unwrap();
        let x = Vec3::new(0.0, 0.6, 0.8);
        for (mode, nu) in [(Mode::QP, Param::A33), (Mode::QP, Param::E2), (Mode::QSV, Param::E2), (Mode::QSV, Param::A11)] {
            let pl = PseudoLin::new(&m, &m, mode);
            for s in [2.0, -3.0] {
                let sp = subprincipal_prediction(&pl, nu, x, s, 128).unwrap();
                assert!((sp.a_m2 - sp.closed_form).norm() < 1e-12 * sp.a_m2.norm());
                let dy = subprincipal_from_dynamics(&pl, nu, x, s, 128).unwrap();
                assert!((dy - sp.a_m2).norm() < 1e-5 * sp.a_m2.norm(), "{mode} {nu}: {dy} vs {}", sp.a_m2);
                assert!(sp.a_m2.re == 0.0);
            }
            let p = subprincipal_prediction(&pl, nu, x, 1.0, 64).unwrap().a_m2.im;
            let q = subprincipal_prediction(&pl, nu, x, -1.0, 64).unwrap().a_m2.im;
            assert_eq!(p, -q);
        }
        // isotropic homogeneous, unit sphere: i π² f/h (1/a)(1 + 4a/h) with h = 4a
        let mut iso = MaterialModel::<f64>::isotropic(1.0, 1.0).with_radius(3.0);
        iso.layer = Field::expr("sqrt(x^2+y^2+z^2)").unwrap();
        let pl = PseudoLin::new(&iso, &iso, Mode::QP);
        let sp = subprincipal_prediction(&pl, Param::A33, Vec3::new(1.0, 0.0, 0.0), 1.0, 64).unwrap();
        let (a, h) = (3.0, 12.0);
        let expected = std::f64::consts::PI.powi(2) * 2.0 / h * (1.0 / a) * 2.0;
        assert!((sp.closed_form.im - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn cutoff_table_brackets_principal_values() {
        let base = ti();
        let pert = base.perturbed(Field::constant(0.1), Field::constant(0.05), Field::constant(0.05));
        let x = Vec3::zero();
        let cutoff = Cutoff::new(0.15, CutoffProfile::C2);
        let bounds = ParamBounds::around(&base, &pert, x, 0.0);
        for zeta in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.4, 0.2, 0.9), Vec3::new(0.1, 0.0, 1.0)] {
            let t = cutoff_estimate_table(&base, &pert, x, zeta, cutoff, bounds, 512).unwrap();
            for r in &t.rows {
                let pl = PseudoLin::new(&base, &pert, r.mode).with_cutoff(cutoff);
                let v = principal_coefficient(&pl, r.nu, x, zeta, 512).unwrap();
                let slack = 1e-12 * (t.a_plus_i + t.a_minus_i);
                assert!(v >= r.lo - slack && v <= r.hi + slack, "{} {}: {v} not in [{}, {}]", r.mode, r.nu, r.lo, r.hi);
            }
        }
        let zero = MaterialModel::homogeneous(3.6, 3.0, 1.0, 1.0, 0.0, [0.0, 0.0, 1.0]);
        let pl = PseudoLin::new(&zero, &zero, Mode::QSV).with_cutoff(cutoff);
        assert_eq!(principal_coefficient(&pl, Param::A11, x, Vec3::new(1.0, 0.2, 0.3), 128).unwrap(), 0.0);
    }

    #[test]
    fn effective_symbols_reduce_and_a11_identity() {
        let base = ti();
        let pert = base.perturbed(Field::constant(0.1), Field::constant(0.05), Field::constant(0.05));
        let x = Vec3::zero();
        let cutoff = Cutoff::default();
        let zeta = Vec3::new(0.5, 0.1, 0.8);
        let t = cutoff_estimate_table(&base, &pert, x, zeta, cutoff, ParamBounds::around(&base, &pert, x, 0.0), 256).unwrap();
        let e = effective_symbols(&t, Relationship::A33Of, [0.0; 3]);
        assert_eq!(e.matrix[0][0], t.row(Mode::QP, Param::A11).unwrap().leading);
        assert_eq!(e.matrix[0][1], t.row(Mode::QP, Param::E2).unwrap().leading);
        assert!(e.nondegenerate);
        let e = effective_symbols(&t, Relationship::A33Of, [0.7, 0.0, 0.2]);
        assert!(e.nondegenerate && e.det > 0.0);
        let (det, formula) = a11_relation_sigma_det(&base, &pert, cutoff, [0.0, 0.8, -0.3], x, 1.5, 128).unwrap();
        assert!((det - formula).norm() < 1e-12 * formula.norm().max(1e-300));
    }

    #[test]
    fn homogeneous_probe_extrapolates_to_prediction() {
        let m = ti();
        let pl = PseudoLin::new(&m, &m, Mode::QP).with_cutoff(Cutoff::new(0.8, CutoffProfile::Smooth));
        let x = Vec3::zero();
        let dir = Vec3::new(0.6, 0.0, 0.8);
        let deltas = [1.0 / 64.0, 1.0 / 90.5, 1.0 / 128.0];
        let vals: Vec<f64> = deltas.iter().map(|d| probe_homogeneous(&pl, Param::A33, x, dir, *d, 48, 256).unwrap()).collect();
        let c0 = richardson_even(&deltas, &vals).unwrap();
        let pred = principal_coefficient(&pl, Param::A33, x, dir, 256).unwrap();
        assert!((c0 - pred).abs() < 1e-6 * pred.abs(), "{c0} vs {pred}");
    }

    #[test]
    fn generic_probe_matches_blurred_integral_on_homogeneous_model() {
        let m = ti().with_radius(2.0);
        let pl = PseudoLin::new(&m, &m, Mode::QP).with_source(crate::pseudolin::JacobianSource::Background);
        let cfg = ProbeConfig { n_s: 24, n_phi: 64, ..ProbeConfig::default() };
        let x = Vec3::new(0.1, -0.2, 0.0);
        let dir = Vec3::new(1.0, 0.0, 0.3).normalized();
        let zeta = dir * (0.5 * cfg.max_zeta(dir));
        let p = probe_symbol(&pl, Param::A11, x, zeta, &cfg).unwrap();
        let delta = 1.0 / (cfg.width() * zeta.norm());
        let blurred = probe_homogeneous(&pl, Param::A11, x, dir, delta, 24, 64).unwrap() / zeta.norm();
        assert!((p.scalar.re - blurred).abs() < 1e-6 * blurred, "{} vs {blurred}", p.scalar);
        assert!(p.scalar.im.abs() < 1e-6 * blurred);
        assert!(p.offdiag_ratio < 1e-10);
        let too_high = dir * (1.01 * cfg.max_zeta(dir));
        assert!(matches!(probe_symbol(&pl, Param::A11, x, too_high, &cfg), Err(SymbolError::ProbeInvalid { .. })));
    }

    #[test]
    fn fits() {
        let xs = log_space(0.02, 0.2, 5);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        let (p, c) = loglog_fit(&xs, &ys).unwrap();
        assert!((p - 2.0).abs() < 1e-12 && (c - 3f64.ln()).abs() < 1e-12);
        let d = [0.1, 0.07, 0.05];
        let v: Vec<f64> = d.iter().map(|d: &f64| 1.5 + 0.3 * d * d - 2.0 * d.powi(4)).collect();
        assert!((richardson_even(&d, &v).unwrap() - 1.5).abs() < 1e-12);
        assert!(SigmaSet::contains(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -2.0), 1e-12));
    }
}
