//! Transversely isotropic parameter fields and the qP / qSV / qSH Hamiltonians.
//!
//! All Hamiltonians are evaluated in frame-free form through the transverse component
//! `ξ_T = ξ·ξ̄(x)` and the isotropic part `ξ_I² = |ξ|² − ξ_T²`, with the axis
//! `ξ̄ = ∇f/|∇f|` taken from the layer function `f`.
//!
//! The three branches are the eigenvalues of twice the Christoffel matrix, so in the
//! isotropic limit `G_qP = 2(λ+2μ)|ξ|²` and `G_qSV = G_qSH = 2μ|ξ|²`.

use std::fmt;

use crate::field::Field;
use crate::jet::{Jet1, Jet2, PhaseScalar};
use crate::linalg::{Mat3, Vec3};
use crate::quadrature::gauss_legendre_on;
use crate::real::{sgn, Real};
use crate::taylor::Taylor3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    QP,
    QSV,
    QSH,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "qp" | "p" | "+" => Some(Mode::QP),
            "qsv" | "sv" | "-" => Some(Mode::QSV),
            "qsh" | "sh" => Some(Mode::QSH),
            _ => None,
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Mode::QP => "qp",
            Mode::QSV => "qsv",
            Mode::QSH => "qsh",
        }
    }
    /// +1 for qP, −1 for qSV; qSH has no branch sign.
    pub fn sign(self) -> Option<f64> {
        match self {
            Mode::QP => Some(1.0),
            Mode::QSV => Some(-1.0),
            Mode::QSH => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Recoverable material parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    A11,
    A33,
    E2,
}

impl Param {
    pub const ALL: [Param; 3] = [Param::A11, Param::A33, Param::E2];
    pub fn parse(s: &str) -> Option<Param> {
        match s.to_ascii_lowercase().as_str() {
            "a11" | "11" => Some(Param::A11),
            "a33" | "33" => Some(Param::A33),
            "e2" | "e^2" => Some(Param::E2),
            _ => None,
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Param::A11 => "a11",
            Param::A33 => "a33",
            Param::E2 => "e2",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("qP/qSV discriminant {disc:e} is not positive at x = {x:?}")]
    Discriminant { x: [f64; 3], disc: f64 },
    #[error("parameter ordering violated at x = {x:?}: a11-a55 = {d11}, a33-a55 = {d33}")]
    Ordering { x: [f64; 3], d11: f64, d33: f64 },
    #[error("layer function gradient vanishes at x = {x:?}")]
    DegenerateAxis { x: [f64; 3] },
    #[error("group-velocity inversion failed at x = {x:?} (residual {residual:e}); fiber convexity violated")]
    Convexity { x: [f64; 3], residual: f64 },
    #[error("covector is zero at x = {x:?}")]
    ZeroCovector { x: [f64; 3] },
}

/// Parameter and layer-function fields describing the medium.
#[derive(Clone, Debug)]
pub struct MaterialModel<T: Real> {
    pub a11: Field<T>,
    pub a33: Field<T>,
    pub a55: Field<T>,
    pub a66: Field<T>,
    pub e2: Field<T>,
    pub layer: Field<T>,
    pub domain_radius: T,
}

/// Field jets at one point.
#[derive(Clone, Debug)]
pub struct Local<T: Real> {
    pub x: Vec3<T>,
    pub a11: Taylor3<T>,
    pub a33: Taylor3<T>,
    pub a55: Taylor3<T>,
    pub a66: Taylor3<T>,
    pub e2: Taylor3<T>,
    pub layer: Taylor3<T>,
}

/// Parameter values lifted to a phase scalar type.
#[derive(Clone, Copy)]
struct Lifted<S> {
    a11: S,
    a33: S,
    a55: S,
    a66: S,
    e2: S,
}

/// Hamiltonian value from the invariants `u = ξ_T²`, `v = ξ_I²`; Err carries the discriminant.
fn branch<T: Real, S: PhaseScalar<T>>(mode: Mode, p: &Lifted<S>, u: S, v: S) -> Result<S, T> {
    match mode {
        Mode::QSH => Ok((p.a66 * v + p.a55 * u) * T::lit(2.0)),
        Mode::QP | Mode::QSV => {
            let a = (p.a11 - p.a55) * v + (p.a33 - p.a55) * u;
            let d = a * a - p.e2 * u * v * T::lit(4.0);
            let scale = (u + v).val();
            if !(d.val() > T::lit(1e-14) * scale * scale) {
                return Err(d.val());
            }
            let sd = d.psqrt();
            let base = (p.a11 + p.a55) * v + (p.a33 + p.a55) * u;
            Ok(if mode == Mode::QP { base + sd } else { base - sd })
        }
    }
}

/// ∂G/∂ν from the invariants; the qSV forms avoid cancellation in `1 − A/√D`.
fn param_derivative<T: Real, S: PhaseScalar<T>>(mode: Mode, nu: Param, p: &Lifted<S>, u: S, v: S) -> Result<S, T> {
    if mode == Mode::QSH {
        return Ok(S::cst(T::zero()));
    }
    let a = (p.a11 - p.a55) * v + (p.a33 - p.a55) * u;
    let b = p.e2 * u * v * T::lit(4.0);
    let d = a * a - b;
    let scale = (u + v).val();
    if !(d.val() > T::lit(1e-14) * scale * scale) {
        return Err(d.val());
    }
    let sd = d.psqrt();
    let plus = mode == Mode::QP;
    Ok(match nu {
        Param::A11 | Param::A33 => {
            let w = if nu == Param::A11 { v } else { u };
            if plus {
                w * (a / sd + T::one())
            } else {
                -(w * b) / (sd * (sd + a))
            }
        }
        Param::E2 => {
            let s = if plus { -T::lit(2.0) } else { T::lit(2.0) };
            (u * v / sd) * s
        }
    })
}

fn lift_params<T: Real, S: PhaseScalar<T>>(l: &Local<T>) -> Lifted<S> {
    Lifted {
        a11: S::from_field(&l.a11),
        a33: S::from_field(&l.a33),
        a55: S::from_field(&l.a55),
        a66: S::from_field(&l.a66),
        e2: S::from_field(&l.e2),
    }
}

fn lift_axis<T: Real, S: PhaseScalar<T>>(layer: &Taylor3<T>) -> [S; 3] {
    let g = [S::from_field_grad(layer, 0), S::from_field_grad(layer, 1), S::from_field_grad(layer, 2)];
    let inv = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).psqrt().precip();
    [g[0] * inv, g[1] * inv, g[2] * inv]
}

fn invariants<T: Real, S: PhaseScalar<T>>(n: &[S; 3], xi: &[S; 3]) -> (S, S) {
    let xt = n[0] * xi[0] + n[1] * xi[1] + n[2] * xi[2];
    let r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    let u = xt * xt;
    (u, r2 - u)
}

fn covector_jets<T: Real, S: PhaseScalar<T>>(xi: Vec3<T>) -> [S; 3] {
    [S::coord(xi[0], 3), S::coord(xi[1], 4), S::coord(xi[2], 5)]
}

impl<T: Real> Local<T> {
    pub fn axis(&self) -> Vec3<T> {
        Vec3(self.layer.g).normalized()
    }

    /// `(ξ_T, ξ_I²)` of a covector at this point.
    pub fn xi_t_xi_i(&self, xi: Vec3<T>) -> (T, T) {
        let xt = xi.dot(self.axis());
        (xt, (xi.norm2() - xt * xt).max(T::zero()))
    }

    fn check(&self, xi: Vec3<T>) -> Result<(), ModelError> {
        if xi.norm2() == T::zero() {
            return Err(ModelError::ZeroCovector { x: self.x.to_f64() });
        }
        Ok(())
    }

    fn disc_err(&self, d: T) -> ModelError {
        ModelError::Discriminant { x: self.x.to_f64(), disc: d.as_f64() }
    }

    /// Hamiltonian on any phase scalar type whose ξ slots are indices 3..6.
    pub fn hamiltonian<S: PhaseScalar<T>>(&self, mode: Mode, xi: [S; 3]) -> Result<S, ModelError> {
        let p = lift_params::<T, S>(self);
        let n = lift_axis::<T, S>(&self.layer);
        let (u, v) = invariants(&n, &xi);
        branch(mode, &p, u, v).map_err(|d| self.disc_err(d))
    }

    pub fn g(&self, mode: Mode, xi: Vec3<T>) -> Result<T, ModelError> {
        self.check(xi)?;
        self.hamiltonian::<T>(mode, xi.0)
    }

    /// Value, phase-space gradient and Hessian (x in slots 0..3, ξ in 3..6).
    pub fn jet2(&self, mode: Mode, xi: Vec3<T>) -> Result<Jet2<T>, ModelError> {
        self.check(xi)?;
        self.hamiltonian(mode, covector_jets::<T, Jet2<T>>(xi))
    }

    pub fn jet1(&self, mode: Mode, xi: Vec3<T>) -> Result<Jet1<T>, ModelError> {
        self.check(xi)?;
        self.hamiltonian(mode, covector_jets::<T, Jet1<T>>(xi))
    }

    /// ∂G/∂ν at this point's parameters.
    pub fn param_derivative<S: PhaseScalar<T>>(&self, mode: Mode, nu: Param, xi: [S; 3]) -> Result<S, ModelError> {
        let p = lift_params::<T, S>(self);
        let n = lift_axis::<T, S>(&self.layer);
        let (u, v) = invariants(&n, &xi);
        param_derivative(mode, nu, &p, u, v).map_err(|d| self.disc_err(d))
    }

    /// Velocity scale a_± on the equatorial sphere: a11 for qP, a55 for qSV, a66 for qSH.
    pub fn a_pm(&self, mode: Mode) -> T {
        match mode {
            Mode::QP => self.a11.v,
            Mode::QSV => self.a55.v,
            Mode::QSH => self.a66.v,
        }
    }

    pub fn grad_a_pm(&self, mode: Mode) -> Vec3<T> {
        Vec3(match mode {
            Mode::QP => self.a11.g,
            Mode::QSV => self.a55.g,
            Mode::QSH => self.a66.g,
        })
    }

    /// Axis-axis entry of ∂²_ξG for ξ ⊥ ξ̄.
    pub fn h_pm(&self, mode: Mode) -> T {
        let four = T::lit(4.0);
        let d11 = self.a11.v - self.a55.v;
        match mode {
            Mode::QP => four * (self.a33.v - self.e2.v / d11),
            Mode::QSV => four * (self.a55.v + self.e2.v / d11),
            Mode::QSH => four * self.a55.v,
        }
    }

    /// `[(ω·∂_x)ξ̄]·ω`, the second fundamental form of the layer for ω ⊥ ξ̄.
    pub fn curvature(&self, omega: Vec3<T>) -> T {
        let grad = Vec3(self.layer.g);
        let gn = grad.norm();
        let n = grad * (T::one() / gn);
        let h = Mat3(self.layer.h);
        let hw = h.mul_vec(omega);
        (omega.dot(hw) - omega.dot(n) * n.dot(hw)) / gn
    }

    /// Mean of the principal curvatures of the layer through this point.
    pub fn mean_curvature(&self) -> T {
        let n = self.axis();
        let (e1, e2) = n.orthonormal_complement();
        (self.curvature(e1) + self.curvature(e2)) * T::lit(0.5)
    }
}

/// Gauss–Legendre nodes in the homotopy parameter s ∈ [0, 1] for E^ν.
pub const E_NU_NODES: usize = 8;

/// Pointwise weight E^ν = ∫₀¹ ∂G/∂ν(a + s r) ds with r = ã − a, on any phase scalar type.
pub fn weight_e_nu<T: Real, S: PhaseScalar<T>>(
    base: &Local<T>,
    pert: &Local<T>,
    mode: Mode,
    nu: Param,
    xi: [S; 3],
) -> Result<S, ModelError> {
    let p0 = lift_params::<T, S>(base);
    let p1 = lift_params::<T, S>(pert);
    let n = lift_axis::<T, S>(&base.layer);
    let (u, v) = invariants(&n, &xi);
    let same = base.a11 == pert.a11 && base.a33 == pert.a33 && base.e2 == pert.e2;
    if same {
        return param_derivative(mode, nu, &p0, u, v).map_err(|d| base.disc_err(d));
    }
    let (s_nodes, s_w) = gauss_legendre_on(E_NU_NODES, 0.0, 1.0);
    let mut acc = S::cst(T::zero());
    for (s, w) in s_nodes.iter().zip(s_w) {
        let s = T::lit(*s);
        let p = Lifted {
            a11: p0.a11 + (p1.a11 - p0.a11) * s,
            a33: p0.a33 + (p1.a33 - p0.a33) * s,
            a55: p0.a55,
            a66: p0.a66,
            e2: p0.e2 + (p1.e2 - p0.e2) * s,
        };
        acc = acc + param_derivative(mode, nu, &p, u, v).map_err(|d| base.disc_err(d))? * T::lit(w);
    }
    Ok(acc)
}

impl<T: Real> MaterialModel<T> {
    pub fn homogeneous(a11: f64, a33: f64, a55: f64, a66: f64, e2: f64, axis: [f64; 3]) -> Self {
        let ax = axis;
        MaterialModel {
            a11: Field::constant(a11),
            a33: Field::constant(a33),
            a55: Field::constant(a55),
            a66: Field::constant(a66),
            e2: Field::constant(e2),
            layer: Field::analytic(move |p| p[0] * T::lit(ax[0]) + p[1] * T::lit(ax[1]) + p[2] * T::lit(ax[2])),
            domain_radius: T::one(),
        }
    }

    /// Isotropic medium with Lamé parameters λ, μ (flat layers along z).
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        Self::homogeneous(lambda + 2.0 * mu, lambda + 2.0 * mu, mu, mu, 0.0, [0.0, 0.0, 1.0])
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.domain_radius = T::lit(r);
        self
    }

    pub fn local(&self, x: Vec3<T>) -> Local<T> {
        Local {
            x,
            a11: self.a11.jet(x),
            a33: self.a33.jet(x),
            a55: self.a55.jet(x),
            a66: self.a66.jet(x),
            e2: self.e2.jet(x),
            layer: self.layer.jet(x),
        }
    }

    /// Model obtained by adding perturbation fields to a11, a33 and E².
    pub fn perturbed(&self, r11: Field<T>, r33: Field<T>, re2: Field<T>) -> Self {
        let mut m = self.clone();
        m.a11 = m.a11.plus(r11);
        m.a33 = m.a33.plus(r33);
        m.e2 = m.e2.plus(re2);
        m
    }

    /// Pointwise checks of the standing assumptions (parameter ordering, axis, discriminant).
    pub fn validate_at(&self, x: Vec3<T>) -> Result<(), ModelError> {
        let l = self.local(x);
        let xf = x.to_f64();
        let d11 = l.a11.v - l.a55.v;
        let d33 = l.a33.v - l.a55.v;
        if !(d11 > T::zero() && d33 > T::zero()) {
            return Err(ModelError::Ordering { x: xf, d11: d11.as_f64(), d33: d33.as_f64() });
        }
        if !(Vec3(l.layer.g).norm() > T::lit(1e-12)) {
            return Err(ModelError::DegenerateAxis { x: xf });
        }
        // D(u) = (d11 (1-u) + d33 u)² - 4E² u(1-u) on u ∈ [0,1] is quadratic in u; check its minimum.
        let e2 = l.e2.v;
        let c2 = (d33 - d11) * (d33 - d11) + T::lit(4.0) * e2;
        let c1 = T::lit(2.0) * d11 * (d33 - d11) - T::lit(4.0) * e2;
        let c0 = d11 * d11;
        let mut umin = [T::zero(), T::one()].into_iter().chain(if c2 > T::zero() {
            Some((-c1 / (T::lit(2.0) * c2)).max(T::zero()).min(T::one()))
        } else {
            None
        });
        let dmin = umin
            .by_ref()
            .map(|u| c2 * u * u + c1 * u + c0)
            .fold(T::infinity(), |a, b| a.min(b));
        if !(dmin > T::zero()) {
            return Err(ModelError::Discriminant { x: xf, disc: dmin.as_f64() });
        }
        Ok(())
    }

    pub fn eval_g(&self, mode: Mode, x: Vec3<T>, xi: Vec3<T>) -> Result<T, ModelError> {
        self.local(x).g(mode, xi)
    }

    pub fn grad_xi_g(&self, mode: Mode, x: Vec3<T>, xi: Vec3<T>) -> Result<Vec3<T>, ModelError> {
        let j = self.local(x).jet1(mode, xi)?;
        Ok(Vec3([j.g[3], j.g[4], j.g[5]]))
    }

    pub fn grad_x_g(&self, mode: Mode, x: Vec3<T>, xi: Vec3<T>) -> Result<Vec3<T>, ModelError> {
        let j = self.local(x).jet1(mode, xi)?;
        Ok(Vec3([j.g[0], j.g[1], j.g[2]]))
    }

    pub fn hess_xi_g(&self, mode: Mode, x: Vec3<T>, xi: Vec3<T>) -> Result<Mat3<T>, ModelError> {
        let j = self.local(x).jet2(mode, xi)?;
        let mut m = Mat3::zero();
        for a in 0..3 {
            for b in 0..3 {
                m.0[a][b] = j.h[3 + a][3 + b];
            }
        }
        Ok(m)
    }

    pub fn h_pm(&self, mode: Mode, x: Vec3<T>) -> T {
        self.local(x).h_pm(mode)
    }

    pub fn xi_t_xi_i(&self, x: Vec3<T>, xi: Vec3<T>) -> (T, T) {
        self.local(x).xi_t_xi_i(xi)
    }

    /// Covector whose group velocity ∂_ξG equals ω (damped Newton from ω/(4a_±)).
    pub fn xi_of_omega(&self, mode: Mode, x: Vec3<T>, omega: Vec3<T>) -> Result<Vec3<T>, ModelError> {
        xi_of_omega_local(&self.local(x), mode, omega)
    }

    /// ½(ω·∂_x∂_ξG − ∂_xG·∂²_ξG) at ξ(ω): the curvature of the ray X(t) = x + ωt + αt² + …
    pub fn alpha(&self, mode: Mode, x: Vec3<T>, omega: Vec3<T>) -> Result<Vec3<T>, ModelError> {
        let l = self.local(x);
        let xi = xi_of_omega_local(&l, mode, omega)?;
        let j = l.jet2(mode, xi)?;
        let mut out = Vec3::zero();
        for k in 0..3 {
            let mut acc = T::zero();
            for i in 0..3 {
                acc += omega[i] * j.h[i][3 + k] - j.g[i] * j.h[3 + i][3 + k];
            }
            out[k] = acc * T::lit(0.5);
        }
        Ok(out)
    }

    /// ∂_t ξ_T at t = 0 for ω ⊥ ξ̄: curvature term minus axial parameter gradient term.
    pub fn d_t_xi_t(&self, mode: Mode, x: Vec3<T>, omega: Vec3<T>) -> T {
        let l = self.local(x);
        let a = l.a_pm(mode);
        l.curvature(omega) / (T::lit(4.0) * a) - l.axis().dot(l.grad_a_pm(mode)) / (T::lit(8.0) * a * a)
    }

    /// ∂_{ω∥} ξ_T for ζ = s ξ̄: sgn(s)/h_±.
    pub fn d_par_xi_t(&self, mode: Mode, x: Vec3<T>, s: T) -> T {
        sgn(s) / self.h_pm(mode, x)
    }
}

pub fn xi_of_omega_local<T: Real>(l: &Local<T>, mode: Mode, omega: Vec3<T>) -> Result<Vec3<T>, ModelError> {
    let on = omega.norm();
    if on == T::zero() {
        return Err(ModelError::ZeroCovector { x: l.x.to_f64() });
    }
    let tol = T::lit(1e-12).max(T::lit(100.0) * T::epsilon()) * on;
    let mut xi = omega * (T::one() / (T::lit(4.0) * l.a_pm(mode)));
    let resid = |xi: Vec3<T>| -> Result<(Vec3<T>, Mat3<T>), ModelError> {
        let j = l.jet2(mode, xi)?;
        let mut h = Mat3::zero();
        for a in 0..3 {
            for b in 0..3 {
                h.0[a][b] = j.h[3 + a][3 + b];
            }
        }
        Ok((Vec3([j.g[3], j.g[4], j.g[5]]) - omega, h))
    };
    let (mut r, mut h) = resid(xi)?;
    for _ in 0..50 {
        let rn = r.norm();
        if rn < tol {
            return Ok(xi);
        }
        let Some(hi) = h.inverse() else { break };
        let step = hi.mul_vec(r);
        let mut lam = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand = xi - step * lam;
            if let Ok((rc, hc)) = resid(cand) {
                if rc.norm() < rn {
                    xi = cand;
                    r = rc;
                    h = hc;
                    accepted = true;
                    break;
                }
            }
            lam *= T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    if r.norm() < tol {
        Ok(xi)
    } else {
        Err(ModelError::Convexity { x: l.x.to_f64(), residual: r.norm().as_f64() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic_model() -> MaterialModel<f64> {
        MaterialModel {
            a11: Field::expr("4 + 0.3*x - 0.2*y*z").unwrap(),
            a33: Field::expr("3 + 0.1*sin(y) + 0.05*z").unwrap(),
            a55: Field::expr("1 + 0.05*x*x").unwrap(),
            a66: Field::constant(1.2),
            e2: Field::expr("2 + 0.1*cos(x + z)").unwrap(),
            layer: Field::expr("z + 0.2*x*x + 0.1*y").unwrap(),
            domain_radius: 1.0,
        }
    }

    #[test]
    fn plug_in_value_at_generic_point() {
        // a11=4, a33=3, a55=1, E²=2, ξ_I²=ξ_T²=1/2
        let m = MaterialModel::<f64>::homogeneous(4.0, 3.0, 1.0, 1.0, 2.0, [0.0, 0.0, 1.0]);
        let xi = Vec3::new(0.5f64.sqrt(), 0.0, 0.5f64.sqrt());
        let x = Vec3::zero();
        let a = 3.0 * 0.5 + 2.0 * 0.5;
        let d: f64 = a * a - 4.0 * 2.0 * 0.25;
        let gp = 5.0 * 0.5 + 4.0 * 0.5 + d.sqrt();
        let gm = 5.0 * 0.5 + 4.0 * 0.5 - d.sqrt();
        assert!((m.eval_g(Mode::QP, x, xi).unwrap() - gp).abs() < 1e-14);
        assert!((m.eval_g(Mode::QSV, x, xi).unwrap() - gm).abs() < 1e-14);
        assert!((m.h_pm(Mode::QP, x) - 28.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn equatorial_gradient_and_hessian() {
        let m = generic_model();
        let x = Vec3::new(0.2, -0.1, 0.3);
        let l = m.local(x);
        let n = l.axis();
        let (e1, e2) = n.orthonormal_complement();
        let xi = e1 * 0.7 + e2 * 0.2;
        for mode in [Mode::QP, Mode::QSV] {
            let a = l.a_pm(mode);
            let g = m.grad_xi_g(mode, x, xi).unwrap();
            assert!((g - xi * (4.0 * a)).norm() < 1e-12);
            let h = m.hess_xi_g(mode, x, xi).unwrap();
            assert!((n.dot(h.mul_vec(n)) - l.h_pm(mode)).abs() < 1e-10);
            assert!(n.dot(h.mul_vec(e1)).abs() < 1e-10);
            let dir = n.dot(m.grad_x_g(mode, x, xi).unwrap());
            let expect = 2.0 * n.dot(l.grad_a_pm(mode)) * xi.norm2();
            assert!((dir - expect).abs() < 1e-10, "{dir} vs {expect}");
        }
    }

    #[test]
    fn gradients_match_sixth_order_differences() {
        let m = generic_model();
        let x = Vec3::new(0.1, 0.25, -0.2);
        let xi = Vec3::new(0.3, -0.5, 0.6);
        let c = [-1.0 / 60.0, 3.0 / 20.0, -3.0 / 4.0, 0.0, 3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
        let h = 1e-3;
        for mode in [Mode::QP, Mode::QSV, Mode::QSH] {
            let gx = m.grad_x_g(mode, x, xi).unwrap();
            let gxi = m.grad_xi_g(mode, x, xi).unwrap();
            for a in 0..3 {
                let mut fx = 0.0;
                let mut fxi = 0.0;
                for (k, ck) in c.iter().enumerate() {
                    let o = (k as f64 - 3.0) * h;
                    let mut xs = x;
                    xs[a] += o;
                    let mut xis = xi;
                    xis[a] += o;
                    fx += ck * m.eval_g(mode, xs, xi).unwrap();
                    fxi += ck * m.eval_g(mode, x, xis).unwrap();
                }
                fx /= h;
                fxi /= h;
                assert!((gx[a] - fx).abs() < 1e-8 * gx.norm().max(1.0), "{mode} x{a}");
                assert!((gxi[a] - fxi).abs() < 1e-8 * gxi.norm(), "{mode} xi{a}");
            }
        }
    }

    #[test]
    fn newton_inverse_of_group_velocity() {
        let m = generic_model();
        let x = Vec3::new(0.1, 0.2, 0.1);
        let n = m.local(x).axis();
        let (e1, _) = n.orthonormal_complement();
        let omega = (n + e1).normalized();
        for mode in [Mode::QP, Mode::QSV] {
            let xi = m.xi_of_omega(mode, x, omega).unwrap();
            let back = m.grad_xi_g(mode, x, xi).unwrap();
            assert!((back - omega).norm() < 1e-12);
            let xe = m.xi_of_omega(mode, x, e1).unwrap();
            assert!((xe - e1 * (1.0 / (4.0 * m.local(x).a_pm(mode)))).norm() < 1e-12);
        }
    }

    #[test]
    fn spherical_layer_curvature_and_transverse_rate() {
        let mut m = MaterialModel::<f64>::homogeneous(3.0, 2.5, 1.0, 1.0, 0.3, [0.0, 0.0, 1.0]);
        m.layer = Field::expr("sqrt(x*x + y*y + z*z)").unwrap();
        let x = Vec3::new(0.0, 0.0, 1.0);
        let l = m.local(x);
        assert!((l.curvature(Vec3::new(1.0, 0.0, 0.0)) - 1.0).abs() < 1e-13);
        assert!((l.mean_curvature() - 1.0).abs() < 1e-13);
        assert!((m.d_t_xi_t(Mode::QP, x, Vec3::new(0.0, 1.0, 0.0)) - 1.0 / 12.0).abs() < 1e-13);
        assert_eq!(m.d_par_xi_t(Mode::QP, x, 2.0), 1.0 / m.h_pm(Mode::QP, x));
    }

    #[test]
    fn validation_reports_violations() {
        let m = MaterialModel::<f64>::homogeneous(1.0, 3.0, 1.5, 1.0, 0.0, [0.0, 0.0, 1.0]);
        assert!(matches!(m.validate_at(Vec3::zero()), Err(ModelError::Ordering { .. })));
        let m = MaterialModel::<f64>::homogeneous(4.0, 3.0, 1.0, 1.0, 10.0, [0.0, 0.0, 1.0]);
        assert!(matches!(m.validate_at(Vec3::zero()), Err(ModelError::Discriminant { .. })));
        let m = MaterialModel::<f64>::homogeneous(4.0, 3.0, 1.0, 1.0, 2.0, [0.0, 0.0, 1.0]);
        assert!(m.validate_at(Vec3::zero()).is_ok());
    }

    #[test]
    fn e_nu_reduces_to_derivative_and_uses_log_mean() {
        let base = MaterialModel::<f64>::homogeneous(4.0, 3.0, 1.0, 1.0, 0.5, [0.0, 0.0, 1.0]);
        let pert = base.perturbed(Field::constant(0.8), Field::constant(0.0), Field::constant(0.0));
        let x = Vec3::zero();
        let (lb, lp) = (base.local(x), pert.local(x));
        // equatorial covector: E^{E²}_± = ξ_T² f, f = ∓2 ∫ ds/(a11 + s r11 − a55); check the ratio at tiny ξ_T
        let xi = Vec3::new(0.6, 0.0, 1e-4);
        for (mode, s) in [(Mode::QP, -1.0), (Mode::QSV, 1.0)] {
            let e = weight_e_nu(&lb, &lp, mode, Param::E2, xi.0).unwrap();
            let f = e / (1e-8);
            let log_mean = (3.8f64 / 3.0).ln() / 0.8;
            assert!((f - s * 2.0 * log_mean).abs() < 1e-6, "{mode}: {f}");
        }
        let e = weight_e_nu(&lb, &lb, Mode::QP, Param::A33, xi.0).unwrap();
        let d = lb.param_derivative(Mode::QP, Param::A33, xi.0).unwrap();
        assert_eq!(e, d);
    }
}
