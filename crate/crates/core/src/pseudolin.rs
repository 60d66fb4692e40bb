//! Pseudolinearization: weights E^ν, the ray transforms I^ν and Ĩ^ν, the back-projection L
//! and the normal operators N^ν = L∘I^ν, Ñ^ν = L∘Ĩ^ν.
//!
//! `base` is the model whose flow carries the ray integrals; `pert` is the second model whose
//! flow Jacobians enter the weights. All operator values are complex so oscillatory probes
//! can be applied directly.

use num_complex::Complex;

use crate::field::{Field, GridField, GridSpec};
use crate::jet::{Jet1, PhaseScalar};
use crate::linalg::{Mat3, Mat6, Vec3};
use crate::material_model::{weight_e_nu, Local, MaterialModel, ModelError, Mode, Param};
use crate::quadrature::{composite_gauss, gauss_legendre, gauss_legendre_on, SphereNode, SphereQuadrature};
use crate::raytracer::{PhasePoint, RayError, RayThrough, RayTracer};
use crate::real::Real;

pub type Cx<T> = Complex<T>;
pub type CVec<T> = [Cx<T>; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutoffProfile {
    /// Quintic smoothstep transition (C²).
    C2,
    /// exp(−1/t) transition (C^∞).
    Smooth,
    /// χ ≡ 1.
    None,
}

/// Equatorial cutoff χ(u), u = ξ_T/|ξ|: 1 for |u| ≤ ε/2, 0 for |u| ≥ ε.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoff {
    pub eps: f64,
    pub profile: CutoffProfile,
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff { eps: 0.15, profile: CutoffProfile::C2 }
    }
}

impl Cutoff {
    pub fn new(eps: f64, profile: CutoffProfile) -> Self {
        Cutoff { eps, profile }
    }

    pub fn none() -> Self {
        Cutoff { eps: 1.0, profile: CutoffProfile::None }
    }

    pub fn value<T: Real>(&self, u: T) -> T {
        if self.profile == CutoffProfile::None {
            return T::one();
        }
        let e = T::lit(self.eps);
        let a = u.abs();
        if a <= e * T::lit(0.5) {
            return T::one();
        }
        if a >= e {
            return T::zero();
        }
        let s = (a - e * T::lit(0.5)) / (e * T::lit(0.5));
        match self.profile {
            CutoffProfile::C2 => {
                let p = s * s * s * (s * (s * T::lit(6.0) - T::lit(15.0)) + T::lit(10.0));
                T::one() - p
            }
            CutoffProfile::Smooth => {
                let psi = |t: T| if t <= T::zero() { T::zero() } else { (-T::one() / t).exp() };
                let a = psi(T::one() - s);
                a / (a + psi(s))
            }
            CutoffProfile::None => T::one(),
        }
    }

    /// χ at covector ξ over base point with the given local axis.
    pub fn at<T: Real>(&self, loc: &Local<T>, xi: Vec3<T>) -> T {
        let (xt, _) = loc.xi_t_xi_i(xi);
        self.value(xt / xi.norm())
    }
}

/// Where ∂Ξ̃/∂(x,ξ) at remaining time comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianSource {
    /// Restart the perturbed flow from each node and integrate its variational equations to exit.
    Exact,
    /// Use the base flow's own Jacobian J(exit)·J(t)⁻¹ (exact when both models coincide).
    Background,
}

/// Ray quadrature rule along a traced trajectory.
#[derive(Clone, Copy, Debug)]
pub enum RayQuadrature {
    /// Gauss–Legendre with `per_step` nodes on every accepted integrator step.
    Mesh { per_step: usize },
    /// Composite Gauss–Legendre on `[t0, t1]` (relative to the anchor), clipped to the ray.
    Window { t0: f64, t1: f64, panels: usize, per_panel: usize },
}

impl Default for RayQuadrature {
    fn default() -> Self {
        RayQuadrature::Mesh { per_step: 4 }
    }
}

/// Sphere rule for L: Gauss–Legendre in s = ω·ξ̄ times trapezoid in azimuth.
#[derive(Clone, Copy, Debug)]
pub struct SphereRule {
    pub n_s: usize,
    pub n_phi: usize,
    /// Restrict s to the band where χ can be nonzero.
    pub band: bool,
}

impl Default for SphereRule {
    fn default() -> Self {
        SphereRule { n_s: 64, n_phi: 128, band: true }
    }
}

/// E^ν and its phase-space derivatives at one point, indexed by [`Param`] order a11, a33, E².
#[derive(Clone, Copy, Debug)]
pub struct Weights<T> {
    pub e: [T; 3],
    pub dx: [Vec3<T>; 3],
    pub dxi: [Vec3<T>; 3],
}

/// One ray quadrature node with its weights and the Ξ̃ rows of the remaining-time Jacobian.
#[derive(Clone, Debug)]
pub struct RayNode<T> {
    pub t: T,
    pub w: T,
    pub z: PhasePoint<T>,
    pub weights: Weights<T>,
    pub b_x: Mat3<T>,
    pub b_xi: Mat3<T>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PseudoError {
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error("∂Ξ̃/∂ξ is singular at x = {x:?}")]
    Singular { x: [f64; 3] },
    #[error("node {index}: {source}")]
    Node { index: usize, source: Box<PseudoError> },
}

impl From<ModelError> for PseudoError {
    fn from(e: ModelError) -> Self {
        PseudoError::Ray(RayError::Model(e))
    }
}

pub fn param_index(nu: Param) -> usize {
    match nu {
        Param::A11 => 0,
        Param::A33 => 1,
        Param::E2 => 2,
    }
}

fn cmat<T: Real>(m: &Mat3<T>, v: &CVec<T>) -> CVec<T> {
    let mut out = [Cx::new(T::zero(), T::zero()); 3];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            *o = *o + *vj * m.0[i][j];
        }
    }
    out
}

fn cadd<T: Real>(a: &mut CVec<T>, b: &CVec<T>, s: T) {
    for i in 0..3 {
        a[i] = a[i] + b[i] * s;
    }
}

pub fn czero<T: Real>() -> CVec<T> {
    [Cx::new(T::zero(), T::zero()); 3]
}

pub fn real_vec<T: Real>(v: Vec3<T>) -> CVec<T> {
    [Cx::new(v[0], T::zero()), Cx::new(v[1], T::zero()), Cx::new(v[2], T::zero())]
}

/// Difference fields `pert − base` for a11, a33, E².
pub fn differences<T: Real>(base: &MaterialModel<T>, pert: &MaterialModel<T>) -> [Field<T>; 3] {
    let d = |a: &Field<T>, b: &Field<T>| a.clone().plus(b.clone().scaled(-T::one()));
    [d(&pert.a11, &base.a11), d(&pert.a33, &base.a33), d(&pert.e2, &base.e2)]
}

pub struct PseudoLin<'a, T: Real> {
    pub base: &'a MaterialModel<T>,
    pub pert: &'a MaterialModel<T>,
    pub mode: Mode,
    pub cutoff: Cutoff,
    pub source: JacobianSource,
    pub tol: f64,
}

impl<'a, T: Real> PseudoLin<'a, T> {
    pub fn new(base: &'a MaterialModel<T>, pert: &'a MaterialModel<T>, mode: Mode) -> Self {
        PseudoLin { base, pert, mode, cutoff: Cutoff::default(), source: JacobianSource::Exact, tol: 1e-10 }
    }

    pub fn with_cutoff(mut self, c: Cutoff) -> Self {
        self.cutoff = c;
        self
    }

    pub fn with_source(mut self, s: JacobianSource) -> Self {
        self.source = s;
        self
    }

    pub fn base_tracer(&self) -> RayTracer<'a, T> {
        RayTracer::new(self.base, self.mode).with_tol(self.tol)
    }

    pub fn pert_tracer(&self) -> RayTracer<'a, T> {
        RayTracer::new(self.pert, self.mode).with_tol(self.tol)
    }

    pub fn weight(&self, nu: Param, p: PhasePoint<T>) -> Result<T, ModelError> {
        weight_e_nu(&self.base.local(p.x), &self.pert.local(p.x), self.mode, nu, p.xi.0)
    }

    pub fn weights(&self, p: PhasePoint<T>) -> Result<Weights<T>, ModelError> {
        let lb = self.base.local(p.x);
        let lp = self.pert.local(p.x);
        let xi: [Jet1<T>; 3] = [Jet1::coord(p.xi[0], 3), Jet1::coord(p.xi[1], 4), Jet1::coord(p.xi[2], 5)];
        let mut w = Weights { e: [T::zero(); 3], dx: [Vec3::zero(); 3], dxi: [Vec3::zero(); 3] };
        for nu in Param::ALL {
            let k = param_index(nu);
            let j: Jet1<T> = weight_e_nu(&lb, &lp, self.mode, nu, xi)?;
            w.e[k] = j.v;
            w.dx[k] = Vec3::new(j.g[0], j.g[1], j.g[2]);
            w.dxi[k] = Vec3::new(j.g[3], j.g[4], j.g[5]);
        }
        Ok(w)
    }

    /// Ξ̃ rows (∂Ξ̃/∂x, ∂Ξ̃/∂ξ) of the perturbed flow from `z` to its exit.
    pub fn exit_rows(&self, z: PhasePoint<T>) -> Result<(Mat3<T>, Mat3<T>), RayError> {
        let (_, tr) = self.pert_tracer().trace_to_exit_with_jacobian(z)?;
        let j = Mat6::from_slice(&tr.y_end[6..]);
        Ok((j.block(1, 0), j.block(1, 1)))
    }

    fn rows_at(&self, ray: &RayThrough<T>, t: T, z: PhasePoint<T>) -> Result<(Mat3<T>, Mat3<T>), RayError> {
        match self.source {
            JacobianSource::Background => {
                let j = ray.to_exit_jacobian(t);
                Ok((j.block(1, 0), j.block(1, 1)))
            }
            JacobianSource::Exact => self.exit_rows(z),
        }
    }

    /// Quadrature nodes along the base ray; nodes whose base point fails `support` are dropped.
    pub fn ray_nodes(
        &self,
        ray: &RayThrough<T>,
        quad: RayQuadrature,
        support: Option<&dyn Fn(Vec3<T>) -> bool>,
    ) -> Result<Vec<RayNode<T>>, PseudoError> {
        let (lo, hi) = ray.span();
        let mut tw: Vec<(T, T)> = Vec::new();
        match quad {
            RayQuadrature::Mesh { per_step } => {
                let (g, w) = gauss_legendre(per_step);
                let mut mesh: Vec<T> = ray.bwd.mesh().into_iter().rev().map(|t| -t).collect();
                mesh.pop();
                mesh.extend(ray.fwd.mesh());
                for p in mesh.windows(2) {
                    let (a, b) = (p[0], p[1]);
                    if b <= a {
                        continue;
                    }
                    let (m, r) = ((a + b) * T::lit(0.5), (b - a) * T::lit(0.5));
                    for (gi, wi) in g.iter().zip(&w) {
                        tw.push((m + r * T::lit(*gi), r * T::lit(*wi)));
                    }
                }
            }
            RayQuadrature::Window { t0, t1, panels, per_panel } => {
                let a = T::lit(t0).max(lo);
                let b = T::lit(t1).min(hi);
                if b > a {
                    let (af, bf) = (a.as_f64(), b.as_f64());
                    let breaks: Vec<f64> = (0..=panels).map(|k| af + (bf - af) * k as f64 / panels as f64).collect();
                    let (g, w) = composite_gauss(&breaks, per_panel);
                    tw.extend(g.into_iter().zip(w).map(|(t, w)| (T::lit(t), T::lit(w))));
                }
            }
        }
        let mut out = Vec::with_capacity(tw.len());
        for (t, w) in tw {
            let (z, _) = ray.at(t);
            if let Some(s) = support {
                if !s(z.x) {
                    continue;
                }
            }
            let weights = self.weights(z)?;
            let (b_x, b_xi) = self.rows_at(ray, t, z)?;
            out.push(RayNode { t, w, z, weights, b_x, b_xi });
        }
        Ok(out)
    }

    /// I^ν[f] = −∫ E^ν ∂Ξ̃/∂ξ f(X) dt over prepared nodes.
    pub fn transform_i(&self, nu: Param, nodes: &[RayNode<T>], f: &dyn Fn(Vec3<T>) -> CVec<T>) -> CVec<T> {
        let k = param_index(nu);
        let mut acc = czero();
        for n in nodes {
            let v = cmat(&n.b_xi, &f(n.z.x));
            cadd(&mut acc, &v, -n.w * n.weights.e[k]);
        }
        acc
    }

    /// Ĩ^ν[u] = ∫ (−∂Ξ̃/∂ξ ∂_xE^ν + ∂Ξ̃/∂x ∂_ξE^ν) u(X) dt over prepared nodes.
    pub fn transform_itilde(&self, nu: Param, nodes: &[RayNode<T>], u: &dyn Fn(Vec3<T>) -> Cx<T>) -> CVec<T> {
        let k = param_index(nu);
        let mut acc = czero();
        for n in nodes {
            let a = n.b_x.mul_vec(n.weights.dxi[k]) - n.b_xi.mul_vec(n.weights.dx[k]);
            let uv = u(n.z.x) * n.w;
            for i in 0..3 {
                acc[i] = acc[i] + uv * a[i];
            }
        }
        acc
    }

    /// I^ν[f](x, ξ) along the full base ray through an interior or boundary point.
    pub fn transform_i_at(
        &self,
        nu: Param,
        p: PhasePoint<T>,
        f: &dyn Fn(Vec3<T>) -> CVec<T>,
        quad: RayQuadrature,
    ) -> Result<CVec<T>, PseudoError> {
        let ray = self.base_tracer().ray_through(p)?;
        let nodes = self.ray_nodes(&ray, quad, None)?;
        Ok(self.transform_i(nu, &nodes, f))
    }

    pub fn transform_itilde_at(
        &self,
        nu: Param,
        p: PhasePoint<T>,
        u: &dyn Fn(Vec3<T>) -> Cx<T>,
        quad: RayQuadrature,
    ) -> Result<CVec<T>, PseudoError> {
        let ray = self.base_tracer().ray_through(p)?;
        let nodes = self.ray_nodes(&ray, quad, None)?;
        Ok(self.transform_itilde(nu, &nodes, u))
    }

    /// Largest |ω·ξ̄| on which χ(u(ω)) can be nonzero, found by bisection on eight meridians.
    pub fn band_limit(&self, x: Vec3<T>) -> Result<T, ModelError> {
        if self.cutoff.profile == CutoffProfile::None {
            return Ok(T::one());
        }
        let loc = self.base.local(x);
        let n = loc.axis();
        let (e1, e2) = n.orthonormal_complement();
        let eps = T::lit(self.cutoff.eps);
        let mut smax = T::zero();
        for k in 0..8 {
            let phi = T::lit(std::f64::consts::PI * k as f64 / 4.0);
            let dir = e1 * phi.cos() + e2 * phi.sin();
            let u_of = |s: T| -> Result<T, ModelError> {
                let w = n * s + dir * (T::one() - s * s).max(T::zero()).sqrt();
                let xi = self.base.xi_of_omega(self.mode, x, w)?;
                let (xt, _) = loc.xi_t_xi_i(xi);
                Ok(xt.abs() / xi.norm())
            };
            let (mut lo, mut hi) = (T::zero(), T::one());
            if u_of(hi)? < eps {
                return Ok(T::one());
            }
            for _ in 0..50 {
                let mid = (lo + hi) * T::lit(0.5);
                if u_of(mid)? < eps {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            smax = smax.max(hi);
        }
        Ok((smax * T::lit(1.02)).min(T::one()))
    }

    pub fn sphere_nodes(&self, x: Vec3<T>, rule: SphereRule) -> Result<Vec<SphereNode<T>>, ModelError> {
        let axis = self.base.local(x).axis();
        let smax = if rule.band { self.band_limit(x)? } else { T::one() };
        let (s, w) = gauss_legendre_on(rule.n_s, -smax.as_f64(), smax.as_f64());
        Ok(SphereQuadrature::about_axis(axis, &s, &w, rule.n_phi).nodes)
    }

    /// Ξ̃ rows (∂Ξ̃/∂x, ∂Ξ̃/∂ξ) at (x, ξ) with remaining time to exit; `ray` is the base ray anchored there.
    pub fn anchor_rows(&self, ray: Option<&RayThrough<T>>, z: PhasePoint<T>) -> Result<(Mat3<T>, Mat3<T>), PseudoError> {
        match (self.source, ray) {
            (JacobianSource::Background, Some(r)) => {
                let j = r.to_exit_jacobian(T::zero());
                Ok((j.block(1, 0), j.block(1, 1)))
            }
            (JacobianSource::Background, None) => {
                let r = self.base_tracer().ray_through(z)?;
                let j = r.to_exit_jacobian(T::zero());
                Ok((j.block(1, 0), j.block(1, 1)))
            }
            (JacobianSource::Exact, _) => Ok(self.exit_rows(z)?),
        }
    }

    fn anchor_block(&self, ray: Option<&RayThrough<T>>, z: PhasePoint<T>) -> Result<Mat3<T>, PseudoError> {
        Ok(self.anchor_rows(ray, z)?.1)
    }

    /// L[v](x) = ∫ χ (−∂Ξ̃/∂ξ)⁻¹ v(x, ξ(ω)) dω over the given sphere nodes.
    pub fn adjoint_l(
        &self,
        x: Vec3<T>,
        nodes: &[SphereNode<T>],
        v: &dyn Fn(PhasePoint<T>) -> CVec<T>,
    ) -> Result<CVec<T>, PseudoError> {
        let loc = self.base.local(x);
        let mut acc = czero();
        for n in nodes {
            let xi = self.base.xi_of_omega(self.mode, x, n.omega)?;
            let chi = self.cutoff.at(&loc, xi);
            if chi == T::zero() {
                continue;
            }
            let z = PhasePoint::new(x, xi);
            let b = self.anchor_block(None, z)?;
            let binv = (b * (-T::one())).inverse().ok_or(PseudoError::Singular { x: x.to_f64() })?;
            cadd(&mut acc, &cmat(&binv, &v(z)), chi * n.weight);
        }
        Ok(acc)
    }

    /// N^ν[f](x) + Ñ^ν[u](x) at one point; either field may be absent.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_at(
        &self,
        nu: Param,
        x: Vec3<T>,
        f: Option<&dyn Fn(Vec3<T>) -> CVec<T>>,
        u: Option<&dyn Fn(Vec3<T>) -> Cx<T>>,
        nodes: &[SphereNode<T>],
        quad: &dyn Fn(&SphereNode<T>) -> RayQuadrature,
        support: Option<&dyn Fn(Vec3<T>) -> bool>,
    ) -> Result<CVec<T>, PseudoError> {
        let loc = self.base.local(x);
        let tracer = self.base_tracer();
        let mut acc = czero();
        for sn in nodes {
            let xi = self.base.xi_of_omega(self.mode, x, sn.omega)?;
            let chi = self.cutoff.at(&loc, xi);
            if chi == T::zero() {
                continue;
            }
            let z = PhasePoint::new(x, xi);
            let ray = tracer.ray_through(z)?;
            let rn = self.ray_nodes(&ray, quad(sn), support)?;
            let mut v = czero();
            if let Some(f) = f {
                let iv = self.transform_i(nu, &rn, f);
                cadd(&mut v, &iv, T::one());
            }
            if let Some(u) = u {
                let iv = self.transform_itilde(nu, &rn, u);
                cadd(&mut v, &iv, T::one());
            }
            let b = self.anchor_block(Some(&ray), z)?;
            let binv = (b * (-T::one())).inverse().ok_or(PseudoError::Singular { x: x.to_f64() })?;
            cadd(&mut acc, &cmat(&binv, &v), chi * sn.weight);
        }
        Ok(acc)
    }

    /// N^ν[∇u] (or Ñ^ν[u] when `tilde`) at every node of `out`, for a gridded scalar u.
    pub fn apply_on_grid(
        &self,
        nu: Param,
        u: &GridField<T>,
        tilde: bool,
        out: &GridSpec,
        rule: SphereRule,
        quad: RayQuadrature,
    ) -> Result<Vec<[T; 3]>, PseudoError> {
        let grad = |y: Vec3<T>| real_vec(Vec3(u.jet(y).g));
        let val = |y: Vec3<T>| Cx::new(u.value(y), T::zero());
        let mut res = Vec::with_capacity(out.len());
        for idx in 0..out.len() {
            let x = Vec3::from_f64(out.node(idx));
            let nodes = self.sphere_nodes(x, rule)?;
            let v = if tilde {
                self.apply_at(nu, x, None, Some(&val), &nodes, &|_| quad, None)
            } else {
                self.apply_at(nu, x, Some(&grad), None, &nodes, &|_| quad, None)
            }
            .map_err(|e| PseudoError::Node { index: idx, source: Box::new(e) })?;
            res.push([v[0].re, v[1].re, v[2].re]);
        }
        Ok(res)
    }

    /// Σ_ν I^ν[∇r_ν] + Ĩ^ν[r_ν] along the base ray from `p`, with r the model differences.
    pub fn pseudo_data_residual(
        &self,
        p: PhasePoint<T>,
        quad: RayQuadrature,
        support: Option<&dyn Fn(Vec3<T>) -> bool>,
    ) -> Result<Vec3<T>, PseudoError> {
        let r = differences(self.base, self.pert);
        let ray = self.base_tracer().ray_through(p)?;
        let nodes = self.ray_nodes(&ray, quad, support)?;
        let mut acc = czero();
        for nu in Param::ALL {
            let rk = &r[param_index(nu)];
            if rk.is_zero() {
                continue;
            }
            let f = |y: Vec3<T>| real_vec(rk.gradient(y));
            let u = |y: Vec3<T>| Cx::new(rk.value(y), T::zero());
            cadd(&mut acc, &self.transform_i(nu, &nodes, &f), T::one());
            cadd(&mut acc, &self.transform_itilde(nu, &nodes, &u), T::one());
        }
        Ok(Vec3::new(acc[0].re, acc[1].re, acc[2].re))
    }

    /// Ξ̃(exit) − Ξ(exit) for the two flows from the same boundary point.
    pub fn lens_difference(&self, p: PhasePoint<T>) -> Result<Vec3<T>, PseudoError> {
        let (a, _) = self.base_tracer().trace_to_exit(p)?;
        let (b, _) = self.pert_tracer().trace_to_exit(p)?;
        Ok(b.exit.xi - a.exit.xi)
    }

    /// Both sides of Z̃(t) − Z(t) = ∫₀ᵗ ∂Z̃/∂z(t−s, Z(s))·(Ṽ−V)(Z(s)) ds; returns (lhs, rhs, relative residual).
    pub fn su_identity_check(&self, p0: PhasePoint<T>, t: T, n_nodes: usize) -> Result<([T; 6], [T; 6], T), PseudoError> {
        let bt = self.base_tracer();
        let pt = self.pert_tracer();
        let z = bt.flow(p0, t)?;
        let zt = pt.flow(p0, t)?;
        let mut lhs = [T::zero(); 6];
        for i in 0..6 {
            lhs[i] = zt.y_end[i] - z.y_end[i];
        }
        let panels = n_nodes.div_ceil(8).max(1);
        let tf = t.as_f64();
        let breaks: Vec<f64> = (0..=panels).map(|k| tf * k as f64 / panels as f64).collect();
        let (s_nodes, s_w) = composite_gauss(&breaks, n_nodes.div_ceil(panels));
        let fb = bt.field();
        let fp = pt.field();
        let mut rhs = [T::zero(); 6];
        for (s, w) in s_nodes.iter().zip(&s_w) {
            let s = T::lit(*s);
            let y = z.state(s);
            let dv = {
                let a = fp.velocity(&y)?;
                let b = fb.velocity(&y)?;
                let mut d = [T::zero(); 6];
                for i in 0..6 {
                    d[i] = a[i] - b[i];
                }
                d
            };
            let j = pt.flow_jacobian(PhasePoint::from_state(&y), t - s)?;
            let jd = j.mul_vec(&dv);
            for i in 0..6 {
                rhs[i] += T::lit(*w) * jd[i];
            }
        }
        let mut num = T::zero();
        let mut den = T::zero();
        for i in 0..6 {
            num += (lhs[i] - rhs[i]).powi(2);
            den += lhs[i].powi(2);
        }
        let rel = if den > T::zero() { (num / den).sqrt() } else { num.sqrt() };
        Ok((lhs, rhs, rel))
    }
}

/// Convenience: a scalar grid field sampled from a closure on `spec`.
pub fn grid_from_fn<T: Real>(spec: &GridSpec, f: impl Fn([f64; 3]) -> f64) -> GridField<T> {
    GridField::from_fn(spec.clone(), f)
}
