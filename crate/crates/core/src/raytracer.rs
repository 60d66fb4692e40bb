//! Hamilton flow of G, domain exit, lens records, flow Jacobians and the
//! boundary-travel-time reconstruction of exit covectors.

use crate::linalg::{Mat3, Mat6, Vec3};
use crate::material_model::{MaterialModel, ModelError, Mode};
use crate::ode::{Dopri5, OdeError, OdeOptions, Step};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RayError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integrator step underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),
    #[error("ray did not exit before t_max = {t_max} (trapped)")]
    Trapped { t_max: f64 },
    #[error("ray meets the boundary tangentially at x = {x:?}")]
    Grazing { x: [f64; 3] },
    #[error("start point x = {x:?} is outside the domain")]
    Outside { x: [f64; 3] },
    #[error("two-point shooting from {x0:?} to {x1:?} did not converge (miss {miss:e})")]
    Shooting { x0: [f64; 3], x1: [f64; 3], miss: f64 },
    #[error("no unique outward root of G = 1/2 at x = {x:?}")]
    BoundaryConvexity { x: [f64; 3] },
    #[error("flow Jacobian block is singular at t = {t}")]
    SingularJacobian { t: f64 },
}

impl From<OdeError<ModelError>> for RayError {
    fn from(e: OdeError<ModelError>) -> Self {
        match e {
            OdeError::StepUnderflow { t } => RayError::StepUnderflow { t },
            OdeError::TooManySteps(n) => RayError::TooManySteps(n),
            OdeError::Rhs(m) => RayError::Model(m),
        }
    }
}

/// Ball `{|x|² < R²}`; level function `b(x) = |x|² − R²`.
#[derive(Clone, Copy, Debug)]
pub struct Ball<T> {
    pub radius: T,
}

impl<T: Real> Ball<T> {
    pub fn level(&self, x: Vec3<T>) -> T {
        x.norm2() - self.radius * self.radius
    }
    pub fn grad_level(&self, x: Vec3<T>) -> Vec3<T> {
        x * T::lit(2.0)
    }
    pub fn outward_normal(&self, x: Vec3<T>) -> Vec3<T> {
        x.normalized()
    }
    pub fn diameter(&self) -> T {
        self.radius * T::lit(2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint<T> {
    pub x: Vec3<T>,
    pub xi: Vec3<T>,
}

impl<T: Real> PhasePoint<T> {
    pub fn new(x: Vec3<T>, xi: Vec3<T>) -> Self {
        PhasePoint { x, xi }
    }
    pub fn to_state(self) -> [T; 6] {
        [self.x[0], self.x[1], self.x[2], self.xi[0], self.xi[1], self.xi[2]]
    }
    pub fn from_state(y: &[T]) -> Self {
        PhasePoint { x: Vec3::new(y[0], y[1], y[2]), xi: Vec3::new(y[3], y[4], y[5]) }
    }
    /// Same base point, reversed covector.
    pub fn reversed(self) -> Self {
        PhasePoint { x: self.x, xi: -self.xi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LensRecord<T> {
    pub entry: PhasePoint<T>,
    pub exit: PhasePoint<T>,
    pub tau: T,
}

/// Sampled flow: accepted integrator steps with dense output.
#[derive(Clone, Debug)]
pub struct Trajectory<T, const N: usize> {
    pub mode: Mode,
    pub t_start: T,
    pub t_end: T,
    pub y_start: [T; N],
    pub y_end: [T; N],
    pub steps: Vec<Step<T, N>>,
    /// True when `t_end` is the exit time from the domain.
    pub exited: bool,
}

impl<T: Real, const N: usize> Trajectory<T, N> {
    /// State at time `t`, clamped to the sampled interval.
    pub fn state(&self, t: T) -> [T; N] {
        if t <= self.t_start || self.steps.is_empty() {
            return self.y_start;
        }
        if t >= self.t_end {
            return self.y_end;
        }
        let idx = self.steps.partition_point(|s| s.t1() < t).min(self.steps.len() - 1);
        self.steps[idx].eval(t)
    }

    pub fn phase(&self, t: T) -> PhasePoint<T> {
        PhasePoint::from_state(&self.state(t))
    }

    /// Step boundaries (the dense-output mesh).
    pub fn mesh(&self) -> Vec<T> {
        let mut m = vec![self.t_start];
        m.extend(self.steps.iter().map(|s| s.t1()));
        if let Some(last) = m.last_mut() {
            *last = self.t_end;
        }
        m
    }
}

impl<T: Real> Trajectory<T, 42> {
    /// Flow Jacobian ∂(X,Ξ)/∂(x,ξ) at time `t`.
    pub fn jacobian(&self, t: T) -> Mat6<T> {
        Mat6::from_slice(&self.state(t)[6..])
    }
}

/// Right-hand side of Hamilton's equations, optionally with the variational system.
pub struct HamiltonField<'a, T: Real> {
    pub model: &'a MaterialModel<T>,
    pub mode: Mode,
}

impl<'a, T: Real> HamiltonField<'a, T> {
    pub fn velocity(&self, y: &[T; 6]) -> Result<[T; 6], ModelError> {
        let p = PhasePoint::from_state(y);
        let j = self.model.local(p.x).jet1(self.mode, p.xi)?;
        Ok([j.g[3], j.g[4], j.g[5], -j.g[0], -j.g[1], -j.g[2]])
    }

    /// Linearization K of the Hamilton vector field: rows (ẋ, ξ̇), columns (x, ξ).
    pub fn linearization(&self, p: PhasePoint<T>) -> Result<([T; 6], Mat6<T>), ModelError> {
        let j = self.model.local(p.x).jet2(self.mode, p.xi)?;
        let mut k = Mat6::zero();
        for i in 0..3 {
            for c in 0..6 {
                k.0[i][c] = j.h[3 + i][c];
                k.0[3 + i][c] = -j.h[i][c];
            }
        }
        Ok(([j.g[3], j.g[4], j.g[5], -j.g[0], -j.g[1], -j.g[2]], k))
    }

    pub fn velocity_with_jacobian(&self, y: &[T; 42]) -> Result<[T; 42], ModelError> {
        let (v, k) = self.linearization(PhasePoint::from_state(y))?;
        let j = Mat6::from_slice(&y[6..]);
        let kj = k.matmul(&j);
        let mut out = [T::zero(); 42];
        out[..6].copy_from_slice(&v);
        kj.write_slice(&mut out[6..]);
        Ok(out)
    }
}

/// Ray through an interior phase point, anchored there: forward to exit and backward to entry.
#[derive(Clone, Debug)]
pub struct RayThrough<T: Real> {
    pub anchor: PhasePoint<T>,
    /// Forward flow from the anchor with variational equations.
    pub fwd: Trajectory<T, 42>,
    /// Forward flow from the reversed anchor (x, −ξ).
    pub bwd: Trajectory<T, 42>,
}

impl<T: Real> RayThrough<T> {
    /// Time interval `[−t_entry, t_exit]` relative to the anchor.
    pub fn span(&self) -> (T, T) {
        (-self.bwd.t_end, self.fwd.t_end)
    }

    pub fn entry(&self) -> PhasePoint<T> {
        PhasePoint::from_state(&self.bwd.y_end).reversed()
    }

    pub fn exit(&self) -> PhasePoint<T> {
        PhasePoint::from_state(&self.fwd.y_end)
    }

    /// Phase point at time `t` and the Jacobian ∂Z(t)/∂z(0) of the anchored flow.
    pub fn at(&self, t: T) -> (PhasePoint<T>, Mat6<T>) {
        if t >= T::zero() {
            let y = self.fwd.state(t);
            (PhasePoint::from_state(&y), Mat6::from_slice(&y[6..]))
        } else {
            let y = self.bwd.state(-t);
            let jb = Mat6::from_slice(&y[6..]);
            (PhasePoint::from_state(&y).reversed(), reflect(&jb))
        }
    }

    /// Jacobian of the flow from Z(t) to the exit, J(exit)·J(t)⁻¹.
    pub fn to_exit_jacobian(&self, t: T) -> Mat6<T> {
        let (_, jt) = self.at(t);
        let je = Mat6::from_slice(&self.fwd.y_end[6..]);
        je.matmul(&jt.symplectic_inverse())
    }
}

/// Conjugation by diag(I, −I), mapping the flow of (x, −ξ) to the time-reversed flow.
fn reflect<T: Real>(j: &Mat6<T>) -> Mat6<T> {
    let mut r = *j;
    for a in 0..6 {
        for b in 0..6 {
            if (a < 3) != (b < 3) {
                r.0[a][b] = -r.0[a][b];
            }
        }
    }
    r
}

/// Outcome of a rank scan of ∂X/∂(t, ω).
#[derive(Clone, Debug)]
pub struct ConjugateReport<T> {
    pub min_singular: T,
    pub argmin: (T, Vec3<T>),
    /// Number of sign changes of det ∂X/∂(t,ω) along t, summed over directions.
    pub sign_changes: usize,
    pub rank_deficient: bool,
}

pub struct RayTracer<'a, T: Real> {
    pub model: &'a MaterialModel<T>,
    pub mode: Mode,
    pub domain: Ball<T>,
    pub tol: f64,
}

impl<'a, T: Real> RayTracer<'a, T> {
    pub fn new(model: &'a MaterialModel<T>, mode: Mode) -> Self {
        RayTracer { model, mode, domain: Ball { radius: model.domain_radius }, tol: 1e-10 }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn field(&self) -> HamiltonField<'a, T> {
        HamiltonField { model: self.model, mode: self.mode }
    }

    /// Rescales ξ so that G(x, ξ) = 1/2.
    pub fn normalize(&self, p: PhasePoint<T>) -> Result<PhasePoint<T>, RayError> {
        let g = self.model.eval_g(self.mode, p.x, p.xi)?;
        Ok(PhasePoint { x: p.x, xi: p.xi * (T::one() / (T::lit(2.0) * g).sqrt()) })
    }

    fn speed(&self, p: PhasePoint<T>) -> Result<T, RayError> {
        Ok(self.model.grad_xi_g(self.mode, p.x, p.xi)?.norm())
    }

    fn options(&self, p: PhasePoint<T>) -> Result<OdeOptions, RayError> {
        let mut o = OdeOptions::with_tol(self.tol);
        let v = self.speed(p)?;
        o.h_max = (T::lit(0.1) * self.domain.radius / v).as_f64();
        Ok(o)
    }

    /// Trapping limit: 50 domain diameters at half the initial group speed.
    pub fn t_max(&self, p: PhasePoint<T>) -> Result<T, RayError> {
        Ok(T::lit(100.0) * self.domain.diameter() / self.speed(p)?)
    }

    fn run<const N: usize>(
        &self,
        rhs: &mut impl FnMut(T, &[T; N]) -> Result<[T; N], ModelError>,
        y0: [T; N],
        opts: OdeOptions,
        t_end: T,
        stop_at_exit: bool,
    ) -> Result<Trajectory<T, N>, RayError> {
        let pos = |y: &[T; N]| Vec3::new(y[0], y[1], y[2]);
        let scale = self.domain.radius * self.domain.radius;
        let b_tol = T::lit(1e-12) * scale;
        let b0 = self.domain.level(pos(&y0));
        if stop_at_exit {
            if b0 > b_tol {
                return Err(RayError::Outside { x: pos(&y0).to_f64() });
            }
            // already on the boundary and moving outward
            if b0 >= -b_tol {
                let v = rhs(T::zero(), &y0)?;
                if self.domain.grad_level(pos(&y0)).dot(pos(&v)) >= T::zero() {
                    return Ok(Trajectory {
                        mode: self.mode,
                        t_start: T::zero(),
                        t_end: T::zero(),
                        y_start: y0,
                        y_end: y0,
                        steps: Vec::new(),
                        exited: true,
                    });
                }
            }
        }
        let mut st = Dopri5::new(rhs, T::zero(), y0, opts)?;
        let mut steps: Vec<Step<T, N>> = Vec::new();
        while st.t < t_end {
            let step = st.step(rhs, t_end)?;
            let b1 = self.domain.level(pos(&step.y1));
            if stop_at_exit && b1 > T::zero() {
                let (t_exit, last) = self.locate_exit(rhs, &step, opts, b_tol)?;
                steps.push(last);
                let y_end = steps.last().map(|s| s.y1).unwrap_or(y0);
                let v = rhs(t_exit, &y_end)?;
                if !(self.domain.grad_level(pos(&y_end)).dot(pos(&v)) > T::zero()) {
                    return Err(RayError::Grazing { x: pos(&y_end).to_f64() });
                }
                return Ok(Trajectory {
                    mode: self.mode,
                    t_start: T::zero(),
                    t_end: t_exit,
                    y_start: y0,
                    y_end,
                    steps,
                    exited: true,
                });
            }
            steps.push(step);
        }
        if stop_at_exit {
            return Err(RayError::Trapped { t_max: t_end.as_f64() });
        }
        Ok(Trajectory { mode: self.mode, t_start: T::zero(), t_end: st.t, y_start: y0, y_end: st.y, steps, exited: false })
    }

    /// Exit time inside `step` and the exact step from its start to that time.
    fn locate_exit<const N: usize>(
        &self,
        rhs: &mut impl FnMut(T, &[T; N]) -> Result<[T; N], ModelError>,
        step: &Step<T, N>,
        opts: OdeOptions,
        b_tol: T,
    ) -> Result<(T, Step<T, N>), RayError> {
        let b = |y: &[T; N]| self.domain.level(Vec3::new(y[0], y[1], y[2]));
        // bracket on the dense output, then Illinois regula falsi
        let (mut lo, mut hi) = (step.t0, step.t1());
        let (mut blo, mut bhi) = (b(&step.y0), b(&step.y1));
        if blo > T::zero() {
            // the step started on the boundary: skip the trivial root at its start
            let n = 16;
            let mut found = false;
            for k in 1..n {
                let t = step.t0 + step.h * T::from_usize_lossy(k) / T::from_usize_lossy(n);
                let bt = b(&step.eval(t));
                if bt <= T::zero() {
                    lo = t;
                    blo = bt;
                    found = true;
                }
            }
            if !found {
                return Err(RayError::Grazing { x: Vec3::new(step.y0[0], step.y0[1], step.y0[2]).to_f64() });
            }
        }
        let mut side = 0i32;
        let mut t = hi;
        for _ in 0..100 {
            t = (lo * bhi - hi * blo) / (bhi - blo);
            let bt = b(&step.eval(t));
            if bt.abs() < b_tol * T::lit(0.1) || (hi - lo) < T::lit(1e-15) * (T::one() + hi.abs()) {
                break;
            }
            if bt > T::zero() {
                hi = t;
                bhi = bt;
                if side == 1 {
                    blo = blo * T::lit(0.5);
                }
                side = 1;
            } else {
                lo = t;
                blo = bt;
                if side == -1 {
                    bhi = bhi * T::lit(0.5);
                }
                side = -1;
            }
        }
        // polish with exact integrator steps from the step start
        let mut last = None;
        for _ in 0..20 {
            let mut s = Dopri5::new(rhs, step.t0, step.y0, opts)?;
            let fs = s.forced_step(rhs, t - step.t0)?;
            let y = fs.y1;
            let bt = b(&y);
            let v = rhs(t, &y)?;
            let db = T::lit(2.0) * (y[0] * v[0] + y[1] * v[1] + y[2] * v[2]);
            last = Some(fs);
            if bt.abs() < b_tol {
                break;
            }
            if db == T::zero() {
                return Err(RayError::Grazing { x: [y[0].as_f64(), y[1].as_f64(), y[2].as_f64()] });
            }
            t -= bt / db;
        }
        let last = last.expect("at least one polish iteration");
        Ok((last.t1(), last))
    }

    /// Flow for a fixed time without exit detection.
    pub fn flow(&self, p0: PhasePoint<T>, t: T) -> Result<Trajectory<T, 6>, RayError> {
        let f = self.field();
        let mut rhs = |_t: T, y: &[T; 6]| f.velocity(y);
        self.run(&mut rhs, p0.to_state(), self.options(p0)?, t, false)
    }

    /// Flow with variational equations for a fixed time.
    pub fn flow_with_jacobian(&self, p0: PhasePoint<T>, t: T) -> Result<Trajectory<T, 42>, RayError> {
        let f = self.field();
        let mut rhs = |_t: T, y: &[T; 42]| f.velocity_with_jacobian(y);
        let mut y0 = [T::zero(); 42];
        y0[..6].copy_from_slice(&p0.to_state());
        Mat6::identity().write_slice(&mut y0[6..]);
        self.run(&mut rhs, y0, self.options(p0)?, t, false)
    }

    pub fn flow_jacobian(&self, p0: PhasePoint<T>, t: T) -> Result<Mat6<T>, RayError> {
        Ok(Mat6::from_slice(&self.flow_with_jacobian(p0, t)?.y_end[6..]))
    }

    pub fn trace_to_exit(&self, p0: PhasePoint<T>) -> Result<(LensRecord<T>, Trajectory<T, 6>), RayError> {
        let f = self.field();
        let mut rhs = |_t: T, y: &[T; 6]| f.velocity(y);
        let tr = self.run(&mut rhs, p0.to_state(), self.options(p0)?, self.t_max(p0)?, true)?;
        let rec = LensRecord { entry: p0, exit: PhasePoint::from_state(&tr.y_end), tau: tr.t_end };
        Ok((rec, tr))
    }

    pub fn trace_to_exit_with_jacobian(
        &self,
        p0: PhasePoint<T>,
    ) -> Result<(LensRecord<T>, Trajectory<T, 42>), RayError> {
        let f = self.field();
        let mut rhs = |_t: T, y: &[T; 42]| f.velocity_with_jacobian(y);
        let mut y0 = [T::zero(); 42];
        y0[..6].copy_from_slice(&p0.to_state());
        Mat6::identity().write_slice(&mut y0[6..]);
        let tr = self.run(&mut rhs, y0, self.options(p0)?, self.t_max(p0)?, true)?;
        let rec = LensRecord { entry: p0, exit: PhasePoint::from_state(&tr.y_end), tau: tr.t_end };
        Ok((rec, tr))
    }

    /// Remaining time before the trajectory from an interior point leaves the domain.
    pub fn travel_time(&self, p: PhasePoint<T>) -> Result<T, RayError> {
        Ok(self.trace_to_exit(p)?.0.tau)
    }

    /// Ray through `p` with forward and backward variational data.
    pub fn ray_through(&self, p: PhasePoint<T>) -> Result<RayThrough<T>, RayError> {
        let (_, fwd) = self.trace_to_exit_with_jacobian(p)?;
        let (_, bwd) = self.trace_to_exit_with_jacobian(p.reversed())?;
        Ok(RayThrough { anchor: p, fwd, bwd })
    }

    /// Rank scan of ∂X/∂(t,ω) for rays leaving `x` in the directions `omegas`.
    pub fn no_conjugate_check(&self, x: Vec3<T>, t_grid: &[T], omegas: &[Vec3<T>]) -> Result<ConjugateReport<T>, RayError> {
        let t_last = t_grid.iter().copied().fold(T::zero(), T::max);
        let mut rep = ConjugateReport {
            min_singular: T::infinity(),
            argmin: (T::zero(), Vec3::zero()),
            sign_changes: 0,
            rank_deficient: false,
        };
        for &w in omegas {
            let w = w.normalized();
            let xi = self.model.xi_of_omega(self.mode, x, w)?;
            let h = self.model.hess_xi_g(self.mode, x, xi)?;
            let hinv = h.inverse().ok_or(RayError::SingularJacobian { t: 0.0 })?;
            let (e1, e2) = w.orthonormal_complement();
            let d1 = hinv.mul_vec(e1);
            let d2 = hinv.mul_vec(e2);
            let tr = self.flow_with_jacobian(PhasePoint::new(x, xi), t_last)?;
            let f = self.field();
            let mut prev_det: Option<T> = None;
            for &t in t_grid {
                let y = tr.state(t);
                let v = f.velocity(&[y[0], y[1], y[2], y[3], y[4], y[5]])?;
                let j = Mat6::from_slice(&y[6..]).block(0, 1);
                let m = Mat3::from_cols(Vec3::new(v[0], v[1], v[2]), j.mul_vec(d1), j.mul_vec(d2));
                let sv = m.singular_values();
                let smin = sv.iter().copied().fold(T::infinity(), T::min);
                if smin < rep.min_singular {
                    rep.min_singular = smin;
                    rep.argmin = (t, w);
                }
                let d = m.det();
                if let Some(pd) = prev_det {
                    if pd * d < T::zero() {
                        rep.sign_changes += 1;
                    }
                }
                prev_det = Some(d);
            }
        }
        rep.rank_deficient = rep.sign_changes > 0 || rep.min_singular < T::lit(1e-8);
        Ok(rep)
    }

    /// Travel time between two boundary points by two-point shooting with G = 1/2.
    pub fn boundary_travel_time(&self, x0: Vec3<T>, x1: Vec3<T>) -> Result<(T, LensRecord<T>), RayError> {
        let n0 = self.domain.outward_normal(x0);
        let chord = (x1 - x0).normalized();
        // unknown: inward direction d, parameterized in the tangent plane of the current guess
        let mut dir = chord;
        let miss_tol = T::lit(1e-13) * self.domain.radius;
        let mut last_miss = T::infinity();
        let mut best: Option<(T, LensRecord<T>)> = None;
        for _ in 0..40 {
            let p0 = self.normalize(PhasePoint::new(x0, dir))?;
            if self.model.grad_xi_g(self.mode, x0, p0.xi)?.dot(n0) >= T::zero() {
                return Err(RayError::Shooting { x0: x0.to_f64(), x1: x1.to_f64(), miss: f64::INFINITY });
            }
            let (rec, tr) = self.trace_to_exit_with_jacobian(p0)?;
            let xe = rec.exit.x;
            let miss = xe - x1;
            let m = miss.norm();
            if m < miss_tol {
                return Ok((rec.tau, rec));
            }
            if m >= last_miss && best.is_some() {
                // stagnated at round-off
                break;
            }
            last_miss = m;
            best = Some((rec.tau, rec));
            // exit-point sensitivity to the initial covector, projected along the flow onto the boundary
            let j = Mat6::from_slice(&tr.y_end[6..]);
            let v = self.model.grad_xi_g(self.mode, xe, rec.exit.xi)?;
            let gb = self.domain.grad_level(xe);
            let proj = Mat3::identity() - v.outer(gb) * (T::one() / gb.dot(v));
            let jx = proj.matmul(&j.block(0, 1));
            // derivative of the normalized covector with respect to tangent perturbations of dir
            let (u1, u2) = dir.orthonormal_complement();
            let eps = T::lit(1e-7);
            let mut cols = [Vec3::zero(); 2];
            for (c, u) in [u1, u2].into_iter().enumerate() {
                let pp = self.normalize(PhasePoint::new(x0, (dir + u * eps).normalized()))?;
                let pm = self.normalize(PhasePoint::new(x0, (dir - u * eps).normalized()))?;
                let dxi = (pp.xi - pm.xi) * (T::one() / (T::lit(2.0) * eps));
                cols[c] = jx.mul_vec(dxi);
            }
            // least squares for the 2 tangent coefficients
            let a11 = cols[0].dot(cols[0]);
            let a12 = cols[0].dot(cols[1]);
            let a22 = cols[1].dot(cols[1]);
            let r1 = cols[0].dot(miss);
            let r2 = cols[1].dot(miss);
            let det = a11 * a22 - a12 * a12;
            if det.abs() < T::lit(1e-300).max(T::min_positive_value()) {
                break;
            }
            let c1 = (a22 * r1 - a12 * r2) / det;
            let c2 = (a11 * r2 - a12 * r1) / det;
            dir = (dir - u1 * c1 - u2 * c2).normalized();
        }
        if let Some(b) = best {
            if last_miss < T::lit(1e-10) * self.domain.radius {
                return Ok(b);
            }
        }
        Err(RayError::Shooting { x0: x0.to_f64(), x1: x1.to_f64(), miss: last_miss.as_f64() })
    }

    /// Exit covector at `x1` from boundary travel times τ(x0, ·) sampled on a spherical chart
    /// with angular `spacing`: tangential part by central differences, normal part from
    /// G(x1, ξ) = 1/2, choosing the root with outward group velocity.
    pub fn exit_covector_from_travel_times(
        &self,
        x1: Vec3<T>,
        spacing: T,
        tau: &mut dyn FnMut(Vec3<T>) -> Result<T, RayError>,
    ) -> Result<Vec3<T>, RayError> {
        let r = self.domain.radius;
        let u1 = x1.normalized();
        let (u2, u3) = u1.orthonormal_complement();
        let chart = |a: T, b: T| (u1 * (a.cos() * b.cos()) + u2 * (a.sin() * b.cos()) + u3 * b.sin()) * r;
        let h = spacing;
        let da = (tau(chart(h, T::zero()))? - tau(chart(-h, T::zero()))?) / (T::lit(2.0) * h);
        let db = (tau(chart(T::zero(), h))? - tau(chart(T::zero(), -h))?) / (T::lit(2.0) * h);
        let tangential = u2 * (da / r) + u3 * (db / r);
        self.complete_covector(x1, tangential)
    }

    /// Solves G(x, t + c n) = 1/2 for c and keeps the root whose group velocity points outward.
    pub fn complete_covector(&self, x: Vec3<T>, tangential: Vec3<T>) -> Result<Vec3<T>, RayError> {
        let n = self.domain.outward_normal(x);
        let g = |c: T| -> Result<(T, T, T), RayError> {
            let xi = tangential + n * c;
            let j = self.model.local(x).jet2(self.mode, xi)?;
            let gv = Vec3::new(j.g[3], j.g[4], j.g[5]);
            let mut hnn = T::zero();
            for a in 0..3 {
                for b in 0..3 {
                    hnn += n[a] * j.h[3 + a][3 + b] * n[b];
                }
            }
            Ok((j.v - T::lit(0.5), gv.dot(n), hnn))
        };
        // minimum of the convex function c ↦ G(x, t + c n)
        let mut c0 = T::zero();
        for _ in 0..60 {
            let (_, d1, d2) = g(c0)?;
            let step = d1 / d2;
            c0 -= step;
            if step.abs() < T::lit(1e-15) * (T::one() + c0.abs()) {
                break;
            }
        }
        let (gmin, _, d2) = g(c0)?;
        if gmin >= T::zero() {
            return Err(RayError::BoundaryConvexity { x: x.to_f64() });
        }
        let mut roots = Vec::new();
        for sgn in [-T::one(), T::one()] {
            let mut c = c0 + sgn * (-T::lit(2.0) * gmin / d2).sqrt();
            for _ in 0..100 {
                let (v, d1, _) = g(c)?;
                let step = v / d1;
                c -= step;
                if step.abs() < T::lit(1e-15) * (T::one() + c.abs()) {
                    break;
                }
            }
            roots.push(c);
        }
        let outward: Vec<Vec3<T>> = roots
            .into_iter()
            .map(|c| tangential + n * c)
            .filter(|xi| {
                self.model.grad_xi_g(self.mode, x, *xi).map(|v| v.dot(n) > T::zero()).unwrap_or(false)
            })
            .collect();
        if outward.len() != 1 {
            return Err(RayError::BoundaryConvexity { x: x.to_f64() });
        }
        Ok(outward[0])
    }
}

/// Point on the sphere of radius `r` with polar angle `theta` and azimuth `phi`.
pub fn sphere_point<T: Real>(r: T, theta: T, phi: T) -> Vec3<T> {
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    fn iso(a: f64) -> MaterialModel<f64> {
        MaterialModel::isotropic(a - 2.0, 1.0)
    }

    fn mild() -> MaterialModel<f64> {
        MaterialModel {
            a11: Field::expr("4 + 0.2*x - 0.1*y*z").unwrap(),
            a33: Field::expr("3 + 0.1*sin(y) + 0.05*z").unwrap(),
            a55: Field::expr("1 + 0.05*x*x").unwrap(),
            a66: Field::constant(1.2),
            e2: Field::expr("1 + 0.1*cos(x + z)").unwrap(),
            layer: Field::expr("z + 0.1*x*x + 0.05*y").unwrap(),
            domain_radius: 1.0,
        }
    }

    #[test]
    fn homogeneous_chord_time_and_straight_ray() {
        let m = iso(3.0);
        let tr = RayTracer::new(&m, Mode::QP);
        let x0 = Vec3::new(0.0, 0.6, -0.8);
        let dir = Vec3::new(0.3, -0.2, 1.0).normalized();
        let p = tr.normalize(PhasePoint::new(x0, dir)).unwrap();
        assert!((p.xi.norm() - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-14);
        let (rec, _) = tr.trace_to_exit(p).unwrap();
        // chord length from x0 along dir
        let bq = x0.dot(dir);
        let len = -2.0 * bq;
        assert!(((rec.tau - len / (2.0 * 3f64.sqrt())) / rec.tau).abs() < 1e-9);
        assert!((rec.exit.xi - p.xi).norm() < 1e-12);
        assert!(tr.domain.level(rec.exit.x).abs() < 1e-12);
    }

    #[test]
    fn jacobian_is_symplectic_and_matches_differences() {
        let m = mild();
        let tr = RayTracer::new(&m, Mode::QSV);
        let p = tr.normalize(PhasePoint::new(Vec3::new(0.1, -0.2, 0.0), Vec3::new(0.5, 0.3, 0.4))).unwrap();
        let t = 0.5;
        let j = tr.flow_jacobian(p, t).unwrap();
        let om = Mat6::omega();
        let defect = j.transpose().matmul(&om).matmul(&j).sub(&om).max_abs();
        assert!(defect < 1e-8, "{defect}");
        let e = 1e-6;
        for c in 0..6 {
            let mut yp = p.to_state();
            let mut ym = p.to_state();
            yp[c] += e;
            ym[c] -= e;
            let fp = tr.flow(PhasePoint::from_state(&yp), t).unwrap().y_end;
            let fm = tr.flow(PhasePoint::from_state(&ym), t).unwrap().y_end;
            for r in 0..6 {
                let fd = (fp[r] - fm[r]) / (2.0 * e);
                assert!((fd - j.0[r][c]).abs() < 1e-5, "({r},{c}) {fd} vs {}", j.0[r][c]);
            }
        }
    }

    #[test]
    fn reversibility_and_through_ray_consistency() {
        let m = mild();
        let tr = RayTracer::new(&m, Mode::QP);
        let p = tr.normalize(PhasePoint::new(Vec3::new(0.1, 0.1, -0.1), Vec3::new(-0.2, 0.7, 0.3))).unwrap();
        let ray = tr.ray_through(p).unwrap();
        let (t0, t1) = ray.span();
        let entry = ray.entry();
        let (rec, _) = tr.trace_to_exit(entry).unwrap();
        assert!((rec.tau - (t1 - t0)).abs() < 1e-8);
        assert!((rec.exit.x - ray.exit().x).norm() < 1e-8);
        // jacobian from a backward node to exit equals a fresh forward Jacobian to exit
        let t = 0.5 * t0;
        let (z, _) = ray.at(t);
        let j_exit = ray.to_exit_jacobian(t);
        let (_, direct) = tr.trace_to_exit_with_jacobian(z).unwrap();
        let jd = direct.jacobian(direct.t_end);
        assert!(j_exit.sub(&jd).max_abs() < 1e-6);
    }

    #[test]
    fn boundary_outward_start_has_zero_time_and_interior_cocycle() {
        let m = mild();
        let tr = RayTracer::new(&m, Mode::QP);
        let x = Vec3::new(0.0, 0.0, 1.0);
        let p = tr.normalize(PhasePoint::new(x, Vec3::new(0.0, 0.1, 1.0))).unwrap();
        assert_eq!(tr.travel_time(p).unwrap(), 0.0);
        let q = tr.normalize(PhasePoint::new(Vec3::new(0.2, -0.1, 0.3), Vec3::new(0.4, 0.1, -0.5))).unwrap();
        let tau = tr.travel_time(q).unwrap();
        let traj = tr.flow(q, 0.3 * tau).unwrap();
        let q2 = PhasePoint::from_state(&traj.y_end);
        assert!((tr.travel_time(q2).unwrap() - 0.7 * tau).abs() < 1e-8);
    }

    #[test]
    fn shooting_and_exit_covector_reconstruction_homogeneous() {
        let m = iso(3.0);
        let tr = RayTracer::new(&m, Mode::QP);
        let x0 = sphere_point(1.0, 2.5, 0.3);
        let x1 = sphere_point(1.0, 0.7, 2.0);
        let (tau, rec) = tr.boundary_travel_time(x0, x1).unwrap();
        assert!((tau - (x1 - x0).norm() / (2.0 * 3f64.sqrt())).abs() < 1e-10);
        let mut table = |x: Vec3<f64>| Ok((x - x0).norm() / (2.0 * 3f64.sqrt()));
        let xi = tr.exit_covector_from_travel_times(x1, 1e-3, &mut table).unwrap();
        assert!((xi - rec.exit.xi).norm() / rec.exit.xi.norm() < 1e-4);
    }

    #[test]
    fn conjugate_scan_homogeneous_full_rank() {
        let m = iso(3.0);
        let tr = RayTracer::new(&m, Mode::QP);
        let ts: Vec<f64> = (1..=5).map(|k| 0.1 * k as f64).collect();
        let om = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.3, 0.4, 0.5)];
        let rep = tr.no_conjugate_check(Vec3::zero(), &ts, &om).unwrap();
        assert!(!rep.rank_deficient);
        assert!(rep.min_singular > 0.0);
    }
}
