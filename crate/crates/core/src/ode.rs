//! Dormand–Prince 5(4) integrator with dense output, on fixed-size states `[T; N]`.

use crate::real::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError<E> {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("maximum number of steps ({0}) exceeded")]
    TooManySteps(usize),
    #[error(transparent)]
    Rhs(E),
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { rtol: tol, atol: tol, h_init: 0.0, h_max: f64::INFINITY, max_steps: 200_000 }
    }
}

/// One accepted step with its continuous extension.
#[derive(Clone, Debug)]
pub struct Step<T, const N: usize> {
    pub t0: T,
    pub h: T,
    pub y0: [T; N],
    pub y1: [T; N],
    rc: [[T; N]; 4],
}

impl<T: Real, const N: usize> Step<T, N> {
    pub fn t1(&self) -> T {
        self.t0 + self.h
    }

    /// Dense output at `t` inside the step.
    pub fn eval(&self, t: T) -> [T; N] {
        let th = (t - self.t0) / self.h;
        let th1 = T::one() - th;
        let mut out = [T::zero(); N];
        for i in 0..N {
            out[i] = self.y0[i]
                + th * (self.rc[0][i] + th1 * (self.rc[1][i] + th * (self.rc[2][i] + th1 * self.rc[3][i])));
        }
        out
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn comb<T: Real, const N: usize>(y: &[T; N], h: T, terms: &[(f64, &[T; N])]) -> [T; N] {
    let mut out = *y;
    for (c, k) in terms {
        if *c == 0.0 {
            continue;
        }
        let ch = h * T::lit(*c);
        for i in 0..N {
            out[i] += ch * k[i];
        }
    }
    out
}

/// Adaptive stepper; `f(t, y)` is the right-hand side.
pub struct Dopri5<T, const N: usize> {
    pub t: T,
    pub y: [T; N],
    k1: [T; N],
    h: T,
    opts: OdeOptions,
    steps: usize,
}

impl<T: Real, const N: usize> Dopri5<T, N> {
    pub fn new<E>(
        f: &mut impl FnMut(T, &[T; N]) -> Result<[T; N], E>,
        t0: T,
        y0: [T; N],
        opts: OdeOptions,
    ) -> Result<Self, OdeError<E>> {
        let k1 = f(t0, &y0).map_err(OdeError::Rhs)?;
        let h = if opts.h_init > 0.0 {
            T::lit(opts.h_init)
        } else {
            // scale-based starting step
            let sc = |i: usize| T::lit(opts.atol) + T::lit(opts.rtol) * y0[i].abs();
            let d0 = (0..N).map(|i| (y0[i] / sc(i)).powi(2)).sum::<T>().sqrt();
            let d1 = (0..N).map(|i| (k1[i] / sc(i)).powi(2)).sum::<T>().sqrt();
            let h0 = if d0 < T::lit(1e-5) || d1 < T::lit(1e-5) { T::lit(1e-6) } else { T::lit(0.01) * d0 / d1 };
            h0.min(T::lit(opts.h_max))
        };
        Ok(Dopri5 { t: t0, y: y0, k1, h, opts, steps: 0 })
    }

    pub fn set_h_max(&mut self, h_max: f64) {
        self.opts.h_max = h_max;
        self.h = self.h.min(T::lit(h_max));
    }

    /// Single fixed step of size `h` from the current state without accepting it.
    pub fn trial<E>(
        &self,
        f: &mut impl FnMut(T, &[T; N]) -> Result<[T; N], E>,
        h: T,
    ) -> Result<[T; N], OdeError<E>> {
        Ok(self.raw_step(f, h)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn raw_step<E>(
        &self,
        f: &mut impl FnMut(T, &[T; N]) -> Result<[T; N], E>,
        h: T,
    ) -> Result<([T; N], [T; N], [[T; N]; 7]), OdeError<E>> {
        let (t, y, k1) = (self.t, &self.y, &self.k1);
        let rhs = |f: &mut dyn FnMut(T, &[T; N]) -> Result<[T; N], E>, tt: T, yy: &[T; N]| f(tt, yy).map_err(OdeError::Rhs);
        let k2 = rhs(f, t + h * T::lit(C2), &comb(y, h, &[(A21, k1)]))?;
        let k3 = rhs(f, t + h * T::lit(C3), &comb(y, h, &[(A31, k1), (A32, &k2)]))?;
        let k4 = rhs(f, t + h * T::lit(C4), &comb(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = rhs(f, t + h * T::lit(C5), &comb(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let k6 = rhs(f, t + h, &comb(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y1 = comb(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = rhs(f, t + h, &y1)?;
        let mut err = [T::zero(); N];
        for i in 0..N {
            err[i] = h
                * (T::lit(E1) * k1[i] + T::lit(E3) * k3[i] + T::lit(E4) * k4[i] + T::lit(E5) * k5[i] + T::lit(E6) * k6[i]
                    + T::lit(E7) * k7[i]);
        }
        Ok((y1, err, [*k1, k2, k3, k4, k5, k6, k7]))
    }

    fn accept(&mut self, h: T, y1: [T; N], k: &[[T; N]; 7]) -> Step<T, N> {
        let [k1, _, k3, k4, k5, k6, k7] = k;
        let mut rc = [[T::zero(); N]; 4];
        for i in 0..N {
            let dy = y1[i] - self.y[i];
            let bspl = h * k1[i] - dy;
            rc[0][i] = dy;
            rc[1][i] = bspl;
            rc[2][i] = dy - h * k7[i] - bspl;
            rc[3][i] = h
                * (T::lit(D1) * k1[i] + T::lit(D3) * k3[i] + T::lit(D4) * k4[i] + T::lit(D5) * k5[i]
                    + T::lit(D6) * k6[i]
                    + T::lit(D7) * k7[i]);
        }
        let step = Step { t0: self.t, h, y0: self.y, y1, rc };
        self.t += h;
        self.y = y1;
        self.k1 = *k7;
        step
    }

    /// Takes a step of exactly `h` without error control.
    pub fn forced_step<E>(
        &mut self,
        f: &mut impl FnMut(T, &[T; N]) -> Result<[T; N], E>,
        h: T,
    ) -> Result<Step<T, N>, OdeError<E>> {
        let (y1, _, k) = self.raw_step(f, h)?;
        Ok(self.accept(h, y1, &k))
    }

    /// Takes one accepted adaptive step, never going past `t_limit`.
    pub fn step<E>(
        &mut self,
        f: &mut impl FnMut(T, &[T; N]) -> Result<[T; N], E>,
        t_limit: T,
    ) -> Result<Step<T, N>, OdeError<E>> {
        loop {
            self.steps += 1;
            if self.steps > self.opts.max_steps {
                return Err(OdeError::TooManySteps(self.opts.max_steps));
            }
            let mut h = self.h.min(T::lit(self.opts.h_max));
            let remaining = t_limit - self.t;
            let last = h >= remaining - T::lit(1e-12) * (T::one() + t_limit.abs());
            if last {
                h = remaining;
            }
            if !(h.abs() > T::lit(1e-14) * (T::one() + self.t.abs())) {
                return Err(OdeError::StepUnderflow { t: self.t.as_f64() });
            }
            let (y1, e, k) = match self.raw_step(f, h) {
                Ok(v) => v,
                Err(OdeError::Rhs(err)) => {
                    // a stage left the model's valid region; retry with a smaller step
                    self.h = h * T::lit(0.25);
                    if self.h.abs() < T::lit(1e-12) {
                        return Err(OdeError::Rhs(err));
                    }
                    continue;
                }
                Err(other) => return Err(other),
            };
            let mut acc = T::zero();
            for i in 0..N {
                let sc = T::lit(self.opts.atol) + T::lit(self.opts.rtol) * self.y[i].abs().max(y1[i].abs());
                acc += (e[i] / sc).powi(2);
            }
            let err = (acc / T::from_usize_lossy(N)).sqrt();
            let fac = if err == T::zero() {
                T::lit(5.0)
            } else {
                (T::lit(0.9) * err.powf(T::lit(-0.2))).max(T::lit(0.2)).min(T::lit(5.0))
            };
            if err <= T::one() {
                let step = self.accept(h, y1, &k);
                self.t = if last { t_limit } else { self.t };
                if !last {
                    self.h = h * fac;
                }
                return Ok(step);
            }
            self.h = h * fac.min(T::one());
        }
    }
}

/// Integrates from `t0` to `t1`, returning the final state and all accepted steps.
#[allow(clippy::type_complexity)]
pub fn integrate<T: Real, const N: usize, E>(
    f: &mut impl FnMut(T, &[T; N]) -> Result<[T; N], E>,
    t0: T,
    y0: [T; N],
    t1: T,
    opts: OdeOptions,
) -> Result<([T; N], Vec<Step<T, N>>), OdeError<E>> {
    let mut s = Dopri5::new(f, t0, y0, opts)?;
    let mut steps = Vec::new();
    while s.t < t1 {
        steps.push(s.step(f, t1)?);
    }
    Ok((s.y, steps))
}
