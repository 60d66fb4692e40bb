//! Scalar fields on R³: constants, parsed expressions, closures and gridded samples.
//!
//! Every field evaluates to a [`Taylor3`] jet so Hamiltonian derivatives up to the
//! flow-Jacobian level are exact for analytic fields. Grids use a prefiltered cubic
//! B-spline, which interpolates the samples and is C² everywhere.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::expr::Expr;
use crate::linalg::Vec3;
use crate::real::Real;
use crate::taylor::Taylor3;

pub type JetFn<T> = dyn Fn(&[Taylor3<T>; 3]) -> Taylor3<T> + Send + Sync;

#[derive(Clone)]
pub enum Field<T: Real> {
    Constant(T),
    Expr(Arc<Expr>),
    Grid(Arc<GridField<T>>),
    Analytic(Arc<JetFn<T>>),
    Sum(Arc<Field<T>>, Arc<Field<T>>),
    Scaled(T, Arc<Field<T>>),
}

impl<T: Real> std::fmt::Debug for Field<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field::Constant(c) => write!(f, "Constant({c})"),
            Field::Expr(e) => write!(f, "Expr({e:?})"),
            Field::Grid(g) => write!(f, "Grid({:?})", g.dims),
            Field::Analytic(_) => write!(f, "Analytic"),
            Field::Sum(a, b) => write!(f, "Sum({a:?}, {b:?})"),
            Field::Scaled(s, a) => write!(f, "Scaled({s}, {a:?})"),
        }
    }
}

impl<T: Real> Field<T> {
    pub fn constant(c: f64) -> Self {
        Field::Constant(T::lit(c))
    }

    pub fn analytic(f: impl Fn(&[Taylor3<T>; 3]) -> Taylor3<T> + Send + Sync + 'static) -> Self {
        Field::Analytic(Arc::new(f))
    }

    pub fn expr(src: &str) -> Result<Self, crate::expr::ExprError> {
        let e = Expr::parse(src)?;
        if e.is_constant() {
            return Ok(Field::Constant(e.eval([T::zero(); 3])));
        }
        Ok(Field::Expr(Arc::new(e)))
    }

    /// C^∞ bump `amp·exp(1 − 1/(1 − |x−c|²/ρ²))` supported in the ball of radius ρ about c.
    pub fn bump(center: [f64; 3], radius: f64, amp: f64) -> Self {
        Field::analytic(move |p| {
            let mut q = Taylor3::cst(T::one());
            for (i, pi) in p.iter().enumerate() {
                let d = (*pi - T::lit(center[i])) / T::lit(radius);
                q = q - d * d;
            }
            if q.v <= T::zero() {
                return Taylor3::cst(T::zero());
            }
            (-q.recip() + T::one()).exp() * T::lit(amp)
        })
    }

    pub fn plus(self, other: Field<T>) -> Self {
        match (&self, &other) {
            (Field::Constant(a), Field::Constant(b)) => Field::Constant(*a + *b),
            (_, Field::Constant(b)) if *b == T::zero() => self,
            _ => Field::Sum(Arc::new(self), Arc::new(other)),
        }
    }

    pub fn scaled(self, s: T) -> Self {
        match self {
            Field::Constant(c) => Field::Constant(c * s),
            other => Field::Scaled(s, Arc::new(other)),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Field::Constant(_) => true,
            Field::Sum(a, b) => a.is_constant() && b.is_constant(),
            Field::Scaled(_, a) => a.is_constant(),
            _ => false,
        }
    }

    /// True when the field is identically zero by construction.
    pub fn is_zero(&self) -> bool {
        match self {
            Field::Constant(c) => *c == T::zero(),
            Field::Sum(a, b) => a.is_zero() && b.is_zero(),
            Field::Scaled(s, a) => *s == T::zero() || a.is_zero(),
            _ => false,
        }
    }

    pub fn jet(&self, x: Vec3<T>) -> Taylor3<T> {
        match self {
            Field::Constant(c) => Taylor3::cst(*c),
            Field::Expr(e) => e.eval_jet(&Taylor3::point(x.0)),
            Field::Grid(g) => g.jet(x),
            Field::Analytic(f) => f(&Taylor3::point(x.0)),
            Field::Sum(a, b) => a.jet(x) + b.jet(x),
            Field::Scaled(s, a) => a.jet(x) * *s,
        }
    }

    pub fn value(&self, x: Vec3<T>) -> T {
        match self {
            Field::Constant(c) => *c,
            Field::Expr(e) => e.eval(x.0),
            Field::Grid(g) => g.value(x),
            Field::Analytic(f) => f(&Taylor3::point(x.0)).v,
            Field::Sum(a, b) => a.value(x) + b.value(x),
            Field::Scaled(s, a) => a.value(x) * *s,
        }
    }

    pub fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        Vec3(self.jet(x).g)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad grid file: {0}")]
    Format(String),
}

/// Samples on a regular grid, node `(i,j,k)` at `origin + h*(i,j,k)`; storage index
/// `(i*ny + j)*nz + k`.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

impl GridSpec {
    /// Cube `[-half, half]³` with `n` nodes per side.
    pub fn cube(n: usize, half: f64) -> Self {
        let h = 2.0 * half / (n as f64 - 1.0);
        GridSpec { dims: [n; 3], origin: [-half; 3], spacing: [h; 3] }
    }
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        let i = idx / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let c = self.ijk(idx);
        [
            self.origin[0] + self.spacing[0] * c[0] as f64,
            self.origin[1] + self.spacing[1] * c[1] as f64,
            self.origin[2] + self.spacing[2] * c[2] as f64,
        ]
    }
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
}

const PAD: usize = 6;

#[derive(Clone, Debug)]
pub struct GridField<T> {
    pub spec: GridSpec,
    pub dims: [usize; 3],
    pub data: Vec<T>,
    background: T,
    coef: Vec<T>,
    cdims: [usize; 3],
}

fn prefilter_line<T: Real>(s: &mut [T]) {
    let n = s.len();
    if n < 2 {
        return;
    }
    let z = T::lit(3.0f64.sqrt() - 2.0);
    // causal init with truncated mirror sum
    let mut zk = z;
    let mut sum = s[0];
    let horizon = n.min(40);
    for v in s.iter().take(horizon).skip(1) {
        sum += zk * *v;
        zk *= z;
    }
    s[0] = sum;
    for k in 1..n {
        let prev = s[k - 1];
        s[k] += z * prev;
    }
    s[n - 1] = (z / (z * z - T::one())) * (s[n - 1] + z * s[n - 2]);
    for k in (0..n - 1).rev() {
        s[k] = z * (s[k + 1] - s[k]);
    }
    for v in s.iter_mut() {
        *v *= T::lit(6.0);
    }
}

fn bspline_weights<T: Real>(t: T) -> [[T; 4]; 4] {
    let one = T::one();
    let six = T::lit(6.0);
    let u = one - t;
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        u * u * u / six,
        (T::lit(3.0) * t3 - T::lit(6.0) * t2 + T::lit(4.0)) / six,
        (-T::lit(3.0) * t3 + T::lit(3.0) * t2 + T::lit(3.0) * t + one) / six,
        t3 / six,
    ];
    let d1 = [
        -u * u / T::lit(2.0),
        T::lit(1.5) * t2 - T::lit(2.0) * t,
        -T::lit(1.5) * t2 + t + T::lit(0.5),
        t2 / T::lit(2.0),
    ];
    let d2 = [u, T::lit(3.0) * t - T::lit(2.0), -T::lit(3.0) * t + one, t];
    let d3 = [-one, T::lit(3.0), -T::lit(3.0), one];
    [w, d1, d2, d3]
}

impl<T: Real> GridField<T> {
    pub fn new(spec: GridSpec, data: Vec<T>) -> Self {
        assert_eq!(spec.len(), data.len(), "grid data length mismatch");
        let dims = spec.dims;
        let background = data[0];
        let cdims = [dims[0] + 2 * PAD, dims[1] + 2 * PAD, dims[2] + 2 * PAD];
        let mut coef = vec![T::zero(); cdims[0] * cdims[1] * cdims[2]];
        let cidx = |i: usize, j: usize, k: usize| (i * cdims[1] + j) * cdims[2] + k;
        // pad by replicating edge samples so the spline has no artificial jump at the grid boundary
        let clamp = |c: usize, n: usize| c.saturating_sub(PAD).min(n - 1);
        for i in 0..cdims[0] {
            for j in 0..cdims[1] {
                for k in 0..cdims[2] {
                    let src = spec.index(clamp(i, dims[0]), clamp(j, dims[1]), clamp(k, dims[2]));
                    coef[cidx(i, j, k)] = data[src] - background;
                }
            }
        }
        let mut line = Vec::new();
        for axis in 0..3 {
            let (a, b) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for p in 0..cdims[a] {
                for q in 0..cdims[b] {
                    line.clear();
                    for r in 0..cdims[axis] {
                        let mut c = [0; 3];
                        c[axis] = r;
                        c[a] = p;
                        c[b] = q;
                        line.push(coef[cidx(c[0], c[1], c[2])]);
                    }
                    prefilter_line(&mut line);
                    for (r, v) in line.iter().enumerate() {
                        let mut c = [0; 3];
                        c[axis] = r;
                        c[a] = p;
                        c[b] = q;
                        coef[cidx(c[0], c[1], c[2])] = *v;
                    }
                }
            }
        }
        GridField { dims, spec, data, background, coef, cdims }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let data = (0..spec.len()).map(|i| T::lit(f(spec.node(i)))).collect();
        Self::new(spec, data)
    }

    pub fn sample(spec: GridSpec, field: &Field<T>) -> Self {
        let data = (0..spec.len()).map(|i| field.value(Vec3::from_f64(spec.node(i)))).collect();
        Self::new(spec, data)
    }

    fn locate(&self, x: Vec3<T>) -> Option<([isize; 3], [T; 3])> {
        let mut base = [0isize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let q = (x[a] - T::lit(self.spec.origin[a])) / T::lit(self.spec.spacing[a]);
            let f = q.floor();
            let i = f.to_isize()? + PAD as isize;
            if i < 1 || i + 2 >= self.cdims[a] as isize {
                return None;
            }
            base[a] = i;
            frac[a] = q - f;
        }
        Some((base, frac))
    }

    fn c(&self, i: isize, j: isize, k: isize) -> T {
        self.coef[((i as usize) * self.cdims[1] + j as usize) * self.cdims[2] + k as usize]
    }

    pub fn value(&self, x: Vec3<T>) -> T {
        let Some((b, t)) = self.locate(x) else {
            return self.background;
        };
        let wx = bspline_weights(t[0])[0];
        let wy = bspline_weights(t[1])[0];
        let wz = bspline_weights(t[2])[0];
        let mut acc = T::zero();
        for (p, wxp) in wx.iter().enumerate() {
            for (q, wyq) in wy.iter().enumerate() {
                let mut line = T::zero();
                for (r, wzr) in wz.iter().enumerate() {
                    line += *wzr * self.c(b[0] + p as isize - 1, b[1] + q as isize - 1, b[2] + r as isize - 1);
                }
                acc += *wxp * *wyq * line;
            }
        }
        acc + self.background
    }

    pub fn jet(&self, x: Vec3<T>) -> Taylor3<T> {
        let Some((b, t)) = self.locate(x) else {
            return Taylor3::cst(self.background);
        };
        let w = [bspline_weights(t[0]), bspline_weights(t[1]), bspline_weights(t[2])];
        let inv_h = [
            T::one() / T::lit(self.spec.spacing[0]),
            T::one() / T::lit(self.spec.spacing[1]),
            T::one() / T::lit(self.spec.spacing[2]),
        ];
        // d[a][b][c] = ∂x^a ∂y^b ∂z^c for a+b+c ≤ 3
        let mut d = [[[T::zero(); 4]; 4]; 4];
        for p in 0..4 {
            for q in 0..4 {
                let mut zl = [T::zero(); 4];
                for r in 0..4 {
                    let c = self.c(b[0] + p as isize - 1, b[1] + q as isize - 1, b[2] + r as isize - 1);
                    for (o, zo) in zl.iter_mut().enumerate() {
                        *zo += w[2][o][r] * c;
                    }
                }
                for ox in 0..4 {
                    for oy in 0..4 - ox {
                        let f = w[0][ox][p] * w[1][oy][q];
                        for oz in 0..4 - ox - oy {
                            d[ox][oy][oz] += f * zl[oz];
                        }
                    }
                }
            }
        }
        let mut out = Taylor3::cst(d[0][0][0] + self.background);
        let order = |idx: &[usize]| {
            let mut o = [0usize; 3];
            for &i in idx {
                o[i] += 1;
            }
            o
        };
        let scale = |o: [usize; 3]| {
            let mut s = T::one();
            for a in 0..3 {
                for _ in 0..o[a] {
                    s *= inv_h[a];
                }
            }
            s
        };
        for i in 0..3 {
            let o = order(&[i]);
            out.g[i] = d[o[0]][o[1]][o[2]] * scale(o);
            for j in 0..3 {
                let o = order(&[i, j]);
                out.h[i][j] = d[o[0]][o[1]][o[2]] * scale(o);
                for k in 0..3 {
                    let o = order(&[i, j, k]);
                    out.t[i][j][k] = d[o[0]][o[1]][o[2]] * scale(o);
                }
            }
        }
        out
    }

    /// Writes the TIGRID1 binary layout.
    pub fn write_tigrid(&self, path: &Path) -> Result<(), GridError> {
        write_tigrid(path, &self.spec, &self.data.iter().map(|v| v.as_f64()).collect::<Vec<_>>())
    }

    pub fn read_tigrid(path: &Path) -> Result<Self, GridError> {
        let (spec, data) = read_tigrid(path)?;
        Ok(Self::new(spec, data.into_iter().map(T::lit).collect()))
    }
}

pub const TIGRID_MAGIC: &[u8; 8] = b"TIGRID1\0";

pub fn write_tigrid(path: &Path, spec: &GridSpec, data: &[f64]) -> Result<(), GridError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_tigrid(spec, data))?;
    Ok(())
}

/// Little-endian TIGRID1 bytes: magic, dims (u32), origin and spacing (f64), samples (f64).
pub fn encode_tigrid(spec: &GridSpec, data: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 12 + 48 + 8 * data.len());
    buf.extend_from_slice(TIGRID_MAGIC);
    for d in spec.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for o in spec.origin {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    for s in spec.spacing {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn read_tigrid(path: &Path) -> Result<(GridSpec, Vec<f64>), GridError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 68 || &buf[..8] != TIGRID_MAGIC {
        return Err(GridError::Format(format!("{}: missing TIGRID1 header", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let dims = [u32_at(8), u32_at(12), u32_at(16)];
    let origin = [f64_at(20), f64_at(28), f64_at(36)];
    let spacing = [f64_at(44), f64_at(52), f64_at(60)];
    let n = dims[0] * dims[1] * dims[2];
    if buf.len() != 68 + 8 * n {
        return Err(GridError::Format(format!(
            "{}: payload has {} bytes, expected {}",
            path.display(),
            buf.len() - 68,
            8 * n
        )));
    }
    if spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(GridError::Format("non-positive spacing".into()));
    }
    let data: Vec<f64> = (0..n).map(|i| f64_at(68 + 8 * i)).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(GridError::Format("non-finite sample".into()));
    }
    Ok((GridSpec { dims, origin, spacing }, data))
}
