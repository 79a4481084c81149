//! The two-valued boundary datum S² → T² built from the elliptic curve
//! y² = z(z - a)(z - b), its Abel-Jacobi map, and the pushforward degree.
//!
//! The curve w² = z(z - a)/(z - b) is the same Riemann surface via
//! y = w(z - b); all integrals use the holomorphic differential dz/y.

use std::sync::OnceLock;

use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{LatticeDomain, QField};
use crate::qspace::QPoint;
use crate::qspace::match_into;
use crate::targets::{torus_min, TargetManifold};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Default for CurveParams {
    fn default() -> Self {
        Self { a: [1.0, 0.0], b: [-1.0, 0.0] }
    }
}

impl CurveParams {
    pub fn new(a: C, b: C) -> Result<Self> {
        let p = Self { a: [a.re, a.im], b: [b.re, b.im] };
        p.validate()?;
        Ok(p)
    }

    pub fn a(&self) -> C {
        C::new(self.a[0], self.a[1])
    }

    pub fn b(&self) -> C {
        C::new(self.b[0], self.b[1])
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.a(), self.b());
        let s = 1e-12 * (1.0 + a.norm() + b.norm());
        if a.norm() <= s || b.norm() <= s || (a - b).norm() <= s {
            return Err(Error::InvalidParameter("need a, b nonzero and distinct".into()));
        }
        Ok(())
    }

    /// p(z) = z (z - a)(z - b).
    pub fn cubic(&self, z: C) -> C {
        z * (z - self.a()) * (z - self.b())
    }

    /// Finite branch points 0, a, b.
    pub fn finite_branch_points(&self) -> [C; 3] {
        [C::new(0.0, 0.0), self.a(), self.b()]
    }

    fn outer_radius(&self) -> f64 {
        4.0 * self.a().norm().max(self.b().norm()).max(1.0)
    }
}

/// A point over the Riemann sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZPoint {
    Finite(C),
    Infinity,
}

/// A point (z, w) of w² = z(z - a)/(z - b).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub z: ZPoint,
    pub w: C,
}

/// The two points over z: w = ±sqrt(z(z - a)/(z - b)) with the principal root
/// first. At z = 0 or a both are w = 0.
pub fn fiber(params: &CurveParams, z: C) -> Result<[CurvePoint; 2]> {
    let b = params.b();
    if (z - b).norm() <= 1e-14 * (1.0 + b.norm()) {
        return Err(Error::Pole(format!("{z}")));
    }
    let w = (z * (z - params.a()) / (z - b)).sqrt();
    Ok([
        CurvePoint { z: ZPoint::Finite(z), w },
        CurvePoint { z: ZPoint::Finite(z), w: -w },
    ])
}

// ---------------------------------------------------------------------------
// quadrature

fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| {
        let n = 20;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, t);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
                let dt = p1 / dp;
                t -= dt;
                if dt.abs() < 1e-16 {
                    let (mut q0, mut q1) = (1.0, t);
                    for k in 2..=n {
                        let q2 = ((2 * k - 1) as f64 * t * q1 - (k - 1) as f64 * q0) / k as f64;
                        q0 = q1;
                        q1 = q2;
                    }
                    let dq = n as f64 * (t * q1 - q0) / (t * t - 1.0);
                    w[i] = 2.0 / ((1.0 - t * t) * dq * dq);
                    break;
                }
            }
            x[i] = t;
        }
        // ascending nodes
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        (idx.iter().map(|&i| x[i]).collect(), idx.iter().map(|&i| w[i]).collect())
    })
}

/// Continued square root: the root of `sq` closest to `prev`. Returns None
/// when the choice is ambiguous at this step size.
#[inline]
fn continue_sqrt(sq: C, prev: C) -> Option<C> {
    let s = sq.sqrt();
    let (d1, d2) = ((s - prev).norm(), (s + prev).norm());
    let chosen = if d1 <= d2 { s } else { -s };
    let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
    (near < 0.5 * far || prev.norm() == 0.0).then_some(chosen)
}

struct Integrand<'a> {
    numer: &'a (dyn Fn(f64) -> C + Sync),
    hsq: &'a (dyn Fn(f64) -> C + Sync),
}

impl Integrand<'_> {
    /// 20-point rule on [lo, hi] with continuation from h_left. Also returns
    /// the continued root at hi.
    fn rule(&self, lo: f64, hi: f64, h_left: C) -> Option<(C, C)> {
        let (x, w) = gauss_legendre();
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let mut prev = h_left;
        let mut acc = C::new(0.0, 0.0);
        for (xi, wi) in x.iter().zip(w) {
            let t = mid + half * xi;
            let h = continue_sqrt((self.hsq)(t), prev)?;
            acc += (self.numer)(t) / h * (wi * half);
            prev = h;
        }
        let end = continue_sqrt((self.hsq)(hi), prev)?;
        Some((acc, end))
    }

    fn adaptive(&self, lo: f64, hi: f64, h_left: C, tol: f64, depth: usize) -> Result<(C, C)> {
        if depth > 48 {
            return Err(Error::Accuracy(format!("quadrature did not converge on [{lo}, {hi}]")));
        }
        let mid = 0.5 * (lo + hi);
        let whole = self.rule(lo, hi, h_left);
        let left = self.rule(lo, mid, h_left);
        if let (Some((w, _)), Some((l, hm))) = (whole, left) {
            if let Some((r, hr)) = self.rule(mid, hi, hm) {
                if (w - (l + r)).norm() <= tol * (1.0 + (l + r).norm()) {
                    return Ok((l + r, hr));
                }
            }
        }
        let (l, hm) = self.adaptive(lo, mid, h_left, tol, depth + 1)?;
        let (r, hr) = self.adaptive(mid, hi, hm, tol, depth + 1)?;
        Ok((l + r, hr))
    }
}

const QUAD_TOL: f64 = 1e-13;

/// ∫ dz/y along the segment z0 → z1 with y continued from y0 at z0.
/// Returns the integral and the continued y at z1.
pub fn integrate_segment(params: &CurveParams, z0: C, z1: C, y0: C) -> Result<(C, C)> {
    let dz = z1 - z0;
    let numer = move |_t: f64| dz;
    let p = *params;
    let hsq = move |t: f64| p.cubic(z0 + dz * t);
    Integrand { numer: &numer, hsq: &hsq }.adaptive(0.0, 1.0, y0, QUAD_TOL, 0)
}

/// ∫ dz/y from the branch point e along the straight segment to z, using
/// z = e + (z - e)σ². Returns the integral and the continued y at z. The lift
/// starts from the principal root of the remaining factor at σ = 0.
fn integrate_from_branch(params: &CurveParams, e: C, z: C) -> Result<(C, C)> {
    let d = z - e;
    if d.norm() == 0.0 {
        return Ok((C::new(0.0, 0.0), C::new(0.0, 0.0)));
    }
    let others: Vec<C> = params.finite_branch_points().into_iter().filter(|&b| (b - e).norm() > 0.0).collect();
    let (o1, o2) = (others[0], others[1]);
    let sd = d.sqrt();
    let numer = move |_s: f64| 2.0 * sd;
    let hsq = move |s: f64| {
        let zz = e + d * (s * s);
        (zz - o1) * (zz - o2)
    };
    let h0 = ((e - o1) * (e - o2)).sqrt();
    let (val, h1) = Integrand { numer: &numer, hsq: &hsq }.adaptive(0.0, 1.0, h0, QUAD_TOL, 0)?;
    Ok((val, sd * h1))
}

/// Abel-Jacobi integral from the base point z = 0 (a ramification point) to
/// a point over z. The path runs base -> R_e -> P where R_e is the
/// ramification point over the branch point e nearest to z. The first leg is
/// a half period (its sign is irrelevant modulo periods). The second leg is
/// straight in z for finite e, and radial in the chart s = |z|^(-1/2) for
/// e = ∞. Returns the value and the y of the lift at P (None at z = ∞).
pub fn lifted_integral(params: &CurveParams, lattice: &PeriodLattice, z: ZPoint) -> Result<(C, Option<C>)> {
    let r0 = params.outer_radius();
    let zf = match z {
        ZPoint::Infinity => return Ok((lattice.half_period(Branch::Infinity), None)),
        ZPoint::Finite(zf) if zf.norm() > r0 => zf,
        ZPoint::Finite(zf) => {
            let (k, e) = params
                .finite_branch_points()
                .into_iter()
                .enumerate()
                .min_by(|x, y| (x.1 - zf).norm().total_cmp(&(y.1 - zf).norm()))
                .unwrap();
            let (j, y) = integrate_from_branch(params, e, zf)?;
            let br = [Branch::Zero, Branch::A, Branch::B][k];
            return Ok((lattice.half_period(br) + j, Some(y)));
        }
    };
    let alpha = zf.arg();
    let (a, b) = (params.a(), params.b());
    let rot = C::from_polar(1.0, -alpha);
    let g = move |s: f64| ((1.0 - a * rot * (s * s)) * (1.0 - b * rot * (s * s))).sqrt();
    let s_end = zf.norm().powf(-0.5);
    // y = e^{3iα/2} s^-3 g(s), dz/y = -2 e^{-iα/2} / g(s) ds from s = 0
    let (x, w) = gauss_legendre();
    let mut acc = C::new(0.0, 0.0);
    let pieces = 4;
    for p in 0..pieces {
        let lo = s_end * p as f64 / pieces as f64;
        let hi = s_end * (p + 1) as f64 / pieces as f64;
        let (mid, hw) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (xi, wi) in x.iter().zip(w) {
            acc += 1.0 / g(mid + hw * xi) * (wi * hw);
        }
    }
    let j = -2.0 * C::from_polar(1.0, -0.5 * alpha) * acc;
    let y_end = C::from_polar(1.0, 1.5 * alpha) * s_end.powi(-3) * g(s_end);
    Ok((lattice.half_period(Branch::Infinity) + j, Some(y_end)))
}

/// Branch points of the cover z: V -> S².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Zero,
    A,
    B,
    Infinity,
}

// ---------------------------------------------------------------------------
// periods

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodLattice {
    pub omega1: [f64; 2],
    pub omega2: [f64; 2],
    /// Largest relative disagreement across deformed loops and doubled order.
    pub residual: f64,
}

/// Loops: ω1 encircles {0, a}, ω2 encircles {0, b}.
impl PeriodLattice {
    /// Image of a branch point, as a complex representative.
    pub fn half_period(&self, e: Branch) -> C {
        match e {
            Branch::Zero => C::new(0.0, 0.0),
            Branch::A => 0.5 * self.w1(),
            Branch::B => 0.5 * self.w2(),
            Branch::Infinity => 0.5 * (self.w1() + self.w2()),
        }
    }
}

impl PeriodLattice {
    pub fn w1(&self) -> C {
        C::new(self.omega1[0], self.omega1[1])
    }

    pub fn w2(&self) -> C {
        C::new(self.omega2[0], self.omega2[1])
    }

    /// Real coordinates (s, t) with v = s ω1 + t ω2.
    pub fn unit_coords(&self, v: C) -> [f64; 2] {
        let (w1, w2) = (self.w1(), self.w2());
        let det = w1.re * w2.im - w1.im * w2.re;
        [
            (v.re * w2.im - v.im * w2.re) / det,
            (w1.re * v.im - w1.im * v.re) / det,
        ]
    }

    /// Point of R²/Z² in [0, 1)².
    pub fn to_torus(&self, v: C) -> [f64; 2] {
        let c = self.unit_coords(v);
        [c[0] - c[0].floor(), c[1] - c[1].floor()]
    }
}

/// ∮ dz/y on the ellipse with foci f1, f2 at elliptic radius `eta`, with
/// `n` trapezoid nodes. Errors if the lift does not close up.
fn loop_integral(params: &CurveParams, f1: C, f2: C, eta: f64, n: usize) -> Result<C> {
    let c = 0.5 * (f1 + f2);
    let half = 0.5 * (f2 - f1);
    let z = |t: f64| c + half * C::new(eta, t).cosh();
    let dz = |t: f64| half * C::new(eta, t).sinh() * C::new(0.0, 1.0);
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let start = params.cubic(z(0.0)).sqrt();
    let mut prev = start;
    let mut acc = C::new(0.0, 0.0);
    for j in 0..n {
        let t = j as f64 * h;
        let y = if j == 0 {
            start
        } else {
            continue_sqrt(params.cubic(z(t)), prev)
                .ok_or_else(|| Error::Accuracy("loop lift ambiguous; increase nodes".into()))?
        };
        acc += dz(t) / y * h;
        prev = y;
    }
    let back = continue_sqrt(params.cubic(z(0.0)), prev)
        .ok_or_else(|| Error::Accuracy("loop lift ambiguous at closure".into()))?;
    if (back - start).norm() > 1e-6 * (1.0 + start.norm()) {
        return Err(Error::Accuracy("loop lift does not close".into()));
    }
    Ok(acc)
}

/// Elliptic radius of `p` relative to the focal segment [f1, f2].
fn elliptic_radius(f1: C, f2: C, p: C) -> f64 {
    let c = 0.5 * (f1 + f2);
    let half = 0.5 * (f2 - f1);
    let w = (p - c) / half;
    // acosh with the branch of nonnegative real part
    let a = (w + (w * w - 1.0).sqrt()).ln();
    a.re.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes: usize,
    /// Required agreement between deformed loops and doubled orders.
    pub tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { nodes: 256, tol: 1e-8 }
    }
}

/// Periods of dz/y over loops around {0, a} and {0, b}, oriented so that
/// Im(ω2 / ω1) > 0.
pub fn periods(params: &CurveParams, cfg: &QuadratureConfig) -> Result<PeriodLattice> {
    params.validate()?;
    let zero = C::new(0.0, 0.0);
    let (a, b) = (params.a(), params.b());
    let mut out = [C::new(0.0, 0.0); 2];
    let mut residual: f64 = 0.0;
    for (k, (f, other)) in [(a, b), (b, a)].into_iter().enumerate() {
        let eta_other = elliptic_radius(zero, f, other);
        let eta = 0.5 * eta_other;
        let mut n = cfg.nodes;
        let w = loop {
            let w = loop_integral(params, zero, f, eta, n);
            let w2 = loop_integral(params, zero, f, eta, 2 * n);
            match (w, w2) {
                (Ok(w), Ok(w2)) if (w - w2).norm() <= 1e-10 * w2.norm() => {
                    residual = residual.max((w - w2).norm() / w2.norm());
                    break w2;
                }
                _ if n > 1 << 16 => return Err(Error::Accuracy("period quadrature did not converge".into())),
                _ => n *= 2,
            }
        };
        let deformed = loop_integral(params, zero, f, 0.7 * eta, 4 * n)?;
        residual = residual.max((deformed - w).norm() / w.norm());
        out[k] = w;
    }
    if residual > cfg.tol {
        return Err(Error::Accuracy(format!("period residual {residual:e}")));
    }
    let (w1, mut w2) = (out[0], out[1]);
    if (w2 / w1).im < 0.0 {
        w2 = -w2;
    }
    if (w2 / w1).im.abs() < 1e-12 {
        return Err(Error::Accuracy("degenerate period lattice".into()));
    }
    Ok(PeriodLattice { omega1: [w1.re, w1.im], omega2: [w2.re, w2.im], residual })
}

/// Torus point of a curve point, in [0, 1)².
pub fn abel_jacobi(params: &CurveParams, lattice: &PeriodLattice, p: &CurvePoint) -> Result<[f64; 2]> {
    if let ZPoint::Finite(z) = p.z {
        if (z - params.b()).norm() == 0.0 {
            return Ok(lattice.to_torus(lattice.half_period(Branch::B)));
        }
    }
    let (i, y_end) = lifted_integral(params, lattice, p.z)?;
    let sign = match (p.z, y_end) {
        (ZPoint::Finite(z), Some(y)) => {
            let target = p.w * (z - params.b());
            if (y - target).norm() <= (y + target).norm() {
                1.0
            } else {
                -1.0
            }
        }
        _ => 1.0,
    };
    Ok(lattice.to_torus(i * sign))
}

// ---------------------------------------------------------------------------
// sphere charts and grids

/// Stereographic projection from the north pole.
pub fn sphere_to_plane(x: &[f64; 3]) -> ZPoint {
    let d = 1.0 - x[2];
    if d <= 1e-15 {
        ZPoint::Infinity
    } else {
        ZPoint::Finite(C::new(x[0] / d, x[1] / d))
    }
}

pub fn plane_to_sphere(z: ZPoint) -> [f64; 3] {
    match z {
        ZPoint::Infinity => [0.0, 0.0, 1.0],
        ZPoint::Finite(z) => {
            let n2 = z.norm_sqr();
            [2.0 * z.re / (n2 + 1.0), 2.0 * z.im / (n2 + 1.0), (n2 - 1.0) / (n2 + 1.0)]
        }
    }
}

/// Subdivided octahedron projected to S², triangles oriented outward.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl SphereGrid {
    pub fn octahedral(n: usize) -> Self {
        let n = n.max(1);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for sx in [1.0, -1.0] {
            for sy in [1.0, -1.0] {
                for sz in [1.0, -1.0] {
                    let a = [sx, 0.0, 0.0];
                    let b = [0.0, sy, 0.0];
                    let c = [0.0, 0.0, sz];
                    let base = vertices.len();
                    let idx = |i: usize, j: usize| -> usize {
                        // row i from a, j steps toward c within the row
                        base + i * (i + 1) / 2 + j
                    };
                    for i in 0..=n {
                        for j in 0..=i {
                            let (u, v) = ((i - j) as f64 / n as f64, j as f64 / n as f64);
                            let w = 1.0 - u - v;
                            let p = [
                                w * a[0] + u * b[0] + v * c[0],
                                w * a[1] + u * b[1] + v * c[1],
                                w * a[2] + u * b[2] + v * c[2],
                            ];
                            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                            vertices.push([p[0] / r, p[1] / r, p[2] / r]);
                        }
                    }
                    for i in 0..n {
                        for j in 0..=i {
                            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                            if j < i {
                                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                            }
                        }
                    }
                }
            }
        }
        for t in &mut triangles {
            let (p, q, r) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            let u = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
            let v = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
            let nrm = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
            if nrm[0] * p[0] + nrm[1] * p[1] + nrm[2] * p[2] < 0.0 {
                t.swap(1, 2);
            }
        }
        Self { vertices, triangles }
    }

    /// Longest chordal triangle edge.
    pub fn max_edge(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(i, j)| chord(&self.vertices[i], &self.vertices[j]))
            .fold(0.0, f64::max)
    }

    /// Smallest subdivision whose longest edge is at most `step`.
    pub fn resolving(step: f64) -> Self {
        // the octahedral map stretches edges by at most ~1.75 over the flat face
        let mut n = ((std::f64::consts::FRAC_PI_2 / step).ceil() as usize).max(1);
        loop {
            let g = Self::octahedral(n);
            if g.max_edge() <= step {
                return g;
            }
            n = (n as f64 * 1.15).ceil() as usize;
        }
    }
}

fn chord(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

// ---------------------------------------------------------------------------
// two-valued data on the sphere

/// A two-valued map from S² into a flat 2-dimensional target.
pub trait SphereDatum: Sync {
    fn target(&self) -> TargetManifold;
    /// Sheet-major values [p1x, p1y, p2x, p2y] at a unit vector.
    fn eval(&self, x: &[f64; 3]) -> Result<[f64; 4]>;
}

/// Datum {[AJ(P)] : P over z} with radial blending near ramification images.
#[derive(Debug, Clone)]
pub struct TorusDatum {
    pub params: CurveParams,
    pub lattice: PeriodLattice,
    pub mollify_radius: f64,
    /// Ramification points on S² with their torus images.
    pub ramification: Vec<([f64; 3], [f64; 2])>,
}

impl TorusDatum {
    pub fn new(params: CurveParams, mollify_radius: f64) -> Result<Self> {
        let lattice = periods(&params, &QuadratureConfig::default())?;
        let ramification = [
            (ZPoint::Finite(C::new(0.0, 0.0)), Branch::Zero),
            (ZPoint::Finite(params.a()), Branch::A),
            (ZPoint::Finite(params.b()), Branch::B),
            (ZPoint::Infinity, Branch::Infinity),
        ]
        .into_iter()
        .map(|(z, e)| (plane_to_sphere(z), lattice.to_torus(lattice.half_period(e))))
        .collect();
        Ok(Self { params, lattice, mollify_radius, ramification })
    }

    /// Unmollified sheets at a sphere point.
    pub fn raw(&self, x: &[f64; 3]) -> Result<[f64; 4]> {
        let (i, _) = lifted_integral(&self.params, &self.lattice, sphere_to_plane(x))?;
        let p = self.lattice.to_torus(i);
        let q = self.lattice.to_torus(-i);
        Ok([p[0], p[1], q[0], q[1]])
    }
}

impl SphereDatum for TorusDatum {
    fn target(&self) -> TargetManifold {
        TargetManifold::FlatTorus2
    }

    fn eval(&self, x: &[f64; 3]) -> Result<[f64; 4]> {
        let raw = self.raw(x)?;
        for (xe, pe) in &self.ramification {
            let r = chord(x, xe);
            if r < self.mollify_radius {
                let lam = (r / self.mollify_radius).sqrt();
                let d = [torus_min(raw[0] - pe[0]), torus_min(raw[1] - pe[1])];
                let w = |v: f64| v - v.floor();
                return Ok([
                    w(pe[0] + lam * d[0]),
                    w(pe[1] + lam * d[1]),
                    w(pe[0] - lam * d[0]),
                    w(pe[1] - lam * d[1]),
                ]);
            }
        }
        Ok(raw)
    }
}

/// The flat control datum {±y(z) ((1 - x3)/2)^(3/2)} into R², blended the same
/// way near the four branch points.
#[derive(Debug, Clone)]
pub struct PlaneDatum {
    pub params: CurveParams,
    pub mollify_radius: f64,
    pub scale: f64,
}

impl PlaneDatum {
    pub fn new(params: CurveParams, mollify_radius: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, mollify_radius, scale: 1.0 })
    }

    fn raw(&self, x: &[f64; 3]) -> [f64; 2] {
        match sphere_to_plane(x) {
            ZPoint::Infinity => [0.0, 0.0],
            ZPoint::Finite(z) => {
                let f = if z.norm() > 1e6 {
                    let (a, b) = (self.params.a(), self.params.b());
                    ((1.0 - a / z) * (1.0 - b / z)).sqrt() * z.powf(1.5) / (1.0 + z.norm_sqr()).powf(1.5)
                } else {
                    self.params.cubic(z).sqrt() * ((1.0 - x[2]) / 2.0).powf(1.5)
                };
                [self.scale * f.re, self.scale * f.im]
            }
        }
    }

    fn branch_points(&self) -> [[f64; 3]; 4] {
        let p = &self.params;
        [
            plane_to_sphere(ZPoint::Finite(C::new(0.0, 0.0))),
            plane_to_sphere(ZPoint::Finite(p.a())),
            plane_to_sphere(ZPoint::Finite(p.b())),
            [0.0, 0.0, 1.0],
        ]
    }
}

impl SphereDatum for PlaneDatum {
    fn target(&self) -> TargetManifold {
        TargetManifold::Euclidean(2)
    }

    fn eval(&self, x: &[f64; 3]) -> Result<[f64; 4]> {
        let f = self.raw(x);
        let mut lam = 1.0;
        for xe in self.branch_points() {
            let r = chord(x, &xe);
            if r < self.mollify_radius {
                lam = (r / self.mollify_radius).sqrt();
            }
        }
        Ok([lam * f[0], lam * f[1], -lam * f[0], -lam * f[1]])
    }
}

/// Two-valued datum sampled on a sphere grid.
#[derive(Debug, Clone)]
pub struct BoundaryDatum {
    pub grid: SphereGrid,
    pub target: TargetManifold,
    pub samples: Vec<[f64; 4]>,
    pub mollify_radius: f64,
    /// max G(v_i, v_j) / |x_i - x_j| over grid edges.
    pub lipschitz: f64,
}

pub fn boundary_datum<D: SphereDatum>(datum: &D, grid: SphereGrid, mollify_radius: f64) -> Result<BoundaryDatum> {
    if grid.max_edge() > 0.5 * mollify_radius {
        return Err(Error::UnderResolved(format!(
            "grid step {} does not resolve mollification radius {}",
            grid.max_edge(),
            mollify_radius
        )));
    }
    let samples: Vec<[f64; 4]> = grid.vertices.par_iter().map(|x| datum.eval(x)).collect::<Result<_>>()?;
    let target = datum.target();
    let lipschitz = grid
        .triangles
        .par_iter()
        .map(|t| {
            let mut perm = [0usize; 2];
            let mut best: f64 = 0.0;
            for (i, j) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let g = match_into(&samples[i], &samples[j], 2, 2, &target, &mut perm).sqrt();
                best = best.max(g / chord(&grid.vertices[i], &grid.vertices[j]));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(BoundaryDatum { grid, target, samples, mollify_radius, lipschitz })
}

/// 0-homogeneous extension x -> datum((x - center)/|x - center|) on every
/// active node; the node at the center (if any) takes the direction e_3.
pub fn homogeneous_field<D: SphereDatum>(datum: &D, domain: Arc<LatticeDomain>, center: &[f64; 3]) -> Result<QField> {
    if domain.m() != 3 {
        return Err(Error::Dimension("sphere data extend to 3-dimensional domains".into()));
    }
    let target = datum.target();
    let nodes: Vec<usize> = domain.active_nodes().collect();
    let vals: Vec<[f64; 4]> = nodes
        .par_iter()
        .map(|&i| {
            let x = domain.position(i);
            let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let dir = if r > 0.0 { [d[0] / r, d[1] / r, d[2] / r] } else { [0.0, 0.0, 1.0] };
            datum.eval(&dir)
        })
        .collect::<Result<_>>()?;
    let mut u = QField::constant(domain, target, &QPoint::repeated(2, &[0.0, 0.0])?)?;
    for (&i, v) in nodes.iter().zip(&vals) {
        u.set(i, v)?;
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub degree: i64,
    pub total_area: f64,
    pub residual: f64,
}

/// Lift both sheets over each triangle (matched to the first vertex) and
/// add the signed areas. `Err` if the total is not near an integer.
pub fn degree(datum: &BoundaryDatum) -> Result<DegreeReport> {
    let t = datum.target;
    // collected first so the summation order does not depend on scheduling
    let areas: Vec<f64> = datum
        .grid
        .triangles
        .par_iter()
        .map(|tri| lifted_triangles(datum, tri, t).iter().map(|(p0, p1, p2)| signed_area(p0, p1, p2)).sum::<f64>())
        .collect();
    let total: f64 = areas.iter().sum();
    let degree = total.round();
    let residual = (total - degree).abs();
    if residual > 0.1 {
        return Err(Error::UnreliableDegree { residual });
    }
    Ok(DegreeReport { degree: degree as i64, total_area: total, residual })
}

fn signed_area(p0: &[f64; 2], p1: &[f64; 2], p2: &[f64; 2]) -> f64 {
    0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
}

type Tri2 = ([f64; 2], [f64; 2], [f64; 2]);

fn lifted_triangles(datum: &BoundaryDatum, tri: &[usize; 3], t: TargetManifold) -> Vec<Tri2> {
    let s0 = &datum.samples[tri[0]];
    let mut p1 = [0usize; 2];
    let mut p2 = [0usize; 2];
    match_into(s0, &datum.samples[tri[1]], 2, 2, &t, &mut p1);
    match_into(s0, &datum.samples[tri[2]], 2, 2, &t, &mut p2);
    (0..2)
        .map(|l| {
            let a = [s0[2 * l], s0[2 * l + 1]];
            let lift = |s: &[f64; 4], k: usize| -> [f64; 2] {
                let d = t.diff(&a, &s[2 * k..2 * k + 2]);
                [a[0] + d[0], a[1] + d[1]]
            };
            (a, lift(&datum.samples[tri[1]], p1[l]), lift(&datum.samples[tri[2]], p2[l]))
        })
        .collect()
}

/// Number of lifted sheet-triangles covering the torus point `q`, unsigned
/// and signed.
pub fn covering_count(datum: &BoundaryDatum, q: [f64; 2]) -> (usize, i64) {
    let t = datum.target;
    let mut unsigned = 0;
    let mut signed = 0;
    for tri in &datum.grid.triangles {
        for (p0, p1, p2) in lifted_triangles(datum, tri, t) {
            let area = signed_area(&p0, &p1, &p2);
            if area == 0.0 {
                continue;
            }
            let shifts: Vec<f64> = if t == TargetManifold::FlatTorus2 { vec![-1.0, 0.0, 1.0] } else { vec![0.0] };
            for &sx in &shifts {
                for &sy in &shifts {
                    let qq = [q[0] + sx, q[1] + sy];
                    let a = signed_area(&p0, &p1, &qq);
                    let b = signed_area(&p1, &p2, &qq);
                    let c = signed_area(&p2, &p0, &qq);
                    let inside = if area > 0.0 { a > 0.0 && b > 0.0 && c > 0.0 } else { a < 0.0 && b < 0.0 && c < 0.0 };
                    if inside {
                        unsigned += 1;
                        signed += if area > 0.0 { 1 } else { -1 };
                    }
                }
            }
        }
    }
    (unsigned, signed)
}
