//! Mollified energy θ(x, r), pinching, the radial quantity P and a discrete
//! subharmonicity check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{FieldEnergy, NodeKind, QField};
use crate::sum::KahanSum;

/// Radial cut-off profile φ on [0, 1), vanishing for t >= 1.
#[derive(Debug, Clone, Copy)]
pub struct Kernel {
    pub name: &'static str,
    phi: fn(f64) -> f64,
    dphi: fn(f64) -> f64,
}

fn quad_phi(t: f64) -> f64 {
    if t < 1.0 {
        (1.0 - t.max(0.0)).powi(2)
    } else {
        0.0
    }
}

fn quad_dphi(t: f64) -> f64 {
    if t < 1.0 {
        -2.0 * (1.0 - t.max(0.0))
    } else {
        0.0
    }
}

fn cubic_phi(t: f64) -> f64 {
    if t < 1.0 {
        (1.0 - t.max(0.0)).powi(3)
    } else {
        0.0
    }
}

fn cubic_dphi(t: f64) -> f64 {
    if t < 1.0 {
        -3.0 * (1.0 - t.max(0.0)).powi(2)
    } else {
        0.0
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Self::quadratic()
    }
}

impl Kernel {
    /// φ(t) = (1 - t)^2.
    pub fn quadratic() -> Self {
        Self { name: "quadratic", phi: quad_phi, dphi: quad_dphi }
    }

    /// φ(t) = (1 - t)^3. Fails the slope condition near t = 1.
    pub fn cubic() -> Self {
        Self { name: "cubic", phi: cubic_phi, dphi: cubic_dphi }
    }

    pub fn custom(name: &'static str, phi: fn(f64) -> f64, dphi: fn(f64) -> f64) -> Self {
        Self { name, phi, dphi }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "quadratic" => Ok(Self::quadratic()),
            "cubic" => Ok(Self::cubic()),
            _ => Err(Error::InvalidParameter(format!("unknown kernel '{name}'"))),
        }
    }

    #[inline]
    pub fn phi(&self, t: f64) -> f64 {
        (self.phi)(t)
    }

    #[inline]
    pub fn dphi(&self, t: f64) -> f64 {
        (self.dphi)(t)
    }

    /// Check φ >= 0, φ' <= 0, -φ' >= (1 - t)^+ and φ(1) = 0 on a 10^4 grid.
    pub fn check_admissible(&self) -> Result<()> {
        let n = 10_000;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let (p, dp) = (self.phi(t), self.dphi(t));
            if p < 0.0 {
                return Err(Error::InvalidParameter(format!("φ({t}) < 0")));
            }
            if dp > 1e-14 {
                return Err(Error::InvalidParameter(format!("φ'({t}) > 0")));
            }
            if t < 1.0 && -dp < (1.0 - t) - 1e-12 {
                return Err(Error::InvalidParameter(format!("-φ'({t}) < 1 - t")));
            }
        }
        if self.phi(1.0) != 0.0 || self.phi(1.5) != 0.0 {
            return Err(Error::InvalidParameter("φ does not vanish past 1".into()));
        }
        Ok(())
    }

    /// ∫_0^1 φ(t) t^p dt by composite Simpson.
    pub fn moment(&self, p: f64) -> f64 {
        let n = 20_000;
        let h = 1.0 / n as f64;
        let f = |t: f64| if t == 0.0 && p < 0.0 { 0.0 } else { self.phi(t) * t.powf(p) };
        let mut s = f(0.0) + f(1.0);
        for k in 1..n {
            s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }
}

/// Tabulated ψ(t) = ∫_1^t φ'(s) s^(m-2) ds on [0, 1], linear interpolation.
#[derive(Debug, Clone)]
pub struct Psi {
    m: usize,
    table: Vec<f64>,
}

impl Psi {
    pub fn new(kernel: &Kernel, m: usize) -> Self {
        let n = 10_000;
        let h = 1.0 / n as f64;
        let g = |t: f64| kernel.dphi(t) * t.powi(m as i32 - 2);
        let mut table = vec![0.0; n + 1];
        // integrate downward from t = 1 with the midpoint-corrected trapezoid
        for k in (0..n).rev() {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            let mid = 0.5 * (a + b);
            let seg = h / 6.0 * (g(a.max(1e-300)) + 4.0 * g(mid) + g(b));
            table[k] = table[k + 1] - seg;
        }
        Self { m, table }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        let n = self.table.len() - 1;
        let x = t.max(0.0) * n as f64;
        let k = (x.floor() as usize).min(n - 1);
        let f = x - k as f64;
        self.table[k] * (1.0 - f) + self.table[k + 1] * f
    }
}

/// The constant C_m in ψ(a) - ψ(2a) >= C_m a^(m-1) for a in (0, 1/2].
pub fn psi_constant(m: usize) -> f64 {
    let first = if m == 1 {
        std::f64::consts::LN_2
    } else {
        (2f64.powi(m as i32 - 1) - 1.0) / (m as f64 - 1.0)
    };
    first - (2f64.powi(m as i32) - 1.0) / (2.0 * m as f64)
}

fn check_ball(fe: &FieldEnergy, x: &[f64], r: f64) -> Result<()> {
    let d = fe.domain();
    if x.len() != d.m() {
        return Err(Error::Dimension("centre has wrong dimension".into()));
    }
    if r < 2.0 * d.h() {
        return Err(Error::UnderResolved(format!("r = {r} < 2h = {}", 2.0 * d.h())));
    }
    if !d.fits_ball(x, r) {
        return Err(Error::Domain(format!("ball of radius {r} leaves the domain")));
    }
    Ok(())
}

/// θ(x, r) = r^(2-m) Σ φ(|x-y|/r) |Du(y)|^2 h^m.
pub fn theta(fe: &FieldEnergy, kernel: &Kernel, x: &[f64], r: f64) -> Result<f64> {
    check_ball(fe, x, r)?;
    Ok(theta_unchecked(fe, kernel, x, r))
}

/// θ(x, r) computed straight from the field, evaluating node densities only
/// inside the ball. Useful on lattices too large for a [`FieldEnergy`].
pub fn theta_field(u: &QField, kernel: &Kernel, x: &[f64], r: f64) -> Result<f64> {
    let d = u.domain();
    if x.len() != d.m() {
        return Err(Error::Dimension("centre has wrong dimension".into()));
    }
    if r < 2.0 * d.h() {
        return Err(Error::UnderResolved(format!("r = {r} < 2h = {}", 2.0 * d.h())));
    }
    if !d.fits_ball(x, r) {
        return Err(Error::Domain(format!("ball of radius {r} leaves the domain")));
    }
    let m = d.m() as i32;
    let mut acc = KahanSum::new();
    d.for_each_in_ball(x, r, |i, off| {
        let t = off.iter().map(|v| v * v).sum::<f64>().sqrt() / r;
        let w = kernel.phi(t);
        if w > 0.0 {
            acc.add(w * u.node_density(i));
        }
    });
    Ok(acc.value() * d.h().powi(m) * r.powi(2 - m))
}

pub(crate) fn theta_unchecked(fe: &FieldEnergy, kernel: &Kernel, x: &[f64], r: f64) -> f64 {
    let d = fe.domain();
    let m = d.m() as i32;
    let mut acc = KahanSum::new();
    d.for_each_in_ball(x, r, |i, off| {
        let t = off.iter().map(|v| v * v).sum::<f64>().sqrt() / r;
        let w = kernel.phi(t);
        if w > 0.0 {
            acc.add(w * fe.density(i));
        }
    });
    acc.value() * d.h().powi(m) * r.powi(2 - m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pinch {
    /// θ(x, 4s) - θ(x, 2s), clamped below at -slack.
    pub value: f64,
    pub raw: f64,
    /// Amount by which `raw` fell below -slack (0 if it did not).
    pub negative_excess: f64,
}

/// W(x, s) = θ(x, 4s) - θ(x, 2s).
pub fn pinch(fe: &FieldEnergy, kernel: &Kernel, x: &[f64], s: f64, slack: f64) -> Result<Pinch> {
    check_ball(fe, x, 4.0 * s)?;
    if 2.0 * s < 2.0 * fe.domain().h() {
        return Err(Error::UnderResolved(format!("2s = {} < 2h", 2.0 * s)));
    }
    let raw = theta_unchecked(fe, kernel, x, 4.0 * s) - theta_unchecked(fe, kernel, x, 2.0 * s);
    Ok(Pinch {
        value: raw.max(-slack),
        raw,
        negative_excess: (-slack - raw).max(0.0),
    })
}

/// P(x, r) = r^(-m) Σ_{|y-x|<=r} (y-x)^T M_y (y-x) h^m.
pub fn radial_quantity_p(fe: &FieldEnergy, x: &[f64], r: f64) -> Result<f64> {
    check_ball(fe, x, r)?;
    Ok(radial_p_unchecked(fe, x, r))
}

pub(crate) fn radial_p_unchecked(fe: &FieldEnergy, x: &[f64], r: f64) -> f64 {
    let d = fe.domain();
    let m = d.m();
    let mut acc = KahanSum::new();
    d.for_each_in_ball(x, r, |i, off| {
        let mz = fe.matrix(i);
        let mut v = 0.0;
        for a in 0..m {
            for b in 0..m {
                v += off[a] * mz[a * m + b] * off[b];
            }
        }
        acc.add(v);
    });
    acc.value() * d.h().powi(m as i32) / r.powi(m as i32)
}

/// Constant c with P(x, 2s) <= c W(x, s) for stationary maps and any
/// admissible kernel; only -φ'(t) >= (1 - t)^+ enters.
pub fn p_pinch_constant(m: usize) -> f64 {
    3.0 * 2f64.powi(m as i32)
}

/// Σ over B_{r/2}(x) of |y-x| r^(1-m) |D_{r_x} u|^2 h^m, the right-hand side
/// of the lower monotonicity bound (without its constant).
pub fn radial_lower_integral(fe: &FieldEnergy, x: &[f64], r: f64) -> Result<f64> {
    check_ball(fe, x, r)?;
    let d = fe.domain();
    let m = d.m();
    let mut acc = KahanSum::new();
    d.for_each_in_ball(x, 0.5 * r, |i, off| {
        let rho2: f64 = off.iter().map(|v| v * v).sum();
        if rho2 == 0.0 {
            return;
        }
        let mz = fe.matrix(i);
        let mut v = 0.0;
        for a in 0..m {
            for b in 0..m {
                v += off[a] * mz[a * m + b] * off[b];
            }
        }
        acc.add(v / rho2.sqrt());
    });
    Ok(acc.value() * d.h().powi(m as i32) / r.powi(m as i32 - 1))
}

/// Pointwise density Θ(x) estimated from θ at a single small radius, for
/// fields homogeneous of degree zero near x. Requires m >= 3.
pub fn density_estimate(fe: &FieldEnergy, kernel: &Kernel, x: &[f64], r: f64) -> Result<f64> {
    let m = fe.domain().m();
    if m < 3 {
        return Err(Error::InvalidParameter("density normalisation needs m >= 3".into()));
    }
    let norm = (m as f64 - 2.0) * kernel.moment(m as f64 - 3.0);
    Ok(theta(fe, kernel, x, r)? / norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    /// Pinch W(x, s) at s = r / 4 for each listed radius r.
    pub pinch: Vec<f64>,
}

impl EnergyProfile {
    /// Columns x1..xm, r, theta, pinch, P.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in 0..self.center.len() {
            s.push_str(&format!("x{},", a + 1));
        }
        s.push_str("r,theta,pinch,P\n");
        for k in 0..self.radii.len() {
            for v in &self.center {
                s.push_str(&format!("{v},"));
            }
            s.push_str(&format!("{},{},{},{}\n", self.radii[k], self.theta[k], self.pinch[k], self.p[k]));
        }
        s
    }
}

/// θ, P and W along a list of radii, skipping radii that do not fit.
pub fn energy_profile(fe: &FieldEnergy, kernel: &Kernel, x: &[f64], radii: &[f64]) -> EnergyProfile {
    let mut prof = EnergyProfile {
        center: x.to_vec(),
        radii: Vec::new(),
        theta: Vec::new(),
        p: Vec::new(),
        pinch: Vec::new(),
    };
    for &r in radii {
        let (Ok(t), Ok(p)) = (theta(fe, kernel, x, r), radial_quantity_p(fe, x, r)) else { continue };
        let w = pinch(fe, kernel, x, r / 4.0, 0.0).map(|w| w.raw).unwrap_or(f64::NAN);
        prof.radii.push(r);
        prof.theta.push(t);
        prof.p.push(p);
        prof.pinch.push(w);
    }
    prof
}

/// A convex C^2 function on a Euclidean target.
pub trait ConvexFunction {
    fn value(&self, p: &[f64]) -> f64;
    /// Row-major Hessian.
    fn hessian(&self, p: &[f64]) -> Vec<f64>;
}

/// f(p) = |p - p0|^2.
#[derive(Debug, Clone)]
pub struct SquaredDistance(pub Vec<f64>);

impl ConvexFunction for SquaredDistance {
    fn value(&self, p: &[f64]) -> f64 {
        p.iter().zip(&self.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn hessian(&self, p: &[f64]) -> Vec<f64> {
        let n = p.len();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 2.0;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubharmonicityReport {
    pub nodes_checked: usize,
    pub violations: usize,
    /// Most negative discrete Laplacian found (0 if none negative).
    pub worst: f64,
    pub tol: f64,
}

/// Discrete Laplacian of x -> Σ_l f(u_l(x)) at interior nodes; values below
/// -tol count as violations.
pub fn subharmonicity_check<F: ConvexFunction>(u: &QField, f: &F, tol: f64) -> Result<SubharmonicityReport> {
    if !matches!(u.target(), crate::targets::TargetManifold::Euclidean(_)) {
        return Err(Error::Domain("subharmonicity check needs a Euclidean target".into()));
    }
    let d = u.domain();
    let n = u.n();
    let sum_f = |i: usize| -> f64 { u.value(i).chunks(n).map(|p| f.value(p)).sum() };
    // convexity at the field values of a few nodes
    for i in d.active_nodes().step_by(97).take(64) {
        for p in u.value(i).chunks(n) {
            let hs = nalgebra::DMatrix::from_row_slice(n, n, &f.hessian(p));
            let sym = (&hs + hs.transpose()) * 0.5;
            let min = sym.symmetric_eigenvalues().min();
            if min < -1e-12 {
                return Err(Error::Domain(format!("Hessian not PSD (eigenvalue {min})")));
            }
        }
    }
    let h2 = d.h() * d.h();
    let mut rep = SubharmonicityReport { nodes_checked: 0, violations: 0, worst: 0.0, tol };
    for i in d.active_nodes() {
        if d.kind(i) != NodeKind::Interior {
            continue;
        }
        let c = sum_f(i);
        let mut lap = 0.0;
        for axis in 0..d.m() {
            let a = d.neighbor(i, axis, 1).expect("interior");
            let b = d.neighbor(i, axis, -1).expect("interior");
            lap += (sum_f(a) + sum_f(b) - 2.0 * c) / h2;
        }
        rep.nodes_checked += 1;
        if lap < -tol {
            rep.violations += 1;
        }
        rep.worst = rep.worst.min(lap);
    }
    Ok(rep)
}
