//! Quantitative symmetry, strata, effective spanning, covering trees and
//! Minkowski-content estimates.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{FieldEnergy, LatticeDomain};
use crate::monotone::{psi_constant, radial_p_unchecked, theta, theta_unchecked, Kernel};
use crate::qspace::match_into;

/// Eigen-analysis of the normalised energy matrix of one ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub center: Vec<f64>,
    pub radius: f64,
    /// θ(x, 2r) - θ(x, r).
    pub pinch: f64,
    /// Eigenvalues of r^(2-m) Σ_{B_r} M_z h^m, ascending.
    pub eigenvalues: Vec<f64>,
    /// Matching unit eigenvectors.
    pub eigenvectors: Vec<Vec<f64>>,
    /// best_plane_energy[k] = sum of the k smallest eigenvalues, k = 0..=m.
    pub best_plane_energy: Vec<f64>,
}

impl SymmetryReport {
    pub fn is_symmetric(&self, k: usize, eps: f64) -> bool {
        k < self.best_plane_energy.len() && self.pinch < eps && self.best_plane_energy[k] <= eps
    }

    /// Orthonormal basis of the best k-plane.
    pub fn best_plane(&self, k: usize) -> Vec<Vec<f64>> {
        self.eigenvectors[..k].to_vec()
    }
}

/// Ascending eigen-decomposition of a symmetric row-major matrix.
pub fn sorted_eigen(a: &[f64], m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mat = DMatrix::from_row_slice(m, m, a);
    let sym = (&mat + mat.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = idx
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (vals, vecs)
}

pub fn symmetry_report(fe: &FieldEnergy, kernel: &Kernel, x: &[f64], r: f64) -> Result<SymmetryReport> {
    let t2 = theta(fe, kernel, x, 2.0 * r)?;
    let t1 = theta(fe, kernel, x, r)?;
    Ok(report_from(fe, x, r, t2 - t1))
}

fn report_from(fe: &FieldEnergy, x: &[f64], r: f64, pinch: f64) -> SymmetryReport {
    let m = fe.domain().m();
    let scale = r.powi(2 - m as i32);
    let mat: Vec<f64> = fe.matrix_in_ball(x, r).iter().map(|v| v * scale).collect();
    let (vals, vecs) = sorted_eigen(&mat, m);
    let mut best = vec![0.0; m + 1];
    for k in 1..=m {
        best[k] = best[k - 1] + vals[k - 1].max(0.0);
    }
    // the full sum is the trace; keep it exact
    best[m] = (0..m).map(|a| mat[a * m + a]).sum();
    SymmetryReport {
        center: x.to_vec(),
        radius: r,
        pinch,
        eigenvalues: vals,
        eigenvectors: vecs,
        best_plane_energy: best,
    }
}

/// Whether B_s(x) is (k, ε)-symmetric, evaluating the cheap pinch first.
fn ball_symmetric(fe: &FieldEnergy, kernel: &Kernel, x: &[f64], s: f64, k: usize, eps: f64) -> bool {
    let pinch = theta_unchecked(fe, kernel, x, 2.0 * s) - theta_unchecked(fe, kernel, x, s);
    if !(pinch < eps) {
        return false;
    }
    report_from(fe, x, s, pinch).is_symmetric(k, eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumParams {
    pub k: usize,
    pub eps: f64,
    pub r_min: f64,
    /// Largest ladder radius (ladder radii are powers of 2 below 1).
    pub s_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub k: usize,
    pub eps: f64,
    pub r_min: f64,
    pub ladder: Vec<f64>,
    /// Nodes examined.
    pub window: Vec<usize>,
    /// Flagged nodes, increasing.
    pub flagged: Vec<usize>,
}

/// Dyadic radii 2^-j with r_min <= 2^-j <= s_max and 2^-j < 1, descending.
pub fn dyadic_ladder(r_min: f64, s_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = 0.5;
    while s >= r_min * (1.0 - 1e-12) {
        if s <= s_max * (1.0 + 1e-12) {
            out.push(s);
        }
        s *= 0.5;
    }
    out
}

/// Flag nodes of `window` for which no ladder ball is (k+1, ε)-symmetric.
pub fn extract_stratum(
    fe: &FieldEnergy,
    kernel: &Kernel,
    params: &StratumParams,
    window: &[usize],
) -> Result<StratumSpec> {
    let d = fe.domain();
    if params.k >= d.m() {
        return Err(Error::Dimension(format!("k = {} must be below m = {}", params.k, d.m())));
    }
    let ladder = dyadic_ladder(params.r_min, params.s_max);
    if ladder.is_empty() {
        return Err(Error::InvalidParameter("empty scale ladder".into()));
    }
    if *ladder.last().unwrap() < 2.0 * d.h() {
        return Err(Error::UnderResolved(format!(
            "ladder radius {} below 2h = {}",
            ladder.last().unwrap(),
            2.0 * d.h()
        )));
    }
    for &i in window {
        if !d.fits_ball(&d.position(i), 2.0 * ladder[0]) {
            return Err(Error::Domain(format!("ladder balls at node {i} leave the domain")));
        }
    }
    let flags: Vec<bool> = window
        .par_iter()
        .map(|&i| {
            let x = d.position(i);
            !ladder.iter().any(|&s| ball_symmetric(fe, kernel, &x, s, params.k + 1, params.eps))
        })
        .collect();
    let flagged = window.iter().zip(&flags).filter(|(_, f)| **f).map(|(i, _)| *i).collect();
    Ok(StratumSpec {
        k: params.k,
        eps: params.eps,
        r_min: params.r_min,
        ladder,
        window: window.to_vec(),
        flagged,
    })
}

/// Result of an effective-spanning search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spanning {
    pub spans: bool,
    /// Indices y_0, ..., y_k of a witness chain when `spans`.
    pub witnesses: Vec<usize>,
    pub nodes_visited: usize,
}

/// Search for y_0, ..., y_k among `points` with each y_i at distance at
/// least `threshold` from y_0 + span(y_1 - y_0, ..., y_{i-1} - y_0).
/// Exhaustive depth-first search; candidates are tried farthest first.
pub fn spanning_chain(points: &[Vec<f64>], threshold: f64, k: usize, budget: usize) -> Result<Spanning> {
    let m = points.first().map_or(0, |p| p.len());
    if points.iter().any(|p| p.len() != m) {
        return Err(Error::Dimension("points of mixed dimension".into()));
    }
    if k > m && !points.is_empty() {
        return Err(Error::Dimension(format!("k = {k} exceeds ambient dimension {m}")));
    }
    if points.is_empty() {
        return Ok(Spanning { spans: false, witnesses: vec![], nodes_visited: 0 });
    }
    if k == 0 {
        return Ok(Spanning { spans: true, witnesses: vec![0], nodes_visited: 1 });
    }
    let mut st = SpanSearch {
        pts: points,
        thr2: threshold * threshold,
        k,
        budget,
        visited: 0,
        chain: Vec::with_capacity(k + 1),
        basis: Vec::with_capacity(k),
    };
    for y0 in 0..points.len() {
        st.chain.clear();
        st.basis.clear();
        st.chain.push(y0);
        if st.dfs()? {
            return Ok(Spanning { spans: true, witnesses: st.chain.clone(), nodes_visited: st.visited });
        }
    }
    Ok(Spanning { spans: false, witnesses: vec![], nodes_visited: st.visited })
}

/// Effective spanning at scale ρ: threshold 2ρ.
pub fn effective_spanning(points: &[Vec<f64>], rho: f64, k: usize) -> Result<Spanning> {
    spanning_chain(points, 2.0 * rho, k, 50_000_000)
}

struct SpanSearch<'a> {
    pts: &'a [Vec<f64>],
    thr2: f64,
    k: usize,
    budget: usize,
    visited: usize,
    chain: Vec<usize>,
    basis: Vec<Vec<f64>>,
}

impl SpanSearch<'_> {
    fn residual(&self, p: &[f64]) -> Vec<f64> {
        let y0 = &self.pts[self.chain[0]];
        let mut v: Vec<f64> = p.iter().zip(y0).map(|(a, b)| a - b).collect();
        for e in &self.basis {
            let c: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
        }
        v
    }

    fn dfs(&mut self) -> Result<bool> {
        self.visited += 1;
        if self.visited > self.budget {
            return Err(Error::Budget(self.visited));
        }
        if self.chain.len() == self.k + 1 {
            return Ok(true);
        }
        let mut cands: Vec<(f64, usize, Vec<f64>)> = self
            .pts
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let r = self.residual(p);
                let d2: f64 = r.iter().map(|v| v * v).sum();
                (d2 >= self.thr2).then_some((d2, i, r))
            })
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (d2, i, r) in cands {
            let n = d2.sqrt();
            self.chain.push(i);
            self.basis.push(r.iter().map(|v| v / n).collect());
            if self.dfs()? {
                return Ok(true);
            }
            self.chain.pop();
            self.basis.pop();
        }
        Ok(false)
    }
}

/// Greedy net: points kept in order when farther than `sep` from all kept.
pub fn thin_to_net(points: &[Vec<f64>], sep: f64) -> Vec<usize> {
    let s2 = sep * sep;
    let mut kept: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let far = kept.iter().all(|&j| {
            let d2: f64 = p.iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 > s2
        });
        if far {
            kept.push(i);
        }
    }
    kept
}

/// Two sides of the pinching-control inequality on one ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchingControl {
    pub lhs: f64,
    /// Σ_i θ(y_i, 4r) - θ(y_i, 2r).
    pub pinch_sum: f64,
    pub constant: f64,
    /// lhs / (constant * pinch_sum).
    pub ratio: f64,
    /// lhs / (chain factor * 2^m * Σ_i P(y_i, 2r)); at most 1 by construction.
    pub algebraic_ratio: f64,
}

/// Coefficient bound for writing unit vectors of the spanned plane in terms
/// of y_i - y_0 when the chain has gaps of at least 2ρ inside a unit ball.
fn coefficient_bound(k: usize, rho: f64) -> f64 {
    let mut b = vec![0.0; k + 1];
    for i in (1..=k).rev() {
        let tail: f64 = b[i + 1..].iter().sum();
        b[i] = (1.0 + 2.0 * tail) / (2.0 * rho);
    }
    b.iter().copied().fold(0.0, f64::max)
}

fn chain_factor(k: usize, rho: f64) -> f64 {
    let bb = coefficient_bound(k, rho);
    let kf = k as f64;
    2.0 * kf.powi(3) * bb * bb + (kf + 1.0) * (1.0 + 2.0 * kf * bb).powi(2)
}

/// Explicit C(m, ρ, k) for the pinching-control inequality.
pub fn pinching_constant(m: usize, k: usize, rho: f64) -> f64 {
    let radial = 2f64.powi(m as i32 - 1) / psi_constant(m);
    2f64.powi(m as i32) * radial * chain_factor(k, rho)
}

/// Orthonormal basis of span(y_i - y_0).
fn affine_basis(w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for y in &w[1..] {
        let mut v: Vec<f64> = y.iter().zip(&w[0]).map(|(a, b)| a - b).collect();
        for e in &basis {
            let c: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-14 {
            basis.push(v.iter().map(|a| a / n).collect());
        }
    }
    basis
}

pub fn pinching_control_check(
    fe: &FieldEnergy,
    kernel: &Kernel,
    x: &[f64],
    witnesses: &[Vec<f64>],
    r: f64,
    rho: f64,
) -> Result<PinchingControl> {
    let d = fe.domain();
    let m = d.m();
    if witnesses.is_empty() {
        return Err(Error::Precondition("no witnesses".into()));
    }
    let k = witnesses.len() - 1;
    for y in witnesses {
        let dist: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist > r {
            return Err(Error::Precondition("witness outside B_r(x)".into()));
        }
    }
    let chk = spanning_chain(witnesses, 2.0 * rho * r, k, 1_000_000)?;
    if !chk.spans || chk.witnesses != (0..=k).collect::<Vec<_>>() {
        return Err(Error::Precondition("witnesses do not effectively span in order".into()));
    }
    let basis = affine_basis(witnesses);
    let hm = d.h().powi(m as i32);
    let mut lhs = 0.0;
    d.for_each_in_ball(x, r, |i, off| {
        let mz = fe.matrix(i);
        let quad = |v: &[f64]| -> f64 {
            let mut s = 0.0;
            for a in 0..m {
                for b in 0..m {
                    s += v[a] * mz[a * m + b] * v[b];
                }
            }
            s
        };
        let along: f64 = basis.iter().map(|e| quad(e)).sum();
        // v(z) = z - π_L(z)
        let mut v: Vec<f64> = (0..m).map(|a| x[a] + off[a] - witnesses[0][a]).collect();
        for e in &basis {
            let c: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
        }
        lhs += (r * r * along + quad(&v)) * hm;
    });
    lhs /= r.powi(m as i32);
    let mut pinch_sum = 0.0;
    let mut p_sum = 0.0;
    for y in witnesses {
        pinch_sum += theta(fe, kernel, y, 4.0 * r)? - theta(fe, kernel, y, 2.0 * r)?;
        p_sum += radial_p_unchecked(fe, y, 2.0 * r);
    }
    let constant = pinching_constant(m, k, rho);
    let ratio = if lhs <= 0.0 { 0.0 } else { lhs / (constant * pinch_sum.max(0.0)) };
    let alg_den = chain_factor(k, rho) * 2f64.powi(m as i32) * p_sum;
    let algebraic_ratio = if lhs <= 0.0 { 0.0 } else { lhs / alg_den };
    Ok(PinchingControl { lhs, pinch_sum, constant, ratio, algebraic_ratio })
}

/// Averaged squared G-distance on B_{r/4}(x) between u and the model map
/// obtained by slicing u over the best point of L and extending the slice
/// homogeneously. `plane` is an orthonormal basis (possibly empty) of the
/// linear part of L, which passes through x.
pub fn cn_model_distance(fe: &FieldEnergy, x: &[f64], r: f64, plane: &[Vec<f64>]) -> Result<f64> {
    let u = fe.field();
    let d = fe.domain();
    let s = r / 4.0;
    let t = 0.5 * s;
    if !d.fits_ball(x, r) {
        return Err(Error::Domain("ball leaves the domain".into()));
    }
    if t < 2.0 * d.h() {
        return Err(Error::UnderResolved(format!("slice radius {t} below 2h")));
    }
    let (q, n) = (u.q(), u.n());
    let target = u.target();
    let mut perm = vec![0usize; q];
    let g2 = |a: &[f64], b: &[f64], perm: &mut [usize]| match_into(a, b, q, n, &target, perm);
    let split = |p: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let off: Vec<f64> = p.iter().zip(x).map(|(a, b)| a - b).collect();
        let ys: Vec<f64> = plane.iter().map(|e| e.iter().zip(&off).map(|(a, b)| a * b).sum()).collect();
        let mut z = off.clone();
        for (c, e) in ys.iter().zip(plane) {
            z.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
        }
        (ys, z)
    };
    let sample = |p: &[f64]| d.nearest_node(p).map(|i| u.value(i));
    let lift = |y: &[f64], z: &[f64]| -> Vec<f64> {
        let mut p = x.to_vec();
        for (c, e) in y.iter().zip(plane) {
            p.iter_mut().zip(e).for_each(|(a, b)| *a += c * b);
        }
        p.iter_mut().zip(z).for_each(|(a, b)| *a += b);
        p
    };
    // candidate slice points y' on a grid of B^k_t
    let k = plane.len();
    let mut cands: Vec<Vec<f64>> = vec![vec![0.0; k]];
    if k > 0 {
        let steps = ((t / d.h()).floor() as i64).max(1);
        let mut idx = vec![-steps; k];
        cands.clear();
        loop {
            let y: Vec<f64> = idx.iter().map(|&i| i as f64 * t / steps as f64).collect();
            if y.iter().map(|v| v * v).sum::<f64>() <= t * t {
                cands.push(y);
            }
            let mut a = 0;
            while a < k {
                if idx[a] < steps {
                    idx[a] += 1;
                    break;
                }
                idx[a] = -steps;
                a += 1;
            }
            if a == k {
                break;
            }
        }
    }
    let nodes = d.nodes_in_ball(x, t);
    let s0 = 2.0 * d.h();
    let mut best = (f64::INFINITY, 0usize);
    for (ci, yp) in cands.iter().enumerate() {
        let mut cost = 0.0;
        for &i in &nodes {
            let (_, z) = split(&d.position(i));
            let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let Some(vz) = sample(&lift(yp, &z)) else { continue };
            cost += g2(u.value(i), vz, &mut perm);
            if zn > s0 {
                let zt: Vec<f64> = z.iter().map(|v| v * t / zn).collect();
                if let Some(vt) = sample(&lift(yp, &zt)) {
                    cost += g2(vz, vt, &mut perm);
                }
            }
        }
        if cost < best.0 {
            best = (cost, ci);
        }
    }
    let yp = &cands[best.1];
    let mut total = 0.0;
    let mut count = 0usize;
    for i in d.nodes_in_ball(x, s) {
        let (_, z) = split(&d.position(i));
        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if zn < 1e-12 {
            continue;
        }
        let zt: Vec<f64> = z.iter().map(|v| v * t / zn).collect();
        let Some(hv) = sample(&lift(yp, &zt)) else { continue };
        total += g2(u.value(i), hv, &mut perm);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyRegion("no nodes in B_{r/4}".into()));
    }
    Ok(total / count as f64)
}

/// Scalar θ field over a node list at a fixed radius, parallel.
pub fn theta_on_nodes(fe: &FieldEnergy, kernel: &Kernel, nodes: &[usize], r: f64) -> Vec<f64> {
    let d = fe.domain();
    nodes
        .par_iter()
        .map(|&i| theta_unchecked(fe, kernel, &d.position(i), r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoverLabel {
    Good,
    Bad,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringNode {
    pub center: Vec<f64>,
    pub radius: f64,
    pub label: CoverLabel,
    pub witnesses: Vec<Vec<f64>>,
    pub energy_sup: f64,
    pub children: Vec<CoveringNode>,
}

impl CoveringNode {
    pub fn leaves(&self) -> Vec<&CoveringNode> {
        if self.children.is_empty() {
            vec![self]
        } else {
            self.children.iter().flat_map(|c| c.leaves()).collect()
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(|c| c.depth()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringParams {
    pub k: usize,
    pub rho: f64,
    pub delta: f64,
    pub r_floor: f64,
    pub depth_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covering {
    pub root: CoveringNode,
    pub packing_sum: f64,
    pub leaves: usize,
}

/// Refinement covering of the stratum nodes `stratum` inside B_R(c).
///
/// A ball is good when its high-energy set F effectively spans a k-plane;
/// good balls meeting the stratum are split into children of a tenth of
/// the radius centred on an rc-separated net of the stratum, so children
/// cover it and their tenth-radius balls are disjoint. Bad balls and
/// balls at the radius floor are leaves.
pub fn build_covering(
    fe: &FieldEnergy,
    kernel: &Kernel,
    center: &[f64],
    radius: f64,
    params: &CoveringParams,
    stratum: &[usize],
) -> Result<Covering> {
    let d = fe.domain();
    if !(params.rho > 0.0 && params.delta > 0.0 && params.r_floor > 0.0) {
        return Err(Error::InvalidParameter("covering parameters must be positive".into()));
    }
    if !d.fits_ball(center, radius) {
        return Err(Error::Domain("covering region leaves the domain".into()));
    }
    let pts: Vec<Vec<f64>> = stratum.iter().map(|&i| d.position(i)).collect();
    let root = cover_ball(fe, kernel, center, radius, params, &pts, 0)?;
    let leaves = root.leaves();
    let packing_sum = leaves.iter().map(|l| l.radius.powi(params.k as i32)).sum();
    Ok(Covering { packing_sum, leaves: leaves.len(), root })
}

fn cover_ball(
    fe: &FieldEnergy,
    kernel: &Kernel,
    x: &[f64],
    r: f64,
    p: &CoveringParams,
    stratum: &[Vec<f64>],
    depth: usize,
) -> Result<CoveringNode> {
    if depth >= p.depth_cap {
        return Err(Error::DepthCap(p.depth_cap));
    }
    let d = fe.domain();
    let scale = (p.rho * r / 20.0).max(2.0 * d.h());
    let nodes: Vec<usize> = d
        .nodes_in_ball(x, r)
        .into_iter()
        .filter(|&i| d.fits_ball(&d.position(i), scale))
        .collect();
    let th = theta_on_nodes(fe, kernel, &nodes, scale);
    let e_sup = th.iter().copied().fold(0.0, f64::max);
    let f_pts: Vec<Vec<f64>> = nodes
        .iter()
        .zip(&th)
        .filter(|(_, t)| **t >= e_sup - p.delta)
        .map(|(&i, _)| d.position(i).iter().zip(x).map(|(a, b)| (a - b) / r).collect())
        .collect();
    let net = thin_to_net(&f_pts, p.rho / 10.0);
    let net_pts: Vec<Vec<f64>> = net.iter().map(|&i| f_pts[i].clone()).collect();
    let span = spanning_chain(&net_pts, 2.0 * p.rho, p.k, 5_000_000)?;
    let witnesses: Vec<Vec<f64>> = span
        .witnesses
        .iter()
        .map(|&i| net_pts[i].iter().zip(x).map(|(a, b)| b + r * a).collect())
        .collect();
    let mut node = CoveringNode {
        center: x.to_vec(),
        radius: r,
        label: if span.spans { CoverLabel::Good } else { CoverLabel::Bad },
        witnesses,
        energy_sup: e_sup,
        children: Vec::new(),
    };
    if !span.spans {
        return Ok(node);
    }
    let inside: Vec<Vec<f64>> = stratum
        .iter()
        .filter(|y| y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r * r)
        .cloned()
        .collect();
    if inside.is_empty() {
        return Ok(node);
    }
    let rc = r / 10.0;
    if rc < p.r_floor {
        node.label = CoverLabel::Final;
        return Ok(node);
    }
    let centres: Vec<Vec<f64>> = thin_to_net(&inside, rc).into_iter().map(|i| inside[i].clone()).collect();
    let children: Vec<Result<CoveringNode>> = centres
        .par_iter()
        .map(|c| {
            let sub: Vec<Vec<f64>> = inside
                .iter()
                .filter(|y| y.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= rc * rc)
                .cloned()
                .collect();
            cover_ball(fe, kernel, c, rc, p, &sub, depth + 1)
        })
        .collect();
    node.children = children.into_iter().collect::<Result<_>>()?;
    Ok(node)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinkowskiTable {
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    /// Least-squares slope of log volume against log radius (NaN if fewer
    /// than two positive volumes).
    pub slope: f64,
}

impl MinkowskiTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("radius,volume\n");
        for (r, v) in self.radii.iter().zip(&self.volumes) {
            s.push_str(&format!("{r},{v}\n"));
        }
        s
    }
}

pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Volume h^m · #{active nodes within r of the flagged set}.
pub fn tube_volume(domain: &LatticeDomain, flagged: &[usize], r: f64) -> f64 {
    let mut mark = vec![false; domain.len()];
    for &f in flagged {
        domain.for_each_in_ball(&domain.position(f), r, |i, _| mark[i] = true);
    }
    mark.iter().filter(|&&b| b).count() as f64 * domain.h().powi(domain.m() as i32)
}

pub fn minkowski_estimate(domain: &LatticeDomain, flagged: &[usize], radii: &[f64]) -> MinkowskiTable {
    if flagged.is_empty() {
        return MinkowskiTable { radii: radii.to_vec(), volumes: vec![0.0; radii.len()], slope: f64::NAN };
    }
    let volumes: Vec<f64> = radii.iter().map(|&r| tube_volume(domain, flagged, r)).collect();
    let slope = loglog_slope(radii, &volumes);
    MinkowskiTable { radii: radii.to_vec(), volumes, slope }
}

/// Nodes x with θ(x, s) >= ε₀ at every ladder radius s = r_min 2^j (< 1)
/// whose ball fits; nodes where r_min itself does not fit are skipped.
pub fn singular_proxy(fe: &FieldEnergy, kernel: &Kernel, eps0: f64, r_min: f64) -> Result<Vec<usize>> {
    let d = fe.domain();
    if r_min < 2.0 * d.h() {
        return Err(Error::UnderResolved(format!("r_min = {r_min} < 2h")));
    }
    let mut ladder = vec![r_min];
    while ladder.last().unwrap() * 2.0 < 1.0 {
        ladder.push(ladder.last().unwrap() * 2.0);
    }
    let nodes: Vec<usize> = d.active_nodes().collect();
    let flags: Vec<bool> = nodes
        .par_iter()
        .map(|&i| {
            let x = d.position(i);
            if !d.fits_ball(&x, r_min) {
                return false;
            }
            ladder
                .iter()
                .take_while(|&&s| d.fits_ball(&x, s))
                .all(|&s| theta_unchecked(fe, kernel, &x, s) >= eps0)
        })
        .collect();
    Ok(nodes.into_iter().zip(flags).filter(|(_, f)| *f).map(|(i, _)| i).collect())
}

/// Minkowski table where the flagged set is recomputed at each radius with
/// r_min equal to that radius.
pub fn minkowski_scale_matched(fe: &FieldEnergy, kernel: &Kernel, eps0: f64, radii: &[f64]) -> Result<MinkowskiTable> {
    let d = fe.domain();
    let mut volumes = Vec::with_capacity(radii.len());
    for &r in radii {
        let flagged = singular_proxy(fe, kernel, eps0, r)?;
        volumes.push(if flagged.is_empty() { 0.0 } else { tube_volume(d, &flagged, r) });
    }
    let slope = loglog_slope(radii, &volumes);
    Ok(MinkowskiTable { radii: radii.to_vec(), volumes, slope })
}

/// Group flagged nodes into clusters (nodes closer than `link` join) and
/// return the cluster centroids.
pub fn cluster_centroids(domain: &LatticeDomain, flagged: &[usize], link: f64) -> Vec<Vec<f64>> {
    let pts: Vec<Vec<f64>> = flagged.iter().map(|&i| domain.position(i)).collect();
    let n = pts.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut j = i;
        while p[j] != r {
            let nx = p[j];
            p[j] = r;
            j = nx;
        }
        r
    }
    let l2 = link * link;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 <= l2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups
        .values()
        .map(|g| {
            let m = pts[0].len();
            let mut c = vec![0.0; m];
            for &i in g {
                c.iter_mut().zip(&pts[i]).for_each(|(a, b)| *a += b);
            }
            c.iter_mut().for_each(|a| *a /= g.len() as f64);
            c
        })
        .collect()
}
