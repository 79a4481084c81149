//! Red-black Gauss-Seidel relaxation of the discrete Dirichlet energy with
//! matchings recomputed at every node update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{FieldEnergy, NodeKind, QField};
use crate::qspace::match_into;
use crate::sum::KahanSum;
use crate::targets::TargetManifold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once a sweep lowers the energy by less than `tol` relative.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Sweeps between randomized sheet-exchange passes (0 disables).
    pub shuffle_cadence: usize,
    pub shuffle_prob: f64,
    pub seed: u64,
    /// Over-relaxation factor in (0, 2); a relaxed step is kept only when it
    /// lowers the local energy.
    pub omega: f64,
    /// Keep the energy after every sweep in the report.
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 100_000,
            shuffle_cadence: 10,
            shuffle_prob: 0.05,
            seed: 0,
            omega: 1.0,
            record_history: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub sweeps: usize,
    pub converged: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub energy_history: Vec<f64>,
    pub shuffle_proposals: usize,
    pub shuffle_accepted: usize,
    /// Sweeps undone because rounding made the total energy go up.
    pub reverted_sweeps: usize,
}

struct NodeUpdater<'a> {
    field: &'a QField,
    omega: f64,
}

impl NodeUpdater<'_> {
    fn neighbors(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let d = self.field.domain();
        for axis in 0..d.m() {
            for dir in [-1, 1] {
                if let Some(j) = d.neighbor(i, axis, dir) {
                    out.push(j);
                }
            }
        }
    }

    fn local_energy(&self, v: &[f64], nbrs: &[usize], perm: &mut [usize]) -> f64 {
        let f = self.field;
        nbrs.iter()
            .map(|&j| match_into(v, f.value(j), f.q(), f.n(), &f.target(), perm))
            .sum()
    }

    /// Per-sheet barycentres of matched neighbour values. `perms` holds one
    /// matching per neighbour.
    fn barycenters(&self, v: &[f64], nbrs: &[usize], perms: &[usize], out: &mut [f64], pts: &mut Vec<f64>) {
        let f = self.field;
        let (q, n) = (f.q(), f.n());
        for l in 0..q {
            pts.clear();
            for (k, &j) in nbrs.iter().enumerate() {
                let s = perms[k * q + l];
                pts.extend_from_slice(&f.value(j)[s * n..(s + 1) * n]);
            }
            f.target().barycenter_into(&v[l * n..(l + 1) * n], pts, &mut out[l * n..(l + 1) * n]);
        }
    }

    /// Best admissible new value for node i, or None if no candidate lowers
    /// the local energy.
    fn update(&self, i: usize, scratch: &mut Scratch) -> Option<f64> {
        let f = self.field;
        let (q, n) = (f.q(), f.n());
        let v = f.value(i);
        self.neighbors(i, &mut scratch.nbrs);
        if scratch.nbrs.is_empty() {
            return None;
        }
        scratch.perms.resize(scratch.nbrs.len() * q, 0);
        let mut old = 0.0;
        for (k, &j) in scratch.nbrs.iter().enumerate() {
            old += match_into(v, f.value(j), q, n, &f.target(), &mut scratch.perms[k * q..(k + 1) * q]);
        }
        let mut bary = std::mem::take(&mut scratch.bary);
        bary.resize(q * n, 0.0);
        self.barycenters(v, &scratch.nbrs, &scratch.perms, &mut bary, &mut scratch.pts);
        let mut best = old;
        let mut found = false;
        if self.omega != 1.0 {
            scratch.cand.resize(q * n, 0.0);
            let t = f.target();
            let mut ok = true;
            for l in 0..q {
                let (a, b) = (&v[l * n..(l + 1) * n], &bary[l * n..(l + 1) * n]);
                t.diff_into(a, b, &mut scratch.cand[l * n..(l + 1) * n]);
                for c in 0..n {
                    scratch.cand[l * n + c] = a[c] + self.omega * scratch.cand[l * n + c];
                }
                ok &= t.project_in_place(&mut scratch.cand[l * n..(l + 1) * n]).is_ok();
            }
            let e = if ok { self.local_energy(&scratch.cand, &scratch.nbrs, &mut scratch.perm) } else { f64::INFINITY };
            if e < best {
                best = e;
                found = true;
                scratch.out.clear();
                scratch.out.extend_from_slice(&scratch.cand);
            }
        }
        if !found {
            let e = self.local_energy(&bary, &scratch.nbrs, &mut scratch.perm);
            if e < best {
                best = e;
                found = true;
                scratch.out.clear();
                scratch.out.extend_from_slice(&bary);
            }
        }
        scratch.bary = bary;
        found.then_some(old - best)
    }
}

#[derive(Default)]
struct Scratch {
    nbrs: Vec<usize>,
    perms: Vec<usize>,
    perm: Vec<usize>,
    bary: Vec<f64>,
    cand: Vec<f64>,
    pts: Vec<f64>,
    out: Vec<f64>,
}

impl Scratch {
    fn for_q(q: usize) -> Self {
        Self { perm: vec![0; q], ..Default::default() }
    }
}

fn sweep(field: &mut QField, colors: &[Vec<usize>], omega: f64) {
    let stride = field.stride();
    let q = field.q();
    for nodes in colors {
        let mut buf = vec![0.0; nodes.len() * stride];
        let mut moved = vec![false; nodes.len()];
        {
            let up = NodeUpdater { field, omega };
            buf.par_chunks_mut(stride)
                .zip(moved.par_iter_mut())
                .zip(nodes.par_iter())
                .for_each_init(
                    || Scratch::for_q(q),
                    |scratch, ((slot, flag), &i)| {
                        if up.update(i, scratch).is_some() {
                            slot.copy_from_slice(&scratch.out);
                            *flag = true;
                        }
                    },
                );
        }
        let vals = field.values_mut();
        for (k, &i) in nodes.iter().enumerate() {
            if moved[k] {
                vals[i * stride..(i + 1) * stride].copy_from_slice(&buf[k * stride..(k + 1) * stride]);
            }
        }
    }
}

/// One pass of randomized sheet exchanges: at a sampled node the matching on
/// one incident edge is composed with a transposition, and the resulting
/// barycentres are kept only if the true local energy drops.
fn shuffle_pass(field: &mut QField, interior: &[usize], prob: f64, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let q = field.q();
    let n = field.n();
    if q < 2 {
        return (0, 0);
    }
    let (mut tried, mut taken) = (0, 0);
    let mut scratch = Scratch::for_q(q);
    for &i in interior {
        if rng.gen::<f64>() >= prob {
            continue;
        }
        tried += 1;
        let candidate = {
            let up = NodeUpdater { field, omega: 1.0 };
            up.neighbors(i, &mut scratch.nbrs);
            let nb = scratch.nbrs.len();
            let k = rng.gen_range(0..nb);
            let a = rng.gen_range(0..q);
            let b = (a + rng.gen_range(1..q)) % q;
            let v = field.value(i).to_vec();
            scratch.perms.resize(nb * q, 0);
            let mut old = 0.0;
            for (e, &j) in scratch.nbrs.iter().enumerate() {
                old += match_into(&v, field.value(j), q, n, &field.target(), &mut scratch.perms[e * q..(e + 1) * q]);
            }
            scratch.perms.swap(k * q + a, k * q + b);
            let mut cand = vec![0.0; q * n];
            up.barycenters(&v, &scratch.nbrs, &scratch.perms, &mut cand, &mut scratch.pts);
            let e = up.local_energy(&cand, &scratch.nbrs, &mut scratch.perm);
            (e < old).then_some(cand)
        };
        if let Some(c) = candidate {
            taken += 1;
            let stride = field.stride();
            field.values_mut()[i * stride..(i + 1) * stride].copy_from_slice(&c);
        }
    }
    (tried, taken)
}

/// Relax `u` in place toward a local minimiser with its boundary values
/// fixed. The total energy never increases from one sweep to the next.
pub fn relax(u: &mut QField, cfg: &SolverConfig) -> Result<ConvergenceReport> {
    if !(cfg.omega > 0.0 && cfg.omega < 2.0) {
        return Err(Error::InvalidParameter(format!("omega = {} outside (0, 2)", cfg.omega)));
    }
    if !(0.0..=1.0).contains(&cfg.shuffle_prob) {
        return Err(Error::InvalidParameter("shuffle probability outside [0, 1]".into()));
    }
    let d = u.domain_arc();
    let interior = d.interior_nodes();
    let mut colors = vec![Vec::new(), Vec::new()];
    for &i in &interior {
        colors[d.color(i)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = u.dirichlet_energy();
    if !initial.is_finite() {
        return Err(Error::NumericFailure { sweep: 0, what: "initial energy is not finite".into() });
    }
    let mut report = ConvergenceReport {
        sweeps: 0,
        converged: false,
        initial_energy: initial,
        final_energy: initial,
        energy_history: Vec::new(),
        shuffle_proposals: 0,
        shuffle_accepted: 0,
        reverted_sweeps: 0,
    };
    let mut energy = initial;
    let mut backup = u.values().to_vec();
    for s in 1..=cfg.max_sweeps {
        backup.copy_from_slice(u.values());
        sweep(u, &colors, cfg.omega);
        if cfg.shuffle_cadence > 0 && s % cfg.shuffle_cadence == 0 {
            let (t, a) = shuffle_pass(u, &interior, cfg.shuffle_prob, &mut rng);
            report.shuffle_proposals += t;
            report.shuffle_accepted += a;
        }
        let e = u.dirichlet_energy();
        if !e.is_finite() {
            return Err(Error::NumericFailure { sweep: s, what: "energy is not finite".into() });
        }
        report.sweeps = s;
        if e > energy {
            u.values_mut().copy_from_slice(&backup);
            report.reverted_sweeps += 1;
            report.converged = true;
            break;
        }
        let drop = energy - e;
        energy = e;
        if cfg.record_history {
            report.energy_history.push(e);
        }
        if energy == 0.0 || drop <= cfg.tol * energy {
            report.converged = true;
            break;
        }
    }
    report.final_energy = energy;
    Ok(report)
}

/// Smooth compactly supported vector field used to probe variations.
pub trait VectorField: Sync {
    fn value(&self, x: &[f64]) -> Vec<f64>;
    /// Row-major Jacobian, entry [i * m + j] = d X^j / d x_i.
    fn jacobian(&self, x: &[f64]) -> Vec<f64>;
}

/// X(x) = eta(|x - c| / R) V, with V either a fixed vector or x - c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpField {
    pub center: Vec<f64>,
    pub radius: f64,
    /// None gives the radial field x - c.
    pub direction: Option<Vec<f64>>,
}

impl BumpField {
    fn eta(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let m = x.len();
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
            / (self.radius * self.radius);
        if r2 >= 1.0 {
            return (0.0, vec![0.0; m]);
        }
        // eta = (1 - t^2)^3
        let e = (1.0 - r2).powi(3);
        let de = -6.0 * (1.0 - r2).powi(2) / (self.radius * self.radius);
        let grad = x.iter().zip(&self.center).map(|(a, c)| de * (a - c)).collect();
        (e, grad)
    }
}

impl VectorField for BumpField {
    fn value(&self, x: &[f64]) -> Vec<f64> {
        let (e, _) = self.eta(x);
        match &self.direction {
            Some(v) => v.iter().map(|c| e * c).collect(),
            None => x.iter().zip(&self.center).map(|(a, c)| e * (a - c)).collect(),
        }
    }

    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let m = x.len();
        let (e, g) = self.eta(x);
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = match &self.direction {
                    Some(v) => g[i] * v[j],
                    None => g[i] * (x[j] - self.center[j]) + if i == j { e } else { 0.0 },
                };
            }
        }
        out
    }
}

/// Discrete domain-variation integral of the energy along X:
/// sum over nodes of h^m (|Du|^2 div X - 2 <M, DX>).
pub fn inner_residual<X: VectorField>(u: &QField, x: &X) -> f64 {
    let fe = FieldEnergy::new(u);
    let d = u.domain();
    let m = d.m();
    let hm = d.h().powi(m as i32);
    let mut acc = KahanSum::new();
    for i in d.active_nodes() {
        let p = d.position(i);
        let jac = x.jacobian(&p);
        if jac.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mz = fe.matrix(i);
        let div: f64 = (0..m).map(|a| jac[a * m + a]).sum();
        let contraction: f64 = (0..m * m).map(|k| mz[k] * jac[k]).sum();
        acc.add(hm * (fe.density(i) * div - 2.0 * contraction));
    }
    acc.value()
}

/// Derivative at t = 0 of the discrete energy of the target projection of
/// u_l + t Y(x, u_l) on every sheet, boundary nodes held fixed. On spheres
/// the tangential part of Y is used, which produces the second fundamental
/// form term.
pub fn outer_residual<Y: Fn(&[f64], &[f64]) -> Vec<f64>>(u: &QField, y: Y) -> Result<f64> {
    let d = u.domain();
    let (q, n) = (u.q(), u.n());
    let t = u.target();
    let w = d.h().powi(d.m() as i32 - 2);
    let mut perm = vec![0usize; q];
    let mut diff = vec![0.0; n];
    let mut acc = KahanSum::new();
    for i in d.active_nodes() {
        if d.kind(i) != NodeKind::Interior {
            continue;
        }
        let x = d.position(i);
        let v = u.value(i);
        let ys: Vec<Vec<f64>> = (0..q).map(|l| y(&x, &v[l * n..(l + 1) * n])).collect();
        if ys.iter().any(|yv| yv.len() != n) {
            return Err(Error::Dimension("variation field has wrong length".into()));
        }
        for axis in 0..d.m() {
            for dir in [-1, 1] {
                let Some(j) = d.neighbor(i, axis, dir) else { continue };
                match_into(v, u.value(j), q, n, &t, &mut perm);
                for l in 0..q {
                    let p = &v[l * n..(l + 1) * n];
                    t.diff_into(&u.value(j)[perm[l] * n..(perm[l] + 1) * n], p, &mut diff);
                    let mut yt = ys[l].clone();
                    if let TargetManifold::Sphere(_) = t {
                        let c: f64 = yt.iter().zip(p).map(|(a, b)| a * b).sum();
                        yt.iter_mut().zip(p).for_each(|(a, b)| *a -= c * b);
                    }
                    acc.add(-2.0 * w * diff.iter().zip(&yt).map(|(a, b)| a * b).sum::<f64>());
                }
            }
        }
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeDomain;
    use std::sync::Arc;

    #[test]
    fn linear_boundary_gives_linear_minimiser() {
        let d = Arc::new(LatticeDomain::ball(2, 1.0 / 16.0, &[0.0, 0.0], 1.0, false).unwrap());
        let mut u = QField::from_fn(d, TargetManifold::Euclidean(2), 1, |x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if r > 0.9 { x.to_vec() } else { vec![0.0, 0.0] }
        })
        .unwrap();
        u.apply_boundary_datum(|x| Ok(x.to_vec())).unwrap();
        let cfg = SolverConfig { tol: 1e-13, omega: 1.8, ..Default::default() };
        let rep = relax(&mut u, &cfg).unwrap();
        assert!(rep.converged);
        let mut err: f64 = 0.0;
        for i in u.domain().active_nodes() {
            let p = u.domain().position(i);
            err = err.max((u.value(i)[0] - p[0]).abs().max((u.value(i)[1] - p[1]).abs()));
        }
        assert!(err < 1e-5, "max error {err}");
        for w in rep.energy_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rejects_bad_omega() {
        let d = Arc::new(LatticeDomain::ball(2, 0.25, &[0.0, 0.0], 1.0, false).unwrap());
        let mut u = QField::from_fn(d, TargetManifold::Euclidean(1), 1, |x| vec![x[0]]).unwrap();
        let cfg = SolverConfig { omega: 2.0, ..Default::default() };
        assert!(relax(&mut u, &cfg).is_err());
    }

    #[test]
    fn bump_jacobian_matches_differences() {
        let b = BumpField { center: vec![0.1, -0.2], radius: 0.7, direction: None };
        let x = [0.3, 0.1];
        let j = b.jacobian(&x);
        let e = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += e;
            xm[i] -= e;
            let (vp, vm) = (b.value(&xp), b.value(&xm));
            for k in 0..2 {
                assert!(((vp[k] - vm[k]) / (2.0 * e) - j[i * 2 + k]).abs() < 1e-6);
            }
        }
    }
}
