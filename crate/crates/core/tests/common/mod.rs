#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use qharm::solver::{relax, ConvergenceReport, SolverConfig};
use qharm::{LatticeDomain, QField, TargetManifold};
use rand::Rng;

/// Sheets ±√z of the two-valued square root at a planar point.
pub fn sqrt_sheets(x: &[f64]) -> Vec<f64> {
    let r = x[0].hypot(x[1]);
    let t = x[1].atan2(x[0]);
    let s = r.sqrt();
    let (c, d) = ((t / 2.0).cos() * s, (t / 2.0).sin() * s);
    vec![c, d, -c, -d]
}

pub fn disk(h: f64) -> Arc<LatticeDomain> {
    Arc::new(LatticeDomain::ball(2, h, &[0.0, 0.0], 1.0, false).unwrap())
}

/// Exact ±√z sampled on the unit disk.
pub fn sqrt_field(h: f64) -> QField {
    QField::from_fn(disk(h), TargetManifold::Euclidean(2), 2, sqrt_sheets).unwrap()
}

/// Discrete minimiser with ±√z boundary values, relaxed coarse to fine down
/// to the spacing 1/n_final.
pub fn sqrt_minimizer(n_final: usize) -> (QField, ConvergenceReport) {
    let cfg = SolverConfig { tol: 1e-10, omega: 1.9, ..Default::default() };
    let mut n = 16;
    let mut u = sqrt_field(1.0 / n as f64);
    // sheets pulled toward the origin as a start
    u = QField::from_fn(u.domain_arc(), TargetManifold::Euclidean(2), 2, |x| {
        let r = x[0].hypot(x[1]).sqrt();
        sqrt_sheets(x).iter().map(|v| v * r).collect()
    })
    .unwrap();
    u.apply_boundary_datum(|x| Ok(sqrt_sheets(x))).unwrap();
    loop {
        let rep = relax(&mut u, &cfg).unwrap();
        if n >= n_final {
            return (u, rep);
        }
        n *= 2;
        let d = disk(1.0 / n as f64);
        u = u.resample(d, |x| x.to_vec()).unwrap();
        u.apply_boundary_datum(|x| Ok(sqrt_sheets(x))).unwrap();
    }
}

/// x / |x| into S² on a box or ball, with the singularity between nodes.
pub fn hedgehog(domain: Arc<LatticeDomain>) -> QField {
    QField::from_fn(domain, TargetManifold::Sphere(2), 1, |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        vec![x[0] / r, x[1] / r, x[2] / r]
    })
    .unwrap()
}

/// Function of the angle of (x1, x2) only: invariant along e3 and
/// 0-homogeneous. Two sheets in R² at antipodal phase.
pub fn axial_field(domain: Arc<LatticeDomain>) -> QField {
    QField::from_fn(domain, TargetManifold::Euclidean(2), 2, |x| {
        let t = x[1].atan2(x[0]);
        vec![t.cos(), t.sin(), -t.cos(), -t.sin()]
    })
    .unwrap()
}

/// Random Q-valued field into R^n on a given domain.
pub fn random_field<R: Rng>(domain: Arc<LatticeDomain>, q: usize, n: usize, rng: &mut R) -> QField {
    let vals: Vec<f64> = (0..domain.len() * q * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let stride = q * n;
    let d = domain.clone();
    QField::from_fn(domain, TargetManifold::Euclidean(n), q, move |x| {
        let i = d.nearest_node(x).unwrap();
        vals[i * stride..(i + 1) * stride].to_vec()
    })
    .unwrap()
}

pub const TWO_PI: f64 = 2.0 * PI;
