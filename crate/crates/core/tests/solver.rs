mod common;

use std::sync::Arc;

use common::*;
use qharm::lattice::Fill;
use qharm::qspace::QPoint;
use qharm::solver::*;
use qharm::{LatticeDomain, NodeKind, QField, TargetManifold};

fn bump(x: &[f64], c: &[f64], r: f64) -> f64 {
    let t2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (r * r);
    if t2 < 1.0 {
        (1.0 - t2).powi(3)
    } else {
        0.0
    }
}

fn cap_datum(x: &[f64]) -> Vec<f64> {
    let (a, b) = (0.6 * x[0], 0.6 * x[1]);
    vec![a, b, (1.0 - a * a - b * b).sqrt()]
}

fn sphere_minimizer(n: usize) -> QField {
    let mut u = QField::with_boundary(
        disk(1.0 / n as f64),
        TargetManifold::Sphere(2),
        1,
        |x| Ok(cap_datum(x)),
        &Fill::Constant(QPoint::new(1, 3, vec![0.0, 0.0, 1.0]).unwrap()),
    )
    .unwrap();
    relax(&mut u, &SolverConfig { tol: 1e-13, omega: 1.9, ..Default::default() }).unwrap();
    u
}

#[test]
fn one_dimensional_linear_interpolation() {
    let d = Arc::new(LatticeDomain::cube(1, 0.05, &[0.0], &[2.0], false).unwrap());
    let mut u = QField::with_boundary(d.clone(), TargetManifold::Euclidean(1), 1, |x| Ok(vec![3.0 * x[0] - 1.0]), &Fill::Random { seed: 4 })
        .unwrap();
    let rep = relax(&mut u, &SolverConfig { tol: 1e-15, ..Default::default() }).unwrap();
    assert!(rep.converged);
    for i in d.active_nodes() {
        assert!((u.value(i)[0] - (3.0 * d.position(i)[0] - 1.0)).abs() < 1e-6);
    }
    assert!((rep.final_energy - 18.0).abs() < 1e-9);
}

#[test]
fn identity_boundary_gives_identity_map() {
    let d = disk(1.0 / 16.0);
    let mut u = QField::with_boundary(d.clone(), TargetManifold::Euclidean(2), 1, |x| Ok(x.to_vec()), &Fill::Constant(QPoint::new(1, 2, vec![0.0, 0.0]).unwrap()))
        .unwrap();
    relax(&mut u, &SolverConfig { tol: 1e-14, omega: 1.8, ..Default::default() }).unwrap();
    let err = d.active_nodes().map(|i| {
        let x = d.position(i);
        (u.value(i)[0] - x[0]).hypot(u.value(i)[1] - x[1])
    });
    assert!(err.fold(0.0, f64::max) < 1e-5);
}

#[test]
fn square_root_energy_within_five_percent() {
    let (_, rep) = sqrt_minimizer(64);
    let rel = (rep.final_energy - TWO_PI).abs() / TWO_PI;
    assert!(rel < 0.05, "{}", rep.final_energy);
}

#[test]
fn descent_boundary_and_projection_contracts() {
    let d = Arc::new(LatticeDomain::ball(3, 0.125, &[0.0; 3], 1.0, false).unwrap());
    let mut u = QField::with_boundary(d.clone(), TargetManifold::Sphere(2), 2, |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        Ok(vec![x[0] / r, x[1] / r, x[2] / r, 0.0, 0.0, 1.0])
    }, &Fill::Random { seed: 1 })
    .unwrap();
    let before = u.clone();
    let cfg = SolverConfig { max_sweeps: 60, shuffle_prob: 0.2, shuffle_cadence: 3, ..Default::default() };
    let rep = relax(&mut u, &cfg).unwrap();
    for w in rep.energy_history.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert!(rep.final_energy < rep.initial_energy);
    for i in d.active_nodes() {
        if d.kind(i) == NodeKind::Boundary {
            assert_eq!(before.value(i), u.value(i));
        }
        for s in u.value(i).chunks(3) {
            assert!(((s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt() - 1.0).abs() < 1e-10);
        }
    }
    let mut again = before.clone();
    let rep2 = relax(&mut again, &cfg).unwrap();
    assert_eq!(again.values(), u.values());
    assert_eq!(rep2, rep);
}

#[test]
fn torus_relaxation_descends() {
    let d = disk(1.0 / 16.0);
    let mut u = QField::with_boundary(d, TargetManifold::FlatTorus2, 2, |x| {
        let t = x[1].atan2(x[0]) / std::f64::consts::TAU;
        Ok(vec![t, 0.25, t + 0.5, 0.75])
    }, &Fill::Random { seed: 3 })
    .unwrap();
    let rep = relax(&mut u, &SolverConfig { max_sweeps: 200, ..Default::default() }).unwrap();
    assert!(rep.energy_history.windows(2).all(|w| w[1] <= w[0]));
    for v in u.values() {
        assert!((0.0..1.0).contains(v));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut u = sqrt_field(0.25);
    assert!(relax(&mut u, &SolverConfig { omega: 2.0, ..Default::default() }).is_err());
    assert!(relax(&mut u, &SolverConfig { shuffle_prob: 1.5, ..Default::default() }).is_err());
}

#[test]
fn inner_residual_examples() {
    let d = disk(1.0 / 16.0);
    let c = QField::constant(d, TargetManifold::Euclidean(2), &QPoint::repeated(2, &[1.0, 2.0]).unwrap()).unwrap();
    let x = BumpField { center: vec![0.1, 0.0], radius: 0.5, direction: Some(vec![1.0, 1.0]) };
    assert_eq!(inner_residual(&c, &x), 0.0);

    // exact linear minimiser in 1D at two resolutions
    let res = |n: usize| {
        let d = Arc::new(LatticeDomain::cube(1, 1.0 / n as f64, &[0.0], &[1.0], false).unwrap());
        let u = QField::from_fn(d, TargetManifold::Euclidean(1), 1, |x| vec![2.0 * x[0]]).unwrap();
        inner_residual(&u, &BumpField { center: vec![0.45], radius: 0.3, direction: Some(vec![1.0]) })
    };
    let (a, b) = (res(32), res(64));
    assert!(a.abs() <= 32.0 / 32.0 && b.abs() <= 32.0 / 64.0, "{a} {b}");
}

#[test]
fn inner_residual_halves_with_spacing() {
    let x = BumpField { center: vec![0.0, 0.0], radius: 0.6, direction: None };
    let r32 = inner_residual(&sqrt_minimizer(32).0, &x);
    let r64 = inner_residual(&sqrt_minimizer(64).0, &x);
    let ratio = r32 / r64;
    assert!(ratio > 2.0 / 1.3 && ratio < 2.0 / 0.7, "{r32} {r64}");
}

#[test]
fn outer_residual_examples() {
    let d = disk(1.0 / 16.0);
    let c = QField::constant(d, TargetManifold::Euclidean(2), &QPoint::repeated(2, &[1.0, 2.0]).unwrap()).unwrap();
    assert_eq!(outer_residual(&c, |x, p| vec![bump(x, &[0.0, 0.0], 0.6) * p[0], 1.0]).unwrap(), 0.0);

    let y = |x: &[f64], p: &[f64]| vec![bump(x, &[0.0, 0.0], 0.6) * p[0], 0.0];
    // the sampled square root is not a discrete critical point
    assert!(outer_residual(&sqrt_field(1.0 / 32.0), y).unwrap().abs() > 1e-2);
    for n in [32, 64] {
        let r = outer_residual(&sqrt_minimizer(n).0, y).unwrap();
        assert!(r.abs() <= 1e-2 / n as f64, "{r}");
    }
    let ys = |x: &[f64], p: &[f64]| {
        let e = bump(x, &[0.0, 0.0], 0.6);
        vec![e * (1.0 + p[0]), 0.5 * e, 0.0]
    };
    for n in [16, 32] {
        let r = outer_residual(&sphere_minimizer(n), ys).unwrap();
        assert!(r.abs() <= 1e-2 / n as f64, "{r}");
    }
}
