use num_complex::Complex64 as C;
use qharm::jacobi::*;
use qharm::targets::torus_min;

fn tdist(p: [f64; 2], q: [f64; 2]) -> f64 {
    torus_min(p[0] - q[0]).hypot(torus_min(p[1] - q[1]))
}

#[test]
fn base_point_maps_to_origin() {
    let p = CurveParams::default();
    let l = periods(&p, &QuadratureConfig::default()).unwrap();
    let o = abel_jacobi(&p, &l, &CurvePoint { z: ZPoint::Finite(C::new(0.0, 0.0)), w: C::new(0.0, 0.0) }).unwrap();
    assert!(tdist(o, [0.0, 0.0]) < 1e-12);
}

#[test]
fn involution_sum_is_constant() {
    let p = CurveParams::new(C::new(1.3, 0.4), C::new(-0.7, 1.1)).unwrap();
    let l = periods(&p, &QuadratureConfig::default()).unwrap();
    for z in [C::new(0.2, 0.1), C::new(-3.0, 2.0), C::new(7.0, -9.0), C::new(0.9, -0.9)] {
        let f = fiber(&p, z).unwrap();
        let u = abel_jacobi(&p, &l, &f[0]).unwrap();
        let v = abel_jacobi(&p, &l, &f[1]).unwrap();
        assert!(tdist([u[0] + v[0], u[1] + v[1]], [0.0, 0.0]) < 1e-9, "{z}");
        assert!(tdist(u, v) > 1e-6);
    }
}

#[test]
fn detours_agree_modulo_periods() {
    let p = CurveParams::default();
    let l = periods(&p, &QuadratureConfig::default()).unwrap();
    let z = C::new(0.6, 0.8);
    let (direct, y_direct) = lifted_integral(&p, &l, ZPoint::Finite(z)).unwrap();
    let y_direct = y_direct.unwrap();
    // 0 -> i/2 -> around the far side of a -> z
    let mut acc = C::new(0.0, 0.0);
    let (i0, y0) = lifted_integral(&p, &l, ZPoint::Finite(C::new(0.0, 0.5))).unwrap();
    let mut y = y0.unwrap();
    acc += i0;
    let path = [C::new(0.0, 0.5), C::new(1.5, 1.0), C::new(2.0, -0.6), C::new(1.4, 0.9), z];
    for w in path.windows(2) {
        let (d, y1) = integrate_segment(&p, w[0], w[1], y).unwrap();
        acc += d;
        y = y1;
    }
    let s = if (y - y_direct).norm() < (y + y_direct).norm() { 1.0 } else { -1.0 };
    let diff = l.unit_coords(acc * s - direct);
    assert!((diff[0] - diff[0].round()).abs() < 1e-8 && (diff[1] - diff[1].round()).abs() < 1e-8, "{diff:?}");
}

#[test]
fn period_lattice_is_deformation_stable() {
    let p = CurveParams::new(C::new(2.0, 1.0), C::new(-1.0, 0.5)).unwrap();
    let l = periods(&p, &QuadratureConfig::default()).unwrap();
    assert!(l.residual < 1e-9, "{}", l.residual);
    let l2 = periods(&p, &QuadratureConfig { nodes: 1024, tol: 1e-8 }).unwrap();
    assert!((l.w1() - l2.w1()).norm() < 1e-9 && (l.w2() - l2.w2()).norm() < 1e-9);
}

#[test]
fn ramification_images_are_half_periods() {
    let d = TorusDatum::new(CurveParams::default(), 1.0 / 64.0).unwrap();
    let mut seen = Vec::new();
    for (_, pe) in &d.ramification {
        assert!(((2.0 * pe[0]).fract()).abs() < 1e-12 && ((2.0 * pe[1]).fract()).abs() < 1e-12);
        seen.push(*pe);
    }
    for i in 0..4 {
        for j in 0..i {
            assert!(tdist(seen[i], seen[j]) > 0.4, "{seen:?}");
        }
    }
}

#[test]
fn sheets_are_distinct_off_ramification() {
    let d = TorusDatum::new(CurveParams::default(), 1.0 / 64.0).unwrap();
    let g = SphereGrid::octahedral(12);
    for x in &g.vertices {
        let near = d.ramification.iter().any(|(xe, _)| {
            ((x[0] - xe[0]).powi(2) + (x[1] - xe[1]).powi(2) + (x[2] - xe[2]).powi(2)).sqrt() < 0.05
        });
        if near {
            continue;
        }
        let v = d.eval(x).unwrap();
        assert!(tdist([v[0], v[1]], [v[2], v[3]]) > 1e-3);
    }
}

#[test]
fn degree_is_unit_and_refinement_stable() {
    let rho = 1.0 / 64.0;
    let d = TorusDatum::new(CurveParams::default(), rho).unwrap();
    let g = SphereGrid::resolving(rho / 2.0);
    let n_levels = [g.clone(), SphereGrid::resolving(rho / 4.0)];
    let mut degs = Vec::new();
    let mut res = Vec::new();
    for grid in n_levels {
        let b = boundary_datum(&d, grid, rho).unwrap();
        let r = degree(&b).unwrap();
        // only triangles containing a branch point deviate
        assert!(r.residual < 1e-2, "{r:?}");
        degs.push(r.degree);
        res.push(r.residual);
    }
    assert!(res[1] < res[0]);
    assert_eq!(degs[0].abs(), 1);
    assert_eq!(degs[0], degs[1]);
}

#[test]
fn generic_points_are_hit_once() {
    let rho = 1.0 / 64.0;
    let d = TorusDatum::new(CurveParams::default(), rho).unwrap();
    let b = boundary_datum(&d, SphereGrid::resolving(rho / 2.0), rho).unwrap();
    let deg = degree(&b).unwrap().degree;
    for q in [[0.137, 0.291], [0.61, 0.83], [0.33, 0.71]] {
        let (u, s) = covering_count(&b, q);
        assert_eq!(u, 1, "{q:?}");
        assert_eq!(s, deg);
    }
}

#[test]
fn undersampled_grid_is_rejected() {
    let d = TorusDatum::new(CurveParams::default(), 1.0 / 64.0).unwrap();
    assert!(boundary_datum(&d, SphereGrid::octahedral(8), 1.0 / 64.0).is_err());
}

#[test]
fn lipschitz_fixed_under_refinement() {
    let rho = 1.0 / 16.0;
    let d = TorusDatum::new(CurveParams::default(), rho).unwrap();
    let a = boundary_datum(&d, SphereGrid::resolving(rho / 2.0), rho).unwrap().lipschitz;
    let b = boundary_datum(&d, SphereGrid::resolving(rho / 4.0), rho).unwrap().lipschitz;
    assert!(b < 1.5 * a && a < 1.5 * b, "{a} {b}");
}

#[test]
fn flat_control_has_degree_zero() {
    let rho = 1.0 / 32.0;
    let d = PlaneDatum::new(CurveParams::default(), rho).unwrap();
    let b = boundary_datum(&d, SphereGrid::resolving(rho / 2.0), rho).unwrap();
    assert_eq!(degree(&b).unwrap().degree, 0);
}

struct Constant;

impl SphereDatum for Constant {
    fn target(&self) -> qharm::TargetManifold {
        qharm::TargetManifold::FlatTorus2
    }
    fn eval(&self, _x: &[f64; 3]) -> qharm::Result<[f64; 4]> {
        Ok([0.2, 0.3, 0.7, 0.1])
    }
}

struct Unblended<'a>(&'a TorusDatum);

impl SphereDatum for Unblended<'_> {
    fn target(&self) -> qharm::TargetManifold {
        qharm::TargetManifold::FlatTorus2
    }
    fn eval(&self, x: &[f64; 3]) -> qharm::Result<[f64; 4]> {
        self.0.raw(x)
    }
}

#[test]
fn constant_datum_has_degree_zero() {
    let b = boundary_datum(&Constant, SphereGrid::octahedral(16), 0.5).unwrap();
    let r = degree(&b).unwrap();
    assert_eq!(r.degree, 0);
    assert!(r.residual < 1e-12);
    assert_eq!(b.lipschitz, 0.0);
}

#[test]
fn blending_preserves_degree() {
    let rho = 1.0 / 32.0;
    let d = TorusDatum::new(CurveParams::default(), rho).unwrap();
    let grid = SphereGrid::resolving(rho / 2.0);
    let blended = degree(&boundary_datum(&d, grid.clone(), rho).unwrap()).unwrap();
    let raw = boundary_datum(&Unblended(&d), grid, rho).unwrap();
    assert_eq!(degree(&raw).unwrap().degree, blended.degree);
    // the unblended datum is only Hölder near branch points
    let b = boundary_datum(&d, SphereGrid::resolving(rho / 2.0), rho).unwrap();
    assert!(raw.lipschitz > b.lipschitz);
}

#[test]
fn homogeneous_extension_matches_sphere_values() {
    let d = TorusDatum::new(CurveParams::default(), 1.0 / 16.0).unwrap();
    let dom = std::sync::Arc::new(qharm::LatticeDomain::ball(3, 0.25, &[0.0; 3], 1.0, true).unwrap());
    let u = homogeneous_field(&d, dom.clone(), &[0.0; 3]).unwrap();
    for i in dom.boundary_nodes() {
        let x = dom.position(i);
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let v = d.eval(&[x[0] / r, x[1] / r, x[2] / r]).unwrap();
        assert_eq!(u.value(i), &v[..]);
    }
}
