use qharm::TargetManifold;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn projection_examples() {
    let s = TargetManifold::Sphere(2);
    assert_eq!(s.project(&[0.0, 0.0, 2.0]).unwrap(), vec![0.0, 0.0, 1.0]);
    assert!(s.project(&[0.0; 3]).is_err());
    let t = TargetManifold::FlatTorus2;
    let p = t.project(&[1.25, -0.5]).unwrap();
    assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    let e = TargetManifold::Euclidean(3);
    assert_eq!(e.project(&[1.0, -7.0, 3.5]).unwrap(), vec![1.0, -7.0, 3.5]);
}

#[test]
fn distance_examples() {
    let t = TargetManifold::FlatTorus2;
    assert!((t.distance(&[0.1, 0.0], &[0.9, 0.0]) - 0.2).abs() < 1e-15);
    let s = TargetManifold::Sphere(2);
    assert_eq!(s.distance(&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0]), 2.0);
}

#[test]
fn torus_distance_matches_wide_translate_search() {
    let t = TargetManifold::FlatTorus2;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let p = [rng.gen::<f64>(), rng.gen::<f64>()];
        let q = [rng.gen::<f64>(), rng.gen::<f64>()];
        let mut best = f64::INFINITY;
        for i in -2..=2 {
            for j in -2..=2 {
                best = best.min((p[0] - q[0] - i as f64).hypot(p[1] - q[1] - j as f64));
            }
        }
        let d = t.distance(&p, &q);
        assert!((d - best).abs() < 1e-14);
        assert!(d <= 2f64.sqrt() / 2.0 + 1e-15);
    }
}

#[test]
fn torus_triangle_inequality() {
    let t = TargetManifold::FlatTorus2;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let p: Vec<[f64; 2]> = (0..3).map(|_| [rng.gen(), rng.gen()]).collect();
        assert!(t.distance(&p[0], &p[1]) <= t.distance(&p[0], &p[2]) + t.distance(&p[2], &p[1]) + 1e-14);
    }
}

#[test]
fn second_fundamental_form_examples() {
    let s = TargetManifold::Sphere(2);
    let a = s.second_fundamental_form(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
    assert_eq!(a, vec![0.0, 0.0, -1.0]);
    let p = [0.6, 0.0, 0.8];
    let v = [0.0, 2.0, 0.0];
    let a = s.second_fundamental_form(&p, &v, &v).unwrap();
    for i in 0..3 {
        assert!((a[i] + 4.0 * p[i]).abs() < 1e-15);
    }
    assert!(s.second_fundamental_form(&p, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    for t in [TargetManifold::Euclidean(2), TargetManifold::FlatTorus2] {
        assert_eq!(t.second_fundamental_form(&[0.3, 0.4], &[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }
}

#[test]
fn sphere_projection_is_lipschitz_near_the_sphere() {
    let s = TargetManifold::Sphere(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut near = || {
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = 1.0 + rng.gen_range(-0.3..0.3);
        v.iter().map(|x| x / n * r).collect::<Vec<f64>>()
    };
    for _ in 0..1000 {
        let (p, q) = (near(), near());
        let (pp, pq) = (s.project(&p).unwrap(), s.project(&q).unwrap());
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        // the nearest-point retraction is 1/0.7-Lipschitz on the tube of radius 0.3
        assert!(d(&pp, &pq) <= d(&p, &q) / 0.7 + 1e-12);
        assert!(s.contains(&pp, 1e-12));
        let again = s.project(&pp).unwrap();
        assert!(d(&again, &pp) < 1e-15);
        // projecting a point outside the sphere moves it closer to every sphere point
        let outside: Vec<f64> = pp.iter().map(|x| x * 1.2).collect();
        let on = s.project(&near()).unwrap();
        assert!(d(&on, &pp) <= d(&on, &outside) + 1e-12);
    }
}

#[test]
fn ids_parse() {
    for id in ["euclidean:3", "sphere:2", "torus2"] {
        assert_eq!(TargetManifold::parse(id).unwrap().id(), id);
    }
    assert!(TargetManifold::parse("hyperbolic:2").is_err());
}
