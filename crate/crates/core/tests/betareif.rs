mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use qharm::betareif::*;
use qharm::lattice::FieldEnergy;
use qharm::{Error, LatticeDomain, QField, QPoint, TargetManifold};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss_frame(m: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < k {
        let mut v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for e in &basis {
            let c: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            basis.push(v.iter().map(|a| a / n).collect());
        }
    }
    basis
}

fn random_plane(m: usize, k: usize, scale: f64, rng: &mut ChaCha8Rng) -> AffinePlane {
    AffinePlane {
        base: (0..m).map(|_| rng.gen_range(-scale..scale)).collect(),
        basis: gauss_frame(m, k, rng),
    }
}

/// Plane obtained by jiggling `p` by `amp` and re-orthonormalising.
fn jiggle(p: &AffinePlane, amp: f64, rng: &mut ChaCha8Rng) -> AffinePlane {
    let base = p.base.iter().map(|v| v + rng.gen_range(-amp..amp)).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for e in &p.basis {
        let mut v: Vec<f64> = e.iter().map(|a| a + rng.gen_range(-amp..amp)).collect();
        for f in &basis {
            let c: f64 = v.iter().zip(f).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(f).for_each(|(a, b)| *a -= c * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        basis.push(v.iter().map(|a| a / n).collect());
    }
    AffinePlane { base, basis }
}

fn random_measure(m: usize, n: usize, radius: f64, rng: &mut ChaCha8Rng) -> DiscreteMeasure {
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| loop {
            let p: Vec<f64> = (0..m).map(|_| rng.gen_range(-radius..radius)).collect();
            if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                break p;
            }
        })
        .collect();
    let w = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    DiscreteMeasure::new(pts, w).unwrap()
}

#[test]
fn beta_examples() {
    let cross = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
    let b = beta_number(&cross, &[0.0, 0.0], 2.0, 1).unwrap();
    assert!((b.value - 0.25).abs() < 1e-14);
    assert_eq!(b.mass, 4.0);
    // brute force over line angles through the centre of mass
    let brute = (0..3600)
        .map(|j| {
            let t = j as f64 * PI / 3600.0;
            let plane = AffinePlane { base: vec![0.0, 0.0], basis: vec![vec![t.cos(), t.sin()]] };
            plane_cost(&cross, &[0.0, 0.0], 2.0, &plane)
        })
        .fold(f64::INFINITY, f64::min);
    assert!((brute - 0.25).abs() < 1e-12);

    let one = DiscreteMeasure::uniform(vec![vec![0.3, 0.1, -0.2]]).unwrap();
    for k in 0..=3 {
        assert_eq!(beta_number(&one, &[0.0; 3], 1.0, k).unwrap().value, 0.0);
    }
    assert!(matches!(beta_number(&one, &[0.0; 3], 1.0, 4), Err(Error::Dimension(_))));
    assert!(beta_number(&one, &[0.0; 3], 0.0, 1).is_err());
    let empty = beta_number(&one, &[5.0, 0.0, 0.0], 1.0, 1).unwrap();
    assert_eq!(empty.value, 0.0);
    assert!(empty.plane.is_none());
}

#[test]
fn atoms_on_a_plane_give_zero_and_the_plane() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..50 {
        let m = 3 + trial % 2;
        let k = 1 + trial % (m - 1);
        let plane = random_plane(m, k, 0.2, &mut rng);
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let mut p = plane.base.clone();
                for e in &plane.basis {
                    let c = rng.gen_range(-0.5..0.5);
                    p.iter_mut().zip(e).for_each(|(a, b)| *a += c * b);
                }
                p
            })
            .collect();
        let mu = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let b = beta_number(&mu, &vec![0.0; m], 2.0, k).unwrap();
        assert!(b.value < 1e-12, "{}", b.value);
        let got = b.plane.unwrap();
        assert!(got.is_orthonormal(1e-12));
        // spans agree: every true basis vector lies in the recovered span
        for e in &plane.basis {
            let tip: Vec<f64> = got.base.iter().zip(e).map(|(a, b)| a + b).collect();
            assert!(got.dist2(&tip) < 1e-12);
        }
        for p in &pts {
            assert!(got.dist2(p) < 1e-12);
        }
        // D decreases weakly in k
        let all: Vec<f64> = (0..=m).map(|kk| beta_number(&mu, &vec![0.0; m], 2.0, kk).unwrap().value).collect();
        let scaled: Vec<f64> = all.iter().enumerate().map(|(kk, v)| v * 2f64.powi(kk as i32 + 2)).collect();
        assert!(scaled.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn eigen_value_never_exceeds_sampled_planes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..20 {
        let m = 2 + trial % 3;
        let k = trial % m;
        let mu = random_measure(m, 30, 1.0, &mut rng);
        let x = vec![0.0; m];
        let b = beta_number(&mu, &x, 1.0, k).unwrap();
        assert!((plane_cost(&mu, &x, 1.0, b.plane.as_ref().unwrap()) - b.value).abs() < 1e-10);
        for _ in 0..1000 {
            let p = random_plane(m, k, 0.5, &mut rng);
            assert!(plane_cost(&mu, &x, 1.0, &p) >= b.value - 1e-12);
        }
    }
}

#[test]
fn sampled_minimum_matches_on_planar_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let m = 3;
        let k = 1 + trial % 2;
        let truth = random_plane(m, k, 0.1, &mut rng);
        // nearly planar: tiny normal noise
        let pts: Vec<Vec<f64>> = (0..25)
            .map(|_| {
                let mut p: Vec<f64> = truth.base.iter().map(|v| v + rng.gen_range(-1e-4..1e-4)).collect();
                for e in &truth.basis {
                    let c = rng.gen_range(-0.6..0.6);
                    p.iter_mut().zip(e).for_each(|(a, b)| *a += c * b);
                }
                p
            })
            .collect();
        let mu = DiscreteMeasure::uniform(pts).unwrap();
        let x = vec![0.0; m];
        let b = beta_number(&mu, &x, 1.0, k).unwrap();
        // shrinking random search around the best sample so far
        let mut best = random_plane(m, k, 0.5, &mut rng);
        let mut best_v = plane_cost(&mu, &x, 1.0, &best);
        for _ in 0..200 {
            let p = random_plane(m, k, 0.5, &mut rng);
            let v = plane_cost(&mu, &x, 1.0, &p);
            if v < best_v {
                best = p;
                best_v = v;
            }
        }
        let mut amp = 0.3;
        while amp > 1e-9 {
            let mut improved = false;
            for _ in 0..30 {
                let p = jiggle(&best, amp, &mut rng);
                let v = plane_cost(&mu, &x, 1.0, &p);
                if v < best_v {
                    best = p;
                    best_v = v;
                    improved = true;
                }
            }
            if !improved {
                amp *= 0.5;
            }
        }
        assert!(best_v >= b.value - 1e-14);
        assert!(best_v - b.value <= 1e-6, "trial {trial}: {best_v} vs {}", b.value);
    }
}

#[test]
fn beta_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let m = rng.gen_range(2..=3);
        let k = rng.gen_range(0..=m);
        let mu = random_measure(m, 12, 1.0, &mut rng);
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let r = rng.gen_range(0.2..1.5);
        let s = rng.gen_range(0.1..10.0);
        let scaled = DiscreteMeasure::new(
            mu.points().iter().map(|p| p.iter().map(|v| v * s).collect()).collect(),
            mu.weights().iter().map(|w| w * s.powi(k as i32)).collect(),
        )
        .unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        let a = beta_number(&mu, &x, r, k).unwrap().value;
        let b = beta_number(&scaled, &xs, r * s, k).unwrap().value;
        assert!((a - b).abs() <= 1e-9 * a + 1e-15, "{a} {b}");
    }
}

#[test]
fn doubling_and_restriction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total = 0;
    for _ in 0..100 {
        let m = rng.gen_range(2..=3);
        let k = rng.gen_range(0..m);
        let mu = random_measure(m, 40, 1.0, &mut rng);
        let samples: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..10)
            .map(|_| {
                let r = rng.gen_range(0.05..0.8);
                let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.8..0.8)).collect();
                let dir: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let t = rng.gen_range(0.0..r);
                let y = x.iter().zip(&dir).map(|(a, d)| a + t * d / n).collect();
                (x, y, r)
            })
            .collect();
        let rep = beta_doubling_check(&mu, &samples, k).unwrap();
        assert_eq!(rep.doubling_violations, 0);
        assert_eq!(rep.restriction_violations, 0);
        assert!(rep.worst_ratio <= 1.0 + 1e-9);
        total += rep.pairs;
    }
    assert_eq!(total, 1000);
    // x = y: strict unless both sides vanish
    let mu = random_measure(2, 20, 1.0, &mut rng);
    let b1 = beta_number(&mu, &[0.0, 0.0], 0.5, 1).unwrap().value;
    let b2 = beta_number(&mu, &[0.0, 0.0], 1.0, 1).unwrap().value;
    assert!(b1 < 8.0 * b2 || (b1 == 0.0 && b2 == 0.0));
    let bad = vec![(vec![0.0, 0.0], vec![1.0, 0.0], 0.5)];
    assert!(matches!(beta_doubling_check(&mu, &bad, 1), Err(Error::Precondition(_))));
}

fn line_measure(n: usize) -> DiscreteMeasure {
    let pts = (0..n).map(|i| vec![-0.9 + 1.8 * i as f64 / (n - 1) as f64, 0.0]).collect();
    DiscreteMeasure::new(pts, vec![1.8 / n as f64; n]).unwrap()
}

fn circle_measure(radius: f64, n: usize) -> DiscreteMeasure {
    let pts = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            vec![radius * t.cos(), radius * t.sin()]
        })
        .collect();
    DiscreteMeasure::new(pts, vec![2.0 * PI * radius / n as f64; n]).unwrap()
}

#[test]
fn carleson_examples() {
    let line = line_measure(40);
    let floor = default_floor(&line);
    assert_eq!(carleson_integrand(&line, &[0.0, 0.0], 0.5, 1, floor).unwrap(), 0.0);
    let one = DiscreteMeasure::uniform(vec![vec![0.1, 0.2]]).unwrap();
    assert_eq!(carleson_integrand(&one, &[0.0, 0.0], 0.5, 1, default_floor(&one)).unwrap(), 0.0);
    assert_eq!(carleson_integrand(&one, &[3.0, 0.0], 0.5, 1, 0.01).unwrap(), 0.0);
    assert!(carleson_integrand(&one, &[0.0, 0.0], 0.5, 3, 0.01).is_err());

    // curvature 1/R: the normalised level scales like R^-2 at fixed r
    let r = 0.2;
    let level = |rad: f64| {
        let n = (2.0 * PI * rad / 0.01).round() as usize;
        let c = circle_measure(rad, n);
        carleson_integrand(&c, &[rad, 0.0], r, 1, default_floor(&c)).unwrap() / r
    };
    let (a, b) = (level(0.5), level(1.0));
    assert!(a.is_finite() && b > 0.0);
    let ratio = a / b;
    assert!(ratio > 3.0 && ratio < 5.0, "{ratio}");
}

#[test]
fn reifenberg_line_passes_with_zero_integrand() {
    let r = 0.05;
    let balls: Vec<(Vec<f64>, f64)> = (0..19).map(|i| (vec![-0.9 + 0.1 * i as f64, 0.0], r)).collect();
    let v = reifenberg_verdict(&balls, 1, 1e-6).unwrap();
    assert!(v.hypothesis_holds);
    assert_eq!(v.worst_level, 0.0);
    assert!((v.packing_sum - 19.0 * r).abs() < 1e-12);
    assert!(v.test_balls > 19);
}

#[test]
fn reifenberg_circle_and_disk() {
    let n = 60;
    let balls: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            (vec![0.8 * t.cos(), 0.8 * t.sin()], 0.02)
        })
        .collect();
    let v = reifenberg_verdict(&balls, 1, 0.01).unwrap();
    assert!(v.worst_level > 0.0);
    let relaxed = reifenberg_verdict(&balls, 1, 1.01 * v.worst_level.sqrt()).unwrap();
    assert!(relaxed.hypothesis_holds);
    assert!(v.packing_sum < 2.0 * PI * 0.8 / 0.02 * 0.02);

    // a 2-disk of balls is far from any line
    let mut disk = Vec::new();
    for i in -8i32..=8 {
        for j in -8i32..=8 {
            let c = vec![i as f64 * 0.1, j as f64 * 0.1];
            if c[0].hypot(c[1]) <= 0.8 {
                disk.push((c, 0.05));
            }
        }
    }
    let v = reifenberg_verdict(&disk, 1, 0.01).unwrap();
    assert!(!v.hypothesis_holds);
    assert!(v.worst_level > 0.1, "{}", v.worst_level);
}

#[test]
fn reifenberg_is_stable_under_reordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut balls: Vec<(Vec<f64>, f64)> = (0..40)
        .map(|i| {
            let t = i as f64 / 40.0;
            (vec![-0.8 + 1.6 * t, 0.1 * (4.0 * t).sin()], 0.02)
        })
        .collect();
    let base = reifenberg_verdict(&balls, 1, 0.05).unwrap();
    for _ in 0..5 {
        balls.shuffle(&mut rng);
        let v = reifenberg_verdict(&balls, 1, 0.05).unwrap();
        assert!((v.packing_sum / base.packing_sum - 1.0).abs() < 0.05);
        assert!((v.worst_level / base.worst_level - 1.0).abs() < 0.05);
        assert_eq!(v.hypothesis_holds, base.hypothesis_holds);
    }
}

#[test]
fn reifenberg_rejects_overlap() {
    let balls = vec![(vec![0.0, 0.0], 0.5), (vec![0.05, 0.0], 0.5)];
    assert!(matches!(reifenberg_verdict(&balls, 1, 0.01), Err(Error::Precondition(_))));
    assert!(reifenberg_verdict(&[], 1, 0.01).is_err());
}

#[test]
fn rectifiability_examples() {
    let seg = line_measure(30);
    let s = rectifiability_sum(&seg, 1, default_floor(&seg)).unwrap();
    assert!(s.all_finite);
    assert_eq!(s.max, 0.0);

    let arc = DiscreteMeasure::uniform(
        (0..60)
            .map(|i| {
                let t = PI * i as f64 / 60.0;
                vec![0.7 * t.cos(), 0.7 * t.sin()]
            })
            .collect(),
    )
    .unwrap();
    let a = rectifiability_sum(&arc, 1, default_floor(&arc)).unwrap();
    assert!(a.all_finite && a.max > 0.0);
    // refining the arc keeps sums bounded
    let arc2 = DiscreteMeasure::uniform(
        (0..120)
            .map(|i| {
                let t = PI * i as f64 / 120.0;
                vec![0.7 * t.cos(), 0.7 * t.sin()]
            })
            .collect(),
    )
    .unwrap();
    let a2 = rectifiability_sum(&arc2, 1, default_floor(&arc2)).unwrap();
    assert!(a2.max < 3.0 * a.max);

    // polyline with a right-angle corner at the origin
    let mut pts: Vec<Vec<f64>> = (1..=20).map(|i| vec![-0.04 * i as f64, 0.0]).collect();
    pts.push(vec![0.0, 0.0]);
    pts.extend((1..=20).map(|i| vec![0.0, 0.04 * i as f64]));
    let corner = DiscreteMeasure::uniform(pts).unwrap();
    let c = rectifiability_sum(&corner, 1, default_floor(&corner)).unwrap();
    assert!(c.all_finite);
    let at_corner = c.per_atom[20];
    let far = c.per_atom[19];
    assert!(at_corner > far, "{at_corner} vs {far}");
    assert!(at_corner > c.mean);
}

fn small_domain(m: usize) -> Arc<LatticeDomain> {
    if m == 2 {
        Arc::new(LatticeDomain::ball(2, 1.0 / 8.0, &[0.0, 0.0], 1.0, false).unwrap())
    } else {
        Arc::new(LatticeDomain::ball(3, 1.0 / 6.0, &[0.0; 3], 1.0, false).unwrap())
    }
}

#[test]
fn lambda_lemma_on_random_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let doms = [small_domain(2), small_domain(3)];
    let mut violations = 0;
    for trial in 0..1000 {
        let d = doms[trial % 2].clone();
        let m = d.m();
        let q = rng.gen_range(1..=3);
        let u = common::random_field(d, q, 2, &mut rng);
        let fe = FieldEnergy::new(&u);
        let r = rng.gen_range(0.2..0.3);
        let mu = random_measure(m, rng.gen_range(1..12), r, &mut rng);
        let ratios = lambda_lemma_ratios(&fe, &mu, &vec![0.0; m], r).unwrap();
        violations += ratios.iter().filter(|&&v| v > 1.0).count();
    }
    assert_eq!(violations, 0);
}

#[test]
fn lambda_lemma_needs_mass() {
    let u = common::sqrt_field(1.0 / 8.0);
    let fe = FieldEnergy::new(&u);
    let mu = DiscreteMeasure::uniform(vec![vec![0.9, 0.0]]).unwrap();
    assert!(matches!(lambda_lemma_ratios(&fe, &mu, &[0.0, 0.0], 0.3), Err(Error::EmptyRegion(_))));
}

/// Linear map plus a smooth wiggle, full rank so every direction carries energy.
fn synthetic_field(d: Arc<LatticeDomain>, rng: &mut ChaCha8Rng) -> QField {
    let m = d.m();
    let a: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = rng.gen_range(0.0..0.3);
    QField::from_fn(d, TargetManifold::Euclidean(2), 2, move |x| {
        let mut out = Vec::with_capacity(4);
        for (sheet, mat) in [&a, &b].iter().enumerate() {
            for c in 0..2 {
                let lin: f64 = (0..m).map(|j| mat[c * m + j] * x[j]).sum();
                out.push(lin + w * (3.0 * x[c % m] + sheet as f64).sin());
            }
        }
        out
    })
    .unwrap()
}

#[test]
fn best_plane_bound_on_synthetic_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = small_domain(3);
    let mut checked = 0;
    for _ in 0..100 {
        let u = synthetic_field(d.clone(), &mut rng);
        let fe = FieldEnergy::new(&u);
        let r = 0.3;
        let k = rng.gen_range(0..3);
        let mu = random_measure(3, rng.gen_range(2..15), r, &mut rng);
        // ε at the measured (k+1)-plane energy, so the precondition holds
        let m = fe.matrix_in_ball(&[0.0; 3], r);
        let (vals, _) = qharm::strata::sorted_eigen(&m, 3);
        let eps = vals[..k + 1].iter().sum::<f64>() / r * (1.0 - 1e-9);
        if eps <= 0.0 {
            continue;
        }
        let rep = best_plane_inequality_check(&fe, &mu, &[0.0; 3], r, k, eps).unwrap();
        assert!(rep.ratio <= 1.0, "{rep:?}");
        assert!(rep.lambda_ratios.iter().all(|&v| v <= 1.0));
        checked += 1;
    }
    assert!(checked >= 95);
}

#[test]
fn best_plane_preconditions() {
    let d = small_domain(3);
    let c = QField::constant(d.clone(), TargetManifold::Euclidean(2), &QPoint::repeated(2, &[0.1, 0.2]).unwrap()).unwrap();
    let fe = FieldEnergy::new(&c);
    let mu = DiscreteMeasure::uniform(vec![vec![0.1, 0.0, 0.0], vec![0.0, 0.1, 0.0]]).unwrap();
    assert!(matches!(best_plane_inequality_check(&fe, &mu, &[0.0; 3], 0.3, 1, 1e-3), Err(Error::Precondition(_))));
    let outside = DiscreteMeasure::uniform(vec![vec![0.5, 0.0, 0.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = synthetic_field(d, &mut rng);
    let fe = FieldEnergy::new(&u);
    assert!(matches!(best_plane_inequality_check(&fe, &outside, &[0.0; 3], 0.3, 1, 1e-3), Err(Error::Precondition(_))));
    assert!(matches!(best_plane_inequality_check(&fe, &mu, &[0.0; 3], 0.3, 3, 1e-3), Err(Error::Dimension(_))));
}

#[test]
fn measure_text_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mu = random_measure(3, 17, 1.0, &mut rng);
    let text = mu.to_text();
    let back = DiscreteMeasure::read(text.as_bytes()).unwrap();
    assert_eq!(back, mu);
    let commented = "# header\n0.0 1.0 2.0\n\n1, 2, 0.5 # trailing\n";
    let m = DiscreteMeasure::read(commented.as_bytes()).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m.weights(), &[2.0, 0.5]);
    assert!(DiscreteMeasure::read("1.0 x 2.0\n".as_bytes()).is_err());
    assert!(DiscreteMeasure::read("1.0 -2.0\n".as_bytes()).is_err());
    assert!(DiscreteMeasure::read("".as_bytes()).is_err());
    assert!(DiscreteMeasure::new(vec![vec![0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).is_err());
}

#[test]
fn beta_profile_csv_layout() {
    let cross = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
    let csv = beta_profile_csv(&cross, &[(vec![0.0, 0.0], 2.0), (vec![5.0, 5.0], 1.0)], 1).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x1,x2,r,k,D,lambda1,lambda2");
    let row: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row[..4], [0.0, 0.0, 2.0, 1.0]);
    assert!((row[4] - 0.25).abs() < 1e-14);
    assert_eq!(lines.len(), 3);
}
