//! Jones β₂ numbers of discrete measures, Carleson-type sums, and the
//! best-plane estimate for Q-valued fields.

use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::FieldEnergy;
use crate::monotone::radial_p_unchecked;
use crate::strata::sorted_eigen;

/// Finitely many weighted atoms in R^m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    m: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Dimension("one weight per atom".into()));
        }
        let m = points.first().map_or(0, |p| p.len());
        if points.is_empty() || m == 0 {
            return Err(Error::EmptyRegion("measure without atoms".into()));
        }
        if points.iter().any(|p| p.len() != m || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("atom locations must be finite and of one dimension".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        Ok(Self { m, points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Keep only atoms satisfying `keep`; None if nothing remains.
    pub fn restrict<F: Fn(&[f64]) -> bool>(&self, keep: F) -> Option<Self> {
        let (p, w): (Vec<_>, Vec<_>) = self
            .points
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| keep(p))
            .map(|(p, w)| (p.clone(), *w))
            .unzip();
        (!p.is_empty()).then(|| Self { m: self.m, points: p, weights: w })
    }

    /// Smallest distance between distinct atoms (infinity for one atom).
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.points.len() {
            for j in i + 1..self.points.len() {
                best = best.min(dist(&self.points[i], &self.points[j]));
            }
        }
        best
    }

    /// Text records `x1 ... xm weight`; `#` starts a comment.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim().to_string();
            if line.is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}'"))))
                .collect::<Result<_>>()?;
            if v.len() < 2 {
                return Err(Error::Parse("record needs coordinates and a weight".into()));
            }
            weights.push(v[v.len() - 1]);
            points.push(v[..v.len() - 1].to_vec());
        }
        Self::new(points, weights)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (p, w) in self.points.iter().zip(&self.weights) {
            for v in p {
                s.push_str(&format!("{v:?} "));
            }
            s.push_str(&format!("{w:?}\n"));
        }
        s
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePlane {
    pub base: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
}

impl AffinePlane {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn dist2(&self, y: &[f64]) -> f64 {
        let mut v: Vec<f64> = y.iter().zip(&self.base).map(|(a, b)| a - b).collect();
        for e in &self.basis {
            let c: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= c * b);
        }
        v.iter().map(|a| a * a).sum()
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        self.basis.iter().enumerate().all(|(i, a)| {
            self.basis.iter().enumerate().all(|(j, b)| {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (d - if i == j { 1.0 } else { 0.0 }).abs() <= tol
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    pub value: f64,
    /// None when μ has no mass in the ball.
    pub plane: Option<AffinePlane>,
    /// Second-moment eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// μ(B_r(x)).
    pub mass: f64,
}

/// D^k_μ(x, r) = r^-(k+2) min over affine k-planes V of ∫_{B_r(x)} dist²(y, V) dμ.
pub fn beta_number(mu: &DiscreteMeasure, x: &[f64], r: f64, k: usize) -> Result<Beta> {
    let m = mu.m();
    if k > m {
        return Err(Error::Dimension(format!("k = {k} > m = {m}")));
    }
    if x.len() != m {
        return Err(Error::Dimension("centre has wrong dimension".into()));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    let Some((mass, cm, mom)) = second_moment(mu, x, r) else {
        return Ok(Beta { value: 0.0, plane: None, eigenvalues: vec![0.0; m], mass: 0.0 });
    };
    let (mut vals, mut vecs) = sorted_eigen(&mom, m);
    vals.reverse();
    vecs.reverse();
    let tail: f64 = vals[k..].iter().map(|v| v.max(0.0)).sum();
    Ok(Beta {
        value: tail / r.powi(k as i32 + 2),
        plane: Some(AffinePlane { base: cm, basis: vecs[..k].to_vec() }),
        eigenvalues: vals,
        mass,
    })
}

/// Mass, centre of mass and second moment (row-major) of μ on B_r(x).
fn second_moment(mu: &DiscreteMeasure, x: &[f64], r: f64) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let m = mu.m();
    let r2 = r * r;
    let inside: Vec<usize> = (0..mu.len())
        .filter(|&i| mu.points[i].iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2)
        .collect();
    if inside.is_empty() {
        return None;
    }
    let mass: f64 = inside.iter().map(|&i| mu.weights[i]).sum();
    let mut cm = vec![0.0; m];
    for &i in &inside {
        for a in 0..m {
            cm[a] += mu.weights[i] * mu.points[i][a];
        }
    }
    cm.iter_mut().for_each(|v| *v /= mass);
    let mut mom = vec![0.0; m * m];
    for &i in &inside {
        let w = mu.weights[i];
        let p = &mu.points[i];
        for a in 0..m {
            for b in 0..m {
                mom[a * m + b] += w * (p[a] - cm[a]) * (p[b] - cm[b]);
            }
        }
    }
    Some((mass, cm, mom))
}

/// Value of r^-(k+2) ∫_{B_r(x)} dist²(y, V) dμ for a given plane.
pub fn plane_cost(mu: &DiscreteMeasure, x: &[f64], r: f64, plane: &AffinePlane) -> f64 {
    let r2 = r * r;
    let s: f64 = mu
        .points
        .iter()
        .zip(&mu.weights)
        .filter(|(p, _)| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2)
        .map(|(p, w)| w * plane.dist2(p))
        .sum();
    s / r.powi(plane.dim() as i32 + 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub pairs: usize,
    pub doubling_violations: usize,
    pub restriction_violations: usize,
    /// Largest D(x, r) / (2^(k+2) D(y, 2r)) seen.
    pub worst_ratio: f64,
}

/// Check D(x, r) <= 2^(k+2) D(y, 2r) for each (x, y, r) with |x - y| <= r, and
/// D_{μ'} <= D_μ for the restriction to the half-space {y_1 >= x_1}.
pub fn beta_doubling_check(mu: &DiscreteMeasure, samples: &[(Vec<f64>, Vec<f64>, f64)], k: usize) -> Result<DoublingReport> {
    let mut rep = DoublingReport { pairs: 0, doubling_violations: 0, restriction_violations: 0, worst_ratio: 0.0 };
    for (x, y, r) in samples {
        if dist(x, y) > *r {
            return Err(Error::Precondition("sample pair farther apart than r".into()));
        }
        let small = beta_number(mu, x, *r, k)?.value;
        let big = beta_number(mu, y, 2.0 * r, k)?.value;
        let bound = 2f64.powi(k as i32 + 2) * big;
        let tol = 1e-10 * (1.0 + bound.abs());
        rep.pairs += 1;
        if small > bound + tol {
            rep.doubling_violations += 1;
        }
        if bound > 0.0 {
            rep.worst_ratio = rep.worst_ratio.max(small / bound);
        }
        let x1 = x[0];
        if let Some(sub) = mu.restrict(|p| p[0] >= x1) {
            let ds = beta_number(&sub, x, *r, k)?.value;
            if ds > small + 1e-10 * (1.0 + small) {
                rep.restriction_violations += 1;
            }
        }
    }
    Ok(rep)
}

/// Dyadic log-midpoint approximation of ∫_floor^r f(s) ds / s.
fn dyadic_log_integral<F: FnMut(f64) -> f64>(r: f64, floor: f64, mut f: F) -> f64 {
    let mut total = 0.0;
    let mut top = r;
    while top > floor {
        let s = top * std::f64::consts::FRAC_1_SQRT_2;
        total += f(s) * std::f64::consts::LN_2;
        top *= 0.5;
    }
    total
}

/// Default lower cut-off for ds/s integrals: a quarter of the smallest atom
/// separation. Below it every ball around an atom holds a single atom.
pub fn default_floor(mu: &DiscreteMeasure) -> f64 {
    let s = mu.min_separation();
    if s.is_finite() {
        s / 4.0
    } else {
        1.0
    }
}

/// ∫_{B_r(x)} (∫_0^r D^k_μ(y, s) ds/s) dμ(y), with the inner integral as a
/// dyadic sum down to `floor`.
pub fn carleson_integrand(mu: &DiscreteMeasure, x: &[f64], r: f64, k: usize, floor: f64) -> Result<f64> {
    if k > mu.m() {
        return Err(Error::Dimension(format!("k = {k} > m")));
    }
    let r2 = r * r;
    let atoms: Vec<usize> = (0..mu.len())
        .filter(|&i| mu.points[i].iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2)
        .collect();
    let vals: Vec<f64> = atoms
        .par_iter()
        .map(|&i| {
            let y = &mu.points[i];
            mu.weights[i] * dyadic_log_integral(r, floor, |s| beta_number(mu, y, s, k).map(|b| b.value).unwrap_or(0.0))
        })
        .collect();
    Ok(vals.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReifenbergVerdict {
    pub hypothesis_holds: bool,
    pub packing_sum: f64,
    /// Largest Carleson sum / r^k over the test balls.
    pub worst_level: f64,
    pub test_balls: usize,
    /// Test ball (centre, radius) attaining `worst_level`.
    pub worst_ball: Option<(Vec<f64>, f64)>,
}

/// Build μ = Σ r_x^k δ_x and test the Carleson hypothesis at level δ_R² on
/// balls centred at atoms and at grid points, with dyadic radii.
pub fn reifenberg_verdict(balls: &[(Vec<f64>, f64)], k: usize, delta_r: f64) -> Result<ReifenbergVerdict> {
    if balls.is_empty() {
        return Err(Error::EmptyRegion("no balls".into()));
    }
    for i in 0..balls.len() {
        for j in i + 1..balls.len() {
            let (a, ra) = &balls[i];
            let (b, rb) = &balls[j];
            if dist(a, b) < (ra + rb) / 10.0 {
                return Err(Error::Precondition(format!("shrunk balls {i} and {j} overlap")));
            }
        }
    }
    let points: Vec<Vec<f64>> = balls.iter().map(|b| b.0.clone()).collect();
    let weights: Vec<f64> = balls.iter().map(|b| b.1.powi(k as i32)).collect();
    let mu = DiscreteMeasure::new(points, weights)?;
    let m = mu.m();
    let floor = default_floor(&mu).min(balls.iter().map(|b| b.1).fold(f64::INFINITY, f64::min) / 4.0);
    let r_small = balls.iter().map(|b| b.1).fold(f64::INFINITY, f64::min).max(floor);
    let mut radii = vec![1.0];
    while radii.last().unwrap() / 2.0 >= r_small {
        radii.push(radii.last().unwrap() / 2.0);
    }
    let mut centres: Vec<Vec<f64>> = mu.points.clone();
    // grid points of spacing 1/2 inside B_1
    let steps: Vec<f64> = (-2..=2).map(|i| i as f64 * 0.5).collect();
    let mut idx = vec![0usize; m];
    loop {
        let c: Vec<f64> = idx.iter().map(|&i| steps[i]).collect();
        if c.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            centres.push(c);
        }
        let mut a = 0;
        while a < m {
            idx[a] += 1;
            if idx[a] < steps.len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
        if a == m {
            break;
        }
    }
    let mut tests = Vec::new();
    for c in &centres {
        for &r in &radii {
            if c.iter().map(|v| v * v).sum::<f64>().sqrt() + r <= 2.0 {
                tests.push((c.clone(), r));
            }
        }
    }
    let levels: Vec<f64> = tests
        .par_iter()
        .map(|(c, r)| carleson_integrand(&mu, c, *r, k, floor).map(|v| v / r.powi(k as i32)))
        .collect::<Result<_>>()?;
    let (mut worst, mut worst_ball) = (0.0, None);
    for (t, l) in tests.iter().zip(&levels) {
        if *l > worst {
            worst = *l;
            worst_ball = Some(t.clone());
        }
    }
    Ok(ReifenbergVerdict {
        hypothesis_holds: worst < delta_r * delta_r,
        packing_sum: mu.total_mass(),
        worst_level: worst,
        test_balls: tests.len(),
        worst_ball,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifiabilitySums {
    pub per_atom: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    pub all_finite: bool,
}

/// Per-atom ∫_0^1 D^k_μ(x, s) ds/s.
pub fn rectifiability_sum(mu: &DiscreteMeasure, k: usize, floor: f64) -> Result<RectifiabilitySums> {
    if k > mu.m() {
        return Err(Error::Dimension(format!("k = {k} > m")));
    }
    let per_atom: Vec<f64> = mu
        .points
        .par_iter()
        .map(|y| dyadic_log_integral(1.0, floor, |s| beta_number(mu, y, s, k).map(|b| b.value).unwrap_or(0.0)))
        .collect();
    let max = per_atom.iter().copied().fold(0.0, f64::max);
    let mean = per_atom.iter().sum::<f64>() / per_atom.len() as f64;
    let all_finite = per_atom.iter().all(|v| v.is_finite());
    Ok(RectifiabilitySums { per_atom, max, mean, all_finite })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPlaneReport {
    pub beta: f64,
    /// ((m-k)(k+1) 2^m / (ε r^k)) ∫ P(y, 2r) dμ.
    pub bound: f64,
    pub ratio: f64,
    /// λ_j ∫|Du e_j|^2 / (2^m r^m ∫ P dμ / μ(B_r)) for j = 1..=m.
    pub lambda_ratios: Vec<f64>,
}

/// Best (k+1)-plane energy lower bound check: returns the minimising
/// subspace if r^(2-m) ∫_{B_r} |D_V u|^2 < ε for some (k+1)-dimensional V.
fn energy_lower_bound(fe: &FieldEnergy, x: &[f64], r: f64, k: usize, eps: f64) -> std::result::Result<(), Vec<Vec<f64>>> {
    let m = fe.domain().m();
    let scale = r.powi(2 - m as i32);
    let mat: Vec<f64> = fe.matrix_in_ball(x, r).iter().map(|v| v * scale).collect();
    let (vals, vecs) = sorted_eigen(&mat, m);
    let low: f64 = vals[..k + 1].iter().sum();
    if low < eps {
        Err(vecs[..k + 1].to_vec())
    } else {
        Ok(())
    }
}

/// λ_j ∫_{B_r(x)} |Du e_j|^2 versus 2^m r^m ∫ P(y, 2r) dμ for μ normalised
/// to a probability measure on B_r(x). Returns one ratio per j.
pub fn lambda_lemma_ratios(fe: &FieldEnergy, mu: &DiscreteMeasure, x: &[f64], r: f64) -> Result<Vec<f64>> {
    let m = fe.domain().m();
    let sub = mu
        .restrict(|p| dist(p, x) <= r)
        .ok_or_else(|| Error::EmptyRegion("μ has no mass in B_r(x)".into()))?;
    let (mass, _, mom) = second_moment(&sub, x, r).expect("nonempty");
    let (mut vals, mut vecs) = sorted_eigen(&mom, m);
    vals.reverse();
    vecs.reverse();
    let lambdas: Vec<f64> = vals.iter().map(|l| l / mass).collect();
    let mat = fe.matrix_in_ball(x, r);
    let mut p_int = 0.0;
    for (y, w) in sub.points().iter().zip(sub.weights()) {
        if !fe.domain().fits_ball(y, 2.0 * r) {
            return Err(Error::Domain("B_2r(y) leaves the domain".into()));
        }
        p_int += w / mass * radial_p_unchecked(fe, y, 2.0 * r);
    }
    let rhs = 2f64.powi(m as i32) * r.powi(m as i32) * p_int;
    Ok((0..m)
        .map(|j| {
            let e = &vecs[j];
            let mut q = 0.0;
            for a in 0..m {
                for b in 0..m {
                    q += e[a] * mat[a * m + b] * e[b];
                }
            }
            let lhs = lambdas[j] * q;
            if lhs <= 0.0 {
                0.0
            } else {
                lhs / rhs
            }
        })
        .collect())
}

pub fn best_plane_inequality_check(
    fe: &FieldEnergy,
    mu: &DiscreteMeasure,
    x: &[f64],
    r: f64,
    k: usize,
    eps: f64,
) -> Result<BestPlaneReport> {
    let m = fe.domain().m();
    if k >= m {
        return Err(Error::Dimension(format!("k = {k} must be below m = {m}")));
    }
    if mu.points().iter().any(|p| dist(p, x) > r) {
        return Err(Error::Precondition("μ not supported in B_r(x)".into()));
    }
    if let Err(v) = energy_lower_bound(fe, x, r, k, eps) {
        return Err(Error::Precondition(format!(
            "({}-plane energy below ε along {:?})",
            k + 1,
            v
        )));
    }
    let beta = beta_number(mu, x, r, k)?.value;
    let mut p_int = 0.0;
    for (y, w) in mu.points().iter().zip(mu.weights()) {
        if !fe.domain().fits_ball(y, 2.0 * r) {
            return Err(Error::Domain("B_2r(y) leaves the domain".into()));
        }
        p_int += w * radial_p_unchecked(fe, y, 2.0 * r);
    }
    let c = ((m - k) * (k + 1)) as f64 * 2f64.powi(m as i32);
    let bound = c / (eps * r.powi(k as i32)) * p_int;
    let ratio = if beta <= 0.0 { 0.0 } else { beta / bound };
    let lambda_ratios = lambda_lemma_ratios(fe, mu, x, r)?;
    Ok(BestPlaneReport { beta, bound, ratio, lambda_ratios })
}

/// CSV lines `x..., r, k, D, eigenvalues...` for a list of balls.
pub fn beta_profile_csv(mu: &DiscreteMeasure, balls: &[(Vec<f64>, f64)], k: usize) -> Result<String> {
    let m = mu.m();
    let mut s = String::new();
    for a in 0..m {
        s.push_str(&format!("x{},", a + 1));
    }
    s.push_str("r,k,D");
    for a in 0..m {
        s.push_str(&format!(",lambda{}", a + 1));
    }
    s.push('\n');
    for (x, r) in balls {
        let b = beta_number(mu, x, *r, k)?;
        for v in x {
            s.push_str(&format!("{v},"));
        }
        s.push_str(&format!("{r},{k},{}", b.value));
        for l in &b.eigenvalues {
            s.push_str(&format!(",{l}"));
        }
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_of_four_atoms() {
        let mu = DiscreteMeasure::uniform(vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let b = beta_number(&mu, &[0.0, 0.0], 2.0, 1).unwrap();
        assert!((b.value - 0.25).abs() < 1e-14);
        assert!(b.plane.unwrap().is_orthonormal(1e-12));
    }

    #[test]
    fn single_atom_and_empty_ball() {
        let mu = DiscreteMeasure::uniform(vec![vec![0.3, 0.2, 0.1]]).unwrap();
        for k in 0..=3 {
            assert_eq!(beta_number(&mu, &[0.0; 3], 1.0, k).unwrap().value, 0.0);
        }
        let far = beta_number(&mu, &[5.0, 0.0, 0.0], 1.0, 1).unwrap();
        assert!(far.plane.is_none());
        assert!(beta_number(&mu, &[0.0; 3], 1.0, 4).is_err());
    }

    #[test]
    fn measure_text_roundtrip() {
        let mu = DiscreteMeasure::new(vec![vec![0.1, 0.2], vec![-1.0, 3.5]], vec![0.5, 2.0]).unwrap();
        let back = DiscreteMeasure::read(mu.to_text().as_bytes()).unwrap();
        assert_eq!(back, mu);
        assert!(DiscreteMeasure::read("1 2 -1\n".as_bytes()).is_err());
    }
}
