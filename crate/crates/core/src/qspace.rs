//! Unordered Q-tuples of points and the matching metric between them.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared distance between two points of a target, given as coordinate slices.
pub trait PointMetric {
    fn dist2(&self, p: &[f64], q: &[f64]) -> f64;
}

/// Flat Euclidean metric on R^N.
#[derive(Debug, Clone, Copy, Default)]
pub struct Euclid;

impl PointMetric for Euclid {
    #[inline]
    fn dist2(&self, p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl<F: Fn(&[f64], &[f64]) -> f64> PointMetric for F {
    fn dist2(&self, p: &[f64], q: &[f64]) -> f64 {
        self(p, q)
    }
}

/// An unordered Q-tuple of points in an N-dimensional coordinate space.
///
/// Sheets are stored contiguously; the order carries no meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPoint {
    q: usize,
    n: usize,
    coords: Vec<f64>,
}

impl QPoint {
    pub fn new(q: usize, n: usize, coords: Vec<f64>) -> Result<Self> {
        if q == 0 || n == 0 {
            return Err(Error::Dimension(format!("Q = {q}, N = {n}")));
        }
        if coords.len() != q * n {
            return Err(Error::Dimension(format!(
                "expected {} coordinates, got {}",
                q * n,
                coords.len()
            )));
        }
        Ok(Self { q, n, coords })
    }

    pub fn from_sheets(sheets: &[Vec<f64>]) -> Result<Self> {
        let q = sheets.len();
        let n = sheets.first().map_or(0, |s| s.len());
        if sheets.iter().any(|s| s.len() != n) {
            return Err(Error::Dimension("ragged sheets".into()));
        }
        Self::new(q, n, sheets.concat())
    }

    /// Q copies of the same point.
    pub fn repeated(q: usize, p: &[f64]) -> Result<Self> {
        Self::new(q, p.len(), p.repeat(q))
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn sheet(&self, l: usize) -> &[f64] {
        &self.coords[l * self.n..(l + 1) * self.n]
    }

    pub fn sheets(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.n)
    }

    /// Same point with sheets reordered: sheet l of the result is sheet perm[l].
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        for &p in perm {
            coords.extend_from_slice(self.sheet(p));
        }
        Self { q: self.q, n: self.n, coords }
    }

    fn check_compatible(&self, other: &QPoint) -> Result<()> {
        if self.q != other.q || self.n != other.n {
            return Err(Error::Dimension(format!(
                "({}, {}) vs ({}, {})",
                self.q, self.n, other.q, other.n
            )));
        }
        Ok(())
    }
}

/// Optimal matching between `a` and `b`. Returns `perm` with sheet l of `a`
/// paired to sheet `perm[l]` of `b`, and the matched cost (squared metric).
///
/// For Q <= 6 all permutations are scanned in lexicographic order and the
/// first optimum wins, so ties resolve to the lexicographically smallest
/// permutation.
pub fn best_matching<M: PointMetric + ?Sized>(
    a: &QPoint,
    b: &QPoint,
    metric: &M,
) -> Result<(Vec<usize>, f64)> {
    a.check_compatible(b)?;
    let mut perm = vec![0; a.q];
    let cost = match_into(a.coords(), b.coords(), a.q, a.n, metric, &mut perm);
    Ok((perm, cost))
}

/// The matching metric G(a, b).
pub fn g_distance<M: PointMetric + ?Sized>(a: &QPoint, b: &QPoint, metric: &M) -> Result<f64> {
    Ok(best_matching(a, b, metric)?.1.sqrt())
}

/// G(a, Q[0]) for Euclidean Q-points.
pub fn g_abs(a: &QPoint) -> f64 {
    a.coords.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Approximate equality: G(a, b) below `1e-9 (1 + |a| + |b|)`.
pub fn approx_eq<M: PointMetric + ?Sized>(a: &QPoint, b: &QPoint, metric: &M) -> bool {
    match g_distance(a, b, metric) {
        Ok(d) => d < 1e-9 * (1.0 + g_abs(a) + g_abs(b)),
        Err(_) => false,
    }
}

/// Matching on raw sheet-major slices. Writes the permutation into `perm` and
/// returns the matched squared cost.
pub fn match_into<M: PointMetric + ?Sized>(
    a: &[f64],
    b: &[f64],
    q: usize,
    n: usize,
    metric: &M,
    perm: &mut [usize],
) -> f64 {
    debug_assert_eq!(a.len(), q * n);
    debug_assert_eq!(b.len(), q * n);
    match q {
        1 => {
            perm[0] = 0;
            metric.dist2(a, b)
        }
        2 => {
            let (a0, a1) = (&a[..n], &a[n..]);
            let (b0, b1) = (&b[..n], &b[n..]);
            let straight = metric.dist2(a0, b0) + metric.dist2(a1, b1);
            let crossed = metric.dist2(a0, b1) + metric.dist2(a1, b0);
            if crossed < straight {
                perm[0] = 1;
                perm[1] = 0;
                crossed
            } else {
                perm[0] = 0;
                perm[1] = 1;
                straight
            }
        }
        _ => {
            let mut cost = vec![0.0; q * q];
            for i in 0..q {
                for j in 0..q {
                    cost[i * q + j] = metric.dist2(&a[i * n..(i + 1) * n], &b[j * n..(j + 1) * n]);
                }
            }
            if q <= 6 {
                brute_force(&cost, q, perm)
            } else {
                hungarian(&cost, q, perm)
            }
        }
    }
}

fn permutations(q: usize) -> &'static [Vec<u8>] {
    static TABLES: [OnceLock<Vec<Vec<u8>>>; 7] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    TABLES[q].get_or_init(|| {
        let mut cur: Vec<u8> = (0..q as u8).collect();
        let mut out = vec![cur.clone()];
        while next_permutation(&mut cur) {
            out.push(cur.clone());
        }
        out
    })
}

fn next_permutation(v: &mut [u8]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn brute_force(cost: &[f64], q: usize, perm: &mut [usize]) -> f64 {
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for (k, p) in permutations(q).iter().enumerate() {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i * q + j as usize]).sum();
        if c < best {
            best = c;
            best_idx = k;
        }
    }
    for (dst, &src) in perm.iter_mut().zip(&permutations(q)[best_idx]) {
        *dst = src as usize;
    }
    best
}

// O(Q^3) assignment with row/column potentials.
fn hungarian(cost: &[f64], q: usize, perm: &mut [usize]) -> f64 {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; q + 1];
    let mut v = vec![0.0; q + 1];
    let mut p = vec![0usize; q + 1];
    let mut way = vec![0usize; q + 1];
    for i in 1..=q {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; q + 1];
        let mut used = vec![false; q + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=q {
                if !used[j] {
                    let cur = cost[(i0 - 1) * q + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=q {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    for j in 1..=q {
        perm[p[j] - 1] = j - 1;
    }
    (0..q).map(|i| cost[i * q + perm[i]]).sum()
}

/// Outcome of the power-sum comparison of two nonnegative multisets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSumCertificate {
    pub equal: bool,
    /// Peeled blocks (value, multiplicity), largest first.
    pub blocks: Vec<(f64, usize)>,
    /// Why the comparison stopped, if the multisets differ.
    pub reason: Option<String>,
}

/// Decide whether two nonnegative multisets of equal size coincide by
/// repeatedly comparing normalised power sums at the largest remaining value
/// and peeling equal leading blocks.
///
/// Values within relative tolerance `tol` of each other count as equal.
pub fn power_sum_certificate(
    a: &[f64],
    b: &[f64],
    exponents: &[u32],
    tol: f64,
) -> Result<PowerSumCertificate> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} elements", a.len(), b.len())));
    }
    if exponents.iter().filter(|&&e| e >= 2).count() < 2 {
        return Err(Error::InvalidParameter("need at least two exponents >= 2".into()));
    }
    if a.iter().chain(b).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain("values must be finite and nonnegative".into()));
    }
    let kmax = *exponents.iter().max().unwrap() as i32;
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(|x, y| y.total_cmp(x));
    b.sort_by(|x, y| y.total_cmp(x));

    let scale = a.first().copied().unwrap_or(0.0).max(b.first().copied().unwrap_or(0.0));
    let zero = tol * scale.max(f64::MIN_POSITIVE);
    let mut blocks = Vec::new();
    let (mut ia, mut ib) = (0, 0);
    let differ = |blocks: Vec<(f64, usize)>, why: String| PowerSumCertificate {
        equal: false,
        blocks,
        reason: Some(why),
    };
    loop {
        let top_a = a.get(ia).copied().unwrap_or(0.0);
        let top_b = b.get(ib).copied().unwrap_or(0.0);
        let top = top_a.max(top_b);
        if top <= zero {
            return Ok(PowerSumCertificate { equal: true, blocks, reason: None });
        }
        // normalised power sums at the top exponent
        let ra: f64 = a[ia..].iter().map(|x| (x / top).powi(kmax)).sum();
        let rb: f64 = b[ib..].iter().map(|x| (x / top).powi(kmax)).sum();
        if (ra - rb).abs() > 0.5 {
            return Ok(differ(
                blocks,
                format!("normalised power sums {ra:.3} vs {rb:.3} at exponent {kmax}"),
            ));
        }
        let in_block = |x: f64| (x - top).abs() <= tol * top;
        let na = a[ia..].iter().take_while(|&&x| in_block(x)).count();
        let nb = b[ib..].iter().take_while(|&&x| in_block(x)).count();
        if na != nb {
            return Ok(differ(blocks, format!("multiplicity {na} vs {nb} at value {top}")));
        }
        for &e in exponents {
            let sa: f64 = a[ia..].iter().map(|x| (x / top).powi(e as i32)).sum();
            let sb: f64 = b[ib..].iter().map(|x| (x / top).powi(e as i32)).sum();
            if (sa - sb).abs() > tol * (a.len() as f64) * 10.0 * (1.0 + sa.abs()) {
                return Ok(differ(blocks, format!("power sums differ at exponent {e}")));
            }
        }
        blocks.push((top, na));
        ia += na;
        ib += nb;
    }
}
