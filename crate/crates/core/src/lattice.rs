//! Cubic lattice domains, Q-valued fields on them, and the discrete energy.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qspace::{match_into, QPoint};
use crate::sum::KahanSum;
use crate::targets::TargetManifold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Outside,
    Boundary,
    Interior,
}

impl NodeKind {
    pub fn active(self) -> bool {
        self != NodeKind::Outside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DomainShape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

/// A finite piece of the lattice hZ^m (possibly shifted) carved out by a
/// ball or a box.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDomain {
    m: usize,
    h: f64,
    origin: Vec<f64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    kinds: Vec<NodeKind>,
    geometry: DomainShape,
}

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl LatticeDomain {
    /// Lattice nodes in the closed ball. With `offset` the lattice is shifted
    /// by half a cell so that the centre is not a node.
    pub fn ball(m: usize, h: f64, center: &[f64], radius: f64, offset: bool) -> Result<Self> {
        if m == 0 || center.len() != m {
            return Err(Error::Dimension(format!("m = {m}, centre has {} coordinates", center.len())));
        }
        if !(h > 0.0) || !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("h = {h}, radius = {radius}")));
        }
        let shift = if offset { 0.5 } else { 0.0 };
        let k = (radius / h).ceil() as i64 + 1;
        let shape = vec![(2 * k + 1) as usize; m];
        let origin: Vec<f64> = center.iter().map(|c| c + h * (-(k as f64) + shift)).collect();
        let geometry = DomainShape::Ball { center: center.to_vec(), radius };
        Self::carve(m, h, origin, shape, geometry)
    }

    /// Lattice nodes in the box `[lo, hi]`. With `cells` the nodes sit at cell
    /// centres; otherwise at cell corners including the faces.
    pub fn cube(m: usize, h: f64, lo: &[f64], hi: &[f64], cells: bool) -> Result<Self> {
        if m == 0 || lo.len() != m || hi.len() != m {
            return Err(Error::Dimension("box corners do not match m".into()));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("h = {h}")));
        }
        let mut shape = Vec::with_capacity(m);
        let mut origin = Vec::with_capacity(m);
        for i in 0..m {
            let len = hi[i] - lo[i];
            let n = (len / h).round();
            if !(len > 0.0) || (n * h - len).abs() > 1e-9 * len.max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "box side {len} is not a multiple of h = {h}"
                )));
            }
            if cells {
                shape.push(n as usize);
                origin.push(lo[i] + 0.5 * h);
            } else {
                shape.push(n as usize + 1);
                origin.push(lo[i]);
            }
        }
        let geometry = DomainShape::Box { lo: lo.to_vec(), hi: hi.to_vec() };
        Self::carve(m, h, origin, shape, geometry)
    }

    fn carve(m: usize, h: f64, origin: Vec<f64>, shape: Vec<usize>, geometry: DomainShape) -> Result<Self> {
        let total: usize = shape.iter().product();
        let strides = strides_for(&shape);
        let mut dom = Self {
            m,
            h,
            origin,
            shape,
            strides,
            kinds: vec![NodeKind::Outside; total],
            geometry,
        };
        let mut x = vec![0.0; m];
        let inside: Vec<bool> = (0..total)
            .map(|i| {
                dom.position_into(i, &mut x);
                dom.geometric_contains(&x)
            })
            .collect();
        for i in 0..total {
            if !inside[i] {
                continue;
            }
            let mut boundary = false;
            for axis in 0..m {
                for dir in [-1i64, 1] {
                    match dom.step(i, axis, dir) {
                        Some(j) if inside[j] => {}
                        _ => boundary = true,
                    }
                }
            }
            dom.kinds[i] = if boundary { NodeKind::Boundary } else { NodeKind::Interior };
        }
        if !dom.kinds.contains(&NodeKind::Interior) {
            return Err(Error::EmptyRegion("mask has no interior nodes".into()));
        }
        Ok(dom)
    }

    /// Point where the ray from the domain centre through x meets the
    /// geometric boundary; the centre itself maps along e_1.
    pub fn radial_boundary_point(&self, x: &[f64]) -> Vec<f64> {
        let (c, scale): (Vec<f64>, Box<dyn Fn(&[f64]) -> f64>) = match &self.geometry {
            DomainShape::Ball { center, radius } => {
                let r = *radius;
                (center.clone(), Box::new(move |d: &[f64]| d.iter().map(|v| v * v).sum::<f64>().sqrt() / r))
            }
            DomainShape::Box { lo, hi } => {
                let c: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
                let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
                (c, Box::new(move |d: &[f64]| d.iter().zip(&half).map(|(v, h)| v.abs() / h).fold(0.0, f64::max)))
            }
        };
        let mut d: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
        let mut t = scale(&d);
        if t == 0.0 {
            d = vec![0.0; self.m];
            d[0] = 1.0;
            t = scale(&d);
        }
        c.iter().zip(&d).map(|(a, v)| a + v / t).collect()
    }

    /// Rebuild a domain from stored parts (used by snapshot loading).
    pub fn from_parts(
        m: usize,
        h: f64,
        origin: Vec<f64>,
        shape: Vec<usize>,
        kinds: Vec<NodeKind>,
        geometry: DomainShape,
    ) -> Result<Self> {
        if origin.len() != m || shape.len() != m || kinds.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension("inconsistent domain parts".into()));
        }
        let strides = strides_for(&shape);
        Ok(Self { m, h, origin, shape, strides, kinds, geometry })
    }

    fn geometric_contains(&self, x: &[f64]) -> bool {
        match &self.geometry {
            DomainShape::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 <= radius * radius * (1.0 + 1e-12)
            }
            DomainShape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, u))| *v >= l - 1e-12 && *v <= u + 1e-12),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn geometry(&self) -> &DomainShape {
        &self.geometry
    }

    /// Number of grid points, active or not.
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut out = vec![0; self.m];
        for a in 0..self.m {
            out[a] = i / self.strides[a];
            i %= self.strides[a];
        }
        out
    }

    pub fn linear_index(&self, k: &[usize]) -> usize {
        k.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn position_into(&self, mut i: usize, out: &mut [f64]) {
        for a in 0..self.m {
            let k = i / self.strides[a];
            i %= self.strides[a];
            out[a] = self.origin[a] + self.h * k as f64;
        }
    }

    pub fn position(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.position_into(i, &mut out);
        out
    }

    /// Grid neighbour along `axis`, regardless of mask.
    #[inline]
    pub fn step(&self, i: usize, axis: usize, dir: i64) -> Option<usize> {
        let k = (i / self.strides[axis]) % self.shape[axis];
        if dir < 0 {
            (k > 0).then(|| i - self.strides[axis])
        } else {
            (k + 1 < self.shape[axis]).then(|| i + self.strides[axis])
        }
    }

    /// Active neighbour along `axis`.
    #[inline]
    pub fn neighbor(&self, i: usize, axis: usize, dir: i64) -> Option<usize> {
        self.step(i, axis, dir).filter(|&j| self.kinds[j].active())
    }

    /// Checkerboard colour of a node.
    pub fn color(&self, i: usize) -> usize {
        let mut s = 0;
        let mut r = i;
        for a in 0..self.m {
            s += r / self.strides[a];
            r %= self.strides[a];
        }
        s % 2
    }

    pub fn active_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.kinds[i].active())
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.kinds[i] == NodeKind::Interior).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.kinds[i] == NodeKind::Boundary).collect()
    }

    /// Active node closest to `x`, if the rounded grid point is active.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for a in 0..self.m {
            let k = ((x[a] - self.origin[a]) / self.h).round();
            if k < 0.0 || k >= self.shape[a] as f64 {
                return None;
            }
            idx += k as usize * self.strides[a];
        }
        self.kinds[idx].active().then_some(idx)
    }

    /// Active nodes y with |y - x| <= r, in increasing index order.
    pub fn nodes_in_ball(&self, x: &[f64], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in_ball(x, r, |i, _| out.push(i));
        out
    }

    /// Visit active nodes in the closed ball with their offset y - x.
    pub fn for_each_in_ball<F: FnMut(usize, &[f64])>(&self, x: &[f64], r: f64, mut f: F) {
        let m = self.m;
        let mut lo = vec![0usize; m];
        let mut hi = vec![0usize; m];
        for a in 0..m {
            let l = ((x[a] - r - self.origin[a]) / self.h).ceil().max(0.0);
            let u = ((x[a] + r - self.origin[a]) / self.h).floor();
            if u < 0.0 || l > (self.shape[a] - 1) as f64 {
                return;
            }
            lo[a] = l as usize;
            hi[a] = (u as usize).min(self.shape[a] - 1);
            if lo[a] > hi[a] {
                return;
            }
        }
        let r2 = r * r;
        let mut k = lo.clone();
        let mut d = vec![0.0; m];
        loop {
            let mut d2 = 0.0;
            for a in 0..m {
                d[a] = self.origin[a] + self.h * k[a] as f64 - x[a];
                d2 += d[a] * d[a];
            }
            if d2 <= r2 {
                let i = self.linear_index(&k);
                if self.kinds[i].active() {
                    f(i, &d);
                }
            }
            let mut a = m;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                if k[a] < hi[a] {
                    k[a] += 1;
                    break;
                }
                k[a] = lo[a];
            }
        }
    }

    /// Whether the closed ball B_r(x) lies inside the domain geometry.
    pub fn fits_ball(&self, x: &[f64], r: f64) -> bool {
        match &self.geometry {
            DomainShape::Ball { center, radius } => {
                let d: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                d + r <= *radius + 1e-12
            }
            DomainShape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, u))| v - r >= l - 1e-12 && v + r <= u + 1e-12),
        }
    }
}

/// A map from the active lattice nodes into A_Q of a target manifold.
#[derive(Debug, Clone)]
pub struct QField {
    domain: Arc<LatticeDomain>,
    target: TargetManifold,
    q: usize,
    values: Vec<f64>,
}

impl QField {
    /// Field with every active node set by `f(position)`, projected onto the
    /// target sheet by sheet.
    pub fn from_fn<F>(domain: Arc<LatticeDomain>, target: TargetManifold, q: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        if q == 0 {
            return Err(Error::Dimension("Q must be positive".into()));
        }
        let n = target.ambient_dim();
        let stride = q * n;
        let mut values = vec![0.0; domain.len() * stride];
        values
            .par_chunks_mut(stride)
            .enumerate()
            .try_for_each(|(i, slot)| -> Result<()> {
                if !domain.kind(i).active() {
                    return Ok(());
                }
                let v = f(&domain.position(i));
                if v.len() != stride {
                    return Err(Error::Dimension(format!("expected {stride} values, got {}", v.len())));
                }
                slot.copy_from_slice(&v);
                for s in slot.chunks_mut(n) {
                    target.project_in_place(s)?;
                }
                Ok(())
            })?;
        Ok(Self { domain, target, q, values })
    }

    pub fn constant(domain: Arc<LatticeDomain>, target: TargetManifold, value: &QPoint) -> Result<Self> {
        if value.n() != target.ambient_dim() {
            return Err(Error::Dimension("value does not live in the target".into()));
        }
        let c = value.coords().to_vec();
        Self::from_fn(domain, target, value.q(), move |_| c.clone())
    }

    pub fn domain(&self) -> &LatticeDomain {
        &self.domain
    }

    pub fn domain_arc(&self) -> Arc<LatticeDomain> {
        self.domain.clone()
    }

    pub fn target(&self) -> TargetManifold {
        self.target
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.target.ambient_dim()
    }

    pub fn stride(&self) -> usize {
        self.q * self.n()
    }

    #[inline]
    pub fn value(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.values[i * s..(i + 1) * s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn point(&self, i: usize) -> QPoint {
        QPoint::new(self.q, self.n(), self.value(i).to_vec()).expect("field shape")
    }

    /// Overwrite a node value after projecting it onto the target.
    pub fn set(&mut self, i: usize, v: &[f64]) -> Result<()> {
        let s = self.stride();
        if v.len() != s {
            return Err(Error::Dimension(format!("expected {s} values, got {}", v.len())));
        }
        let n = self.n();
        let target = self.target;
        let slot = &mut self.values[i * s..(i + 1) * s];
        slot.copy_from_slice(v);
        for c in slot.chunks_mut(n) {
            target.project_in_place(c)?;
        }
        Ok(())
    }

    /// Matched squared distance between the values at two nodes.
    #[inline]
    pub fn edge_cost(&self, i: usize, j: usize) -> f64 {
        let mut perm = [0usize; 16];
        if self.q <= 16 {
            match_into(self.value(i), self.value(j), self.q, self.n(), &self.target, &mut perm[..self.q])
        } else {
            let mut p = vec![0; self.q];
            match_into(self.value(i), self.value(j), self.q, self.n(), &self.target, &mut p)
        }
    }

    /// Node energy density: the average of forward and backward squared
    /// difference quotients summed over axes. Missing neighbours count 0.
    pub fn node_density(&self, i: usize) -> f64 {
        let d = &self.domain;
        let mut s = 0.0;
        for axis in 0..d.m() {
            if let Some(j) = d.neighbor(i, axis, 1) {
                s += 0.5 * self.edge_cost(i, j);
            }
            if let Some(j) = d.neighbor(i, axis, -1) {
                s += 0.5 * self.edge_cost(j, i);
            }
        }
        s / (d.h() * d.h())
    }

    /// Total discrete Dirichlet energy, summed edge by edge in index order.
    pub fn dirichlet_energy(&self) -> f64 {
        let d = &self.domain;
        let w = d.h().powi(d.m() as i32 - 2);
        let chunk = 4096;
        let n = d.len();
        let partial: Vec<f64> = (0..n.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut acc = KahanSum::new();
                for i in c * chunk..((c + 1) * chunk).min(n) {
                    if !d.kind(i).active() {
                        continue;
                    }
                    for axis in 0..d.m() {
                        if let Some(j) = d.neighbor(i, axis, 1) {
                            acc.add(self.edge_cost(i, j));
                        }
                    }
                }
                acc.value()
            })
            .collect();
        let mut total = KahanSum::new();
        for v in partial {
            total.add(v);
        }
        total.value() * w
    }

    /// Energy restricted to the nodes of the closed ball, from node densities.
    pub fn energy_in_ball(&self, x: &[f64], r: f64) -> f64 {
        let hm = self.domain.h().powi(self.domain.m() as i32);
        let mut acc = KahanSum::new();
        self.domain.for_each_in_ball(x, r, |i, _| acc.add(self.node_density(i)));
        acc.value() * hm
    }

    /// Per-node energy matrix: Gram matrix of central matched differences
    /// plus a diagonal correction so the trace equals the node density.
    /// Row-major m x m.
    pub fn node_matrix(&self, i: usize) -> Vec<f64> {
        let d = &self.domain;
        let m = d.m();
        let n = self.n();
        let q = self.q;
        let h = d.h();
        let me = self.value(i);
        let mut central = vec![0.0; m * q * n];
        let mut corr = vec![0.0; m];
        let mut perm = vec![0usize; q];
        let mut fwd = vec![0.0; q * n];
        let mut bwd = vec![0.0; q * n];
        for axis in 0..m {
            fwd.iter_mut().for_each(|x| *x = 0.0);
            bwd.iter_mut().for_each(|x| *x = 0.0);
            if let Some(j) = d.neighbor(i, axis, 1) {
                match_into(me, self.value(j), q, n, &self.target, &mut perm);
                for l in 0..q {
                    self.target.diff_into(
                        &me[l * n..(l + 1) * n],
                        &self.value(j)[perm[l] * n..(perm[l] + 1) * n],
                        &mut fwd[l * n..(l + 1) * n],
                    );
                }
            }
            if let Some(j) = d.neighbor(i, axis, -1) {
                match_into(me, self.value(j), q, n, &self.target, &mut perm);
                for l in 0..q {
                    self.target.diff_into(
                        &self.value(j)[perm[l] * n..(perm[l] + 1) * n],
                        &me[l * n..(l + 1) * n],
                        &mut bwd[l * n..(l + 1) * n],
                    );
                }
            }
            let g = &mut central[axis * q * n..(axis + 1) * q * n];
            for k in 0..q * n {
                g[k] = 0.5 * (fwd[k] + bwd[k]) / h;
                let e = 0.5 * (fwd[k] - bwd[k]) / h;
                corr[axis] += e * e;
            }
        }
        let mut out = vec![0.0; m * m];
        for a in 0..m {
            for b in a..m {
                let ga = &central[a * q * n..(a + 1) * q * n];
                let gb = &central[b * q * n..(b + 1) * q * n];
                let v: f64 = ga.iter().zip(gb).map(|(x, y)| x * y).sum();
                out[a * m + b] = v;
                out[b * m + a] = v;
            }
            out[a * m + a] += corr[a];
        }
        out
    }

    /// Q-valued multilinear interpolation at an arbitrary point. Corners are
    /// matched to the heaviest active corner before averaging.
    pub fn interpolate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = &self.domain;
        let m = d.m();
        let n = self.n();
        let q = self.q;
        let mut base = vec![0usize; m];
        let mut frac = vec![0.0; m];
        for a in 0..m {
            let t = (x[a] - d.origin()[a]) / d.h();
            let k = t.floor().clamp(0.0, (d.shape()[a].saturating_sub(2)) as f64);
            base[a] = k as usize;
            frac[a] = (t - k).clamp(0.0, 1.0);
        }
        let mut corners: Vec<(usize, f64)> = Vec::with_capacity(1 << m);
        for c in 0..(1usize << m) {
            let mut k = base.clone();
            let mut w = 1.0;
            let mut ok = true;
            for a in 0..m {
                if c >> a & 1 == 1 {
                    k[a] += 1;
                    if k[a] >= d.shape()[a] {
                        ok = false;
                    }
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if !ok {
                continue;
            }
            let i = d.linear_index(&k);
            if d.kind(i).active() {
                corners.push((i, w));
            }
        }
        let wsum: f64 = corners.iter().map(|c| c.1).sum();
        if corners.is_empty() || wsum <= 0.0 {
            return d
                .nearest_node(x)
                .map(|i| self.value(i).to_vec())
                .ok_or_else(|| Error::Domain("point outside the lattice domain".into()));
        }
        let &(r, _) = corners
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        let reference = self.value(r).to_vec();
        let mut acc = vec![0.0; q * n];
        let mut perm = vec![0usize; q];
        let mut tmp = vec![0.0; n];
        for &(i, w) in &corners {
            match_into(&reference, self.value(i), q, n, &self.target, &mut perm);
            for l in 0..q {
                self.target.diff_into(
                    &reference[l * n..(l + 1) * n],
                    &self.value(i)[perm[l] * n..(perm[l] + 1) * n],
                    &mut tmp,
                );
                for c in 0..n {
                    acc[l * n + c] += w * tmp[c];
                }
            }
        }
        let mut out: Vec<f64> = reference.iter().zip(&acc).map(|(r, a)| r + a / wsum).collect();
        for s in out.chunks_mut(n) {
            self.target.project_in_place(s)?;
        }
        Ok(out)
    }

    /// New field on `domain` with values interpolated at `map(position)`.
    pub fn resample<F>(&self, domain: Arc<LatticeDomain>, map: F) -> Result<QField>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let probe = QField::from_fn(domain.clone(), self.target, self.q, |_| vec![0.0; self.stride()]);
        // Sphere targets reject zero vectors during projection, so fill directly.
        let mut out = match probe {
            Ok(f) => f,
            Err(_) => QField {
                domain: domain.clone(),
                target: self.target,
                q: self.q,
                values: vec![0.0; domain.len() * self.stride()],
            },
        };
        let stride = self.stride();
        out.values
            .par_chunks_mut(stride)
            .enumerate()
            .try_for_each(|(i, slot)| -> Result<()> {
                if !domain.kind(i).active() {
                    return Ok(());
                }
                let v = self.interpolate(&map(&domain.position(i)))?;
                slot.copy_from_slice(&v);
                Ok(())
            })?;
        Ok(out)
    }

    /// Rescaled field y -> u(x + r y) on a unit-ball lattice with spacing
    /// 1/resolution, sampled at nearest nodes. The energy of the result is
    /// r^(2-m) times the energy of u on B_r(x), up to sampling error.
    pub fn blow_up(&self, x: &[f64], r: f64, resolution: usize) -> Result<QField> {
        let d = &self.domain;
        if r < 2.0 * d.h() {
            return Err(Error::UnderResolved(format!("r = {r} < 2h = {}", 2.0 * d.h())));
        }
        if !d.fits_ball(x, r) {
            return Err(Error::Domain("blow-up ball leaves the domain".into()));
        }
        let unit = Arc::new(LatticeDomain::ball(d.m(), 1.0 / resolution as f64, &vec![0.0; d.m()], 1.0, false)?);
        let stride = self.stride();
        let mut values = vec![0.0; unit.len() * stride];
        for i in 0..unit.len() {
            if !unit.kind(i).active() {
                continue;
            }
            let y = unit.position(i);
            let p: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + r * b).collect();
            let j = d
                .nearest_node(&p)
                .ok_or_else(|| Error::Domain("blow-up sample outside the mask".into()))?;
            values[i * stride..(i + 1) * stride].copy_from_slice(self.value(j));
        }
        Ok(QField { domain: unit, target: self.target, q: self.q, values })
    }

    /// Set boundary nodes from a sampled datum.
    pub fn apply_boundary_datum<F>(&mut self, g: F) -> Result<()>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        for i in self.domain.boundary_nodes() {
            let v = g(&self.domain.position(i))?;
            self.set(i, &v)?;
        }
        Ok(())
    }

    /// Field with boundary nodes set from `g` and the interior filled by `fill`.
    pub fn with_boundary<F>(
        domain: Arc<LatticeDomain>,
        target: TargetManifold,
        q: usize,
        g: F,
        fill: &Fill,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        let n = target.ambient_dim();
        let stride = q * n;
        let seed = if matches!(target, TargetManifold::Sphere(_)) { 1.0 } else { 0.0 };
        let mut u = Self::from_fn(domain.clone(), target, q, |_| vec![seed; stride])?;
        match fill {
            Fill::Homogeneous => {
                let vals: Vec<Vec<f64>> = domain
                    .active_nodes()
                    .collect::<Vec<_>>()
                    .par_iter()
                    .map(|&i| g(&domain.radial_boundary_point(&domain.position(i))))
                    .collect::<Result<_>>()?;
                for (i, v) in domain.active_nodes().zip(vals) {
                    u.set(i, &v)?;
                }
            }
            Fill::Constant(p) => {
                if p.q() != q || p.n() != n {
                    return Err(Error::Dimension("fill value does not match the field".into()));
                }
                for i in domain.active_nodes() {
                    u.set(i, p.coords())?;
                }
            }
            Fill::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut v = vec![0.0; stride];
                for i in domain.active_nodes() {
                    for x in v.iter_mut() {
                        *x = match target {
                            TargetManifold::FlatTorus2 => rng.gen::<f64>(),
                            _ => rng.gen_range(-1.0..1.0),
                        };
                    }
                    if let TargetManifold::Sphere(_) = target {
                        for s in v.chunks_mut(n) {
                            if s.iter().all(|x| x.abs() < 1e-3) {
                                s[0] = 1.0;
                            }
                        }
                    }
                    u.set(i, &v)?;
                }
            }
        }
        u.apply_boundary_datum(g)?;
        Ok(u)
    }

    /// Copy boundary values from a snapshot taken on an identical lattice.
    pub fn apply_boundary_snapshot(&mut self, snap: &Snapshot) -> Result<()> {
        let d = self.domain.clone();
        if snap.m != d.m()
            || snap.q != self.q
            || snap.target != self.target
            || snap.shape != d.shape()
            || (snap.h - d.h()).abs() > 1e-15 * d.h()
            || snap.origin.iter().zip(d.origin()).any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::Dimension("snapshot lattice differs from field lattice".into()));
        }
        let mut have = vec![false; d.len()];
        for (i, _, v) in &snap.records {
            if *i < d.len() && d.kind(*i) == NodeKind::Boundary {
                have[*i] = true;
                self.set(*i, v)?;
            }
        }
        if let Some(miss) = self.domain.boundary_nodes().into_iter().find(|&i| !have[i]) {
            return Err(Error::Domain(format!("snapshot lacks boundary node {miss}")));
        }
        Ok(())
    }

    /// Write the field in the text snapshot format. Only nodes whose kind
    /// passes `keep` are recorded.
    pub fn write_snapshot<W: Write, K: Fn(NodeKind) -> bool>(&self, w: &mut W, keep: K) -> Result<()> {
        let d = &self.domain;
        let mut head = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        writeln!(head, "qfield 1").unwrap();
        writeln!(head, "m {}", d.m()).unwrap();
        writeln!(head, "q {}", self.q).unwrap();
        writeln!(head, "target {}", self.target.id()).unwrap();
        writeln!(head, "h {:?}", d.h()).unwrap();
        writeln!(head, "origin {}", join(d.origin())).unwrap();
        writeln!(
            head,
            "shape {}",
            d.shape().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
        )
        .unwrap();
        match d.geometry() {
            DomainShape::Ball { center, radius } => {
                writeln!(head, "geometry ball {} {:?}", join(center), radius).unwrap()
            }
            DomainShape::Box { lo, hi } => writeln!(head, "geometry box {} {}", join(lo), join(hi)).unwrap(),
        }
        let nodes: Vec<usize> = d.active_nodes().filter(|&i| keep(d.kind(i))).collect();
        writeln!(head, "nodes {}", nodes.len()).unwrap();
        w.write_all(head.as_bytes())?;
        for i in nodes {
            let tag = if d.kind(i) == NodeKind::Interior { 'I' } else { 'B' };
            writeln!(w, "{i} {tag} {}", join(self.value(i)))?;
        }
        Ok(())
    }

    pub fn to_snapshot_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf, |_| true).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Parsed contents of a field snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub m: usize,
    pub q: usize,
    pub target: TargetManifold,
    pub h: f64,
    pub origin: Vec<f64>,
    pub shape: Vec<usize>,
    pub geometry: DomainShape,
    pub records: Vec<(usize, NodeKind, Vec<f64>)>,
}

fn parse_f64s(words: &[&str]) -> Result<Vec<f64>> {
    words
        .iter()
        .map(|w| w.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{w}'"))))
        .collect()
}

impl Snapshot {
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("truncated snapshot".into()))?
                .map_err(Error::from)
        };
        let field = |line: String, key: &str| -> Result<Vec<String>> {
            let mut it = line.split_whitespace().map(str::to_string);
            match it.next() {
                Some(k) if k == key => Ok(it.collect()),
                _ => Err(Error::Parse(format!("expected '{key}' line, got '{line}'"))),
            }
        };
        let magic = field(next()?, "qfield")?;
        if magic != ["1"] {
            return Err(Error::Parse("unsupported snapshot version".into()));
        }
        let one = |v: Vec<String>| -> Result<String> {
            v.into_iter().next().ok_or_else(|| Error::Parse("missing value".into()))
        };
        let m: usize = one(field(next()?, "m")?)?.parse().map_err(|_| Error::Parse("m".into()))?;
        let q: usize = one(field(next()?, "q")?)?.parse().map_err(|_| Error::Parse("q".into()))?;
        let target = TargetManifold::parse(&one(field(next()?, "target")?)?)?;
        let h: f64 = one(field(next()?, "h")?)?.parse().map_err(|_| Error::Parse("h".into()))?;
        let origin = parse_f64s(&field(next()?, "origin")?.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
        let shape: Vec<usize> = field(next()?, "shape")?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Parse("shape".into())))
            .collect::<Result<_>>()?;
        let geo = field(next()?, "geometry")?;
        let geometry = match geo.first().map(|s| s.as_str()) {
            Some("ball") => {
                let v = parse_f64s(&geo[1..].iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
                if v.len() != m + 1 {
                    return Err(Error::Parse("ball geometry".into()));
                }
                DomainShape::Ball { center: v[..m].to_vec(), radius: v[m] }
            }
            Some("box") => {
                let v = parse_f64s(&geo[1..].iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
                if v.len() != 2 * m {
                    return Err(Error::Parse("box geometry".into()));
                }
                DomainShape::Box { lo: v[..m].to_vec(), hi: v[m..].to_vec() }
            }
            _ => return Err(Error::Parse("unknown geometry".into())),
        };
        let count: usize = one(field(next()?, "nodes")?)?.parse().map_err(|_| Error::Parse("nodes".into()))?;
        if origin.len() != m || shape.len() != m {
            return Err(Error::Parse("header dimension mismatch".into()));
        }
        let total: usize = shape.iter().product();
        let width = q * target.ambient_dim();
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next()?;
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.len() != 2 + width {
                return Err(Error::Parse(format!("record has {} fields", words.len())));
            }
            let i: usize = words[0].parse().map_err(|_| Error::Parse("node index".into()))?;
            if i >= total {
                return Err(Error::Parse(format!("node index {i} out of range")));
            }
            let kind = match words[1] {
                "I" => NodeKind::Interior,
                "B" => NodeKind::Boundary,
                k => return Err(Error::Parse(format!("node kind '{k}'"))),
            };
            records.push((i, kind, parse_f64s(&words[2..])?));
        }
        Ok(Self { m, q, target, h, origin, shape, geometry, records })
    }

    /// Rebuild the full field. Requires a snapshot of every active node.
    pub fn into_field(self) -> Result<QField> {
        let total: usize = self.shape.iter().product();
        let mut kinds = vec![NodeKind::Outside; total];
        let width = self.q * self.target.ambient_dim();
        let mut values = vec![0.0; total * width];
        for (i, k, v) in &self.records {
            kinds[*i] = *k;
            values[i * width..(i + 1) * width].copy_from_slice(v);
        }
        let domain = LatticeDomain::from_parts(self.m, self.h, self.origin, self.shape, kinds, self.geometry)?;
        if !domain.kinds().contains(&NodeKind::Interior) {
            return Err(Error::EmptyRegion("snapshot has no interior nodes".into()));
        }
        Ok(QField { domain: Arc::new(domain), target: self.target, q: self.q, values })
    }
}

/// Interior initialiser for [`QField::with_boundary`].
#[derive(Debug, Clone, PartialEq)]
pub enum Fill {
    /// x -> g(radial boundary point of x).
    Homogeneous,
    Constant(QPoint),
    /// Independent uniform samples on the target.
    Random { seed: u64 },
}

/// Summed energy matrix of a ball (row-major, times h^m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMatrix {
    pub m: usize,
    pub entries: Vec<f64>,
    /// The ball reaches boundary nodes or leaves the mask, so one-sided
    /// stencils contributed.
    pub partial: bool,
}

impl EnergyMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.m + b]
    }

    pub fn trace(&self) -> f64 {
        (0..self.m).map(|a| self.get(a, a)).sum()
    }

    /// e^T M e.
    pub fn quadratic(&self, e: &[f64]) -> f64 {
        let m = self.m;
        (0..m).map(|a| (0..m).map(|b| e[a] * self.get(a, b) * e[b]).sum::<f64>()).sum()
    }
}

/// Node densities and energy matrices of a field, computed once for repeated
/// ball queries.
#[derive(Debug, Clone)]
pub struct FieldEnergy<'a> {
    field: &'a QField,
    density: Vec<f64>,
    matrices: Vec<f64>,
}

impl<'a> FieldEnergy<'a> {
    pub fn new(field: &'a QField) -> Self {
        let d = field.domain();
        let m = d.m();
        let density: Vec<f64> = (0..d.len())
            .into_par_iter()
            .map(|i| if d.kind(i).active() { field.node_density(i) } else { 0.0 })
            .collect();
        let mut matrices = vec![0.0; d.len() * m * m];
        matrices.par_chunks_mut(m * m).enumerate().for_each(|(i, slot)| {
            if d.kind(i).active() {
                slot.copy_from_slice(&field.node_matrix(i));
            }
        });
        Self { field, density, matrices }
    }

    pub fn field(&self) -> &QField {
        self.field
    }

    pub fn domain(&self) -> &LatticeDomain {
        self.field.domain()
    }

    pub fn density(&self, i: usize) -> f64 {
        self.density[i]
    }

    pub fn densities(&self) -> &[f64] {
        &self.density
    }

    pub fn matrix(&self, i: usize) -> &[f64] {
        let m = self.domain().m();
        &self.matrices[i * m * m..(i + 1) * m * m]
    }

    /// Energy of the closed ball from node densities.
    pub fn energy_in_ball(&self, x: &[f64], r: f64) -> f64 {
        let hm = self.domain().h().powi(self.domain().m() as i32);
        let mut acc = KahanSum::new();
        self.domain().for_each_in_ball(x, r, |i, _| acc.add(self.density[i]));
        acc.value() * hm
    }

    /// Energy matrix of the closed ball with the partial-stencil flag.
    pub fn energy_matrix(&self, x: &[f64], r: f64) -> EnergyMatrix {
        let d = self.domain();
        let mut partial = !d.fits_ball(x, r);
        d.for_each_in_ball(x, r, |i, _| partial |= d.kind(i) == NodeKind::Boundary);
        EnergyMatrix { m: d.m(), entries: self.matrix_in_ball(x, r), partial }
    }

    /// Sum of node energy matrices over the closed ball, times h^m.
    pub fn matrix_in_ball(&self, x: &[f64], r: f64) -> Vec<f64> {
        let m = self.domain().m();
        let hm = self.domain().h().powi(m as i32);
        let mut acc = vec![0.0; m * m];
        self.domain().for_each_in_ball(x, r, |i, _| {
            for (a, b) in acc.iter_mut().zip(self.matrix(i)) {
                *a += b;
            }
        });
        acc.iter_mut().for_each(|a| *a *= hm);
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Arc<LatticeDomain> {
        Arc::new(LatticeDomain::cube(1, 1.0 / n as f64, &[0.0], &[1.0], false).unwrap())
    }

    #[test]
    fn affine_energy_on_unit_interval() {
        let a = 1.7;
        let f = QField::from_fn(line(20), TargetManifold::Euclidean(1), 1, |x| vec![a * x[0]]).unwrap();
        assert!((f.dirichlet_energy() - a * a).abs() < 1e-12);
        let e: f64 = f.domain().active_nodes().map(|i| f.node_density(i)).sum::<f64>() * f.domain().h();
        assert!((e - a * a).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_energy() {
        let d = Arc::new(LatticeDomain::ball(2, 0.1, &[0.0, 0.0], 1.0, false).unwrap());
        let p = QPoint::from_sheets(&[vec![0.3, 0.1], vec![-0.2, 0.4]]).unwrap();
        let f = QField::constant(d, TargetManifold::Euclidean(2), &p).unwrap();
        assert_eq!(f.dirichlet_energy(), 0.0);
    }

    #[test]
    fn ball_classification() {
        let d = LatticeDomain::ball(2, 0.25, &[0.0, 0.0], 1.0, false).unwrap();
        let c = d.nearest_node(&[0.0, 0.0]).unwrap();
        assert_eq!(d.kind(c), NodeKind::Interior);
        let e = d.nearest_node(&[1.0, 0.0]).unwrap();
        assert_eq!(d.kind(e), NodeKind::Boundary);
        for i in d.interior_nodes() {
            for a in 0..2 {
                assert!(d.neighbor(i, a, 1).is_some() && d.neighbor(i, a, -1).is_some());
            }
        }
        assert!(LatticeDomain::ball(2, 2.0, &[0.0, 0.0], 1.0, false).is_err());
    }

    #[test]
    fn trace_equals_density() {
        let d = Arc::new(LatticeDomain::ball(2, 0.1, &[0.0, 0.0], 1.0, false).unwrap());
        let f = QField::from_fn(d, TargetManifold::Euclidean(1), 2, |x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            vec![r * x[0], -r * x[1] + x[0] * x[0]]
        })
        .unwrap();
        for i in f.domain().active_nodes() {
            let m = f.node_matrix(i);
            assert!((m[0] + m[3] - f.node_density(i)).abs() < 1e-10 * (1.0 + f.node_density(i)));
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let d = Arc::new(LatticeDomain::ball(2, 0.2, &[0.0, 0.0], 1.0, true).unwrap());
        let f = QField::from_fn(d, TargetManifold::FlatTorus2, 2, |x| vec![x[0], x[1], 0.1 + x[1], 0.3]).unwrap();
        let s = f.to_snapshot_string();
        let g = Snapshot::read(s.as_bytes()).unwrap().into_field().unwrap();
        assert_eq!(g.values(), f.values());
        assert_eq!(g.domain(), f.domain());
    }

    #[test]
    fn blow_up_checks_resolution() {
        let d = Arc::new(LatticeDomain::ball(2, 0.1, &[0.0, 0.0], 1.0, false).unwrap());
        let f = QField::from_fn(d, TargetManifold::Euclidean(1), 1, |x| vec![x[0]]).unwrap();
        assert!(matches!(f.blow_up(&[0.0, 0.0], 0.15, 8), Err(Error::UnderResolved(_))));
        let b = f.blow_up(&[0.0, 0.0], 0.5, 8).unwrap();
        assert!(b.dirichlet_energy() > 0.0);
    }
}
