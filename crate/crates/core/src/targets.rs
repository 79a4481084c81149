//! Target manifolds: flat space, round spheres and the flat square torus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qspace::PointMetric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetManifold {
    /// R^n.
    Euclidean(usize),
    /// Unit sphere S^n in R^(n+1), chordal metric.
    Sphere(usize),
    /// R^2 / Z^2, modelled on the unit square.
    FlatTorus2,
}

#[inline]
fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Representative of `d` mod Z in [-1/2, 1/2].
#[inline]
pub fn torus_min(d: f64) -> f64 {
    d - d.round()
}

impl TargetManifold {
    /// Dimension of the coordinate space points live in.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            TargetManifold::Euclidean(n) => n,
            TargetManifold::Sphere(n) => n + 1,
            TargetManifold::FlatTorus2 => 2,
        }
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self, TargetManifold::Sphere(_))
    }

    /// Config identifier: `euclidean:N`, `sphere:n` or `torus2`.
    pub fn id(&self) -> String {
        match *self {
            TargetManifold::Euclidean(n) => format!("euclidean:{n}"),
            TargetManifold::Sphere(n) => format!("sphere:{n}"),
            TargetManifold::FlatTorus2 => "torus2".into(),
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        let id = id.trim();
        if id == "torus2" {
            return Ok(TargetManifold::FlatTorus2);
        }
        let (kind, dim) = id
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("unknown target '{id}'")))?;
        let n: usize = dim
            .parse()
            .map_err(|_| Error::Parse(format!("bad dimension in target '{id}'")))?;
        if n == 0 {
            return Err(Error::Parse("target dimension must be positive".into()));
        }
        match kind {
            "euclidean" => Ok(TargetManifold::Euclidean(n)),
            "sphere" => Ok(TargetManifold::Sphere(n)),
            _ => Err(Error::Parse(format!("unknown target '{id}'"))),
        }
    }

    /// Nearest point of the manifold, written in place.
    pub fn project_in_place(&self, p: &mut [f64]) -> Result<()> {
        match *self {
            TargetManifold::Euclidean(_) => {}
            TargetManifold::Sphere(_) => {
                let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(r > 1e-12) {
                    return Err(Error::Projection("point too close to the sphere centre".into()));
                }
                p.iter_mut().for_each(|x| *x /= r);
            }
            TargetManifold::FlatTorus2 => {
                p.iter_mut().for_each(|x| *x = wrap(*x));
            }
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Projection("non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.ambient_dim() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, target needs {}",
                p.len(),
                self.ambient_dim()
            )));
        }
        let mut v = p.to_vec();
        self.project_in_place(&mut v)?;
        Ok(v)
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        if p.len() != self.ambient_dim() || p.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match *self {
            TargetManifold::Euclidean(_) => true,
            TargetManifold::Sphere(_) => {
                (p.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= tol
            }
            TargetManifold::FlatTorus2 => p.iter().all(|&x| (-tol..1.0 + tol).contains(&x)),
        }
    }

    #[inline]
    pub fn distance2(&self, p: &[f64], q: &[f64]) -> f64 {
        match *self {
            TargetManifold::FlatTorus2 => {
                let dx = torus_min(q[0] - p[0]);
                let dy = torus_min(q[1] - p[1]);
                dx * dx + dy * dy
            }
            _ => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(),
        }
    }

    pub fn distance(&self, p: &[f64], q: &[f64]) -> f64 {
        self.distance2(p, q).sqrt()
    }

    /// Difference vector from `p` to `q` (lattice-minimal on the torus).
    #[inline]
    pub fn diff_into(&self, p: &[f64], q: &[f64], out: &mut [f64]) {
        match *self {
            TargetManifold::FlatTorus2 => {
                out[0] = torus_min(q[0] - p[0]);
                out[1] = torus_min(q[1] - p[1]);
            }
            _ => {
                for ((o, a), b) in out.iter_mut().zip(p).zip(q) {
                    *o = b - a;
                }
            }
        }
    }

    pub fn diff(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.len()];
        self.diff_into(p, q, &mut out);
        out
    }

    /// Second fundamental form A_p(v, w) as a normal vector. On the sphere
    /// v and w must be tangent at p.
    pub fn second_fundamental_form(&self, p: &[f64], v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        match *self {
            TargetManifold::Sphere(_) => {
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                for t in [v, w] {
                    if dot(p, t).abs() > 1e-8 * dot(t, t).sqrt() {
                        return Err(Error::Domain("vector not tangent to the sphere".into()));
                    }
                }
                let vw = dot(v, w);
                Ok(p.iter().map(|x| -vw * x).collect())
            }
            _ => Ok(vec![0.0; p.len()]),
        }
    }

    /// Minimiser of the summed squared distance to `points` (concatenated),
    /// computed in a chart around `reference`. Written to `out`.
    pub fn barycenter_into(&self, reference: &[f64], points: &[f64], out: &mut [f64]) {
        let n = reference.len();
        let k = points.len() / n;
        out.iter_mut().for_each(|x| *x = 0.0);
        match *self {
            TargetManifold::FlatTorus2 => {
                for y in points.chunks(n) {
                    out[0] += torus_min(y[0] - reference[0]);
                    out[1] += torus_min(y[1] - reference[1]);
                }
                out[0] = wrap(reference[0] + out[0] / k as f64);
                out[1] = wrap(reference[1] + out[1] / k as f64);
            }
            TargetManifold::Euclidean(_) => {
                for y in points.chunks(n) {
                    out.iter_mut().zip(y).for_each(|(o, v)| *o += v);
                }
                out.iter_mut().for_each(|o| *o /= k as f64);
            }
            TargetManifold::Sphere(_) => {
                for y in points.chunks(n) {
                    out.iter_mut().zip(y).for_each(|(o, v)| *o += v);
                }
                let r = out.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r > 1e-12 {
                    out.iter_mut().for_each(|o| *o /= r);
                } else {
                    out.copy_from_slice(reference);
                }
            }
        }
    }
}

impl PointMetric for TargetManifold {
    #[inline]
    fn dist2(&self, p: &[f64], q: &[f64]) -> f64 {
        self.distance2(p, q)
    }
}
