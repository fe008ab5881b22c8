//! Convex hulls of control-point sets as hyperplane lists with an
//! interior-positive sign convention. Degenerate and almost-flat point sets
//! are extruded along the null-space directions of the centered point matrix
//! before the hull is taken.

use super::stack::{normalize_raw, rconj_raw, HullBundle, Raw4};
use crate::error::{Error, Result};
use crate::linalg::{SmallMat, SmallVec};
use nalgebra::DMatrix;

/// Extrusion half-width relative to the patch bbox diagonal.
const EXTRUSION_WIDTH: f64 = 1e-2;
/// Directions with singular value below this fraction of the largest are
/// treated as flat and extruded.
const FLATNESS_RATIO: f64 = 1e-2;

/// Hyperplanes `n . x + b >= 0` inside the hull.
#[derive(Debug, Clone)]
pub struct ConvexHullRep {
    pub d: usize,
    pub planes: Vec<(SmallVec, f64)>,
    /// True when the point set was extruded to full dimension.
    pub extruded: bool,
}

impl ConvexHullRep {
    /// Build the hull of a control-point set, extruding if necessary.
    pub fn new(points: &[SmallVec], label: &str) -> Result<Self> {
        let d = points[0].d;
        let diag = bbox_diagonal(points);
        if diag <= 0.0 {
            return Err(Error::Geometry(format!(
                "hull of {label}: control points coincide"
            )));
        }
        let (pts, extruded) = extrude_if_flat(points, diag);
        let planes = match d {
            2 => hull_planes_2d(&pts, diag),
            3 => hull_planes_3d(&pts, diag),
            _ => return Err(Error::Geometry("unsupported dimension".into())),
        };
        if planes.len() < d + 1 {
            return Err(Error::Geometry(format!(
                "hull of {label}: construction produced only {} facets",
                planes.len()
            )));
        }
        Ok(Self {
            d,
            planes,
            extruded,
        })
    }

    /// Raw fold of the facet functions by r-conjunction, in facet order.
    pub fn fold(&self, x: &SmallVec) -> Raw4 {
        let mut acc = Raw4::hyperplane(&self.planes[0].0, self.planes[0].1, x);
        for (n, b) in self.planes.iter().skip(1) {
            let f = Raw4::hyperplane(n, *b, x);
            acc = rconj_raw(&acc, &f);
        }
        acc
    }

    /// Normalized hull function with raw derivatives. Degenerate evaluation
    /// points (vanishing fold gradient) take the zero convention.
    pub fn evaluate(&self, x: &SmallVec) -> HullBundle {
        let folded = self.fold(x);
        normalize_raw(&folded).unwrap_or(HullBundle {
            d: self.d,
            v: 0.0,
            g: SmallVec::zero(self.d),
            h: SmallMat::zero(self.d),
        })
    }
}

pub fn bbox_diagonal(points: &[SmallVec]) -> f64 {
    let d = points[0].d;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for c in 0..d {
            lo[c] = lo[c].min(p.get(c));
            hi[c] = hi[c].max(p.get(c));
        }
    }
    (0..d).map(|c| (hi[c] - lo[c]).powi(2)).sum::<f64>().sqrt()
}

/// Duplicate the points along flat directions of the centered point matrix.
fn extrude_if_flat(points: &[SmallVec], diag: f64) -> (Vec<SmallVec>, bool) {
    let d = points[0].d;
    let n = points.len();
    let mut mean = SmallVec::zero(d);
    for p in points {
        mean = mean.add(p);
    }
    mean = mean.scale(1.0 / n as f64);
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, p) in points.iter().enumerate() {
        for c in 0..d {
            centered[(i, c)] = p.get(c) - mean.get(c);
        }
    }
    let svd = centered.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let mut flat_dirs: Vec<SmallVec> = Vec::new();
    for r in 0..d {
        let sv = if r < svd.singular_values.len() {
            svd.singular_values[r]
        } else {
            0.0
        };
        if sv <= FLATNESS_RATIO * smax {
            let mut dir = SmallVec::zero(d);
            for c in 0..d {
                dir.set(c, vt[(r, c)]);
            }
            flat_dirs.push(dir);
        }
    }
    if flat_dirs.is_empty() {
        return (points.to_vec(), false);
    }
    let w = EXTRUSION_WIDTH * diag;
    let mut out = points.to_vec();
    for dir in &flat_dirs {
        let mut next = Vec::with_capacity(out.len() * 2);
        for p in &out {
            next.push(p.add(&dir.scale(w)));
            next.push(p.sub(&dir.scale(w)));
        }
        out = next;
    }
    (out, true)
}

fn push_unique(planes: &mut Vec<(SmallVec, f64)>, n: SmallVec, b: f64, diag: f64) {
    for (pn, pb) in planes.iter() {
        if pn.sub(&n).norm() < 1e-9 && (pb - b).abs() < 1e-9 * diag.max(1.0) {
            return;
        }
    }
    planes.push((n, b));
}

fn hull_planes_2d(pts: &[SmallVec], diag: f64) -> Vec<(SmallVec, f64)> {
    let tol = 1e-9 * diag;
    let mut planes = Vec::new();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let e = pts[j].sub(&pts[i]);
            let len = e.norm();
            if len < tol {
                continue;
            }
            let n0 = SmallVec::from_slice(&[-e.get(1) / len, e.get(0) / len]);
            for sign in [1.0, -1.0] {
                let n = n0.scale(sign);
                let b = -n.dot(&pts[i]);
                if pts.iter().all(|p| n.dot(p) + b >= -tol) {
                    push_unique(&mut planes, n, b, diag);
                }
            }
        }
    }
    planes
}

fn hull_planes_3d(pts: &[SmallVec], diag: f64) -> Vec<(SmallVec, f64)> {
    let tol = 1e-9 * diag;
    let cross = |a: &SmallVec, b: &SmallVec| -> SmallVec {
        SmallVec::from_slice(&[
            a.get(1) * b.get(2) - a.get(2) * b.get(1),
            a.get(2) * b.get(0) - a.get(0) * b.get(2),
            a.get(0) * b.get(1) - a.get(1) * b.get(0),
        ])
    };
    let mut planes = Vec::new();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            for k in (j + 1)..pts.len() {
                let n0 = cross(&pts[j].sub(&pts[i]), &pts[k].sub(&pts[i]));
                let len = n0.norm();
                if len < tol * diag {
                    continue;
                }
                let n0 = n0.scale(1.0 / len);
                for sign in [1.0, -1.0] {
                    let n = n0.scale(sign);
                    let b = -n.dot(&pts[i]);
                    if pts.iter().all(|p| n.dot(p) + b >= -tol) {
                        push_unique(&mut planes, n, b, diag);
                    }
                }
            }
        }
    }
    planes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_is_extruded_to_a_rectangle() {
        let pts = vec![
            SmallVec::from_slice(&[0.0, 0.0]),
            SmallVec::from_slice(&[1.0, 0.0]),
        ];
        let hull = ConvexHullRep::new(&pts, "seg").unwrap();
        assert!(hull.extruded);
        assert_eq!(hull.planes.len(), 4);
        // inside the thin rectangle vs far outside
        let inside = hull.fold(&SmallVec::from_slice(&[0.5, 0.001]));
        assert!(inside.v > 0.0);
        let outside = hull.fold(&SmallVec::from_slice(&[0.5, 1.0]));
        assert!(outside.v < 0.0);
    }

    #[test]
    fn triangle_hull_three_planes() {
        let pts = vec![
            SmallVec::from_slice(&[0.0, 0.0]),
            SmallVec::from_slice(&[1.0, 0.0]),
            SmallVec::from_slice(&[0.2, 0.9]),
        ];
        let hull = ConvexHullRep::new(&pts, "tri").unwrap();
        assert!(!hull.extruded);
        assert_eq!(hull.planes.len(), 3);
        let centroid = SmallVec::from_slice(&[0.4, 0.3]);
        assert!(hull.fold(&centroid).v > 0.0);
    }

    #[test]
    fn hull_boundary_is_the_zero_set() {
        // sampled facet points give a vanishing normalized hull function
        let pts = vec![
            SmallVec::from_slice(&[0.0, 0.0]),
            SmallVec::from_slice(&[1.0, 0.0]),
            SmallVec::from_slice(&[1.0, 1.0]),
            SmallVec::from_slice(&[0.0, 1.0]),
        ];
        let hull = ConvexHullRep::new(&pts, "sq").unwrap();
        assert_eq!(hull.planes.len(), 4);
        for i in 1..10 {
            let t = i as f64 / 10.0;
            for p in [
                SmallVec::from_slice(&[t, 0.0]),
                SmallVec::from_slice(&[t, 1.0]),
                SmallVec::from_slice(&[0.0, t]),
                SmallVec::from_slice(&[1.0, t]),
            ] {
                let v = hull.evaluate(&p).v;
                assert!(v.abs() <= 1e-8, "boundary value {v}");
            }
        }
    }

    #[test]
    fn box_hull_3d() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push(SmallVec::from_slice(&[x, y, z]));
                }
            }
        }
        let hull = ConvexHullRep::new(&pts, "box").unwrap();
        assert_eq!(hull.planes.len(), 6);
        assert!(hull.fold(&SmallVec::from_slice(&[0.5, 0.5, 0.5])).v > 0.0);
        assert!(hull.fold(&SmallVec::from_slice(&[1.5, 0.5, 0.5])).v < 0.0);
    }

    #[test]
    fn planar_square_in_3d_extrudes() {
        let pts = vec![
            SmallVec::from_slice(&[0.0, 0.0, 0.0]),
            SmallVec::from_slice(&[1.0, 0.0, 0.0]),
            SmallVec::from_slice(&[0.0, 1.0, 0.0]),
            SmallVec::from_slice(&[1.0, 1.0, 0.0]),
        ];
        let hull = ConvexHullRep::new(&pts, "plane").unwrap();
        assert!(hull.extruded);
        assert_eq!(hull.planes.len(), 6);
        assert!(hull.fold(&SmallVec::from_slice(&[0.5, 0.5, 0.0])).v > 0.0);
        assert!(hull.fold(&SmallVec::from_slice(&[0.5, 0.5, 0.5])).v < 0.0);
    }
}
