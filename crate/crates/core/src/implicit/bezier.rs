//! Rational Bézier patches: curves (parametric dimension 1) and
//! tensor-product surfaces (parametric dimension 2), with evaluation and
//! subdivision in homogeneous coordinates.

use crate::error::{Error, Result};
use crate::linalg::SmallVec;

/// A rational Bézier patch embedded in `R^D` (`D` = 2 or 3).
#[derive(Debug, Clone)]
pub struct BezierPatch {
    /// Embedding dimension.
    pub dim: usize,
    /// 1 = curve, 2 = surface.
    pub param_dim: usize,
    /// Degree per parametric direction (`degree[1]` unused for curves).
    pub degree: [usize; 2],
    /// Control points; surfaces are stored u-fastest:
    /// index = `i2 * (degree[0] + 1) + i1`.
    pub points: Vec<SmallVec>,
    /// Positive weights, aligned with `points`.
    pub weights: Vec<f64>,
    /// Identifier used in diagnostics (entity id plus patch index).
    pub label: String,
}

impl BezierPatch {
    pub fn curve(dim: usize, points: Vec<SmallVec>, weights: Vec<f64>, label: &str) -> Result<Self> {
        let p = points.len().saturating_sub(1);
        let patch = Self {
            dim,
            param_dim: 1,
            degree: [p, 0],
            points,
            weights,
            label: label.to_string(),
        };
        patch.validate()?;
        Ok(patch)
    }

    pub fn surface(
        degree: [usize; 2],
        points: Vec<SmallVec>,
        weights: Vec<f64>,
        label: &str,
    ) -> Result<Self> {
        let patch = Self {
            dim: 3,
            param_dim: 2,
            degree,
            points,
            weights,
            label: label.to_string(),
        };
        patch.validate()?;
        Ok(patch)
    }

    pub fn validate(&self) -> Result<()> {
        let n_expect = match self.param_dim {
            1 => self.degree[0] + 1,
            2 => (self.degree[0] + 1) * (self.degree[1] + 1),
            _ => {
                return Err(Error::Geometry(format!(
                    "patch {}: parametric dimension {} not supported",
                    self.label, self.param_dim
                )))
            }
        };
        if self.points.len() != n_expect || self.weights.len() != n_expect {
            return Err(Error::Geometry(format!(
                "patch {}: expected {n_expect} control points/weights, got {}/{}",
                self.label,
                self.points.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| *w <= 0.0) {
            return Err(Error::Geometry(format!(
                "patch {}: weights must be positive",
                self.label
            )));
        }
        if self.param_dim == 1 && self.degree[0] < 1 {
            return Err(Error::Geometry(format!(
                "patch {}: curve degree must be >= 1",
                self.label
            )));
        }
        Ok(())
    }

    /// Homogeneous control coefficients `(w x, w)` in `R^{D+1}`.
    pub fn homogeneous(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                let mut c: Vec<f64> = p.as_slice().iter().map(|x| x * w).collect();
                c.push(*w);
                c
            })
            .collect()
    }

    /// Point on the patch at parameter `u` (curves use `u[0]`).
    pub fn eval(&self, u: &[f64]) -> SmallVec {
        let homo = self.homogeneous();
        let h = match self.param_dim {
            1 => de_casteljau(&homo, self.degree[0], u[0]),
            _ => {
                // reduce along u (fastest index), then along v
                let m = self.degree[0];
                let n = self.degree[1];
                let rows: Vec<Vec<f64>> = (0..=n)
                    .map(|i2| {
                        let row: Vec<Vec<f64>> =
                            (0..=m).map(|i1| homo[i2 * (m + 1) + i1].clone()).collect();
                        de_casteljau(&row, m, u[0])
                    })
                    .collect();
                de_casteljau(&rows, n, u[1])
            }
        };
        let w = h[self.dim];
        let mut p = SmallVec::zero(self.dim);
        for c in 0..self.dim {
            p.set(c, h[c] / w);
        }
        p
    }

    /// Split a curve at parameter `t` into two sub-curves (homogeneous
    /// de Casteljau subdivision).
    pub fn subdivide_curve(&self, t: f64) -> Result<(BezierPatch, BezierPatch)> {
        if self.param_dim != 1 {
            return Err(Error::Usage("subdivide_curve requires a curve".into()));
        }
        let homo = self.homogeneous();
        let p = self.degree[0];
        let mut levels = vec![homo];
        for l in 0..p {
            let prev = &levels[l];
            let next: Vec<Vec<f64>> = (0..prev.len() - 1)
                .map(|i| {
                    prev[i]
                        .iter()
                        .zip(&prev[i + 1])
                        .map(|(a, b)| (1.0 - t) * a + t * b)
                        .collect()
                })
                .collect();
            levels.push(next);
        }
        let left: Vec<Vec<f64>> = (0..=p).map(|l| levels[l][0].clone()).collect();
        let right: Vec<Vec<f64>> = (0..=p).map(|l| levels[p - l][l].clone()).collect();
        let unpack = |homo: Vec<Vec<f64>>, tag: &str| -> Result<BezierPatch> {
            let mut pts = Vec::with_capacity(homo.len());
            let mut ws = Vec::with_capacity(homo.len());
            for h in &homo {
                let w = h[self.dim];
                if w <= 0.0 {
                    return Err(Error::Geometry(format!(
                        "patch {}: subdivision produced non-positive weight",
                        self.label
                    )));
                }
                ws.push(w);
                let mut p = SmallVec::zero(self.dim);
                for c in 0..self.dim {
                    p.set(c, h[c] / w);
                }
                pts.push(p);
            }
            BezierPatch::curve(self.dim, pts, ws, &format!("{}{tag}", self.label))
        };
        Ok((unpack(left, ".L")?, unpack(right, ".R")?))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let d = self.dim;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for c in 0..d {
                lo[c] = lo[c].min(p.get(c));
                hi[c] = hi[c].max(p.get(c));
            }
        }
        (0..d).map(|c| (hi[c] - lo[c]).powi(2)).sum::<f64>().sqrt()
    }
}

/// One de Casteljau reduction of a control vector list at parameter `t`.
fn de_casteljau(ctrl: &[Vec<f64>], degree: usize, t: f64) -> Vec<f64> {
    debug_assert_eq!(ctrl.len(), degree + 1);
    let mut work: Vec<Vec<f64>> = ctrl.to_vec();
    for l in (1..=degree).rev() {
        for i in 0..l {
            let next: Vec<f64> = work[i]
                .iter()
                .zip(&work[i + 1])
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            work[i] = next;
        }
    }
    work[0].clone()
}

pub fn binom_f(n: usize, k: usize) -> f64 {
    crate::basis::binomial(n, k) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_circle_midpoint() {
        let w = 2.0f64.sqrt() / 2.0;
        let arc = BezierPatch::curve(
            2,
            vec![
                SmallVec::from_slice(&[1.0, 0.0]),
                SmallVec::from_slice(&[1.0, 1.0]),
                SmallVec::from_slice(&[0.0, 1.0]),
            ],
            vec![1.0, w, 1.0],
            "arc",
        )
        .unwrap();
        let p = arc.eval(&[0.5]);
        let s = 2.0f64.sqrt() / 2.0;
        assert!((p.get(0) - s).abs() < 1e-14);
        assert!((p.get(1) - s).abs() < 1e-14);
        // points on the unit circle all along the arc
        for i in 0..=32 {
            let p = arc.eval(&[i as f64 / 32.0]);
            let r = (p.get(0).powi(2) + p.get(1).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn subdivision_keeps_the_curve() {
        let w = 2.0f64.sqrt() / 2.0;
        let arc = BezierPatch::curve(
            2,
            vec![
                SmallVec::from_slice(&[1.0, 0.0]),
                SmallVec::from_slice(&[1.0, 1.0]),
                SmallVec::from_slice(&[0.0, 1.0]),
            ],
            vec![1.0, w, 1.0],
            "arc",
        )
        .unwrap();
        let (l, r) = arc.subdivide_curve(0.3).unwrap();
        for i in 0..=16 {
            let t = i as f64 / 16.0;
            let pl = l.eval(&[t]);
            let want = arc.eval(&[0.3 * t]);
            assert!(pl.sub(&want).norm() < 1e-13);
            let pr = r.eval(&[t]);
            let want = arc.eval(&[0.3 + 0.7 * t]);
            assert!(pr.sub(&want).norm() < 1e-13);
        }
    }

    #[test]
    fn bilinear_surface_eval() {
        let s = BezierPatch::surface(
            [1, 1],
            vec![
                SmallVec::from_slice(&[0.0, 0.0, 0.0]),
                SmallVec::from_slice(&[1.0, 0.0, 0.0]),
                SmallVec::from_slice(&[0.0, 1.0, 0.0]),
                SmallVec::from_slice(&[1.0, 1.0, 0.0]),
            ],
            vec![1.0; 4],
            "plane",
        )
        .unwrap();
        let p = s.eval(&[0.25, 0.75]);
        assert!((p.get(0) - 0.25).abs() < 1e-14);
        assert!((p.get(1) - 0.75).abs() < 1e-14);
        assert!(p.get(2).abs() < 1e-14);
    }
}
